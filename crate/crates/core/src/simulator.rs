//! Social-encounter simulation: a user moving between contexts, people
//! entering and leaving the camera frame, and synthetic face embeddings.

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Observation};
use crate::error::{Error, Result};
use crate::numerics::{squared_distance, RandomSource};

pub const DEFAULT_CONTEXT_NAMES: [&str; 3] = ["home", "work", "gym"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub n_contexts: usize,
    pub context_names: Vec<String>,
    pub n_people: usize,
    pub context_switch_prob: f64,
    pub enter_prob: f64,
    pub leave_prob: f64,
    pub n_frames: usize,
    pub images_per_person: usize,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            n_contexts: 3,
            context_names: DEFAULT_CONTEXT_NAMES.iter().map(|s| s.to_string()).collect(),
            n_people: 10,
            context_switch_prob: 0.05,
            enter_prob: 0.2,
            leave_prob: 0.3,
            n_frames: 100,
            images_per_person: 20,
            seed: 0,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_contexts == 0 {
            return Err(Error::InvalidParameter("at least one context required".into()));
        }
        for (name, p) in [
            ("context_switch_prob", self.context_switch_prob),
            ("enter_prob", self.enter_prob),
            ("leave_prob", self.leave_prob),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::InvalidParameter(format!("{name} must lie in [0, 1]")));
            }
        }
        if self.images_per_person == 0 {
            return Err(Error::InvalidParameter("images_per_person must be positive".into()));
        }
        Ok(())
    }

    pub fn context_name(&self, c: usize) -> String {
        self.context_names
            .get(c)
            .cloned()
            .unwrap_or_else(|| format!("context{}", c + 1))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameRecord {
    pub context: usize,
    /// Present people in increasing order.
    pub present: Vec<usize>,
    /// Image index shown for each present person.
    pub images: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventLog {
    pub person_contexts: Vec<usize>,
    pub frames: Vec<FrameRecord>,
}

impl EventLog {
    pub fn observations(&self) -> usize {
        self.frames.iter().map(|f| f.present.len()).sum()
    }

    /// Flattens to a dataset, keeping only frames with observations.
    /// `images[i][k]` is the embedding of person `i`'s image `k`; truth
    /// labels are `p{i}`.
    pub fn to_dataset(&self, images: &[Vec<Vec<f64>>], observe_contexts: bool) -> Result<Dataset> {
        let mut observations = Vec::with_capacity(self.observations());
        let mut contexts = Vec::new();
        for frame in self.frames.iter().filter(|f| !f.present.is_empty()) {
            let m = contexts.len();
            contexts.push(observe_contexts.then_some(frame.context));
            for (person, image) in frame.present.iter().zip(&frame.images) {
                let embedding = images
                    .get(*person)
                    .and_then(|bank| bank.get(*image))
                    .ok_or_else(|| Error::Data(format!("no image {image} for person {person}")))?
                    .clone();
                observations.push(Observation {
                    id: format!("f{m}-p{person}-i{image}"),
                    frame: m,
                    embedding,
                    label: None,
                    truth: Some(format!("p{person}")),
                });
            }
        }
        Dataset::new(observations, contexts)
    }
}

/// Uniformly random one-context-per-person grouping with sizes as even as
/// possible.
fn assign_people(n_people: usize, n_contexts: usize, rng: &mut RandomSource) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n_people).collect();
    for k in (1..n_people).rev() {
        order.swap(k, rng.below(k + 1));
    }
    let mut out = vec![0; n_people];
    for (slot, person) in order.into_iter().enumerate() {
        out[person] = slot % n_contexts;
    }
    out
}

/// Runs the encounter simulation. Everyone starts absent; people outside
/// the user's current context are absent and restart absent on re-entry.
pub fn simulate(config: &SimConfig, rng: &mut RandomSource) -> Result<EventLog> {
    config.validate()?;
    let contexts = config.n_contexts;
    let person_contexts = assign_people(config.n_people, contexts, rng);
    let mut present = vec![false; config.n_people];
    let mut cycles: Vec<Vec<usize>> = vec![Vec::new(); config.n_people];
    let mut context = rng.below(contexts);
    let mut frames = Vec::with_capacity(config.n_frames);
    for m in 0..config.n_frames {
        if m > 0 && contexts > 1 && rng.uniform() < config.context_switch_prob {
            let jump = rng.below(contexts - 1);
            context = if jump >= context { jump + 1 } else { jump };
            present.iter_mut().for_each(|p| *p = false);
        }
        let mut record = FrameRecord {
            context,
            present: Vec::new(),
            images: Vec::new(),
        };
        for person in 0..config.n_people {
            if person_contexts[person] != context {
                continue;
            }
            let toggle = if present[person] {
                config.leave_prob
            } else {
                config.enter_prob
            };
            if rng.uniform() < toggle {
                present[person] = !present[person];
            }
            if present[person] {
                if cycles[person].is_empty() {
                    let mut deck: Vec<usize> = (0..config.images_per_person).collect();
                    for k in (1..deck.len()).rev() {
                        deck.swap(k, rng.below(k + 1));
                    }
                    deck.reverse();
                    cycles[person] = deck;
                }
                record.present.push(person);
                record.images.push(cycles[person].pop().expect("refilled deck"));
            }
        }
        frames.push(record);
    }
    Ok(EventLog {
        person_contexts,
        frames,
    })
}

/// True face distribution of every synthetic identity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingWorld {
    pub means: Vec<Vec<f64>>,
    pub variance: f64,
    pub separation: f64,
}

const PACKING_ATTEMPTS: usize = 10_000;

/// Samples identity means until every pair is at least
/// `separation·√variance` apart, drawing from an isotropic Gaussian wide
/// enough for `n_identities` to fit.
pub fn generate_embedding_world(
    n_identities: usize,
    dim: usize,
    separation: f64,
    variance: f64,
    rng: &mut RandomSource,
) -> Result<EmbeddingWorld> {
    if n_identities == 0 || dim == 0 {
        return Err(Error::InvalidParameter(
            "need at least one identity and dimension".into(),
        ));
    }
    if variance.is_nan() || variance <= 0.0 || separation.is_nan() || separation < 0.0 {
        return Err(Error::InvalidParameter("variance must be positive".into()));
    }
    let min_dist = separation * variance.sqrt();
    let spread = min_dist.max(variance.sqrt()) * (n_identities as f64).powf(1.0 / dim as f64);
    let mut means: Vec<Vec<f64>> = Vec::with_capacity(n_identities);
    let mut attempts = 0;
    while means.len() < n_identities {
        if attempts == PACKING_ATTEMPTS {
            return Err(Error::PackingFailed);
        }
        attempts += 1;
        let candidate: Vec<f64> = (0..dim).map(|_| spread * rng.standard_normal()).collect();
        if means
            .iter()
            .all(|m| squared_distance(m, &candidate) >= min_dist * min_dist)
        {
            means.push(candidate);
        }
    }
    Ok(EmbeddingWorld {
        means,
        variance,
        separation,
    })
}

impl EmbeddingWorld {
    pub fn identities(&self) -> usize {
        self.means.len()
    }

    pub fn dim(&self) -> usize {
        self.means.first().map_or(0, Vec::len)
    }

    pub fn sample(&self, identity: usize, rng: &mut RandomSource) -> Vec<f64> {
        let sd = self.variance.sqrt();
        self.means[identity]
            .iter()
            .map(|m| m + sd * rng.standard_normal())
            .collect()
    }

    /// `per_identity` independent images of every identity.
    pub fn image_bank(&self, per_identity: usize, rng: &mut RandomSource) -> Vec<Vec<Vec<f64>>> {
        (0..self.identities())
            .map(|i| (0..per_identity).map(|_| self.sample(i, rng)).collect())
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config() -> SimConfig {
        SimConfig {
            seed: 1,
            ..SimConfig::default()
        }
    }

    #[test]
    fn no_switching_keeps_context() {
        let c = SimConfig {
            context_switch_prob: 0.0,
            ..config()
        };
        let log = simulate(&c, &mut RandomSource::new(2)).unwrap();
        let first = log.frames[0].context;
        assert!(log.frames.iter().all(|f| f.context == first));
    }

    #[test]
    fn nobody_enters_without_enter_probability() {
        let c = SimConfig {
            enter_prob: 0.0,
            ..config()
        };
        let log = simulate(&c, &mut RandomSource::new(2)).unwrap();
        assert_eq!(log.observations(), 0);
        let d = log.to_dataset(&[], true).unwrap();
        assert!(d.is_empty());
    }

    #[test]
    fn presence_frequency_matches_stationary_law() {
        let c = SimConfig {
            n_contexts: 1,
            n_people: 1,
            enter_prob: 0.1,
            leave_prob: 0.3,
            n_frames: 100_000,
            ..config()
        };
        let log = simulate(&c, &mut RandomSource::new(5)).unwrap();
        let freq = log.observations() as f64 / c.n_frames as f64;
        assert!((freq - 0.25).abs() < 0.02, "{freq}");
    }

    #[test]
    fn switch_frequency_matches_probability() {
        let c = SimConfig {
            n_frames: 100_000,
            ..config()
        };
        let log = simulate(&c, &mut RandomSource::new(6)).unwrap();
        let switches = log.frames.windows(2).filter(|w| w[0].context != w[1].context).count();
        let freq = switches as f64 / (c.n_frames - 1) as f64;
        assert!((freq - 0.05).abs() < 0.01, "{freq}");
    }

    #[test]
    fn observations_respect_contexts_and_cycles() {
        let c = SimConfig {
            images_per_person: 4,
            n_frames: 2_000,
            ..config()
        };
        let log = simulate(&c, &mut RandomSource::new(7)).unwrap();
        let mut shown: Vec<Vec<usize>> = vec![Vec::new(); c.n_people];
        for f in &log.frames {
            for (p, img) in f.present.iter().zip(&f.images) {
                assert_eq!(log.person_contexts[*p], f.context);
                shown[*p].push(*img);
            }
        }
        for seq in &shown {
            for block in seq.chunks(4).filter(|b| b.len() == 4) {
                let mut b = block.to_vec();
                b.sort_unstable();
                assert_eq!(b, vec![0, 1, 2, 3]);
            }
        }
        let mut sizes = vec![0; c.n_contexts];
        log.person_contexts.iter().for_each(|c| sizes[*c] += 1);
        assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
    }

    #[test]
    fn export_carries_truth_and_contexts() {
        let c = config();
        let mut rng = RandomSource::new(8);
        let log = simulate(&c, &mut rng).unwrap();
        let world = generate_embedding_world(c.n_people, 3, 6.0, 0.01, &mut rng).unwrap();
        let bank = world.image_bank(c.images_per_person, &mut rng);
        let d = log.to_dataset(&bank, true).unwrap();
        assert_eq!(d.len(), log.observations());
        assert!((0..d.frames()).all(|m| !d.frame_members(m).is_empty()));
        assert!(d.frame_contexts().iter().all(Option::is_some));
        assert!(d.truth().is_some());
    }

    #[test]
    fn world_examples() {
        let mut rng = RandomSource::new(9);
        let one = generate_embedding_world(1, 4, 100.0, 1.0, &mut rng).unwrap();
        assert_eq!(one.identities(), 1);
        let a = generate_embedding_world(5, 2, 6.0, 0.5, &mut RandomSource::new(3)).unwrap();
        let b = generate_embedding_world(5, 2, 6.0, 0.5, &mut RandomSource::new(3)).unwrap();
        assert_eq!(a, b);
        for i in 0..5 {
            for j in 0..i {
                assert!(squared_distance(&a.means[i], &a.means[j]).sqrt() >= 6.0 * 0.5f64.sqrt());
            }
        }
        assert_eq!(
            generate_embedding_world(PACKING_ATTEMPTS + 1, 1, 0.0, 1.0, &mut rng),
            Err(Error::PackingFailed)
        );
    }

    #[test]
    fn separated_pair_has_high_silhouette() {
        let mut rng = RandomSource::new(10);
        let world = generate_embedding_world(2, 3, 10.0, 1.0, &mut rng).unwrap();
        let points: Vec<(usize, Vec<f64>)> = (0..200).map(|k| (k % 2, world.sample(k % 2, &mut rng))).collect();
        let mut total = 0.0;
        for (ci, x) in &points {
            let mut own = (0.0, 0);
            let mut other = (0.0, 0);
            for (cj, y) in &points {
                if std::ptr::eq(x, y) {
                    continue;
                }
                let d = squared_distance(x, y).sqrt();
                let slot = if ci == cj { &mut own } else { &mut other };
                slot.0 += d;
                slot.1 += 1;
            }
            let a = own.0 / own.1 as f64;
            let b = other.0 / other.1 as f64;
            total += (b - a) / a.max(b);
        }
        assert!(total / points.len() as f64 > 0.9);
    }
}
