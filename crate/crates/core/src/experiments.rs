//! Synthetic versions of the three evaluation scenarios and the label-noise
//! check: data builders, evaluators over pooled samples, and end-to-end
//! runners.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::baselines::{label_propagation, nn_classify, nn_unknown_score, LabelledGallery, PropagationSettings};
use crate::data::{Dataset, Observation};
use crate::error::{Error, Result};
use crate::eval::{accuracy, adjusted_rand_index, roc_auc, roc_curve, summarize_metric, MetricSummary};
use crate::label_model::Label;
use crate::numerics::{mean, variance, RandomSource};
use crate::predict::{identity_posterior, pooled_predict_name, ContextQuery};
use crate::sampler::{
    run_chains, ChainSettings, FitProtocol, Hyper, ModelConfig, ModelState, PooledSamples, ProtocolMode,
};
use crate::simulator::{generate_embedding_world, simulate, EmbeddingWorld, SimConfig};

/// Shape of a synthetic embedding world.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WorldConfig {
    pub dim: usize,
    pub separation: f64,
    pub variance: f64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            dim: 8,
            separation: 6.0,
            variance: 0.01,
        }
    }
}

impl WorldConfig {
    pub fn generate(&self, identities: usize, rng: &mut RandomSource) -> Result<EmbeddingWorld> {
        generate_embedding_world(identities, self.dim, self.separation, self.variance, rng)
    }
}

/// Chain schedule shared by the scenarios.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub chains: usize,
    pub sweeps: usize,
    pub burn_in: usize,
    pub thinning: usize,
    pub seed: u64,
    pub parallel: bool,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            chains: 8,
            sweeps: 500,
            burn_in: 100,
            thinning: 10,
            seed: 0,
            parallel: true,
        }
    }
}

impl FitConfig {
    pub fn settings(&self) -> Result<ChainSettings> {
        ChainSettings::new(self.sweeps, self.burn_in, self.thinning, self.seed)
    }

    pub fn fit(&self, data: &Dataset, hyper: &Hyper, protocol: &FitProtocol) -> Result<PooledSamples> {
        run_chains(self.chains, data, hyper, protocol, &self.settings()?, self.parallel)
    }
}

/// Model used by the synthetic scenarios: a nearly flat prior on identity
/// means and a weak prior on their variance.
pub fn scenario_model() -> ModelConfig {
    ModelConfig {
        kappa0: 0.01,
        shape0: 1.1,
        ..ModelConfig::default()
    }
}

fn truth_name(i: usize) -> String {
    format!("p{i}")
}

/// Embedding, observed label and truth of one synthetic image.
type Item = (Vec<f64>, Option<String>, String);

/// One observation per frame, in order.
fn singleton_frames(items: Vec<Item>) -> Result<Dataset> {
    let frames = items.len();
    let observations = items
        .into_iter()
        .enumerate()
        .map(|(m, (embedding, label, truth))| Observation {
            id: format!("o{m}"),
            frame: m,
            embedding,
            label,
            truth: Some(truth),
        })
        .collect();
    Dataset::new(observations, vec![None; frames])
}

fn truths(data: &Dataset) -> Result<Vec<String>> {
    data.truth()
        .map(|t| t.into_iter().map(str::to_string).collect())
        .ok_or_else(|| Error::Data("evaluation needs ground truth on every observation".into()))
}

// ---------------------------------------------------------------------------
// Unknown-person detection

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnknownDetectionConfig {
    pub known: usize,
    pub unknown: usize,
    pub train_images: usize,
    pub test_images: usize,
    pub world: WorldConfig,
    pub seed: u64,
}

impl Default for UnknownDetectionConfig {
    fn default() -> Self {
        Self {
            known: 10,
            unknown: 9,
            train_images: 27,
            test_images: 13,
            world: WorldConfig::default(),
            seed: 0,
        }
    }
}

impl UnknownDetectionConfig {
    /// One context and no names.
    pub fn model(&self) -> ModelConfig {
        ModelConfig {
            contexts: 1,
            ..scenario_model()
        }
    }
}

/// Training images of the known identities and test images of everyone.
pub fn unknown_detection_data(config: &UnknownDetectionConfig) -> Result<(Dataset, Dataset)> {
    let mut rng = RandomSource::new(config.seed);
    let total = config.known + config.unknown;
    let world = config.world.generate(total, &mut rng)?;
    let bank = world.image_bank(config.train_images + config.test_images, &mut rng);
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (i, images) in bank.into_iter().enumerate() {
        for (k, x) in images.into_iter().enumerate() {
            if k < config.train_images {
                if i < config.known {
                    train.push((x, None, truth_name(i)));
                }
            } else {
                test.push((x, None, truth_name(i)));
            }
        }
    }
    Ok((singleton_frames(train)?, singleton_frames(test)?))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnknownDetectionReport {
    /// AUC of the snapshot-averaged unknown probability.
    pub pooled_auc: f64,
    pub auc: MetricSummary,
    pub nn_auc: f64,
    /// Per-snapshot accuracy of MAP unknown decisions.
    pub accuracy: MetricSummary,
    pub pooled_accuracy: f64,
    pub voting_accuracy: f64,
    pub roc: Vec<(f64, f64)>,
    pub nn_roc: Vec<(f64, f64)>,
    pub snapshots: usize,
}

/// Positives are test observations whose identity never appears in `train`.
pub fn evaluate_unknown_detection(
    train: &Dataset,
    test: &Dataset,
    hyper: &Hyper,
    states: &[&ModelState],
) -> Result<UnknownDetectionReport> {
    if states.len() < 2 {
        return Err(Error::NotEnoughSamples {
            needed: 2,
            got: states.len(),
        });
    }
    let seen: BTreeSet<String> = truths(train)?.into_iter().collect();
    let positives: Vec<bool> = truths(test)?.iter().map(|t| !seen.contains(t)).collect();
    let s = states.len();
    let mut scores = vec![vec![0.0; test.len()]; s];
    let mut decisions = vec![vec![false; test.len()]; s];
    let mut pooled_unknown = vec![0.0; test.len()];
    let mut pooled_known = vec![0.0; test.len()];
    let mut votes = vec![0usize; test.len()];
    for (k, state) in states.iter().enumerate() {
        for n in 0..test.len() {
            let post = identity_posterior(test.embedding(n), ContextQuery::Marginal, state, hyper)?;
            let p = post.probs.as_slice();
            let u = post.unknown();
            scores[k][n] = u;
            let is_unknown = post.map().is_none();
            decisions[k][n] = is_unknown;
            votes[n] += usize::from(is_unknown);
            pooled_unknown[n] += u / s as f64;
            pooled_known[n] += p[..post.identities()].iter().copied().fold(0.0, f64::max) / s as f64;
        }
    }
    let per_auc: Vec<f64> = scores.iter().map(|sc| roc_auc(sc, &positives)).collect::<Result<_>>()?;
    let per_acc: Vec<f64> = decisions
        .iter()
        .map(|d| accuracy(d, &positives))
        .collect::<Result<_>>()?;
    let pooled_decisions: Vec<bool> = pooled_unknown.iter().zip(&pooled_known).map(|(u, k)| u > k).collect();
    let voting: Vec<bool> = votes.iter().map(|v| 2 * v > s).collect();

    let gallery = LabelledGallery::new(train.embeddings(), truths(train)?)?;
    let nn_scores: Vec<f64> = (0..test.len())
        .map(|n| nn_unknown_score(test.embedding(n), &gallery))
        .collect::<Result<_>>()?;
    Ok(UnknownDetectionReport {
        pooled_auc: roc_auc(&pooled_unknown, &positives)?,
        auc: summarize_metric(&per_auc, 0.95)?,
        nn_auc: roc_auc(&nn_scores, &positives)?,
        accuracy: summarize_metric(&per_acc, 0.95)?,
        pooled_accuracy: accuracy(&pooled_decisions, &positives)?,
        voting_accuracy: accuracy(&voting, &positives)?,
        roc: roc_curve(&pooled_unknown, &positives)?,
        nn_roc: roc_curve(&nn_scores, &positives)?,
        snapshots: s,
    })
}

pub fn run_unknown_detection(
    config: &UnknownDetectionConfig,
    model: &ModelConfig,
    fit: &FitConfig,
) -> Result<UnknownDetectionReport> {
    let (train, test) = unknown_detection_data(config)?;
    let hyper = model.build(&train)?;
    let pooled = fit.fit(&train, &hyper, &FitProtocol::offline())?;
    evaluate_unknown_detection(&train, &test, &hyper, &pooled.states())
}

// ---------------------------------------------------------------------------
// Identity discovery in simulated encounters

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EncounterConfig {
    pub sim: SimConfig,
    pub world: WorldConfig,
}

impl EncounterConfig {
    /// One restaurant per simulated context.
    pub fn model(&self) -> ModelConfig {
        ModelConfig {
            contexts: self.sim.n_contexts,
            ..scenario_model()
        }
    }
}

/// Simulated encounter sequence with observed contexts.
pub fn encounter_data(config: &EncounterConfig) -> Result<Dataset> {
    let mut rng = RandomSource::new(config.sim.seed);
    let log = simulate(&config.sim, &mut rng)?;
    let world = config.world.generate(config.sim.n_people, &mut rng)?;
    let bank = world.image_bank(config.sim.images_per_person, &mut rng);
    log.to_dataset(&bank, true)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageAri {
    pub sweep: usize,
    pub frames: usize,
    pub ari: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusteringReport {
    pub protocol: ProtocolMode,
    pub context_model: bool,
    /// ARI of each chain's final state.
    pub final_ari: Vec<f64>,
    pub median_final_ari: f64,
    pub final_ari_variance: f64,
    /// ARI over snapshots pooled across chains.
    pub snapshot_ari: MetricSummary,
    pub traces: Vec<Vec<StageAri>>,
}

fn prefix_ari(assignments: &[usize], truth: &[String]) -> Result<f64> {
    adjusted_rand_index(assignments, &truth[..assignments.len()])
}

pub fn evaluate_clustering(
    data: &Dataset,
    pooled: &PooledSamples,
    protocol: ProtocolMode,
    context_model: bool,
) -> Result<ClusteringReport> {
    let truth = truths(data)?;
    let final_ari: Vec<f64> = pooled
        .chains
        .iter()
        .map(|c| prefix_ari(&c.final_state.assignments, &truth))
        .collect::<Result<_>>()?;
    let snapshot_values: Vec<f64> = pooled
        .snapshots()
        .map(|s| prefix_ari(&s.state.assignments, &truth))
        .collect::<Result<_>>()?;
    let traces = pooled
        .chains
        .iter()
        .map(|c| {
            c.trace
                .iter()
                .filter(|t| t.assignments.len() >= 2)
                .map(|t| {
                    Ok(StageAri {
                        sweep: t.sweep,
                        frames: t.frames,
                        ari: prefix_ari(&t.assignments, &truth)?,
                    })
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    Ok(ClusteringReport {
        protocol,
        context_model,
        median_final_ari: crate::numerics::median(&final_ari)?,
        final_ari_variance: if final_ari.len() > 1 { variance(&final_ari) } else { 0.0 },
        final_ari,
        snapshot_ari: summarize_metric(&snapshot_values, 0.95)?,
        traces,
    })
}

/// Runs every protocol with and without the context model on one dataset.
pub fn run_identity_discovery(
    config: &EncounterConfig,
    model: &ModelConfig,
    fit: &FitConfig,
) -> Result<Vec<ClusteringReport>> {
    let data = encounter_data(config)?;
    let mut reports = Vec::new();
    for context_model in [true, false] {
        let m = ModelConfig {
            contexts: config.sim.n_contexts,
            context_model,
            ..model.clone()
        };
        let hyper = m.build(&data)?;
        for mode in [ProtocolMode::Online, ProtocolMode::Batch, ProtocolMode::Offline] {
            let protocol = FitProtocol::for_mode(mode);
            let pooled = fit.fit(&data, &hyper, &protocol)?;
            reports.push(evaluate_clustering(&data, &pooled, mode, context_model)?);
        }
    }
    Ok(reports)
}

// ---------------------------------------------------------------------------
// Semi-supervised labelling

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabellingConfig {
    pub acquainted: usize,
    pub familiar: usize,
    pub strangers: usize,
    pub train_images: usize,
    pub test_images: usize,
    pub labels_per_acquaintance: usize,
    pub world: WorldConfig,
    pub seed: u64,
}

impl Default for LabellingConfig {
    fn default() -> Self {
        Self {
            acquainted: 11,
            familiar: 11,
            strangers: 12,
            train_images: 15,
            test_images: 15,
            labels_per_acquaintance: 5,
            world: WorldConfig::default(),
            seed: 0,
        }
    }
}

impl LabellingConfig {
    /// Name concentration of the order of the number of identities, so
    /// that distinct people are expected to carry distinct names.
    pub fn model(&self) -> ModelConfig {
        ModelConfig {
            contexts: 1,
            lambda: 20.0,
            ..scenario_model()
        }
    }
}

/// Training images of acquaintances (the first few named) and familiar
/// people, and test images of everyone.
pub fn labelling_data(config: &LabellingConfig) -> Result<(Dataset, Dataset)> {
    if config.labels_per_acquaintance > config.train_images {
        return Err(Error::InvalidParameter("more labels than training images".into()));
    }
    let mut rng = RandomSource::new(config.seed);
    let total = config.acquainted + config.familiar + config.strangers;
    let world = config.world.generate(total, &mut rng)?;
    let bank = world.image_bank(config.train_images + config.test_images, &mut rng);
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (i, images) in bank.into_iter().enumerate() {
        let in_train = i < config.acquainted + config.familiar;
        for (k, x) in images.into_iter().enumerate() {
            if k < config.train_images {
                if in_train {
                    let named = i < config.acquainted && k < config.labels_per_acquaintance;
                    train.push((x, named.then(|| truth_name(i)), truth_name(i)));
                }
            } else {
                test.push((x, None, truth_name(i)));
            }
        }
    }
    // interleave identities so no identity arrives as one block
    let mut order: Vec<usize> = (0..train.len()).collect();
    for k in (1..order.len()).rev() {
        order.swap(k, rng.below(k + 1));
    }
    let mut slots: Vec<Option<Item>> = train.into_iter().map(Some).collect();
    let shuffled = order
        .into_iter()
        .map(|k| slots[k].take().expect("each slot once"))
        .collect();
    Ok((singleton_frames(shuffled)?, singleton_frames(test)?))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroupAccuracy {
    pub acquainted: f64,
    pub familiar: f64,
    pub strangers: f64,
    /// Familiar and strangers together.
    pub unknown_groups: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabellingReport {
    pub model: GroupAccuracy,
    pub nn: GroupAccuracy,
    pub lp: GroupAccuracy,
}

#[derive(Clone, Copy, PartialEq)]
enum Group {
    Acquainted,
    Familiar,
    Stranger,
}

fn group_accuracy(groups: &[Group], correct: &[bool]) -> GroupAccuracy {
    let rate = |keep: &dyn Fn(Group) -> bool| {
        let picked: Vec<bool> = groups
            .iter()
            .zip(correct)
            .filter(|(g, _)| keep(**g))
            .map(|(_, c)| *c)
            .collect();
        if picked.is_empty() {
            f64::NAN
        } else {
            picked.iter().filter(|c| **c).count() as f64 / picked.len() as f64
        }
    };
    GroupAccuracy {
        acquainted: rate(&|g| g == Group::Acquainted),
        familiar: rate(&|g| g == Group::Familiar),
        strangers: rate(&|g| g == Group::Stranger),
        unknown_groups: rate(&|g| g != Group::Acquainted),
    }
}

/// Acquaintances are identities with a name somewhere in `train`; familiar
/// people appear in `train` unnamed; strangers are absent from it. A
/// prediction is correct when it names an acquaintance correctly or
/// answers unknown for everyone else.
pub fn evaluate_labelling(
    train: &Dataset,
    test: &Dataset,
    hyper: &Hyper,
    states: &[&ModelState],
) -> Result<LabellingReport> {
    let train_truth = truths(train)?;
    let test_truth = truths(test)?;
    let mut names: BTreeMap<String, BTreeMap<String, usize>> = BTreeMap::new();
    for (o, t) in train.observations().iter().zip(&train_truth) {
        let entry = names.entry(t.clone()).or_default();
        if let Some(l) = &o.label {
            *entry.entry(l.clone()).or_insert(0) += 1;
        }
    }
    // an acquaintance's name is its most frequent label
    let true_name = |t: &str| -> Option<String> {
        names
            .get(t)
            .and_then(|m| m.iter().max_by_key(|(_, c)| **c).map(|(n, _)| n.clone()))
    };
    let groups: Vec<Group> = test_truth
        .iter()
        .map(|t| match names.get(t) {
            Some(m) if !m.is_empty() => Group::Acquainted,
            Some(_) => Group::Familiar,
            None => Group::Stranger,
        })
        .collect();
    let expected: Vec<Option<String>> = test_truth.iter().map(|t| true_name(t)).collect();

    let mut model_correct = Vec::with_capacity(test.len());
    for (n, want) in expected.iter().enumerate() {
        let dist = pooled_predict_name(test.embedding(n), ContextQuery::Marginal, states, hyper)?;
        model_correct.push(dist.argmax().map(str::to_string) == *want);
    }

    let labelled: Vec<usize> = (0..train.len())
        .filter(|n| train.observation(*n).label.is_some())
        .collect();
    let (nn_correct, lp_correct) = if labelled.is_empty() {
        (vec![false; test.len()], vec![false; test.len()])
    } else {
        let gallery = LabelledGallery::new(
            labelled.iter().map(|n| train.embedding(*n).to_vec()).collect(),
            labelled
                .iter()
                .map(|n| train.observation(*n).label.clone().expect("labelled"))
                .collect(),
        )?;
        let nn: Vec<bool> = (0..test.len())
            .map(|n| Ok(Some(nn_classify(test.embedding(n), &gallery)?.to_string()) == expected[n]))
            .collect::<Result<_>>()?;
        let mut vectors = train.embeddings();
        vectors.extend(test.embeddings());
        let seeds: Vec<(usize, String)> = labelled
            .iter()
            .map(|n| (*n, train.observation(*n).label.clone().expect("labelled")))
            .collect();
        let prop = label_propagation(&vectors, &seeds, &PropagationSettings::default())?;
        let lp: Vec<bool> = (0..test.len())
            .map(|n| Some(prop.predicted(train.len() + n).to_string()) == expected[n])
            .collect();
        (nn, lp)
    };
    Ok(LabellingReport {
        model: group_accuracy(&groups, &model_correct),
        nn: group_accuracy(&groups, &nn_correct),
        lp: group_accuracy(&groups, &lp_correct),
    })
}

pub fn run_labelling(config: &LabellingConfig, model: &ModelConfig, fit: &FitConfig) -> Result<LabellingReport> {
    let (train, test) = labelling_data(config)?;
    let hyper = model.build(&train)?;
    let pooled = fit.fit(&train, &hyper, &FitProtocol::offline())?;
    evaluate_labelling(&train, &test, &hyper, &pooled.states())
}

// ---------------------------------------------------------------------------
// Label noise

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelNoiseConfig {
    pub names: Vec<String>,
    pub images: usize,
    pub flip_fraction: f64,
    pub world: WorldConfig,
    pub seed: u64,
}

impl Default for LabelNoiseConfig {
    fn default() -> Self {
        Self {
            names: ["alice", "bob", "carol"].iter().map(|s| s.to_string()).collect(),
            images: 20,
            flip_fraction: 0.1,
            world: WorldConfig::default(),
            seed: 0,
        }
    }
}

impl LabelNoiseConfig {
    pub fn model(&self) -> ModelConfig {
        ModelConfig {
            contexts: 1,
            epsilon: self.flip_fraction,
            ..scenario_model()
        }
    }
}

/// Every image labelled; a fixed fraction of labels replaced by another
/// identity's name. Truth is the correct name.
pub fn label_noise_data(config: &LabelNoiseConfig) -> Result<Dataset> {
    let k = config.names.len();
    if k < 2 {
        return Err(Error::InvalidParameter("need at least two names".into()));
    }
    let mut rng = RandomSource::new(config.seed);
    let world = config.world.generate(k, &mut rng)?;
    let bank = world.image_bank(config.images, &mut rng);
    let mut items: Vec<Item> = Vec::new();
    for (i, images) in bank.into_iter().enumerate() {
        for x in images {
            items.push((x, Some(config.names[i].clone()), config.names[i].clone()));
        }
    }
    let mut order: Vec<usize> = (0..items.len()).collect();
    for j in (1..order.len()).rev() {
        order.swap(j, rng.below(j + 1));
    }
    let flips = (config.flip_fraction * items.len() as f64).round() as usize;
    for &n in &order[..flips] {
        let own = config.names.iter().position(|s| *s == items[n].2).expect("own name");
        let other = (own + 1 + rng.below(k - 1)) % k;
        items[n].1 = Some(config.names[other].clone());
    }
    let mut slots: Vec<Option<_>> = items.into_iter().map(Some).collect();
    singleton_frames(
        order
            .iter()
            .map(|&n| slots[n].take().expect("each slot once"))
            .collect(),
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelNoiseReport {
    /// Fraction of snapshots in which every identity's majority cluster
    /// carries its correct name.
    pub recovered_fraction: f64,
    pub snapshots: usize,
    pub flipped: usize,
}

pub fn evaluate_label_noise(data: &Dataset, states: &[&ModelState]) -> Result<LabelNoiseReport> {
    if states.is_empty() {
        return Err(Error::Empty);
    }
    let truth = truths(data)?;
    let names: BTreeSet<&String> = truth.iter().collect();
    let mut good = 0usize;
    for state in states {
        let all = names.iter().all(|name| {
            let mut tally: BTreeMap<usize, usize> = BTreeMap::new();
            for (z, t) in state.assignments.iter().zip(&truth) {
                if t == *name {
                    *tally.entry(*z).or_insert(0) += 1;
                }
            }
            let majority = tally
                .iter()
                .max_by_key(|(z, c)| (**c, std::cmp::Reverse(**z)))
                .map(|(z, _)| *z);
            majority.is_some_and(|z| state.labels.identity_labels[z] == Label::Named((*name).clone()))
        });
        good += usize::from(all);
    }
    let flipped = data
        .observations()
        .iter()
        .filter(|o| o.label.as_ref() != o.truth.as_ref())
        .count();
    Ok(LabelNoiseReport {
        recovered_fraction: good as f64 / states.len() as f64,
        snapshots: states.len(),
        flipped,
    })
}

pub fn run_label_noise(config: &LabelNoiseConfig, model: &ModelConfig, fit: &FitConfig) -> Result<LabelNoiseReport> {
    let data = label_noise_data(config)?;
    let hyper = model.build(&data)?;
    let pooled = fit.fit(&data, &hyper, &FitProtocol::offline())?;
    evaluate_label_noise(&data, &pooled.states())
}

/// Sum over protocols of the across-chain variance of final ARI.
pub fn total_final_variance(reports: &[ClusteringReport], context_model: bool) -> f64 {
    reports
        .iter()
        .filter(|r| r.context_model == context_model)
        .map(|r| r.final_ari_variance)
        .sum()
}

/// Mean of per-chain final ARI for a protocol.
pub fn mean_final_ari(report: &ClusteringReport) -> f64 {
    mean(&report.final_ari)
}
