//! End-to-end acceptance checks. Each check prints one PASS/FAIL line;
//! the test fails if any check fails.
//!
//!     cargo test --release -p hdpid --test acceptance -- --nocapture

use std::collections::{BTreeMap, HashMap};
use std::time::{Duration, Instant};

use hdpid::data::{Dataset, Observation};
use hdpid::eval::{adjusted_rand_index, roc_auc};
use hdpid::experiments::{
    run_identity_discovery, run_label_noise, run_labelling, run_unknown_detection, total_final_variance,
    EncounterConfig, FitConfig, LabelNoiseConfig, LabellingConfig, UnknownDetectionConfig,
};
use hdpid::face_model::{posterior_params, prior_predictive_log, FaceComponent, NigPrior};
use hdpid::identity_model::{sample_table_counts, GlobalWeights, IdentityCounts, IdentityHyper, TableCounts};
use hdpid::label_model::{label_conditional_log_weights, Label, LabelChoice, LabelHyper, LabelState};
use hdpid::numerics::{sample_beta, sample_gamma, RandomSource};
use hdpid::sampler::{gibbs_sweep, gibbs_sweep_with, Hyper, ModelState, ProtocolMode, SweepPlan};
use statrs::function::gamma::ln_gamma;

struct Outcome {
    pass: bool,
    detail: String,
}

fn run(id: usize, name: &str, limit: Duration, check: impl FnOnce() -> Outcome) -> bool {
    let start = Instant::now();
    let out = check();
    let elapsed = start.elapsed();
    let pass = out.pass && elapsed < limit;
    println!(
        "{} [{id}] {name}: {} ({:.1} s, limit {} s)",
        if pass { "PASS" } else { "FAIL" },
        out.detail,
        elapsed.as_secs_f64(),
        limit.as_secs()
    );
    pass
}

fn secs(s: u64) -> Duration {
    Duration::from_secs(s)
}

// ---------------------------------------------------------------------------
// 1. conjugacy

fn random_points(m: usize, d: usize, rng: &mut RandomSource) -> Vec<Vec<f64>> {
    (0..m)
        .map(|_| (0..d).map(|_| 2.0 * rng.standard_normal() + 0.5).collect())
        .collect()
}

fn max_param_diff(a: &NigPrior, b: &NigPrior) -> f64 {
    let mut diff = (a.kappa0 - b.kappa0).abs().max((a.shape0 - b.shape0).abs());
    diff = diff.max((a.rate0 - b.rate0).abs() / b.rate0.max(1.0));
    for (x, y) in a.mean0.iter().zip(&b.mean0) {
        diff = diff.max((x - y).abs());
    }
    diff
}

fn ln_normal(x: f64, mean: f64, var: f64) -> f64 {
    -0.5 * (2.0 * std::f64::consts::PI * var).ln() - (x - mean).powi(2) / (2.0 * var)
}

/// Composite Simpson weights on `n` (even) intervals.
fn simpson(n: usize) -> Vec<f64> {
    (0..=n)
        .map(|k| match k {
            0 => 1.0,
            k if k == n => 1.0,
            k if k % 2 == 1 => 4.0,
            _ => 2.0,
        })
        .collect()
}

/// `∫∫ N(x | μ, σ²) NIG(μ, σ²) dμ dσ²` on a grid over `ln σ²` and the
/// standardised prior offset of `μ`.
fn quadrature_predictive(x: f64, prior: &NigPrior) -> f64 {
    let (m0, k0, a, b) = (prior.mean0[0], prior.kappa0, prior.shape0, prior.rate0);
    let n = 1600;
    let (u_lo, u_hi) = (-12.0f64, 9.0f64);
    let (t_lo, t_hi) = (-12.0f64, 12.0f64);
    let hu = (u_hi - u_lo) / n as f64;
    let ht = (t_hi - t_lo) / n as f64;
    let w = simpson(n);
    let mut total = 0.0;
    for (iu, wu) in w.iter().enumerate() {
        let u = u_lo + iu as f64 * hu;
        let var = u.exp();
        // inverse-gamma density in σ² times the Jacobian dσ²/du = σ²
        let ln_ig = a * b.ln() - ln_gamma(a) - (a + 1.0) * u - b / var + u;
        let sd_mean = (var / k0).sqrt();
        let mut inner = 0.0;
        for (it, wt) in w.iter().enumerate() {
            let t = t_lo + it as f64 * ht;
            let mu = m0 + t * sd_mean;
            inner += wt * (ln_normal(t, 0.0, 1.0) + ln_normal(x, mu, var)).exp();
        }
        total += wu * ln_ig.exp() * inner * ht / 3.0;
    }
    (total * hu / 3.0).ln()
}

fn conjugacy() -> Outcome {
    let mut rng = RandomSource::new(101);
    let mut worst: f64 = 0.0;
    for trial in 0..200 {
        let d = 1 + trial % 4;
        let prior = NigPrior::new(
            (0..d).map(|_| rng.standard_normal()).collect(),
            0.1 + rng.uniform() * 3.0,
            1.5 + rng.uniform() * 3.0,
            0.2 + rng.uniform() * 2.0,
        )
        .unwrap();
        let m = 2 + rng.below(20);
        let data = random_points(m, d, &mut rng);
        let cut = 1 + rng.below(m - 1);
        let sequential = posterior_params(&posterior_params(&prior, &data[..cut]).unwrap(), &data[cut..]).unwrap();
        let batch = posterior_params(&prior, &data).unwrap();
        worst = worst.max(max_param_diff(&sequential, &batch));
    }
    let prior = NigPrior::new(vec![0.3], 0.7, 2.5, 1.3).unwrap();
    let mut quad_err: f64 = 0.0;
    for x in [-2.0, -0.5, 0.3, 1.0, 3.5] {
        let exact = prior_predictive_log(&[x], &prior).unwrap();
        quad_err = quad_err.max((exact - quadrature_predictive(x, &prior)).abs());
    }
    Outcome {
        pass: worst < 1e-10 && quad_err < 1e-4,
        detail: format!(
            "batch vs sequential {worst:.1e} (tol 1e-10), predictive vs quadrature {quad_err:.1e} (tol 1e-4)"
        ),
    }
}

// ---------------------------------------------------------------------------
// 2. exact enumeration with fixed identity parameters

struct Toy {
    data: Dataset,
    hyper: Hyper,
}

fn toy_dataset(xs: &[Vec<f64>], frames: &[usize], contexts: Vec<Option<usize>>) -> Dataset {
    let observations = xs
        .iter()
        .zip(frames)
        .enumerate()
        .map(|(n, (x, m))| Observation {
            id: format!("o{n}"),
            frame: *m,
            embedding: x.clone(),
            label: None,
            truth: None,
        })
        .collect();
    Dataset::new(observations, contexts).unwrap()
}

fn placeholder_labels(identities: usize) -> LabelState {
    let mut labels = LabelState::new(Vec::<String>::new());
    for _ in 0..identities {
        let p = labels.fresh_placeholder();
        labels.push(p).unwrap();
    }
    labels
}

fn state_from(
    data: &Dataset,
    hyper: &Hyper,
    assignments: Vec<usize>,
    frame_contexts: Vec<usize>,
    global_weights: GlobalWeights,
    components: Vec<FaceComponent>,
    rng: &mut RandomSource,
) -> ModelState {
    let identities = components.len();
    let counts = IdentityCounts::from_assignments(
        hyper.contexts(),
        identities,
        &assignments,
        (0..assignments.len()).map(|n| frame_contexts[data.frame_of(n)]),
    );
    let tables = if identities == 0 {
        TableCounts {
            counts: vec![Vec::new(); hyper.contexts()],
        }
    } else {
        sample_table_counts(&counts, &global_weights, &hyper.identity, rng).unwrap()
    };
    ModelState {
        assignments,
        frame_contexts,
        global_weights,
        components,
        labels: placeholder_labels(identities),
        tables,
        counts,
    }
}

/// Exact `p(z | x, θ, π₀)` over all assignment vectors, contexts of the
/// unobserved frames summed out.
#[allow(clippy::too_many_arguments)]
fn enumerate_posterior(
    xs: &[f64],
    frames: &[Vec<usize>],
    observed: &[Option<usize>],
    comps: &[(f64, f64)],
    pi0: &[f64],
    alpha: f64,
    gamma0: f64,
    contexts: usize,
) -> Vec<f64> {
    let n = xs.len();
    let k = comps.len();
    let states = k.pow(n as u32);
    let hidden: Vec<usize> = (0..frames.len()).filter(|m| observed[*m].is_none()).collect();
    let mut post = vec![0.0; states];
    for (code, slot) in post.iter_mut().enumerate() {
        let z: Vec<usize> = (0..n).map(|j| (code / k.pow(j as u32)) % k).collect();
        let lik: f64 = (0..n)
            .map(|j| ln_normal(xs[j], comps[z[j]].0, comps[z[j]].1))
            .sum::<f64>()
            .exp();
        let mut total = 0.0;
        for ccode in 0..contexts.pow(hidden.len() as u32) {
            let mut c: Vec<usize> = observed.iter().map(|o| o.unwrap_or(0)).collect();
            for (h, m) in hidden.iter().enumerate() {
                c[*m] = (ccode / contexts.pow(h as u32)) % contexts;
            }
            // frames join contexts one at a time
            let mut p = 1.0;
            let mut frame_counts = vec![0.0; contexts];
            for cm in &c {
                let total_frames: f64 = frame_counts.iter().sum();
                p *= (gamma0 / contexts as f64 + frame_counts[*cm]) / (gamma0 + total_frames);
                frame_counts[*cm] += 1.0;
            }
            // observations join their context's urn one at a time
            let mut urn = vec![vec![0.0; k]; contexts];
            for (m, members) in frames.iter().enumerate() {
                for j in members {
                    let row = &mut urn[c[m]];
                    let seated: f64 = row.iter().sum();
                    p *= (row[z[*j]] + alpha * pi0[z[*j]]) / (seated + alpha);
                    row[z[*j]] += 1.0;
                }
            }
            total += p;
        }
        *slot = total * lik;
    }
    let norm: f64 = post.iter().sum();
    post.iter().map(|p| p / norm).collect()
}

fn exact_enumeration() -> Outcome {
    let xs = [-1.4, -0.2, 0.1, 1.2, 1.7, -1.0];
    let frame_of = [0, 0, 1, 1, 2, 2];
    let observed = vec![Some(0), None, None];
    let comps = [(-1.5, 0.6), (0.0, 0.6), (1.5, 0.6)];
    let pi0 = [0.5, 0.3, 0.2];
    let (alpha, gamma0, contexts) = (1.5, 1.0, 2);

    let data = toy_dataset(
        &xs.iter().map(|x| vec![*x]).collect::<Vec<_>>(),
        &frame_of,
        observed.clone(),
    );
    let hyper = Hyper::new(
        IdentityHyper::shared(1.0, alpha, gamma0, contexts).unwrap(),
        LabelHyper::default(),
        NigPrior::new(vec![0.0], 1.0, 3.0, 1.0).unwrap(),
        true,
    );
    let toy = Toy { data, hyper };
    let mut rng = RandomSource::new(202);
    let mut state = state_from(
        &toy.data,
        &toy.hyper,
        vec![0, 1, 1, 2, 2, 0],
        vec![0, 1, 0],
        GlobalWeights {
            explicit: pi0.to_vec(),
            remainder: 0.0,
        },
        comps
            .iter()
            .map(|(m, v)| FaceComponent {
                mean: vec![*m],
                variance: *v,
            })
            .collect(),
        &mut rng,
    );
    let plan = SweepPlan::assignments_only();
    let sweeps = 1_000_000;
    let k = comps.len();
    let mut freq = vec![0.0; k.pow(xs.len() as u32)];
    for _ in 0..1000 {
        gibbs_sweep_with(&mut state, &toy.data, &toy.hyper, &plan, &mut rng).unwrap();
    }
    for _ in 0..sweeps {
        gibbs_sweep_with(&mut state, &toy.data, &toy.hyper, &plan, &mut rng).unwrap();
        let code: usize = state
            .assignments
            .iter()
            .enumerate()
            .map(|(j, z)| z * k.pow(j as u32))
            .sum();
        freq[code] += 1.0;
    }
    let frames: Vec<Vec<usize>> = (0..3).map(|m| (0..6).filter(|j| frame_of[*j] == m).collect()).collect();
    let exact = enumerate_posterior(&xs, &frames, &observed, &comps, &pi0, alpha, gamma0, contexts);
    let tv: f64 = 0.5
        * freq
            .iter()
            .zip(&exact)
            .map(|(f, p)| (f / sweeps as f64 - p).abs())
            .sum::<f64>();
    Outcome {
        pass: tv < 0.02 && state.identities() == 3,
        detail: format!(
            "TV distance {tv:.4} over {} assignment vectors, 1e6 sweeps (tol 0.02)",
            exact.len()
        ),
    }
}

// ---------------------------------------------------------------------------
// 3. Geweke

const GEWEKE_FRAMES: usize = 5;
const GEWEKE_PER_FRAME: usize = 2;

fn geweke_toy() -> Toy {
    let n = GEWEKE_FRAMES * GEWEKE_PER_FRAME;
    let frame_of: Vec<usize> = (0..n).map(|j| j / GEWEKE_PER_FRAME).collect();
    let data = toy_dataset(&vec![vec![0.0, 0.0]; n], &frame_of, vec![None; GEWEKE_FRAMES]);
    let hyper = Hyper::new(
        IdentityHyper::shared(1.0, 1.0, 1.0, 2).unwrap(),
        LabelHyper::default(),
        NigPrior::new(vec![0.0, 0.0], 1.0, 4.0, 3.0).unwrap(),
        true,
    );
    Toy { data, hyper }
}

fn draw_normal(mean: f64, var: f64, rng: &mut RandomSource) -> f64 {
    mean + var.sqrt() * rng.standard_normal()
}

fn redraw_embeddings(toy: &Toy, state: &ModelState, rng: &mut RandomSource) -> Dataset {
    let xs = state
        .assignments
        .iter()
        .map(|z| {
            let c = &state.components[*z];
            c.mean.iter().map(|m| draw_normal(*m, c.variance, rng)).collect()
        })
        .collect();
    toy.data.with_embeddings(xs).unwrap()
}

/// Joint draw of every latent variable and the data from the generative
/// model, global weights instantiated by stick breaking as identities appear.
fn forward_draw(toy: &Toy, rng: &mut RandomSource) -> (ModelState, Dataset) {
    let hyper = &toy.hyper;
    let contexts = hyper.contexts();
    let g = hyper.identity.gamma0;
    let mut frame_counts = vec![0.0; contexts];
    let mut frame_contexts = Vec::new();
    for _ in 0..GEWEKE_FRAMES {
        let total: f64 = frame_counts.iter().sum();
        let u = rng.uniform() * (g + total);
        let mut acc = 0.0;
        let mut pick = contexts - 1;
        for (c, m) in frame_counts.iter().enumerate() {
            acc += g / contexts as f64 + m;
            if u < acc {
                pick = c;
                break;
            }
        }
        frame_counts[pick] += 1.0;
        frame_contexts.push(pick);
    }
    let alpha = hyper.identity.alpha_c[0];
    let mut weights = GlobalWeights::empty();
    let mut counts: Vec<Vec<f64>> = vec![Vec::new(); contexts];
    let mut assignments = Vec::new();
    for n in 0..toy.data.len() {
        let c = frame_contexts[toy.data.frame_of(n)];
        let row = &counts[c];
        let mut w: Vec<f64> = (0..weights.len())
            .map(|i| row[i] + alpha * weights.explicit[i])
            .collect();
        w.push(alpha * weights.remainder);
        let u = rng.uniform() * w.iter().sum::<f64>();
        let mut acc = 0.0;
        let mut z = w.len() - 1;
        for (i, wi) in w.iter().enumerate() {
            acc += wi;
            if u < acc {
                z = i;
                break;
            }
        }
        if z == weights.len() {
            let beta = sample_beta(1.0, hyper.identity.alpha0, rng).unwrap();
            weights.explicit.push(beta * weights.remainder);
            weights.remainder *= 1.0 - beta;
            counts.iter_mut().for_each(|r| r.push(0.0));
        }
        counts[c][z] += 1.0;
        assignments.push(z);
    }
    let prior = &hyper.face;
    let components: Vec<FaceComponent> = (0..weights.len())
        .map(|_| {
            let variance = 1.0 / sample_gamma(prior.shape0, prior.rate0, rng).unwrap();
            FaceComponent {
                mean: prior
                    .mean0
                    .iter()
                    .map(|m| draw_normal(*m, variance / prior.kappa0, rng))
                    .collect(),
                variance,
            }
        })
        .collect();
    let state = state_from(&toy.data, hyper, assignments, frame_contexts, weights, components, rng);
    let data = redraw_embeddings(toy, &state, rng);
    (state, data)
}

fn geweke_stats(state: &ModelState) -> [f64; 3] {
    let max_count = state.counts.per_context.iter().flatten().copied().max().unwrap_or(0);
    let mean_var = state.components.iter().map(|c| c.variance).sum::<f64>() / state.identities() as f64;
    [state.identities() as f64, max_count as f64, mean_var]
}

fn mean_and_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    (m, xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0))
}

/// Standard error of the mean of an autocorrelated series by batch means.
fn batch_means_se(xs: &[f64], batches: usize) -> f64 {
    let size = xs.len() / batches;
    let means: Vec<f64> = (0..batches)
        .map(|b| xs[b * size..(b + 1) * size].iter().sum::<f64>() / size as f64)
        .collect();
    (mean_and_var(&means).1 / batches as f64).sqrt()
}

fn geweke() -> Outcome {
    let toy = geweke_toy();
    let rounds = 10_000;
    let mut rng = RandomSource::new(303);
    let mut marginal: Vec<Vec<f64>> = (0..3).map(|_| Vec::with_capacity(rounds)).collect();
    for _ in 0..rounds {
        let (state, _) = forward_draw(&toy, &mut rng);
        for (k, s) in geweke_stats(&state).iter().enumerate() {
            marginal[k].push(*s);
        }
    }
    let mut successive: Vec<Vec<f64>> = (0..3).map(|_| Vec::with_capacity(rounds)).collect();
    let (mut state, mut data) = forward_draw(&toy, &mut rng);
    for _ in 0..rounds {
        gibbs_sweep(&mut state, &data, &toy.hyper, &mut rng).unwrap();
        data = redraw_embeddings(&toy, &state, &mut rng);
        for (k, s) in geweke_stats(&state).iter().enumerate() {
            successive[k].push(*s);
        }
    }
    let names = ["I", "max N_ci", "mean variance"];
    let mut zs = Vec::new();
    for k in 0..3 {
        let (m1, v1) = mean_and_var(&marginal[k]);
        let (m2, _) = mean_and_var(&successive[k]);
        let se2 = batch_means_se(&successive[k], 50);
        zs.push((m1 - m2) / (v1 / rounds as f64 + se2 * se2).sqrt());
    }
    let detail = names
        .iter()
        .zip(&zs)
        .map(|(n, z)| format!("{n} z={z:+.2}"))
        .collect::<Vec<_>>()
        .join(", ");
    Outcome {
        pass: zs.iter().all(|z| z.abs() < 4.0),
        detail: format!("{detail} over 1e4 rounds (tol |z| < 4)"),
    }
}

// ---------------------------------------------------------------------------
// 4–6, 9. synthetic scenarios

fn unknown_detection() -> Outcome {
    let config = UnknownDetectionConfig::default();
    let r = run_unknown_detection(&config, &config.model(), &FitConfig::default()).unwrap();
    let auc = r.auc.median;
    let pass = r.snapshots == 320 && auc >= 0.95 && auc >= r.nn_auc - 0.01 && r.accuracy.median >= 0.9;
    Outcome {
        pass,
        detail: format!(
            "AUC median {auc:.4} (pooled {:.4}) vs NN {:.4}; MAP accuracy median {:.3} 95% HPD [{:.3}, {:.3}]; {} snapshots",
            r.pooled_auc, r.nn_auc, r.accuracy.median, r.accuracy.hpd.lower, r.accuracy.hpd.upper, r.snapshots
        ),
    }
}

fn identity_discovery() -> Outcome {
    let config = EncounterConfig::default();
    let reports = run_identity_discovery(&config, &config.model(), &FitConfig::default()).unwrap();
    let mut parts = Vec::new();
    let mut pass = true;
    for r in &reports {
        if r.context_model {
            pass &= r.median_final_ari >= 0.9;
        }
        parts.push(format!(
            "{}/{} {:.3}",
            r.protocol,
            if r.context_model { "ctx" } else { "noctx" },
            r.median_final_ari
        ));
    }
    for mode in [ProtocolMode::Online, ProtocolMode::Batch, ProtocolMode::Offline] {
        pass &= reports.iter().any(|r| r.protocol == mode && r.context_model);
    }
    let with = total_final_variance(&reports, true);
    let without = total_final_variance(&reports, false);
    pass &= with <= without;
    Outcome {
        pass,
        detail: format!(
            "median final ARI {}; final-ARI variance with contexts {with:.2e} <= without {without:.2e}",
            parts.join(", ")
        ),
    }
}

fn labelling() -> Outcome {
    let config = LabellingConfig::default();
    let r = run_labelling(&config, &config.model(), &FitConfig::default()).unwrap();
    let pass = config.labels_per_acquaintance >= 5
        && r.model.acquainted >= 0.9
        && r.model.unknown_groups >= 0.9
        && r.nn.unknown_groups == 0.0
        && r.lp.unknown_groups == 0.0;
    Outcome {
        pass,
        detail: format!(
            "{} labels each: acquainted {:.3}, familiar+strangers {:.3} (familiar {:.3}, strangers {:.3}); NN {:.3}, LP {:.3} on familiar+strangers",
            config.labels_per_acquaintance,
            r.model.acquainted,
            r.model.unknown_groups,
            r.model.familiar,
            r.model.strangers,
            r.nn.unknown_groups,
            r.lp.unknown_groups
        ),
    }
}

fn label_noise() -> Outcome {
    let config = LabelNoiseConfig::default();
    let r = run_label_noise(&config, &config.model(), &FitConfig::default()).unwrap();
    Outcome {
        pass: r.recovered_fraction >= 0.95,
        detail: format!(
            "{} of {} labels flipped; majority names recovered in {:.3} of {} snapshots (tol 0.95)",
            r.flipped,
            config.names.len() * config.images,
            r.recovered_fraction,
            r.snapshots
        ),
    }
}

// ---------------------------------------------------------------------------
// 7. name-conditional approximation

const NAMES: [&str; 5] = ["a", "bb", "ccc", "dd", "e"];
const FRESH_EXPLICIT_LEN: usize = 12;

fn base(len: usize, h: &LabelHyper) -> f64 {
    let (phi, k) = (h.phi, h.alphabet_size as f64);
    (1.0 / (phi - 1.0)) * ((phi - 1.0) / (phi * k)).powi(len as i32)
}

/// Unapproximated conditional of identity `i`'s name: prior from the other
/// identities times the noisy-label likelihood of its own evidence, with
/// the label predictive evaluated at the proposed name. Outside names are
/// summed over string length.
fn exact_weights(
    named: &[usize],
    groups: &[usize],
    evidence: &[usize],
    lambda: f64,
    h: &LabelHyper,
) -> (Vec<f64>, Vec<f64>, f64) {
    let y = named.len();
    let others: usize = named.iter().sum::<usize>() + groups.iter().sum::<usize>();
    let total = others as f64 + 1.0;
    let eps = h.epsilon;
    let l: Vec<f64> = NAMES[..y].iter().map(|s| base(s.len(), h)).collect();
    let prior_norm = lambda + total - 1.0;
    let likelihood = |j: &dyn Fn(usize) -> f64, own_mass: f64, own: Option<usize>| -> f64 {
        (0..y)
            .map(|k| {
                let n = evidence[k] as i32;
                if Some(k) == own {
                    (1.0 - eps).powi(n)
                } else {
                    (eps * (lambda * l[k] + j(k)) / (lambda + total - own_mass)).powi(n)
                }
            })
            .product()
    };
    let known: Vec<f64> = (0..y)
        .map(|m| {
            let j = |k: usize| named[k] as f64 + f64::from(u8::from(k == m));
            let prior = (lambda * l[m] + named[m] as f64) / prior_norm;
            prior * likelihood(&j, lambda * l[m] + named[m] as f64 + 1.0, Some(m))
        })
        .collect();
    let j_other = |k: usize| named[k] as f64;
    let join: Vec<f64> = groups
        .iter()
        .map(|g| (*g as f64 / prior_norm) * likelihood(&j_other, *g as f64 + 1.0, None))
        .collect();
    let mut fresh = 0.0;
    for len in 1..=FRESH_EXPLICIT_LEN {
        let per_string = base(len, h);
        let strings_outside =
            (h.alphabet_size as f64).powi(len as i32) - NAMES[..y].iter().filter(|s| s.len() == len).count() as f64;
        fresh += strings_outside * lambda * per_string / prior_norm * likelihood(&j_other, lambda * per_string, None);
    }
    // beyond this length a single string's base mass no longer moves the
    // likelihood, so the rest of the length distribution enters as a whole
    let r = (h.phi - 1.0) / h.phi;
    let tail_mass = r.powi(FRESH_EXPLICIT_LEN as i32 + 1) / ((1.0 - r) * (h.phi - 1.0));
    fresh += lambda * tail_mass / prior_norm * likelihood(&j_other, 0.0, None);
    (known, join, fresh)
}

fn label_approximation() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut configs = 0usize;
    for lambda in [0.01, 0.1, 0.5, 1.0] {
        let h = LabelHyper {
            lambda,
            ..LabelHyper::default()
        };
        for identities in 1..=10usize {
            for y in 1..=5usize {
                // split the other identities among the names and unnamed groups
                for named in compositions(identities - 1, y + 1) {
                    let unnamed = named[y];
                    let named = &named[..y];
                    for grouping in [false, true] {
                        let groups: Vec<usize> = match (unnamed, grouping) {
                            (0, _) => vec![],
                            (u, false) => vec![1; u],
                            (u, true) => vec![u],
                        };
                        if grouping && unnamed < 2 {
                            continue;
                        }
                        for evidence in bounded_vectors(y, 3) {
                            configs += 1;
                            worst = worst.max(compare(named, &groups, &evidence, &h));
                        }
                    }
                }
            }
        }
    }
    Outcome {
        pass: worst < 0.05,
        detail: format!("max relative error {worst:.2e} over {configs} configurations (tol 0.05)"),
    }
}

/// Relative error of the normalised approximate conditional against the
/// normalised exact one, over every outcome.
fn compare(named: &[usize], groups: &[usize], evidence: &[usize], h: &LabelHyper) -> f64 {
    let y = named.len();
    let mut labels = Vec::new();
    for (k, n) in named.iter().enumerate() {
        labels.extend(std::iter::repeat_n(Label::Named(NAMES[k].to_string()), *n));
    }
    for (g, n) in groups.iter().enumerate() {
        labels.extend(std::iter::repeat_n(Label::Unnamed(g as u64), *n));
    }
    // identity under update sits last with a placeholder of its own
    labels.push(Label::Unnamed(groups.len() as u64));
    let i = labels.len() - 1;
    let state = LabelState::from_labels(NAMES[..y].iter().map(|s| s.to_string()), labels).unwrap();
    let members: BTreeMap<String, usize> = (0..y)
        .filter(|k| evidence[*k] > 0)
        .map(|k| (NAMES[k].to_string(), evidence[k]))
        .collect();
    let approx = label_conditional_log_weights(i, &members, &state, h);

    let (known, join, fresh) = exact_weights(named, groups, evidence, h.lambda, h);
    let exact_total: f64 = known.iter().sum::<f64>() + join.iter().sum::<f64>() + fresh;
    let mut exact: HashMap<String, f64> = HashMap::new();
    for (k, w) in known.iter().enumerate() {
        exact.insert(format!("known:{}", NAMES[k]), w / exact_total);
    }
    for (g, w) in join.iter().enumerate() {
        exact.insert(format!("join:{g}"), w / exact_total);
    }
    exact.insert("fresh".into(), fresh / exact_total);

    let max_log = approx.iter().map(|(_, w)| *w).fold(f64::NEG_INFINITY, f64::max);
    let approx_total: f64 = approx.iter().map(|(_, w)| (w - max_log).exp()).sum();
    let mut worst: f64 = 0.0;
    assert_eq!(approx.len(), exact.len());
    for (choice, w) in &approx {
        let key = match choice {
            LabelChoice::Known(name) => format!("known:{name}"),
            LabelChoice::Join(Label::Unnamed(g)) => format!("join:{g}"),
            LabelChoice::Join(other) => panic!("join of named label {other:?}"),
            LabelChoice::Fresh => "fresh".into(),
        };
        let p = (w - max_log).exp() / approx_total;
        let q = exact[&key];
        worst = worst.max((p - q).abs() / q);
    }
    worst
}

/// All vectors of `parts` non-negative integers summing to `total`.
fn compositions(total: usize, parts: usize) -> Vec<Vec<usize>> {
    if parts == 1 {
        return vec![vec![total]];
    }
    let mut out = Vec::new();
    for first in 0..=total {
        for mut rest in compositions(total - first, parts - 1) {
            rest.insert(0, first);
            out.push(rest);
        }
    }
    out
}

/// All vectors of length `len` with entries summing to at most `max_total`.
fn bounded_vectors(len: usize, max_total: usize) -> Vec<Vec<usize>> {
    (0..=max_total).flat_map(|t| compositions(t, len)).collect()
}

// ---------------------------------------------------------------------------
// 8. metric oracles

fn pair_count_ari(a: &[usize], b: &[usize]) -> Option<f64> {
    let (mut ss, mut sd, mut ds, mut dd) = (0.0, 0.0, 0.0, 0.0);
    for i in 0..a.len() {
        for j in i + 1..a.len() {
            match (a[i] == a[j], b[i] == b[j]) {
                (true, true) => ss += 1.0,
                (true, false) => sd += 1.0,
                (false, true) => ds += 1.0,
                (false, false) => dd += 1.0,
            }
        }
    }
    let denom = (ss + sd) * (sd + dd) + (ss + ds) * (ds + dd);
    (denom != 0.0).then(|| 2.0 * (ss * dd - sd * ds) / denom)
}

fn pair_count_auc(scores: &[f64], positives: &[bool]) -> f64 {
    let (mut wins, mut pairs) = (0.0, 0.0);
    for (i, si) in scores.iter().enumerate() {
        for (j, sj) in scores.iter().enumerate() {
            if positives[i] && !positives[j] {
                pairs += 1.0;
                if si > sj {
                    wins += 1.0;
                } else if si == sj {
                    wins += 0.5;
                }
            }
        }
    }
    wins / pairs
}

fn metric_oracles() -> Outcome {
    let mut rng = RandomSource::new(808);
    let (mut ari_err, mut auc_err): (f64, f64) = (0.0, 0.0);
    let mut ari_cases = 0;
    while ari_cases < 100 {
        let n = 2 + rng.below(60);
        let ka = 1 + rng.below(6);
        let kb = 1 + rng.below(6);
        let a: Vec<usize> = (0..n).map(|_| rng.below(ka)).collect();
        let b: Vec<usize> = (0..n).map(|_| rng.below(kb)).collect();
        if let Some(oracle) = pair_count_ari(&a, &b) {
            ari_err = ari_err.max((adjusted_rand_index(&a, &b).unwrap() - oracle).abs());
            ari_cases += 1;
        }
    }
    for _ in 0..100 {
        let n = 2 + rng.below(80);
        let levels = 1 + rng.below(10);
        let scores: Vec<f64> = (0..n).map(|_| rng.below(levels) as f64 * 0.37).collect();
        let mut positives: Vec<bool> = (0..n).map(|_| rng.uniform() < 0.5).collect();
        positives[0] = true;
        positives[1] = false;
        auc_err = auc_err.max((roc_auc(&scores, &positives).unwrap() - pair_count_auc(&scores, &positives)).abs());
    }
    Outcome {
        pass: ari_err <= 1e-12 && auc_err <= 1e-12,
        detail: format!(
            "100 instances each: ARI {ari_err:.1e}, AUC {auc_err:.1e} from pair-counting oracles (tol 1e-12)"
        ),
    }
}

#[test]
fn acceptance() {
    let results = [
        run(1, "conjugacy oracle", secs(10), conjugacy),
        run(2, "exact enumeration", secs(300), exact_enumeration),
        run(3, "Geweke successive-conditional", secs(600), geweke),
        run(4, "unknown-person detection", secs(900), unknown_detection),
        run(5, "identity discovery in encounters", secs(1200), identity_discovery),
        run(6, "semi-supervised labelling", secs(900), labelling),
        run(7, "name-conditional approximation", secs(60), label_approximation),
        run(8, "metric oracles", secs(10), metric_oracles),
        run(9, "label-noise robustness", secs(300), label_noise),
    ];
    let passed = results.iter().filter(|p| **p).count();
    println!("{passed}/{} acceptance criteria passed", results.len());
    assert!(results.iter().all(|p| *p));
}
