//! Gibbs sampler over assignments, contexts, names, face parameters,
//! global weights and table counts, with the online, batch and offline
//! fitting protocols and multi-chain execution.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::face_model::{
    empirical_prior, gaussian_log_density, posterior_from_stats, posterior_params, sample_component, FaceComponent,
    NigPrior, PredictiveCache, SuffStats,
};
use crate::identity_model::{
    context_log_prior, sample_global_weights, sample_table_counts, split_remainder, GlobalWeights, IdentityCounts,
    IdentityHyper, TableCounts,
};
use crate::label_model::{
    label_log_likelihood, new_identity_label_log_likelihood, sample_identity_label, sample_new_identity_label,
    LabelHyper, LabelState,
};
use crate::numerics::{sample_log_categorical, RandomSource};

/// Scalar model settings; the face prior is fitted to the data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub alpha0: f64,
    pub alpha: f64,
    pub gamma0: f64,
    pub contexts: usize,
    pub lambda: f64,
    pub epsilon: f64,
    pub phi: f64,
    pub alphabet_size: usize,
    pub kappa0: f64,
    pub shape0: f64,
    /// `false` collapses every frame onto a single context.
    pub context_model: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            alpha0: 1.0,
            alpha: 1.0,
            gamma0: 1.0,
            contexts: 1,
            lambda: 1.0,
            epsilon: 0.05,
            phi: 6.0,
            alphabet_size: 26,
            kappa0: 1.0,
            shape0: 3.0,
            context_model: true,
        }
    }
}

impl ModelConfig {
    pub fn label_hyper(&self) -> LabelHyper {
        LabelHyper {
            lambda: self.lambda,
            epsilon: self.epsilon,
            phi: self.phi,
            alphabet_size: self.alphabet_size,
        }
    }

    pub fn effective_contexts(&self) -> usize {
        if self.context_model {
            self.contexts
        } else {
            1
        }
    }

    /// Fits the face prior to `data` and validates everything else.
    pub fn build(&self, data: &Dataset) -> Result<Hyper> {
        let face = empirical_prior(&data.embeddings(), self.kappa0, self.shape0)?;
        self.build_with_prior(data, face)
    }

    pub fn build_with_prior(&self, data: &Dataset, face: NigPrior) -> Result<Hyper> {
        let contexts = self.effective_contexts();
        if self.context_model && data.observed_context_count() > contexts {
            return Err(Error::ContextOutOfRange {
                context: data.observed_context_count() - 1,
                contexts,
            });
        }
        if face.dim() != data.dim() && !data.is_empty() {
            return Err(Error::DimensionMismatch {
                expected: face.dim(),
                got: data.dim(),
            });
        }
        let identity = IdentityHyper::shared(self.alpha0, self.alpha, self.gamma0, contexts)?;
        let label = self.label_hyper();
        label.validate()?;
        for name in data.label_set() {
            crate::label_model::base_log_measure(&name, &label)?;
        }
        Ok(Hyper::new(identity, label, face, self.context_model))
    }
}

/// All fixed quantities of the model.
#[derive(Debug, Clone)]
pub struct Hyper {
    pub identity: IdentityHyper,
    pub label: LabelHyper,
    pub face: NigPrior,
    pub context_model: bool,
    predictive: PredictiveCache,
}

impl Hyper {
    pub fn new(identity: IdentityHyper, label: LabelHyper, face: NigPrior, context_model: bool) -> Self {
        let predictive = PredictiveCache::new(&face);
        Self {
            identity,
            label,
            face,
            context_model,
            predictive,
        }
    }

    pub fn contexts(&self) -> usize {
        self.identity.contexts()
    }

    pub fn predictive(&self) -> &PredictiveCache {
        &self.predictive
    }

    fn samples_contexts(&self) -> bool {
        self.context_model && self.contexts() > 1
    }
}

/// The sampler state over the revealed prefix of a dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelState {
    pub assignments: Vec<usize>,
    pub frame_contexts: Vec<usize>,
    pub global_weights: GlobalWeights,
    pub components: Vec<FaceComponent>,
    pub labels: LabelState,
    pub tables: TableCounts,
    pub counts: IdentityCounts,
}

impl ModelState {
    /// Nothing revealed yet.
    pub fn empty(data: &Dataset, hyper: &Hyper) -> Self {
        Self {
            assignments: Vec::new(),
            frame_contexts: Vec::new(),
            global_weights: GlobalWeights::empty(),
            components: Vec::new(),
            labels: LabelState::new(data.label_set()),
            tables: TableCounts {
                counts: vec![Vec::new(); hyper.contexts()],
            },
            counts: IdentityCounts::new(hyper.contexts(), 0),
        }
    }

    /// Reveals every frame with one sequential assignment pass.
    pub fn initialize(data: &Dataset, hyper: &Hyper, rng: &mut RandomSource) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::Empty);
        }
        let mut state = Self::empty(data, hyper);
        state.reveal(data, hyper, data.frames(), rng)?;
        Ok(state)
    }

    pub fn identities(&self) -> usize {
        self.components.len()
    }

    pub fn revealed_frames(&self) -> usize {
        self.frame_contexts.len()
    }

    pub fn revealed_observations(&self) -> usize {
        self.assignments.len()
    }

    pub fn observation_context(&self, data: &Dataset, n: usize) -> usize {
        self.frame_contexts[data.frame_of(n)]
    }

    /// Reveals frames up to `frames`, assigning each new observation by its
    /// conditional given everything revealed before it and redrawing the
    /// chosen identity's face from its members, then refreshes the table
    /// counts.
    pub fn reveal(&mut self, data: &Dataset, hyper: &Hyper, frames: usize, rng: &mut RandomSource) -> Result<()> {
        let frames = frames.min(data.frames());
        let mut stats = vec![SuffStats::new(hyper.face.dim()); self.identities()];
        for (n, z) in self.assignments.iter().enumerate() {
            stats[*z].add(data.embedding(n));
        }
        for m in self.revealed_frames()..frames {
            let c = match data.frame_context(m) {
                _ if !hyper.context_model => 0,
                Some(c) => {
                    hyper.identity.check_context(c)?;
                    c
                }
                None if hyper.contexts() == 1 => 0,
                None => self.sample_context_from_prior(hyper, rng)?,
            };
            self.frame_contexts.push(c);
            for &n in data.frame_members(m) {
                debug_assert_eq!(n, self.assignments.len());
                let z = self.draw_assignment(n, c, data, hyper, rng)?;
                self.assignments.push(z);
                self.counts.increment(c, z);
                if z == stats.len() {
                    stats.push(SuffStats::new(hyper.face.dim()));
                }
                stats[z].add(data.embedding(n));
                self.components[z] = sample_component(&posterior_from_stats(&hyper.face, &stats[z]), rng)?;
            }
        }
        self.tables = sample_table_counts(&self.counts, &self.global_weights, &hyper.identity, rng)?;
        Ok(())
    }

    fn sample_context_from_prior(&self, hyper: &Hyper, rng: &mut RandomSource) -> Result<usize> {
        let logs = context_log_prior(&self.frame_context_counts(hyper.contexts()), &hyper.identity);
        sample_log_categorical(&logs, rng)
    }

    fn frame_context_counts(&self, contexts: usize) -> Vec<usize> {
        let mut out = vec![0; contexts];
        for c in &self.frame_contexts {
            out[*c] += 1;
        }
        out
    }

    /// Draws `z_n` in context `c`; `n` must be absent from the counts.
    /// Opening a new identity instantiates its weight, face and name.
    fn draw_assignment(
        &mut self,
        n: usize,
        c: usize,
        data: &Dataset,
        hyper: &Hyper,
        rng: &mut RandomSource,
    ) -> Result<usize> {
        let x = data.embedding(n);
        let label = data.observation(n).label.as_deref();
        let alpha = hyper.identity.alpha_c[c];
        let row = &self.counts.per_context[c];
        let mut logs = Vec::with_capacity(self.identities() + 1);
        for (i, count) in row.iter().enumerate().take(self.identities()) {
            let mut w = (*count as f64 + alpha * self.global_weights.explicit[i]).ln()
                + gaussian_log_density(x, &self.components[i]);
            if let Some(obs) = label {
                w += label_log_likelihood(obs, &self.labels.identity_labels[i], &self.labels, &hyper.label);
            }
            logs.push(w);
        }
        let mut fresh = (alpha * self.global_weights.remainder).ln() + hyper.predictive.log_density(x);
        if let Some(obs) = label {
            fresh += new_identity_label_log_likelihood(obs, &self.labels, &hyper.label);
        }
        logs.push(fresh);
        let z = sample_log_categorical(&logs, rng)?;
        if z == self.identities() {
            split_remainder(&mut self.global_weights, hyper.identity.alpha0, rng)?;
            let posterior = posterior_params(&hyper.face, &[x.to_vec()])?;
            self.components.push(sample_component(&posterior, rng)?);
            let name = sample_new_identity_label(label, &mut self.labels, &hyper.label, rng)?;
            self.labels.push(name)?;
            self.counts.push_identity();
        }
        Ok(z)
    }

    /// Removes identities without observations, returning their weight to
    /// the remainder.
    pub fn prune(&mut self) {
        let live: Vec<bool> = (0..self.identities())
            .map(|i| self.counts.identity_total(i) > 0)
            .collect();
        if live.iter().all(|l| *l) {
            return;
        }
        let mut remap = vec![usize::MAX; live.len()];
        let mut next = 0;
        for (i, l) in live.iter().enumerate() {
            if *l {
                remap[i] = next;
                next += 1;
            }
        }
        for i in (0..live.len()).rev() {
            if !live[i] {
                self.components.remove(i);
                self.labels.remove(i);
                self.global_weights.fold_into_remainder(i);
                self.counts.remove_identity(i);
                for row in &mut self.tables.counts {
                    if i < row.len() {
                        row.remove(i);
                    }
                }
            }
        }
        for z in &mut self.assignments {
            *z = remap[*z];
        }
    }

    /// Verifies every structural invariant against `data`.
    pub fn check(&self, data: &Dataset, hyper: &Hyper) -> Result<()> {
        let identities = self.identities();
        if self.labels.identities() != identities || self.global_weights.len() != identities {
            return Err(Error::Invariant("per-identity vectors disagree in length".into()));
        }
        if self.assignments.len() != data.prefix_len(self.revealed_frames()) {
            return Err(Error::Invariant("assignments do not cover the revealed frames".into()));
        }
        if self.assignments.iter().any(|z| *z >= identities) {
            return Err(Error::Invariant("assignment out of range".into()));
        }
        let rebuilt = IdentityCounts::from_assignments(
            hyper.contexts(),
            identities,
            &self.assignments,
            (0..self.assignments.len()).map(|n| self.observation_context(data, n)),
        );
        if rebuilt != self.counts {
            return Err(Error::Invariant("identity counts stale".into()));
        }
        if (0..identities).any(|i| self.counts.identity_total(i) == 0) {
            return Err(Error::Invariant("empty identity survived pruning".into()));
        }
        for (m, c) in self.frame_contexts.iter().enumerate() {
            if let (true, Some(obs)) = (hyper.context_model, data.frame_context(m)) {
                if obs != *c {
                    return Err(Error::Invariant(format!("frame {m} left its observed context")));
                }
            }
        }
        self.global_weights.check()?;
        self.tables.check_against(&self.counts)?;
        self.labels.check()
    }

    /// Unnormalised log joint density of the revealed data and latent
    /// variables, up to terms constant in the state.
    pub fn log_joint(&self, data: &Dataset, hyper: &Hyper) -> f64 {
        let mut total = 0.0;
        for (n, z) in self.assignments.iter().enumerate() {
            total += gaussian_log_density(data.embedding(n), &self.components[*z]);
            if let Some(obs) = data.observation(n).label.as_deref() {
                total += label_log_likelihood(obs, &self.labels.identity_labels[*z], &self.labels, &hyper.label);
            }
        }
        total += self
            .components
            .iter()
            .map(|c| nig_log_density(c, &hyper.face))
            .sum::<f64>();
        for (c, row) in self.counts.per_context.iter().enumerate() {
            let alpha = hyper.identity.alpha_c[c];
            total += ln_gamma(alpha) - ln_gamma(alpha + self.counts.context_totals[c] as f64);
            for (n, w) in row.iter().zip(&self.global_weights.explicit) {
                if *n > 0 {
                    total += ln_gamma(alpha * w + *n as f64) - ln_gamma(alpha * w);
                }
            }
        }
        let contexts = hyper.contexts() as f64;
        let g = hyper.identity.gamma0 / contexts;
        for m in self.frame_context_counts(hyper.contexts()) {
            total += ln_gamma(g + m as f64) - ln_gamma(g);
        }
        total
    }
}

fn nig_log_density(comp: &FaceComponent, prior: &NigPrior) -> f64 {
    let a = prior.shape0;
    let b = prior.rate0;
    let var = comp.variance;
    let inv_gamma = a * b.ln() - ln_gamma(a) - (a + 1.0) * var.ln() - b / var;
    let mean_part = gaussian_log_density(
        &comp.mean,
        &FaceComponent {
            mean: prior.mean0.clone(),
            variance: var / prior.kappa0,
        },
    );
    inv_gamma + mean_part
}

/// Which blocks a sweep updates. Assignments and unobserved frame contexts
/// are always updated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SweepPlan {
    pub global_weights: bool,
    pub prune: bool,
    pub labels: bool,
    pub faces: bool,
    pub tables: bool,
}

impl SweepPlan {
    pub fn full() -> Self {
        Self {
            global_weights: true,
            prune: true,
            labels: true,
            faces: true,
            tables: true,
        }
    }

    /// Assignments and contexts only, everything else held fixed. Empty
    /// identities are kept so their parameters survive.
    pub fn assignments_only() -> Self {
        Self {
            global_weights: false,
            prune: false,
            labels: false,
            faces: false,
            tables: false,
        }
    }
}

impl Default for SweepPlan {
    fn default() -> Self {
        Self::full()
    }
}

/// One full Gibbs update of the revealed state.
///
/// Order: global weights given the table counts, every assignment,
/// pruning, latent frame contexts, identity names, face parameters, and
/// finally fresh table counts so the state is consistent on exit.
pub fn gibbs_sweep(state: &mut ModelState, data: &Dataset, hyper: &Hyper, rng: &mut RandomSource) -> Result<()> {
    gibbs_sweep_with(state, data, hyper, &SweepPlan::full(), rng)
}

pub fn gibbs_sweep_with(
    state: &mut ModelState,
    data: &Dataset,
    hyper: &Hyper,
    plan: &SweepPlan,
    rng: &mut RandomSource,
) -> Result<()> {
    if state.assignments.is_empty() {
        return Err(Error::Empty);
    }
    if plan.global_weights {
        state.global_weights = sample_global_weights(&state.tables, hyper.identity.alpha0, rng)?;
    }

    for n in 0..state.assignments.len() {
        let c = state.observation_context(data, n);
        state.counts.decrement(c, state.assignments[n]);
        let z = state.draw_assignment(n, c, data, hyper, rng)?;
        state.assignments[n] = z;
        state.counts.increment(c, z);
    }
    if plan.prune {
        state.prune();
    }

    if hyper.samples_contexts() {
        update_contexts(state, data, hyper, rng)?;
    }
    if plan.labels && !state.labels.known_labels.is_empty() {
        update_labels(state, data, hyper, rng)?;
    }
    if plan.faces {
        update_components(state, data, hyper, rng)?;
    }
    if plan.tables {
        state.tables = sample_table_counts(&state.counts, &state.global_weights, &hyper.identity, rng)?;
    }
    Ok(())
}

/// Resamples each unobserved frame context, the frame's members entering
/// the context's restaurant one at a time.
fn update_contexts(state: &mut ModelState, data: &Dataset, hyper: &Hyper, rng: &mut RandomSource) -> Result<()> {
    let contexts = hyper.contexts();
    let mut frame_counts = state.frame_context_counts(contexts);
    let prior_share = hyper.identity.gamma0 / contexts as f64;
    let mut logs = vec![0.0; contexts];
    let mut seen: Vec<usize> = Vec::new();
    for m in 0..state.revealed_frames() {
        if data.frame_context(m).is_some() {
            continue;
        }
        let old = state.frame_contexts[m];
        let members = data.frame_members(m);
        for &n in members {
            state.counts.decrement(old, state.assignments[n]);
        }
        frame_counts[old] -= 1;
        for (c, log) in logs.iter_mut().enumerate() {
            let alpha = hyper.identity.alpha_c[c];
            let row = &state.counts.per_context[c];
            let base = state.counts.context_totals[c] as f64;
            let mut acc = (prior_share + frame_counts[c] as f64).ln();
            seen.clear();
            for (r, &n) in members.iter().enumerate() {
                let z = state.assignments[n];
                let local = seen.iter().filter(|s| **s == z).count();
                acc += (row[z] as f64 + local as f64 + alpha * state.global_weights.explicit[z]).ln()
                    - (alpha + base + r as f64).ln();
                seen.push(z);
            }
            *log = acc;
        }
        let c = sample_log_categorical(&logs, rng)?;
        state.frame_contexts[m] = c;
        frame_counts[c] += 1;
        for &n in members {
            state.counts.increment(c, state.assignments[n]);
        }
    }
    Ok(())
}

fn update_labels(state: &mut ModelState, data: &Dataset, hyper: &Hyper, rng: &mut RandomSource) -> Result<()> {
    let mut members: Vec<BTreeMap<String, usize>> = vec![BTreeMap::new(); state.identities()];
    for (n, z) in state.assignments.iter().enumerate() {
        if let Some(label) = &data.observation(n).label {
            *members[*z].entry(label.clone()).or_insert(0) += 1;
        }
    }
    for (i, evidence) in members.iter().enumerate() {
        let name = sample_identity_label(i, evidence, &mut state.labels, &hyper.label, rng)?;
        state.labels.set(i, name)?;
    }
    Ok(())
}

fn update_components(state: &mut ModelState, data: &Dataset, hyper: &Hyper, rng: &mut RandomSource) -> Result<()> {
    let mut stats = vec![SuffStats::new(hyper.face.dim()); state.identities()];
    for (n, z) in state.assignments.iter().enumerate() {
        stats[*z].add(data.embedding(n));
    }
    for (comp, s) in state.components.iter_mut().zip(&stats) {
        *comp = sample_component(&posterior_from_stats(&hyper.face, s), rng)?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProtocolMode {
    Online,
    Batch,
    Offline,
}

impl std::str::FromStr for ProtocolMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "online" => Ok(Self::Online),
            "batch" => Ok(Self::Batch),
            "offline" => Ok(Self::Offline),
            other => Err(Error::InvalidParameter(format!("unknown protocol {other}"))),
        }
    }
}

impl std::fmt::Display for ProtocolMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Online => "online",
            Self::Batch => "batch",
            Self::Offline => "offline",
        })
    }
}

/// How data is revealed to a chain and how many sweeps follow each reveal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FitProtocol {
    pub mode: ProtocolMode,
    pub sweeps_per_step: usize,
    pub batch_frames: usize,
}

impl FitProtocol {
    pub fn online() -> Self {
        Self {
            mode: ProtocolMode::Online,
            sweeps_per_step: 10,
            batch_frames: 1,
        }
    }

    pub fn batch() -> Self {
        Self {
            mode: ProtocolMode::Batch,
            sweeps_per_step: 200,
            batch_frames: 20,
        }
    }

    pub fn offline() -> Self {
        Self {
            mode: ProtocolMode::Offline,
            sweeps_per_step: 1000,
            batch_frames: usize::MAX,
        }
    }

    pub fn for_mode(mode: ProtocolMode) -> Self {
        match mode {
            ProtocolMode::Online => Self::online(),
            ProtocolMode::Batch => Self::batch(),
            ProtocolMode::Offline => Self::offline(),
        }
    }

    fn frames_per_step(&self) -> usize {
        match self.mode {
            ProtocolMode::Online => 1,
            ProtocolMode::Batch => self.batch_frames.max(1),
            ProtocolMode::Offline => usize::MAX,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChainSettings {
    pub sweeps: usize,
    pub burn_in: usize,
    pub thinning: usize,
    pub seed: u64,
}

impl ChainSettings {
    pub fn new(sweeps: usize, burn_in: usize, thinning: usize, seed: u64) -> Result<Self> {
        if sweeps <= burn_in {
            return Err(Error::InvalidParameter("sweeps must exceed burn-in".into()));
        }
        if thinning == 0 {
            return Err(Error::InvalidParameter("thinning must be positive".into()));
        }
        Ok(Self {
            sweeps,
            burn_in,
            thinning,
            seed,
        })
    }
}

/// A recorded state; `sweep` counts sweeps since the chain started.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub chain: usize,
    pub sweep: usize,
    pub state: ModelState,
}

/// Assignments at the end of one reveal step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub sweep: usize,
    pub frames: usize,
    pub assignments: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainSamples {
    pub snapshots: Vec<Snapshot>,
    pub burn_in: usize,
    pub thinning: usize,
    pub chain_seed: u64,
    pub trace: Vec<StageRecord>,
    pub final_state: ModelState,
}

/// Runs one chain. Online and batch modes reveal one frame or one block of
/// frames at a time and run `sweeps_per_step` sweeps after each reveal;
/// offline reveals everything at once. Sweeping continues on the full data
/// until `settings.sweeps` sweeps have run in total. Snapshots are kept at
/// every sweep index past burn-in that is a multiple of the thinning stride
/// away from it.
pub fn run_chain(
    data: &Dataset,
    hyper: &Hyper,
    protocol: &FitProtocol,
    settings: &ChainSettings,
) -> Result<ChainSamples> {
    run_chain_indexed(data, hyper, protocol, settings, 0, None)
}

/// Called after every sweep with the chain index and the sweep count.
pub type Progress<'a> = &'a (dyn Fn(usize, usize) + Sync);

fn run_chain_indexed(
    data: &Dataset,
    hyper: &Hyper,
    protocol: &FitProtocol,
    settings: &ChainSettings,
    chain: usize,
    progress: Option<Progress<'_>>,
) -> Result<ChainSamples> {
    if data.is_empty() {
        return Err(Error::Empty);
    }
    let mut rng = RandomSource::new(settings.seed);
    let mut state = ModelState::empty(data, hyper);
    let mut snapshots = Vec::new();
    let mut trace = Vec::new();
    let mut sweep = 0usize;

    let mut do_sweep = |state: &mut ModelState, rng: &mut RandomSource, sweep: &mut usize| -> Result<()> {
        gibbs_sweep(state, data, hyper, rng)?;
        *sweep += 1;
        if let Some(report) = progress {
            report(chain, *sweep);
        }
        if *sweep > settings.burn_in && (*sweep - settings.burn_in).is_multiple_of(settings.thinning) {
            snapshots.push(Snapshot {
                chain,
                sweep: *sweep,
                state: state.clone(),
            });
        }
        Ok(())
    };

    let step = protocol.frames_per_step();
    let mut revealed = 0usize;
    while revealed < data.frames() {
        revealed = revealed.saturating_add(step).min(data.frames());
        state.reveal(data, hyper, revealed, &mut rng)?;
        if state.assignments.is_empty() {
            continue;
        }
        let budget = if protocol.mode == ProtocolMode::Offline {
            settings.sweeps
        } else {
            protocol.sweeps_per_step
        };
        for k in 0..budget {
            do_sweep(&mut state, &mut rng, &mut sweep)?;
            if protocol.mode == ProtocolMode::Offline && (k + 1) % 10 == 0 {
                trace.push(StageRecord {
                    sweep,
                    frames: revealed,
                    assignments: state.assignments.clone(),
                });
            }
        }
        if protocol.mode != ProtocolMode::Offline {
            trace.push(StageRecord {
                sweep,
                frames: revealed,
                assignments: state.assignments.clone(),
            });
        }
    }
    while sweep < settings.sweeps {
        do_sweep(&mut state, &mut rng, &mut sweep)?;
    }
    Ok(ChainSamples {
        snapshots,
        burn_in: settings.burn_in,
        thinning: settings.thinning,
        chain_seed: settings.seed,
        trace,
        final_state: state,
    })
}

/// Samples from several chains, concatenated in chain order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PooledSamples {
    pub chains: Vec<ChainSamples>,
}

impl PooledSamples {
    pub fn snapshots(&self) -> impl Iterator<Item = &Snapshot> {
        self.chains.iter().flat_map(|c| c.snapshots.iter())
    }

    pub fn len(&self) -> usize {
        self.chains.iter().map(|c| c.snapshots.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn states(&self) -> Vec<&ModelState> {
        self.snapshots().map(|s| &s.state).collect()
    }
}

/// Runs `n_chains` chains seeded `seed, seed + 1, …`, in parallel when asked.
pub fn run_chains(
    n_chains: usize,
    data: &Dataset,
    hyper: &Hyper,
    protocol: &FitProtocol,
    settings: &ChainSettings,
    parallel: bool,
) -> Result<PooledSamples> {
    run_chains_with_progress(n_chains, data, hyper, protocol, settings, parallel, None)
}

pub fn run_chains_with_progress(
    n_chains: usize,
    data: &Dataset,
    hyper: &Hyper,
    protocol: &FitProtocol,
    settings: &ChainSettings,
    parallel: bool,
    progress: Option<Progress<'_>>,
) -> Result<PooledSamples> {
    if n_chains == 0 {
        return Err(Error::InvalidParameter("at least one chain required".into()));
    }
    let one = |k: usize| {
        let s = ChainSettings {
            seed: settings.seed.wrapping_add(k as u64),
            ..*settings
        };
        run_chain_indexed(data, hyper, protocol, &s, k, progress)
    };
    let chains: Result<Vec<ChainSamples>> = if parallel {
        (0..n_chains).into_par_iter().map(one).collect()
    } else {
        (0..n_chains).map(one).collect()
    };
    Ok(PooledSamples { chains: chains? })
}
