//! Names attached to identities: a Dirichlet process prior over strings
//! with a geometric-length base measure, a noisy-completely-at-random
//! observation model, and the Gibbs update for each identity's name.
//!
//! Identities whose name lies outside the set of known labels carry an
//! [`Label::Unnamed`] placeholder instead of a materialised random string.
//! Predictions only ever separate known names from `<unknown>`, so the
//! placeholder keeps exactly the information needed.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{log_sum_exp, sample_log_categorical, RandomSource};

/// Rendering of the unknown-name outcome.
pub const UNKNOWN_TOKEN: &str = "<unknown>";

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Label {
    Named(String),
    /// A name outside the known set; the id only distinguishes placeholders.
    Unnamed(u64),
}

impl Label {
    pub fn name(&self) -> Option<&str> {
        match self {
            Label::Named(s) => Some(s),
            Label::Unnamed(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelHyper {
    pub lambda: f64,
    pub epsilon: f64,
    pub phi: f64,
    pub alphabet_size: usize,
}

impl Default for LabelHyper {
    fn default() -> Self {
        Self {
            lambda: 1.0,
            epsilon: 0.05,
            phi: 6.0,
            alphabet_size: 26,
        }
    }
}

impl LabelHyper {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(Error::InvalidParameter("lambda must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.epsilon) {
            return Err(Error::InvalidParameter("epsilon must lie in [0, 1)".into()));
        }
        if !(self.phi > 1.0 && self.phi.is_finite()) {
            return Err(Error::InvalidParameter("phi must exceed 1".into()));
        }
        if self.alphabet_size == 0 {
            return Err(Error::InvalidParameter("alphabet size must be positive".into()));
        }
        Ok(())
    }

    /// Base measure of any string of `len` characters.
    pub fn base_measure_of_len(&self, len: usize) -> f64 {
        self.log_base_of_len(len).exp()
    }

    fn log_base_of_len(&self, len: usize) -> f64 {
        let k = self.alphabet_size as f64;
        -(self.phi - 1.0).ln() + len as f64 * ((self.phi - 1.0) / (self.phi * k)).ln()
    }
}

/// `log L(ℓ)`: geometric string length with mean `phi`, characters uniform
/// over an alphabet of `alphabet_size` symbols. A label using more distinct
/// characters than the alphabet holds cannot have been drawn from it.
pub fn base_log_measure(label: &str, hyper: &LabelHyper) -> Result<f64> {
    let len = label.chars().count();
    if len == 0 {
        return Err(Error::InvalidParameter("labels must be non-empty".into()));
    }
    let distinct: BTreeSet<char> = label.chars().collect();
    if distinct.len() > hyper.alphabet_size {
        let extra = *distinct
            .iter()
            .nth(hyper.alphabet_size)
            .expect("more distinct chars than alphabet");
        return Err(Error::OutsideAlphabet(extra));
    }
    Ok(hyper.log_base_of_len(len))
}

fn base_measure(label: &str, hyper: &LabelHyper) -> f64 {
    hyper.base_measure_of_len(label.chars().count())
}

/// Maps with structured keys, stored as key-value pairs so that text
/// formats without non-string keys can hold them.
mod pairs {
    use std::collections::BTreeMap;

    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<K: Serialize, V: Serialize, S: Serializer>(
        map: &BTreeMap<K, V>,
        s: S,
    ) -> std::result::Result<S::Ok, S::Error> {
        s.collect_seq(map.iter())
    }

    pub fn deserialize<'de, K, V, D>(d: D) -> std::result::Result<BTreeMap<K, V>, D::Error>
    where
        K: Deserialize<'de> + Ord,
        V: Deserialize<'de>,
        D: Deserializer<'de>,
    {
        Ok(Vec::<(K, V)>::deserialize(d)?.into_iter().collect())
    }
}

/// Identity names plus the set of known labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelState {
    pub identity_labels: Vec<Label>,
    pub known_labels: BTreeSet<String>,
    #[serde(with = "pairs")]
    counts: BTreeMap<Label, usize>,
    next_placeholder: u64,
}

impl LabelState {
    /// Empty state whose known set is `known` (normally all observed labels).
    pub fn new(known: impl IntoIterator<Item = String>) -> Self {
        Self {
            identity_labels: Vec::new(),
            known_labels: known.into_iter().collect(),
            counts: BTreeMap::new(),
            next_placeholder: 0,
        }
    }

    pub fn from_labels(known: impl IntoIterator<Item = String>, labels: Vec<Label>) -> Result<Self> {
        let mut state = Self::new(known);
        for label in labels {
            state.push(label)?;
        }
        Ok(state)
    }

    pub fn identities(&self) -> usize {
        self.identity_labels.len()
    }

    /// `J_ℓ`.
    pub fn component_count(&self, label: &Label) -> usize {
        self.counts.get(label).copied().unwrap_or(0)
    }

    pub fn label_component_counts(&self) -> &BTreeMap<Label, usize> {
        &self.counts
    }

    /// A placeholder not used by any identity.
    pub fn fresh_placeholder(&mut self) -> Label {
        let id = self.next_placeholder;
        self.next_placeholder += 1;
        Label::Unnamed(id)
    }

    fn admit(&mut self, label: &Label) -> Result<()> {
        match label {
            Label::Named(name) => {
                self.known_labels.insert(name.clone());
            }
            Label::Unnamed(id) => {
                if *id >= self.next_placeholder {
                    self.next_placeholder = id + 1;
                }
            }
        }
        Ok(())
    }

    pub fn push(&mut self, label: Label) -> Result<()> {
        self.admit(&label)?;
        *self.counts.entry(label.clone()).or_insert(0) += 1;
        self.identity_labels.push(label);
        Ok(())
    }

    pub fn set(&mut self, identity: usize, label: Label) -> Result<()> {
        self.admit(&label)?;
        let old = std::mem::replace(&mut self.identity_labels[identity], label.clone());
        self.decrement(&old);
        *self.counts.entry(label).or_insert(0) += 1;
        Ok(())
    }

    pub fn remove(&mut self, identity: usize) -> Label {
        let old = self.identity_labels.remove(identity);
        self.decrement(&old);
        old
    }

    fn decrement(&mut self, label: &Label) {
        if let Some(c) = self.counts.get_mut(label) {
            *c -= 1;
            if *c == 0 {
                self.counts.remove(label);
            }
        }
    }

    /// `L(𝒴)`.
    pub fn known_base_mass(&self, hyper: &LabelHyper) -> f64 {
        self.known_labels.iter().map(|l| base_measure(l, hyper)).sum()
    }

    /// `Ĥ_Y(ℓ | y*)` for the full state. Placeholder strings get no base
    /// mass of their own.
    pub fn predictive_mass(&self, label: &Label, hyper: &LabelHyper) -> f64 {
        let base = match label {
            Label::Named(s) if self.known_labels.contains(s) => hyper.lambda * base_measure(s, hyper),
            Label::Named(s) => hyper.lambda * base_measure(s, hyper),
            Label::Unnamed(_) => 0.0,
        };
        (base + self.component_count(label) as f64) / (hyper.lambda + self.identities() as f64)
    }

    pub fn check(&self) -> Result<()> {
        let mut recount: BTreeMap<Label, usize> = BTreeMap::new();
        for l in &self.identity_labels {
            *recount.entry(l.clone()).or_insert(0) += 1;
            if let Label::Named(n) = l {
                if !self.known_labels.contains(n) {
                    return Err(Error::Invariant(format!("label {n} missing from known set")));
                }
            }
        }
        if recount != self.counts {
            return Err(Error::Invariant("label component counts stale".into()));
        }
        Ok(())
    }
}

/// Distribution over known names plus one lumped unknown outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelDistribution {
    pub known: BTreeMap<String, f64>,
    pub unknown: f64,
}

impl LabelDistribution {
    pub fn total(&self) -> f64 {
        self.known.values().sum::<f64>() + self.unknown
    }

    pub fn prob(&self, name: &str) -> f64 {
        self.known.get(name).copied().unwrap_or(0.0)
    }

    /// Most probable name, `None` for unknown. Ties favour the known name
    /// that sorts first; unknown wins only strictly.
    pub fn argmax(&self) -> Option<&str> {
        let mut best: Option<(&str, f64)> = None;
        for (name, p) in &self.known {
            if best.is_none_or(|(_, bp)| *p > bp) {
                best = Some((name, *p));
            }
        }
        match best {
            Some((name, p)) if p >= self.unknown => Some(name),
            _ => None,
        }
    }

    /// Name or the `<unknown>` token.
    pub fn predicted_token(&self) -> &str {
        self.argmax().unwrap_or(UNKNOWN_TOKEN)
    }

    /// Weighted accumulation, used to pool over posterior samples.
    pub fn accumulate(&mut self, other: &LabelDistribution, weight: f64) {
        for (name, p) in &other.known {
            *self.known.entry(name.clone()).or_insert(0.0) += weight * p;
        }
        self.unknown += weight * other.unknown;
    }

    pub fn zero() -> Self {
        Self {
            known: BTreeMap::new(),
            unknown: 0.0,
        }
    }
}

/// Predictive name of a new identity, optionally leaving one identity out.
pub fn label_prior_predictive_excluding(
    state: &LabelState,
    hyper: &LabelHyper,
    exclude: Option<usize>,
) -> LabelDistribution {
    let excluded = exclude.map(|i| &state.identity_labels[i]);
    let count = |l: &Label| state.component_count(l) - usize::from(excluded == Some(l));
    let identities = state.identities() - usize::from(exclude.is_some());
    let denom = hyper.lambda + identities as f64;
    let known: BTreeMap<String, f64> = state
        .known_labels
        .iter()
        .map(|name| {
            let lab = Label::Named(name.clone());
            let mass = hyper.lambda * base_measure(name, hyper) + count(&lab) as f64;
            (name.clone(), mass / denom)
        })
        .collect();
    let unnamed: usize = state
        .label_component_counts()
        .keys()
        .filter(|l| matches!(l, Label::Unnamed(_)))
        .map(count)
        .sum();
    let unknown = (hyper.lambda * (1.0 - state.known_base_mass(hyper)) + unnamed as f64) / denom;
    LabelDistribution { known, unknown }
}

/// `Ĥ_Y` over known names and the lumped outside mass.
pub fn label_prior_predictive(state: &LabelState, hyper: &LabelHyper) -> LabelDistribution {
    label_prior_predictive_excluding(state, hyper, None)
}

/// `log F̂_Y(observed | cluster_label)`: agreement with probability `1 − ε`,
/// otherwise a draw from `Ĥ_Y` restricted away from the cluster's label.
pub fn label_log_likelihood(observed: &str, cluster_label: &Label, state: &LabelState, hyper: &LabelHyper) -> f64 {
    if cluster_label.name() == Some(observed) {
        return (1.0 - hyper.epsilon).ln();
    }
    if hyper.epsilon == 0.0 {
        return f64::NEG_INFINITY;
    }
    let obs = state.predictive_mass(&Label::Named(observed.to_string()), hyper);
    let own = state.predictive_mass(cluster_label, hyper);
    hyper.epsilon.ln() + obs.ln() - (1.0 - own).ln()
}

/// Log weights of the name of an identity that does not exist yet: its
/// prior `Ĥ_Y` times the likelihood of `observed`, when there is one.
pub fn new_identity_label_log_weights(
    observed: Option<&str>,
    state: &LabelState,
    hyper: &LabelHyper,
) -> Vec<(LabelChoice, f64)> {
    let denom = hyper.lambda + state.identities() as f64;
    let lik = |label: &Label| observed.map_or(0.0, |o| label_log_likelihood(o, label, state, hyper));
    let mut out: Vec<(LabelChoice, f64)> = state
        .known_labels
        .iter()
        .map(|name| {
            let label = Label::Named(name.clone());
            let prior = state.predictive_mass(&label, hyper);
            (LabelChoice::Known(name.clone()), prior.ln() + lik(&label))
        })
        .collect();
    for (label, count) in state.label_component_counts() {
        if matches!(label, Label::Unnamed(_)) {
            let prior = *count as f64 / denom;
            out.push((LabelChoice::Join(label.clone()), prior.ln() + lik(label)));
        }
    }
    let fresh = hyper.lambda * (1.0 - state.known_base_mass(hyper)) / denom;
    let fresh_lik = observed.map_or(0.0, |o| {
        let obs = state.predictive_mass(&Label::Named(o.to_string()), hyper);
        hyper.epsilon.ln() + obs.ln()
    });
    out.push((LabelChoice::Fresh, fresh.ln() + fresh_lik));
    out
}

/// Log probability of an observed label under an identity that does not
/// exist yet, its name drawn from `Ĥ_Y`.
pub fn new_identity_label_log_likelihood(observed: &str, state: &LabelState, hyper: &LabelHyper) -> f64 {
    let logs: Vec<f64> = new_identity_label_log_weights(Some(observed), state, hyper)
        .into_iter()
        .map(|(_, w)| w)
        .collect();
    log_sum_exp(&logs).unwrap_or(f64::NEG_INFINITY)
}

/// Name for a newly opened identity given its first observation's label.
pub fn sample_new_identity_label(
    observed: Option<&str>,
    state: &mut LabelState,
    hyper: &LabelHyper,
    rng: &mut RandomSource,
) -> Result<Label> {
    let weights = new_identity_label_log_weights(observed, state, hyper);
    let logs: Vec<f64> = weights.iter().map(|(_, w)| *w).collect();
    let pick = sample_log_categorical(&logs, rng)?;
    Ok(match &weights[pick].0 {
        LabelChoice::Known(name) => Label::Named(name.clone()),
        LabelChoice::Join(label) => label.clone(),
        LabelChoice::Fresh => state.fresh_placeholder(),
    })
}

/// Candidate outcomes of the identity-name update.
#[derive(Debug, Clone, PartialEq)]
pub enum LabelChoice {
    Known(String),
    /// Share an existing placeholder with another identity.
    Join(Label),
    Fresh,
}

/// Approximate log weights of the identity-name conditional for identity
/// `identity` whose labelled members carry `member_labels` (name → count).
///
/// Counts exclude the identity itself. The approximation drops `λ·L(ℓ)`
/// from `1 − Ĥ_Y(ℓ)` when renormalising the error distribution, which is
/// what makes each weight closed-form.
pub fn label_conditional_log_weights(
    identity: usize,
    member_labels: &BTreeMap<String, usize>,
    state: &LabelState,
    hyper: &LabelHyper,
) -> Vec<(LabelChoice, f64)> {
    let own = &state.identity_labels[identity];
    let count = |l: &Label| (state.component_count(l) - usize::from(own == l)) as f64;
    let lambda = hyper.lambda;
    let total_identities = state.identities() as f64;
    let ln_eps = hyper.epsilon.ln();
    let ln_agree = (1.0 - hyper.epsilon).ln();

    // ln ε(λL(k) + J_k^{-i}) for every observed name among the members
    let disagree: Vec<(&str, usize, f64)> = member_labels
        .iter()
        .map(|(name, n)| {
            let mass = lambda * base_measure(name, hyper) + count(&Label::Named(name.clone()));
            (name.as_str(), *n, ln_eps + mass.ln())
        })
        .collect();
    let evidence = |agree_with: Option<&str>, log_denominator: f64| -> f64 {
        disagree
            .iter()
            .map(|(name, n, ln_err)| {
                let n = *n as f64;
                if Some(*name) == agree_with {
                    n * ln_agree
                } else if n == 0.0 {
                    0.0
                } else {
                    n * (ln_err - log_denominator)
                }
            })
            .sum()
    };

    let mut out = Vec::new();
    for name in &state.known_labels {
        let j = count(&Label::Named(name.clone()));
        let prior = lambda * base_measure(name, hyper) + j;
        let denom = lambda + total_identities - j - 1.0;
        out.push((
            LabelChoice::Known(name.clone()),
            prior.ln() + evidence(Some(name), denom.ln()),
        ));
    }
    for label in state.label_component_counts().keys() {
        if !matches!(label, Label::Unnamed(_)) {
            continue;
        }
        let j = count(label);
        if j == 0.0 {
            continue;
        }
        let denom = lambda + total_identities - j - 1.0;
        out.push((LabelChoice::Join(label.clone()), j.ln() + evidence(None, denom.ln())));
    }
    let fresh = lambda * (1.0 - state.known_base_mass(hyper));
    out.push((
        LabelChoice::Fresh,
        fresh.ln() + evidence(None, (lambda + total_identities).ln()),
    ));
    out
}

/// Draws a new name for `identity` from its approximate conditional.
pub fn sample_identity_label(
    identity: usize,
    member_labels: &BTreeMap<String, usize>,
    state: &mut LabelState,
    hyper: &LabelHyper,
    rng: &mut RandomSource,
) -> Result<Label> {
    let weights = label_conditional_log_weights(identity, member_labels, state, hyper);
    let logs: Vec<f64> = weights.iter().map(|(_, w)| *w).collect();
    let pick = sample_log_categorical(&logs, rng)?;
    Ok(match &weights[pick].0 {
        LabelChoice::Known(name) => Label::Named(name.clone()),
        LabelChoice::Join(label) => label.clone(),
        LabelChoice::Fresh => match &state.identity_labels[identity] {
            // keeping its own unique placeholder is equivalent to a fresh one
            own @ Label::Unnamed(_) if state.component_count(own) == 1 => own.clone(),
            _ => state.fresh_placeholder(),
        },
    })
}

/// Name prediction for one observation given its identity posterior
/// (`identity_posterior[I]` is the new-identity probability).
pub fn predict_label(identity_posterior: &[f64], state: &LabelState, hyper: &LabelHyper) -> Result<LabelDistribution> {
    let identities = state.identities();
    if identity_posterior.len() != identities + 1 {
        return Err(Error::LengthMismatch(identity_posterior.len(), identities + 1));
    }
    let p_new = identity_posterior[identities];
    let prior = label_prior_predictive(state, hyper);
    let mut known: BTreeMap<String, f64> = prior.known.iter().map(|(name, h)| (name.clone(), h * p_new)).collect();
    let mut unknown = prior.unknown * p_new;
    for (label, p) in state.identity_labels.iter().zip(identity_posterior) {
        match label {
            Label::Named(name) => *known.entry(name.clone()).or_insert(0.0) += p,
            Label::Unnamed(_) => unknown += p,
        }
    }
    Ok(LabelDistribution { known, unknown })
}
