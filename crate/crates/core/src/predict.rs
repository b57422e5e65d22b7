//! Posterior predictive queries on frozen sampler states and pooled chains.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::face_model::gaussian_log_density;
use crate::label_model::{predict_label, LabelDistribution};
use crate::numerics::{log_sum_exp, ProbabilityVector};
use crate::sampler::{Hyper, ModelState};

/// Context of a query observation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ContextQuery {
    Known(usize),
    /// Average the identity prior over the context predictive.
    Marginal,
}

/// `probs[i]` for each instantiated identity, `probs[I]` for a new one.
#[derive(Debug, Clone, PartialEq)]
pub struct IdentityPosterior {
    pub probs: ProbabilityVector,
}

impl IdentityPosterior {
    pub fn identities(&self) -> usize {
        self.probs.len() - 1
    }

    pub fn unknown(&self) -> f64 {
        self.probs.as_slice()[self.identities()]
    }

    /// Most probable identity, `None` for unknown; ties favour smaller
    /// indices and unknown only wins strictly.
    pub fn map(&self) -> Option<usize> {
        let i = self.probs.argmax();
        (i < self.identities()).then_some(i)
    }
}

/// Context predictive of a new frame: `P(c) ∝ γ₀/C + M_c`.
pub fn context_prior(state: &ModelState, hyper: &Hyper) -> Result<ProbabilityVector> {
    let contexts = hyper.contexts();
    let mut weights = vec![hyper.identity.gamma0 / contexts as f64; contexts];
    for c in &state.frame_contexts {
        weights[*c] += 1.0;
    }
    ProbabilityVector::from_unnormalized(weights)
}

/// Normalised identity prior in context `c`, last entry new.
fn identity_prior(c: usize, state: &ModelState, hyper: &Hyper) -> Vec<f64> {
    let alpha = hyper.identity.alpha_c[c];
    let denom = alpha + state.counts.context_totals[c] as f64;
    let row = &state.counts.per_context[c];
    let mut out: Vec<f64> = row
        .iter()
        .zip(&state.global_weights.explicit)
        .map(|(n, w)| (*n as f64 + alpha * w) / denom)
        .collect();
    out.push(alpha * state.global_weights.remainder / denom);
    out
}

fn mixed_prior(context: ContextQuery, state: &ModelState, hyper: &Hyper) -> Result<Vec<f64>> {
    match context {
        ContextQuery::Known(c) => {
            hyper.identity.check_context(c)?;
            Ok(identity_prior(c, state, hyper))
        }
        ContextQuery::Marginal => {
            let weights = context_prior(state, hyper)?;
            let mut out = vec![0.0; state.identities() + 1];
            for (c, pc) in weights.as_slice().iter().enumerate() {
                for (o, p) in out.iter_mut().zip(identity_prior(c, state, hyper)) {
                    *o += pc * p;
                }
            }
            Ok(out)
        }
    }
}

/// Combines the identity prior with per-identity log likelihoods (the last
/// one for a new identity).
pub fn posterior_from_log_likelihoods(
    context: ContextQuery,
    log_likelihoods: &[f64],
    state: &ModelState,
    hyper: &Hyper,
) -> Result<IdentityPosterior> {
    if log_likelihoods.len() != state.identities() + 1 {
        return Err(Error::LengthMismatch(log_likelihoods.len(), state.identities() + 1));
    }
    let prior = mixed_prior(context, state, hyper)?;
    let logs: Vec<f64> = prior.iter().zip(log_likelihoods).map(|(p, l)| p.ln() + l).collect();
    Ok(IdentityPosterior {
        probs: ProbabilityVector::from_log_weights(&logs)?,
    })
}

fn face_log_likelihoods(x: &[f64], state: &ModelState, hyper: &Hyper) -> Result<Vec<f64>> {
    if x.len() != hyper.face.dim() {
        return Err(Error::DimensionMismatch {
            expected: hyper.face.dim(),
            got: x.len(),
        });
    }
    let mut out: Vec<f64> = state.components.iter().map(|c| gaussian_log_density(x, c)).collect();
    out.push(hyper.predictive().log_density(x));
    Ok(out)
}

/// `p(z = i | x)` over the instantiated identities and a new one.
pub fn identity_posterior(
    x: &[f64],
    context: ContextQuery,
    state: &ModelState,
    hyper: &Hyper,
) -> Result<IdentityPosterior> {
    let logs = face_log_likelihoods(x, state, hyper)?;
    posterior_from_log_likelihoods(context, &logs, state, hyper)
}

/// Probability that `x` belongs to nobody met so far.
pub fn unknown_score(x: &[f64], context: ContextQuery, state: &ModelState, hyper: &Hyper) -> Result<f64> {
    Ok(identity_posterior(x, context, state, hyper)?.unknown())
}

/// Mean unknown score across snapshots.
pub fn pooled_unknown_score(x: &[f64], context: ContextQuery, states: &[&ModelState], hyper: &Hyper) -> Result<f64> {
    if states.is_empty() {
        return Err(Error::Empty);
    }
    let mut total = 0.0;
    for s in states {
        total += unknown_score(x, context, s, hyper)?;
    }
    Ok(total / states.len() as f64)
}

pub fn map_identity(x: &[f64], context: ContextQuery, state: &ModelState, hyper: &Hyper) -> Result<Option<usize>> {
    Ok(identity_posterior(x, context, state, hyper)?.map())
}

/// How pooled unknown decisions combine snapshots.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MapPooling {
    /// Unknown when the mean unknown probability is at least the mean
    /// probability of the most probable known identity.
    #[default]
    PooledProbability,
    /// Unknown when most snapshots' MAP estimate is unknown.
    Voting,
}

impl std::str::FromStr for MapPooling {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pooled-probability" => Ok(Self::PooledProbability),
            "voting" => Ok(Self::Voting),
            other => Err(Error::InvalidParameter(format!("unknown pooling rule {other}"))),
        }
    }
}

/// Pooled MAP decision on whether `x` is an unknown person.
pub fn pooled_map_is_unknown(
    x: &[f64],
    context: ContextQuery,
    states: &[&ModelState],
    hyper: &Hyper,
    pooling: MapPooling,
) -> Result<bool> {
    if states.is_empty() {
        return Err(Error::Empty);
    }
    let mut unknown = 0.0;
    let mut known = 0.0;
    let mut votes = 0usize;
    for s in states {
        let post = identity_posterior(x, context, s, hyper)?;
        let p = post.probs.as_slice();
        unknown += post.unknown();
        known += p[..post.identities()].iter().copied().fold(0.0, f64::max);
        votes += usize::from(post.map().is_none());
    }
    Ok(match pooling {
        MapPooling::PooledProbability => unknown > known,
        MapPooling::Voting => 2 * votes > states.len(),
    })
}

/// Predictive name distribution of `x`.
pub fn predict_name(x: &[f64], context: ContextQuery, state: &ModelState, hyper: &Hyper) -> Result<LabelDistribution> {
    let post = identity_posterior(x, context, state, hyper)?;
    predict_label(post.probs.as_slice(), &state.labels, &hyper.label)
}

/// Name distribution averaged across snapshots.
pub fn pooled_predict_name(
    x: &[f64],
    context: ContextQuery,
    states: &[&ModelState],
    hyper: &Hyper,
) -> Result<LabelDistribution> {
    if states.is_empty() {
        return Err(Error::Empty);
    }
    let w = 1.0 / states.len() as f64;
    let mut out = LabelDistribution::zero();
    for s in states {
        out.accumulate(&predict_name(x, context, s, hyper)?, w);
    }
    Ok(out)
}

/// Context of a new frame from its members' embeddings. Members enter the
/// context's restaurant one at a time, each adding its identity
/// responsibilities to the counts the following members see.
pub fn predict_context(frame: &[Vec<f64>], state: &ModelState, hyper: &Hyper) -> Result<ProbabilityVector> {
    if frame.is_empty() {
        return Err(Error::Empty);
    }
    let contexts = hyper.contexts();
    if contexts == 1 {
        return ProbabilityVector::new(vec![1.0]);
    }
    let prior = context_prior(state, hyper)?;
    let liks: Vec<Vec<f64>> = frame
        .iter()
        .map(|x| face_log_likelihoods(x, state, hyper))
        .collect::<Result<_>>()?;
    let identities = state.identities();
    let mut logs = Vec::with_capacity(contexts);
    for (c, pc) in prior.as_slice().iter().enumerate() {
        let alpha = hyper.identity.alpha_c[c];
        let mut soft: Vec<f64> = state.counts.per_context[c].iter().map(|n| *n as f64).collect();
        let mut total = state.counts.context_totals[c] as f64;
        let mut acc = pc.ln();
        for lik in &liks {
            let denom = alpha + total;
            let mut terms: Vec<f64> = (0..identities)
                .map(|i| ((soft[i] + alpha * state.global_weights.explicit[i]) / denom).ln() + lik[i])
                .collect();
            terms.push((alpha * state.global_weights.remainder / denom).ln() + lik[identities]);
            let lse = log_sum_exp(&terms)?;
            acc += lse;
            for (s, t) in soft.iter_mut().zip(&terms) {
                *s += (t - lse).exp();
            }
            total += 1.0;
        }
        logs.push(acc);
    }
    ProbabilityVector::from_log_weights(&logs)
}

/// Context distribution averaged across snapshots.
pub fn pooled_predict_context(frame: &[Vec<f64>], states: &[&ModelState], hyper: &Hyper) -> Result<ProbabilityVector> {
    if states.is_empty() {
        return Err(Error::Empty);
    }
    let mut acc = vec![0.0; hyper.contexts()];
    for s in states {
        for (a, p) in acc.iter_mut().zip(predict_context(frame, s, hyper)?.as_slice()) {
            *a += p / states.len() as f64;
        }
    }
    ProbabilityVector::from_unnormalized(acc)
}
