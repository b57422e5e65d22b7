//! Hierarchical Dirichlet process over identities: truncated global
//! stick-breaking weights, per-context Chinese restaurant franchise
//! conditionals and the auxiliary table counts used to resample them.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{sample_beta, sample_dirichlet, ProbabilityVector, RandomSource};

/// Global identity weights for the `I` instantiated identities plus the
/// mass `remainder` of every identity not yet met.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlobalWeights {
    pub explicit: Vec<f64>,
    pub remainder: f64,
}

impl GlobalWeights {
    /// No identities yet: all mass is in the remainder.
    pub fn empty() -> Self {
        Self {
            explicit: Vec::new(),
            remainder: 1.0,
        }
    }

    pub fn len(&self) -> usize {
        self.explicit.len()
    }

    pub fn is_empty(&self) -> bool {
        self.explicit.is_empty()
    }

    pub fn total(&self) -> f64 {
        self.explicit.iter().sum::<f64>() + self.remainder
    }

    /// Removes identity `i`, returning its weight to the remainder.
    pub fn fold_into_remainder(&mut self, i: usize) {
        let w = self.explicit.remove(i);
        self.remainder += w;
    }

    pub fn check(&self) -> Result<()> {
        let negative = |w: f64| w.is_nan() || w < 0.0;
        if self.explicit.iter().any(|w| negative(*w)) || negative(self.remainder) {
            return Err(Error::Invariant("negative global weight".into()));
        }
        if (self.total() - 1.0).abs() > 1e-9 {
            return Err(Error::Invariant(format!("global weights sum to {}", self.total())));
        }
        Ok(())
    }
}

/// `N_ci`: observations in context `c` assigned to identity `i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentityCounts {
    pub per_context: Vec<Vec<usize>>,
    pub context_totals: Vec<usize>,
}

impl IdentityCounts {
    pub fn new(contexts: usize, identities: usize) -> Self {
        Self {
            per_context: vec![vec![0; identities]; contexts],
            context_totals: vec![0; contexts],
        }
    }

    pub fn contexts(&self) -> usize {
        self.per_context.len()
    }

    pub fn identities(&self) -> usize {
        self.per_context.first().map_or(0, Vec::len)
    }

    pub fn get(&self, context: usize, identity: usize) -> usize {
        self.per_context[context][identity]
    }

    pub fn increment(&mut self, context: usize, identity: usize) {
        self.per_context[context][identity] += 1;
        self.context_totals[context] += 1;
    }

    pub fn decrement(&mut self, context: usize, identity: usize) {
        self.per_context[context][identity] -= 1;
        self.context_totals[context] -= 1;
    }

    pub fn push_identity(&mut self) {
        self.per_context.iter_mut().for_each(|row| row.push(0));
    }

    pub fn remove_identity(&mut self, i: usize) {
        for (row, total) in self.per_context.iter_mut().zip(&mut self.context_totals) {
            *total -= row.remove(i);
        }
    }

    /// Observations of identity `i` over all contexts.
    pub fn identity_total(&self, i: usize) -> usize {
        self.per_context.iter().map(|row| row[i]).sum()
    }

    /// Builds counts from assignments and the context of each observation.
    pub fn from_assignments(
        contexts: usize,
        identities: usize,
        assignments: &[usize],
        observation_contexts: impl Iterator<Item = usize>,
    ) -> Self {
        let mut counts = Self::new(contexts, identities);
        for (z, c) in assignments.iter().zip(observation_contexts) {
            counts.increment(c, *z);
        }
        counts
    }
}

/// `T_ci`: number of context-level tables serving identity `i` in context `c`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableCounts {
    pub counts: Vec<Vec<usize>>,
}

impl TableCounts {
    /// `T·ᵢ = Σ_c T_ci`.
    pub fn column_totals(&self) -> Vec<usize> {
        let identities = self.counts.first().map_or(0, Vec::len);
        (0..identities)
            .map(|i| self.counts.iter().map(|row| row[i]).sum())
            .collect()
    }

    /// `1[N ≥ 1] ≤ T ≤ N` elementwise.
    pub fn check_against(&self, counts: &IdentityCounts) -> Result<()> {
        for (trow, nrow) in self.counts.iter().zip(&counts.per_context) {
            for (t, n) in trow.iter().zip(nrow) {
                if t > n || (*n > 0 && *t == 0) {
                    return Err(Error::Invariant(format!("table count {t} for {n} customers")));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentityHyper {
    pub alpha0: f64,
    pub alpha_c: Vec<f64>,
    pub gamma0: f64,
}

impl IdentityHyper {
    /// One shared concentration `alpha` for all `contexts`.
    pub fn shared(alpha0: f64, alpha: f64, gamma0: f64, contexts: usize) -> Result<Self> {
        let hyper = Self {
            alpha0,
            alpha_c: vec![alpha; contexts],
            gamma0,
        };
        hyper.validate()?;
        Ok(hyper)
    }

    pub fn contexts(&self) -> usize {
        self.alpha_c.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.alpha_c.is_empty() {
            return Err(Error::InvalidParameter("at least one context required".into()));
        }
        let ok = |v: f64| v > 0.0 && v.is_finite();
        if !ok(self.alpha0) || !ok(self.gamma0) || !self.alpha_c.iter().all(|a| ok(*a)) {
            return Err(Error::InvalidParameter("concentrations must be positive".into()));
        }
        Ok(())
    }

    pub fn check_context(&self, context: usize) -> Result<()> {
        if context >= self.contexts() {
            return Err(Error::ContextOutOfRange {
                context,
                contexts: self.contexts(),
            });
        }
        Ok(())
    }
}

/// Antoniak-style table counts. The first customer of a non-empty
/// restaurant always opens a table; customer `n > 1` opens one with
/// probability `α_c·π₀ᵢ / (α_c·π₀ᵢ + n − 1)`.
pub fn sample_table_counts(
    counts: &IdentityCounts,
    pi0: &GlobalWeights,
    hyper: &IdentityHyper,
    rng: &mut RandomSource,
) -> Result<TableCounts> {
    if pi0.len() < counts.identities() {
        return Err(Error::Invariant(format!(
            "{} global weights for {} identities",
            pi0.len(),
            counts.identities()
        )));
    }
    let tables = counts
        .per_context
        .iter()
        .zip(&hyper.alpha_c)
        .map(|(row, alpha)| {
            row.iter()
                .zip(&pi0.explicit)
                .map(|(&n, &w)| {
                    if n == 0 {
                        return 0;
                    }
                    let strength = alpha * w;
                    1 + (2..=n)
                        .filter(|&k| rng.uniform() <= strength / (strength + (k - 1) as f64))
                        .count()
                })
                .collect()
        })
        .collect();
    Ok(TableCounts { counts: tables })
}

/// `(π₀₁..π₀_I, π₀′) ~ Dir(T·₁, …, T·_I, α₀)`.
pub fn sample_global_weights(tables: &TableCounts, alpha0: f64, rng: &mut RandomSource) -> Result<GlobalWeights> {
    let totals = tables.column_totals();
    if totals.contains(&0) {
        return Err(Error::Invariant(
            "identity without tables; prune empty identities first".into(),
        ));
    }
    let mut conc: Vec<f64> = totals.iter().map(|t| *t as f64).collect();
    conc.push(alpha0);
    let mut w = sample_dirichlet(&conc, rng)?.into_vec();
    let remainder = w.pop().expect("non-empty");
    Ok(GlobalWeights { explicit: w, remainder })
}

/// Unnormalised log prior of each candidate identity for an observation in
/// `context`; the last entry is a brand-new identity. `counts` must already
/// exclude the observation being resampled.
pub fn crf_assignment_log_priors(
    context: usize,
    counts: &IdentityCounts,
    pi0: &GlobalWeights,
    hyper: &IdentityHyper,
) -> Result<Vec<f64>> {
    hyper.check_context(context)?;
    let alpha = hyper.alpha_c[context];
    let row = &counts.per_context[context];
    let mut out: Vec<f64> = row
        .iter()
        .zip(&pi0.explicit)
        .map(|(&n, &w)| (n as f64 + alpha * w).ln())
        .collect();
    out.push((alpha * pi0.remainder).ln());
    Ok(out)
}

/// Probability that the next observation in `context` is known identity `identity`.
pub fn predictive_known(
    context: usize,
    identity: usize,
    counts: &IdentityCounts,
    pi0: &GlobalWeights,
    hyper: &IdentityHyper,
) -> Result<f64> {
    hyper.check_context(context)?;
    if identity >= pi0.len() {
        return Err(Error::InvalidParameter(format!("identity {identity} out of range")));
    }
    let alpha = hyper.alpha_c[context];
    let n = counts.per_context[context][identity] as f64;
    Ok((alpha * pi0.explicit[identity] + n) / (alpha + counts.context_totals[context] as f64))
}

/// Probability that the next observation in `context` is a never-seen identity.
pub fn predictive_unknown(
    context: usize,
    counts: &IdentityCounts,
    pi0: &GlobalWeights,
    hyper: &IdentityHyper,
) -> Result<f64> {
    hyper.check_context(context)?;
    let alpha = hyper.alpha_c[context];
    Ok(alpha * pi0.remainder / (alpha + counts.context_totals[context] as f64))
}

/// Breaks a new stick off the remainder: `β ~ Beta(1, α₀)`, appends `β·π₀′`.
pub fn split_remainder(pi0: &mut GlobalWeights, alpha0: f64, rng: &mut RandomSource) -> Result<f64> {
    if pi0.remainder.is_nan() || pi0.remainder <= 0.0 {
        return Err(Error::ExhaustedStick);
    }
    let beta = sample_beta(1.0, alpha0, rng)?;
    let w = beta * pi0.remainder;
    pi0.explicit.push(w);
    pi0.remainder -= w;
    Ok(w)
}

/// Context predictive for one frame given every other frame's context:
/// `P(c) ∝ γ₀/C + M_c`.
pub fn context_posterior_counts(
    frame: usize,
    context_assignments: &[usize],
    hyper: &IdentityHyper,
) -> Result<ProbabilityVector> {
    let c = hyper.contexts();
    let mut weights = vec![hyper.gamma0 / c as f64; c];
    for (m, ctx) in context_assignments.iter().enumerate() {
        if m == frame {
            continue;
        }
        hyper.check_context(*ctx)?;
        weights[*ctx] += 1.0;
    }
    ProbabilityVector::from_unnormalized(weights)
}

/// `ln P(c)` from precomputed frame counts `M_c` that exclude the frame in question.
pub(crate) fn context_log_prior(frame_counts_excluding: &[usize], hyper: &IdentityHyper) -> Vec<f64> {
    let c = hyper.contexts() as f64;
    frame_counts_excluding
        .iter()
        .map(|m| (hyper.gamma0 / c + *m as f64).ln())
        .collect()
}
