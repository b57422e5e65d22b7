//! Isotropic Gaussian observation model with a conjugate
//! Gaussian–inverse-gamma prior.
//!
//! A component has one variance shared by all `d` embedding dimensions, so
//! `m` assigned vectors act as `m·d` scalar observations of that variance.

use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::numerics::{sample_gamma, squared_distance, RandomSource};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NigPrior {
    pub mean0: Vec<f64>,
    pub kappa0: f64,
    pub shape0: f64,
    pub rate0: f64,
}

impl NigPrior {
    pub fn new(mean0: Vec<f64>, kappa0: f64, shape0: f64, rate0: f64) -> Result<Self> {
        if mean0.is_empty() {
            return Err(Error::Empty);
        }
        for (name, v) in [("kappa0", kappa0), ("shape0", shape0), ("rate0", rate0)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidParameter(format!("{name} must be positive")));
            }
        }
        Ok(Self {
            mean0,
            kappa0,
            shape0,
            rate0,
        })
    }

    pub fn dim(&self) -> usize {
        self.mean0.len()
    }

    /// Prior mean of the component variance, `rate0 / (shape0 - 1)`.
    pub fn mean_variance(&self) -> Option<f64> {
        (self.shape0 > 1.0).then(|| self.rate0 / (self.shape0 - 1.0))
    }

    fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: x.len(),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaceComponent {
    pub mean: Vec<f64>,
    pub variance: f64,
}

/// Running sufficient statistics of the vectors assigned to one component.
#[derive(Debug, Clone, PartialEq)]
pub struct SuffStats {
    pub count: usize,
    pub sum: Vec<f64>,
    pub sum_sq: f64,
}

impl SuffStats {
    pub fn new(dim: usize) -> Self {
        Self {
            count: 0,
            sum: vec![0.0; dim],
            sum_sq: 0.0,
        }
    }

    pub fn add(&mut self, x: &[f64]) {
        self.count += 1;
        for (s, v) in self.sum.iter_mut().zip(x) {
            *s += v;
        }
        self.sum_sq += x.iter().map(|v| v * v).sum::<f64>();
    }
}

/// Empirical prior centred on the data, with `rate0` set so the prior mean
/// of the variance equals the pooled per-dimension sample variance.
pub fn empirical_prior(embeddings: &[Vec<f64>], kappa0: f64, shape0: f64) -> Result<NigPrior> {
    if embeddings.len() < 2 {
        return Err(Error::NotEnoughSamples {
            needed: 2,
            got: embeddings.len(),
        });
    }
    if shape0 <= 1.0 {
        return Err(Error::PriorMeanVarianceUndefined);
    }
    let d = embeddings[0].len();
    if d == 0 {
        return Err(Error::Empty);
    }
    let n = embeddings.len() as f64;
    let mut mean = vec![0.0; d];
    for x in embeddings {
        if x.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: x.len(),
            });
        }
        for (m, v) in mean.iter_mut().zip(x) {
            *m += v / n;
        }
    }
    let scatter: f64 = embeddings.iter().map(|x| squared_distance(x, &mean)).sum();
    let pooled_var = scatter / ((n - 1.0) * d as f64);
    if pooled_var.is_nan() || pooled_var <= 0.0 {
        return Err(Error::DegenerateVariance);
    }
    NigPrior::new(mean, kappa0, shape0, (shape0 - 1.0) * pooled_var)
}

fn conjugate_update(prior: &NigPrior, m: usize, xbar: &[f64], scatter: f64) -> NigPrior {
    if m == 0 {
        return prior.clone();
    }
    let mf = m as f64;
    let d = prior.dim() as f64;
    let kappa_n = prior.kappa0 + mf;
    let mean_n = prior
        .mean0
        .iter()
        .zip(xbar)
        .map(|(m0, xb)| (prior.kappa0 * m0 + mf * xb) / kappa_n)
        .collect();
    let shift = squared_distance(xbar, &prior.mean0);
    NigPrior {
        mean0: mean_n,
        kappa0: kappa_n,
        shape0: prior.shape0 + mf * d / 2.0,
        rate0: prior.rate0 + 0.5 * (scatter + prior.kappa0 * mf / kappa_n * shift),
    }
}

/// Conjugate posterior after observing `assigned`.
pub fn posterior_params(prior: &NigPrior, assigned: &[Vec<f64>]) -> Result<NigPrior> {
    let d = prior.dim();
    if assigned.is_empty() {
        return Ok(prior.clone());
    }
    let m = assigned.len() as f64;
    let mut xbar = vec![0.0; d];
    for x in assigned {
        prior.check_dim(x)?;
        for (b, v) in xbar.iter_mut().zip(x) {
            *b += v;
        }
    }
    xbar.iter_mut().for_each(|b| *b /= m);
    let scatter = assigned.iter().map(|x| squared_distance(x, &xbar)).sum();
    Ok(conjugate_update(prior, assigned.len(), &xbar, scatter))
}

/// Conjugate posterior from accumulated sufficient statistics.
pub fn posterior_from_stats(prior: &NigPrior, stats: &SuffStats) -> NigPrior {
    if stats.count == 0 {
        return prior.clone();
    }
    let m = stats.count as f64;
    let xbar: Vec<f64> = stats.sum.iter().map(|s| s / m).collect();
    let norm_sq: f64 = xbar.iter().map(|v| v * v).sum();
    let scatter = (stats.sum_sq - m * norm_sq).max(0.0);
    conjugate_update(prior, stats.count, &xbar, scatter)
}

/// Draws `variance ~ InvGamma(shape, rate)`, then `mean ~ N(mean_n, variance / kappa_n)`.
pub fn sample_component(posterior: &NigPrior, rng: &mut RandomSource) -> Result<FaceComponent> {
    let precision = sample_gamma(posterior.shape0, posterior.rate0, rng)?;
    let variance = 1.0 / precision;
    let sd = (variance / posterior.kappa0).sqrt();
    let mean = posterior.mean0.iter().map(|m| m + sd * rng.standard_normal()).collect();
    Ok(FaceComponent { mean, variance })
}

pub fn component_log_likelihood(x: &[f64], comp: &FaceComponent) -> Result<f64> {
    if x.len() != comp.mean.len() {
        return Err(Error::DimensionMismatch {
            expected: comp.mean.len(),
            got: x.len(),
        });
    }
    Ok(gaussian_log_density(x, comp))
}

/// Unchecked variant for the sampler's inner loop.
#[inline]
pub(crate) fn gaussian_log_density(x: &[f64], comp: &FaceComponent) -> f64 {
    let d = x.len() as f64;
    -0.5 * d * (LN_2PI + comp.variance.ln()) - squared_distance(x, &comp.mean) / (2.0 * comp.variance)
}

/// Log density of `x` under a brand-new component with parameters
/// integrated out: a `d`-variate Student-t with `2·shape0` degrees of
/// freedom and scale² `rate0·(kappa0+1)/(shape0·kappa0)` on every axis.
/// Dimensions are coupled through the shared variance, so this is not the
/// product of univariate t densities.
pub fn prior_predictive_log(x: &[f64], prior: &NigPrior) -> Result<f64> {
    prior.check_dim(x)?;
    Ok(PredictiveCache::new(prior).log_density(x))
}

/// Precomputed normalising constants of the prior predictive.
#[derive(Debug, Clone)]
pub struct PredictiveCache {
    mean0: Vec<f64>,
    dof: f64,
    scale_sq: f64,
    log_norm: f64,
}

impl PredictiveCache {
    pub fn new(prior: &NigPrior) -> Self {
        let d = prior.dim() as f64;
        let dof = 2.0 * prior.shape0;
        let scale_sq = prior.rate0 * (prior.kappa0 + 1.0) / (prior.shape0 * prior.kappa0);
        let log_norm =
            ln_gamma((dof + d) / 2.0) - ln_gamma(dof / 2.0) - 0.5 * d * (dof * std::f64::consts::PI * scale_sq).ln();
        Self {
            mean0: prior.mean0.clone(),
            dof,
            scale_sq,
            log_norm,
        }
    }

    #[inline]
    pub fn log_density(&self, x: &[f64]) -> f64 {
        let d = x.len() as f64;
        let q = squared_distance(x, &self.mean0) / (self.dof * self.scale_sq);
        self.log_norm - 0.5 * (self.dof + d) * q.ln_1p()
    }
}
