//! Numeric primitives and seeded sampling shared by every model component.
//!
//! All categorical draws go through log-space weights normalised with
//! [`log_sum_exp`]; label likelihood products underflow quickly otherwise.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};

const SIMPLEX_TOL: f64 = 1e-9;

/// Seeded, counter-based generator. One per chain; never shared across threads.
#[derive(Debug, Clone)]
pub struct RandomSource {
    seed: u64,
    rng: ChaCha8Rng,
}

impl RandomSource {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Uniform draw on `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.rng.random::<f64>()
    }

    /// Uniform draw on the open interval `(0, 1)`.
    pub fn uniform_open(&mut self) -> f64 {
        loop {
            let u = self.uniform();
            if u > 0.0 {
                return u;
            }
        }
    }

    pub fn standard_normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.rng)
    }

    pub fn below(&mut self, n: usize) -> usize {
        self.rng.random_range(0..n)
    }

    /// Independent stream derived from this seed (used for per-chain seeding).
    pub fn fork(&mut self) -> RandomSource {
        RandomSource::new(self.rng.next_u64())
    }
}

impl RngCore for RandomSource {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.rng.fill_bytes(dst)
    }
}

/// Normalised categorical distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbabilityVector {
    weights: Vec<f64>,
}

impl ProbabilityVector {
    /// Validates non-negativity and unit mass.
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::Empty);
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::InvalidParameter(
                "probabilities must be finite and non-negative".into(),
            ));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > SIMPLEX_TOL {
            return Err(Error::InvalidParameter(format!("probabilities sum to {total}, not 1")));
        }
        Ok(Self { weights })
    }

    /// Normalises non-negative weights.
    pub fn from_unnormalized(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::Empty);
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::InvalidParameter(
                "weights must be finite and non-negative".into(),
            ));
        }
        let total: f64 = weights.iter().sum();
        if total <= 0.0 {
            return Err(Error::InvalidParameter("weights have zero mass".into()));
        }
        Ok(Self {
            weights: weights.into_iter().map(|w| w / total).collect(),
        })
    }

    /// Normalises log-weights; `-inf` entries get zero mass.
    pub fn from_log_weights(log_weights: &[f64]) -> Result<Self> {
        let lse = log_sum_exp(log_weights)?;
        if !lse.is_finite() {
            return Err(Error::InvalidParameter("log-weights have no finite mass".into()));
        }
        Ok(Self {
            weights: log_weights.iter().map(|w| (w - lse).exp()).collect(),
        })
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.weights
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.weights
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// Index of the largest entry, ties resolved toward the smaller index.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, w) in self.weights.iter().enumerate() {
            if *w > self.weights[best] {
                best = i;
            }
        }
        best
    }
}

/// `log Σ exp(vᵢ)`, computed around the maximum.
pub fn log_sum_exp(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Empty);
    }
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Ok(f64::NEG_INFINITY);
    }
    if max == f64::INFINITY {
        return Ok(f64::INFINITY);
    }
    let sum: f64 = values.iter().map(|v| (v - max).exp()).sum();
    Ok(max + sum.ln())
}

/// Gamma draw parameterised by shape and rate.
pub fn sample_gamma(shape: f64, rate: f64, rng: &mut RandomSource) -> Result<f64> {
    Ok(log_sample_gamma(shape, rate, rng)?.exp())
}

/// Log of a Gamma(shape, rate) draw. Small shapes are boosted by one and
/// corrected with `U^(1/shape)` in log-space so tiny draws do not underflow.
pub fn log_sample_gamma(shape: f64, rate: f64, rng: &mut RandomSource) -> Result<f64> {
    if !(shape > 0.0 && shape.is_finite()) || !(rate > 0.0 && rate.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "gamma shape {shape} and rate {rate} must be positive"
        )));
    }
    if shape < 1.0 {
        let boosted = Gamma::new(shape + 1.0, 1.0)
            .map_err(|e| Error::InvalidParameter(e.to_string()))?
            .sample(rng);
        let u = rng.uniform_open();
        Ok(boosted.ln() + u.ln() / shape - rate.ln())
    } else {
        let g: f64 = Gamma::new(shape, 1.0)
            .map_err(|e| Error::InvalidParameter(e.to_string()))?
            .sample(rng);
        Ok(g.ln() - rate.ln())
    }
}

pub fn sample_beta(a: f64, b: f64, rng: &mut RandomSource) -> Result<f64> {
    if !(a > 0.0 && b > 0.0 && a.is_finite() && b.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "beta parameters ({a}, {b}) must be positive"
        )));
    }
    let la = log_sample_gamma(a, 1.0, rng)?;
    let lb = log_sample_gamma(b, 1.0, rng)?;
    let m = la.max(lb);
    let x = (la - m).exp();
    let y = (lb - m).exp();
    Ok(x / (x + y))
}

pub fn sample_dirichlet(concentration: &[f64], rng: &mut RandomSource) -> Result<ProbabilityVector> {
    if concentration.is_empty() {
        return Err(Error::Empty);
    }
    if concentration.iter().any(|a| !(*a > 0.0 && a.is_finite())) {
        return Err(Error::InvalidConcentration);
    }
    if concentration.len() == 1 {
        return Ok(ProbabilityVector { weights: vec![1.0] });
    }
    let logs = concentration
        .iter()
        .map(|a| log_sample_gamma(*a, 1.0, rng))
        .collect::<Result<Vec<_>>>()?;
    ProbabilityVector::from_log_weights(&logs)
}

/// Categorical draw. A one-outcome distribution consumes no randomness.
pub fn sample_categorical(probs: &ProbabilityVector, rng: &mut RandomSource) -> usize {
    let w = probs.as_slice();
    if w.len() == 1 {
        return 0;
    }
    let u = rng.uniform();
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (i, p) in w.iter().enumerate() {
        if *p > 0.0 {
            acc += p;
            last_positive = i;
            if u < acc {
                return i;
            }
        }
    }
    last_positive
}

/// Categorical draw from unnormalised log-weights.
pub fn sample_log_categorical(log_weights: &[f64], rng: &mut RandomSource) -> Result<usize> {
    if log_weights.len() == 1 {
        if log_weights[0] == f64::NEG_INFINITY || log_weights[0].is_nan() {
            return Err(Error::InvalidParameter("no finite mass".into()));
        }
        return Ok(0);
    }
    let probs = ProbabilityVector::from_log_weights(log_weights)?;
    Ok(sample_categorical(&probs, rng))
}

/// Product of `d` independent univariate Student-t densities sharing a
/// location shift, scale and degrees of freedom.
pub fn isotropic_student_t_log_density(x: &[f64], location: &[f64], scale: f64, dof: f64) -> Result<f64> {
    if x.len() != location.len() {
        return Err(Error::DimensionMismatch {
            expected: location.len(),
            got: x.len(),
        });
    }
    if !(scale > 0.0 && dof > 0.0) {
        return Err(Error::InvalidParameter("scale and dof must be positive".into()));
    }
    let norm = ln_gamma((dof + 1.0) / 2.0) - ln_gamma(dof / 2.0) - 0.5 * (dof * std::f64::consts::PI).ln() - scale.ln();
    Ok(x.iter()
        .zip(location)
        .map(|(xi, mi)| {
            let t = (xi - mi) / scale;
            norm - 0.5 * (dof + 1.0) * (t * t / dof).ln_1p()
        })
        .sum())
}

/// Shortest interval covering a given fraction of the samples.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HpdInterval {
    pub lower: f64,
    pub upper: f64,
    pub mass: f64,
}

impl HpdInterval {
    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }

    pub fn contains(&self, x: f64) -> bool {
        self.lower <= x && x <= self.upper
    }
}

/// Number of sorted samples an HPD window of `mass` must cover.
pub fn hpd_window_len(n: usize, mass: f64) -> usize {
    ((mass * n as f64) - 1e-9).ceil().max(1.0) as usize
}

/// Shortest window of `⌈mass·n⌉` consecutive sorted samples; ties go to the
/// leftmost window.
pub fn hpd_interval(samples: &[f64], mass: f64) -> Result<HpdInterval> {
    if samples.len() < 2 {
        return Err(Error::NotEnoughSamples {
            needed: 2,
            got: samples.len(),
        });
    }
    if !(mass > 0.0 && mass < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "credible mass {mass} must lie in (0, 1)"
        )));
    }
    if samples.iter().any(|s| s.is_nan()) {
        return Err(Error::InvalidParameter("NaN sample".into()));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("NaN filtered"));
    let k = hpd_window_len(sorted.len(), mass);
    let mut best = 0;
    let mut best_width = f64::INFINITY;
    for start in 0..=(sorted.len() - k) {
        let width = sorted[start + k - 1] - sorted[start];
        if width < best_width {
            best_width = width;
            best = start;
        }
    }
    Ok(HpdInterval {
        lower: sorted[best],
        upper: sorted[best + k - 1],
        mass,
    })
}

/// Median of a non-empty sample (mean of the two middle values for even n).
pub fn median(samples: &[f64]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::Empty);
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let n = sorted.len();
    Ok(if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    })
}

pub fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.iter().sum::<f64>() / values.len() as f64
}

/// Unbiased sample variance; zero for fewer than two values.
pub fn variance(values: &[f64]) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let m = mean(values);
    values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (values.len() - 1) as f64
}

pub fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}
