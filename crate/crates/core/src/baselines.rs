//! Nearest-neighbour detection and classification, and graph label
//! propagation over an RBF affinity.

use crate::error::{Error, Result};
use crate::numerics::squared_distance;

/// Labelled reference vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelledGallery {
    vectors: Vec<Vec<f64>>,
    labels: Vec<String>,
}

impl LabelledGallery {
    pub fn new(vectors: Vec<Vec<f64>>, labels: Vec<String>) -> Result<Self> {
        if vectors.len() != labels.len() {
            return Err(Error::LengthMismatch(vectors.len(), labels.len()));
        }
        if let Some(first) = vectors.first() {
            if let Some(bad) = vectors.iter().find(|v| v.len() != first.len()) {
                return Err(Error::DimensionMismatch {
                    expected: first.len(),
                    got: bad.len(),
                });
            }
        }
        Ok(Self { vectors, labels })
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn vectors(&self) -> &[Vec<f64>] {
        &self.vectors
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    /// Index and squared distance of the nearest vector; ties go to the
    /// smallest index.
    fn nearest(&self, x: &[f64]) -> Result<(usize, f64)> {
        let first = self.vectors.first().ok_or(Error::Empty)?;
        if x.len() != first.len() {
            return Err(Error::DimensionMismatch {
                expected: first.len(),
                got: x.len(),
            });
        }
        let mut best = (0, f64::INFINITY);
        for (i, v) in self.vectors.iter().enumerate() {
            let d = squared_distance(x, v);
            if d < best.1 {
                best = (i, d);
            }
        }
        Ok(best)
    }
}

/// Euclidean distance to the nearest gallery vector.
pub fn nn_unknown_score(x: &[f64], gallery: &LabelledGallery) -> Result<f64> {
    Ok(gallery.nearest(x)?.1.sqrt())
}

pub fn nn_classify<'a>(x: &[f64], gallery: &'a LabelledGallery) -> Result<&'a str> {
    let (i, _) = gallery.nearest(x)?;
    Ok(&gallery.labels[i])
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PropagationSettings {
    pub rbf_gamma: f64,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for PropagationSettings {
    fn default() -> Self {
        Self {
            rbf_gamma: 10.0,
            tol: 1e-6,
            max_iter: 10_000,
        }
    }
}

/// Result of label propagation: one distribution over `classes` per vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Propagation {
    pub classes: Vec<String>,
    pub distributions: Vec<Vec<f64>>,
    pub iterations: usize,
    /// Largest row change per iteration.
    pub changes: Vec<f64>,
}

impl Propagation {
    /// Most probable class of vector `n`; ties favour the class sorting first.
    pub fn predicted(&self, n: usize) -> &str {
        let row = &self.distributions[n];
        let mut best = 0;
        for (k, p) in row.iter().enumerate() {
            if *p > row[best] {
                best = k;
            }
        }
        &self.classes[best]
    }
}

/// Iterates `Y ← D⁻¹WY` with labelled rows clamped, `W_ij = exp(−γ‖xᵢ−xⱼ‖²)`
/// and no self-affinity. Unlabelled rows start uniform; a row whose
/// affinities all underflow keeps its current distribution.
pub fn label_propagation(
    vectors: &[Vec<f64>],
    labelled: &[(usize, String)],
    settings: &PropagationSettings,
) -> Result<Propagation> {
    if labelled.is_empty() {
        return Err(Error::Empty);
    }
    let n = vectors.len();
    let mut classes: Vec<String> = labelled.iter().map(|(_, l)| l.clone()).collect();
    classes.sort();
    classes.dedup();
    let k = classes.len();
    let mut clamp: Vec<Option<usize>> = vec![None; n];
    for (i, l) in labelled {
        if *i >= n {
            return Err(Error::InvalidParameter(format!("labelled index {i} out of range")));
        }
        clamp[*i] = Some(classes.binary_search(l).expect("label collected"));
    }
    let weights: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            (0..n)
                .map(|j| {
                    if i == j {
                        0.0
                    } else {
                        (-settings.rbf_gamma * squared_distance(&vectors[i], &vectors[j])).exp()
                    }
                })
                .collect()
        })
        .collect();
    let degree: Vec<f64> = weights.iter().map(|row| row.iter().sum()).collect();
    let mut y: Vec<Vec<f64>> = clamp
        .iter()
        .map(|c| match c {
            Some(j) => (0..k).map(|m| f64::from(u8::from(m == *j))).collect(),
            None => vec![1.0 / k as f64; k],
        })
        .collect();
    let mut changes = Vec::new();
    let mut iterations = 0;
    while iterations < settings.max_iter {
        iterations += 1;
        let mut next = y.clone();
        let mut max_change: f64 = 0.0;
        for i in 0..n {
            if clamp[i].is_some() || degree[i] == 0.0 {
                continue;
            }
            let mut row = vec![0.0; k];
            for (j, w) in weights[i].iter().enumerate() {
                if *w > 0.0 {
                    for (r, v) in row.iter_mut().zip(&y[j]) {
                        *r += w * v;
                    }
                }
            }
            let s: f64 = row.iter().sum();
            row.iter_mut().for_each(|r| *r /= s);
            for (a, b) in row.iter().zip(&y[i]) {
                max_change = max_change.max((a - b).abs());
            }
            next[i] = row;
        }
        y = next;
        changes.push(max_change);
        if max_change < settings.tol {
            break;
        }
    }
    Ok(Propagation {
        classes,
        distributions: y,
        iterations,
        changes,
    })
}
