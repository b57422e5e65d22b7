//! In-memory dataset: embeddings grouped into frames, with sparse names,
//! optional observed frame contexts and optional ground truth.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub id: String,
    /// Zero-based frame index.
    pub frame: usize,
    pub embedding: Vec<f64>,
    pub label: Option<String>,
    pub truth: Option<String>,
}

/// Observations sorted by frame. Frames are `0..frames`; a frame may be
/// empty, and its context is either observed or latent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    dim: usize,
    observations: Vec<Observation>,
    frame_contexts: Vec<Option<usize>>,
    frame_members: Vec<Vec<usize>>,
}

impl Dataset {
    /// `frame_contexts[m]` is the observed context of frame `m`, if any.
    /// Observations are stably sorted by frame.
    pub fn new(mut observations: Vec<Observation>, frame_contexts: Vec<Option<usize>>) -> Result<Self> {
        let dim = observations.first().map_or(0, |o| o.embedding.len());
        for o in &observations {
            if o.embedding.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: o.embedding.len(),
                });
            }
            if o.embedding.iter().any(|v| !v.is_finite()) {
                return Err(Error::Data(format!("observation {} has a non-finite embedding", o.id)));
            }
            if o.frame >= frame_contexts.len() {
                return Err(Error::Data(format!(
                    "observation {} in frame {} beyond {} frames",
                    o.id,
                    o.frame,
                    frame_contexts.len()
                )));
            }
        }
        if observations.iter().any(|o| !o.embedding.is_empty()) && dim == 0 {
            return Err(Error::Data("zero-dimensional embeddings".into()));
        }
        observations.sort_by_key(|o| o.frame);
        let mut frame_members = vec![Vec::new(); frame_contexts.len()];
        for (n, o) in observations.iter().enumerate() {
            frame_members[o.frame].push(n);
        }
        Ok(Self {
            dim,
            observations,
            frame_contexts,
            frame_members,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    pub fn frames(&self) -> usize {
        self.frame_contexts.len()
    }

    pub fn observations(&self) -> &[Observation] {
        &self.observations
    }

    pub fn observation(&self, n: usize) -> &Observation {
        &self.observations[n]
    }

    pub fn embedding(&self, n: usize) -> &[f64] {
        &self.observations[n].embedding
    }

    pub fn frame_of(&self, n: usize) -> usize {
        self.observations[n].frame
    }

    pub fn frame_members(&self, m: usize) -> &[usize] {
        &self.frame_members[m]
    }

    pub fn frame_context(&self, m: usize) -> Option<usize> {
        self.frame_contexts[m]
    }

    pub fn frame_contexts(&self) -> &[Option<usize>] {
        &self.frame_contexts
    }

    pub fn embeddings(&self) -> Vec<Vec<f64>> {
        self.observations.iter().map(|o| o.embedding.clone()).collect()
    }

    /// Distinct observed names.
    pub fn label_set(&self) -> BTreeSet<String> {
        self.observations.iter().filter_map(|o| o.label.clone()).collect()
    }

    /// Ground-truth identities, if every observation carries one.
    pub fn truth(&self) -> Option<Vec<&str>> {
        self.observations.iter().map(|o| o.truth.as_deref()).collect()
    }

    /// Largest observed context index plus one.
    pub fn observed_context_count(&self) -> usize {
        self.frame_contexts.iter().flatten().map(|c| c + 1).max().unwrap_or(0)
    }

    /// Copy with every context hidden.
    pub fn without_contexts(&self) -> Self {
        let mut out = self.clone();
        out.frame_contexts.iter_mut().for_each(|c| *c = None);
        out
    }

    /// Copy with the named labels removed except on the given observations.
    pub fn keep_labels(&self, keep: &BTreeSet<usize>) -> Self {
        let mut out = self.clone();
        for (n, o) in out.observations.iter_mut().enumerate() {
            if !keep.contains(&n) {
                o.label = None;
            }
        }
        out
    }

    /// Copy with every embedding replaced, in observation order.
    pub fn with_embeddings(&self, embeddings: Vec<Vec<f64>>) -> Result<Self> {
        if embeddings.len() != self.len() {
            return Err(Error::LengthMismatch(embeddings.len(), self.len()));
        }
        let mut out = self.clone();
        for (o, x) in out.observations.iter_mut().zip(embeddings) {
            if x.len() != self.dim {
                return Err(Error::DimensionMismatch {
                    expected: self.dim,
                    got: x.len(),
                });
            }
            if x.iter().any(|v| !v.is_finite()) {
                return Err(Error::Data(format!("non-finite embedding on {}", o.id)));
            }
            o.embedding = x;
        }
        Ok(out)
    }

    /// Number of observations in frames `0..frames`.
    pub fn prefix_len(&self, frames: usize) -> usize {
        self.frame_members[..frames.min(self.frames())]
            .iter()
            .map(Vec::len)
            .sum()
    }
}
