//! Line-delimited dataset manifests: one header line, then one observation
//! per line.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, Write};

use anyhow::{bail, Context as _, Result};
use hdpid::data::{Dataset, Observation};
use serde::{Deserialize, Serialize};

pub const DATASET_SCHEMA: &str = "hdpid-dataset";
pub const DATASET_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Header {
    pub schema: String,
    pub version: u32,
    pub dim: usize,
    pub frames: usize,
    #[serde(default)]
    pub context_names: Vec<String>,
}

/// One observation. Frames count from 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Record {
    pub id: String,
    pub frame: usize,
    #[serde(default)]
    pub context: Option<String>,
    pub embedding: Vec<f64>,
    #[serde(default)]
    pub label: Option<String>,
    #[serde(default)]
    pub truth: Option<String>,
}

/// A dataset together with the names of its context indices.
#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub data: Dataset,
    pub context_names: Vec<String>,
}

impl Manifest {
    pub fn new(data: Dataset, context_names: Vec<String>) -> Self {
        Self { data, context_names }
    }

    pub fn write<W: Write>(&self, mut out: W) -> Result<()> {
        let header = Header {
            schema: DATASET_SCHEMA.into(),
            version: DATASET_VERSION,
            dim: self.data.dim(),
            frames: self.data.frames(),
            context_names: self.context_names.clone(),
        };
        serde_json::to_writer(&mut out, &header)?;
        writeln!(out)?;
        for o in self.data.observations() {
            let context = match self.data.frame_context(o.frame) {
                Some(c) => Some(
                    self.context_names
                        .get(c)
                        .cloned()
                        .with_context(|| format!("context {c} has no name"))?,
                ),
                None => None,
            };
            let record = Record {
                id: o.id.clone(),
                frame: o.frame + 1,
                context,
                embedding: o.embedding.clone(),
                label: o.label.clone(),
                truth: o.truth.clone(),
            };
            serde_json::to_writer(&mut out, &record)?;
            writeln!(out)?;
        }
        out.flush()?;
        Ok(())
    }

    /// Parses and validates a manifest. Frames must appear in
    /// non-decreasing order, every frame in `1..=frames` must have a record
    /// and all records of a frame must agree on the context.
    pub fn read<R: BufRead>(input: R) -> Result<Self> {
        let mut lines = input.lines().enumerate().filter_map(|(k, l)| match l {
            Ok(s) if s.trim().is_empty() => None,
            other => Some((k + 1, other)),
        });
        let (_, first) = lines.next().context("missing header line")?;
        let header: Header = serde_json::from_str(&first?).context("line 1: malformed header")?;
        if header.schema != DATASET_SCHEMA {
            bail!("expected schema {DATASET_SCHEMA}, found {}", header.schema);
        }
        if header.version != DATASET_VERSION {
            bail!("unsupported dataset version {}", header.version);
        }
        let index: BTreeMap<&str, usize> = header
            .context_names
            .iter()
            .enumerate()
            .map(|(c, s)| (s.as_str(), c))
            .collect();
        if index.len() != header.context_names.len() {
            bail!("duplicate context names in header");
        }

        let mut contexts: Vec<Option<Option<usize>>> = vec![None; header.frames];
        let mut ids = BTreeSet::new();
        let mut observations = Vec::new();
        let mut last = 1usize;
        for (line, text) in lines {
            let r: Record = serde_json::from_str(&text?).with_context(|| format!("line {line}: malformed record"))?;
            if r.frame == 0 || r.frame > header.frames {
                bail!("line {line}: frame {} outside 1..={}", r.frame, header.frames);
            }
            if r.frame < last {
                bail!("line {line}: frame {} after frame {last}", r.frame);
            }
            last = r.frame;
            if r.embedding.len() != header.dim {
                bail!(
                    "line {line}: embedding has {} values, header says {}",
                    r.embedding.len(),
                    header.dim
                );
            }
            if !ids.insert(r.id.clone()) {
                bail!("line {line}: duplicate id {}", r.id);
            }
            let context = match &r.context {
                Some(name) => Some(
                    *index
                        .get(name.as_str())
                        .with_context(|| format!("line {line}: context {name:?} not in header"))?,
                ),
                None => None,
            };
            let slot = &mut contexts[r.frame - 1];
            match slot {
                None => *slot = Some(context),
                Some(seen) if *seen != context => {
                    bail!("line {line}: frame {} has conflicting contexts", r.frame)
                }
                Some(_) => {}
            }
            observations.push(Observation {
                id: r.id,
                frame: r.frame - 1,
                embedding: r.embedding,
                label: r.label,
                truth: r.truth,
            });
        }
        if let Some(m) = contexts.iter().position(Option::is_none) {
            bail!("frame {} has no records", m + 1);
        }
        let frame_contexts = contexts.into_iter().map(|c| c.flatten()).collect();
        let data = Dataset::new(observations, frame_contexts)?;
        Ok(Self {
            data,
            context_names: header.context_names,
        })
    }
}
