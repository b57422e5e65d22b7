//! Chain samples on disk: a header line describing the fit, then one line
//! per chain.

use std::io::{BufRead, Write};

use anyhow::{bail, Context as _, Result};
use hdpid::data::Dataset;
use hdpid::face_model::NigPrior;
use hdpid::sampler::{ChainSamples, Hyper, ModelConfig, PooledSamples, ProtocolMode};
use serde::{Deserialize, Serialize};

pub const SNAPSHOT_SCHEMA: &str = "hdpid-snapshots";
pub const SNAPSHOT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitHeader {
    pub schema: String,
    pub version: u32,
    pub protocol: ProtocolMode,
    pub model: ModelConfig,
    pub face: NigPrior,
    pub observations: usize,
    pub dim: usize,
    pub chains: usize,
    pub sweeps: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitFile {
    pub header: FitHeader,
    pub samples: PooledSamples,
}

impl FitFile {
    pub fn write<W: Write>(&self, mut out: W) -> Result<()> {
        serde_json::to_writer(&mut out, &self.header)?;
        writeln!(out)?;
        for chain in &self.samples.chains {
            serde_json::to_writer(&mut out, chain)?;
            writeln!(out)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn read<R: BufRead>(input: R) -> Result<Self> {
        let mut lines = input
            .lines()
            .filter(|l| l.as_ref().map_or(true, |s| !s.trim().is_empty()));
        let first = lines.next().context("missing snapshot header")??;
        let header: FitHeader = serde_json::from_str(&first).context("malformed snapshot header")?;
        if header.schema != SNAPSHOT_SCHEMA {
            bail!("expected schema {SNAPSHOT_SCHEMA}, found {}", header.schema);
        }
        if header.version != SNAPSHOT_VERSION {
            bail!("unsupported snapshot version {}", header.version);
        }
        let mut chains = Vec::new();
        for (k, line) in lines.enumerate() {
            let chain: ChainSamples =
                serde_json::from_str(&line?).with_context(|| format!("malformed samples for chain {k}"))?;
            chains.push(chain);
        }
        if chains.len() != header.chains {
            bail!("header announces {} chains, file holds {}", header.chains, chains.len());
        }
        Ok(Self {
            header,
            samples: PooledSamples { chains },
        })
    }

    /// Rebuilds the fixed quantities for the training set the samples came
    /// from, refusing data that does not match.
    pub fn hyper(&self, train: &Dataset) -> Result<Hyper> {
        if train.len() != self.header.observations || (train.dim() != self.header.dim && !train.is_empty()) {
            bail!(
                "samples were fitted to {} observations of dimension {}, dataset has {} of dimension {}",
                self.header.observations,
                self.header.dim,
                train.len(),
                train.dim()
            );
        }
        for chain in &self.samples.chains {
            if chain.final_state.assignments.len() != train.len() {
                bail!("chain state does not cover the dataset");
            }
        }
        Ok(self.header.model.build_with_prior(train, self.header.face.clone())?)
    }

    /// Checks that a query set lives in the same embedding space.
    pub fn check_query(&self, query: &Dataset) -> Result<()> {
        if !query.is_empty() && query.dim() != self.header.dim {
            bail!(
                "query dimension {} differs from fitted dimension {}",
                query.dim(),
                self.header.dim
            );
        }
        Ok(())
    }
}
