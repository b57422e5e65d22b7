//! Flat key-value configuration files. Every key is optional; missing keys
//! keep the library or scenario defaults.

use std::path::Path;

use anyhow::{Context as _, Result};
use hdpid::experiments::{
    EncounterConfig, FitConfig, LabelNoiseConfig, LabellingConfig, UnknownDetectionConfig, WorldConfig,
};
use hdpid::sampler::{ModelConfig, ProtocolMode};
use serde::Deserialize;

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    // model
    pub alpha0: Option<f64>,
    pub alpha: Option<f64>,
    pub gamma0: Option<f64>,
    pub contexts: Option<usize>,
    pub lambda: Option<f64>,
    pub epsilon: Option<f64>,
    pub phi: Option<f64>,
    pub alphabet_size: Option<usize>,
    pub kappa0: Option<f64>,
    pub shape0: Option<f64>,

    // chains
    pub seed: Option<u64>,
    pub chains: Option<usize>,
    pub sweeps: Option<usize>,
    pub burn_in: Option<usize>,
    pub thin: Option<usize>,
    pub protocol: Option<String>,
    pub sweeps_per_step: Option<usize>,
    pub batch_frames: Option<usize>,
    pub parallel: Option<bool>,

    // encounter simulation
    pub n_contexts: Option<usize>,
    pub context_names: Option<Vec<String>>,
    pub n_people: Option<usize>,
    pub context_switch_prob: Option<f64>,
    pub enter_prob: Option<f64>,
    pub leave_prob: Option<f64>,
    pub n_frames: Option<usize>,
    pub images_per_person: Option<usize>,

    // embedding world
    pub dim: Option<usize>,
    pub separation: Option<f64>,
    pub variance: Option<f64>,

    // scenario sizes
    pub known: Option<usize>,
    pub unknown: Option<usize>,
    pub acquainted: Option<usize>,
    pub familiar: Option<usize>,
    pub strangers: Option<usize>,
    pub train_images: Option<usize>,
    pub test_images: Option<usize>,
    pub labels_per_acquaintance: Option<usize>,
    pub names: Option<Vec<String>>,
    pub images: Option<usize>,
    pub flip_fraction: Option<f64>,
}

fn set<T: Clone>(target: &mut T, value: &Option<T>) {
    if let Some(v) = value {
        *target = v.clone();
    }
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
                Self::parse(&text).with_context(|| format!("malformed config {}", p.display()))
            }
        }
    }

    pub fn apply_model(&self, m: &mut ModelConfig) {
        set(&mut m.alpha0, &self.alpha0);
        set(&mut m.alpha, &self.alpha);
        set(&mut m.gamma0, &self.gamma0);
        set(&mut m.contexts, &self.contexts);
        set(&mut m.lambda, &self.lambda);
        set(&mut m.epsilon, &self.epsilon);
        set(&mut m.phi, &self.phi);
        set(&mut m.alphabet_size, &self.alphabet_size);
        set(&mut m.kappa0, &self.kappa0);
        set(&mut m.shape0, &self.shape0);
    }

    pub fn apply_fit(&self, f: &mut FitConfig) {
        set(&mut f.seed, &self.seed);
        set(&mut f.chains, &self.chains);
        set(&mut f.sweeps, &self.sweeps);
        set(&mut f.burn_in, &self.burn_in);
        set(&mut f.thinning, &self.thin);
        set(&mut f.parallel, &self.parallel);
    }

    pub fn protocol(&self) -> Result<Option<ProtocolMode>> {
        self.protocol
            .as_deref()
            .map(|p| p.parse().context("malformed config"))
            .transpose()
    }

    fn apply_world(&self, w: &mut WorldConfig) {
        set(&mut w.dim, &self.dim);
        set(&mut w.separation, &self.separation);
        set(&mut w.variance, &self.variance);
    }

    pub fn encounters(&self, seed: Option<u64>) -> EncounterConfig {
        let mut c = EncounterConfig::default();
        let s = &mut c.sim;
        set(&mut s.n_contexts, &self.n_contexts);
        set(&mut s.context_names, &self.context_names);
        set(&mut s.n_people, &self.n_people);
        set(&mut s.context_switch_prob, &self.context_switch_prob);
        set(&mut s.enter_prob, &self.enter_prob);
        set(&mut s.leave_prob, &self.leave_prob);
        set(&mut s.n_frames, &self.n_frames);
        set(&mut s.images_per_person, &self.images_per_person);
        set(&mut s.seed, &seed.or(self.seed));
        self.apply_world(&mut c.world);
        c
    }

    pub fn unknown_detection(&self, seed: Option<u64>) -> UnknownDetectionConfig {
        let mut c = UnknownDetectionConfig::default();
        set(&mut c.known, &self.known);
        set(&mut c.unknown, &self.unknown);
        set(&mut c.train_images, &self.train_images);
        set(&mut c.test_images, &self.test_images);
        set(&mut c.seed, &seed.or(self.seed));
        self.apply_world(&mut c.world);
        c
    }

    pub fn labelling(&self, seed: Option<u64>) -> LabellingConfig {
        let mut c = LabellingConfig::default();
        set(&mut c.acquainted, &self.acquainted);
        set(&mut c.familiar, &self.familiar);
        set(&mut c.strangers, &self.strangers);
        set(&mut c.train_images, &self.train_images);
        set(&mut c.test_images, &self.test_images);
        set(&mut c.labels_per_acquaintance, &self.labels_per_acquaintance);
        set(&mut c.seed, &seed.or(self.seed));
        self.apply_world(&mut c.world);
        c
    }

    pub fn label_noise(&self, seed: Option<u64>) -> LabelNoiseConfig {
        let mut c = LabelNoiseConfig::default();
        set(&mut c.names, &self.names);
        set(&mut c.images, &self.images);
        set(&mut c.flip_fraction, &self.flip_fraction);
        set(&mut c.seed, &seed.or(self.seed));
        self.apply_world(&mut c.world);
        c
    }
}
