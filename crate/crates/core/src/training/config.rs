use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hdn::HdnLossWeights;
use crate::nn::ArchConfig;
use crate::restoration::RestorationLossWeights;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub hdn: HdnLossWeights,
    pub restoration: RestorationLossWeights,
}

/// Training hyperparameters. Missing TOML keys take the defaults below.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub patch: usize,
    pub batch: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epochs: u64,
    /// Hard cap on total steps, applied after the epoch schedule.
    pub steps: Option<u64>,
    pub seed: u64,
    pub loss_weights: LossWeights,
    pub log_every: u64,
    pub checkpoint_every: u64,
    pub arch: ArchConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            patch: 128,
            batch: 4,
            learning_rate: 5e-4,
            beta1: 0.9,
            beta2: 0.99,
            epochs: 80,
            steps: None,
            seed: 0,
            loss_weights: LossWeights::default(),
            log_every: 1,
            checkpoint_every: 1000,
            arch: ArchConfig::default(),
        }
    }
}

/// Field-wise overrides, typically from command-line flags.
#[derive(Clone, Debug, Default)]
pub struct TrainOverrides {
    pub patch: Option<usize>,
    pub batch: Option<usize>,
    pub learning_rate: Option<f64>,
    pub beta1: Option<f64>,
    pub beta2: Option<f64>,
    pub epochs: Option<u64>,
    pub steps: Option<u64>,
    pub seed: Option<u64>,
    pub log_every: Option<u64>,
    pub checkpoint_every: Option<u64>,
    pub base_width: Option<usize>,
    pub res_blocks: Option<usize>,
}

impl TrainConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn apply(mut self, o: &TrainOverrides) -> Self {
        macro_rules! set {
            ($($field:ident),*) => { $(if let Some(v) = o.$field { self.$field = v; })* };
        }
        set!(patch, batch, learning_rate, beta1, beta2, epochs, seed, log_every, checkpoint_every);
        if o.steps.is_some() {
            self.steps = o.steps;
        }
        if let Some(w) = o.base_width {
            self.arch.base_width = w;
        }
        if let Some(r) = o.res_blocks {
            self.arch.res_blocks = r;
        }
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParam(m));
        self.arch.validate()?;
        self.loss_weights.hdn.validate()?;
        self.loss_weights.restoration.validate()?;
        let m = ArchConfig::DOWNSAMPLE;
        if self.patch == 0 || self.patch % m != 0 {
            return bad(format!("patch {} must be a positive multiple of {m}", self.patch));
        }
        if self.batch == 0 {
            return bad("batch must be at least 1".into());
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return bad(format!("learning rate must be positive, got {}", self.learning_rate));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return bad(format!("{name} must lie in [0, 1), got {b}"));
            }
        }
        if self.epochs == 0 {
            return bad("epochs must be at least 1".into());
        }
        if self.steps == Some(0) {
            return bad("steps must be at least 1 when given".into());
        }
        if self.log_every == 0 || self.checkpoint_every == 0 {
            return bad("log_every and checkpoint_every must be at least 1".into());
        }
        Ok(())
    }

    /// One epoch is a pass over the larger unpaired side.
    pub fn steps_per_epoch(&self, larger_side: usize) -> u64 {
        larger_side.div_ceil(self.batch).max(1) as u64
    }

    pub fn total_steps(&self, larger_side: usize) -> u64 {
        let scheduled = self.epochs * self.steps_per_epoch(larger_side);
        self.steps.map_or(scheduled, |cap| cap.min(scheduled))
    }
}
