//! Experiment configuration schema.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::link::{LinkConfig, NOMINAL_PEAK};
use crate::metrics::{N_OUT, N_TAP};
use crate::policy::PolicyConfig;
use crate::snn::{NeuronConfig, SnnDims};
use crate::{Error, Result};

pub const SCHEMA_VERSION: u32 = 1;

pub const INPUT_GAIN: f64 = 8.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderConfig {
    #[serde(rename = "J")]
    pub channels: usize,
    #[serde(rename = "K")]
    pub steps: usize,
    /// Largest expected receive sample; sets the initial references and slopes.
    pub y_max: f64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self { channels: 10, steps: 10, y_max: NOMINAL_PEAK }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SnnConfig {
    pub neuron: NeuronConfig,
    pub n_hid: usize,
}

impl Default for SnnConfig {
    fn default() -> Self {
        Self { neuron: NeuronConfig::default(), n_hid: 40 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Profile {
    Desk,
    #[default]
    Paper,
}

impl std::str::FromStr for Profile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(Self::Desk),
            "paper" => Ok(Self::Paper),
            _ => Err(Error::Argument(format!("unknown profile '{s}', expected desk or paper"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs_total: usize,
    /// Epochs during which the encoder is optimized alongside the weights.
    pub epochs_joint: usize,
    /// One policy-gradient iteration every `pg_interval` joint-phase epochs.
    pub pg_interval: usize,
    pub lr: f64,
    /// Factor applied to the input-layer weights after initialization. At unit
    /// gain the hidden layer never reaches threshold, so no gradient flows.
    pub input_gain: f64,
    pub n_tap: usize,
    pub eval_samples: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::profile(Profile::Paper)
    }
}

impl TrainConfig {
    pub fn profile(profile: Profile) -> Self {
        let (batch_size, epochs_total, epochs_joint, eval_samples) = match profile {
            Profile::Paper => (100_000, 40_000, 10_000, 10_000_000),
            Profile::Desk => (10_000, 2_000, 500, 1_000_000),
        };
        Self { batch_size, epochs_total, epochs_joint, pg_interval: 1, lr: 1e-3, input_gain: INPUT_GAIN, n_tap: N_TAP, eval_samples }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Validation("train: batch_size must be >= 1".into()));
        }
        if self.epochs_joint > self.epochs_total {
            return Err(Error::Validation(format!(
                "train: epochs_joint = {} exceeds epochs_total = {}",
                self.epochs_joint, self.epochs_total
            )));
        }
        if self.pg_interval == 0 {
            return Err(Error::Validation("train: pg_interval must be >= 1".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Validation("train: lr must be positive".into()));
        }
        if !(self.input_gain > 0.0 && self.input_gain.is_finite()) {
            return Err(Error::Validation("train: input_gain must be positive".into()));
        }
        if self.n_tap % 2 == 0 {
            return Err(Error::Validation(format!("train: n_tap must be odd, got {}", self.n_tap)));
        }
        if self.batch_size < self.n_tap {
            return Err(Error::Validation("train: batch_size must be at least n_tap".into()));
        }
        if self.eval_samples == 0 {
            return Err(Error::Validation("train: eval_samples must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub seed: u64,
    pub link: LinkConfig,
    pub encoder: EncoderConfig,
    pub snn: SnnConfig,
    pub train: TrainConfig,
    pub policy: PolicyConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            seed: 0,
            link: LinkConfig::default(),
            encoder: EncoderConfig::default(),
            snn: SnnConfig::default(),
            train: TrainConfig::default(),
            policy: PolicyConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn desk() -> Self {
        Self { train: TrainConfig::profile(Profile::Desk), ..Self::default() }
    }

    /// Network shape implied by the encoder grid and tap count.
    pub fn dims(&self) -> SnnDims {
        SnnDims { n_in: self.train.n_tap * self.encoder.channels, n_hid: self.snn.n_hid, n_out: N_OUT }
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::Validation(format!(
                "schema_version {} is not supported (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        self.link.validate()?;
        if self.encoder.channels == 0 || self.encoder.steps == 0 {
            return Err(Error::Validation("encoder: J and K must be >= 1".into()));
        }
        if !(self.encoder.y_max > 0.0 && self.encoder.y_max.is_finite()) {
            return Err(Error::Validation("encoder: y_max must be positive".into()));
        }
        if self.snn.n_hid == 0 {
            return Err(Error::Validation("snn: n_hid must be >= 1".into()));
        }
        self.snn.neuron.validate()?;
        self.train.validate()?;
        self.policy.validate()
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}
