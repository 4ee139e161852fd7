//! Experiment configuration (JSON). Every field has a default, so `{}` is a
//! valid configuration describing the desk-scale synthetic experiment.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion::LossConfig;
use crate::model::ModelConfig;
use crate::retrieval::{Metric, RerankParams};
use crate::visual::NoiseChannel;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    #[default]
    Adam,
    Sgd,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub epochs: usize,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            kind: OptimizerKind::Adam,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            epochs: 200,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerConfig {
    /// Identities per batch.
    pub p: usize,
    /// Observations per identity.
    pub k: usize,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig { p: 8, k: 4 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticConfig {
    pub identities: usize,
    pub observations: usize,
    pub cameras: usize,
    pub attributes: usize,
    pub channel: NoiseChannel,
    /// Observations per identity drawn afresh for evaluation.
    pub eval_observations: usize,
    /// Extra identities that appear only in the evaluation set.
    pub test_identities: usize,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            identities: 50,
            observations: 8,
            cameras: 4,
            attributes: 16,
            channel: NoiseChannel::default(),
            eval_observations: 8,
            test_identities: 0,
        }
    }
}

/// Feature/caption file pairs. Without an evaluation pair the training
/// files are evaluated.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileData {
    pub features: PathBuf,
    pub captions: PathBuf,
    #[serde(default)]
    pub eval_features: Option<PathBuf>,
    #[serde(default)]
    pub eval_captions: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSource {
    Synthetic(SyntheticConfig),
    Files(FileData),
}

impl Default for DataSource {
    fn default() -> Self {
        DataSource::Synthetic(SyntheticConfig::default())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub metric: Metric,
    pub rerank: RerankParams,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub model: ModelConfig,
    pub loss: LossConfig,
    pub optimizer: OptimizerConfig,
    pub sampler: SamplerConfig,
    pub data: DataSource,
    pub eval: EvalConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 7,
            model: ModelConfig::default(),
            loss: LossConfig::default(),
            optimizer: OptimizerConfig::default(),
            sampler: SamplerConfig::default(),
            data: DataSource::default(),
            eval: EvalConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let config: Self = serde_json::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let config: Self = serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.display().to_string(),
            line: e.line(),
            msg: e.to_string(),
        })?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        let s = self.sampler;
        if s.p == 0 || s.k == 0 {
            return Err(Error::invalid("sampler.p and sampler.k must be positive"));
        }
        if self.loss.triplet && (s.p < 2 || s.k < 2) {
            return Err(Error::invalid(format!(
                "the triplet term needs sampler.p >= 2 and sampler.k >= 2, got p={} k={}",
                s.p, s.k
            )));
        }
        if self.loss.alpha.is_nan() || self.loss.alpha < 0.0 {
            return Err(Error::invalid(format!(
                "loss.alpha must be >= 0, got {}",
                self.loss.alpha
            )));
        }
        let o = &self.optimizer;
        if !(o.learning_rate >= 0.0 && o.learning_rate.is_finite()) {
            return Err(Error::invalid(format!(
                "optimizer.learning_rate must be >= 0, got {}",
                o.learning_rate
            )));
        }
        if !((0.0..1.0).contains(&o.beta1) && (0.0..1.0).contains(&o.beta2) && o.epsilon > 0.0) {
            return Err(Error::invalid(
                "optimizer betas must lie in [0, 1) and epsilon must be positive",
            ));
        }
        if let DataSource::Synthetic(syn) = &self.data {
            syn.channel.validate()?;
            if syn.identities == 0
                || syn.observations == 0
                || syn.cameras == 0
                || syn.attributes == 0
            {
                return Err(Error::invalid("synthetic sizes must be positive"));
            }
            if syn.eval_observations < 2 {
                return Err(Error::invalid("data.eval_observations must be at least 2"));
            }
        }
        let r = self.eval.rerank;
        if !(r.k1 > r.k2 && r.k2 >= 1 && (0.0..=1.0).contains(&r.lambda)) {
            return Err(Error::invalid(
                "eval.rerank needs k1 > k2 >= 1 and 0 <= lambda <= 1",
            ));
        }
        Ok(())
    }
}
