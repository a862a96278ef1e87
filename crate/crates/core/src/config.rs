//! Run configuration loaded from TOML.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::aggregate::AggregationConfig;
use crate::error::{Error, Result};
use crate::eval::{EvalConfig, SceneSpec};
use crate::loss::LossWeights;
use crate::train::TrainerConfig;

/// Synthetic stand-in for a structure-from-motion initialization.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InitConfig {
    /// One observed point per `stride × stride` pixel block of each view.
    pub stride: usize,
    /// Standard deviation of the point jitter in world units.
    pub noise: f64,
}

impl Default for InitConfig {
    fn default() -> Self {
        InitConfig { stride: 12, noise: 0.005 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub workers: usize,
    /// Seconds an aggregator waits for a missing upstream artifact. When
    /// unset it is ten times the expected device stage.
    pub stage_timeout_secs: Option<f64>,
    /// Expected wall time of one training iteration, used for the default
    /// timeout.
    pub expected_iter_secs: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            workers: 1,
            stage_timeout_secs: None,
            expected_iter_secs: 0.1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub seed: u64,
    pub sh_degree: u8,
    pub trainer: TrainerConfig,
    pub aggregation: AggregationConfig,
    pub weights: LossWeights,
    pub scene: SceneSpec,
    pub eval: EvalConfig,
    pub init: InitConfig,
    pub pipeline: PipelineConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            sh_degree: 1,
            trainer: TrainerConfig::default(),
            aggregation: AggregationConfig::default(),
            weights: LossWeights::default(),
            scene: SceneSpec::default(),
            eval: EvalConfig::default(),
            init: InitConfig::default(),
            pipeline: PipelineConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<RunConfig> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<RunConfig> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.trainer.validate()?;
        self.aggregation.validate()?;
        self.trainer.schedule(&self.weights).validate()?;
        self.scene.validate()?;
        if self.sh_degree > 3 {
            return Err(Error::Config(format!("sh_degree {} above 3", self.sh_degree)));
        }
        if self.init.stride == 0 || !(self.init.noise >= 0.0) {
            return Err(Error::Config("init stride must be positive and noise non-negative".into()));
        }
        if self.pipeline.workers == 0 {
            return Err(Error::Config("at least one worker required".into()));
        }
        Ok(())
    }

    /// Loss weights with the trainer's schedule lengths.
    pub fn scheduled_weights(&self) -> LossWeights {
        self.trainer.schedule(&self.weights)
    }

    pub fn stage_timeout(&self) -> std::time::Duration {
        let secs = self
            .pipeline
            .stage_timeout_secs
            .unwrap_or(10.0 * self.trainer.max_iters as f64 * self.pipeline.expected_iter_secs);
        std::time::Duration::from_secs_f64(secs.max(0.0))
    }
}

/// Seed for agent `id`, independent of scheduling order.
pub fn derive_seed(base: u64, id: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(base.to_le_bytes());
    h.update(id.as_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("8 bytes"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_round_trip() {
        let cfg = RunConfig::default();
        assert_eq!(RunConfig::from_toml_str(&cfg.to_toml()).unwrap(), cfg);
    }

    #[test]
    fn partial_toml_keeps_defaults() {
        let cfg = RunConfig::from_toml_str("seed = 7\n[trainer]\nmax_iters = 300\nstage1_iters = 70\nprune_iter = 200\n").unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.trainer.max_iters, 300);
        assert_eq!(cfg.trainer.max_primitives, 8000);
        assert_eq!(cfg.scheduled_weights().tau, 70);
    }

    #[test]
    fn invalid_values_are_rejected() {
        assert!(RunConfig::from_toml_str("[pipeline]\nworkers = 0\n").is_err());
        assert!(RunConfig::from_toml_str("[trainer]\nmax_iters = 100\n").is_err());
        assert!(RunConfig::from_toml_str("seed = \"x\"").is_err());
    }

    #[test]
    fn derived_seeds_differ_per_agent() {
        assert_eq!(derive_seed(1, "e0_d0"), derive_seed(1, "e0_d0"));
        assert_ne!(derive_seed(1, "e0_d0"), derive_seed(1, "e0_d1"));
        assert_ne!(derive_seed(1, "e0_d0"), derive_seed(2, "e0_d0"));
    }
}
