//! One declarative TOML document holding every tunable of the pipeline.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{Architecture, BalancedFormula, BatchShape, ForestConfig};
use crate::features::FeatureConfig;
use crate::fusion::FusionConfig;
use crate::model::{NetConfig, TrainConfig};
use crate::synthgen::SynthConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathsConfig {
    /// Dataset directory holding `manifest.json`.
    pub data_dir: PathBuf,
    /// Parent of per-command run directories.
    pub runs_dir: PathBuf,
}

impl Default for PathsConfig {
    fn default() -> Self {
        PathsConfig {
            data_dir: PathBuf::from("data"),
            runs_dir: PathBuf::from("runs"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub formula: BalancedFormula,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            formula: BalancedFormula::MacroRecall,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AblationConfig {
    pub architectures: Vec<Architecture>,
    pub batch_shapes: Vec<BatchShape>,
}

impl Default for AblationConfig {
    fn default() -> Self {
        let arch = |n_fc, n_lstm| Architecture { n_fc, n_lstm };
        let shape = |batch_size, seq_len| BatchShape { batch_size, seq_len };
        AblationConfig {
            architectures: vec![arch(3, 1), arch(2, 1), arch(3, 2), arch(2, 2)],
            batch_shapes: vec![shape(8, 30), shape(16, 30), shape(32, 30), shape(16, 10), shape(16, 60)],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    /// Master seed; overrides the seeds of training, forest folds and synthesis.
    pub seed: u64,
    /// Worker threads for folds and sessions; 0 uses all cores.
    pub jobs: usize,
    pub paths: PathsConfig,
    pub fusion: FusionConfig,
    pub features: FeatureConfig,
    pub net: NetConfig,
    pub train: TrainConfig,
    pub forest: ForestConfig,
    pub eval: EvalConfig,
    pub ablation: AblationConfig,
    pub synth: SynthConfig,
}

impl PipelineConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: PipelineConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Pushes the master seed into every seeded component.
    pub fn propagate_seed(&mut self) {
        self.train.seed = self.seed;
        self.synth.seed = self.seed;
    }

    pub fn validate(&self) -> Result<()> {
        self.net.validate()?;
        self.train.validate()?;
        self.synth.validate()?;
        self.forest.validate()?;
        if self.ablation.architectures.iter().any(|a| a.n_fc == 0 || a.n_lstm == 0) {
            return Err(Error::Config("ablation architectures need n_fc, n_lstm >= 1".into()));
        }
        if self.ablation.batch_shapes.iter().any(|s| s.batch_size == 0 || s.seq_len == 0) {
            return Err(Error::Config("ablation batch shapes need positive N and L".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trips_through_toml() {
        let cfg = PipelineConfig::default();
        let text = cfg.to_toml_string().unwrap();
        assert_eq!(PipelineConfig::from_toml_str(&text).unwrap(), cfg);
    }

    #[test]
    fn partial_document_keeps_defaults() {
        let cfg = PipelineConfig::from_toml_str("seed = 7\n[net]\nhidden = 64\n").unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.net.hidden, 64);
        assert_eq!(cfg.net.n_fc, 3);
        assert_eq!(cfg.fusion.gate_radius, 0.3);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(PipelineConfig::from_toml_str("sed = 7\n").is_err());
        assert!(PipelineConfig::from_toml_str("[net]\nhiden = 64\n").is_err());
    }
}
