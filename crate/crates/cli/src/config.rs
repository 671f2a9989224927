//! Pipeline configuration: one JSON file, every key optional.
//!
//! Precedence, lowest first: built-in defaults, the `--config` file, then
//! command-line flags.

use std::path::Path;

use anyhow::Context;
use serde::{Deserialize, Serialize};

use fixthresh_core::detector::{BranchMode, HybridConfig, TrainConfig};
use fixthresh_core::imaging::NormStats;
use fixthresh_core::synthgen::CueSpec;
use fixthresh_core::transforms::ConditionGrid;

use crate::UsageError;

/// One architecture in a spectrum run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Variant {
    pub name: String,
    pub branch_mode: BranchMode,
    pub freq: bool,
}

impl Variant {
    pub fn new(name: &str, branch_mode: BranchMode, freq: bool) -> Self {
        Self {
            name: name.into(),
            branch_mode,
            freq,
        }
    }

    pub fn model_config(&self, base: &HybridConfig) -> HybridConfig {
        HybridConfig {
            branch_mode: self.branch_mode,
            freq_enabled: self.freq,
            ..base.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub data: CueSpec,
    /// Shared model shape; each variant sets its own branch mode and
    /// frequency flag.
    pub model: HybridConfig,
    pub train: TrainConfig,
    pub seeds: Vec<u64>,
    pub grid: ConditionGrid,
    pub variants: Vec<Variant>,
    pub norm: NormStats,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            data: CueSpec::default(),
            model: HybridConfig::desk(BranchMode::Hybrid),
            train: desk_train_config(),
            seeds: vec![0, 1, 2],
            grid: ConditionGrid::standard(),
            variants: vec![
                Variant::new("cnn_only+freq", BranchMode::CnnOnly, true),
                Variant::new("vit_only+freq", BranchMode::VitOnly, true),
                Variant::new("hybrid", BranchMode::Hybrid, true),
            ],
            norm: NormStats::default(),
        }
    }
}

/// Training schedule for from-scratch desk-scale runs. The trunks start from
/// random weights rather than pretrained ones, so both groups run at 1e-3.
pub fn desk_train_config() -> TrainConfig {
    TrainConfig {
        lr_new: 1e-3,
        lr_backbone: 1e-3,
        max_epochs: 12,
        patience: 5,
        batch_size: 32,
        lit_freeze_epochs: 2,
        ..TrainConfig::default()
    }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let cfg: Self = serde_json::from_str(&text)
            .map_err(|e| UsageError(format!("invalid config {}: {e}", path.display())))?;
        Ok(cfg)
    }

    pub fn load_or_default(path: Option<&Path>) -> anyhow::Result<Self> {
        path.map_or_else(|| Ok(Self::default()), Self::load)
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        self.data.validate()?;
        self.model.validate()?;
        self.train.validate()?;
        NormStats::new(self.norm.mean, self.norm.std)?;
        if self.variants.is_empty() {
            return Err(UsageError("at least one variant is required".into()).into());
        }
        let mut names: Vec<&str> = self.variants.iter().map(|v| v.name.as_str()).collect();
        names.sort_unstable();
        names.dedup();
        if names.len() != self.variants.len() || names.iter().any(|n| n.is_empty() || n.contains([':', ','])) {
            return Err(UsageError("variant names must be unique, non-empty, without ':' or ','".into()).into());
        }
        for v in &self.variants {
            v.model_config(&self.model).validate()?;
        }
        let mut seeds = self.seeds.clone();
        seeds.sort_unstable();
        seeds.dedup();
        if seeds.is_empty() || seeds.len() != self.seeds.len() {
            return Err(UsageError("seeds must be a non-empty list of distinct integers".into()).into());
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_round_trip() {
        let cfg = PipelineConfig::default();
        cfg.validate().unwrap();
        let back: PipelineConfig = serde_json::from_str(&cfg.to_json()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn partial_file_keeps_other_defaults() {
        let cfg: PipelineConfig = serde_json::from_str(r#"{"seeds": [4, 5], "train": {"max_epochs": 3, "patience": 2}}"#).unwrap();
        assert_eq!(cfg.seeds, vec![4, 5]);
        assert_eq!(cfg.train.max_epochs, 3);
        assert_eq!(cfg.train.weight_decay, 1e-4);
        assert_eq!(cfg.data, CueSpec::default());
    }

    #[test]
    fn unknown_keys_and_bad_grids_are_rejected() {
        assert!(serde_json::from_str::<PipelineConfig>(r#"{"sedes": [1]}"#).is_err());
        assert!(serde_json::from_str::<PipelineConfig>(r#"{"grid": ["jpeg_q60"]}"#).is_err());
        let dup = PipelineConfig {
            seeds: vec![1, 1],
            ..Default::default()
        };
        assert!(dup.validate().is_err());
    }
}
