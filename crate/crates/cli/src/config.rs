//! TOML run configuration. Every section is optional; missing keys take
//! their defaults and unknown keys are rejected.

use std::path::{Path, PathBuf};

use halosep_core::radial::DEFAULT_TOP_FRACTION;
use halosep_core::recovery::{RadnHyper, TrainConfig};
use halosep_core::synth::HaloSampler;
use halosep_core::{MetricSelection, SeparationConfig};
use serde::{Deserialize, Serialize};

use crate::UsageError;

/// How a colour cast is applied to synthesized pairs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum CastMode {
    /// References are only multiplied by the halo.
    #[default]
    None,
    /// One set of channel gains for the whole dataset.
    Dataset,
    /// Fresh gains for every record.
    Record,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CenterConfig {
    /// Fraction of brightest pixels averaged for the initial estimate.
    pub top_fraction: f64,
    /// Refine the initial estimate by radial-fit search.
    pub refine: bool,
}

impl Default for CenterConfig {
    fn default() -> Self {
        Self {
            top_fraction: DEFAULT_TOP_FRACTION,
            refine: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub cast: CastMode,
    /// Side of procedural references.
    pub procedural_size: usize,
    pub halo: HaloSampler,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            cast: CastMode::None,
            procedural_size: 128,
            halo: HaloSampler::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub out_dir: Option<PathBuf>,
    pub separation: SeparationConfig,
    pub center: CenterConfig,
    pub synth: SynthConfig,
    pub network: RadnHyper,
    pub train: TrainConfig,
    pub metrics: MetricSelection,
}

impl PipelineConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| UsageError(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| UsageError(format!("{}: {e}", path.display())).into())
    }

    pub fn parse(text: &str) -> Result<Self, String> {
        let cfg: Self = toml::from_str(text).map_err(|e| e.to_string())?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), String> {
        self.separation.validate().map_err(|e| e.to_string())?;
        self.train.validate().map_err(|e| e.to_string())?;
        self.network.validate().map_err(|e| e.to_string())?;
        let tf = self.center.top_fraction;
        if !(tf > 0.0 && tf <= 1.0) {
            return Err(format!("center.top_fraction must lie in (0, 1], got {tf}"));
        }
        if self.synth.procedural_size < 16 {
            return Err(format!(
                "synth.procedural_size must be >= 16, got {}",
                self.synth.procedural_size
            ));
        }
        let h = &self.synth.halo;
        if !(h.center_box > 0.0 && h.center_box <= 1.0) {
            return Err(format!("synth.halo.center_box must lie in (0, 1], got {}", h.center_box));
        }
        let (lo, hi) = h.sigma_frac;
        if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
            return Err(format!("synth.halo.sigma_frac must satisfy 0 < lo <= hi, got ({lo}, {hi})"));
        }
        let (lo, hi) = h.ambient;
        if !(lo > 0.0 && lo <= hi && hi <= 1.0) {
            return Err(format!("synth.halo.ambient must satisfy 0 < lo <= hi <= 1, got ({lo}, {hi})"));
        }
        Ok(())
    }
}
