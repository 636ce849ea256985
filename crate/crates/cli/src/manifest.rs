//! Dataset manifest written by `synth` and read by the other commands.
//! Paths are stored relative to the manifest's directory.

use std::path::{Path, PathBuf};

use anyhow::Context;
use halosep_core::radial::{synth_halo, HaloLayer, HaloParams, LightCenter};
use serde::{Deserialize, Serialize};

use crate::UsageError;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Record {
    /// Stem shared by every artifact of the record.
    pub name: String,
    pub reference_path: String,
    pub degraded_path: String,
    pub halo_path: String,
    pub center: LightCenter,
    pub halo_params: HaloParams,
    /// Dataset seed; the record's draws come from stream `index`.
    pub seed: u64,
    pub index: u64,
    /// Channel gains applied before the halo, if any.
    pub cast: Option<[f64; 3]>,
}

impl Record {
    /// Regenerates the halo layer for an `height x width` frame.
    pub fn halo(&self, height: usize, width: usize) -> halosep_core::Result<HaloLayer> {
        synth_halo(height, width, &self.halo_params, self.center)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub seed: u64,
    /// RFC 3339 creation time.
    pub created: String,
    pub n_per_image: usize,
    pub records: Vec<Record>,
}

impl Manifest {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes") + "\n"
    }

    pub fn save(&self, path: &Path) -> anyhow::Result<()> {
        std::fs::write(path, self.to_json()).with_context(|| format!("writing {}", path.display()))
    }
}

/// A manifest together with the directory its paths are relative to.
#[derive(Debug, Clone)]
pub struct LoadedManifest {
    pub manifest: Manifest,
    pub base: PathBuf,
}

impl LoadedManifest {
    /// Reads a manifest file, or `manifest.json` inside a directory.
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let file = if path.is_dir() { path.join(MANIFEST_FILE) } else { path.to_path_buf() };
        let text = std::fs::read_to_string(&file)
            .map_err(|e| UsageError(format!("cannot read manifest {}: {e}", file.display())))?;
        let manifest: Manifest = serde_json::from_str(&text)
            .map_err(|e| UsageError(format!("malformed manifest {}: {e}", file.display())))?;
        let base = file.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(Self { manifest, base })
    }

    pub fn resolve(&self, rel: &str) -> PathBuf {
        self.base.join(rel)
    }

    pub fn records(&self) -> &[Record] {
        &self.manifest.records
    }
}

/// Current UTC time, second precision.
pub fn timestamp() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true)
}
