//! Library side of the `halosep` command-line tool. Each subcommand is a
//! plain function so tests can drive it without spawning a process.

use std::fmt;
use std::path::{Path, PathBuf};

use halosep_core::radial::{estimate_center, LightCenter};
use halosep_core::{blind_separate, refine_center, remove_halo, ImageF, Separation};

pub mod commands;
pub mod config;
pub mod manifest;

pub use config::{CastMode, PipelineConfig};
pub use manifest::{LoadedManifest, Manifest, Record};

/// Bad invocation or unusable input. Maps to exit code 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub const EXIT_OK: u8 = 0;
pub const EXIT_FAILURE: u8 = 1;
pub const EXIT_USAGE: u8 = 2;

/// Exit code for a command that returned an error.
pub fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<UsageError>().is_some() {
        return EXIT_USAGE;
    }
    use halosep_core::Error as E;
    match err.downcast_ref::<E>() {
        Some(
            E::Config(_) | E::EmptyDataset(_) | E::MissingPrediction(_) | E::Data(_) | E::Checkpoint(_),
        ) => EXIT_USAGE,
        _ => EXIT_FAILURE,
    }
}

/// Items that failed in a batch command, with the reason.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Failures(pub Vec<(String, String)>);

impl Failures {
    pub fn push(&mut self, item: impl Into<String>, err: impl fmt::Display) {
        let item = item.into();
        log::warn!("skipping {item}: {err}");
        self.0.push((item, err.to_string()));
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }
}

/// Runs `f` on a pool of `jobs` threads (all cores when `None`).
pub fn with_pool<T: Send>(jobs: Option<usize>, f: impl FnOnce() -> T + Send) -> anyhow::Result<T> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = jobs {
        if n == 0 {
            return Err(UsageError("--jobs must be at least 1".into()).into());
        }
        builder = builder.num_threads(n);
    }
    Ok(builder.build()?.install(f))
}

const IMAGE_EXTENSIONS: [&str; 4] = ["png", "ppm", "pgm", "pnm"];

/// PNG/PNM files directly inside `dir`, sorted by name.
pub fn list_images(dir: &Path) -> anyhow::Result<Vec<PathBuf>> {
    let entries = std::fs::read_dir(dir)
        .map_err(|e| UsageError(format!("cannot list {}: {e}", dir.display())))?;
    let mut out: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.is_file()
                && p.extension()
                    .and_then(|e| e.to_str())
                    .is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
        })
        .collect();
    out.sort();
    Ok(out)
}

pub fn file_stem(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

pub fn create_dir(dir: &Path) -> anyhow::Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| anyhow::anyhow!("cannot create {}: {e}", dir.display()))
}

pub fn write_json(path: &Path, value: &impl serde::Serialize) -> anyhow::Result<()> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    std::fs::write(path, text).map_err(|e| anyhow::anyhow!("cannot write {}: {e}", path.display()))
}

/// Result of separating and removing the halo of one image.
#[derive(Debug, Clone)]
pub struct Dehaloed {
    pub image: ImageF,
    pub separation: Separation,
    pub initial_center: LightCenter,
}

impl Dehaloed {
    pub fn center(&self) -> LightCenter {
        self.separation.halo.center()
    }
}

/// Center estimate (optionally refined), blind separation, halo removal.
pub fn dehalo(z: &ImageF, cfg: &PipelineConfig) -> halosep_core::Result<Dehaloed> {
    let initial = estimate_center(z, cfg.center.top_fraction)?;
    let center = if cfg.center.refine && !initial.degenerate {
        refine_center(z, initial.center, &cfg.separation)?
    } else {
        initial.center
    };
    let separation = blind_separate(z, center, &cfg.separation)?;
    let image = remove_halo(z, &separation.halo, cfg.separation.div_floor)?.clamp01();
    Ok(Dehaloed {
        image,
        separation,
        initial_center: initial.center,
    })
}
