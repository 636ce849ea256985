//! Separation, removal and optional recovery over a manifest or image files.

use std::path::{Path, PathBuf};

use halosep_core::radial::LightCenter;
use halosep_core::recovery::{load_checkpoint, radn_forward, RadnParams};
use halosep_core::separation::SeparationDiagnostics;
use halosep_core::{load_image, psnr, save_image, ssim, ImageF};
use rayon::prelude::*;
use serde::Serialize;

use crate::manifest::LoadedManifest;
use crate::{create_dir, dehalo, file_stem, list_images, write_json, Failures, PipelineConfig, UsageError};

#[derive(Debug, Clone)]
pub enum PipelineInput {
    Manifest(PathBuf),
    /// Image files and/or directories of images; no references.
    Images(Vec<PathBuf>),
}

struct Job {
    name: String,
    degraded: PathBuf,
    reference: Option<PathBuf>,
}

/// Per-image scores against the reference, when one is known.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Scores {
    pub psnr_degraded: f64,
    pub psnr_dehaloed: f64,
    pub ssim_degraded: f64,
    pub ssim_dehaloed: f64,
    pub psnr_recovered: Option<f64>,
    pub ssim_recovered: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ImageDiagnostics {
    pub name: String,
    pub initial_center: LightCenter,
    pub separation: SeparationDiagnostics,
    pub scores: Option<Scores>,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct PipelineSummary {
    pub processed: usize,
    pub failed: usize,
    pub median_psnr_degraded: Option<f64>,
    pub median_psnr_dehaloed: Option<f64>,
    pub median_ssim_degraded: Option<f64>,
    pub median_ssim_dehaloed: Option<f64>,
}

#[derive(Debug)]
pub struct PipelineOutcome {
    pub images: Vec<ImageDiagnostics>,
    pub summary: PipelineSummary,
    pub failures: Failures,
}

pub fn median(mut v: Vec<f64>) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) })
}

fn jobs(input: &PipelineInput) -> anyhow::Result<Vec<Job>> {
    match input {
        PipelineInput::Manifest(path) => {
            let m = LoadedManifest::load(path)?;
            Ok(m.records()
                .iter()
                .map(|r| Job {
                    name: r.name.clone(),
                    degraded: m.resolve(&r.degraded_path),
                    reference: Some(m.resolve(&r.reference_path)),
                })
                .collect())
        }
        PipelineInput::Images(paths) => {
            let mut out = Vec::new();
            for p in paths {
                let files = if p.is_dir() { list_images(p)? } else { vec![p.clone()] };
                out.extend(files.into_iter().map(|f| Job {
                    name: file_stem(&f),
                    degraded: f,
                    reference: None,
                }));
            }
            if out.is_empty() {
                return Err(UsageError("no input images".into()).into());
            }
            Ok(out)
        }
    }
}

fn process(
    job: &Job,
    cfg: &PipelineConfig,
    net: Option<&RadnParams>,
    out_dir: &Path,
) -> anyhow::Result<ImageDiagnostics> {
    let z = load_image(&job.degraded)?;
    let d = dehalo(&z, cfg)?;
    save_image(&d.image, out_dir.join("dehaloed").join(format!("{}.png", job.name)))?;
    d.separation
        .halo
        .save_png(out_dir.join("halo").join(format!("{}.png", job.name)))?;
    let recovered = match net {
        Some(p) => {
            let r = radn_forward(p, &d.image)?;
            save_image(&r, out_dir.join("recovered").join(format!("{}.png", job.name)))?;
            Some(r)
        }
        None => None,
    };
    let scores = match &job.reference {
        Some(path) => {
            let reference = load_image(path)?;
            let rec = |f: fn(&ImageF, &ImageF) -> halosep_core::Result<f64>| -> anyhow::Result<Option<f64>> {
                Ok(match &recovered {
                    Some(r) => Some(f(&reference, r)?),
                    None => None,
                })
            };
            Some(Scores {
                psnr_degraded: psnr(&reference, &z)?,
                psnr_dehaloed: psnr(&reference, &d.image)?,
                ssim_degraded: ssim(&reference, &z)?,
                ssim_dehaloed: ssim(&reference, &d.image)?,
                psnr_recovered: rec(psnr)?,
                ssim_recovered: rec(ssim)?,
            })
        }
        None => None,
    };
    let diag = ImageDiagnostics {
        name: job.name.clone(),
        initial_center: d.initial_center,
        separation: d.separation.diagnostics(),
        scores,
    };
    write_json(&out_dir.join("diagnostics").join(format!("{}.json", job.name)), &diag)?;
    Ok(diag)
}

/// Runs every image; failures are logged and skipped. `checkpoint` enables
/// the recovery network.
pub fn cmd_pipeline(
    input: &PipelineInput,
    cfg: &PipelineConfig,
    checkpoint: Option<&Path>,
    out_dir: &Path,
) -> anyhow::Result<PipelineOutcome> {
    let net = match checkpoint {
        Some(path) if !path.is_file() => {
            return Err(UsageError(format!("checkpoint {} does not exist", path.display())).into())
        }
        Some(path) => Some(load_checkpoint(path)?),
        None => None,
    };
    let jobs = jobs(input)?;
    let mut dirs = vec!["dehaloed", "halo", "diagnostics"];
    if net.is_some() {
        dirs.push("recovered");
    }
    for d in dirs {
        create_dir(&out_dir.join(d))?;
    }
    let results: Vec<anyhow::Result<ImageDiagnostics>> =
        jobs.par_iter().map(|j| process(j, cfg, net.as_ref(), out_dir)).collect();
    let mut images = Vec::new();
    let mut failures = Failures::default();
    for (job, r) in jobs.iter().zip(results) {
        match r {
            Ok(d) => images.push(d),
            Err(e) => failures.push(&job.name, format!("{e:#}")),
        }
    }
    let col = |f: fn(&Scores) -> f64| median(images.iter().filter_map(|d| d.scores.as_ref().map(f)).collect());
    let summary = PipelineSummary {
        processed: images.len(),
        failed: failures.len(),
        median_psnr_degraded: col(|s| s.psnr_degraded),
        median_psnr_dehaloed: col(|s| s.psnr_dehaloed),
        median_ssim_degraded: col(|s| s.ssim_degraded),
        median_ssim_dehaloed: col(|s| s.ssim_dehaloed),
    };
    write_json(&out_dir.join("pipeline_summary.json"), &summary)?;
    log::info!("pipeline: {} processed, {} failed", summary.processed, summary.failed);
    Ok(PipelineOutcome {
        images,
        summary,
        failures,
    })
}
