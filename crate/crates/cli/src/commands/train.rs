//! Toy training of the recovery network on dehaloed manifest pairs.

use std::path::{Path, PathBuf};

use halosep_core::recovery::train::MIN_TRAIN_PAIRS;
use halosep_core::recovery::{save_checkpoint, train_toy, LossCurve, RadnParams, Sample};
use halosep_core::{load_image, Error};
use rayon::prelude::*;
use serde::Serialize;

use crate::manifest::LoadedManifest;
use crate::{create_dir, dehalo, write_json, Failures, PipelineConfig};

pub const CHECKPOINT_FILE: &str = "checkpoint.radn";
pub const LOSS_FILE: &str = "loss.csv";
pub const SUMMARY_FILE: &str = "train_summary.json";

/// Starting parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, clap::ValueEnum)]
pub enum InitMode {
    /// He-initialized layers with zero output convolutions.
    #[default]
    He,
    /// All zeros.
    Zeros,
}

#[derive(Debug, Clone, Serialize)]
pub struct TrainSummary {
    pub pairs: usize,
    pub skipped: usize,
    pub steps: usize,
    pub seed: u64,
    pub first_total: f64,
    pub last_total: f64,
    /// Mean of `total + mu2` (distance to the loss lower bound) over the
    /// first and last tenth of the steps.
    pub head_gap: f64,
    pub tail_gap: f64,
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub params: RadnParams,
    pub curve: LossCurve,
    pub summary: TrainSummary,
    pub checkpoint_path: PathBuf,
    pub failures: Failures,
}

/// Fraction of the run averaged at each end of the loss curve.
pub const CURVE_WINDOW: f64 = 0.1;

/// Dehaloes every record and pairs the result with its reference.
pub fn training_pairs(m: &LoadedManifest, cfg: &PipelineConfig) -> (Vec<Sample>, Failures) {
    let results: Vec<anyhow::Result<Sample>> = m
        .records()
        .par_iter()
        .map(|r| {
            let z = load_image(m.resolve(&r.degraded_path))?;
            let reference = load_image(m.resolve(&r.reference_path))?;
            let d = dehalo(&z, cfg)?;
            Ok(Sample {
                center: d.center(),
                input: d.image,
                reference,
            })
        })
        .collect();
    let mut samples = Vec::new();
    let mut failures = Failures::default();
    for (r, s) in m.records().iter().zip(results) {
        match s {
            Ok(s) => samples.push(s),
            Err(e) => failures.push(&r.name, format!("{e:#}")),
        }
    }
    (samples, failures)
}

/// Trains from `init` and writes the checkpoint, loss curve and summary.
pub fn cmd_train_toy(
    manifest: &Path,
    cfg: &PipelineConfig,
    init: InitMode,
    out_dir: &Path,
) -> anyhow::Result<TrainOutcome> {
    let m = LoadedManifest::load(manifest)?;
    if m.records().len() < MIN_TRAIN_PAIRS {
        return Err(Error::Data(format!(
            "need at least {MIN_TRAIN_PAIRS} records, manifest has {}",
            m.records().len()
        ))
        .into());
    }
    let (samples, failures) = training_pairs(&m, cfg);
    let start = match init {
        InitMode::He => RadnParams::init_seeded(cfg.network, cfg.train.seed)?,
        InitMode::Zeros => RadnParams::zeros(cfg.network)?,
    };
    let (params, curve) = train_toy(&start, &samples, &cfg.train)?;
    create_dir(out_dir)?;
    let checkpoint_path = out_dir.join(CHECKPOINT_FILE);
    save_checkpoint(&params, &checkpoint_path)?;
    curve.save_csv(&out_dir.join(LOSS_FILE))?;
    let mu2 = cfg.train.loss_weights.mu2;
    let summary = TrainSummary {
        pairs: samples.len(),
        skipped: failures.len(),
        steps: curve.steps.len(),
        seed: cfg.train.seed,
        first_total: curve.steps[0].total,
        last_total: curve.steps[curve.steps.len() - 1].total,
        head_gap: curve.head_mean(CURVE_WINDOW, |t| t.total + mu2),
        tail_gap: curve.tail_mean(CURVE_WINDOW, |t| t.total + mu2),
    };
    write_json(&out_dir.join(SUMMARY_FILE), &summary)?;
    log::info!(
        "train-toy: {} steps on {} pairs, loss gap {:.4} -> {:.4}",
        summary.steps,
        summary.pairs,
        summary.head_gap,
        summary.tail_gap
    );
    Ok(TrainOutcome {
        params,
        curve,
        summary,
        checkpoint_path,
        failures,
    })
}
