//! Metric report over predictions, against manifest references when given.

use std::path::{Path, PathBuf};

use halosep_core::{evaluate_selected, load_image, Error, MetricReport, MetricRow};
use rayon::prelude::*;

use crate::manifest::LoadedManifest;
use crate::{create_dir, file_stem, list_images, Failures, PipelineConfig};

pub const CSV_FILE: &str = "metrics.csv";
pub const SUMMARY_FILE: &str = "metrics_summary.json";

#[derive(Debug)]
pub struct EvalOutcome {
    pub report: MetricReport,
    pub failures: Failures,
}

struct Item {
    name: String,
    pred: PathBuf,
    reference: Option<PathBuf>,
}

/// Prediction for record `name`: `<pred_dir>/<name>.png`.
pub fn prediction_path(pred_dir: &Path, name: &str) -> PathBuf {
    pred_dir.join(format!("{name}.png"))
}

fn items(manifest: Option<&Path>, pred_dir: &Path) -> anyhow::Result<Vec<Item>> {
    let Some(path) = manifest else {
        return Ok(list_images(pred_dir)?
            .into_iter()
            .map(|p| Item {
                name: file_stem(&p),
                pred: p,
                reference: None,
            })
            .collect());
    };
    let m = LoadedManifest::load(path)?;
    let items: Vec<Item> = m
        .records()
        .iter()
        .map(|r| Item {
            name: r.name.clone(),
            pred: prediction_path(pred_dir, &r.name),
            reference: Some(m.resolve(&r.reference_path)),
        })
        .collect();
    let missing: Vec<String> = items.iter().filter(|i| !i.pred.is_file()).map(|i| i.name.clone()).collect();
    if !missing.is_empty() {
        return Err(Error::MissingPrediction(missing).into());
    }
    Ok(items)
}

fn score(item: &Item, cfg: &PipelineConfig) -> anyhow::Result<MetricRow> {
    let pred = load_image(&item.pred)?;
    // no-reference columns are still filled when the reference is unusable
    let reference = item.reference.as_ref().and_then(|p| match load_image(p) {
        Ok(r) if r.same_shape(&pred) => Some(r),
        Ok(_) => {
            log::warn!("{}: reference shape differs, scoring without it", item.name);
            None
        }
        Err(e) => {
            log::warn!("{}: {e}, scoring without reference", item.name);
            None
        }
    });
    Ok(evaluate_selected(&item.name, &pred, reference.as_ref(), &cfg.metrics)?)
}

/// Scores every prediction and writes `metrics.csv` and `metrics_summary.json`.
pub fn cmd_eval(
    manifest: Option<&Path>,
    pred_dir: &Path,
    cfg: &PipelineConfig,
    out_dir: &Path,
) -> anyhow::Result<EvalOutcome> {
    let items = items(manifest, pred_dir)?;
    let results: Vec<anyhow::Result<MetricRow>> = items.par_iter().map(|i| score(i, cfg)).collect();
    let mut report = MetricReport::default();
    let mut failures = Failures::default();
    for (item, r) in items.iter().zip(results) {
        match r {
            Ok(row) => report.rows.push(row),
            Err(e) => failures.push(&item.name, format!("{e:#}")),
        }
    }
    create_dir(out_dir)?;
    report.save(&out_dir.join(CSV_FILE), &out_dir.join(SUMMARY_FILE))?;
    log::info!("eval: {} scored, {} failed", report.rows.len(), failures.len());
    Ok(EvalOutcome { report, failures })
}
