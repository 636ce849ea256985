//! Wall-clock timings of the main stages on a procedural scene.

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use halosep_core::radial::{apply_halo, estimate_center, synth_halo, HaloParams, LightCenter};
use halosep_core::recovery::{radn_backward, radn_forward, RadnParams, Sample};
use halosep_core::synth::reference_texture;
use halosep_core::{blind_separate, evaluate_selected, refine_center, remove_halo};
use serde::Serialize;

use crate::{write_json, PipelineConfig, UsageError};

#[derive(Debug, Clone, Serialize)]
pub struct StageTiming {
    pub stage: String,
    pub runs: usize,
    pub median_ms: f64,
    pub min_ms: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchReport {
    pub size: usize,
    pub stages: Vec<StageTiming>,
}

fn time<T>(stage: &str, runs: usize, mut f: impl FnMut() -> anyhow::Result<T>) -> anyhow::Result<StageTiming> {
    let mut ms = Vec::with_capacity(runs);
    for _ in 0..runs {
        let t = Instant::now();
        std::hint::black_box(f()?);
        ms.push(t.elapsed().as_secs_f64() * 1e3);
    }
    ms.sort_by(f64::total_cmp);
    Ok(StageTiming {
        stage: stage.to_string(),
        runs,
        median_ms: ms[runs / 2],
        min_ms: ms[0],
    })
}

pub fn cmd_bench(
    size: usize,
    runs: usize,
    seed: u64,
    cfg: &PipelineConfig,
    out_dir: Option<&Path>,
) -> anyhow::Result<BenchReport> {
    if size < 32 || runs == 0 {
        return Err(UsageError("bench needs --size >= 32 and --runs >= 1".into()).into());
    }
    let reference = reference_texture(size, size, seed)?;
    let center = LightCenter::new(0.45 * size as f64, 0.55 * size as f64);
    let halo = synth_halo(size, size, &HaloParams::gaussian(0.3 * size as f64, 0.2), center)?;
    let z = apply_halo(&reference, &halo)?;
    let sep_cfg = &cfg.separation;
    let init = estimate_center(&z, cfg.center.top_fraction)?.center;
    let sep = blind_separate(&z, center, sep_cfg)?;
    let net = RadnParams::init_seeded(cfg.network, seed)?;
    let patch = cfg.train.patch_size.min(size);
    let sample = Sample {
        input: z.crop(0, 0, patch, patch)?,
        reference: reference.crop(0, 0, patch, patch)?,
        center,
    };
    let mu = cfg.train.loss_weights;

    let stages = vec![
        time("estimate_center", runs, || Ok(estimate_center(&z, cfg.center.top_fraction)?))?,
        time("refine_center", runs, || Ok(refine_center(&z, init, sep_cfg)?))?,
        time("blind_separate", runs, || Ok(blind_separate(&z, center, sep_cfg)?))?,
        time("remove_halo", runs, || Ok(remove_halo(&z, &sep.halo, sep_cfg.div_floor)?))?,
        time("metrics", runs, || Ok(evaluate_selected("bench", &z, Some(&reference), &cfg.metrics)?))?,
        time("radn_forward", runs, || Ok(radn_forward(&net, &z)?))?,
        time("radn_backward_patch", runs, || {
            Ok(radn_backward(&net, std::slice::from_ref(&sample), &mu)?)
        })?,
    ];
    let report = BenchReport { size, stages };
    if let Some(dir) = out_dir {
        crate::create_dir(dir)?;
        write_json(&dir.join("bench.json"), &report)?;
    }
    Ok(report)
}

pub fn print_report(report: &BenchReport, mut out: impl Write) -> std::io::Result<()> {
    writeln!(out, "bench {0}x{0}", report.size)?;
    writeln!(out, "{:<20} {:>6} {:>12} {:>12}", "stage", "runs", "median_ms", "min_ms")?;
    for s in &report.stages {
        writeln!(out, "{:<20} {:>6} {:>12.3} {:>12.3}", s.stage, s.runs, s.median_ms, s.min_ms)?;
    }
    Ok(())
}

