//! Seeded synthesis of (reference, degraded, halo) triples.

use std::path::{Path, PathBuf};

use anyhow::Context;
use halosep_core::radial::{apply_halo, write_sidecar};
use halosep_core::synth::{apply_cast, record_rng, reference_texture, sample_cast, sample_halo};
use halosep_core::{load_image, save_image, ImageF};
use rand::Rng;
use rayon::prelude::*;

use crate::config::{CastMode, PipelineConfig};
use crate::manifest::{timestamp, Manifest, Record, MANIFEST_FILE};
use crate::{create_dir, file_stem, list_images, Failures};

/// Stream of the dataset-wide colour cast.
const CAST_STREAM: u64 = u64::MAX;
/// Streams below this one seed procedural references.
const PROCEDURAL_STREAM: u64 = u64::MAX - 1;

/// Where the references come from.
#[derive(Debug, Clone)]
pub enum References {
    Dir(PathBuf),
    /// `count` procedural textures of `PipelineConfig::synth.procedural_size`.
    Procedural(usize),
}

#[derive(Debug)]
pub struct SynthOutcome {
    pub manifest: Manifest,
    pub manifest_path: PathBuf,
    /// Unreadable references.
    pub failures: Failures,
}

fn procedural_refs(count: usize, seed: u64, side: usize, dir: &Path) -> anyhow::Result<Vec<PathBuf>> {
    (0..count as u64)
        .into_par_iter()
        .map(|i| {
            let tex_seed: u64 = record_rng(seed, PROCEDURAL_STREAM - i).random();
            let img = reference_texture(side, side, tex_seed)?;
            let path = dir.join(format!("proc_{i:03}.png"));
            save_image(&img, &path)?;
            Ok(path)
        })
        .collect()
}

/// Loads the references, copying them into `out/reference` unless they were
/// produced there.
fn gather_refs(
    refs: &References,
    out_dir: &Path,
    seed: u64,
    cfg: &PipelineConfig,
    failures: &mut Failures,
) -> anyhow::Result<Vec<(String, String, ImageF)>> {
    let ref_dir = out_dir.join("reference");
    create_dir(&ref_dir)?;
    let paths = match refs {
        References::Dir(dir) => list_images(dir)?,
        References::Procedural(n) => procedural_refs(*n, seed, cfg.synth.procedural_size, &ref_dir)?,
    };
    let mut loaded = Vec::new();
    for path in paths {
        let img = match load_image(&path) {
            Ok(img) if img.channels() == 3 => img,
            Ok(_) => {
                failures.push(path.display().to_string(), "reference is not RGB");
                continue;
            }
            Err(e) => {
                failures.push(path.display().to_string(), e);
                continue;
            }
        };
        let file_name = path.file_name().expect("listed files have names").to_string_lossy().into_owned();
        let dest = ref_dir.join(&file_name);
        if matches!(refs, References::Dir(_)) {
            std::fs::copy(&path, &dest).with_context(|| format!("copying {}", path.display()))?;
        }
        loaded.push((file_stem(&path), format!("reference/{file_name}"), img));
    }
    if loaded.is_empty() {
        let dir = match refs {
            References::Dir(d) => d.clone(),
            References::Procedural(_) => ref_dir,
        };
        return Err(halosep_core::Error::EmptyDataset(dir).into());
    }
    Ok(loaded)
}

/// Draws `n_per_image` halos per reference and writes degraded images, 16-bit
/// halo PNGs with parameter sidecars, and `manifest.json` into `out_dir`.
pub fn cmd_synth(
    refs: &References,
    out_dir: &Path,
    n_per_image: usize,
    seed: u64,
    cfg: &PipelineConfig,
) -> anyhow::Result<SynthOutcome> {
    if n_per_image == 0 {
        return Err(crate::UsageError("--per-image must be at least 1".into()).into());
    }
    let mut failures = Failures::default();
    let refs = gather_refs(refs, out_dir, seed, cfg, &mut failures)?;
    for sub in ["degraded", "halo"] {
        create_dir(&out_dir.join(sub))?;
    }
    let dataset_cast = sample_cast(&mut record_rng(seed, CAST_STREAM));
    let jobs: Vec<(usize, u64)> = (0..refs.len())
        .flat_map(|r| (0..n_per_image).map(move |k| (r, (r * n_per_image + k) as u64)))
        .collect();
    let records = jobs
        .par_iter()
        .map(|&(r, index)| {
            let (stem, ref_path, img) = &refs[r];
            let mut rng = record_rng(seed, index);
            let (params, center) = sample_halo(&cfg.synth.halo, img.height(), img.width(), &mut rng);
            let cast = match cfg.synth.cast {
                CastMode::None => None,
                CastMode::Dataset => Some(dataset_cast),
                CastMode::Record => Some(sample_cast(&mut rng)),
            };
            let name = format!("{index:04}_{stem}");
            let record = Record {
                reference_path: ref_path.clone(),
                degraded_path: format!("degraded/{name}.png"),
                halo_path: format!("halo/{name}.png"),
                center,
                halo_params: params,
                seed,
                index,
                cast,
                name,
            };
            let halo = record.halo(img.height(), img.width())?;
            let base = match cast {
                Some(g) => apply_cast(img, g)?,
                None => img.clone(),
            };
            let degraded = apply_halo(&base, &halo)?;
            save_image(&degraded, out_dir.join(&record.degraded_path))?;
            halo.save_png(out_dir.join(&record.halo_path))?;
            write_sidecar(out_dir.join(format!("halo/{}.txt", record.name)), &params, center)?;
            Ok(record)
        })
        .collect::<anyhow::Result<Vec<Record>>>()?;
    let manifest = Manifest {
        seed,
        created: timestamp(),
        n_per_image,
        records,
    };
    let manifest_path = out_dir.join(MANIFEST_FILE);
    manifest.save(&manifest_path)?;
    log::info!(
        "wrote {} records from {} references to {}",
        manifest.records.len(),
        refs.len(),
        out_dir.display()
    );
    Ok(SynthOutcome {
        manifest,
        manifest_path,
        failures,
    })
}
