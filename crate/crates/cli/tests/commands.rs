use std::path::{Path, PathBuf};
use std::process::Command;

use halosep_cli::commands::eval::{cmd_eval, prediction_path};
use halosep_cli::commands::pipeline::{cmd_pipeline, PipelineInput};
use halosep_cli::commands::synth::{cmd_synth, References};
use halosep_cli::commands::train::{cmd_train_toy, InitMode, LOSS_FILE};
use halosep_cli::{exit_code, LoadedManifest, PipelineConfig, EXIT_USAGE};
use halosep_core::metrics::METRIC_NAMES;
use halosep_core::recovery::{save_checkpoint, RadnParams};
use halosep_core::synth::reference_texture;
use halosep_core::{load_image, psnr, save_image, Error};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_halosep"))
}

fn small_cfg() -> PipelineConfig {
    let mut cfg = PipelineConfig::default();
    cfg.synth.procedural_size = 64;
    cfg.train.steps = 3;
    cfg.train.patch_size = 32;
    cfg.network.blocks = 1;
    cfg
}

fn synth_into(dir: &Path, refs: usize, per: usize, seed: u64) -> LoadedManifest {
    cmd_synth(&References::Procedural(refs), dir, per, seed, &small_cfg()).unwrap();
    LoadedManifest::load(dir).unwrap()
}

fn refs_dir(dir: &Path, n: u64) -> PathBuf {
    let d = dir.join("refs");
    std::fs::create_dir_all(&d).unwrap();
    for i in 0..n {
        save_image(&reference_texture(48, 40, i).unwrap(), d.join(format!("r{i}.png"))).unwrap();
    }
    d
}

#[test]
fn synth_counts_and_attenuates() {
    let tmp = tempfile::tempdir().unwrap();
    let refs = refs_dir(tmp.path(), 5);
    let out = tmp.path().join("data");
    let o = cmd_synth(&References::Dir(refs), &out, 2, 1, &small_cfg()).unwrap();
    assert_eq!(o.manifest.records.len(), 10);
    let m = LoadedManifest::load(&o.manifest_path).unwrap();
    for r in m.records() {
        let reference = load_image(m.resolve(&r.reference_path)).unwrap();
        let degraded = load_image(m.resolve(&r.degraded_path)).unwrap();
        assert!(degraded.data().iter().zip(reference.data()).all(|(d, r)| d <= r));
    }
}

#[test]
fn halo_files_regenerate_from_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let m = synth_into(&tmp.path().join("data"), 2, 2, 4);
    for r in m.records() {
        let stored = m.resolve(&r.halo_path);
        let again = tmp.path().join("again.png");
        r.halo(64, 64).unwrap().save_png(&again).unwrap();
        assert_eq!(std::fs::read(&stored).unwrap(), std::fs::read(&again).unwrap());
    }
}

#[test]
fn synth_skips_unreadable_and_rejects_empty() {
    let tmp = tempfile::tempdir().unwrap();
    let refs = refs_dir(tmp.path(), 2);
    std::fs::write(refs.join("broken.png"), b"not a png").unwrap();
    let o = cmd_synth(&References::Dir(refs), &tmp.path().join("a"), 1, 0, &small_cfg()).unwrap();
    assert_eq!(o.manifest.records.len(), 2);
    assert_eq!(o.failures.len(), 1);

    let empty = tmp.path().join("empty");
    std::fs::create_dir_all(&empty).unwrap();
    let err = cmd_synth(&References::Dir(empty), &tmp.path().join("b"), 1, 0, &small_cfg()).unwrap_err();
    assert!(matches!(err.downcast_ref::<Error>(), Some(Error::EmptyDataset(_))));
    assert_eq!(exit_code(&err), EXIT_USAGE);
}

#[test]
fn pipeline_on_undegraded_input_is_near_identity() {
    let tmp = tempfile::tempdir().unwrap();
    let input = tmp.path().join("clean.png");
    save_image(&reference_texture(96, 96, 3).unwrap(), &input).unwrap();
    let out = tmp.path().join("out");
    let o = cmd_pipeline(&PipelineInput::Images(vec![input.clone()]), &small_cfg(), None, &out).unwrap();
    assert!(o.failures.is_empty());
    let before = load_image(&input).unwrap();
    let after = load_image(out.join("dehaloed/clean.png")).unwrap();
    let p = psnr(&before, &after).unwrap();
    assert!(p >= 40.0, "psnr {p}");
}

#[test]
fn pipeline_improves_synthetic_set_and_skips_bad_files() {
    let tmp = tempfile::tempdir().unwrap();
    let m = synth_into(&tmp.path().join("data"), 3, 2, 9);
    let o = cmd_pipeline(
        &PipelineInput::Manifest(m.base.clone()),
        &small_cfg(),
        None,
        &tmp.path().join("out"),
    )
    .unwrap();
    let s = &o.summary;
    assert_eq!(s.processed, 6);
    assert!(s.median_psnr_dehaloed.unwrap() > s.median_psnr_degraded.unwrap());
    assert!(tmp.path().join("out/diagnostics/0000_proc_000.json").is_file());

    let bad = tmp.path().join("bad.png");
    std::fs::write(&bad, b"garbage").unwrap();
    let good = m.resolve(&m.records()[0].degraded_path);
    let o = cmd_pipeline(&PipelineInput::Images(vec![good, bad]), &small_cfg(), None, &tmp.path().join("o2")).unwrap();
    assert_eq!(o.images.len(), 1);
    assert_eq!(o.failures.len(), 1);
}

#[test]
fn pipeline_zero_checkpoint_recovers_to_dehaloed() {
    let tmp = tempfile::tempdir().unwrap();
    let m = synth_into(&tmp.path().join("data"), 1, 1, 2);
    let ckpt = tmp.path().join("zero.radn");
    save_checkpoint(&RadnParams::zeros(small_cfg().network).unwrap(), &ckpt).unwrap();
    let out = tmp.path().join("out");
    cmd_pipeline(&PipelineInput::Manifest(m.base.clone()), &small_cfg(), Some(&ckpt), &out).unwrap();
    let name = &m.records()[0].name;
    let a = std::fs::read(out.join(format!("dehaloed/{name}.png"))).unwrap();
    let b = std::fs::read(out.join(format!("recovered/{name}.png"))).unwrap();
    assert_eq!(a, b);
}

#[test]
fn eval_reference_copies_score_perfectly() {
    let tmp = tempfile::tempdir().unwrap();
    let m = synth_into(&tmp.path().join("data"), 2, 2, 5);
    let pred = tmp.path().join("pred");
    std::fs::create_dir_all(&pred).unwrap();
    for r in m.records() {
        std::fs::copy(m.resolve(&r.reference_path), prediction_path(&pred, &r.name)).unwrap();
    }
    let o = cmd_eval(Some(&m.base), &pred, &small_cfg(), &tmp.path().join("eval")).unwrap();
    assert_eq!(o.report.rows.len(), 4);
    for row in &o.report.rows {
        assert_eq!(row.ssim, Some(1.0));
        assert_eq!(row.mse, Some(0.0));
    }
    let csv = std::fs::read_to_string(tmp.path().join("eval/metrics.csv")).unwrap();
    let header = csv.lines().find(|l| !l.starts_with('#')).unwrap();
    assert_eq!(header, format!("image,{}", METRIC_NAMES.join(",")));
    assert_eq!(header, "image,mse,psnr,ssim,pcqi,entropy,uiqm,uciqe");
}

#[test]
fn eval_aggregates_ignore_record_order() {
    let tmp = tempfile::tempdir().unwrap();
    let m = synth_into(&tmp.path().join("data"), 3, 2, 6);
    let pred = m.base.join("degraded");
    let a = cmd_eval(Some(&m.base), &pred, &small_cfg(), &tmp.path().join("e1")).unwrap();

    let mut shuffled = m.manifest.clone();
    shuffled.records.reverse();
    shuffled.records.swap(0, 2);
    let path = m.base.join("shuffled.json");
    shuffled.save(&path).unwrap();
    let b = cmd_eval(Some(&path), &pred, &small_cfg(), &tmp.path().join("e2")).unwrap();
    assert_ne!(a.report.rows, b.report.rows);
    assert_eq!(a.report.summary(), b.report.summary());
}

#[test]
fn eval_lists_missing_predictions() {
    let tmp = tempfile::tempdir().unwrap();
    let m = synth_into(&tmp.path().join("data"), 2, 1, 7);
    let pred = tmp.path().join("pred");
    std::fs::create_dir_all(&pred).unwrap();
    let first = &m.records()[0];
    std::fs::copy(m.resolve(&first.degraded_path), prediction_path(&pred, &first.name)).unwrap();
    let err = cmd_eval(Some(&m.base), &pred, &small_cfg(), &tmp.path().join("e")).unwrap_err();
    match err.downcast_ref::<Error>() {
        Some(Error::MissingPrediction(names)) => assert_eq!(names, &vec![m.records()[1].name.clone()]),
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn eval_without_manifest_is_no_reference_only() {
    let tmp = tempfile::tempdir().unwrap();
    let m = synth_into(&tmp.path().join("data"), 1, 2, 3);
    let o = cmd_eval(None, &m.base.join("degraded"), &small_cfg(), &tmp.path().join("e")).unwrap();
    assert_eq!(o.report.rows.len(), 2);
    for row in &o.report.rows {
        assert!(row.mse.is_none() && row.ssim.is_none());
        assert!(row.uiqm.is_some() && row.uciqe.is_some());
    }
}

#[test]
fn train_toy_writes_one_row_per_step_and_needs_four_records() {
    let tmp = tempfile::tempdir().unwrap();
    let m = synth_into(&tmp.path().join("data"), 2, 2, 1);
    let out = tmp.path().join("train");
    let o = cmd_train_toy(&m.base, &small_cfg(), InitMode::He, &out).unwrap();
    assert_eq!(o.curve.steps.len(), 3);
    let csv = std::fs::read_to_string(out.join(LOSS_FILE)).unwrap();
    assert_eq!(csv.lines().count(), 4);
    assert!(o.checkpoint_path.is_file());

    let few = synth_into(&tmp.path().join("few"), 3, 1, 1);
    let err = cmd_train_toy(&few.base, &small_cfg(), InitMode::He, &out).unwrap_err();
    assert!(matches!(err.downcast_ref::<Error>(), Some(Error::Data(_))));
    assert_eq!(exit_code(&err), EXIT_USAGE);
}

#[test]
fn train_toy_same_seed_same_checkpoint() {
    let tmp = tempfile::tempdir().unwrap();
    let m = synth_into(&tmp.path().join("data"), 2, 2, 2);
    let a = cmd_train_toy(&m.base, &small_cfg(), InitMode::He, &tmp.path().join("a")).unwrap();
    let b = cmd_train_toy(&m.base, &small_cfg(), InitMode::He, &tmp.path().join("b")).unwrap();
    assert_eq!(
        std::fs::read(a.checkpoint_path).unwrap(),
        std::fs::read(b.checkpoint_path).unwrap()
    );
}

#[test]
fn binary_exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("data");
    let st = bin()
        .args(["synth", "--procedural", "1", "--per-image", "1", "--quiet", "--out"])
        .arg(&out)
        .status()
        .unwrap();
    assert_eq!(st.code(), Some(0));

    let st = bin()
        .args(["pipeline", "--quiet", "--manifest"])
        .arg(&out)
        .arg("--recover")
        .arg(tmp.path().join("missing.radn"))
        .arg("--out")
        .arg(tmp.path().join("p"))
        .status()
        .unwrap();
    assert_eq!(st.code(), Some(2));

    let bad_cfg = tmp.path().join("bad.toml");
    std::fs::write(&bad_cfg, "[separation]\nlambda = -1\n").unwrap();
    let st = bin().args(["gradcheck", "--quiet", "--config"]).arg(&bad_cfg).status().unwrap();
    assert_eq!(st.code(), Some(2));

    let st = bin().args(["eval", "--quiet"]).status().unwrap();
    assert_eq!(st.code(), Some(2));
}

#[test]
fn binary_gradcheck_default_and_corrupted() {
    let ok = bin().arg("gradcheck").output().unwrap();
    assert_eq!(ok.status.code(), Some(0));
    let text = String::from_utf8(ok.stdout).unwrap();
    for op in halosep_core::recovery::gradcheck::OPS {
        let n = text.lines().filter(|l| l.split_whitespace().next() == Some(op)).count();
        assert_eq!(n, 1, "{op} listed {n} times");
    }
    let bad = bin().args(["gradcheck", "--quiet", "--corrupt", "conv2d_3x3"]).status().unwrap();
    assert_eq!(bad.code(), Some(1));
}
