use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use halosep_cli::commands::{bench, eval, gradcheck, pipeline, synth, train};
use halosep_cli::{exit_code, with_pool, CastMode, PipelineConfig, EXIT_FAILURE, EXIT_OK};

const DEFAULT_OUT: &str = "halosep-out";

#[derive(Parser)]
#[command(name = "halosep", version, about = "Separate and remove artificial-light halos from underwater images")]
struct Cli {
    /// Seed for synthesis, initialization and patch sampling.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// TOML configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads for batch commands (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Only print errors.
    #[arg(long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate seeded (reference, degraded, halo) triples and a manifest.
    Synth {
        /// Directory of reference images.
        #[arg(long, conflicts_with = "procedural", required_unless_present = "procedural")]
        refs: Option<PathBuf>,
        /// Use this many procedural references instead of a directory.
        #[arg(long)]
        procedural: Option<usize>,
        /// Halos drawn per reference.
        #[arg(long, default_value_t = 2)]
        per_image: usize,
        /// Colour cast applied before the halo (overrides the config).
        #[arg(long, value_enum)]
        cast: Option<CastMode>,
    },
    /// Separate and remove halos; optionally run the recovery network.
    Pipeline {
        /// Images or directories of images.
        #[arg(conflicts_with = "manifest", required_unless_present = "manifest")]
        inputs: Vec<PathBuf>,
        /// Process every record of a manifest and score against references.
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// Recovery network checkpoint.
        #[arg(long, value_name = "CHECKPOINT")]
        recover: Option<PathBuf>,
    },
    /// Score predictions with the full metric suite.
    Eval {
        /// Directory of predictions named `<record>.png`.
        #[arg(long)]
        pred: PathBuf,
        /// Manifest with references; without it only no-reference metrics are computed.
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
    /// Train the recovery network on dehaloed manifest pairs.
    TrainToy {
        #[arg(long)]
        manifest: PathBuf,
        /// Override the configured number of steps.
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long, value_enum, default_value_t = train::InitMode::He)]
        init: train::InitMode,
    },
    /// Compare analytic and central-difference gradients of every op.
    Gradcheck {
        /// Perturb this op's analytic gradient (negative control).
        #[arg(long, hide = true)]
        corrupt: Option<String>,
    },
    /// Time the main stages on a procedural scene.
    Bench {
        #[arg(long, default_value_t = 256)]
        size: usize,
        #[arg(long, default_value_t = 5)]
        runs: usize,
    },
}

fn status(failed: usize) -> u8 {
    if failed == 0 {
        EXIT_OK
    } else {
        EXIT_FAILURE
    }
}

fn run(cli: Cli) -> anyhow::Result<u8> {
    let mut cfg = match &cli.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.train.seed = seed;
    }
    let out = cli
        .out
        .clone()
        .or_else(|| cfg.out_dir.clone())
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT));
    let seed = cli.seed.unwrap_or(0);
    let quiet = cli.quiet;
    let stdout = std::io::stdout();
    match cli.command {
        Command::Synth {
            refs,
            procedural,
            per_image,
            cast,
        } => {
            if let Some(c) = cast {
                cfg.synth.cast = c;
            }
            let source = match (refs, procedural) {
                (Some(dir), _) => synth::References::Dir(dir),
                (None, Some(n)) => synth::References::Procedural(n),
                (None, None) => unreachable!("clap requires one source"),
            };
            let o = with_pool(cli.jobs, || synth::cmd_synth(&source, &out, per_image, seed, &cfg))??;
            if !quiet {
                println!("{} records -> {}", o.manifest.records.len(), o.manifest_path.display());
            }
            Ok(status(o.failures.len()))
        }
        Command::Pipeline {
            inputs,
            manifest,
            recover,
        } => {
            let input = match manifest {
                Some(m) => pipeline::PipelineInput::Manifest(m),
                None => pipeline::PipelineInput::Images(inputs),
            };
            let o = with_pool(cli.jobs, || {
                pipeline::cmd_pipeline(&input, &cfg, recover.as_deref(), &out)
            })??;
            if !quiet {
                println!("{}", serde_json::to_string_pretty(&o.summary)?);
            }
            Ok(status(o.failures.len()))
        }
        Command::Eval { pred, manifest } => {
            let o = with_pool(cli.jobs, || eval::cmd_eval(manifest.as_deref(), &pred, &cfg, &out))??;
            if !quiet {
                println!("{}", serde_json::to_string_pretty(&o.report.summary())?);
            }
            Ok(status(o.failures.len()))
        }
        Command::TrainToy { manifest, steps, init } => {
            if let Some(s) = steps {
                cfg.train.steps = s;
                cfg.validate().map_err(halosep_cli::UsageError)?;
            }
            let o = with_pool(cli.jobs, || train::cmd_train_toy(&manifest, &cfg, init, &out))??;
            if !quiet {
                println!("{}", serde_json::to_string_pretty(&o.summary)?);
            }
            Ok(status(o.failures.len()))
        }
        Command::Gradcheck { corrupt } => {
            let seed = cli.seed.unwrap_or(halosep_core::recovery::gradcheck::DEFAULT_SEED);
            let report = gradcheck::cmd_gradcheck(seed, corrupt.as_deref(), cli.out.as_deref())?;
            if !quiet {
                gradcheck::print_report(&report, stdout.lock())?;
            }
            Ok(status(usize::from(!report.passed())))
        }
        Command::Bench { size, runs } => {
            let report = bench::cmd_bench(size, runs, seed, &cfg, cli.out.as_deref().map(Path::new))?;
            if !quiet {
                bench::print_report(&report, stdout.lock())?;
            }
            Ok(EXIT_OK)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.quiet { "error" } else { "info" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            log::error!("{e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
