//! Command-line front end: synthetic data generation, training, evaluation,
//! inference, operator-agreement reports, and gradient verification.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use icsinet::pipeline::agreement::{cmd_agreement, AgreementMode};
use icsinet::pipeline::evaluate::cmd_eval;
use icsinet::pipeline::infer::cmd_infer;
use icsinet::pipeline::train::cmd_train;
use icsinet::pipeline::verify::{micro_end_to_end_max_rel_err, per_op_checks};
use icsinet::pipeline::{init_thread_pool, io_err, PipelineError, RunConfig};
use icsinet::synthgen::{generate_dataset, SceneConfig};

#[derive(Parser)]
#[command(
    name = "icsinet",
    about = "Microinjection video analysis: segmentation + needle tip localization",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Inter,
    Intra,
    Both,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic labeled dataset (PNG frames + JSON annotations).
    GenData {
        /// Scene config JSON; defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        count: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model from a run config JSON.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a checkpoint on a labeled dataset.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run inference on a PNG file or a directory of PNGs.
    Infer {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Inter/intra-operator agreement statistics from annotation JSONs.
    Agreement {
        #[arg(long)]
        annotations: PathBuf,
        #[arg(long, value_enum, default_value = "both")]
        mode: ModeArg,
        /// Rasterization size for polygon IoU.
        #[arg(long, default_value_t = 512)]
        mask_size: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Finite-difference gradient verification of every differentiable op.
    Gradcheck {
        /// Also run the end-to-end micro-model check (slower).
        #[arg(long)]
        full: bool,
    },
}

fn load_scene_config(path: Option<&PathBuf>) -> Result<SceneConfig, PipelineError> {
    match path {
        None => Ok(SceneConfig::default()),
        Some(p) => {
            let bytes = std::fs::read(p).map_err(io_err(p))?;
            serde_json::from_slice(&bytes).map_err(|source| PipelineError::Json {
                path: p.clone(),
                source,
            })
        }
    }
}

fn run(cli: Cli) -> Result<(), PipelineError> {
    match cli.command {
        Command::GenData { config, count, out } => {
            let cfg = load_scene_config(config.as_ref())?;
            let manifest = generate_dataset(&cfg, count, &out)?;
            println!(
                "wrote {} samples to {} (train/val/test split in manifest.json)",
                manifest.samples.len(),
                out.display()
            );
        }
        Command::Train { config, out } => {
            let cfg = RunConfig::from_json_file(&config)?;
            let outcome = cmd_train(&cfg, &out)?;
            println!("trained {} steps", outcome.steps_run);
            if let Some(best) = outcome.best {
                println!(
                    "best (step {}): iou oolemma {:.3}, iou pipette {:.3}, tip {:.2} px",
                    outcome.best_step,
                    best.iou_oolemma.mean,
                    best.iou_pipette.mean,
                    best.tip_px.mean
                );
            }
            println!("checkpoints: {}", outcome.best_ckpt.display());
        }
        Command::Eval { ckpt, data, out } => {
            let report = cmd_eval(&ckpt, &data, &out)?;
            print!("{}", std::fs::read_to_string(&report.report_txt).unwrap_or_default());
        }
        Command::Infer { ckpt, input, out } => {
            let summary = cmd_infer(&ckpt, &input, &out)?;
            println!("inferred {} frame(s), output in {}", summary.ok.len(), out.display());
            for (path, err) in &summary.failed {
                eprintln!("failed {}: {err}", path.display());
            }
            if summary.ok.is_empty() {
                return Err(PipelineError::Config("all inputs failed".into()));
            }
        }
        Command::Agreement {
            annotations,
            mode,
            mask_size,
            out,
        } => {
            let mode = match mode {
                ModeArg::Inter => AgreementMode::Inter,
                ModeArg::Intra => AgreementMode::Intra,
                ModeArg::Both => AgreementMode::Both,
            };
            let outcome = cmd_agreement(&annotations, mode, mask_size, &out)?;
            print!(
                "{}",
                std::fs::read_to_string(&outcome.report_txt).unwrap_or_default()
            );
        }
        Command::Gradcheck { full } => {
            let mut worst: f64 = 0.0;
            for check in per_op_checks() {
                println!("{:<22} max rel err {:.3e}", check.name, check.max_rel_err);
                worst = worst.max(check.max_rel_err);
            }
            let op_tol = 1e-4;
            if worst >= op_tol {
                return Err(PipelineError::Config(format!(
                    "per-op gradient check failed: worst {worst:.3e} >= {op_tol:.0e}"
                )));
            }
            if full {
                let e2e = micro_end_to_end_max_rel_err(50, 1e-5);
                println!("{:<22} max rel err {:.3e}", "end_to_end_micro", e2e);
                if e2e >= 1e-3 {
                    return Err(PipelineError::Config(format!(
                        "end-to-end gradient check failed: {e2e:.3e} >= 1e-3"
                    )));
                }
            }
            println!("gradient checks passed");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    init_thread_pool();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
