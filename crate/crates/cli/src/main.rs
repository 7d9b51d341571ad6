//! `prognostics <command> --config <path> [--seed N] [--out DIR]`
//!
//! Prints a one-line JSON summary on success and a one-line JSON error on
//! stderr, with a nonzero exit code, on failure.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};
use prognostics_core::experiment::{self, ExperimentConfig};
use prognostics_core::{Error, Result};
use serde_json::{json, Value};

#[derive(Parser)]
#[command(name = "prognostics", version, about = "Concept-bottleneck RUL study driver")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Experiment config (JSON); omitted fields take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Root seed, overriding the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory, overriding the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Write synthetic fleet CSV files.
    Generate,
    /// Train every configured model family.
    Train,
    /// Evaluate trained models on the test units.
    Evaluate,
    /// Retrain with 1..=k_max concepts and run the leakage diagnostic.
    Ablate,
    /// Apply the inspection policy and report before/after metrics.
    Intervene,
    /// Write latent codes and concept embeddings per window.
    ExportEmbeddings,
    /// Serve trained models over HTTP.
    Serve,
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let path = cli.config.as_ref().ok_or_else(|| Error::Usage("--config <path> is required".into()))?;
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.out_dir = out.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn paths(ps: &[PathBuf]) -> Vec<String> {
    ps.iter().map(|p| p.display().to_string()).collect()
}

fn run(cli: &Cli) -> Result<Value> {
    let cfg = load_config(cli)?;
    let out = cfg.out_dir.display().to_string();
    Ok(match cli.command {
        Command::Generate => json!({ "command": "generate", "files": paths(&experiment::generate(&cfg)?) }),
        Command::Train => {
            let trained = experiment::train(&cfg)?;
            let models: Vec<Value> = trained
                .iter()
                .map(|t| {
                    json!({
                        "family": t.family,
                        "checkpoint": t.checkpoint.display().to_string(),
                        "loss_curve": t.loss_curve.display().to_string(),
                        "final_loss": t.final_loss,
                    })
                })
                .collect();
            json!({ "command": "train", "models": models })
        }
        Command::Evaluate => {
            let eval = experiment::evaluate_models(&cfg)?;
            let rows: Vec<Value> = eval
                .reports
                .iter()
                .map(|r| json!({ "model": r.model, "rmse": r.rmse, "nasa": r.nasa, "concept_accuracy": r.concept_accuracy, "auc": r.auc, "cas": r.cas }))
                .collect();
            json!({ "command": "evaluate", "dir": cfg.out_dir.join("eval").display().to_string(), "reports": rows })
        }
        Command::Ablate => {
            let res = experiment::ablate(&cfg)?;
            json!({ "command": "ablate", "dir": cfg.out_dir.join("ablation").display().to_string(), "rows": res.rows, "leakage": res.leakage })
        }
        Command::Intervene => {
            let rows: Vec<Value> = experiment::intervene(&cfg)?
                .iter()
                .map(|s| {
                    let n: usize = s.logs.iter().map(|l| l.n_applied()).sum();
                    json!({
                        "family": s.family,
                        "rmse_before": s.before.rmse,
                        "rmse_after": s.after.rmse,
                        "nasa_before": s.before.nasa,
                        "nasa_after": s.after.nasa,
                        "overrides": n,
                    })
                })
                .collect();
            json!({ "command": "intervene", "dir": cfg.out_dir.join("interventions").display().to_string(), "families": rows })
        }
        Command::ExportEmbeddings => json!({ "command": "export-embeddings", "files": paths(&experiment::export(&cfg)?) }),
        Command::Serve => {
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(prognostics_service::serve(&cfg))?;
            json!({ "command": "serve", "out": out })
        }
    })
}

fn fail(kind: &str, message: &str) -> ExitCode {
    eprintln!("{}", json!({ "error": { "kind": kind, "message": message } }));
    ExitCode::FAILURE
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => e.exit(),
        Err(e) => {
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("invalid arguments").trim_start_matches("error: ");
            return fail("usage", first);
        }
    };
    match run(&cli) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => fail(e.kind(), &e.to_string()),
    }
}
