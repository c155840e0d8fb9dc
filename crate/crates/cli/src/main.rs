//! `coldbench`: cold-split evaluation and variance-decomposition pipelines.
//!
//! Every subcommand writes its reports plus `manifest.json` into `--out`.
//! On failure it writes `error.json` there instead and exits nonzero.

mod commands;
mod config;
mod io;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand};
use serde::Serialize;

use commands::{AuditArgs, CalibrateArgs, CascadeArgs, FactorialArgs, FewShotArgs, LeakageArgs, NoiseArgs, PowerArgs};
use config::{FieldError, FileConfig, RunConfig};
use io::{Inputs, Outputs};

#[derive(Parser, Debug)]
#[command(name = "coldbench", version = env!("CARGO_PKG_VERSION"), about = "Cold-split benchmark evaluation and variance decomposition")]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args, Debug, Clone)]
struct GlobalArgs {
    /// TOML run configuration; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Cohort CSV.
    #[arg(long, global = true)]
    data: Option<PathBuf>,
    /// Synthetic cohort spec (JSON or TOML) used instead of --data.
    #[arg(long, global = true)]
    synth_spec: Option<PathBuf>,
    /// Precomputed fingerprints CSV (compound_id,fingerprint_hex).
    #[arg(long, global = true)]
    fingerprints: Option<PathBuf>,
    /// RANDOM_KFOLD, SCAFFOLD_KFOLD, LOTO, LOFO, TEMPORAL, CROSSLAB or SPECTRA.
    #[arg(long, global = true)]
    protocol: Option<String>,
    /// Comma-separated seeds; default the canonical ten.
    #[arg(long, global = true, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    /// Fold count, support sizes or top-k depending on the command.
    #[arg(long, global = true, value_delimiter = ',')]
    k: Option<Vec<usize>>,
    /// Similarity ceiling(s) for SPECTRA filtering.
    #[arg(long, global = true, value_delimiter = ',')]
    s_threshold: Option<Vec<f64>>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads; results do not depend on it.
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Binarisation scheme name.
    #[arg(long, global = true)]
    scheme: Option<String>,
    /// Target to family map CSV (target_id,family_id).
    #[arg(long, global = true)]
    family_map: Option<PathBuf>,
    /// Compound to scaffold key CSV.
    #[arg(long, global = true)]
    scaffold_keys: Option<PathBuf>,
    /// Compound to deduplication key CSV.
    #[arg(long, global = true)]
    dedup_keys: Option<PathBuf>,
    /// Trees in the reference forest.
    #[arg(long, global = true)]
    trees: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Load and validate a cohort CSV; report rejections and eligibility.
    Ingest,
    /// Construct fold assignments for a protocol and audit them.
    Folds,
    /// Evaluate a protocol across seeds.
    Run,
    /// Similarity-resolution sweep with AUSPC.
    Spectra,
    /// Random-CV, cross-lab and LOTO cascade with the inter-lab bound.
    Cascade(CascadeArgs),
    /// Label-noise degradation curve and bound projection.
    NoiseCal(NoiseArgs),
    /// Selection-bias audit of a hyperparameter search.
    AuditHpo(AuditArgs),
    /// Anchored factorial marginals from cell means.
    Factorial(FactorialArgs),
    /// Cluster-adjusted power grid.
    Power(PowerArgs),
    /// Few-shot per-target recovery curve.
    Fewshot(FewShotArgs),
    /// Target-disjoint post-hoc calibration.
    Calibrate(CalibrateArgs),
    /// Write a synthetic cohort.
    Synth,
    /// Check fold sets for protocol-key leakage.
    LeakageAudit(LeakageArgs),
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Ingest => "ingest",
            Command::Folds => "folds",
            Command::Run => "run",
            Command::Spectra => "spectra",
            Command::Cascade(_) => "cascade",
            Command::NoiseCal(_) => "noise-cal",
            Command::AuditHpo(_) => "audit-hpo",
            Command::Factorial(_) => "factorial",
            Command::Power(_) => "power",
            Command::Fewshot(_) => "fewshot",
            Command::Calibrate(_) => "calibrate",
            Command::Synth => "synth",
            Command::LeakageAudit(_) => "leakage-audit",
        }
    }

    fn params(&self) -> Result<serde_json::Value> {
        Ok(match self {
            Command::Cascade(a) => serde_json::to_value(a)?,
            Command::NoiseCal(a) => serde_json::to_value(a)?,
            Command::AuditHpo(a) => serde_json::to_value(a)?,
            Command::Factorial(a) => serde_json::to_value(a)?,
            Command::Power(a) => serde_json::to_value(a)?,
            Command::Fewshot(a) => serde_json::to_value(a)?,
            Command::Calibrate(a) => serde_json::to_value(a)?,
            Command::LeakageAudit(a) => serde_json::to_value(a)?,
            _ => serde_json::Value::Null,
        })
    }
}

fn flag_config(g: &GlobalArgs) -> FileConfig {
    FileConfig {
        schema_version: None,
        data: g.data.clone(),
        synth_spec: g.synth_spec.clone(),
        fingerprints: g.fingerprints.clone(),
        scheme: g.scheme.clone(),
        protocol: g.protocol.clone(),
        seeds: g.seeds.clone(),
        k: g.k.clone(),
        s_threshold: g.s_threshold.clone(),
        out: g.out.clone(),
        workers: g.workers,
        family_map: g.family_map.clone(),
        scaffold_keys: g.scaffold_keys.clone(),
        dedup_keys: g.dedup_keys.clone(),
        train_before: None,
        test_year: None,
        featurizer: None,
        model: None,
    }
}

fn resolve(g: &GlobalArgs) -> Result<RunConfig> {
    let file = match &g.config {
        Some(p) => FileConfig::load(p)?,
        None => FileConfig::default(),
    };
    let mut cfg = RunConfig::resolve(file.overlay(flag_config(g)))?;
    if let Some(n) = g.trees {
        match &mut cfg.model {
            coldbench::model::ModelSpec::Forest(f) => f.n_trees = n,
            _ => return Err(FieldError::new("invalid_input", "trees", "--trees applies to the forest model only").into()),
        }
    }
    Ok(cfg)
}

fn dispatch(command: &Command, cfg: &RunConfig, inputs: &mut Inputs, out: &mut Outputs) -> Result<()> {
    match command {
        Command::Ingest => commands::ingest(cfg, inputs, out),
        Command::Folds => commands::folds(cfg, inputs, out),
        Command::Run => commands::run(cfg, inputs, out),
        Command::Spectra => commands::spectra(cfg, inputs, out),
        Command::Cascade(a) => commands::cascade(cfg, a, inputs, out),
        Command::NoiseCal(a) => commands::noise_cal(cfg, a, inputs, out),
        Command::AuditHpo(a) => commands::audit_hpo(cfg, a, inputs, out),
        Command::Factorial(a) => commands::factorial(cfg, a, inputs, out),
        Command::Power(a) => commands::power(a, out),
        Command::Fewshot(a) => commands::fewshot(cfg, a, inputs, out),
        Command::Calibrate(a) => commands::calibrate(cfg, a, inputs, out),
        Command::Synth => commands::synth(cfg, inputs, out),
        Command::LeakageAudit(a) => commands::leakage(cfg, a, inputs, out),
    }
}

fn execute(cli: &Cli, cfg: &RunConfig) -> Result<()> {
    let params = cli.command.params()?;
    let mut inputs = Inputs::default();
    let mut out = Outputs::default();
    let pool = rayon::ThreadPoolBuilder::new().num_threads(cfg.workers).build()?;
    let result = pool.install(|| dispatch(&cli.command, cfg, &mut inputs, &mut out));
    // Partial reports (e.g. a failing leakage audit) are still written.
    io::write_all(&cfg.out, cli.command.name(), cfg, &params, &inputs, &out)?;
    result
}

#[derive(Serialize)]
struct ErrorDoc {
    code: &'static str,
    field: Option<String>,
    message: String,
    causes: Vec<String>,
}

fn error_doc(e: &anyhow::Error) -> ErrorDoc {
    let mut code = "error";
    let mut field = None;
    for cause in e.chain() {
        if let Some(f) = cause.downcast_ref::<FieldError>() {
            code = f.code;
            field = Some(f.field.to_string());
            break;
        }
        if let Some(le) = cause.downcast_ref::<coldbench::error::Error>() {
            code = le.code();
            if let coldbench::error::Error::InvalidInput { field: f, .. } = le {
                field = Some(f.clone());
            }
            break;
        }
    }
    ErrorDoc { code, field, message: e.to_string(), causes: e.chain().skip(1).map(|c| c.to_string()).collect() }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let cfg = resolve(&cli.global);
    let out_dir = match &cfg {
        Ok(c) => c.out.clone(),
        Err(_) => cli.global.out.clone().unwrap_or_else(|| "out".into()),
    };
    let result = cfg.and_then(|c| execute(&cli, &c));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let doc = error_doc(&e);
            let text = serde_json::to_string_pretty(&doc).unwrap_or_else(|_| e.to_string());
            eprintln!("coldbench {}: {text}", cli.command.name());
            if std::fs::create_dir_all(&out_dir).is_ok() {
                let _ = std::fs::write(out_dir.join("error.json"), format!("{text}\n"));
            }
            ExitCode::FAILURE
        }
    }
}
