//! One thin wrapper per pipeline. Each fills `Outputs`; `main` writes them
//! together with the manifest.

use std::collections::BTreeMap;
use std::path::PathBuf;

use anyhow::{bail, Result};
use clap::{Args, ValueEnum};
use coldbench::calibrate::run_calibration;
use coldbench::dataset::{eligible_targets, fold_change_anchor, write_cohort, EligibilityRule};
use coldbench::decompose::{
    audit_trials, factorial_marginals, noise_calibration, power_grid, project_bound, read_revalidation, read_trial_table,
    run_cascade, run_noise_curve, CascadeOptions, CellSummary, LevelUnit, NoiseCurve,
};
use coldbench::eval::{evaluate_foldset, ProtocolEval};
use coldbench::features::{load_key_map, DedupKeys};
use coldbench::fewshot::{evaluate_fewshot, Selection};
use coldbench::metrics::auspc;
use coldbench::splits::{
    crosslab_folds, dedup_train, family_map_from_cohort, leakage_audit, lofo_folds, loto_folds, random_kfold, read_foldset,
    scaffold_kfold, spectra_filter, spectra_sweep, temporal_split, write_foldset, AuditContext, FoldSet, LabelNoise, Protocol,
};
use coldbench::stats::{mean, sd};
use coldbench::synth::generate_cohort;
use serde::Serialize;

use crate::config::{DataSource, FieldError, RunConfig};
use crate::io::{self, num, opt, Inputs, Loaded, Outputs};

pub const SPECTRA_THRESHOLDS: [f64; 6] = [0.50, 0.60, 0.70, 0.80, 0.90, 0.95];
const DEFAULT_KFOLD: usize = 5;

/// Configured protocol, LOTO when unset.
pub fn protocol(cfg: &RunConfig) -> Result<Protocol> {
    protocol_or(cfg, Protocol::Loto)
}

pub fn protocol_or(cfg: &RunConfig, default: Protocol) -> Result<Protocol> {
    match &cfg.protocol {
        None => Ok(default),
        Some(name) => Protocol::parse(name)
            .ok_or_else(|| FieldError::new("invalid_input", "protocol", format!("unknown protocol `{name}`")).into()),
    }
}

/// Optional key files, read once per run.
pub struct KeyFiles {
    family_map: Option<BTreeMap<String, String>>,
    scaffold: Option<BTreeMap<String, String>>,
}

impl KeyFiles {
    pub fn load(cfg: &RunConfig, inputs: &mut Inputs) -> Result<Self> {
        let mut read = |field: &'static str, p: &Option<PathBuf>| -> Result<Option<BTreeMap<String, String>>> {
            match p {
                Some(p) => {
                    inputs.check(field, p)?;
                    Ok(Some(load_key_map(p)?))
                }
                None => Ok(None),
            }
        };
        Ok(KeyFiles { family_map: read("family_map", &cfg.family_map)?, scaffold: read("scaffold_keys", &cfg.scaffold_keys)? })
    }
}

pub fn seed_dependent(p: Protocol) -> bool {
    matches!(p, Protocol::RandomKfold | Protocol::ScaffoldKfold | Protocol::Spectra)
}

pub fn build_foldset(p: Protocol, l: &Loaded, cfg: &RunConfig, keys: &KeyFiles, seed: u64) -> Result<FoldSet> {
    let c = &l.cohort;
    Ok(match p {
        Protocol::RandomKfold => random_kfold(c, cfg.k_or(DEFAULT_KFOLD), seed)?,
        Protocol::ScaffoldKfold => {
            let Some(map) = &keys.scaffold else {
                return Err(FieldError::new("missing_input", "scaffold_keys", "SCAFFOLD_KFOLD needs --scaffold-keys").into());
            };
            scaffold_kfold(c, map, cfg.k_or(DEFAULT_KFOLD), seed)?
        }
        Protocol::Loto => loto_folds(c)?,
        Protocol::Lofo => match &keys.family_map {
            Some(m) => lofo_folds(c, m, true)?,
            None => lofo_folds(c, &family_map_from_cohort(c), true)?,
        },
        Protocol::Temporal => temporal_split(c, cfg.train_before, cfg.test_year)?,
        Protocol::Crosslab => crosslab_folds(c)?,
        Protocol::Spectra => {
            let base = random_kfold(c, cfg.k_or(DEFAULT_KFOLD), seed)?;
            spectra_filter(&base, cfg.s_threshold.first().copied().unwrap_or(0.5), &l.fps, c)?
        }
    })
}

fn score_rows(e: &ProtocolEval) -> Vec<Vec<String>> {
    e.folds
        .iter()
        .map(|f| {
            let s = &f.score;
            vec![
                e.protocol.to_string(),
                e.seed.to_string(),
                s.fold_key.clone(),
                s.n.to_string(),
                num(s.pos_rate),
                opt(s.auroc),
                opt(s.auprc),
                num(s.brier),
                num(s.ece10),
                s.degenerate.to_string(),
            ]
        })
        .collect()
}

const SCORE_HEADER: [&str; 10] = ["protocol", "seed", "fold_key", "n", "pos_rate", "auroc", "auprc", "brier", "ece10", "degenerate"];

#[derive(Serialize)]
struct SeedSummary {
    seed: u64,
    n_folds: usize,
    n_skipped: usize,
    macro_auroc: Option<f64>,
    pooled_auroc: Option<f64>,
}

#[derive(Serialize)]
struct Spread {
    mean: Option<f64>,
    sd: Option<f64>,
    n: usize,
}

fn spread(xs: &[f64]) -> Spread {
    Spread {
        mean: (!xs.is_empty()).then(|| mean(xs)),
        sd: (xs.len() >= 2).then(|| sd(xs)),
        n: xs.len(),
    }
}

fn summarise(evals: &[ProtocolEval]) -> (Vec<SeedSummary>, Spread, Spread) {
    let per_seed: Vec<SeedSummary> = evals
        .iter()
        .map(|e| SeedSummary {
            seed: e.seed,
            n_folds: e.folds.len(),
            n_skipped: e.skipped.len(),
            macro_auroc: e.macro_auroc().ok(),
            pooled_auroc: e.pooled_auroc().ok(),
        })
        .collect();
    let macros: Vec<f64> = per_seed.iter().filter_map(|s| s.macro_auroc).collect();
    let pooled: Vec<f64> = per_seed.iter().filter_map(|s| s.pooled_auroc).collect();
    (per_seed, spread(&macros), spread(&pooled))
}

// ---------------------------------------------------------------- ingest

pub fn ingest(cfg: &RunConfig, inputs: &mut Inputs, out: &mut Outputs) -> Result<()> {
    let (c, rej) = io::load_cohort_only(cfg, inputs)?;
    out.bytes("cohort.csv", tempfile_bytes(|p| write_cohort(&c, p))?);
    out.bytes("rejections.csv", tempfile_bytes(|p| rej.write_csv(p))?);
    let labels = c.labels();
    out.json(
        "summary.json",
        &serde_json::json!({
            "n_records": c.len(),
            "n_rejected": rej.rejections.len(),
            "n_targets": c.by_target().len(),
            "n_papers": c.by_doi().len(),
            "pos_rate": labels.iter().filter(|&&l| l).count() as f64 / labels.len().max(1) as f64,
            "loto_eligible": eligible_targets(&c, EligibilityRule::Loto),
            "crosslab_eligible": eligible_targets(&c, EligibilityRule::CrossLab),
            "fold_change": fold_change_anchor(&c),
        }),
    )
}

/// Run a path-based library writer against a scratch file and return its bytes.
fn tempfile_bytes(write: impl FnOnce(&std::path::Path) -> coldbench::error::Result<()>) -> Result<Vec<u8>> {
    let dir = tempfile::tempdir()?;
    let path = dir.path().join("buf");
    write(&path)?;
    Ok(std::fs::read(&path)?)
}

// ---------------------------------------------------------------- folds

pub fn folds(cfg: &RunConfig, inputs: &mut Inputs, out: &mut Outputs) -> Result<()> {
    let l = io::load(cfg, inputs)?;
    let keys = KeyFiles::load(cfg, inputs)?;
    let p = protocol(cfg)?;
    let seeds: Vec<u64> = if seed_dependent(p) { cfg.seeds.clone() } else { vec![cfg.seeds[0]] };
    let mut summary = Vec::new();
    for &seed in &seeds {
        let fs = build_foldset(p, &l, cfg, &keys, seed)?;
        let audit = leakage_audit(&fs, &l.cohort, &AuditContext { family_map: keys.family_map.as_ref(), scaffold_keys: keys.scaffold.as_ref() });
        let mut buf = Vec::new();
        write_foldset(&mut buf, &fs)?;
        let name = if seed_dependent(p) { format!("folds_seed{seed}.csv") } else { "folds.csv".into() };
        out.bytes(&name, buf);
        summary.push(serde_json::json!({
            "file": name,
            "seed": seed_dependent(p).then_some(seed),
            "protocol": fs.protocol,
            "params": fs.params,
            "n_folds": fs.folds.len(),
            "dropped": fs.dropped,
            "leakage_audit": audit,
        }));
    }
    out.json("folds.json", &summary)
}

// ---------------------------------------------------------------- run

pub fn run(cfg: &RunConfig, inputs: &mut Inputs, out: &mut Outputs) -> Result<()> {
    let l = io::load(cfg, inputs)?;
    let keys = KeyFiles::load(cfg, inputs)?;
    let p = protocol(cfg)?;
    let mut evals = Vec::new();
    let mut dropped = BTreeMap::new();
    let fixed = if seed_dependent(p) { None } else { Some(build_foldset(p, &l, cfg, &keys, cfg.seeds[0])?) };
    for &seed in &cfg.seeds {
        let fs = match &fixed {
            Some(fs) => fs.clone(),
            None => build_foldset(p, &l, cfg, &keys, seed)?,
        };
        if !fs.dropped.is_empty() {
            dropped.insert(seed, fs.dropped.clone());
        }
        evals.push(evaluate_foldset(&l.cohort, &l.fps, &fs, &cfg.model, seed)?);
    }
    out.csv("fold_scores.csv", &SCORE_HEADER, evals.iter().flat_map(score_rows))?;
    let (per_seed, macro_auroc, pooled_auroc) = summarise(&evals);
    let skipped: BTreeMap<u64, _> = evals.iter().filter(|e| !e.skipped.is_empty()).map(|e| (e.seed, &e.skipped)).collect();
    out.json(
        "summary.json",
        &serde_json::json!({
            "protocol": p,
            "macro_auroc": macro_auroc,
            "pooled_auroc": pooled_auroc,
            "per_seed": per_seed,
            "skipped_folds": skipped,
            "dropped_folds": dropped,
            "n_rejected": l.rejections.rejections.len(),
            "missing_fingerprints": l.missing_fingerprints,
        }),
    )
}

// ---------------------------------------------------------------- spectra

pub fn spectra(cfg: &RunConfig, inputs: &mut Inputs, out: &mut Outputs) -> Result<()> {
    let l = io::load(cfg, inputs)?;
    let keys = KeyFiles::load(cfg, inputs)?;
    let base_protocol = match protocol_or(cfg, Protocol::RandomKfold)? {
        Protocol::Spectra => Protocol::RandomKfold,
        other => other,
    };
    let thresholds: Vec<f64> = if cfg.s_threshold.is_empty() { SPECTRA_THRESHOLDS.to_vec() } else { cfg.s_threshold.clone() };
    let mut per_s: BTreeMap<usize, (Vec<f64>, usize, usize)> = BTreeMap::new();
    let mut rows = Vec::new();
    for &seed in &cfg.seeds {
        let base = build_foldset(base_protocol, &l, cfg, &keys, seed)?;
        for (i, (s, fs)) in spectra_sweep(&base, &thresholds, &l.fps, &l.cohort)?.into_iter().enumerate() {
            let entry = per_s.entry(i).or_default();
            match fs {
                Ok(fs) => {
                    entry.1 += fs.folds.len();
                    entry.2 += fs.dropped.len();
                    let e = evaluate_foldset(&l.cohort, &l.fps, &fs, &cfg.model, seed)?;
                    if let Ok(m) = e.macro_auroc() {
                        entry.0.push(m);
                    }
                    rows.extend(score_rows(&e).into_iter().map(|mut r| {
                        r.insert(0, num(s));
                        r
                    }));
                }
                Err(_) => entry.2 += base.folds.len(),
            }
        }
    }
    let mut header = vec!["s"];
    header.extend(SCORE_HEADER);
    out.csv("spectra_folds.csv", &header, rows)?;
    let mut points = Vec::new();
    let mut curve = Vec::new();
    for (i, &s) in thresholds.iter().enumerate() {
        let (ms, kept, dropped) = per_s.remove(&i).unwrap_or_default();
        let sp = spread(&ms);
        if let Some(m) = sp.mean {
            points.push((s, m));
        }
        curve.push(vec![num(s), opt(sp.mean), opt(sp.sd), sp.n.to_string(), kept.to_string(), dropped.to_string()]);
    }
    out.csv("spectra.csv", &["s", "auroc_mean", "auroc_sd", "n_seeds", "folds_kept", "folds_dropped"], curve)?;
    points.sort_by(|a, b| a.0.total_cmp(&b.0));
    let area = match (points.first(), points.last()) {
        (Some(lo), Some(hi)) if points.len() >= 2 => auspc(&points, lo.0, hi.0).ok().map(|a| (lo.0, hi.0, a)),
        _ => None,
    };
    out.json(
        "spectra.json",
        &serde_json::json!({
            "base_protocol": base_protocol,
            "filter": "test-side: test records above the train-similarity ceiling are removed",
            "points": points,
            "auspc": area.map(|(lo, hi, a)| serde_json::json!({ "lo": lo, "hi": hi, "value": a })),
        }),
    )
}

// ---------------------------------------------------------------- cascade

#[derive(Args, Debug, Clone, Serialize)]
pub struct CascadeArgs {
    /// Bootstrap replicates for the paired-delta CI.
    #[arg(long, default_value_t = 2000)]
    pub replicates: usize,
}

pub fn cascade(cfg: &RunConfig, args: &CascadeArgs, inputs: &mut Inputs, out: &mut Outputs) -> Result<()> {
    let l = io::load(cfg, inputs)?;
    let opts = CascadeOptions { rcv_k: cfg.k_or(DEFAULT_KFOLD), bootstrap_replicates: args.replicates };
    let report = run_cascade(&l.cohort, &l.fps, &cfg.model, &cfg.seeds, &opts)?;
    out.csv(
        "cascade_targets.csv",
        &["target_id", "rcv", "crosslab", "loto"],
        report.targets.iter().map(|t| vec![t.target_id.clone(), opt(t.rcv), opt(t.crosslab), opt(t.loto)]),
    )?;
    out.json("cascade.json", &report)
}

// ---------------------------------------------------------------- noise-cal

#[derive(ValueEnum, Debug, Clone, Copy, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseKind {
    /// Uniform label flips; levels in percent.
    Uniform,
    /// Per-target positive/negative swaps; levels as a fraction.
    Swap,
    /// Log-normal DC50 perturbation; levels as sigma in log10 units.
    Gaussian,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct NoiseArgs {
    /// Noise model applied to training labels.
    #[arg(long, value_enum, default_value = "uniform")]
    pub noise: NoiseKind,
    /// Noise levels; defaults depend on the noise kind.
    #[arg(long, value_delimiter = ',')]
    pub levels: Vec<f64>,
    /// AUROC bound to project onto the curve.
    #[arg(long, default_value_t = 0.124)]
    pub bound: f64,
    /// Project the bound onto a known slope instead of running the curve.
    #[arg(long, allow_hyphen_values = true)]
    pub slope: Option<f64>,
}

pub fn noise_cal(cfg: &RunConfig, args: &NoiseArgs, inputs: &mut Inputs, out: &mut Outputs) -> Result<()> {
    let (unit, noise, default_levels): (LevelUnit, fn(f64) -> LabelNoise, Vec<f64>) = match args.noise {
        NoiseKind::Uniform => (LevelUnit::Percent, LabelNoise::UniformFlip, vec![0.0, 2.5, 5.0, 7.5, 10.0, 12.5, 15.0]),
        NoiseKind::Swap => (LevelUnit::Fraction, LabelNoise::TargetSwap, vec![0.0, 0.05, 0.1, 0.15, 0.2]),
        NoiseKind::Gaussian => (LevelUnit::Sigma, LabelNoise::GaussianLogDc50, vec![0.0, 0.25, 0.5, 0.75, 1.0]),
    };
    if let Some(slope) = args.slope {
        return out.json("noise_calibration.json", &project_bound(slope, args.bound, unit)?);
    }
    let l = io::load(cfg, inputs)?;
    let keys = KeyFiles::load(cfg, inputs)?;
    let p = protocol(cfg)?;
    let fs = build_foldset(p, &l, cfg, &keys, cfg.seeds[0])?;
    let levels = if args.levels.is_empty() { default_levels } else { args.levels.clone() };
    let curve: NoiseCurve =
        run_noise_curve(&l.cohort, &l.fps, &fs, &cfg.model, noise, &levels, unit, &io::scheme(cfg)?, &cfg.seeds)?;
    out.csv(
        "noise_curve.csv",
        &["level", "auroc_mean", "auroc_sd", "n_seeds"],
        curve.points.iter().map(|pt| vec![num(pt.level), num(pt.auroc_mean), num(pt.auroc_sd), pt.n_seeds.to_string()]),
    )?;
    let projection = noise_calibration(&curve, args.bound)?;
    out.json("noise_calibration.json", &serde_json::json!({ "curve": curve, "projection": projection }))
}

// ---------------------------------------------------------------- audit-hpo

#[derive(Args, Debug, Clone, Serialize)]
pub struct AuditArgs {
    /// Trial table CSV: trial_id,phase,seed,objective,<dimensions...>.
    #[arg(long)]
    pub trials: Option<PathBuf>,
    /// Multi-seed revalidation CSV: trial_id,mean,sd,n_seeds.
    #[arg(long)]
    pub revalidation: Option<PathBuf>,
}

pub fn audit_hpo(cfg: &RunConfig, args: &AuditArgs, inputs: &mut Inputs, out: &mut Outputs) -> Result<()> {
    let Some(trials) = &args.trials else {
        bail!(FieldError::new("missing_input", "trials", "audit-hpo needs --trials"));
    };
    let Some(reval) = &args.revalidation else {
        bail!(FieldError::new("missing_input", "revalidation", "audit-hpo needs --revalidation"));
    };
    let table = read_trial_table(inputs.read("trials", trials)?.as_slice())?;
    let revalidated = read_revalidation(inputs.read("revalidation", reval)?.as_slice())?;
    let audit = audit_trials(&table, cfg.k_or(10), &revalidated)?;
    out.csv(
        "rank_regressions.csv",
        &["rank", "trial_id", "objective", "validated_mean", "validated_sd", "regression"],
        audit.regressions.iter().map(|r| {
            vec![r.rank.to_string(), r.trial_id.clone(), num(r.objective), num(r.validated_mean), num(r.validated_sd), num(r.regression)]
        }),
    )?;
    out.csv(
        "dimension_shares.csv",
        &["dimension", "n_levels", "binned", "eta_sq", "omega_sq", "p"],
        audit.shares.iter().map(|s| {
            vec![s.dimension.clone(), s.n_levels.to_string(), s.binned.to_string(), num(s.eta_sq), num(s.omega_sq), opt(s.p)]
        }),
    )?;
    out.json("trial_audit.json", &audit)
}

// ---------------------------------------------------------------- factorial

#[derive(Args, Debug, Clone, Serialize)]
pub struct FactorialArgs {
    /// Cell CSV, either `cell,mean[,sd]` or long form `cell,target_id,auroc`.
    #[arg(long)]
    pub cells: Option<PathBuf>,
    /// Bit held at 1 in every contrast (bit order M, W, A, K).
    #[arg(long, default_value_t = 0)]
    pub anchor_bit: usize,
    /// Bootstrap replicates over targets for long-form cells.
    #[arg(long, default_value_t = 2000)]
    pub replicates: usize,
}

fn parse_cells(bytes: &[u8]) -> Result<BTreeMap<String, CellSummary>> {
    let mut rdr = csv::Reader::from_reader(bytes);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    let col = |name: &str| header.iter().position(|h| h == name);
    let bad = |m: String| -> anyhow::Error { FieldError::new("invalid_input", "cells", m).into() };
    let cell = col("cell").ok_or_else(|| bad("missing `cell` column".into()))?;
    let parse = |s: &str| s.trim().parse::<f64>().map_err(|_| bad(format!("not a number: `{s}`")));
    let mut out = BTreeMap::new();
    if let (Some(t), Some(v)) = (col("target_id"), col("auroc")) {
        let mut per: BTreeMap<String, BTreeMap<String, f64>> = BTreeMap::new();
        for row in rdr.records() {
            let row = row?;
            per.entry(row[cell].to_string()).or_default().insert(row[t].to_string(), parse(&row[v])?);
        }
        for (k, targets) in per {
            let vals: Vec<f64> = targets.values().copied().collect();
            out.insert(k, CellSummary { mean: mean(&vals), sd: (vals.len() >= 2).then(|| sd(&vals)), per_target: Some(targets) });
        }
    } else {
        let m = col("mean").ok_or_else(|| bad("need `mean` or `target_id`,`auroc` columns".into()))?;
        let s = col("sd");
        for row in rdr.records() {
            let row = row?;
            let sd = match s {
                Some(i) if !row[i].trim().is_empty() => Some(parse(&row[i])?),
                _ => None,
            };
            out.insert(row[cell].to_string(), CellSummary { mean: parse(&row[m])?, sd, per_target: None });
        }
    }
    Ok(out)
}

pub fn factorial(cfg: &RunConfig, args: &FactorialArgs, inputs: &mut Inputs, out: &mut Outputs) -> Result<()> {
    let Some(path) = &args.cells else {
        bail!(FieldError::new("missing_input", "cells", "factorial needs --cells"));
    };
    let cells = parse_cells(&inputs.read("cells", path)?)?;
    let marginals = factorial_marginals(&cells, args.anchor_bit, args.replicates, cfg.seeds[0])?;
    out.csv(
        "factorial.csv",
        &["factor", "bit", "marginal", "ci_lo", "ci_hi"],
        marginals.iter().map(|m| {
            vec![m.factor.clone(), m.bit.to_string(), num(m.marginal), opt(m.ci95.map(|c| c.0)), opt(m.ci95.map(|c| c.1))]
        }),
    )?;
    out.json("factorial.json", &marginals)
}

// ---------------------------------------------------------------- power

#[derive(Args, Debug, Clone, Serialize)]
pub struct PowerArgs {
    /// Targets in the evaluation cohort.
    #[arg(long, default_value_t = 65)]
    pub n_targets: usize,
    /// Seeds per target.
    #[arg(long, default_value_t = 10)]
    pub n_seeds: usize,
    /// Paired comparisons per target and seed.
    #[arg(long, default_value_t = 4)]
    pub n_pairs: usize,
    /// Intra-target correlations to tabulate.
    #[arg(long, value_delimiter = ',', default_values_t = [0.293, 0.472])]
    pub rho: Vec<f64>,
    /// SD of a single paired AUROC difference.
    #[arg(long, default_value_t = 0.05)]
    pub sigma_d: f64,
    /// Two-sided significance level.
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    /// Target power for the detectable effect.
    #[arg(long, default_value_t = 0.8)]
    pub power: f64,
}

pub fn power(args: &PowerArgs, out: &mut Outputs) -> Result<()> {
    let rows = power_grid(args.n_targets, args.n_seeds, args.n_pairs, &args.rho, args.sigma_d, args.alpha, args.power)?;
    out.csv(
        "power.csv",
        &["rho", "vif", "n_eff", "mde"],
        rows.iter().map(|r| vec![num(r.rho), num(r.vif), num(r.n_eff), num(r.mde)]),
    )?;
    out.json("power.json", &rows)
}

// ---------------------------------------------------------------- fewshot

#[derive(ValueEnum, Debug, Clone, Copy, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SelectionArg {
    Stratified,
    Random,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct FewShotArgs {
    /// How support records are picked from each held-out target.
    #[arg(long, value_enum, default_value = "stratified")]
    pub selection: SelectionArg,
}

pub fn fewshot(cfg: &RunConfig, args: &FewShotArgs, inputs: &mut Inputs, out: &mut Outputs) -> Result<()> {
    let l = io::load(cfg, inputs)?;
    let keys = KeyFiles::load(cfg, inputs)?;
    let p = protocol(cfg)?;
    if seed_dependent(p) {
        bail!(FieldError::new("invalid_input", "protocol", "few-shot recovery needs a seed-independent held-out protocol"));
    }
    let fs = build_foldset(p, &l, cfg, &keys, cfg.seeds[0])?;
    let k_list = if cfg.k.is_empty() { vec![0, 5, 10, 25] } else { cfg.k.clone() };
    let selection = match args.selection {
        SelectionArg::Stratified => Selection::StratifiedQuintile,
        SelectionArg::Random => Selection::Random,
    };
    let report = evaluate_fewshot(&l.cohort, &l.fps, &fs, &cfg.model, &k_list, selection, &cfg.seeds)?;
    out.csv(
        "fewshot_curve.csv",
        &["k", "selection", "macro_mean", "sd", "baseline_query_macro_mean", "n_folds_degenerate", "flags"],
        report.curve.iter().map(|r| {
            vec![
                r.k.to_string(),
                r.selection.as_str().to_string(),
                opt(r.macro_mean),
                opt(r.sd),
                opt(r.baseline_query_macro_mean),
                r.n_folds_degenerate.to_string(),
                r.flags.join(";"),
            ]
        }),
    )?;
    out.csv(
        "fewshot_folds.csv",
        &["fold_key", "seed", "k", "n_support", "n_query", "auroc", "baseline_query_auroc", "baseline_full_auroc", "degenerate", "flags"],
        report.rows.iter().map(|r| {
            vec![
                r.fold_key.clone(),
                r.seed.to_string(),
                r.k.to_string(),
                r.n_support.to_string(),
                r.n_query.to_string(),
                opt(r.auroc),
                opt(r.baseline_query_auroc),
                opt(r.baseline_full_auroc),
                r.degenerate.to_string(),
                r.flags.join(";"),
            ]
        }),
    )?;
    out.json("fewshot.json", &report)
}

// ---------------------------------------------------------------- calibrate

#[derive(Args, Debug, Clone, Serialize)]
pub struct CalibrateArgs {
    /// Fraction of training targets held out to fit the calibrator.
    #[arg(long, default_value_t = 0.2)]
    pub cal_fraction: f64,
    /// Platt target smoothing.
    #[arg(long)]
    pub smoothing: bool,
}

pub fn calibrate(cfg: &RunConfig, args: &CalibrateArgs, inputs: &mut Inputs, out: &mut Outputs) -> Result<()> {
    let l = io::load(cfg, inputs)?;
    let keys = KeyFiles::load(cfg, inputs)?;
    let p = protocol(cfg)?;
    let mut rows = Vec::new();
    for &seed in &cfg.seeds {
        let fs = build_foldset(p, &l, cfg, &keys, seed)?;
        for r in run_calibration(&l.cohort, &l.fps, &fs, &cfg.model, args.cal_fraction, args.smoothing, seed)? {
            rows.push((seed, r));
        }
    }
    out.csv(
        "calibration.csv",
        &["seed", "fold_key", "ece_raw", "ece_platt", "ece_temp", "brier_raw", "brier_platt", "a", "b", "t", "flags"],
        rows.iter().map(|(seed, r)| {
            vec![
                seed.to_string(),
                r.fold_key.clone(),
                num(r.ece_raw),
                num(r.ece_platt),
                num(r.ece_temp),
                num(r.brier_raw),
                num(r.brier_platt),
                num(r.a),
                num(r.b),
                num(r.t),
                r.flags.join(";"),
            ]
        }),
    )?;
    let col = |f: fn(&coldbench::calibrate::CalibrationRow) -> f64| spread(&rows.iter().map(|(_, r)| f(r)).collect::<Vec<_>>());
    out.json(
        "calibration.json",
        &serde_json::json!({
            "ece_raw": col(|r| r.ece_raw),
            "ece_platt": col(|r| r.ece_platt),
            "ece_temp": col(|r| r.ece_temp),
            "rows": rows.iter().map(|(seed, r)| serde_json::json!({ "seed": seed, "row": r })).collect::<Vec<_>>(),
        }),
    )
}

// ---------------------------------------------------------------- synth

pub fn synth(cfg: &RunConfig, inputs: &mut Inputs, out: &mut Outputs) -> Result<()> {
    let Some(DataSource::Synth(path)) = &cfg.data else {
        bail!(FieldError::new("missing_input", "synth_spec", "synth needs --synth-spec"));
    };
    let spec = io::load_synth_spec(inputs, path)?;
    let c = generate_cohort(&spec)?;
    out.bytes("cohort.csv", tempfile_bytes(|p| write_cohort(&c, p))?);
    out.json("synth_spec.json", &spec)
}

// ---------------------------------------------------------------- leakage-audit

#[derive(Args, Debug, Clone, Serialize)]
pub struct LeakageArgs {
    /// Audit a fold-assignment file instead of constructing folds.
    #[arg(long)]
    pub folds: Option<PathBuf>,
    /// Audit every protocol that can be constructed on this cohort.
    #[arg(long)]
    pub all: bool,
    /// Audit the training sets after structure deduplication.
    #[arg(long)]
    pub dedup: bool,
}

pub fn leakage(cfg: &RunConfig, args: &LeakageArgs, inputs: &mut Inputs, out: &mut Outputs) -> Result<()> {
    let l = io::load(cfg, inputs)?;
    let keys = KeyFiles::load(cfg, inputs)?;
    let mut sets: Vec<(String, FoldSet)> = Vec::new();
    if let Some(path) = &args.folds {
        sets.push((path.display().to_string(), read_foldset(inputs.read("folds", path)?.as_slice())?));
    } else if args.all {
        for p in Protocol::ALL {
            for &seed in if seed_dependent(p) { &cfg.seeds[..] } else { &cfg.seeds[..1] } {
                match build_foldset(p, &l, cfg, &keys, seed) {
                    Ok(fs) => sets.push((format!("{p}@{seed}"), fs)),
                    Err(e) => eprintln!("leakage-audit: {p} not constructible: {e}"),
                }
            }
        }
    } else {
        let p = protocol(cfg)?;
        sets.push((p.to_string(), build_foldset(p, &l, cfg, &keys, cfg.seeds[0])?));
    }
    if args.dedup {
        let dk = match &cfg.dedup_keys {
            Some(p) => {
                inputs.check("dedup_keys", p)?;
                DedupKeys::load(p)?
            }
            None => DedupKeys::default(),
        };
        let ck = dk.cohort_keys(&l.cohort);
        for (_, fs) in sets.iter_mut() {
            for f in fs.folds.iter_mut() {
                *f = dedup_train(f, &ck)?.fold;
            }
        }
    }
    let ctx = AuditContext { family_map: keys.family_map.as_ref(), scaffold_keys: keys.scaffold.as_ref() };
    let reports: Vec<_> = sets
        .iter()
        .map(|(name, fs)| serde_json::json!({ "foldset": name, "report": leakage_audit(fs, &l.cohort, &ctx) }))
        .collect();
    let dirty: Vec<&str> = sets
        .iter()
        .filter(|(_, fs)| !leakage_audit(fs, &l.cohort, &ctx).is_clean())
        .map(|(n, _)| n.as_str())
        .collect();
    out.json("leakage.json", &serde_json::json!({ "clean": dirty.is_empty(), "audits": reports }))?;
    if !dirty.is_empty() {
        bail!(FieldError::new("leakage_violations", "folds", format!("violations in {}", dirty.join(", "))));
    }
    Ok(())
}
