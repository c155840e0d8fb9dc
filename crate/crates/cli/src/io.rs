//! Input loading, content hashing, report emission and the run manifest.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use coldbench::dataset::{load_cohort, BinarisationScheme, Cohort, RejectionReport};
use coldbench::features::{align_fingerprints, featurize_cohort, load_fingerprints, Fingerprint};
use coldbench::synth::{generate_cohort, SynthSpec};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::{DataSource, FieldError, RunConfig};

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Clone, Serialize)]
pub struct InputFile {
    pub role: String,
    pub path: PathBuf,
    pub sha256: String,
}

/// Every file read during a run, in read order.
#[derive(Debug, Default)]
pub struct Inputs {
    pub files: Vec<InputFile>,
}

impl Inputs {
    /// Read a file named by config field `field`, recording its hash.
    pub fn read(&mut self, field: &'static str, path: &Path) -> Result<Vec<u8>> {
        if !path.is_file() {
            return Err(FieldError::new("missing_input", field, format!("file not found: {}", path.display())).into());
        }
        let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
        self.files.push(InputFile { role: field.into(), path: path.to_path_buf(), sha256: sha256_hex(&bytes) });
        Ok(bytes)
    }

    /// Hash-record a file that a library loader reads by path.
    pub fn check(&mut self, field: &'static str, path: &Path) -> Result<()> {
        self.read(field, path).map(|_| ())
    }
}

pub fn scheme(cfg: &RunConfig) -> Result<BinarisationScheme> {
    BinarisationScheme::by_name(&cfg.scheme).ok_or_else(|| {
        let names: Vec<String> = BinarisationScheme::standard_set().into_iter().map(|s| s.name).collect();
        FieldError::new("invalid_input", "scheme", format!("unknown scheme `{}`; one of {}", cfg.scheme, names.join(", "))).into()
    })
}

pub fn load_synth_spec(inputs: &mut Inputs, path: &Path) -> Result<SynthSpec> {
    let bytes = inputs.read("synth_spec", path)?;
    let text = String::from_utf8(bytes).context("synth spec is not UTF-8")?;
    match serde_json::from_str(&text) {
        Ok(spec) => Ok(spec),
        Err(_) => toml::from_str(&text).with_context(|| format!("parsing synth spec {}", path.display())),
    }
}

pub struct Loaded {
    pub cohort: Cohort,
    pub fps: Vec<Fingerprint>,
    pub rejections: RejectionReport,
    pub missing_fingerprints: Vec<String>,
}

pub fn load_cohort_only(cfg: &RunConfig, inputs: &mut Inputs) -> Result<(Cohort, RejectionReport)> {
    match &cfg.data {
        None => Err(FieldError::new("missing_input", "data", "no data source: pass --data or --synth-spec").into()),
        Some(DataSource::Csv(path)) => {
            inputs.check("data", path)?;
            Ok(load_cohort(path, &scheme(cfg)?)?)
        }
        Some(DataSource::Synth(path)) => {
            let spec = load_synth_spec(inputs, path)?;
            Ok((generate_cohort(&spec)?, RejectionReport::default()))
        }
    }
}

pub fn load(cfg: &RunConfig, inputs: &mut Inputs) -> Result<Loaded> {
    let (cohort, rejections) = load_cohort_only(cfg, inputs)?;
    let (fps, missing_fingerprints) = match &cfg.fingerprints {
        Some(path) => {
            inputs.check("fingerprints", path)?;
            let (fps, cov) = align_fingerprints(&cohort, &load_fingerprints(path)?);
            (fps, cov.missing)
        }
        None => (featurize_cohort(&cohort, &cfg.featurizer)?, Vec::new()),
    };
    Ok(Loaded { cohort, fps, rejections, missing_fingerprints })
}

/// Report files collected in memory and written together with the manifest.
#[derive(Default)]
pub struct Outputs {
    files: BTreeMap<String, Vec<u8>>,
}

impl Outputs {
    pub fn bytes(&mut self, name: &str, bytes: Vec<u8>) {
        self.files.insert(name.to_string(), bytes);
    }

    pub fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut bytes = serde_json::to_vec_pretty(value)?;
        bytes.push(b'\n');
        self.bytes(name, bytes);
        Ok(())
    }

    /// CSV from a header and pre-formatted rows.
    pub fn csv(&mut self, name: &str, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<()> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(header)?;
        for row in rows {
            w.write_record(&row)?;
        }
        self.bytes(name, w.into_inner().map_err(|e| anyhow::anyhow!("csv buffer: {e}"))?);
        Ok(())
    }
}

#[derive(Serialize)]
struct OutputFile<'a> {
    file: &'a str,
    sha256: String,
}

#[derive(Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: String,
    command: &'a str,
    config_hash: String,
    seeds: &'a [u64],
    config: &'a RunConfig,
    params: &'a serde_json::Value,
    inputs: &'a [InputFile],
    outputs: Vec<OutputFile<'a>>,
}

pub fn version() -> String {
    match option_env!("COLDBENCH_GIT_REV") {
        Some(rev) => format!("{}+{rev}", env!("CARGO_PKG_VERSION")),
        None => env!("CARGO_PKG_VERSION").to_string(),
    }
}

/// Hash of everything that determines the results: command, resolved
/// config and command parameters. Output directory and worker count excluded.
pub fn config_hash(command: &str, cfg: &RunConfig, params: &serde_json::Value) -> Result<String> {
    let doc = serde_json::json!({ "command": command, "config": cfg, "params": params });
    Ok(sha256_hex(&serde_json::to_vec(&doc)?))
}

pub fn write_all(dir: &Path, command: &str, cfg: &RunConfig, params: &serde_json::Value, inputs: &Inputs, out: &Outputs) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let stale = dir.join("error.json");
    if stale.exists() {
        std::fs::remove_file(&stale).context("removing stale error.json")?;
    }
    for (name, bytes) in &out.files {
        std::fs::write(dir.join(name), bytes).with_context(|| format!("writing {name}"))?;
    }
    let manifest = Manifest {
        tool: "coldbench",
        version: version(),
        command,
        config_hash: config_hash(command, cfg, params)?,
        seeds: &cfg.seeds,
        config: cfg,
        params,
        inputs: &inputs.files,
        outputs: out.files.iter().map(|(file, b)| OutputFile { file, sha256: sha256_hex(b) }).collect(),
    };
    let mut bytes = serde_json::to_vec_pretty(&manifest)?;
    bytes.push(b'\n');
    std::fs::write(dir.join("manifest.json"), bytes).context("writing manifest.json")?;
    Ok(())
}

pub fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_default()
}

pub fn num(x: f64) -> String {
    format!("{x:.6}")
}
