//! Run configuration: TOML file values overridden by command-line flags.
//!
//! Schema (version 1), every key optional:
//!
//! ```toml
//! schema_version = 1
//! data = "cohort.csv"          # or synth_spec, exactly one
//! synth_spec = "spec.json"     # SynthSpec as JSON or TOML
//! fingerprints = "fps.csv"     # compound_id,fingerprint_hex; default n-gram featurizer
//! scheme = "or_1000nM_50pct"
//! protocol = "LOTO"
//! seeds = [7, 13, 29]
//! k = [5]
//! s_threshold = [0.5]
//! out = "out"
//! workers = 4
//! family_map = "families.csv"  # target_id,family_id
//! scaffold_keys = "scaffolds.csv"  # compound_id,key
//! dedup_keys = "dedup.csv"     # compound_id,key
//! train_before = 2022
//! test_year = 2023
//!
//! [featurizer]
//! n_min = 2
//! n_max = 4
//! width = 2048
//!
//! [model]
//! kind = "forest"
//! n_trees = 200
//! ```

use std::collections::BTreeSet;
use std::fmt;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use coldbench::features::NgramParams;
use coldbench::model::ModelSpec;
use serde::{Deserialize, Serialize};

pub const SCHEMA_VERSION: u32 = 1;
pub const CANONICAL_SEEDS: [u64; 10] = [7, 13, 29, 42, 43, 44, 53, 71, 89, 97];

/// A configuration problem attributable to one field.
#[derive(Debug)]
pub struct FieldError {
    pub code: &'static str,
    pub field: &'static str,
    pub message: String,
}

impl FieldError {
    pub fn new(code: &'static str, field: &'static str, message: impl Into<String>) -> Self {
        FieldError { code, field, message: message.into() }
    }
}

impl fmt::Display for FieldError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

impl std::error::Error for FieldError {}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub schema_version: Option<u32>,
    pub data: Option<PathBuf>,
    pub synth_spec: Option<PathBuf>,
    pub fingerprints: Option<PathBuf>,
    pub scheme: Option<String>,
    pub protocol: Option<String>,
    pub seeds: Option<Vec<u64>>,
    pub k: Option<Vec<usize>>,
    pub s_threshold: Option<Vec<f64>>,
    pub out: Option<PathBuf>,
    pub workers: Option<usize>,
    pub family_map: Option<PathBuf>,
    pub scaffold_keys: Option<PathBuf>,
    pub dedup_keys: Option<PathBuf>,
    pub train_before: Option<i32>,
    pub test_year: Option<i32>,
    pub featurizer: Option<NgramParams>,
    pub model: Option<ModelSpec>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let cfg: FileConfig = toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        if let Some(v) = cfg.schema_version {
            if v != SCHEMA_VERSION {
                return Err(FieldError::new("invalid_input", "schema_version", format!("unsupported version {v}")).into());
            }
        }
        Ok(cfg)
    }

    /// Flag values win over file values.
    pub fn overlay(self, flags: FileConfig) -> FileConfig {
        FileConfig {
            schema_version: self.schema_version,
            data: flags.data.or(self.data),
            synth_spec: flags.synth_spec.or(self.synth_spec),
            fingerprints: flags.fingerprints.or(self.fingerprints),
            scheme: flags.scheme.or(self.scheme),
            protocol: flags.protocol.or(self.protocol),
            seeds: flags.seeds.or(self.seeds),
            k: flags.k.or(self.k),
            s_threshold: flags.s_threshold.or(self.s_threshold),
            out: flags.out.or(self.out),
            workers: flags.workers.or(self.workers),
            family_map: flags.family_map.or(self.family_map),
            scaffold_keys: flags.scaffold_keys.or(self.scaffold_keys),
            dedup_keys: flags.dedup_keys.or(self.dedup_keys),
            train_before: flags.train_before.or(self.train_before),
            test_year: flags.test_year.or(self.test_year),
            featurizer: flags.featurizer.or(self.featurizer),
            model: flags.model.or(self.model),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum DataSource {
    Csv(PathBuf),
    Synth(PathBuf),
}

/// Resolved configuration. `out` and `workers` do not affect results and
/// are left out of the hashed form.
#[derive(Debug, Clone, Serialize)]
pub struct RunConfig {
    pub schema_version: u32,
    pub data: Option<DataSource>,
    pub fingerprints: Option<PathBuf>,
    pub scheme: String,
    /// Commands fall back to their own default protocol when unset.
    pub protocol: Option<String>,
    pub seeds: Vec<u64>,
    pub k: Vec<usize>,
    pub s_threshold: Vec<f64>,
    pub family_map: Option<PathBuf>,
    pub scaffold_keys: Option<PathBuf>,
    pub dedup_keys: Option<PathBuf>,
    pub train_before: i32,
    pub test_year: i32,
    pub featurizer: NgramParams,
    pub model: ModelSpec,
    #[serde(skip)]
    pub out: PathBuf,
    #[serde(skip)]
    pub workers: usize,
}

impl RunConfig {
    pub fn resolve(f: FileConfig) -> Result<Self> {
        let data = match (f.data, f.synth_spec) {
            (Some(_), Some(_)) => {
                return Err(FieldError::new("invalid_input", "data", "give either data or synth_spec, not both").into());
            }
            (Some(p), None) => Some(DataSource::Csv(p)),
            (None, Some(p)) => Some(DataSource::Synth(p)),
            (None, None) => None,
        };
        let seeds = f.seeds.unwrap_or_else(|| CANONICAL_SEEDS.to_vec());
        if seeds.is_empty() {
            return Err(FieldError::new("invalid_input", "seeds", "seed list is empty").into());
        }
        if seeds.iter().collect::<BTreeSet<_>>().len() != seeds.len() {
            return Err(FieldError::new("invalid_input", "seeds", "seeds must be distinct").into());
        }
        let workers = match f.workers {
            Some(0) => return Err(FieldError::new("invalid_input", "workers", "must be >= 1").into()),
            Some(w) => w,
            None => std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1),
        };
        Ok(RunConfig {
            schema_version: SCHEMA_VERSION,
            data,
            fingerprints: f.fingerprints,
            scheme: f.scheme.unwrap_or_else(|| "or_1000nM_50pct".into()),
            protocol: f.protocol,
            seeds,
            k: f.k.unwrap_or_default(),
            s_threshold: f.s_threshold.unwrap_or_default(),
            family_map: f.family_map,
            scaffold_keys: f.scaffold_keys,
            dedup_keys: f.dedup_keys,
            train_before: f.train_before.unwrap_or(2022),
            test_year: f.test_year.unwrap_or(2023),
            featurizer: f.featurizer.unwrap_or_default(),
            model: f.model.unwrap_or_default(),
            out: f.out.unwrap_or_else(|| "out".into()),
            workers,
        })
    }

    /// First `k`, or `default` when none was given.
    pub fn k_or(&self, default: usize) -> usize {
        self.k.first().copied().unwrap_or(default)
    }
}
