//! Binary fingerprints, a hashed character n-gram featurizer, Tanimoto
//! similarity and deduplication keys.
//!
//! # Hashing
//!
//! Every character n-gram (Unicode scalar values, lengths `n_min..=n_max`)
//! is hashed with 64-bit FNV-1a over its UTF-8 bytes (offset basis
//! `0xcbf29ce484222325`, prime `0x100000001b3`) and sets bit
//! `hash & (width - 1)`. The result is identical on every platform.
//!
//! # Hex format
//!
//! Fingerprint files are CSV `compound_id,hex_bits`. The hex string holds
//! `width / 8` bytes; byte `b` carries bits `8b..8b+8`, least significant
//! bit first.
//!
//! # Tanimoto
//!
//! `|a & b| / |a | b|`, defined as 1.0 when both vectors are all-zero.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use rayon::prelude::*;

use crate::dataset::{Cohort, Record};
use crate::error::{Error, Result};
use crate::rng::fnv1a;

pub const DEFAULT_WIDTH: usize = 2048;

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Fingerprint {
    words: Vec<u64>,
    width: usize,
    popcount: u32,
}

impl Fingerprint {
    pub fn zeros(width: usize) -> Self {
        Fingerprint {
            words: vec![0; width.div_ceil(64)],
            width,
            popcount: 0,
        }
    }

    pub fn from_indices(width: usize, bits: impl IntoIterator<Item = usize>) -> Self {
        let mut fp = Fingerprint::zeros(width);
        for b in bits {
            assert!(b < width, "bit {b} outside width {width}");
            fp.words[b / 64] |= 1 << (b % 64);
        }
        fp.recount();
        fp
    }

    fn recount(&mut self) {
        self.popcount = self.words.iter().map(|w| w.count_ones()).sum();
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn popcount(&self) -> u32 {
        self.popcount
    }

    pub fn words(&self) -> &[u64] {
        &self.words
    }

    #[inline]
    pub fn get(&self, bit: usize) -> bool {
        self.words[bit / 64] >> (bit % 64) & 1 == 1
    }

    pub fn ones(&self) -> impl Iterator<Item = usize> + '_ {
        self.words.iter().enumerate().flat_map(|(i, &w)| {
            let mut w = w;
            std::iter::from_fn(move || {
                if w == 0 {
                    return None;
                }
                let t = w.trailing_zeros() as usize;
                w &= w - 1;
                Some(i * 64 + t)
            })
        })
    }

    pub fn to_hex(&self) -> String {
        let bytes: Vec<u8> = (0..self.width / 8)
            .map(|b| (self.words[b / 8] >> ((b % 8) * 8)) as u8)
            .collect();
        hex::encode(bytes)
    }

    pub fn from_hex(s: &str) -> Result<Self> {
        let bytes = hex::decode(s.trim()).map_err(|e| Error::invalid("hex_bits", e.to_string()))?;
        if bytes.is_empty() {
            return Err(Error::invalid("hex_bits", "empty fingerprint"));
        }
        let mut fp = Fingerprint::zeros(bytes.len() * 8);
        for (b, &v) in bytes.iter().enumerate() {
            fp.words[b / 8] |= u64::from(v) << ((b % 8) * 8);
        }
        fp.recount();
        Ok(fp)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct NgramParams {
    pub n_min: usize,
    pub n_max: usize,
    pub width: usize,
}

impl Default for NgramParams {
    fn default() -> Self {
        NgramParams {
            n_min: 2,
            n_max: 4,
            width: DEFAULT_WIDTH,
        }
    }
}

impl NgramParams {
    pub fn validate(&self) -> Result<()> {
        if self.n_min < 1 || self.n_min > self.n_max {
            return Err(Error::invalid("n_min", "need 1 <= n_min <= n_max"));
        }
        if !self.width.is_power_of_two() || self.width < 8 {
            return Err(Error::invalid("width", "must be a power of two >= 8"));
        }
        Ok(())
    }
}

pub fn hashed_ngram_fingerprint(structure: &str, n_min: usize, n_max: usize, width: usize) -> Result<Fingerprint> {
    NgramParams { n_min, n_max, width }.validate()?;
    if structure.is_empty() {
        return Err(Error::invalid("structure", "empty structure string"));
    }
    let bounds: Vec<usize> = structure
        .char_indices()
        .map(|(i, _)| i)
        .chain(std::iter::once(structure.len()))
        .collect();
    let n_chars = bounds.len() - 1;
    if n_chars < n_min {
        log::warn!("structure shorter than {n_min} characters yields a zero fingerprint");
    }
    let mask = (width - 1) as u64;
    let mut fp = Fingerprint::zeros(width);
    for n in n_min..=n_max.min(n_chars) {
        for start in 0..=n_chars - n {
            let gram = &structure.as_bytes()[bounds[start]..bounds[start + n]];
            let bit = (fnv1a(gram) & mask) as usize;
            fp.words[bit / 64] |= 1 << (bit % 64);
        }
    }
    fp.recount();
    Ok(fp)
}

/// Featurise every record's structure, in record order.
pub fn featurize_cohort(cohort: &Cohort, params: &NgramParams) -> Result<Vec<Fingerprint>> {
    params.validate()?;
    cohort
        .records()
        .par_iter()
        .map(|r| hashed_ngram_fingerprint(&r.structure, params.n_min, params.n_max, params.width))
        .collect()
}

pub fn tanimoto(a: &Fingerprint, b: &Fingerprint) -> Result<f64> {
    if a.width != b.width {
        return Err(Error::WidthMismatch {
            expected: a.width,
            found: b.width,
        });
    }
    Ok(tanimoto_unchecked(a, b))
}

#[inline]
pub(crate) fn tanimoto_unchecked(a: &Fingerprint, b: &Fingerprint) -> f64 {
    let inter: u32 = a.words.iter().zip(&b.words).map(|(x, y)| (x & y).count_ones()).sum();
    let union = a.popcount + b.popcount - inter;
    if union == 0 {
        1.0
    } else {
        f64::from(inter) / f64::from(union)
    }
}

pub fn max_train_similarity(test: &Fingerprint, train: &[Fingerprint]) -> Result<f64> {
    if train.is_empty() {
        return Err(Error::invalid("train", "empty training set"));
    }
    let mut best = 0f64;
    for t in train {
        best = best.max(tanimoto(test, t)?);
    }
    Ok(best)
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Coverage {
    pub missing: Vec<String>,
}

/// CSV of `compound_id,hex_bits` with a header row.
pub fn load_fingerprints(path: &Path) -> Result<BTreeMap<String, Fingerprint>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(file);
    let mut out: BTreeMap<String, Fingerprint> = BTreeMap::new();
    let mut width = None;
    for row in rdr.records() {
        let row = row?;
        if row.len() != 2 {
            return Err(Error::invalid("fingerprints", "expected compound_id,hex_bits"));
        }
        let id = row[0].to_string();
        let fp = Fingerprint::from_hex(&row[1])?;
        match width {
            None => width = Some(fp.width),
            Some(w) if w != fp.width => {
                return Err(Error::WidthMismatch {
                    expected: w,
                    found: fp.width,
                })
            }
            _ => {}
        }
        if let Some(prev) = out.get(&id) {
            if *prev != fp {
                return Err(Error::ConflictingFingerprint(id));
            }
            continue;
        }
        out.insert(id, fp);
    }
    if out.is_empty() {
        return Err(Error::NoValidRows(path.to_path_buf()));
    }
    Ok(out)
}

pub fn write_fingerprints<'a>(path: &Path, rows: impl IntoIterator<Item = (&'a str, &'a Fingerprint)>) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(file);
    w.write_record(["compound_id", "hex_bits"])?;
    for (id, fp) in rows {
        w.write_record([id, fp.to_hex().as_str()])?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Fingerprints in record order. Compounds absent from `map` receive a zero
/// vector and are listed in the coverage report.
pub fn align_fingerprints(cohort: &Cohort, map: &BTreeMap<String, Fingerprint>) -> (Vec<Fingerprint>, Coverage) {
    let width = map.values().next().map(|f| f.width).unwrap_or(DEFAULT_WIDTH);
    let mut missing = Vec::new();
    let fps = cohort
        .records()
        .iter()
        .map(|r| match map.get(&r.compound_id) {
            Some(fp) => fp.clone(),
            None => {
                missing.push(r.compound_id.clone());
                Fingerprint::zeros(width)
            }
        })
        .collect();
    missing.sort();
    missing.dedup();
    if !missing.is_empty() {
        log::warn!("{} compounds lack fingerprints", missing.len());
    }
    (fps, Coverage { missing })
}

/// Default deduplication key: the exact structure string.
pub fn dedup_key(structure: &str) -> String {
    structure.to_string()
}

/// Deduplication keys with optional `compound_id -> key` overrides.
#[derive(Debug, Clone, Default)]
pub struct DedupKeys {
    overrides: HashMap<String, String>,
}

impl DedupKeys {
    pub fn with_overrides(overrides: HashMap<String, String>) -> Self {
        DedupKeys { overrides }
    }

    /// CSV of `compound_id,key` with a header row.
    pub fn load(path: &Path) -> Result<Self> {
        Ok(DedupKeys::with_overrides(load_key_map(path)?.into_iter().collect()))
    }

    pub fn key(&self, record: &Record) -> String {
        self.overrides
            .get(&record.compound_id)
            .cloned()
            .unwrap_or_else(|| dedup_key(&record.structure))
    }

    pub fn cohort_keys(&self, cohort: &Cohort) -> Vec<String> {
        cohort.records().iter().map(|r| self.key(r)).collect()
    }
}

/// Two-column `compound_id,key` CSV (also used for scaffold keys).
pub fn load_key_map(path: &Path) -> Result<BTreeMap<String, String>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(file);
    let mut out = BTreeMap::new();
    for row in rdr.records() {
        let row = row?;
        if row.len() != 2 {
            return Err(Error::invalid("key file", "expected compound_id,key"));
        }
        out.insert(row[0].to_string(), row[1].to_string());
    }
    Ok(out)
}

#[cfg(test)]
mod unit {
    use super::*;

    #[test]
    fn ngram_bits_are_fnv_positions() {
        let fp = hashed_ngram_fingerprint("abc", 2, 3, 64).unwrap();
        let expect: Vec<usize> = {
            let mut v: Vec<usize> = ["ab", "bc", "abc"].iter().map(|g| (fnv1a(g.as_bytes()) & 63) as usize).collect();
            v.sort();
            v.dedup();
            v
        };
        assert_eq!(fp.ones().collect::<Vec<_>>(), expect);
    }

    #[test]
    fn short_structure_zero_and_empty_error() {
        let fp = hashed_ngram_fingerprint("a", 2, 4, 256).unwrap();
        assert_eq!(fp.popcount(), 0);
        assert!(hashed_ngram_fingerprint("", 2, 4, 256).is_err());
        assert!(hashed_ngram_fingerprint("abc", 2, 4, 100).is_err());
    }

    #[test]
    fn tanimoto_cases() {
        let a = Fingerprint::from_indices(64, [1, 2]);
        let b = Fingerprint::from_indices(64, [1, 2, 3, 4]);
        let c = Fingerprint::from_indices(64, [10]);
        assert_eq!(tanimoto(&a, &b).unwrap(), 0.5);
        assert_eq!(tanimoto(&a, &c).unwrap(), 0.0);
        assert_eq!(tanimoto(&a, &a).unwrap(), 1.0);
        let z = Fingerprint::zeros(64);
        assert_eq!(tanimoto(&z, &z).unwrap(), 1.0);
        assert!(tanimoto(&a, &Fingerprint::zeros(128)).is_err());
        assert_eq!(max_train_similarity(&a, &[c.clone(), a.clone()]).unwrap(), 1.0);
        assert!(max_train_similarity(&a, &[]).is_err());
    }

    #[test]
    fn hex_layout() {
        let fp = Fingerprint::from_indices(16, [0, 9]);
        assert_eq!(fp.to_hex(), "0102");
        assert_eq!(Fingerprint::from_hex("0102").unwrap(), fp);
    }

    #[test]
    fn fingerprint_file_rules() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("fp.csv");
        std::fs::write(&p, "compound_id,hex_bits\nc1,ff00\nc1,ff00\nc2,0f0f\n").unwrap();
        let m = load_fingerprints(&p).unwrap();
        assert_eq!(m["c1"].popcount(), 8);
        std::fs::write(&p, "compound_id,hex_bits\nc1,ff00\nc1,ff01\n").unwrap();
        assert!(matches!(load_fingerprints(&p), Err(Error::ConflictingFingerprint(_))));
        std::fs::write(&p, "compound_id,hex_bits\nc1,ff00\nc2,ff\n").unwrap();
        assert!(matches!(load_fingerprints(&p), Err(Error::WidthMismatch { .. })));
        std::fs::write(&p, "").unwrap();
        assert!(load_fingerprints(&p).is_err());
    }

    #[test]
    fn dedup_overrides() {
        use crate::dataset::testutil::record;
        let mut r1 = record("c1", "T", "d", true);
        r1.structure = "CCO".into();
        let mut r2 = record("c2", "T", "d", true);
        r2.structure = "C CO".into();
        let plain = DedupKeys::default();
        assert_ne!(plain.key(&r1), plain.key(&r2));
        let keys = DedupKeys::with_overrides([("c1".into(), "k".into()), ("c2".into(), "k".into())].into());
        assert_eq!(keys.key(&r1), keys.key(&r2));
    }
}
