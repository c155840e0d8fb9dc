//! Synthetic cohorts and observation tables with planted variance components.
//!
//! # Cohorts
//!
//! Each compound's structure is a 40-character string over a 16-letter
//! alphabet: a 12-character core shared by the target, a 6-character motif
//! shared by the (target, paper) series, and a 22-character random tail.
//! Its activity is
//!
//! ```text
//! activity = signal(fp) + a_t + b_{p|t} + c_compound + eps
//! log10 dc50 = mean_log_dc50 - activity
//! ```
//!
//! with `signal` a fixed random +/-1 combination of `signal_bits` bits of the
//! tail's fingerprint, standardised over the generated structures and scaled to SD
//! `signal_scale`. Dmax comes from the same standardised activity `z`:
//! `dmax = 100 * Phi(rho * z + sqrt(1 - rho^2) * eta - dmax_shift)`.
//! A reused compound keeps its id, structure and `c_compound`; it is drawn
//! from compounds already generated for other targets.
//!
//! # Observation tables
//!
//! `y = mu + a_t + b_{p|t} + eps` with every effect normal. For the nested
//! design with `r` replicates per paper the expected sums of squares are
//!
//! ```text
//! E[SS_res] = (N - P) s2_e
//! E[SS_lab] = (P - T) (s2_e + r s2_l)
//! ```
//!
//! which [`sigma_lab_for_implied_sd`] inverts to plant a given implied
//! laboratory SD `sqrt(SS_lab / (N - 1))`.

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal as StatNormal};

use crate::dataset::{BinarisationScheme, Cohort, E3Ligase, Record};
use crate::error::{Error, Result};
use crate::features::hashed_ngram_fingerprint;
use crate::rng;

pub const ALPHABET: &[u8; 16] = b"CNOSPFBIcnosp=#@";
pub const CORE_LEN: usize = 12;
pub const MOTIF_LEN: usize = 6;
pub const TAIL_LEN: usize = 22;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub n_targets: usize,
    /// Inclusive range.
    pub papers_per_target: (usize, usize),
    /// Inclusive range.
    pub compounds_per_paper: (usize, usize),
    /// SD of the per-target offset (log10 dc50 scale).
    pub sigma_target: f64,
    /// SD of the per-(target, paper) offset.
    pub sigma_lab: f64,
    /// Per-measurement SD.
    pub sigma_noise: f64,
    /// SD of the per-compound term shared by every measurement of a compound.
    pub sigma_compound: f64,
    /// SD of the fingerprint-driven signal.
    pub signal_scale: f64,
    /// Fingerprint width used to evaluate the signal.
    pub feature_dim: usize,
    pub signal_bits: usize,
    pub compound_reuse_rate: f64,
    pub mean_log_dc50: f64,
    pub dmax_corr: f64,
    pub dmax_shift: f64,
    pub n_families: usize,
    pub base_year: i32,
    pub scheme: BinarisationScheme,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            n_targets: 20,
            papers_per_target: (3, 3),
            compounds_per_paper: (30, 30),
            sigma_target: 0.3,
            sigma_lab: 1.0,
            sigma_noise: 0.3,
            sigma_compound: 0.3,
            signal_scale: 1.0,
            feature_dim: 512,
            signal_bits: 8,
            compound_reuse_rate: 0.0,
            mean_log_dc50: 3.0,
            dmax_corr: 0.7,
            dmax_shift: 0.5,
            n_families: 5,
            base_year: 2016,
            scheme: BinarisationScheme::default_or(),
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let sds = [
            ("sigma_target", self.sigma_target),
            ("sigma_lab", self.sigma_lab),
            ("sigma_noise", self.sigma_noise),
            ("sigma_compound", self.sigma_compound),
            ("signal_scale", self.signal_scale),
        ];
        for (name, v) in sds {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::invalid(name, "must be a finite value >= 0"));
            }
        }
        if self.n_targets == 0 {
            return Err(Error::invalid("n_targets", "must be >= 1"));
        }
        for (name, (lo, hi)) in [
            ("papers_per_target", self.papers_per_target),
            ("compounds_per_paper", self.compounds_per_paper),
        ] {
            if lo == 0 || lo > hi {
                return Err(Error::invalid(name, "need 1 <= min <= max"));
            }
        }
        if !(0.0..=1.0).contains(&self.compound_reuse_rate) {
            return Err(Error::invalid("compound_reuse_rate", "must lie in [0, 1]"));
        }
        if !(-1.0..=1.0).contains(&self.dmax_corr) {
            return Err(Error::invalid("dmax_corr", "must lie in [-1, 1]"));
        }
        if !self.feature_dim.is_power_of_two() || self.feature_dim < 8 {
            return Err(Error::invalid("feature_dim", "must be a power of two >= 8"));
        }
        if self.signal_bits == 0 || self.signal_bits > self.feature_dim {
            return Err(Error::invalid("signal_bits", "must lie in 1..=feature_dim"));
        }
        if self.n_families == 0 {
            return Err(Error::invalid("n_families", "must be >= 1"));
        }
        Ok(())
    }
}

fn random_string(rng: &mut ChaCha8Rng, len: usize) -> String {
    (0..len).map(|_| ALPHABET[rng.random_range(0..16)] as char).collect()
}

fn normal(rng: &mut ChaCha8Rng, sd: f64) -> f64 {
    let z: f64 = StandardNormal.sample(rng);
    sd * z
}

struct Compound {
    id: String,
    structure: String,
    target: usize,
    term: f64,
}

pub fn generate_cohort(spec: &SynthSpec) -> Result<Cohort> {
    spec.validate()?;
    let mut rng = rng::stream(spec.seed, 0);
    let mut bit_rng = rng::stream(spec.seed, 1);
    let mut bits: Vec<usize> = (0..spec.feature_dim).collect();
    let (chosen, _) = bits.partial_shuffle(&mut bit_rng, spec.signal_bits);
    let signal_bits: Vec<(usize, f64)> = chosen
        .iter()
        .enumerate()
        .map(|(i, &b)| (b, if i % 2 == 0 { 1.0 } else { -1.0 }))
        .collect();

    struct Draft {
        compound: usize,
        target: usize,
        paper: usize,
        year: i32,
        lab: f64,
    }
    let mut compounds: Vec<Compound> = Vec::new();
    let mut drafts: Vec<Draft> = Vec::new();
    let mut target_offsets = Vec::new();
    for t in 0..spec.n_targets {
        let core = random_string(&mut rng, CORE_LEN);
        target_offsets.push(normal(&mut rng, spec.sigma_target));
        let n_papers = rng.random_range(spec.papers_per_target.0..=spec.papers_per_target.1);
        for p in 0..n_papers {
            let motif = random_string(&mut rng, MOTIF_LEN);
            let lab = normal(&mut rng, spec.sigma_lab);
            let year = spec.base_year + rng.random_range(0..8);
            let n_comp = rng.random_range(spec.compounds_per_paper.0..=spec.compounds_per_paper.1);
            for _ in 0..n_comp {
                let reusable: Vec<usize> = if spec.compound_reuse_rate > 0.0 {
                    (0..compounds.len()).filter(|&c| compounds[c].target != t).collect()
                } else {
                    Vec::new()
                };
                let reuse = !reusable.is_empty() && rng.random::<f64>() < spec.compound_reuse_rate;
                let compound = if reuse {
                    *reusable.choose(&mut rng).unwrap()
                } else {
                    let tail = random_string(&mut rng, TAIL_LEN);
                    compounds.push(Compound {
                        id: format!("SYN{:06}", compounds.len()),
                        structure: format!("{core}{motif}{tail}"),
                        target: t,
                        term: normal(&mut rng, spec.sigma_compound),
                    });
                    compounds.len() - 1
                };
                drafts.push(Draft {
                    compound,
                    target: t,
                    paper: p,
                    year,
                    lab,
                });
            }
        }
    }

    let raw: Vec<f64> = compounds
        .iter()
        .map(|c| {
            let fp = hashed_ngram_fingerprint(&c.structure[CORE_LEN + MOTIF_LEN..], 2, 4, spec.feature_dim).unwrap();
            signal_bits.iter().filter(|(b, _)| fp.get(*b)).map(|(_, w)| w).sum()
        })
        .collect();
    let m = raw.iter().sum::<f64>() / raw.len() as f64;
    let sd = (raw.iter().map(|v| (v - m).powi(2)).sum::<f64>() / raw.len() as f64).sqrt();
    let signal: Vec<f64> = raw
        .iter()
        .map(|v| if sd > 0.0 { spec.signal_scale * (v - m) / sd } else { 0.0 })
        .collect();

    let total_sd = (spec.signal_scale.powi(2)
        + spec.sigma_target.powi(2)
        + spec.sigma_lab.powi(2)
        + spec.sigma_compound.powi(2)
        + spec.sigma_noise.powi(2))
    .sqrt();
    let phi = StatNormal::standard();
    let rho = spec.dmax_corr;
    let e3s = [E3Ligase::Crbn, E3Ligase::Vhl, E3Ligase::Other];
    let mut records = Vec::with_capacity(drafts.len());
    for d in &drafts {
        let c = &compounds[d.compound];
        let activity = signal[d.compound] + target_offsets[d.target] + d.lab + c.term + normal(&mut rng, spec.sigma_noise);
        let dc50 = 10f64.powf(spec.mean_log_dc50 - activity);
        let z = if total_sd > 0.0 { activity / total_sd } else { 0.0 };
        let eta = normal(&mut rng, 1.0);
        let dmax = 100.0 * phi.cdf(rho * z + (1.0 - rho * rho).sqrt() * eta - spec.dmax_shift);
        let label = spec.scheme.label(Some(dc50), Some(dmax)).unwrap();
        records.push(Record {
            compound_id: c.id.clone(),
            structure: c.structure.clone(),
            target_id: format!("SYNT{:03}", d.target),
            family_id: Some(format!("FAM{:02}", d.target % spec.n_families)),
            e3: e3s[d.target % 3],
            doi: format!("10.5555/synth.t{:03}.p{}", d.target, d.paper),
            year: d.year,
            dc50_nm: Some(dc50),
            dmax_pct: Some(dmax),
            cell_line: Some(format!("CL{}", d.paper % 4)),
            label,
            explicit_label: false,
        });
    }
    Ok(Cohort::new(records))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Observation {
    pub target: String,
    pub paper: String,
    pub rep: usize,
    pub y: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationSpec {
    pub n_targets: usize,
    /// Inclusive range.
    pub papers_per_target: (usize, usize),
    pub reps: usize,
    pub mu: f64,
    pub sigma_target: f64,
    pub sigma_lab: f64,
    pub sigma_eps: f64,
    pub seed: u64,
}

pub fn generate_observation_table(spec: &ObservationSpec) -> Result<Vec<Observation>> {
    if spec.reps < 2 {
        return Err(Error::invalid("reps", "need at least two replicates"));
    }
    if spec.n_targets == 0 || spec.papers_per_target.0 == 0 || spec.papers_per_target.0 > spec.papers_per_target.1 {
        return Err(Error::invalid("papers_per_target", "need n_targets >= 1 and 1 <= min <= max"));
    }
    let dist = |sd: f64, name: &str| Normal::new(0.0, sd).map_err(|_| Error::invalid(name, "must be >= 0"));
    let (nt, nl, ne) = (
        dist(spec.sigma_target, "sigma_target")?,
        dist(spec.sigma_lab, "sigma_lab")?,
        dist(spec.sigma_eps, "sigma_eps")?,
    );
    let mut rng = rng::stream(spec.seed, 0);
    let mut out = Vec::new();
    for t in 0..spec.n_targets {
        let a = nt.sample(&mut rng);
        let n_papers = rng.random_range(spec.papers_per_target.0..=spec.papers_per_target.1);
        for p in 0..n_papers {
            let b = nl.sample(&mut rng);
            for rep in 0..spec.reps {
                out.push(Observation {
                    target: format!("T{t:03}"),
                    paper: format!("T{t:03}/P{p}"),
                    rep,
                    y: spec.mu + a + b + ne.sample(&mut rng),
                });
            }
        }
    }
    Ok(out)
}

/// Lab SD that makes `E[SS_lab] / (N - 1)` equal `implied_sd^2` on a
/// balanced design; `None` when the residual variance alone exceeds it.
pub fn sigma_lab_for_implied_sd(implied_sd: f64, n_targets: usize, n_papers: usize, reps: usize, sigma_eps: f64) -> Option<f64> {
    let n = (n_papers * reps) as f64;
    let df_lab = (n_papers - n_targets) as f64;
    let s2 = (implied_sd.powi(2) * (n - 1.0) / df_lab - sigma_eps.powi(2)) / reps as f64;
    (s2 >= 0.0).then(|| s2.sqrt())
}

/// Overconfident scores: `p ~ U(0, 1)` with outcomes drawn at the shrunken
/// probability `0.5 + 0.5 (2p - 1)^3`.
pub fn overconfident_scores(n: usize, seed: u64) -> (Vec<f64>, Vec<bool>) {
    let mut rng = rng::stream(seed, 0);
    (0..n)
        .map(|_| {
            let p: f64 = rng.random();
            let truth = 0.5 + 0.5 * (2.0 * p - 1.0).powi(3);
            (p, rng.random::<f64>() < truth)
        })
        .unzip()
}

#[cfg(test)]
mod unit {
    use super::*;
    use crate::dataset::{eligible_targets, EligibilityRule};

    #[test]
    fn cohort_shape() {
        let spec = SynthSpec {
            n_targets: 4,
            ..Default::default()
        };
        let c = generate_cohort(&spec).unwrap();
        assert_eq!(c.len(), 4 * 3 * 30);
        assert!(c.records().iter().all(|r| r.structure.len() == 40));
        assert_eq!(eligible_targets(&c, EligibilityRule::CrossLab).len(), 4);
        let again = generate_cohort(&spec).unwrap();
        assert_eq!(c.records(), again.records());
    }

    #[test]
    fn no_reuse_means_unique_structures() {
        let c = generate_cohort(&SynthSpec::default()).unwrap();
        let mut s: Vec<&str> = c.records().iter().map(|r| r.structure.as_str()).collect();
        s.sort();
        s.dedup();
        assert_eq!(s.len(), c.len());
    }

    #[test]
    fn observation_shape() {
        let spec = ObservationSpec {
            n_targets: 3,
            papers_per_target: (2, 2),
            reps: 4,
            mu: 0.6,
            sigma_target: 0.0,
            sigma_lab: 0.0,
            sigma_eps: 0.0,
            seed: 1,
        };
        let t = generate_observation_table(&spec).unwrap();
        assert_eq!(t.len(), 24);
        assert!(t.iter().all(|o| o.y == 0.6));
    }

    #[test]
    fn lab_sd_inversion() {
        let s = sigma_lab_for_implied_sd(0.125, 35, 70, 6, 0.1).unwrap();
        let n = 420.0;
        let e_ss_lab = 35.0 * (0.01 + 6.0 * s * s);
        assert!((e_ss_lab / (n - 1.0) - 0.125f64.powi(2)).abs() < 1e-12);
    }
}
