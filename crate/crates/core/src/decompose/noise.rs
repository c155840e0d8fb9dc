//! Label-noise degradation curves and projection of an AUROC gap onto an
//! equivalent noise level.
//!
//! The curve is an unweighted least-squares line through the per-level mean
//! AUROCs, `auroc = intercept + slope * level`. A gap `bound` projects to
//! `x0 = bound / |slope|`. The band at `x0` uses the regression prediction
//! standard error
//!
//! ```text
//! se(x0) = s * sqrt(1 + 1/n + (x0 - xbar)^2 / Sxx)
//! ```
//!
//! with `s` the residual standard error on `n - 2` df, divided by `|slope|`
//! to express it on the level axis, and the central 80 % Student-t quantile.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::dataset::{BinarisationScheme, Cohort};
use crate::error::{Error, Result};
use crate::eval::evaluate_foldset_with;
use crate::features::Fingerprint;
use crate::model::ModelSpec;
use crate::splits::{apply_label_noise, FoldSet, LabelNoise};
use crate::stats::{mean, sd};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LevelUnit {
    /// Flip rate in percent.
    Percent,
    /// Flip rate as a fraction in [0, 1].
    Fraction,
    /// Gaussian SD on log10 dc50.
    Sigma,
}

impl LevelUnit {
    /// Level expressed in percent where that makes sense.
    pub fn to_percent(&self, level: f64) -> Option<f64> {
        match self {
            LevelUnit::Percent => Some(level),
            LevelUnit::Fraction => Some(level * 100.0),
            LevelUnit::Sigma => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NoisePoint {
    pub level: f64,
    pub auroc_mean: f64,
    pub auroc_sd: f64,
    pub n_seeds: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NoiseCurve {
    pub unit: LevelUnit,
    pub points: Vec<NoisePoint>,
    pub slope: f64,
    pub intercept: f64,
    pub residual_se: f64,
}

impl NoiseCurve {
    /// Fit the line through `points` (at least 3, strictly increasing levels).
    pub fn fit(points: Vec<NoisePoint>, unit: LevelUnit) -> Result<Self> {
        if points.len() < 3 {
            return Err(Error::invalid("points", "need at least three noise levels"));
        }
        if points.windows(2).any(|w| !(w[1].level > w[0].level)) {
            return Err(Error::invalid("points", "levels must be strictly increasing"));
        }
        let x: Vec<f64> = points.iter().map(|p| p.level).collect();
        let y: Vec<f64> = points.iter().map(|p| p.auroc_mean).collect();
        let (xb, yb) = (mean(&x), mean(&y));
        let sxx: f64 = x.iter().map(|v| (v - xb).powi(2)).sum();
        let sxy: f64 = x.iter().zip(&y).map(|(a, b)| (a - xb) * (b - yb)).sum();
        let slope = sxy / sxx;
        let intercept = yb - slope * xb;
        let rss: f64 = x.iter().zip(&y).map(|(a, b)| (b - intercept - slope * a).powi(2)).sum();
        Ok(NoiseCurve {
            unit,
            residual_se: (rss / (x.len() - 2) as f64).sqrt(),
            points,
            slope,
            intercept,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NoiseProjection {
    pub unit: LevelUnit,
    pub bound: f64,
    pub slope: f64,
    /// `bound / |slope|`, in curve units.
    pub projection: f64,
    pub projection_pct: Option<f64>,
    /// 80 % prediction band on the level axis; absent for a bare slope.
    pub band80: Option<(f64, f64)>,
}

/// Project a gap onto a bare slope.
pub fn project_bound(slope: f64, bound: f64, unit: LevelUnit) -> Result<NoiseProjection> {
    if !(slope < 0.0) {
        return Err(Error::NonNegativeSlope(slope));
    }
    if !(bound > 0.0) {
        return Err(Error::invalid("bound", "must be > 0"));
    }
    let projection = bound / slope.abs();
    Ok(NoiseProjection {
        unit,
        bound,
        slope,
        projection,
        projection_pct: unit.to_percent(projection),
        band80: None,
    })
}

pub fn noise_calibration(curve: &NoiseCurve, bound: f64) -> Result<NoiseProjection> {
    let mut out = project_bound(curve.slope, bound, curve.unit)?;
    let x: Vec<f64> = curve.points.iter().map(|p| p.level).collect();
    let n = x.len() as f64;
    let xb = mean(&x);
    let sxx: f64 = x.iter().map(|v| (v - xb).powi(2)).sum();
    let x0 = out.projection;
    let se = curve.residual_se * (1.0 + 1.0 / n + (x0 - xb).powi(2) / sxx).sqrt();
    let t = StudentsT::new(0.0, 1.0, n - 2.0)
        .map_err(|e| Error::Degenerate(e.to_string()))?
        .inverse_cdf(0.9);
    let half = t * se / curve.slope.abs();
    out.band80 = Some((x0 - half, x0 + half));
    Ok(out)
}

/// Degradation curve: macro AUROC of `fs` with training labels corrupted at
/// each level, over `seeds` (the noise and the model share the seed).
pub fn run_noise_curve(
    cohort: &Cohort,
    fps: &[Fingerprint],
    fs: &FoldSet,
    model: &ModelSpec,
    noise: fn(f64) -> LabelNoise,
    levels: &[f64],
    unit: LevelUnit,
    scheme: &BinarisationScheme,
    seeds: &[u64],
) -> Result<NoiseCurve> {
    let model_level = |l: f64| match unit {
        LevelUnit::Percent => noise(l / 100.0),
        _ => noise(l),
    };
    let mut points = Vec::new();
    for &level in levels {
        let mut vals = Vec::new();
        for &seed in seeds {
            let eval = evaluate_foldset_with(cohort, fps, fs, model, seed, |fold| {
                apply_label_noise(cohort, &fold.train, model_level(level), scheme, seed)
                    .ok()
                    .map(|n| n.labels)
            })?;
            vals.push(eval.macro_auroc()?);
        }
        points.push(NoisePoint {
            level,
            auroc_mean: mean(&vals),
            auroc_sd: if vals.len() > 1 { sd(&vals) } else { 0.0 },
            n_seeds: vals.len(),
        });
    }
    NoiseCurve::fit(points, unit)
}
