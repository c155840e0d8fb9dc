//! Clustered-design power: `VIF = 1 + (m - 1) rho` with `m = seeds x pairs`,
//! `n_eff = n_targets m / VIF` and the two-sided normal-approximation MDE
//! `(z_{1 - alpha/2} + z_power) sigma_d / sqrt(n_eff)`.

use serde::Serialize;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PowerRow {
    pub rho: f64,
    pub vif: f64,
    pub n_eff: f64,
    pub mde: f64,
}

pub fn power_grid(
    n_targets: usize,
    n_seeds: usize,
    n_pairs: usize,
    rho_list: &[f64],
    sigma_d: f64,
    alpha: f64,
    power: f64,
) -> Result<Vec<PowerRow>> {
    if !(sigma_d > 0.0) {
        return Err(Error::invalid("sigma_d", "must be > 0"));
    }
    if !(alpha > 0.0 && alpha < 1.0) || !(power > 0.0 && power < 1.0) {
        return Err(Error::invalid("alpha/power", "must lie in (0, 1)"));
    }
    if n_targets == 0 || n_seeds == 0 || n_pairs == 0 {
        return Err(Error::invalid("design", "counts must be >= 1"));
    }
    let z = Normal::standard();
    let za = z.inverse_cdf(1.0 - alpha / 2.0);
    let zb = z.inverse_cdf(power);
    let m = (n_seeds * n_pairs) as f64;
    rho_list
        .iter()
        .map(|&rho| {
            if !(0.0..1.0).contains(&rho) {
                return Err(Error::invalid("rho", "must lie in [0, 1)"));
            }
            let vif = 1.0 + (m - 1.0) * rho;
            let n_eff = n_targets as f64 * m / vif;
            Ok(PowerRow {
                rho,
                vif,
                n_eff,
                mde: (za + zb) * sigma_d / n_eff.sqrt(),
            })
        })
        .collect()
}
