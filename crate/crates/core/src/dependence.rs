//! Empirical tail dependence and χ(u) curves.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attribution::{resample_indices, BootstrapScheme};
use crate::efcm::{efcm_chi_u, EfcmModel};
use crate::error::{Error, Result};
use crate::hw::{hw_chi_u_pair, HwModel};
use crate::mgpd::{mgpd_chi_u_pair, MgpdModel};
use crate::numerics::{average_ranks, RngStream};
use crate::univariate::quantile_sorted;

/// Joint and conditioning counts behind a rank-based χ(u).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ChiCounts {
    pub joint: usize,
    pub conditioning: usize,
}

/// Counts of {rank_x > un and rank_y > un} and {rank_y > un}.
pub fn empirical_chi_u_counts(x: &[f64], y: &[f64], u: f64) -> Result<ChiCounts> {
    if x.len() != y.len() {
        return Err(Error::input("samples must have equal length"));
    }
    let n = x.len() as f64;
    let rx = average_ranks(x);
    let ry = average_ranks(y);
    let cut = u * n;
    let mut joint = 0;
    let mut cond = 0;
    for (a, b) in rx.iter().zip(&ry) {
        if *b > cut {
            cond += 1;
            if *a > cut {
                joint += 1;
            }
        }
    }
    Ok(ChiCounts { joint, conditioning: cond })
}

/// Rank-based χ(u); `None` when no observation conditions.
pub fn empirical_chi_u(x: &[f64], y: &[f64], u: f64) -> Result<Option<f64>> {
    let n = x.len();
    if n < 100 {
        return Err(Error::input(format!("empirical χ(u) needs at least 100 pairs, got {n}")));
    }
    check_level(u)?;
    if (1.0 - u) * (n as f64) < 5.0 {
        return Err(Error::input(format!("level {u} leaves fewer than 5 expected exceedances")));
    }
    let c = empirical_chi_u_counts(x, y, u)?;
    Ok((c.conditioning > 0).then(|| c.joint as f64 / c.conditioning as f64))
}

fn check_level(u: f64) -> Result<()> {
    if !(0.5..1.0).contains(&u) {
        return Err(Error::input(format!("level {u} outside [0.5, 1)")));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChiSource {
    Empirical,
    Mgpd,
    Efcm,
    Hw,
    Truth,
}

/// χ(u) on a grid with optional pointwise bands; `None` marks undefined values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChiCurve {
    pub u_grid: Vec<f64>,
    pub values: Vec<Option<f64>>,
    pub lower: Option<Vec<Option<f64>>>,
    pub upper: Option<Vec<Option<f64>>>,
    pub source: ChiSource,
}

/// 40 equally spaced levels on [0.5, 0.995].
pub fn default_u_grid() -> Vec<f64> {
    (0..40).map(|i| 0.5 + 0.495 * i as f64 / 39.0).collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Band {
    None,
    Bootstrap { replicates: usize, level: f64, scheme: BootstrapScheme },
}

/// A fitted model and the site pair whose χ(u) is wanted.
#[derive(Debug, Clone, Copy)]
pub enum ChiModel<'a> {
    /// Monte Carlo size for the Rao–Blackwellized estimator.
    Mgpd { model: &'a MgpdModel, n_mc: usize },
    Efcm(&'a EfcmModel),
    Hw(&'a HwModel),
}

fn check_grid(grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::input("empty u grid"));
    }
    if grid.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::input("u grid must be strictly increasing"));
    }
    grid.iter().try_for_each(|&u| check_level(u))
}

/// Empirical χ(u) curve for one pair of series, with percentile bands from
/// resampled rows when requested. Levels with fewer than 5 expected
/// exceedances are `None`.
pub fn chi_curve_empirical(x: &[f64], y: &[f64], grid: &[f64], band: Band, rng: RngStream) -> Result<ChiCurve> {
    check_grid(grid)?;
    let n = x.len() as f64;
    let chi_at = |x: &[f64], y: &[f64], u: f64| {
        if (1.0 - u) * n < 5.0 && n >= 100.0 { Ok(None) } else { empirical_chi_u(x, y, u) }
    };
    let values = grid.iter().map(|&u| chi_at(x, y, u)).collect::<Result<Vec<_>>>()?;
    let (lower, upper) = match band {
        Band::None => (None, None),
        Band::Bootstrap { replicates, level, scheme } => {
            if replicates < 2 || !(level > 0.0 && level < 1.0) {
                return Err(Error::input("bootstrap needs at least 2 replicates and a level in (0, 1)"));
            }
            let reps: Vec<Vec<Option<f64>>> = (0..replicates)
                .into_par_iter()
                .map(|b| {
                    let idx = resample_indices(x.len(), scheme, &mut rng.child(b as u64).rng());
                    let xb: Vec<f64> = idx.iter().map(|&i| x[i]).collect();
                    let yb: Vec<f64> = idx.iter().map(|&i| y[i]).collect();
                    grid.iter().map(|&u| chi_at(&xb, &yb, u).ok().flatten()).collect()
                })
                .collect();
            let a = 0.5 * (1.0 - level);
            let mut lo = Vec::with_capacity(grid.len());
            let mut hi = Vec::with_capacity(grid.len());
            for g in 0..grid.len() {
                let mut v: Vec<f64> = reps.iter().filter_map(|r| r[g]).collect();
                if v.is_empty() {
                    lo.push(None);
                    hi.push(None);
                } else {
                    v.sort_by(f64::total_cmp);
                    lo.push(Some(quantile_sorted(&v, a)));
                    hi.push(Some(quantile_sorted(&v, 1.0 - a)));
                }
            }
            (Some(lo), Some(hi))
        }
    };
    Ok(ChiCurve { u_grid: grid.to_vec(), values, lower, upper, source: ChiSource::Empirical })
}

/// Model χ(u) curve for sites (i, j).
pub fn chi_curve_model(model: ChiModel<'_>, i: usize, j: usize, grid: &[f64], rng: RngStream) -> Result<ChiCurve> {
    check_grid(grid)?;
    let (values, source) = match model {
        ChiModel::Mgpd { model, n_mc } => {
            let v = grid
                .iter()
                .map(|&u| mgpd_chi_u_pair(model, i, j, u, n_mc, rng).map(|e| Some(e.value)))
                .collect::<Result<Vec<_>>>()?;
            (v, ChiSource::Mgpd)
        }
        ChiModel::Efcm(m) => {
            if i >= m.d() || j >= m.d() {
                return Err(Error::input("site index out of range"));
            }
            let rho = m.rho(i, j);
            let v = grid.iter().map(|&u| efcm_chi_u(m.lambda, rho, u).map(Some)).collect::<Result<Vec<_>>>()?;
            (v, ChiSource::Efcm)
        }
        ChiModel::Hw(m) => {
            if i >= m.d() || j >= m.d() {
                return Err(Error::input("site index out of range"));
            }
            let v = grid.iter().map(|&u| hw_chi_u_pair(m, i, j, u).map(Some)).collect::<Result<Vec<_>>>()?;
            (v, ChiSource::Hw)
        }
    };
    Ok(ChiCurve { u_grid: grid.to_vec(), values, lower: None, upper: None, source })
}
