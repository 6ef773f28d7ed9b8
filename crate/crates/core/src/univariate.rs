//! Generalized Pareto utilities, empirical quantiles and return levels.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{nelder_mead_with, Constraint, NmOptions};

/// Shape magnitudes below this use the exponential limit.
pub const GAMMA_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GpdParams {
    pub sigma: f64,
    pub gamma: f64,
}

impl GpdParams {
    pub fn new(sigma: f64, gamma: f64) -> Result<Self> {
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::domain(format!("GPD scale must be positive, got {sigma}")));
        }
        if !gamma.is_finite() {
            return Err(Error::domain("GPD shape must be finite"));
        }
        Ok(GpdParams { sigma, gamma })
    }

    /// Upper support endpoint, infinite for γ ≥ 0.
    pub fn upper_endpoint(&self) -> f64 {
        if self.gamma < 0.0 {
            -self.sigma / self.gamma
        } else {
            f64::INFINITY
        }
    }
}

/// (1 + γz/σ)₊^(−1/γ); equals 1 for z ≤ 0.
pub fn gpd_survival(z: f64, p: &GpdParams) -> f64 {
    if z <= 0.0 {
        return 1.0;
    }
    let x = z / p.sigma;
    if 1.0 + p.gamma * x <= 0.0 {
        return 0.0;
    }
    (-log1p_over(p.gamma, x)).exp()
}

/// ln(1 + γx)/γ, first-order series x(1 − γx/2) below the shape cutoff.
pub(crate) fn log1p_over(gamma: f64, x: f64) -> f64 {
    if gamma.abs() < GAMMA_EPS {
        x * (1.0 - 0.5 * gamma * x)
    } else {
        libm::log1p(gamma * x) / gamma
    }
}

pub fn gpd_cdf(z: f64, p: &GpdParams) -> f64 {
    1.0 - gpd_survival(z, p)
}

/// Log density; −∞ outside the support.
pub fn gpd_log_density(z: f64, p: &GpdParams) -> f64 {
    if z < 0.0 {
        return f64::NEG_INFINITY;
    }
    let x = z / p.sigma;
    if 1.0 + p.gamma * x <= 0.0 {
        return f64::NEG_INFINITY;
    }
    -p.sigma.ln() - libm::log1p(p.gamma * x) - log1p_over(p.gamma, x)
}

/// Quantile at non-exceedance probability `q`.
pub fn gpd_quantile(q: f64, p: &GpdParams) -> f64 {
    let l = -libm::log1p(-q);
    p.sigma * expm1_over(p.gamma, l)
}

/// (e^{γl} − 1)/γ with the γ → 0 limit l.
pub(crate) fn expm1_over(gamma: f64, l: f64) -> f64 {
    if gamma.abs() < GAMMA_EPS {
        l * (1.0 + 0.5 * gamma * l)
    } else {
        libm::expm1(gamma * l) / gamma
    }
}

/// GPD maximum likelihood with γ restricted to (−0.9, 1).
pub fn gpd_fit_mle(exceedances: &[f64]) -> Result<GpdParams> {
    let n = exceedances.len();
    if n < 30 {
        return Err(Error::input(format!("GPD fit needs at least 30 exceedances, got {n}")));
    }
    if exceedances.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::input("exceedances must be finite and nonnegative"));
    }
    let nf = n as f64;
    let mean = exceedances.iter().sum::<f64>() / nf;
    let var = exceedances.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (nf - 1.0);
    if !(var > 1e-14 * mean.max(1e-300).powi(2)) || !(mean > 0.0) {
        return Err(Error::input("degenerate exceedance sample"));
    }
    let ratio = mean * mean / var;
    let g0 = (0.5 * (1.0 - ratio)).clamp(-0.5, 0.5);
    let s0 = (0.5 * mean * (ratio + 1.0)).max(1e-12 * mean);
    let scale = mean;

    let nll = |th: &[f64]| {
        let p = GpdParams { sigma: scale * th[0].exp(), gamma: th[1] };
        let mut s = 0.0;
        for &z in exceedances {
            s -= gpd_log_density(z, &p);
        }
        s
    };
    // keep the start inside the support when γ < 0
    let max = exceedances.iter().cloned().fold(0.0, f64::max);
    let mut start = [(s0 / scale).ln(), g0];
    if g0 < 0.0 && 1.0 + g0 * max / s0 <= 0.0 {
        start = [(mean / scale).ln(), 0.0];
    }
    let lo = -0.9 + 1e-9;
    let hi = 1.0 - 1e-9;
    let opts = NmOptions { tol: 1e-9, max_evals: 4000, restarts: 2, initial_step: 0.1 };
    let c = Constraint::Box { lower: vec![-50.0, lo], upper: vec![50.0, hi] };
    let r = nelder_mead_with(nll, &start, &c, &opts)?;
    if !r.converged {
        return Err(Error::Numerical {
            msg: "GPD likelihood optimization did not converge".into(),
            best: Some(r.objective_value),
        });
    }
    GpdParams::new(scale * r.argmin[0].exp(), r.argmin[1])
}

/// Type-7 quantile: linear interpolation at position (n−1)q of the sorted sample.
pub fn empirical_quantile(sample: &[f64], q: f64) -> Result<f64> {
    if sample.is_empty() {
        return Err(Error::input("empirical quantile of an empty sample"));
    }
    if !(0.0..=1.0).contains(&q) {
        return Err(Error::input(format!("quantile level {q} outside [0, 1]")));
    }
    let mut x = sample.to_vec();
    x.sort_by(f64::total_cmp);
    Ok(quantile_sorted(&x, q))
}

/// Type-7 quantile of an already sorted sample.
pub fn quantile_sorted(x: &[f64], q: f64) -> f64 {
    let n = x.len();
    if n == 1 {
        return x[0];
    }
    let h = (n - 1) as f64 * q;
    let lo = (h.floor() as usize).min(n - 1);
    let hi = (lo + 1).min(n - 1);
    x[lo] + (h - lo as f64) * (x[hi] - x[lo])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReturnLevelSpec {
    pub years: f64,
    pub blocks_per_year: f64,
}

impl ReturnLevelSpec {
    pub fn new(years: f64, blocks_per_year: f64) -> Result<Self> {
        let s = ReturnLevelSpec { years, blocks_per_year };
        s.exceedance_prob()?;
        Ok(s)
    }

    /// Weekly blocks.
    pub fn weekly(years: f64) -> Self {
        ReturnLevelSpec { years, blocks_per_year: 52.0 }
    }

    /// Number of blocks N in the return period.
    pub fn n_blocks(&self) -> f64 {
        self.years * self.blocks_per_year
    }

    pub fn exceedance_prob(&self) -> Result<f64> {
        if !(self.years > 0.0 && self.blocks_per_year > 0.0) {
            return Err(Error::input("return period and blocks per year must be positive"));
        }
        let p = 1.0 / self.n_blocks();
        if !(p > 0.0 && p < 1.0) {
            return Err(Error::input(format!("exceedance probability {p} outside (0, 1)")));
        }
        Ok(p)
    }
}

/// Threshold, rate and GPD fit behind a return-level estimate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReturnLevelFit {
    pub threshold: f64,
    pub rate: f64,
    pub gpd: GpdParams,
    pub level: f64,
}

/// Peaks-over-threshold return level u₀ + σ/γ[(ζN)^γ − 1].
pub fn return_level(sample: &[f64], spec: &ReturnLevelSpec, fit_threshold_q: f64) -> Result<f64> {
    Ok(return_level_fit(sample, spec, fit_threshold_q)?.level)
}

pub fn return_level_fit(sample: &[f64], spec: &ReturnLevelSpec, fit_threshold_q: f64) -> Result<ReturnLevelFit> {
    spec.exceedance_prob()?;
    let u0 = empirical_quantile(sample, fit_threshold_q)?;
    let exc: Vec<f64> = sample.iter().filter(|&&x| x > u0).map(|&x| x - u0).collect();
    let gpd = gpd_fit_mle(&exc)?;
    let rate = exc.len() as f64 / sample.len() as f64;
    let level = u0 + gpd.sigma * expm1_over(gpd.gamma, (rate * spec.n_blocks()).ln());
    Ok(ReturnLevelFit { threshold: u0, rate, gpd, level })
}
