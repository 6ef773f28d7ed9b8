//! Exponential factor copula model W = Z + V.
//!
//! Z is a Gaussian vector with exponential correlogram exp(−h/range) and V an
//! independent Exp(λ) factor shared by all sites. Margins, the bivariate CDF,
//! its first partial derivative, the bivariate density and the joint survival
//! function all reduce to univariate and bivariate normal integrals.

use ndarray::Array2;
use rand_distr::{Distribution, Exp1, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{exp_correlation, pairs, Metric};
use crate::error::{Error, Result};
use crate::numerics::{
    brent, bvn_cdf, ln_bvn_cdf, ln_std_normal_cdf, ln_std_normal_pdf, nelder_mead_with, psd_factor,
    pseudo_uniforms, std_normal_cdf, std_normal_ppf, Constraint, NmOptions, RngStream,
};

pub const LAMBDA_MIN: f64 = 1e-2;
pub const LAMBDA_MAX: f64 = 1e3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EfcmModel {
    pub lambda: f64,
    pub range_delta: f64,
    pub coords: Vec<[f64; 2]>,
    #[serde(default)]
    pub metric: Metric,
    #[serde(skip)]
    pub corr: Array2<f64>,
}

impl EfcmModel {
    pub fn new(lambda: f64, range_delta: f64, coords: Vec<[f64; 2]>, metric: Metric) -> Result<Self> {
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(Error::domain("factor rate must be positive"));
        }
        if !(range_delta > 0.0 && range_delta.is_finite()) {
            return Err(Error::domain("correlation range must be positive"));
        }
        if coords.is_empty() {
            return Err(Error::input("no site coordinates"));
        }
        let corr = exp_correlation(&coords, range_delta, metric);
        Ok(EfcmModel { lambda, range_delta, coords, metric, corr })
    }

    pub fn d(&self) -> usize {
        self.coords.len()
    }

    pub fn rho(&self, i: usize, j: usize) -> f64 {
        self.corr[(i, j)]
    }
}

/// F(w) = Φ(w) − exp(λ²/2 − λw)Φ(w − λ), clamped to [0, 1].
pub fn efcm_marginal_cdf(w: f64, lambda: f64) -> f64 {
    if w == f64::NEG_INFINITY {
        return 0.0;
    }
    if w == f64::INFINITY {
        return 1.0;
    }
    (std_normal_cdf(w) - ln_tilt(w, lambda).exp()).clamp(0.0, 1.0)
}

/// 1 − F(w) = Φ(−w) + exp(λ²/2 − λw)Φ(w − λ), a sum of positive terms.
pub fn efcm_marginal_sf(w: f64, lambda: f64) -> f64 {
    if w == f64::NEG_INFINITY {
        return 1.0;
    }
    if w == f64::INFINITY {
        return 0.0;
    }
    (std_normal_cdf(-w) + ln_tilt(w, lambda).exp()).clamp(0.0, 1.0)
}

/// ln[exp(λ²/2 − λw) Φ(w − λ)].
fn ln_tilt(w: f64, lambda: f64) -> f64 {
    0.5 * lambda * lambda - lambda * w + ln_std_normal_cdf(w - lambda)
}

pub fn efcm_marginal_ln_pdf(w: f64, lambda: f64) -> f64 {
    lambda.ln() + ln_tilt(w, lambda)
}

/// Marginal quantile, solved on whichever tail keeps precision.
pub fn efcm_marginal_quantile(u: f64, lambda: f64) -> Result<f64> {
    if !(u > 0.0 && u < 1.0) {
        return Err(Error::domain(format!("probability {u} outside (0, 1)")));
    }
    let lo = std_normal_ppf(u);
    let hi = std_normal_ppf(0.5 * (1.0 + u)) + ((1.0 + u) / (1.0 - u)).ln() / lambda + 1e-9;
    if u <= 0.5 {
        brent(|w| efcm_marginal_cdf(w, lambda) - u, lo - 1e-9, hi, 1e-13, 1e-13)
    } else {
        let q = 1.0 - u;
        brent(|w| efcm_marginal_sf(w, lambda) - q, lo - 1e-9, hi, 1e-13, 1e-13)
    }
}

fn r_of(rho: f64) -> f64 {
    -((1.0 - rho) / 2.0).sqrt()
}

/// exp(λ²/2 − λw₁)·Φ₂(w₁ − λ, (w₂ − w₁ + (1−ρ)λ)/√(2(1−ρ)); −√((1−ρ)/2)), in logs.
fn ln_cross_term(w1: f64, w2: f64, lambda: f64, rho: f64) -> f64 {
    let s = (2.0 * (1.0 - rho)).sqrt();
    let b = (w2 - w1 + (1.0 - rho) * lambda) / s;
    0.5 * lambda * lambda - lambda * w1 + ln_bvn_cdf(w1 - lambda, b, r_of(rho))
}

/// Joint CDF P(W₁ ≤ w₁, W₂ ≤ w₂).
pub fn efcm_joint_cdf(w1: f64, w2: f64, lambda: f64, rho: f64) -> f64 {
    if rho >= 1.0 {
        return efcm_marginal_cdf(w1.min(w2), lambda);
    }
    let v = bvn_cdf(w1, w2, rho) - ln_cross_term(w1, w2, lambda, rho).exp() - ln_cross_term(w2, w1, lambda, rho).exp();
    v.clamp(0.0, 1.0)
}

/// ln ∂F/∂w₁ = ln λ + ln(cross term).
pub fn efcm_ln_dcdf_dw1(w1: f64, w2: f64, lambda: f64, rho: f64) -> f64 {
    lambda.ln() + ln_cross_term(w1, w2, lambda, rho)
}

/// ln f(w₁, w₂).
pub fn efcm_ln_joint_pdf(w1: f64, w2: f64, lambda: f64, rho: f64) -> f64 {
    let s = (2.0 * (1.0 - rho)).sqrt();
    let a = w1 - lambda;
    let b = (w2 - w1 + (1.0 - rho) * lambda) / s;
    let r = r_of(rho);
    lambda.ln() + 0.5 * lambda * lambda - lambda * w1 + ln_std_normal_pdf(b) - s.ln()
        + ln_std_normal_cdf((a - r * b) / (1.0 - r * r).sqrt())
}

/// Joint survival P(W₁ > w₁, W₂ > w₂) as a sum of positive terms.
pub fn efcm_joint_sf(w1: f64, w2: f64, lambda: f64, rho: f64) -> f64 {
    if rho >= 1.0 {
        return efcm_marginal_sf(w1.max(w2), lambda);
    }
    let s = (2.0 * (1.0 - rho)).sqrt();
    let r = ((1.0 - rho) / 2.0).sqrt();
    let t = |x: f64, y: f64| {
        let c = (x - y - (1.0 - rho) * lambda) / s;
        (0.5 * lambda * lambda - lambda * x + ln_bvn_cdf(x - lambda, c, r)).exp()
    };
    (bvn_cdf(-w1, -w2, rho) + t(w1, w2) + t(w2, w1)).clamp(0.0, 1.0)
}

/// Copula diagonal C(u, u).
pub fn efcm_copula_diag(u: f64, lambda: f64, rho: f64) -> Result<f64> {
    let z = efcm_marginal_quantile(u, lambda)?;
    Ok(efcm_joint_cdf(z, z, lambda, rho))
}

/// χ = 2{1 − Φ(λ√((1−ρ)/2))}.
pub fn efcm_chi(lambda: f64, rho12: f64) -> f64 {
    let rho = rho12.clamp(-1.0, 1.0);
    (2.0 * std_normal_cdf(-lambda * ((1.0 - rho) / 2.0).sqrt())).clamp(0.0, 1.0)
}

/// χ(u) = P(W₁ > z, W₂ > z)/(1 − u) with z the marginal u-quantile.
pub fn efcm_chi_u(lambda: f64, rho12: f64, u: f64) -> Result<f64> {
    if !(0.5..1.0).contains(&u) {
        return Err(Error::domain(format!("level {u} outside [0.5, 1)")));
    }
    if !(lambda > 0.0) {
        return Err(Error::domain("factor rate must be positive"));
    }
    if rho12 >= 1.0 - 1e-14 {
        return Ok(1.0);
    }
    let z = efcm_marginal_quantile(u, lambda)?;
    Ok((efcm_joint_sf(z, z, lambda, rho12) / (1.0 - u)).clamp(0.0, 1.0))
}

const CHUNK: usize = 4096;

/// Rows Z + V·1 with Z ~ N(0, corr), V ~ Exp(λ).
pub fn efcm_simulate(model: &EfcmModel, n: usize, rng: RngStream) -> Result<Array2<f64>> {
    let l = psd_factor(&model.corr)?;
    let d = model.d();
    let chunks: Vec<Vec<f64>> = (0..n.div_ceil(CHUNK))
        .into_par_iter()
        .map(|c| {
            let rows = CHUNK.min(n - c * CHUNK);
            let mut r = rng.child(c as u64).rng();
            let mut out = Vec::with_capacity(rows * d);
            let mut e = vec![0.0; d];
            for _ in 0..rows {
                for v in e.iter_mut() {
                    *v = StandardNormal.sample(&mut r);
                }
                let x: f64 = Exp1.sample(&mut r);
                let v = x / model.lambda;
                for i in 0..d {
                    let mut z = 0.0;
                    for k in 0..d {
                        z += l[(i, k)] * e[k];
                    }
                    out.push(z + v);
                }
            }
            out
        })
        .collect();
    Ok(Array2::from_shape_vec((n, d), chunks.concat()).expect("shape"))
}

/// Fitted model and diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EfcmFit {
    pub model: EfcmModel,
    pub nll: f64,
    pub converged: bool,
    /// λ̂ within 1% of the upper search bound: a sign of asymptotic independence.
    pub lambda_at_upper_bound: bool,
    /// (λ, range, objective) at each starting point tried.
    pub start_trace: Vec<[f64; 3]>,
}

/// Pairwise censored pseudo-likelihood on rank-based pseudo-uniforms.
///
/// Per pair: copula density when both components exceed `censor_q`, the
/// partial derivative when one does, and C(q, q) when neither does.
pub fn efcm_fit(data: &Array2<f64>, coords: &[[f64; 2]], metric: Metric, censor_q: f64) -> Result<EfcmFit> {
    let (n, d) = data.dim();
    if d < 2 {
        return Err(Error::input("eFCM fit requires at least two sites"));
    }
    if n < 200 {
        return Err(Error::input(format!("eFCM fit requires at least 200 rows, got {n}")));
    }
    if coords.len() != d {
        return Err(Error::input("coordinate count does not match the number of sites"));
    }
    if !(0.0..1.0).contains(&censor_q) {
        return Err(Error::input("censoring level must lie in [0, 1)"));
    }
    let prs = pairs(d);
    let mut dist = Vec::with_capacity(prs.len());
    for &(i, j) in &prs {
        let h = metric.distance(coords[i], coords[j]);
        if !(h > 0.0) {
            return Err(Error::input(format!("sites {i} and {j} coincide; correlation matrix is singular")));
        }
        dist.push(h);
    }
    let u: Vec<Vec<f64>> = (0..d).map(|j| pseudo_uniforms(&data.column(j).to_vec())).collect();
    let lik = PairLik { u: &u, prs: &prs, dist: &dist, q: censor_q };

    let hmin = dist.iter().cloned().fold(f64::INFINITY, f64::min);
    let hmax = dist.iter().cloned().fold(0.0, f64::max);
    let (rlo, rhi) = ((hmin * 1e-2).ln(), (hmax * 1e3).ln());
    let hmed = {
        let mut s = dist.clone();
        s.sort_by(f64::total_cmp);
        s[s.len() / 2]
    };
    let obj = |th: &[f64]| lik.nll(th[0].exp(), th[1].exp());

    let mut trace = Vec::new();
    let mut best = (f64::INFINITY, [0.0, hmed.ln()]);
    for &l0 in &[0.3, 1.0, 3.0, 10.0] {
        for &rf in &[0.5, 2.0] {
            let th = [f64::ln(l0), (hmed * rf).ln()];
            let v = obj(&th);
            trace.push([l0, hmed * rf, v]);
            if v < best.0 {
                best = (v, th);
            }
        }
    }
    if !best.0.is_finite() {
        return Err(Error::Numerical { msg: format!("objective not finite at any start: {trace:?}"), best: None });
    }
    let c = Constraint::Box { lower: vec![LAMBDA_MIN.ln(), rlo], upper: vec![LAMBDA_MAX.ln(), rhi] };
    let opts = NmOptions { tol: 1e-6, max_evals: 1500, restarts: 1, initial_step: 0.3 };
    let r = nelder_mead_with(obj, &best.1, &c, &opts)?;
    if !r.converged {
        return Err(Error::Numerical {
            msg: format!("eFCM likelihood optimization did not converge; starts {trace:?}"),
            best: Some(r.objective_value),
        });
    }
    let lambda = r.argmin[0].exp();
    let model = EfcmModel::new(lambda, r.argmin[1].exp(), coords.to_vec(), metric)?;
    Ok(EfcmFit {
        model,
        nll: r.objective_value,
        converged: r.converged,
        lambda_at_upper_bound: lambda > LAMBDA_MAX * 0.99,
        start_trace: trace,
    })
}

struct PairLik<'a> {
    u: &'a [Vec<f64>],
    prs: &'a [(usize, usize)],
    dist: &'a [f64],
    q: f64,
}

impl PairLik<'_> {
    fn nll(&self, lambda: f64, range: f64) -> f64 {
        let q = self.q;
        // latent values for exceedances, shared by all pairs
        let latent: Vec<Vec<(f64, f64)>> = self
            .u
            .par_iter()
            .map(|col| {
                col.iter()
                    .map(|&ui| {
                        if ui > q {
                            match efcm_marginal_quantile(ui, lambda) {
                                Ok(w) => (w, efcm_marginal_ln_pdf(w, lambda)),
                                Err(_) => (f64::NAN, f64::NAN),
                            }
                        } else {
                            (f64::NAN, f64::NAN)
                        }
                    })
                    .collect()
            })
            .collect();
        let zq = if q > 0.0 {
            match efcm_marginal_quantile(q, lambda) {
                Ok(z) => z,
                Err(_) => return f64::INFINITY,
            }
        } else {
            f64::NEG_INFINITY
        };
        let terms: Vec<f64> = self
            .prs
            .par_iter()
            .zip(self.dist.par_iter())
            .map(|(&(i, j), &h)| {
                let rho = (-h / range).exp();
                let (li, lj) = (&latent[i], &latent[j]);
                let mut s = 0.0;
                let mut n_none = 0usize;
                for t in 0..li.len() {
                    let ei = self.u[i][t] > q;
                    let ej = self.u[j][t] > q;
                    s += match (ei, ej) {
                        (true, true) => efcm_ln_joint_pdf(li[t].0, lj[t].0, lambda, rho) - li[t].1 - lj[t].1,
                        (true, false) => efcm_ln_dcdf_dw1(li[t].0, zq, lambda, rho) - li[t].1,
                        (false, true) => efcm_ln_dcdf_dw1(lj[t].0, zq, lambda, rho) - lj[t].1,
                        (false, false) => {
                            n_none += 1;
                            0.0
                        }
                    };
                }
                if n_none > 0 {
                    s += n_none as f64 * efcm_joint_cdf(zq, zq, lambda, rho).ln();
                }
                -s
            })
            .collect();
        let v: f64 = terms.iter().sum();
        if v.is_nan() { f64::INFINITY } else { v }
    }
}
