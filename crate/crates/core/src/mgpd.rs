//! Multivariate generalized Pareto model with independent reverse-exponential
//! generators.
//!
//! The standardized vector is Z* = E + T − max T with E unit exponential and
//! Tⱼ = −βⱼ − Xⱼ/αⱼ, Xⱼ unit exponential. Data-scale components are
//! Zⱼ = σⱼ/γ (exp(γZ*ⱼ) − 1) with a shape γ common to all sites.

use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, Exp1};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{nelder_mead_with, Constraint, NmOptions, RngStream};
use crate::univariate::{empirical_quantile, expm1_over, gpd_fit_mle, gpd_survival, GpdParams, GAMMA_EPS};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MgpdModel {
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    pub sigma: Vec<f64>,
    pub gamma: f64,
}

impl MgpdModel {
    pub fn new(alpha: Vec<f64>, beta: Vec<f64>, sigma: Vec<f64>, gamma: f64) -> Result<Self> {
        let d = alpha.len();
        if d == 0 || beta.len() != d || sigma.len() != d {
            return Err(Error::input("mGPD parameter vectors must be nonempty and of equal length"));
        }
        if alpha.iter().any(|a| !(*a > 0.0 && a.is_finite())) {
            return Err(Error::domain("generator rates must be positive"));
        }
        if sigma.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
            return Err(Error::domain("marginal scales must be positive"));
        }
        if beta.iter().any(|b| !b.is_finite()) || !gamma.is_finite() {
            return Err(Error::domain("generator shifts and shape must be finite"));
        }
        Ok(MgpdModel { alpha, beta, sigma, gamma })
    }

    pub fn d(&self) -> usize {
        self.alpha.len()
    }

    /// Standardized value z* of a data-scale exceedance; `None` outside the support.
    fn to_std(&self, y: f64, j: usize) -> Option<f64> {
        let x = y / self.sigma[j];
        if self.gamma.abs() < GAMMA_EPS {
            return Some(x);
        }
        let b = 1.0 + self.gamma * x;
        if b <= 0.0 {
            None
        } else {
            Some(libm::log1p(self.gamma * x) / self.gamma)
        }
    }
}

/// Exceedance rows (unshifted) and the thresholds that selected them.
#[derive(Debug, Clone, PartialEq)]
pub struct ExceedanceSet {
    pub rows: Array2<f64>,
    pub threshold_u: Vec<f64>,
}

impl ExceedanceSet {
    /// Rows of `values` exceeding `threshold_u` in at least one component.
    pub fn new(values: &Array2<f64>, threshold_u: Vec<f64>) -> Result<Self> {
        if threshold_u.len() != values.ncols() {
            return Err(Error::input("threshold length does not match the number of sites"));
        }
        let keep: Vec<usize> = values
            .rows()
            .into_iter()
            .enumerate()
            .filter(|(_, r)| r.iter().zip(&threshold_u).any(|(x, u)| x > u))
            .map(|(i, _)| i)
            .collect();
        Ok(ExceedanceSet { rows: values.select(ndarray::Axis(0), &keep), threshold_u })
    }

    /// Thresholds at the per-site empirical `q` quantile.
    pub fn at_quantile(values: &Array2<f64>, q: f64) -> Result<Self> {
        let u = marginal_thresholds(values, q)?;
        ExceedanceSet::new(values, u)
    }

    pub fn len(&self) -> usize {
        self.rows.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.nrows() == 0
    }
}

/// Per-column type-7 empirical quantiles.
pub fn marginal_thresholds(values: &Array2<f64>, q: f64) -> Result<Vec<f64>> {
    values.columns().into_iter().map(|c| empirical_quantile(&c.to_vec(), q)).collect()
}

/// log f_{Z*}(z) for the reverse-exponential generator; −∞ when max(z) ≤ 0.
pub fn mgpd_log_density_std(z: &[f64], alpha: &[f64], beta: &[f64]) -> Result<f64> {
    if z.len() != alpha.len() || z.len() != beta.len() {
        return Err(Error::input("dimension mismatch"));
    }
    if z.iter().chain(alpha).chain(beta).any(|v| !v.is_finite()) {
        return Err(Error::input("non-finite density argument"));
    }
    Ok(log_density_std(z, alpha, beta))
}

fn log_density_std(z: &[f64], alpha: &[f64], beta: &[f64]) -> f64 {
    let zmax = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if zmax <= 0.0 {
        return f64::NEG_INFINITY;
    }
    let sa: f64 = alpha.iter().sum();
    let zb_max = z.iter().zip(beta).map(|(a, b)| a + b).fold(f64::NEG_INFINITY, f64::max);
    let mut s = -zmax - zb_max * sa - sa.ln();
    for ((zj, aj), bj) in z.iter().zip(alpha).zip(beta) {
        s += aj.ln() + aj * (zj + bj);
    }
    s
}

/// Log density of a threshold excess y = x − u on the data scale.
pub fn mgpd_log_density(y: &[f64], model: &MgpdModel) -> f64 {
    let mut zs = Vec::with_capacity(y.len());
    let mut jac = 0.0;
    for (j, &yj) in y.iter().enumerate() {
        match model.to_std(yj, j) {
            Some(z) => zs.push(z),
            None => return f64::NEG_INFINITY,
        }
        jac -= (model.sigma[j] + model.gamma * yj).ln();
    }
    log_density_std(&zs, &model.alpha, &model.beta) + jac
}

/// Fitted model with optimizer diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MgpdFit {
    pub model: MgpdModel,
    pub nll: f64,
    /// Euclidean norm of the finite-difference gradient at the optimum (internal parameters).
    pub grad_norm: f64,
    pub iterations: usize,
    pub n_rows: usize,
}

/// Maximum likelihood on threshold excesses with β₁ = 0.
pub fn mgpd_fit(data: &ExceedanceSet) -> Result<MgpdFit> {
    let (n, d) = data.rows.dim();
    if d < 2 {
        return Err(Error::input("mGPD fit requires at least two sites"));
    }
    if n < 50 {
        return Err(Error::input(format!("mGPD fit requires at least 50 exceedance rows, got {n}")));
    }
    let y: Vec<Vec<f64>> = data
        .rows
        .rows()
        .into_iter()
        .map(|r| r.iter().zip(&data.threshold_u).map(|(x, u)| x - u).collect())
        .collect();
    if y.iter().all(|r| r == &y[0]) {
        return Err(Error::numerical("all exceedance rows are identical"));
    }

    // marginal starting values from the positive parts
    let mut sig0 = vec![0.0; d];
    let mut gam = Vec::new();
    for j in 0..d {
        let pos: Vec<f64> = y.iter().map(|r| r[j]).filter(|v| *v > 0.0).collect();
        let mean = if pos.is_empty() { 1.0 } else { pos.iter().sum::<f64>() / pos.len() as f64 };
        sig0[j] = mean.max(1e-8);
        if let Ok(p) = gpd_fit_mle(&pos) {
            sig0[j] = p.sigma;
            gam.push(p.gamma);
        }
    }
    let mut g0 = if gam.is_empty() { 0.1 } else { gam.iter().sum::<f64>() / gam.len() as f64 };
    for j in 0..d {
        let ymin = y.iter().map(|r| r[j]).fold(f64::INFINITY, f64::min);
        let ymax = y.iter().map(|r| r[j]).fold(f64::NEG_INFINITY, f64::max);
        if g0 > 0.0 && ymin < 0.0 {
            g0 = g0.min(0.5 * sig0[j] / -ymin);
        }
        if g0 < 0.0 && ymax > 0.0 {
            g0 = g0.max(-0.5 * sig0[j] / ymax);
        }
    }

    let unpack = |th: &[f64]| -> MgpdModel {
        let alpha = th[..d].iter().map(|v| v.exp()).collect();
        let mut beta = vec![0.0; d];
        beta[1..].copy_from_slice(&th[d..2 * d - 1]);
        let sigma = th[2 * d - 1..3 * d - 1].iter().map(|v| v.exp()).collect();
        MgpdModel { alpha, beta, sigma, gamma: th[3 * d - 1] }
    };
    let nll = |th: &[f64]| -> f64 {
        if th.iter().any(|v| !v.is_finite() || v.abs() > 50.0) {
            return f64::INFINITY;
        }
        let m = unpack(th);
        let mut s = 0.0;
        for r in &y {
            s -= mgpd_log_density(r, &m);
        }
        s
    };
    let mut x0 = vec![0.0; 3 * d];
    for j in 0..d {
        x0[2 * d - 1 + j] = sig0[j].ln();
    }
    x0[3 * d - 1] = g0;
    if !nll(&x0).is_finite() {
        x0[3 * d - 1] = 0.0;
    }
    let opts = NmOptions { tol: 1e-7, max_evals: 20_000, restarts: 3, initial_step: 0.2 };
    let r = nelder_mead_with(nll, &x0, &Constraint::None, &opts)?;
    if !r.converged {
        return Err(Error::Numerical {
            msg: "mGPD likelihood optimization did not converge".into(),
            best: Some(r.objective_value),
        });
    }
    let grad_norm = fd_grad_norm(&nll, &r.argmin);
    Ok(MgpdFit {
        model: unpack(&r.argmin),
        nll: r.objective_value,
        grad_norm,
        iterations: r.iterations,
        n_rows: n,
    })
}

pub(crate) fn fd_grad_norm<F: Fn(&[f64]) -> f64>(f: &F, x: &[f64]) -> f64 {
    let mut g2 = 0.0;
    let mut xp = x.to_vec();
    for i in 0..x.len() {
        let h = 1e-5 * x[i].abs().max(1.0);
        xp[i] = x[i] + h;
        let fp = f(&xp);
        xp[i] = x[i] - h;
        let fm = f(&xp);
        xp[i] = x[i];
        let g = (fp - fm) / (2.0 * h);
        if g.is_finite() {
            g2 += g * g;
        } else {
            return f64::INFINITY;
        }
    }
    g2.sqrt()
}

const CHUNK: usize = 4096;

fn draw_generator<R: Rng + ?Sized>(model: &MgpdModel, rng: &mut R, t: &mut [f64]) {
    for (j, tj) in t.iter_mut().enumerate().take(model.d()) {
        let x: f64 = Exp1.sample(rng);
        *tj = -model.beta[j] - x / model.alpha[j];
    }
}

/// Standardized draws Z* (rows).
pub fn mgpd_simulate_std(model: &MgpdModel, n: usize, rng: RngStream) -> Array2<f64> {
    let d = model.d();
    let chunks: Vec<Vec<f64>> = (0..n.div_ceil(CHUNK))
        .into_par_iter()
        .map(|c| {
            let rows = CHUNK.min(n - c * CHUNK);
            let mut r = rng.child(c as u64).rng();
            let mut out = Vec::with_capacity(rows * d);
            let mut t = vec![0.0; d];
            for _ in 0..rows {
                draw_generator(model, &mut r, &mut t);
                let e: f64 = Exp1.sample(&mut r);
                let m = t.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                out.extend(t.iter().map(|tj| e + tj - m));
            }
            out
        })
        .collect();
    Array2::from_shape_vec((n, d), chunks.concat()).expect("shape")
}

/// Data-scale threshold excesses Z (rows).
pub fn mgpd_simulate(model: &MgpdModel, n: usize, rng: RngStream) -> Array2<f64> {
    let mut z = mgpd_simulate_std(model, n, rng);
    for mut row in z.rows_mut() {
        for (j, v) in row.iter_mut().enumerate() {
            *v = model.sigma[j] * expm1_over(model.gamma, *v);
        }
    }
    z
}

/// Limiting χ for a bivariate model with zero generator shifts.
pub fn mgpd_chi(alpha1: f64, alpha2: f64) -> Result<f64> {
    mgpd_chi_shifted(alpha1, alpha2, 0.0, 0.0)
}

/// Limiting χ = E[min(e^{T₁−M}/p₁, e^{T₂−M}/p₂)] with pⱼ = E[e^{Tⱼ−M}], computed
/// by exact piecewise-exponential integration over Δ = T₁ − T₂.
pub fn mgpd_chi_shifted(alpha1: f64, alpha2: f64, beta1: f64, beta2: f64) -> Result<f64> {
    if !(alpha1 > 0.0 && alpha2 > 0.0) || !alpha1.is_finite() || !alpha2.is_finite() {
        return Err(Error::domain("generator rates must be positive"));
    }
    let lap = ShiftedLaplace { a1: alpha1, a2: alpha2, s: beta2 - beta1 };
    // min(1, e^Δ) and min(1, e^{−Δ}) as exponential pieces split at 0
    let p1 = lap.expect(&[0.0], |x| if x < 0.0 { (0.0, 1.0) } else { (0.0, 0.0) });
    let p2 = lap.expect(&[0.0], |x| if x < 0.0 { (0.0, 0.0) } else { (0.0, -1.0) });
    let k = (p1 / p2).ln();
    let (lp1, lp2) = (p1.ln(), p2.ln());
    let chi = lap.expect(&[0.0, k], |x| {
        let a = (-lp1 + x.min(0.0), if x < 0.0 { 1.0 } else { 0.0 });
        let b = (-lp2 - x.max(0.0), if x > 0.0 { -1.0 } else { 0.0 });
        // pick the smaller piece; constant offsets make the comparison exact at x
        if a.0 <= b.0 {
            (-lp1, a.1)
        } else {
            (-lp2, b.1)
        }
    });
    Ok(chi.clamp(0.0, 1.0))
}

/// Law of Δ = s + X₂/α₂ − X₁/α₁.
struct ShiftedLaplace {
    a1: f64,
    a2: f64,
    s: f64,
}

impl ShiftedLaplace {
    /// E[h(Δ)] where on each interval between `breaks` (and s) h(x) = exp(c + r·x),
    /// returned by `piece(x)` as (c, r) for any interior x.
    fn expect<H: Fn(f64) -> (f64, f64)>(&self, breaks: &[f64], piece: H) -> f64 {
        let mut pts: Vec<f64> = breaks.iter().cloned().chain(std::iter::once(self.s)).collect();
        pts.sort_by(f64::total_cmp);
        pts.dedup();
        let mut edges = vec![f64::NEG_INFINITY];
        edges.extend(pts);
        edges.push(f64::INFINITY);
        let lc = (self.a1 * self.a2 / (self.a1 + self.a2)).ln();
        let mut total = 0.0;
        for w in edges.windows(2) {
            let (lo, hi) = (w[0], w[1]);
            if lo >= hi {
                continue;
            }
            let probe = if lo.is_finite() && hi.is_finite() {
                0.5 * (lo + hi)
            } else if lo.is_finite() {
                lo + 1.0
            } else {
                hi - 1.0
            };
            let (hc, hr) = piece(probe);
            let (dc, dr) = if probe > self.s {
                (lc + self.a2 * self.s, -self.a2)
            } else {
                (lc - self.a1 * self.s, self.a1)
            };
            total += integrate_exp(hc + dc, hr + dr, lo, hi);
        }
        total
    }
}

/// ∫_lo^hi exp(c + r x) dx for a convergent configuration.
fn integrate_exp(c: f64, r: f64, lo: f64, hi: f64) -> f64 {
    if r == 0.0 {
        return c.exp() * (hi - lo);
    }
    if r > 0.0 {
        (c + r * hi).exp() * -libm::expm1(-r * (hi - lo)) / r
    } else {
        (c + r * lo).exp() * -libm::expm1(r * (hi - lo)) / -r
    }
}

/// Monte Carlo χ(u) estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChiUEstimate {
    pub value: f64,
    pub se: f64,
    /// Set when the level is too extreme for the simulation size.
    pub low_count_warning: bool,
}

/// χ(u) for sites (i, j) of `model`.
///
/// The unit-exponential E is integrated out analytically, so each generator
/// draw contributes P(E > maxₖ(zₖ + M − Tₖ)) instead of a 0/1 indicator. The
/// marginal quantiles z(u) are solved against the same simulated generators.
pub fn mgpd_chi_u_pair(model: &MgpdModel, i: usize, j: usize, u: f64, n_mc: usize, rng: RngStream) -> Result<ChiUEstimate> {
    if !(0.5..1.0).contains(&u) {
        return Err(Error::domain(format!("level {u} outside [0.5, 1)")));
    }
    if i >= model.d() || j >= model.d() || i == j {
        return Err(Error::input("invalid site pair"));
    }
    if n_mc < 2 {
        return Err(Error::input("at least two Monte Carlo draws are required"));
    }
    let d = model.d();
    // gaps gₖ = M − Tₖ ≥ 0 per draw
    let gaps: Vec<[f64; 2]> = {
        let mut r = rng.rng();
        let mut t = vec![0.0; d];
        (0..n_mc)
            .map(|_| {
                draw_generator(model, &mut r, &mut t);
                let m = t.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                [m - t[i], m - t[j]]
            })
            .collect()
    };
    let q = 1.0 - u;
    let surv = |z: f64, k: usize| -> f64 {
        gaps.iter().map(|g| (-(z + g[k]).max(0.0)).exp()).sum::<f64>() / n_mc as f64
    };
    let mut z = [0.0; 2];
    for (k, zk) in z.iter_mut().enumerate() {
        let p = surv(0.0, k);
        *zk = if q <= p {
            (p / q).ln()
        } else {
            let mut lo = -1.0;
            while surv(lo, k) < q {
                lo *= 2.0;
            }
            crate::numerics::brent(|x| surv(x, k) - q, lo, 0.0, 1e-12, 1e-12)?
        };
    }
    let terms: Vec<f64> = gaps.iter().map(|g| (-(z[0] + g[0]).max(z[1] + g[1]).max(0.0)).exp() / q).collect();
    let mean = terms.iter().sum::<f64>() / n_mc as f64;
    let var = terms.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / (n_mc as f64 - 1.0);
    let se = (var / n_mc as f64).sqrt();
    Ok(ChiUEstimate { value: mean.clamp(0.0, 1.0), se, low_count_warning: false })
}

/// χ(u) for the first two sites.
pub fn mgpd_chi_u(model: &MgpdModel, u: f64, n_mc: usize, rng: RngStream) -> Result<ChiUEstimate> {
    mgpd_chi_u_pair(model, 0, 1, u, n_mc, rng)
}

/// Plain rank-based χ(u) from a simulated sample of excesses.
pub fn mgpd_chi_u_empirical(model: &MgpdModel, i: usize, j: usize, u: f64, n_mc: usize, rng: RngStream) -> Result<ChiUEstimate> {
    if !(0.5..1.0).contains(&u) {
        return Err(Error::domain(format!("level {u} outside [0.5, 1)")));
    }
    let z = mgpd_simulate_std(model, n_mc, rng);
    let x = z.column(i).to_vec();
    let y = z.column(j).to_vec();
    let c = crate::dependence::empirical_chi_u_counts(&x, &y, u)?;
    let value = if c.conditioning > 0 { c.joint as f64 / c.conditioning as f64 } else { f64::NAN };
    let se = (value * (1.0 - value) / c.conditioning.max(1) as f64).sqrt();
    let expected_joint = n_mc as f64 * (1.0 - u) * value;
    Ok(ChiUEstimate { value, se, low_count_warning: expected_joint < 20.0 })
}

/// Tail probability of w·X > v from the projection property.
///
/// Below the projected threshold w·u the empirical frequency is returned;
/// above it, the empirical rate at w·u times the GPD(w·σ, γ) survival.
pub fn mgpd_tail_prob(model: &MgpdModel, data: &Array2<f64>, w: &[f64], u: &[f64], v: f64) -> Result<f64> {
    let d = data.ncols();
    if w.len() != d || u.len() != d || model.d() != d {
        return Err(Error::input("dimension mismatch in tail probability"));
    }
    if w.iter().any(|x| *x < 0.0 || !x.is_finite()) {
        return Err(Error::input("weights must be nonnegative"));
    }
    if w.iter().all(|x| *x == 0.0) {
        return Err(Error::input("all weights are zero"));
    }
    let sums = crate::data::weighted_sums(data, w);
    let n = sums.len() as f64;
    let wu: f64 = w.iter().zip(u).map(|(a, b)| a * b).sum();
    let freq = |t: f64| sums.iter().filter(|&&s| s > t).count() as f64 / n;
    if v <= wu {
        return Ok(freq(v));
    }
    let scale: f64 = w.iter().zip(&model.sigma).map(|(a, b)| a * b).sum();
    let h = gpd_survival(v - wu, &GpdParams { sigma: scale, gamma: model.gamma });
    Ok(freq(wu) * h)
}
