//! Huser–Wadsworth random scale mixture X = R^δ W^{1−δ}.
//!
//! R is standard Pareto and W has standard Pareto margins with either a
//! Gaussian or an inverted extreme-value logistic (IEVL) copula. Computations
//! run on the log scale Y = log X = δE + (1−δ)W̃ with E and W̃ unit
//! exponential: the margin is hypoexponential, and every bivariate quantity is
//! a one-dimensional integral over the mixing variable.

use ndarray::Array2;
use rand_distr::{Distribution, Exp1, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{exp_correlation, pairs, Metric};
use crate::error::{Error, Result};
use crate::numerics::{
    brent, ln_bvn_cdf, ln_integral_exp, ln_std_normal_cdf, nelder_mead_with, positive_stable, psd_factor,
    pseudo_uniforms, std_normal_isf, std_normal_ppf, Constraint, NmOptions, RngStream,
};

pub const DELTA_MIN: f64 = 1e-5;
pub const DELTA_MAX: f64 = 0.99999;
const IEVL_ALPHA_MIN: f64 = 0.02;

/// Copula of the W process.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase")]
pub enum WCopula {
    /// Exponential correlogram exp(−h/range).
    Gaussian { range: f64 },
    /// Inverted logistic with dependence α ∈ (0, 1]; α = 1 is independence.
    Ievl { alpha: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CopulaFamily {
    Gaussian,
    Ievl,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HwModel {
    pub dep_delta: f64,
    pub w_copula: WCopula,
    pub coords: Vec<[f64; 2]>,
    #[serde(default)]
    pub metric: Metric,
}

impl HwModel {
    pub fn new(dep_delta: f64, w_copula: WCopula, coords: Vec<[f64; 2]>, metric: Metric) -> Result<Self> {
        check_delta(dep_delta)?;
        match w_copula {
            WCopula::Gaussian { range } if !(range > 0.0 && range.is_finite()) => {
                return Err(Error::domain("Gaussian range must be positive"));
            }
            WCopula::Ievl { alpha } if !(alpha > 0.0 && alpha <= 1.0) => {
                return Err(Error::domain("IEVL alpha must lie in (0, 1]"));
            }
            _ => {}
        }
        if coords.is_empty() {
            return Err(Error::input("no site coordinates"));
        }
        Ok(HwModel { dep_delta, w_copula, coords, metric })
    }

    pub fn d(&self) -> usize {
        self.coords.len()
    }

    fn pair_w(&self, i: usize, j: usize) -> PairW {
        match self.w_copula {
            WCopula::Gaussian { range } => {
                PairW::gauss((-self.metric.distance(self.coords[i], self.coords[j]) / range).exp())
            }
            WCopula::Ievl { alpha } => PairW::Ievl { alpha },
        }
    }
}

fn check_delta(delta: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&delta) {
        return Err(Error::domain(format!("dependence parameter {delta} outside [0, 1]")));
    }
    Ok(())
}

// ---------- margins ----------

/// Rates (a, b) of the two exponential summands with a ≤ b (b may be +∞).
fn rates(delta: f64) -> (f64, f64) {
    let lo = delta.min(1.0 - delta);
    (1.0 / delta.max(1.0 - delta), if lo > 0.0 { 1.0 / lo } else { f64::INFINITY })
}

/// (1 − e^{−t})/t, equal to 1 at 0 and 0 at ∞.
fn phi(t: f64) -> f64 {
    if t.is_infinite() {
        0.0
    } else if t < 1e-8 {
        1.0 - 0.5 * t
    } else {
        -(-t).exp_m1() / t
    }
}

/// ln P(Y > y) = −ay + ln(1 + ay·φ((b − a)y)).
pub fn hw_ln_sf_log(y: f64, delta: f64) -> f64 {
    if y <= 0.0 {
        return 0.0;
    }
    let (a, b) = rates(delta);
    -a * y + (a * y * phi((b - a) * y)).ln_1p()
}

/// ln density of Y.
pub fn hw_ln_pdf_log(y: f64, delta: f64) -> f64 {
    let (a, b) = rates(delta);
    if y < 0.0 || (y == 0.0 && b.is_finite()) {
        return f64::NEG_INFINITY;
    }
    if b.is_infinite() {
        return a.ln() - a * y;
    }
    let t = (b - a) * y;
    let ln_phi = if t < 1e-8 { -0.5 * t } else { (-(-t).exp_m1()).ln() - t.ln() };
    a.ln() + b.ln() + y.ln() - a * y + ln_phi
}

/// Quantile of Y.
pub fn hw_quantile_log(u: f64, delta: f64) -> Result<f64> {
    if !(u > 0.0 && u < 1.0) {
        return Err(Error::domain(format!("probability {u} outside (0, 1)")));
    }
    hw_isf_log_ln(libm::log1p(-u), delta)
}

/// Y value with exceedance probability `s`.
pub fn hw_isf_log(s: f64, delta: f64) -> Result<f64> {
    if !(s > 0.0 && s < 1.0) {
        return Err(Error::domain(format!("probability {s} outside (0, 1)")));
    }
    hw_isf_log_ln(s.ln(), delta)
}

fn hw_isf_log_ln(target: f64, delta: f64) -> Result<f64> {
    check_delta(delta)?;
    let (a, _) = rates(delta);
    let lo = -target / a;
    let g = |y: f64| hw_ln_sf_log(y, delta) - target;
    if g(lo) <= 1e-15 {
        return Ok(lo);
    }
    let mut hi = 2.0 * lo + 1.0;
    while g(hi) > 0.0 {
        hi = 2.0 * hi + 1.0;
    }
    brent(g, lo, hi, 1e-14, 1e-13)
}

/// P(X > x) = [δx^{−1/δ} − (1−δ)x^{−1/(1−δ)}]/(2δ − 1), evaluated without
/// cancellation and continuous through δ = ½.
pub fn hw_marginal_survival(x: f64, dep_delta: f64) -> Result<f64> {
    check_delta(dep_delta)?;
    if !(x >= 1.0) {
        return Err(Error::domain(format!("x = {x} below the support endpoint 1")));
    }
    Ok(hw_ln_sf_log(x.ln(), dep_delta).exp())
}

pub fn hw_marginal_cdf(x: f64, dep_delta: f64) -> Result<f64> {
    check_delta(dep_delta)?;
    if !(x >= 1.0) {
        return Ok(0.0);
    }
    Ok(-hw_ln_sf_log(x.ln(), dep_delta).exp_m1())
}

pub fn hw_marginal_quantile(u: f64, dep_delta: f64) -> Result<f64> {
    Ok(hw_quantile_log(u, dep_delta)?.exp())
}

// ---------- W copulas on unit-exponential margins ----------

#[derive(Debug, Clone, Copy)]
enum PairW {
    Gauss { rho: f64, s: f64 },
    Ievl { alpha: f64 },
}

/// Φ⁻¹(1 − e^{−c}): the Gaussian score of an exponential value.
fn zc(c: f64) -> f64 {
    if c <= 0.0 {
        f64::NEG_INFINITY
    } else if c < std::f64::consts::LN_2 {
        std_normal_ppf(-(-c).exp_m1())
    } else if c < 700.0 {
        std_normal_isf((-c).exp())
    } else {
        // Newton on ln Φ(−z) = −c
        let mut z = (2.0 * c).sqrt();
        for _ in 0..50 {
            let h = ln_std_normal_cdf(-z) + c;
            let dz = h / (crate::numerics::ln_std_normal_pdf(z) - ln_std_normal_cdf(-z)).exp();
            z += dz;
            if dz.abs() < 1e-14 * z {
                break;
            }
        }
        z
    }
}

impl PairW {
    fn gauss(rho: f64) -> Self {
        PairW::Gauss { rho, s: (1.0 - rho * rho).sqrt() }
    }

    /// ln P(W̃₁ > c, W̃₂ > c).
    fn ln_sf_diag(&self, c: f64) -> f64 {
        match *self {
            PairW::Gauss { rho, .. } => {
                let z = zc(c);
                ln_bvn_cdf(-z, -z, rho)
            }
            PairW::Ievl { alpha } => -(2f64).powf(alpha) * c,
        }
    }

    /// ln ∂F_W/∂c₁.
    fn ln_d1(&self, c1: f64, c2: f64) -> f64 {
        match *self {
            PairW::Gauss { rho, s } => -c1 + ln_std_normal_cdf((zc(c2) - rho * zc(c1)) / s),
            PairW::Ievl { alpha } => {
                let (lt, v) = ievl_t(alpha, c1, c2);
                let ln_v1 = (alpha - 1.0) * lt + (1.0 / alpha - 1.0) * c1.ln();
                let x = (ln_v1 - v + c1).min(0.0);
                -c1 + (-x.exp_m1()).ln()
            }
        }
    }

    /// ln density of (W̃₁, W̃₂).
    fn ln_density(&self, c1: f64, c2: f64) -> f64 {
        match *self {
            PairW::Gauss { rho, s } => {
                let (z1, z2) = (zc(c1), zc(c2));
                let s2 = s * s;
                -c1 - c2 - s.ln() - (rho * rho * (z1 * z1 + z2 * z2) - 2.0 * rho * z1 * z2) / (2.0 * s2)
            }
            PairW::Ievl { alpha } => {
                let (lt, v) = ievl_t(alpha, c1, c2);
                -v + (1.0 / alpha - 1.0) * (c1.ln() + c2.ln()) + (alpha - 2.0) * lt + (v + (1.0 - alpha) / alpha).ln()
            }
        }
    }
}

/// (ln T, V) with T = c₁^{1/α} + c₂^{1/α} and V = T^α.
fn ievl_t(alpha: f64, c1: f64, c2: f64) -> (f64, f64) {
    let (a, b) = (c1.ln() / alpha, c2.ln() / alpha);
    let m = a.max(b);
    let lt = m + ((a - m).exp() + (b - m).exp()).ln();
    (lt, (alpha * lt).exp())
}

// ---------- bivariate functions of Y ----------

struct HwPair {
    delta: f64,
    k: f64,
    w: PairW,
    tol: f64,
}

impl HwPair {
    fn new(delta: f64, w: PairW, tol: f64) -> Self {
        HwPair { delta, k: (1.0 - delta) / delta, w, tol }
    }

    /// ln P(Y₁ > y, Y₂ > y); requires δ ∈ (0, 1).
    fn ln_joint_sf_diag(&self, y: f64) -> f64 {
        if y <= 0.0 {
            return 0.0;
        }
        let (d, k) = (self.delta, self.k);
        let head = -y / d;
        let tail = ln_integral_exp(|c| head + k * c + self.w.ln_sf_diag(c), y / (1.0 - d), self.tol);
        let (a, b) = (head, k.ln() + tail);
        let m = a.max(b);
        m + ((a - m).exp() + (b - m).exp()).ln()
    }

    /// P(Y₁ ≤ y, Y₂ ≤ y).
    fn joint_cdf_diag(&self, y: f64) -> f64 {
        let s = hw_ln_sf_log(y, self.delta).exp();
        (1.0 - 2.0 * s + self.ln_joint_sf_diag(y).exp()).clamp(0.0, 1.0)
    }

    /// ln ∂F/∂y₁ at (y₁, y₂).
    fn ln_d1(&self, y1: f64, y2: f64) -> f64 {
        let (d, k) = (self.delta, self.k);
        let m = y1.min(y2);
        if m <= 0.0 {
            return f64::NEG_INFINITY;
        }
        let gap = (y1 - y2).abs() / (1.0 - d);
        let first_larger = y1 >= y2;
        let g = |c: f64| {
            let v = if first_larger { self.w.ln_d1(c + gap, c) } else { self.w.ln_d1(c, c + gap) };
            k * c + v
        };
        -d.ln() - m / d + ln_integral_exp(g, m / (1.0 - d), self.tol)
    }

    /// ln f(y₁, y₂).
    fn ln_pdf(&self, y1: f64, y2: f64) -> f64 {
        let (d, k) = (self.delta, self.k);
        let m = y1.min(y2);
        if m <= 0.0 {
            return f64::NEG_INFINITY;
        }
        let gap = (y1 - y2).abs() / (1.0 - d);
        let g = |c: f64| k * c + self.w.ln_density(c, c + gap);
        -(d * (1.0 - d)).ln() - m / d + ln_integral_exp(g, m / (1.0 - d), self.tol)
    }
}

// ---------- simulation ----------

const CHUNK: usize = 4096;

/// W̃ = log W rows (unit-exponential margins).
fn simulate_w_log(model: &HwModel, n: usize, rng: RngStream) -> Result<Array2<f64>> {
    let d = model.d();
    let factor = match model.w_copula {
        WCopula::Gaussian { range } => Some(psd_factor(&exp_correlation(&model.coords, range, model.metric))?),
        WCopula::Ievl { .. } => None,
    };
    let chunks: Vec<Vec<f64>> = (0..n.div_ceil(CHUNK))
        .into_par_iter()
        .map(|c| {
            let rows = CHUNK.min(n - c * CHUNK);
            let mut r = rng.child(c as u64).rng();
            let mut out = Vec::with_capacity(rows * d);
            let mut e = vec![0.0; d];
            for _ in 0..rows {
                match (model.w_copula, &factor) {
                    (WCopula::Gaussian { .. }, Some(l)) => {
                        for v in e.iter_mut() {
                            *v = StandardNormal.sample(&mut r);
                        }
                        for i in 0..d {
                            let z: f64 = (0..d).map(|k| l[(i, k)] * e[k]).sum();
                            out.push(-ln_std_normal_cdf(-z));
                        }
                    }
                    (WCopula::Ievl { alpha }, _) => {
                        let s = positive_stable(alpha, &mut r);
                        for _ in 0..d {
                            let x: f64 = Exp1.sample(&mut r);
                            out.push((x / s).powf(alpha));
                        }
                    }
                    _ => unreachable!(),
                }
            }
            out
        })
        .collect();
    Ok(Array2::from_shape_vec((n, d), chunks.concat()).expect("shape"))
}

/// Rows of log X = δ log R + (1−δ) log W.
pub fn hw_simulate_log(model: &HwModel, n: usize, rng: RngStream) -> Result<Array2<f64>> {
    let mut w = simulate_w_log(model, n, rng.child(0))?;
    let mut r = rng.child(1).rng();
    let delta = model.dep_delta;
    for mut row in w.rows_mut() {
        let e: f64 = Exp1.sample(&mut r);
        row.mapv_inplace(|wt| delta * e + (1.0 - delta) * wt);
    }
    Ok(w)
}

/// Rows of X = R^δ W^{1−δ} on the standard scale.
pub fn hw_simulate(model: &HwModel, n: usize, rng: RngStream) -> Result<Array2<f64>> {
    Ok(hw_simulate_log(model, n, rng)?.mapv_into(f64::exp))
}

// ---------- extremal dependence ----------

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HwChi {
    pub value: f64,
    pub se: f64,
    /// δ ≤ ½: the limit is zero.
    pub asymptotically_independent: bool,
}

/// Monte Carlo χ = E[min(W₁, W₂)^{(1−δ)/δ}]·(2δ − 1)/δ for sites 0 and 1.
pub fn hw_chi(model: &HwModel, n_mc: usize, rng: RngStream) -> Result<HwChi> {
    let delta = model.dep_delta;
    if delta <= 0.5 {
        return Ok(HwChi { value: 0.0, se: 0.0, asymptotically_independent: true });
    }
    if model.d() < 2 {
        return Err(Error::input("χ needs two sites"));
    }
    if n_mc < 2 {
        return Err(Error::input("Monte Carlo size must be at least 2"));
    }
    let k = (1.0 - delta) / delta;
    let w = simulate_w_log(model, n_mc, rng)?;
    let vals: Vec<f64> = w.rows().into_iter().map(|r| (k * r[0].min(r[1])).exp()).collect();
    let n = n_mc as f64;
    let mean = vals.iter().sum::<f64>() / n;
    let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let f = (2.0 * delta - 1.0) / delta;
    Ok(HwChi { value: mean * f, se: f * (var / n).sqrt(), asymptotically_independent: false })
}

/// χ for sites i, j with the expectation evaluated by quadrature:
/// E[e^{k·min W̃}] = 1 + k∫₀^∞ e^{kc} P(W̃₁ > c, W̃₂ > c) dc.
pub fn hw_chi_exact_pair(model: &HwModel, i: usize, j: usize) -> Result<f64> {
    let delta = model.dep_delta;
    if delta <= 0.5 {
        return Ok(0.0);
    }
    if delta == 1.0 {
        return Ok(1.0);
    }
    let w = model.pair_w(i, j);
    let k = (1.0 - delta) / delta;
    let ln_int = ln_integral_exp(|c| k * c + w.ln_sf_diag(c), 1e4, 1e-10);
    Ok(((1.0 + k * ln_int.exp()) * (2.0 * delta - 1.0) / delta).clamp(0.0, 1.0))
}

/// χ(u) = P(X₁ > x_u, X₂ > x_u)/(1 − u) for sites 0 and 1.
pub fn hw_chi_u(model: &HwModel, u: f64) -> Result<f64> {
    if model.d() < 2 {
        return Err(Error::input("χ(u) needs two sites"));
    }
    hw_chi_u_pair(model, 0, 1, u)
}

pub fn hw_chi_u_pair(model: &HwModel, i: usize, j: usize, u: f64) -> Result<f64> {
    if !(0.5..1.0).contains(&u) {
        return Err(Error::domain(format!("level {u} outside [0.5, 1)")));
    }
    let delta = model.dep_delta;
    let w = model.pair_w(i, j);
    let ln_q = (-u).ln_1p();
    if delta == 1.0 {
        return Ok(1.0);
    }
    if delta == 0.0 {
        return Ok((w.ln_sf_diag(-ln_q) - ln_q).exp().clamp(0.0, 1.0));
    }
    let y = hw_quantile_log(u, delta)?;
    let lj = HwPair::new(delta, w, 1e-10).ln_joint_sf_diag(y);
    if !lj.is_finite() && lj != f64::NEG_INFINITY {
        return Err(Error::numerical("χ(u) quadrature failed"));
    }
    Ok((lj - ln_q).exp().clamp(0.0, 1.0))
}

// ---------- inference ----------

#[derive(Debug, Clone)]
pub struct HwFitOptions {
    pub censor_q: f64,
    /// δ values at which the profile likelihood is reported; the best point seeds the joint search.
    pub profile_grid: Vec<f64>,
    /// Relative tolerance of the per-observation integrals.
    pub quad_tol: f64,
    pub max_evals: usize,
}

impl Default for HwFitOptions {
    fn default() -> Self {
        HwFitOptions {
            censor_q: 0.9,
            profile_grid: vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9],
            quad_tol: 1e-7,
            max_evals: 300,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HwFit {
    pub model: HwModel,
    pub nll: f64,
    pub converged: bool,
    pub delta_at_upper_bound: bool,
    /// (δ, profile negative log-likelihood) on the requested grid.
    pub profile: Vec<[f64; 2]>,
}

pub fn hw_fit(data: &Array2<f64>, coords: &[[f64; 2]], metric: Metric, family: CopulaFamily, censor_q: f64) -> Result<HwFit> {
    hw_fit_with(data, coords, metric, family, &HwFitOptions { censor_q, ..HwFitOptions::default() })
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

fn expit(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Pairwise censored pseudo-likelihood on rank-based pseudo-uniforms.
pub fn hw_fit_with(
    data: &Array2<f64>,
    coords: &[[f64; 2]],
    metric: Metric,
    family: CopulaFamily,
    opts: &HwFitOptions,
) -> Result<HwFit> {
    let (n, d) = data.dim();
    if d < 2 {
        return Err(Error::input("HW fit requires at least two sites"));
    }
    if n < 200 {
        return Err(Error::input(format!("HW fit requires at least 200 rows, got {n}")));
    }
    if coords.len() != d {
        return Err(Error::input("coordinate count does not match the number of sites"));
    }
    if !(0.0..1.0).contains(&opts.censor_q) {
        return Err(Error::input("censoring level must lie in [0, 1)"));
    }
    let prs = pairs(d);
    let dist: Vec<f64> = prs.iter().map(|&(i, j)| metric.distance(coords[i], coords[j])).collect();
    if family == CopulaFamily::Gaussian {
        if let Some(p) = dist.iter().position(|h| !(*h > 0.0)) {
            return Err(Error::input(format!("sites {} and {} coincide", prs[p].0, prs[p].1)));
        }
    }
    let u: Vec<Vec<f64>> = (0..d).map(|j| pseudo_uniforms(&data.column(j).to_vec())).collect();
    let lik = HwLik { u: &u, prs: &prs, dist: &dist, q: opts.censor_q, family, tol: opts.quad_tol };

    let (th_lo, th_hi, th0) = match family {
        CopulaFamily::Gaussian => {
            let hmin = dist.iter().cloned().fold(f64::INFINITY, f64::min);
            let hmax = dist.iter().cloned().fold(0.0, f64::max);
            let mut s = dist.clone();
            s.sort_by(f64::total_cmp);
            ((hmin * 1e-2).ln(), (hmax * 1e3).ln(), s[s.len() / 2].ln())
        }
        CopulaFamily::Ievl => (IEVL_ALPHA_MIN, 1.0, 0.5),
    };

    let mut profile = Vec::with_capacity(opts.profile_grid.len());
    let mut best = (f64::INFINITY, logit(0.5), th0);
    let prof_opts = NmOptions { tol: 1e-3, max_evals: 40, restarts: 0, initial_step: 0.5 };
    for &dg in &opts.profile_grid {
        if !(dg > DELTA_MIN && dg < DELTA_MAX) {
            return Err(Error::input(format!("profile grid value {dg} outside the search interval")));
        }
        let c = Constraint::Box { lower: vec![th_lo], upper: vec![th_hi] };
        let v = match nelder_mead_with(|t| lik.nll(dg, t[0]), &[th0], &c, &prof_opts) {
            Ok(r) => {
                if r.objective_value < best.0 {
                    best = (r.objective_value, logit(dg), r.argmin[0]);
                }
                r.objective_value
            }
            Err(_) => f64::INFINITY,
        };
        profile.push([dg, v]);
    }
    let start = [best.1, best.2];
    let c = Constraint::Box { lower: vec![logit(DELTA_MIN), th_lo], upper: vec![logit(DELTA_MAX), th_hi] };
    let nm = NmOptions { tol: 1e-4, max_evals: opts.max_evals, restarts: 1, initial_step: 0.3 };
    let r = nelder_mead_with(|t| lik.nll(expit(t[0]), t[1]), &start, &c, &nm)
        .map_err(|e| Error::Numerical { msg: format!("HW likelihood optimization failed: {e}"), best: None })?;
    if !r.objective_value.is_finite() {
        return Err(Error::Numerical { msg: "HW likelihood not finite at optimum".into(), best: None });
    }
    let delta = expit(r.argmin[0]).clamp(DELTA_MIN, DELTA_MAX);
    let w_copula = match family {
        CopulaFamily::Gaussian => WCopula::Gaussian { range: r.argmin[1].exp() },
        CopulaFamily::Ievl => WCopula::Ievl { alpha: r.argmin[1] },
    };
    Ok(HwFit {
        model: HwModel::new(delta, w_copula, coords.to_vec(), metric)?,
        nll: r.objective_value,
        converged: r.converged,
        delta_at_upper_bound: delta > DELTA_MAX - 1e-4,
        profile,
    })
}

struct HwLik<'a> {
    u: &'a [Vec<f64>],
    prs: &'a [(usize, usize)],
    dist: &'a [f64],
    q: f64,
    family: CopulaFamily,
    tol: f64,
}

impl HwLik<'_> {
    fn nll(&self, delta: f64, theta: f64) -> f64 {
        let q = self.q;
        let latent: Vec<Vec<(f64, f64)>> = self
            .u
            .iter()
            .map(|col| {
                col.iter()
                    .map(|&ui| {
                        if ui > q {
                            match hw_quantile_log(ui, delta) {
                                Ok(y) => (y, hw_ln_pdf_log(y, delta)),
                                Err(_) => (f64::NAN, f64::NAN),
                            }
                        } else {
                            (f64::NAN, f64::NAN)
                        }
                    })
                    .collect()
            })
            .collect();
        let yq = if q > 0.0 {
            match hw_quantile_log(q, delta) {
                Ok(y) => y,
                Err(_) => return f64::INFINITY,
            }
        } else {
            0.0
        };
        let terms: Vec<f64> = self
            .prs
            .par_iter()
            .zip(self.dist.par_iter())
            .map(|(&(i, j), &h)| {
                let w = match self.family {
                    CopulaFamily::Gaussian => PairW::gauss((-h / theta.exp()).exp()),
                    CopulaFamily::Ievl => PairW::Ievl { alpha: theta },
                };
                let pair = HwPair::new(delta, w, self.tol);
                let (li, lj) = (&latent[i], &latent[j]);
                let mut s = 0.0;
                let mut n_none = 0usize;
                for t in 0..li.len() {
                    let ei = self.u[i][t] > q;
                    let ej = self.u[j][t] > q;
                    s += match (ei, ej) {
                        (true, true) => pair.ln_pdf(li[t].0, lj[t].0) - li[t].1 - lj[t].1,
                        (true, false) => pair.ln_d1(li[t].0, yq) - li[t].1,
                        (false, true) => pair.ln_d1(lj[t].0, yq) - lj[t].1,
                        (false, false) => {
                            n_none += 1;
                            0.0
                        }
                    };
                }
                if n_none > 0 {
                    s += n_none as f64 * pair.joint_cdf_diag(yq).ln();
                }
                -s
            })
            .collect();
        let v: f64 = terms.iter().sum();
        if v.is_nan() { f64::INFINITY } else { v }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{bvn_cdf, integrate_1d, ks_one_sample};

    fn gauss_model(delta: f64, range: f64) -> HwModel {
        HwModel::new(delta, WCopula::Gaussian { range }, vec![[0.0, 0.0], [1.0, 0.0]], Metric::Euclidean).unwrap()
    }

    /// P(X > x) = ∫₁^∞ min(1, (x r^{−δ})^{−1/(1−δ)}) r^{−2} dr.
    fn survival_oracle(x: f64, delta: f64) -> f64 {
        let r0 = x.powf(1.0 / delta);
        let g = |t: f64| {
            let r = t.exp();
            (x * r.powf(-delta)).powf(-1.0 / (1.0 - delta)).min(1.0) / r
        };
        // split at the kink r = x^{1/δ}, working in t = ln r
        let a = integrate_1d(g, 0.0, r0.ln(), 1e-13).unwrap();
        a + 1.0 / r0
    }

    #[test]
    fn survival_matches_direct_integration() {
        for &delta in &[0.2, 0.5 - 1e-6, 0.5 + 1e-6, 0.7, 0.9] {
            for &x in &[1.5, 10.0, 1e3] {
                let a = hw_marginal_survival(x, delta).unwrap();
                let b = survival_oracle(x, delta);
                assert!((a - b).abs() < 1e-10, "δ={delta} x={x}: {a} vs {b}");
            }
        }
        assert_eq!(hw_marginal_survival(1.0, 0.7).unwrap(), 1.0);
        let e = std::f64::consts::E;
        assert!((hw_marginal_survival(e, 0.5).unwrap() - 3.0 * (-2.0f64).exp()).abs() < 1e-14);
        assert!(hw_marginal_survival(0.5, 0.7).is_err());
        assert!((hw_marginal_survival(10.0, 1.0).unwrap() - 0.1).abs() < 1e-15);
        assert!((hw_marginal_survival(10.0, 0.0).unwrap() - 0.1).abs() < 1e-15);
    }

    #[test]
    fn survival_continuous_through_half() {
        for k in 0..50 {
            let x = 1.0 + k as f64 * 3.0;
            let a = hw_marginal_survival(x, 0.5 - 1e-6).unwrap();
            let b = hw_marginal_survival(x, 0.5 + 1e-6).unwrap();
            let c = hw_marginal_survival(x, 0.5).unwrap();
            assert!((a - b).abs() < 1e-9 && (a - c).abs() < 1e-9);
        }
    }

    #[test]
    fn log_density_integrates_survival() {
        for &delta in &[0.3, 0.5, 0.8, 1.0] {
            let p = integrate_1d(|y| hw_ln_pdf_log(y, delta).exp(), 1.0, 4.0, 1e-12).unwrap();
            let s = hw_ln_sf_log(1.0, delta).exp() - hw_ln_sf_log(4.0, delta).exp();
            assert!((p - s).abs() < 1e-11, "δ={delta}");
        }
    }

    #[test]
    fn quantile_round_trip() {
        for &delta in &[0.0, 0.3, 0.5, 0.7, 1.0] {
            for &u in &[1e-9, 0.5, 0.9, 0.99, 0.999, 1.0 - 1e-9] {
                let x = hw_marginal_quantile(u, delta).unwrap();
                let s = hw_marginal_survival(x, delta).unwrap();
                assert!((s - (1.0 - u)).abs() < 1e-9 * (1.0 - u).max(1e-6), "δ={delta} u={u}");
            }
        }
        assert!(hw_marginal_quantile(1e-12, 0.6).unwrap() - 1.0 < 1e-5);
    }

    #[test]
    fn simulation_margins_and_extremes_of_delta() {
        let m = gauss_model(0.7, 0.8);
        let x = hw_simulate(&m, 100_000, RngStream::new(1)).unwrap();
        let (d, _) = ks_one_sample(&x.column(0).to_vec(), |v| hw_marginal_cdf(v, 0.7).unwrap());
        assert!(d < 0.01, "KS {d}");

        let one = hw_simulate(&gauss_model(1.0, 0.8), 100, RngStream::new(2)).unwrap();
        assert!(one.rows().into_iter().all(|r| r[0] == r[1]));

        let zero = hw_simulate(&gauss_model(0.0, 0.8), 1000, RngStream::new(3)).unwrap();
        let w = simulate_w_log(&gauss_model(0.0, 0.8), 1000, RngStream::new(3).child(0)).unwrap();
        assert!(zero.iter().zip(w.iter()).all(|(a, b)| (a - b.exp()).abs() <= 1e-12 * a));

        let iev = HwModel::new(0.4, WCopula::Ievl { alpha: 0.5 }, vec![[0.0, 0.0]; 3], Metric::Euclidean).unwrap();
        let xi = hw_simulate(&iev, 100_000, RngStream::new(4)).unwrap();
        let (d, _) = ks_one_sample(&xi.column(2).to_vec(), |v| hw_marginal_cdf(v, 0.4).unwrap());
        assert!(d < 0.01);
    }

    /// Joint CDF by direct integration over the mixing variable.
    fn cdf_oracle(y1: f64, y2: f64, delta: f64, w: PairW) -> f64 {
        let fw = |c1: f64, c2: f64| match w {
            PairW::Gauss { rho, .. } => bvn_cdf(zc(c1), zc(c2), rho),
            PairW::Ievl { alpha } => {
                let v = (c1.powf(1.0 / alpha) + c2.powf(1.0 / alpha)).powf(alpha);
                1.0 - (-c1).exp() - (-c2).exp() + (-v).exp()
            }
        };
        let top = y1.min(y2) / delta;
        integrate_1d(
            |r: f64| (-r).exp() * fw((y1 - delta * r) / (1.0 - delta), (y2 - delta * r) / (1.0 - delta)),
            0.0,
            top,
            1e-13,
        )
        .unwrap()
    }

    #[test]
    fn bivariate_functions_match_oracle() {
        for &(delta, w) in &[(0.7, PairW::gauss(0.4)), (0.3, PairW::gauss(0.6)), (0.6, PairW::Ievl { alpha: 0.6 })] {
            let p = HwPair::new(delta, w, 1e-11);
            for &(y1, y2) in &[(2.0, 2.5), (3.0, 1.8)] {
                let h = 1e-5;
                let d1 = (cdf_oracle(y1 + h, y2, delta, w) - cdf_oracle(y1 - h, y2, delta, w)) / (2.0 * h);
                let a = p.ln_d1(y1, y2).exp();
                assert!((a - d1).abs() < 1e-7 * d1.max(1e-3), "δ={delta} {y1},{y2}: {a} vs {d1}");
                let h = 1e-3;
                let f = |a: f64, b: f64| cdf_oracle(a, b, delta, w);
                let d12 = (f(y1 + h, y2 + h) - f(y1 + h, y2 - h) - f(y1 - h, y2 + h) + f(y1 - h, y2 - h)) / (4.0 * h * h);
                let g = p.ln_pdf(y1, y2).exp();
                assert!((g - d12).abs() < 1e-4 * g, "δ={delta} {y1},{y2}: {g} vs {d12}");
            }
            let y = 2.2;
            let c = cdf_oracle(y, y, delta, w);
            assert!((p.joint_cdf_diag(y) - c).abs() < 1e-10);
        }
    }

    #[test]
    fn chi_u_matches_simulation() {
        let m = gauss_model(0.6, 0.8);
        let x = hw_simulate_log(&m, 1_000_000, RngStream::new(9)).unwrap();
        for &u in &[0.9, 0.99] {
            let y = hw_quantile_log(u, 0.6).unwrap();
            let cnt = x.rows().into_iter().filter(|r| r[0] > y && r[1] > y).count() as f64;
            let n = x.nrows() as f64;
            let emp = cnt / n / (1.0 - u);
            let se = (cnt.max(1.0)).sqrt() / n / (1.0 - u);
            let th = hw_chi_u(&m, u).unwrap();
            assert!((emp - th).abs() < 4.0 * se, "u={u}: {emp} vs {th}");
        }
    }

    #[test]
    fn chi_u_limits() {
        let m = gauss_model(0.7, 0.8);
        let lim = hw_chi_exact_pair(&m, 0, 1).unwrap();
        let c = hw_chi_u(&m, 1.0 - 1e-5).unwrap();
        assert!((c - lim).abs() < 0.01, "{c} vs {lim}");

        let mc = hw_chi(&m, 400_000, RngStream::new(3)).unwrap();
        assert!((mc.value - lim).abs() < 4.0 * mc.se, "{:?} vs {lim}", mc);

        let ai = gauss_model(0.3, 0.8);
        let mut prev = 1.0;
        for k in 0..10 {
            let u = 0.9 + 0.0099 * k as f64;
            let v = hw_chi_u(&ai, u).unwrap();
            assert!(v < prev);
            prev = v;
        }
        assert!(hw_chi_u(&ai, 1.0 - 1e-9).unwrap() < 0.02);
        assert!(hw_chi(&ai, 10, RngStream::new(1)).unwrap().asymptotically_independent);
        assert_eq!(hw_chi(&gauss_model(0.5, 1.0), 10, RngStream::new(1)).unwrap().value, 0.0);
        assert_eq!(hw_chi(&gauss_model(1.0, 1.0), 10, RngStream::new(1)).unwrap().value, 1.0);
        let h = hw_chi_u(&gauss_model(0.45, 1.0), 0.5).unwrap();
        assert!((0.0..=1.0).contains(&h));
    }

    #[test]
    fn ievl_copula_chi_u_closed_form() {
        // δ = 0 leaves the W copula: χ(u) = (1 − u)^{2^α − 1}
        let m = HwModel::new(0.0, WCopula::Ievl { alpha: 0.6 }, vec![[0.0, 0.0]; 2], Metric::Euclidean).unwrap();
        for &u in &[0.9, 0.99] {
            let v = hw_chi_u(&m, u).unwrap();
            assert!((v - (1.0 - u).powf(2f64.powf(0.6) - 1.0)).abs() < 1e-12);
        }
    }

    #[test]
    fn fit_recovers_delta() {
        let m = gauss_model(0.7, 0.8);
        let x = hw_simulate(&m, 1000, RngStream::new(21)).unwrap();
        let opts = HwFitOptions { profile_grid: vec![0.3, 0.5, 0.7, 0.9], ..HwFitOptions::default() };
        let f = hw_fit_with(&x, &m.coords, Metric::Euclidean, CopulaFamily::Gaussian, &opts).unwrap();
        assert!((0.55..=0.85).contains(&f.model.dep_delta), "{:?}", f);
        assert_eq!(f.profile.len(), 4);
        assert!(f.profile.iter().all(|p| p[1] >= f.nll - 1e-9));
    }

    #[test]
    fn uncensored_objective_is_finite() {
        let m = gauss_model(0.6, 0.8);
        let x = hw_simulate(&m, 200, RngStream::new(2)).unwrap();
        let u: Vec<Vec<f64>> = (0..2).map(|j| pseudo_uniforms(&x.column(j).to_vec())).collect();
        let lik = HwLik { u: &u, prs: &[(0, 1)], dist: &[1.0], q: 0.0, family: CopulaFamily::Gaussian, tol: 1e-7 };
        assert!(lik.nll(0.6, 0.8f64.ln()).is_finite());
    }
}
