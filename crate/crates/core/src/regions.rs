//! Homogeneous clusters of sites around grid centroids.
//!
//! Each centroid collects its nearest sites one at a time. A candidate set is
//! accepted while the excesses over per-site 90% quantiles pass the
//! Hosking–Wallis H1 heterogeneity measure and the k-sample Anderson–Darling
//! test in every supplied world; growth stops at the first failure.

use nalgebra::{Matrix3, Vector3};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{haversine_km, WorldSample};
use crate::error::{Error, Result};
use crate::numerics::{l_moments, nelder_mead_with, Constraint, NmOptions, RngStream};
use crate::univariate::quantile_sorted;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub lat_min: f64,
    pub lat_max: f64,
    pub lon_min: f64,
    pub lon_max: f64,
}

/// Regular lower-left anchored grid of (lat, lon) centroids covering `bbox`.
pub fn build_grid(bbox: &BBox, spacing_deg: f64) -> Result<Vec<[f64; 2]>> {
    if !(spacing_deg > 0.0 && spacing_deg.is_finite()) {
        return Err(Error::input("grid spacing must be positive"));
    }
    let dlat = bbox.lat_max - bbox.lat_min;
    let dlon = bbox.lon_max - bbox.lon_min;
    if !(dlat >= 0.0 && dlon >= 0.0) {
        return Err(Error::input("empty bounding box"));
    }
    let steps = |span: f64| (span / spacing_deg + 1e-9).floor() as usize + 1;
    let (nlat, nlon) = (steps(dlat), steps(dlon));
    Ok((0..nlat)
        .flat_map(|i| {
            (0..nlon).map(move |j| [bbox.lat_min + i as f64 * spacing_deg, bbox.lon_min + j as f64 * spacing_deg])
        })
        .collect())
}

// ---------- kappa distribution ----------

/// Four-parameter kappa distribution, x(F) = ξ + α/k [1 − ((1 − Fʰ)/h)ᵏ].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Kappa {
    pub xi: f64,
    pub alpha: f64,
    pub k: f64,
    pub h: f64,
}

const SMALL: f64 = 1e-8;

/// g_r = r ∫ ((1 − Fʰ)/h)ᵏ F^{r−1} dF, or `None` outside the domain where the
/// first four L-moments exist.
fn kappa_g(k: f64, h: f64, r: f64) -> Option<f64> {
    use libm::lgamma;
    if k <= -1.0 {
        return None;
    }
    let g = if h.abs() < SMALL {
        (lgamma(1.0 + k) - k * r.ln()).exp()
    } else if h > 0.0 {
        r * (lgamma(1.0 + k) + lgamma(r / h) - (1.0 + k) * h.ln() - lgamma(1.0 + k + r / h)).exp()
    } else {
        if -k - 4.0 / h <= 0.0 {
            return None;
        }
        r * (lgamma(1.0 + k) + lgamma(-k - r / h) - (1.0 + k) * (-h).ln() - lgamma(1.0 - r / h)).exp()
    };
    g.is_finite().then_some(g)
}

/// (τ₃, τ₄) of the kappa distribution.
pub fn kappa_tau(k: f64, h: f64) -> Option<(f64, f64)> {
    let k = if k.abs() < SMALL { SMALL } else { k };
    let g: Vec<f64> = (1..=4).map(|r| kappa_g(k, h, r as f64)).collect::<Option<_>>()?;
    let den = g[0] - g[1];
    if !(den.abs() > 1e-300) {
        return None;
    }
    let t3 = (-g[0] + 3.0 * g[1] - 2.0 * g[2]) / den;
    let t4 = (g[0] - 6.0 * g[1] + 10.0 * g[2] - 5.0 * g[3]) / den;
    (t3.is_finite() && t4.is_finite()).then_some((t3, t4))
}

impl Kappa {
    /// Parameters with the given mean, L-scale and shape.
    fn with_moments(l1: f64, l2: f64, k: f64, h: f64) -> Option<Kappa> {
        let k = if k.abs() < SMALL { SMALL } else { k };
        let g1 = kappa_g(k, h, 1.0)?;
        let g2 = kappa_g(k, h, 2.0)?;
        let alpha = l2 * k / (g1 - g2);
        let xi = l1 - alpha * (1.0 - g1) / k;
        (alpha > 0.0 && xi.is_finite()).then_some(Kappa { xi, alpha, k, h })
    }

    pub fn quantile(&self, f: f64) -> f64 {
        let y = if self.h.abs() < SMALL { -f.ln() } else { (1.0 - f.powf(self.h)) / self.h };
        let z = if self.k.abs() < SMALL { -y.ln() } else { (1.0 - y.powf(self.k)) / self.k };
        self.xi + self.alpha * z
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        self.quantile(rng.random::<f64>())
    }
}

/// Fitted regional distribution and whether the GPD fallback replaced the kappa fit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegionalFit {
    pub dist: Kappa,
    pub fallback: bool,
}

/// Kappa fit to (1, t, t₃, t₄) by matching τ₃ and τ₄; GPD (h = 1) matching τ₃
/// when no kappa reproduces both.
pub fn fit_regional_kappa(t: f64, t3: f64, t4: f64) -> Result<RegionalFit> {
    if !(t > 0.0 && t.is_finite() && t3.is_finite() && t4.is_finite()) {
        return Err(Error::input("regional L-moment ratios are not finite and positive"));
    }
    let obj = |p: &[f64]| match kappa_tau(p[0], p[1]) {
        Some((a, b)) => (a - t3).powi(2) + (b - t4).powi(2),
        None => 1e10,
    };
    let opts = NmOptions { tol: 1e-10, max_evals: 2000, restarts: 1, initial_step: 0.2 };
    let mut best: Option<(f64, Vec<f64>)> = None;
    for &(k0, h0) in &[(0.0, 1.0), (0.0, 0.0), (0.3, 0.5), (-0.3, 0.5), (0.2, -0.3), (-0.3, -0.3)] {
        if let Ok(r) = nelder_mead_with(obj, &[k0, h0], &Constraint::None, &opts) {
            if best.as_ref().is_none_or(|b| r.objective_value < b.0) {
                best = Some((r.objective_value, r.argmin));
            }
        }
    }
    if let Some((v, p)) = best {
        if v < 1e-10 {
            if let Some(dist) = Kappa::with_moments(1.0, t, p[0], p[1]) {
                return Ok(RegionalFit { dist, fallback: false });
            }
        }
    }
    let k = (1.0 - 3.0 * t3) / (1.0 + t3);
    let dist = Kappa::with_moments(1.0, t, k, 1.0)
        .ok_or_else(|| Error::numerical(format!("no kappa or GPD matches t3 = {t3}")))?;
    Ok(RegionalFit { dist, fallback: true })
}

// ---------- Hosking–Wallis H1 ----------

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HwHeterogeneity {
    pub h: f64,
    pub v_obs: f64,
    pub mu_sim: f64,
    pub sd_sim: f64,
    /// Homogeneous regions were simulated from a GPD instead of a kappa.
    pub fallback: bool,
}

/// Record-length weighted SD of site L-CVs about the regional mean.
fn lcv_dispersion(t: &[f64], n: &[f64]) -> f64 {
    let w: f64 = n.iter().sum();
    let tr = t.iter().zip(n).map(|(a, b)| a * b).sum::<f64>() / w;
    (t.iter().zip(n).map(|(a, b)| b * (a - tr).powi(2)).sum::<f64>() / w).sqrt()
}

/// Hosking–Wallis H1 statistic from per-site exceedance samples.
pub fn hosking_wallis_h(samples: &[Vec<f64>], n_sim: usize, rng: RngStream) -> Result<HwHeterogeneity> {
    if samples.len() < 2 {
        return Err(Error::input("heterogeneity needs at least two sites"));
    }
    if let Some(s) = samples.iter().find(|s| s.len() < 20) {
        return Err(Error::input(format!("site with {} exceedances, at least 20 required", s.len())));
    }
    if n_sim < 2 {
        return Err(Error::input("at least two simulated regions are required"));
    }
    let lm = samples.iter().map(|s| l_moments(s)).collect::<Result<Vec<_>>>()?;
    if lm.iter().any(|m| !(m.l1 > 0.0)) {
        return Err(Error::input("L-CV needs samples with a positive mean"));
    }
    let n: Vec<f64> = samples.iter().map(|s| s.len() as f64).collect();
    let w: f64 = n.iter().sum();
    let avg = |f: &dyn Fn(usize) -> f64| (0..lm.len()).map(|i| n[i] * f(i)).sum::<f64>() / w;
    let (tr, t3r, t4r) = (avg(&|i| lm[i].t), avg(&|i| lm[i].t3), avg(&|i| lm[i].t4));
    let v_obs = lcv_dispersion(&lm.iter().map(|m| m.t).collect::<Vec<_>>(), &n);
    let fit = fit_regional_kappa(tr, t3r, t4r)?;
    let sims: Vec<f64> = (0..n_sim)
        .into_par_iter()
        .map(|s| {
            let mut r = rng.child(s as u64).rng();
            let ts: Vec<f64> = samples
                .iter()
                .map(|site| {
                    let x: Vec<f64> = (0..site.len()).map(|_| fit.dist.sample(&mut r)).collect();
                    l_moments(&x).map(|m| m.t).unwrap_or(f64::NAN)
                })
                .collect();
            lcv_dispersion(&ts, &n)
        })
        .collect();
    let ok: Vec<f64> = sims.into_iter().filter(|v| v.is_finite()).collect();
    if ok.len() < 2 {
        return Err(Error::numerical("simulated regions produced no finite dispersion"));
    }
    let m = ok.iter().sum::<f64>() / ok.len() as f64;
    let sd = (ok.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (ok.len() - 1) as f64).sqrt();
    let h = if sd > 0.0 { (v_obs - m) / sd } else { f64::NEG_INFINITY };
    Ok(HwHeterogeneity { h, v_obs, mu_sim: m, sd_sim: sd, fallback: fit.fallback })
}

// ---------- k-sample Anderson–Darling ----------

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdResult {
    /// Midrank A²ₐₖₙ.
    pub statistic: f64,
    /// (A² − (k − 1)) / σₙ.
    pub standardized: f64,
    pub p_value: f64,
}

const AD_B0: [f64; 7] = [0.675, 1.281, 1.645, 1.96, 2.326, 2.573, 3.085];
const AD_B1: [f64; 7] = [-0.245, 0.25, 0.678, 1.149, 1.822, 2.364, 3.615];
const AD_B2: [f64; 7] = [-0.105, -0.305, -0.362, -0.391, -0.396, -0.345, -0.154];
const AD_SIG: [f64; 7] = [0.25, 0.1, 0.05, 0.025, 0.01, 0.005, 0.001];

fn upper_count(s: &[f64], x: f64) -> usize {
    s.partition_point(|v| *v <= x)
}

fn lower_count(s: &[f64], x: f64) -> usize {
    s.partition_point(|v| *v < x)
}

/// Scholz–Stephens k-sample Anderson–Darling test for ties (midrank form).
/// The p-value interpolates log significance quadratically in the tabulated
/// critical values and extends linearly beyond the table, clamped to [0, 1].
pub fn anderson_darling_k(samples: &[Vec<f64>]) -> Result<AdResult> {
    let k = samples.len();
    if k < 2 {
        return Err(Error::input("Anderson–Darling needs at least two samples"));
    }
    if samples.iter().any(|s| s.len() < 10) {
        return Err(Error::input("every Anderson–Darling sample needs at least 10 points"));
    }
    if samples.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::input("non-finite value in Anderson–Darling sample"));
    }
    let mut z: Vec<f64> = samples.iter().flatten().copied().collect();
    z.sort_by(f64::total_cmp);
    let nn = z.len();
    let nf = nn as f64;
    let mut zstar = z.clone();
    zstar.dedup();
    if zstar.len() < 2 {
        return Err(Error::input("all pooled observations are equal"));
    }
    let sorted: Vec<Vec<f64>> = samples
        .iter()
        .map(|s| {
            let mut v = s.clone();
            v.sort_by(f64::total_cmp);
            v
        })
        .collect();
    let mut a2 = 0.0;
    for s in &sorted {
        let ni = s.len() as f64;
        let mut inner = 0.0;
        for &x in &zstar {
            let left = lower_count(&z, x) as f64;
            let lj = upper_count(&z, x) as f64 - left;
            let bj = left + lj / 2.0;
            let fij = (upper_count(s, x) - lower_count(s, x)) as f64;
            let mij = upper_count(s, x) as f64 - fij / 2.0;
            let den = bj * (nf - bj) - nf * lj / 4.0;
            if den > 0.0 {
                inner += lj / nf * (nf * mij - bj * ni).powi(2) / den;
            }
        }
        a2 += inner / ni;
    }
    a2 *= (nf - 1.0) / nf;

    let kf = k as f64;
    let hh: f64 = samples.iter().map(|s| 1.0 / s.len() as f64).sum();
    let h: f64 = (1..nn).map(|i| 1.0 / i as f64).sum();
    let mut g = 0.0;
    for i in 1..nn - 1 {
        let fi = i as f64;
        for j in i + 1..nn {
            g += 1.0 / ((nf - fi) * j as f64);
        }
    }
    let a = (4.0 * g - 6.0) * (kf - 1.0) + (10.0 - 6.0 * g) * hh;
    let b = (2.0 * g - 4.0) * kf * kf + 8.0 * h * kf + (2.0 * g - 14.0 * h - 4.0) * hh - 8.0 * h + 4.0 * g - 6.0;
    let c = (6.0 * h + 2.0 * g - 2.0) * kf * kf + (4.0 * h - 4.0 * g + 6.0) * kf + (2.0 * h - 6.0) * hh + 4.0 * h;
    let d = (2.0 * h + 6.0) * kf * kf - 4.0 * h * kf;
    let var = (a * nf.powi(3) + b * nf * nf + c * nf + d) / ((nf - 1.0) * (nf - 2.0) * (nf - 3.0));
    let m = kf - 1.0;
    let t = (a2 - m) / var.sqrt();
    Ok(AdResult { statistic: a2, standardized: t, p_value: ad_p_value(t, m) })
}

fn ad_p_value(t: f64, m: f64) -> f64 {
    let crit: Vec<f64> = (0..7).map(|i| AD_B0[i] + AD_B1[i] / m.sqrt() + AD_B2[i] / m).collect();
    let mut ata = Matrix3::<f64>::zeros();
    let mut aty = Vector3::<f64>::zeros();
    for (x, s) in crit.iter().zip(AD_SIG) {
        let row = Vector3::new(x * x, *x, 1.0);
        ata += row * row.transpose();
        aty += row * s.ln();
    }
    let c = ata.lu().solve(&aty).expect("well-conditioned table fit");
    let fit = |x: f64| c[0] * x * x + c[1] * x + c[2];
    let slope = |x: f64| 2.0 * c[0] * x + c[1];
    let (lo, hi) = (crit[0], crit[6]);
    let lp = if t < lo {
        fit(lo) + slope(lo) * (t - lo)
    } else if t > hi {
        fit(hi) + slope(hi) * (t - hi)
    } else {
        fit(t)
    };
    lp.exp().clamp(0.0, 1.0)
}

// ---------- cluster growth ----------

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Criteria {
    pub h_max: f64,
    pub ad_alpha: f64,
    pub threshold_q: f64,
    pub n_sim: usize,
}

impl Default for Criteria {
    fn default() -> Self {
        Criteria { h_max: 2.0, ad_alpha: 0.05, threshold_q: 0.9, n_sim: 500 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterAssignment {
    /// (lat, lon).
    pub centroid: [f64; 2],
    /// Site indices, nearest first.
    pub member_sites: Vec<usize>,
    pub d0: usize,
    /// Largest H over worlds for the accepted set.
    pub hw_h: Option<f64>,
    /// Smallest Anderson–Darling p-value over worlds for the accepted set.
    pub ad_p: Option<f64>,
    /// No pair of sites passed; only the nearest site is kept.
    pub singleton: bool,
    pub kappa_fallback: bool,
}

/// Excesses over the per-site `q` quantile.
pub fn site_excesses(data: &WorldSample, q: f64) -> Vec<Vec<f64>> {
    (0..data.d())
        .map(|j| {
            let mut col = data.column(j).to_vec();
            col.sort_by(f64::total_cmp);
            let u = quantile_sorted(&col, q);
            col.into_iter().filter(|&x| x > u).map(|x| x - u).collect()
        })
        .collect()
}

/// Site indices ordered by great-circle distance to `centroid`, ties by index.
pub fn nearest_sites(centroid: [f64; 2], coords: &[[f64; 2]]) -> Vec<usize> {
    let mut idx: Vec<(f64, usize)> = coords.iter().enumerate().map(|(i, c)| (haversine_km(centroid, *c), i)).collect();
    idx.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    idx.into_iter().map(|(_, i)| i).collect()
}

struct Check {
    pass: bool,
    h: f64,
    p: f64,
    fallback: bool,
}

fn check_set(excesses: &[Vec<Vec<f64>>], members: &[usize], cr: &Criteria, rng: RngStream) -> Result<Check> {
    let mut out = Check { pass: true, h: f64::NEG_INFINITY, p: 1.0, fallback: false };
    for (w, ex) in excesses.iter().enumerate() {
        let s: Vec<Vec<f64>> = members.iter().map(|&i| ex[i].clone()).collect();
        let hw = hosking_wallis_h(&s, cr.n_sim, rng.child(w as u64))?;
        let ad = anderson_darling_k(&s)?;
        out.h = out.h.max(hw.h);
        out.p = out.p.min(ad.p_value);
        out.fallback |= hw.fallback;
        out.pass &= hw.h < cr.h_max && ad.p_value > cr.ad_alpha;
    }
    Ok(out)
}

fn worlds_excesses(worlds: &[&WorldSample], coords: &[[f64; 2]], q: f64) -> Result<Vec<Vec<Vec<f64>>>> {
    if worlds.is_empty() {
        return Err(Error::input("no samples to cluster"));
    }
    let d = coords.len();
    if worlds.iter().any(|w| w.d() != d) {
        return Err(Error::input("coordinates and samples disagree on the number of sites"));
    }
    Ok(worlds.iter().map(|w| site_excesses(w, q)).collect())
}

fn grow_with(
    centroid: [f64; 2],
    coords: &[[f64; 2]],
    excesses: &[Vec<Vec<f64>>],
    d0_max: usize,
    cr: &Criteria,
    rng: RngStream,
) -> Result<ClusterAssignment> {
    let order = nearest_sites(centroid, coords);
    let mut best: Option<(usize, Check)> = None;
    for d0 in 2..=d0_max {
        let c = check_set(excesses, &order[..d0], cr, rng.child(d0 as u64))?;
        if !c.pass {
            break;
        }
        best = Some((d0, c));
    }
    Ok(match best {
        Some((d0, c)) => ClusterAssignment {
            centroid,
            member_sites: order[..d0].to_vec(),
            d0,
            hw_h: Some(c.h),
            ad_p: Some(c.p),
            singleton: false,
            kappa_fallback: c.fallback,
        },
        None => ClusterAssignment {
            centroid,
            member_sites: vec![order[0]],
            d0: 1,
            hw_h: None,
            ad_p: None,
            singleton: true,
            kappa_fallback: false,
        },
    })
}

fn check_d0(d0_max: usize, d: usize) -> Result<()> {
    if d0_max < 2 || d0_max > d {
        return Err(Error::input(format!("maximum cluster size {d0_max} outside 2..={d}")));
    }
    Ok(())
}

/// Largest nearest-first cluster around `centroid` passing both tests in every world.
pub fn grow_cluster(
    centroid: [f64; 2],
    coords: &[[f64; 2]],
    worlds: &[&WorldSample],
    d0_max: usize,
    criteria: &Criteria,
    rng: RngStream,
) -> Result<ClusterAssignment> {
    check_d0(d0_max, coords.len())?;
    let ex = worlds_excesses(worlds, coords, criteria.threshold_q)?;
    grow_with(centroid, coords, &ex, d0_max, criteria, rng)
}

/// `grow_cluster` for every centroid, in parallel with one substream per centroid.
pub fn cluster_all(
    centroids: &[[f64; 2]],
    coords: &[[f64; 2]],
    worlds: &[&WorldSample],
    d0_max: usize,
    criteria: &Criteria,
    rng: RngStream,
) -> Result<Vec<ClusterAssignment>> {
    check_d0(d0_max, coords.len())?;
    let ex = worlds_excesses(worlds, coords, criteria.threshold_q)?;
    centroids
        .par_iter()
        .enumerate()
        .map(|(i, c)| grow_with(*c, coords, &ex, d0_max, criteria, rng.child(i as u64)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::World;
    use ndarray::Array2;

    #[test]
    fn grid_counts() {
        let b = BBox { lat_min: 0.0, lat_max: 2.0, lon_min: 0.0, lon_max: 2.0 };
        assert_eq!(build_grid(&b, 1.0).unwrap().len(), 9);
        let g = build_grid(&b, 5.0).unwrap();
        assert_eq!(g, vec![[0.0, 0.0]]);
        let eu = BBox { lat_min: 35.5, lat_max: 71.2, lon_min: -10.3, lon_max: 40.0 };
        assert_eq!(build_grid(&eu, 1.0).unwrap().len(), (35 + 1) * (50 + 1));
        let bad = BBox { lat_min: 1.0, lat_max: 0.0, lon_min: 0.0, lon_max: 1.0 };
        assert!(build_grid(&bad, 1.0).is_err());
        assert!(build_grid(&b, 0.0).is_err());
    }

    #[test]
    fn kappa_tau_matches_sample_l_moments() {
        for &(k, h) in &[(0.2, 0.5), (-0.1, 1.0), (0.1, 0.0), (0.3, -0.4), (-0.2, -0.2)] {
            let (t3, t4) = kappa_tau(k, h).unwrap();
            let d = Kappa::with_moments(1.0, 0.3, k, h).unwrap();
            let mut r = RngStream::new(9).rng();
            let x: Vec<f64> = (0..400_000).map(|_| d.sample(&mut r)).collect();
            let m = l_moments(&x).unwrap();
            assert!((m.l1 - 1.0).abs() < 0.01, "{k} {h} {}", m.l1);
            assert!((m.l2 - 0.3).abs() < 0.01, "{k} {h} {}", m.l2);
            assert!((m.t3 - t3).abs() < 0.01, "{k} {h} {} {t3}", m.t3);
            assert!((m.t4 - t4).abs() < 0.01, "{k} {h} {} {t4}", m.t4);
        }
    }

    #[test]
    fn kappa_fit_recovers_shape_or_falls_back() {
        let (t3, t4) = kappa_tau(0.15, 0.3).unwrap();
        let f = fit_regional_kappa(0.4, t3, t4).unwrap();
        assert!(!f.fallback);
        let (a, b) = kappa_tau(f.dist.k, f.dist.h).unwrap();
        assert!((a - t3).abs() < 1e-4 && (b - t4).abs() < 1e-4);
        // above the generalized logistic curve no kappa exists
        let f = fit_regional_kappa(0.4, 0.1, 0.6).unwrap();
        assert!(f.fallback);
        assert_eq!(f.dist.h, 1.0);
    }

    fn exp_samples(k: usize, n: usize, scale: impl Fn(usize) -> f64, r: &mut impl Rng) -> Vec<Vec<f64>> {
        (0..k).map(|i| (0..n).map(|_| -scale(i) * (1.0 - r.random::<f64>()).ln()).collect()).collect()
    }

    #[test]
    fn h_null_calibration_and_duplicates() {
        let mut r = RngStream::new(1).rng();
        let mut within = 0;
        for t in 0..40 {
            let s = exp_samples(8, 200, |_| 1.0, &mut r);
            let h = hosking_wallis_h(&s, 200, RngStream::new(t)).unwrap();
            within += (h.h.abs() <= 2.0) as usize;
        }
        assert!(within >= 36, "{within}/40");
        let one: Vec<f64> = (0..100).map(|_| -(1.0 - r.random::<f64>()).ln()).collect();
        let h = hosking_wallis_h(&vec![one; 5], 200, RngStream::new(0)).unwrap();
        assert!(h.h < -2.0, "{}", h.h);
        assert!(hosking_wallis_h(&[vec![1.0; 30]], 10, RngStream::new(0)).is_err());
        assert!(hosking_wallis_h(&[vec![1.0; 30], vec![1.0; 10]], 10, RngStream::new(0)).is_err());
    }

    #[test]
    fn h_detects_shape_difference() {
        let mut r = RngStream::new(2).rng();
        let mut hits = 0;
        for t in 0..20 {
            // half exponential, half uniform excesses: L-CV 0.5 versus 1/3
            let s: Vec<Vec<f64>> = (0..8)
                .map(|i| {
                    (0..200)
                        .map(|_| {
                            let u: f64 = r.random();
                            if i < 4 { -(1.0 - u).ln() } else { 2.0 * u }
                        })
                        .collect()
                })
                .collect();
            hits += (hosking_wallis_h(&s, 200, RngStream::new(t)).unwrap().h > 2.0) as usize;
        }
        assert!(hits >= 18, "{hits}/20");
    }

    #[test]
    fn ad_known_values() {
        // midrank statistic of scipy.stats.anderson_ksamp for these inputs
        let a: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let b: Vec<f64> = (5..15).map(|i| i as f64).collect();
        let r = anderson_darling_k(&[a.clone(), b]).unwrap();
        assert!((r.standardized - 5.093343298056228).abs() < 1e-10, "{}", r.standardized);
        assert!((r.p_value - 0.003211822745927066).abs() < 1e-9, "{}", r.p_value);
        let c = vec![1.0, 1.0, 2.0, 3.0, 3.0, 3.0, 4.0, 5.0, 6.0, 7.0];
        let b: Vec<f64> = (5..15).map(|i| i as f64).collect();
        let t = anderson_darling_k(&[a.clone(), b, c]).unwrap();
        assert!((t.standardized - 6.2816156324383305).abs() < 1e-10, "{}", t.standardized);
        let same = anderson_darling_k(&[a.clone(), a.clone(), a]).unwrap();
        assert!(same.statistic.abs() < 1e-12);
        assert!(same.p_value > 0.9, "{}", same.p_value);
    }

    #[test]
    fn ad_separates_shifted_normals() {
        use rand_distr::{Distribution, StandardNormal};
        let mut r = RngStream::new(3).rng();
        let x: Vec<f64> = (0..100).map(|_| StandardNormal.sample(&mut r)).collect::<Vec<f64>>();
        let y: Vec<f64> = (0..100).map(|_| { let z: f64 = StandardNormal.sample(&mut r); 3.0 + z }).collect();
        assert!(anderson_darling_k(&[x, y]).unwrap().p_value < 0.01);
    }

    #[test]
    fn ad_null_rejection_rate() {
        let mut r = RngStream::new(4).rng();
        let rej = (0..500)
            .filter(|_| anderson_darling_k(&exp_samples(3, 100, |_| 1.0, &mut r)).unwrap().p_value < 0.05)
            .count();
        let rate = rej as f64 / 500.0;
        assert!((0.02..=0.09).contains(&rate), "{rate}");
    }

    fn regime_field(seed: u64) -> (Vec<[f64; 2]>, WorldSample) {
        let coords: Vec<[f64; 2]> = (0..8).flat_map(|i| (0..8).map(move |j| [40.0 + i as f64, j as f64])).collect();
        let mut r = RngStream::new(seed).rng();
        let v = Array2::from_shape_fn((1000, coords.len()), |(_, j)| {
            let s = if coords[j][0] >= 44.0 { 2.0 } else { 1.0 };
            -s * (1.0 - r.random::<f64>()).ln()
        });
        (coords, WorldSample::from_matrix(v, World::Factual).unwrap())
    }

    #[test]
    fn clusters_respect_regime_boundary() {
        let (coords, data) = regime_field(5);
        let near: Vec<[f64; 2]> = (1..7).flat_map(|j| [[43.0, j as f64], [44.0, j as f64]]).collect();
        let cr = Criteria { n_sim: 100, ..Criteria::default() };
        let cl = cluster_all(&near, &coords, &[&data], 8, &cr, RngStream::new(1)).unwrap();
        let clean = cl
            .iter()
            .filter(|c| {
                let north = c.member_sites.iter().filter(|&&i| coords[i][0] >= 44.0).count();
                north == 0 || north == c.d0
            })
            .count();
        assert!(clean * 10 >= near.len() * 8, "{clean}/{}", near.len());
    }

    #[test]
    fn iid_field_grows_and_is_deterministic() {
        let coords: Vec<[f64; 2]> = (0..12).map(|j| [45.0, j as f64 * 0.5]).collect();
        let mut r = RngStream::new(8).rng();
        let v = Array2::from_shape_fn((1000, coords.len()), |_| -(1.0 - r.random::<f64>()).ln());
        let data = WorldSample::from_matrix(v, World::Factual).unwrap();
        let cr = Criteria { n_sim: 100, ..Criteria::default() };
        let a = grow_cluster([45.0, 0.0], &coords, &[&data, &data], 6, &cr, RngStream::new(3)).unwrap();
        let b = grow_cluster([45.0, 0.0], &coords, &[&data, &data], 6, &cr, RngStream::new(3)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.d0, a.member_sites.len());
        assert_eq!(a.member_sites[..2], [0, 1]);
        assert!(a.d0 >= 4, "{a:?}");
        let two = grow_cluster([45.0, 0.0], &coords, &[&data], 2, &cr, RngStream::new(3)).unwrap();
        assert!(two.d0 == 2 || two.singleton);
        assert!(grow_cluster([45.0, 0.0], &coords, &[&data], 13, &cr, RngStream::new(3)).is_err());
    }
}
