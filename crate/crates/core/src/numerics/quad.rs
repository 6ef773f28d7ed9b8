//! One-dimensional quadrature: fixed Gauss rules and adaptive Gauss–Kronrod.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};

/// Gauss–Legendre nodes and weights on [−1, 1], ascending nodes.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre(n, z);
            dp = d;
            let dz = p / d;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre(n, z);
        if d != 0.0 {
            dp = d;
        }
        let wi = 2.0 / ((1.0 - z * z) * dp * dp);
        x[i] = -z;
        x[n - 1 - i] = z;
        w[i] = wi;
        w[n - 1 - i] = wi;
    }
    (x, w)
}

fn legendre(n: usize, z: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = z;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * z * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (z * p1 - p0) / (z * z - 1.0);
    (p1, d)
}

/// Gauss–Laguerre nodes and weights for ∫₀^∞ e^{−t} g(t) dt (Golub–Welsch).
pub fn gauss_laguerre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut j = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        j[(i, i)] = 2.0 * i as f64 + 1.0;
        if i + 1 < n {
            let b = (i + 1) as f64;
            j[(i, i + 1)] = b;
            j[(i + 1, i)] = b;
        }
    }
    let eig = SymmetricEigen::new(j);
    let mut pairs: Vec<(f64, f64)> = (0..n)
        .map(|k| (eig.eigenvalues[k], eig.eigenvectors[(0, k)].powi(2)))
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    pairs.into_iter().unzip()
}

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

/// One Gauss–Kronrod 7/15 panel: (Kronrod estimate, |Kronrod − Gauss|).
pub fn gk15<F: FnMut(f64) -> f64>(f: &mut F, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut rk = fc * WGK[7];
    let mut rg = fc * WG[3];
    for j in 0..7 {
        let dx = h * XGK[j];
        let s = f(c - dx) + f(c + dx);
        rk += WGK[j] * s;
        if j % 2 == 1 {
            rg += WG[j / 2] * s;
        }
    }
    (rk * h, ((rk - rg) * h).abs())
}

const MAX_PANELS: usize = 200;

/// Adaptive integral of `f` over the finite interval [a, b].
///
/// Panels with the largest error estimate are bisected until the summed error
/// falls below `rel_tol · |I|` (or an absolute floor of 1e-300).
pub fn integrate_1d<F: FnMut(f64) -> f64>(mut f: F, a: f64, b: f64, rel_tol: f64) -> Result<f64> {
    if !(a.is_finite() && b.is_finite()) {
        return Err(Error::input("integration limits must be finite"));
    }
    if a == b {
        return Ok(0.0);
    }
    let mut panels: Vec<(f64, f64, f64, f64)> = Vec::with_capacity(32);
    let (v, e) = gk15(&mut f, a, b);
    panels.push((a, b, v, e));
    loop {
        let total: f64 = panels.iter().map(|p| p.2).sum();
        let err: f64 = panels.iter().map(|p| p.3).sum();
        if !total.is_finite() {
            return Err(Error::Numerical { msg: "non-finite integrand".into(), best: None });
        }
        if err <= rel_tol * total.abs() || err < 1e-300 {
            return Ok(total);
        }
        if panels.len() >= MAX_PANELS {
            return Err(Error::Numerical {
                msg: format!("quadrature did not converge (error estimate {err:e})"),
                best: Some(total),
            });
        }
        let (k, _) = panels
            .iter()
            .enumerate()
            .max_by(|x, y| x.1 .3.total_cmp(&y.1 .3))
            .unwrap();
        let (lo, hi, _, _) = panels.swap_remove(k);
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            return Err(Error::Numerical {
                msg: "quadrature interval underflow".into(),
                best: Some(total),
            });
        }
        let (v1, e1) = gk15(&mut f, lo, mid);
        let (v2, e2) = gk15(&mut f, mid, hi);
        panels.push((lo, mid, v1, e1));
        panels.push((mid, hi, v2, e2));
    }
}

/// ln ∫₀ᵘᵖᵖᵉʳ exp(g(c)) dc for log-integrands of unknown scale.
///
/// The range is split at 0, 1, 2, 4, 8, … so exponential growth or decay of
/// any rate is resolved; beyond c = 8 the sweep stops once the integrand is
/// decreasing and the last panel adds less than 1e-13 of the running total.
/// Returns −∞ when the integrand vanishes everywhere.
pub fn ln_integral_exp<G: FnMut(f64) -> f64>(mut g: G, upper: f64, rel_tol: f64) -> f64 {
    if !(upper > 0.0) {
        return f64::NEG_INFINITY;
    }
    let mut edges = vec![0.0];
    let mut e = 1.0;
    while e < upper {
        edges.push(e);
        e *= 2.0;
    }
    edges.push(upper);
    let mut scale = f64::NEG_INFINITY;
    for w in edges.windows(2) {
        let v = g(0.5 * (w[0] + w[1]));
        if v.is_finite() {
            scale = scale.max(v);
        }
    }
    if scale == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    let mut total = 0.0;
    let mut prev_end = f64::NAN;
    for w in edges.windows(2) {
        let (a, b) = (w[0], w[1]);
        let h = |c: f64| {
            let v = (g(c) - scale).exp();
            if v.is_nan() { 0.0 } else { v }
        };
        let part = match integrate_1d(h, a, b, rel_tol) {
            Ok(v) => v,
            Err(Error::Numerical { best: Some(v), .. }) => v,
            Err(_) => f64::NAN,
        };
        total += part;
        let end = g(b);
        if a >= 8.0 && end < prev_end && part <= 1e-13 * total {
            break;
        }
        prev_end = end;
    }
    scale + total.ln()
}
