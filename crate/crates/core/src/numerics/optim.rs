//! Nelder–Mead with adaptive coefficients, box clamping and a softmax
//! parameterization for the probability simplex.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum Constraint {
    None,
    /// Componentwise bounds; vertices are clamped into the box.
    Box { lower: Vec<f64>, upper: Vec<f64> },
    /// Nonnegative vectors summing to one.
    Simplex,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct OptimResult {
    pub argmin: Vec<f64>,
    pub objective_value: f64,
    pub converged: bool,
    pub iterations: usize,
}

#[derive(Debug, Clone)]
pub struct NmOptions {
    /// Convergence threshold on the simplex diameter (sup-norm, user coordinates).
    pub tol: f64,
    /// Evaluation budget per restart.
    pub max_evals: usize,
    /// Extra restarts from the incumbent after convergence.
    pub restarts: usize,
    /// Initial edge length, scaled by max(1, |x₀ᵢ|).
    pub initial_step: f64,
}

impl Default for NmOptions {
    fn default() -> Self {
        NmOptions { tol: 1e-8, max_evals: 4000, restarts: 2, initial_step: 0.1 }
    }
}

/// Minimize `f` from `x0` under `constraint` with default options and the given tolerance.
pub fn nelder_mead<F: FnMut(&[f64]) -> f64>(
    f: F,
    x0: &[f64],
    constraint: &Constraint,
    tol: f64,
) -> Result<OptimResult> {
    nelder_mead_with(f, x0, constraint, &NmOptions { tol, ..NmOptions::default() })
}

pub fn nelder_mead_with<F: FnMut(&[f64]) -> f64>(
    mut f: F,
    x0: &[f64],
    constraint: &Constraint,
    opts: &NmOptions,
) -> Result<OptimResult> {
    if x0.is_empty() {
        return Err(Error::input("empty starting point"));
    }
    if x0.iter().any(|v| !v.is_finite()) {
        return Err(Error::input("non-finite starting point"));
    }
    let map = Mapping::new(constraint, x0)?;
    let y0 = map.to_internal(x0);
    let fx0 = f(&map.to_user(&y0));
    if !fx0.is_finite() {
        return Err(Error::input("objective is not finite at the starting point"));
    }
    if y0.is_empty() {
        let x = map.to_user(&y0);
        return Ok(OptimResult { argmin: x, objective_value: fx0, converged: true, iterations: 0 });
    }

    let mut eval = |y: &[f64]| {
        let v = f(&map.to_user(y));
        if v.is_finite() { v } else { f64::INFINITY }
    };

    let mut best_y = y0;
    let mut best_f = fx0;
    let mut iterations = 0;
    let mut converged = false;
    for round in 0..=opts.restarts {
        let run = run_simplex(&mut eval, &best_y, best_f, &map, opts);
        iterations += run.iterations;
        let improved = best_f - run.f;
        if run.f <= best_f {
            best_y = run.y;
            best_f = run.f;
        }
        converged = run.converged;
        if round > 0 && converged && improved.abs() <= 1e-12 * (1.0 + best_f.abs()) {
            break;
        }
    }
    Ok(OptimResult { argmin: map.to_user(&best_y), objective_value: best_f, converged, iterations })
}

struct Run {
    y: Vec<f64>,
    f: f64,
    converged: bool,
    iterations: usize,
}

fn run_simplex<E: FnMut(&[f64]) -> f64>(
    eval: &mut E,
    y0: &[f64],
    f0: f64,
    map: &Mapping,
    opts: &NmOptions,
) -> Run {
    let n = y0.len();
    let nf = n.max(2) as f64;
    let (alpha, beta, gamma, shrink) = (1.0, 1.0 + 2.0 / nf, 0.75 - 0.5 / nf, 1.0 - 1.0 / nf);

    let mut pts: Vec<Vec<f64>> = Vec::with_capacity(n + 1);
    let mut vals: Vec<f64> = Vec::with_capacity(n + 1);
    pts.push(y0.to_vec());
    vals.push(f0);
    for i in 0..n {
        let mut y = y0.to_vec();
        let step = opts.initial_step * y[i].abs().max(1.0);
        y[i] += step;
        map.clamp(&mut y);
        if y[i] == y0[i] {
            y[i] -= step;
            map.clamp(&mut y);
        }
        vals.push(eval(&y));
        pts.push(y);
    }
    let mut evals = n + 1;
    let mut iterations = 0;
    let mut converged = false;

    loop {
        let mut order: Vec<usize> = (0..=n).collect();
        order.sort_by(|&a, &b| vals[a].total_cmp(&vals[b]).then(a.cmp(&b)));
        pts = order.iter().map(|&i| pts[i].clone()).collect();
        vals = order.iter().map(|&i| vals[i]).collect();

        if map.diameter(&pts) < opts.tol {
            converged = true;
            break;
        }
        if evals >= opts.max_evals {
            break;
        }
        iterations += 1;

        let mut centroid = vec![0.0; n];
        for p in &pts[..n] {
            for (c, v) in centroid.iter_mut().zip(p) {
                *c += v / n as f64;
            }
        }
        let along = |t: f64| -> Vec<f64> {
            let mut y: Vec<f64> = centroid.iter().zip(&pts[n]).map(|(c, w)| c + t * (c - w)).collect();
            map.clamp(&mut y);
            y
        };
        let yr = along(alpha);
        let fr = eval(&yr);
        evals += 1;
        if fr < vals[0] {
            let ye = along(alpha * beta);
            let fe = eval(&ye);
            evals += 1;
            if fe < fr {
                pts[n] = ye;
                vals[n] = fe;
            } else {
                pts[n] = yr;
                vals[n] = fr;
            }
            continue;
        }
        if fr < vals[n - 1] {
            pts[n] = yr;
            vals[n] = fr;
            continue;
        }
        let (yc, fc) = if fr < vals[n] {
            let y = along(alpha * gamma);
            let v = eval(&y);
            (y, v)
        } else {
            let y = along(-gamma);
            let v = eval(&y);
            (y, v)
        };
        evals += 1;
        if fc < vals[n].min(fr) {
            pts[n] = yc;
            vals[n] = fc;
            continue;
        }
        let best = pts[0].clone();
        for i in 1..=n {
            let mut y: Vec<f64> = best.iter().zip(&pts[i]).map(|(b, p)| b + shrink * (p - b)).collect();
            map.clamp(&mut y);
            vals[i] = eval(&y);
            pts[i] = y;
        }
        evals += n;
    }
    Run { y: pts[0].clone(), f: vals[0], converged, iterations }
}

enum Mapping {
    Identity,
    Box { lower: Vec<f64>, upper: Vec<f64> },
    Softmax { d: usize },
}

impl Mapping {
    fn new(c: &Constraint, x0: &[f64]) -> Result<Self> {
        match c {
            Constraint::None => Ok(Mapping::Identity),
            Constraint::Box { lower, upper } => {
                if lower.len() != x0.len() || upper.len() != x0.len() {
                    return Err(Error::input("box bounds do not match the dimension"));
                }
                if lower.iter().zip(upper).any(|(l, u)| !(l <= u)) {
                    return Err(Error::input("box lower bound exceeds upper bound"));
                }
                Ok(Mapping::Box { lower: lower.clone(), upper: upper.clone() })
            }
            Constraint::Simplex => {
                if x0.iter().any(|&v| v < 0.0) {
                    return Err(Error::input("simplex start has negative weights"));
                }
                let s: f64 = x0.iter().sum();
                if !(s > 0.0) {
                    return Err(Error::input("simplex start sums to zero"));
                }
                Ok(Mapping::Softmax { d: x0.len() })
            }
        }
    }

    fn to_internal(&self, x: &[f64]) -> Vec<f64> {
        match self {
            Mapping::Identity => x.to_vec(),
            Mapping::Box { lower, upper } => {
                x.iter().zip(lower.iter().zip(upper)).map(|(v, (l, u))| v.clamp(*l, *u)).collect()
            }
            Mapping::Softmax { d } => {
                let s: f64 = x.iter().sum();
                let last = (x[d - 1] / s).max(1e-12).ln();
                x[..d - 1].iter().map(|v| (v / s).max(1e-12).ln() - last).collect()
            }
        }
    }

    fn to_user(&self, y: &[f64]) -> Vec<f64> {
        match self {
            Mapping::Identity | Mapping::Box { .. } => y.to_vec(),
            Mapping::Softmax { d } => {
                let m = y.iter().cloned().fold(0.0f64, f64::max);
                let mut e: Vec<f64> = y.iter().map(|v| (v - m).exp()).collect();
                e.push((-m).exp());
                let s: f64 = e.iter().sum();
                debug_assert_eq!(e.len(), *d);
                e.iter().map(|v| v / s).collect()
            }
        }
    }

    fn clamp(&self, y: &mut [f64]) {
        if let Mapping::Box { lower, upper } = self {
            for (v, (l, u)) in y.iter_mut().zip(lower.iter().zip(upper)) {
                *v = v.clamp(*l, *u);
            }
        }
    }

    fn diameter(&self, pts: &[Vec<f64>]) -> f64 {
        let user: Vec<Vec<f64>> = pts.iter().map(|p| self.to_user(p)).collect();
        let mut d: f64 = 0.0;
        for p in &user[1..] {
            for (a, b) in p.iter().zip(&user[0]) {
                d = d.max((a - b).abs());
            }
        }
        d
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_dimensional_quadratic() {
        let r = nelder_mead(|x| (x[0] - 3.0).powi(2), &[0.0], &Constraint::None, 1e-8).unwrap();
        assert!((r.argmin[0] - 3.0).abs() < 1e-5);
        assert!(r.converged);
    }

    #[test]
    fn rosenbrock() {
        let f = |x: &[f64]| 100.0 * (x[1] - x[0] * x[0]).powi(2) + (1.0 - x[0]).powi(2);
        let r = nelder_mead(f, &[-1.2, 1.0], &Constraint::None, 1e-10).unwrap();
        assert!((r.argmin[0] - 1.0).abs() < 1e-3 && (r.argmin[1] - 1.0).abs() < 1e-3, "{:?}", r);
        assert_eq!(r.objective_value, f(&r.argmin));
    }

    #[test]
    fn simplex_vertex() {
        let r = nelder_mead(|w| -w[0], &[0.5, 0.5], &Constraint::Simplex, 1e-9).unwrap();
        assert!(r.argmin[0] > 1.0 - 1e-6);
        assert!((r.argmin.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn box_bound_active() {
        let c = Constraint::Box { lower: vec![0.0, 0.0], upper: vec![1.0, 1.0] };
        let r = nelder_mead(|x| (x[0] - 2.0).powi(2) + (x[1] - 0.3).powi(2), &[0.5, 0.5], &c, 1e-9).unwrap();
        assert!((r.argmin[0] - 1.0).abs() < 1e-6 && (r.argmin[1] - 0.3).abs() < 1e-5);
    }

    #[test]
    fn non_finite_start_is_input_error() {
        let r = nelder_mead(|_| f64::NAN, &[1.0], &Constraint::None, 1e-6);
        assert!(matches!(r, Err(Error::Input(_))));
    }

    #[test]
    fn single_weight_simplex_is_trivial() {
        let r = nelder_mead(|w| w[0], &[1.0], &Constraint::Simplex, 1e-9).unwrap();
        assert_eq!(r.argmin, vec![1.0]);
    }
}
