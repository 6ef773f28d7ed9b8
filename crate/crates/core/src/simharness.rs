//! Monte Carlo studies of tail-probability estimation under a known truth.
//!
//! Data come from a bivariate Huser–Wadsworth model with a Gaussian W and
//! exponential correlation. The target is p = P((X₁ + X₂)/2 > ν_p), where ν_p
//! is taken from a large oracle sample of the true model.
//!
//! Scenario 1 contrasts a distorted-margin fit with the right W (sub 1.1)
//! against a right-margin fit with an IEVL W (sub 1.2). Scenario 2 compares
//! mGPD and eFCM fits.

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attribution::MarginTransform;
use crate::data::{weighted_sums, Metric};
use crate::efcm::{efcm_chi_u, efcm_fit, efcm_marginal_sf, efcm_simulate};
use crate::error::{Error, Result, StageExt};
use crate::hw::{
    hw_chi_u, hw_fit_with, hw_isf_log, hw_ln_sf_log, hw_simulate, hw_simulate_log, CopulaFamily, HwFitOptions, HwModel,
    WCopula,
};
use crate::mgpd::{mgpd_chi_u_pair, mgpd_fit, mgpd_tail_prob, ExceedanceSet};
use crate::numerics::RngStream;
use crate::univariate::quantile_sorted;

/// Two sites one unit apart.
pub const COORDS: [[f64; 2]; 2] = [[0.0, 0.0], [1.0, 0.0]];
const W: [f64; 2] = [0.5, 0.5];

/// How fitted-model simulations are mapped back to the data scale.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MarginMode {
    /// True HW margins.
    Oracle,
    /// Empirical margins of the replicate with a GPD tail.
    Empirical,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub n: usize,
    pub delta_list: Vec<f64>,
    pub p_targets: Vec<f64>,
    pub mc_reps: usize,
    pub m_sim: usize,
    /// Rows drawn from the true model to set ν_p.
    pub oracle_n: usize,
    pub range: f64,
    pub threshold_q: f64,
    pub hw_profile_grid: Vec<f64>,
    pub margins: MarginMode,
    /// Replicates whose fitted χ(u) curves are reported.
    pub chi_reps: usize,
    pub chi_n_mc: usize,
    pub seed: u64,
}

impl ScenarioConfig {
    fn base(delta_list: Vec<f64>) -> Self {
        ScenarioConfig {
            n: 1000,
            delta_list,
            p_targets: vec![0.01, 0.02, 0.05],
            mc_reps: 100,
            m_sim: 20_000,
            oracle_n: 10_000_000,
            range: 0.8,
            threshold_q: 0.9,
            hw_profile_grid: vec![0.2, 0.4, 0.6, 0.8],
            margins: MarginMode::Oracle,
            chi_reps: 20,
            chi_n_mc: 5000,
            seed: 0,
        }
    }

    /// Desk-scale margin versus dependence study.
    pub fn scenario1() -> Self {
        ScenarioConfig::base(vec![0.3, 0.7])
    }

    /// Desk-scale mGPD versus eFCM study.
    pub fn scenario2() -> Self {
        ScenarioConfig::base(vec![0.3, 0.4, 0.6, 0.7, 0.8])
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 200 {
            return Err(Error::input("replicate size must be at least 200"));
        }
        if self.mc_reps == 0 || self.m_sim == 0 {
            return Err(Error::input("replicate and simulation counts must be positive"));
        }
        if self.delta_list.is_empty() || self.p_targets.is_empty() {
            return Err(Error::input("empty δ or p list"));
        }
        if self.delta_list.iter().any(|d| !(*d > 0.0 && *d < 1.0)) {
            return Err(Error::input("δ values must lie in (0, 1)"));
        }
        if self.p_targets.iter().any(|p| !(*p > 0.0 && *p < 1.0)) {
            return Err(Error::input("target probabilities must lie in (0, 1)"));
        }
        if self.oracle_n < 1000 || self.p_targets.iter().any(|p| p * (self.oracle_n as f64) < 100.0) {
            return Err(Error::input("oracle sample leaves fewer than 100 exceedances of ν_p"));
        }
        if !(self.range > 0.0) || !(0.5..1.0).contains(&self.threshold_q) {
            return Err(Error::input("range must be positive and threshold level in [0.5, 1)"));
        }
        Ok(())
    }

    fn truth(&self, delta: f64) -> Result<HwModel> {
        HwModel::new(delta, WCopula::Gaussian { range: self.range }, COORDS.to_vec(), Metric::Euclidean)
    }
}

/// One p̂ from one replicate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateRow {
    pub scenario: u8,
    pub sub: String,
    pub model: String,
    pub delta: f64,
    pub p: f64,
    pub replicate: usize,
    pub p_hat: f64,
    pub bias: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub scenario: u8,
    pub sub: String,
    pub model: String,
    pub delta: f64,
    pub p: f64,
    pub n_ok: usize,
    pub mean_bias: f64,
    /// Population variance of p̂ across replicates.
    pub variance: f64,
    pub rmse: f64,
    pub median_abs_bias: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureRecord {
    pub sub: String,
    pub model: String,
    pub delta: f64,
    pub replicate: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Target {
    pub delta: f64,
    pub p: f64,
    pub nu_p: f64,
}

/// Pointwise χ(u) summary across replicates, or the true curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChiRow {
    pub delta: f64,
    pub model: String,
    pub u: f64,
    pub median: f64,
    pub lower: f64,
    pub upper: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioResult {
    pub scenario: u8,
    pub targets: Vec<Target>,
    pub rows: Vec<EstimateRow>,
    pub cells: Vec<CellSummary>,
    pub failures: Vec<FailureRecord>,
    pub chi: Vec<ChiRow>,
    pub notes: Vec<String>,
}

impl ScenarioResult {
    pub fn cell(&self, sub: &str, model: &str, delta: f64, p: f64) -> Option<&CellSummary> {
        self.cells.iter().find(|c| c.sub == sub && c.model == model && c.delta == delta && c.p == p)
    }
}

/// Upper-p quantiles of (X₁ + X₂)/2 from `oracle_n` rows of the true model.
pub fn oracle_levels(truth: &HwModel, p: &[f64], oracle_n: usize, rng: RngStream) -> Result<Vec<f64>> {
    const CHUNK: usize = 1_000_000;
    let chunks = oracle_n.div_ceil(CHUNK);
    let parts: Vec<Vec<f64>> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let m = CHUNK.min(oracle_n - c * CHUNK);
            hw_simulate(truth, m, rng.child(c as u64)).map(|x| weighted_sums(&x, &W))
        })
        .collect::<Result<_>>()?;
    let mut s = parts.concat();
    s.sort_unstable_by(f64::total_cmp);
    Ok(p.iter().map(|&q| quantile_sorted(&s, 1.0 - q)).collect())
}

fn exceed_freq(x: &Array2<f64>, v: f64) -> f64 {
    let s = weighted_sums(x, &W);
    s.iter().filter(|&&t| t > v).count() as f64 / s.len() as f64
}

fn summarize(scenario: u8, rows: &[EstimateRow]) -> Vec<CellSummary> {
    let mut keys: Vec<(String, String, f64, f64)> = Vec::new();
    for r in rows {
        let k = (r.sub.clone(), r.model.clone(), r.delta, r.p);
        if !keys.contains(&k) {
            keys.push(k);
        }
    }
    keys.into_iter()
        .map(|(sub, model, delta, p)| {
            let b: Vec<f64> = rows
                .iter()
                .filter(|r| r.sub == sub && r.model == model && r.delta == delta && r.p == p)
                .map(|r| r.bias)
                .collect();
            let n = b.len() as f64;
            let mean = b.iter().sum::<f64>() / n;
            let variance = b.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
            let rmse = (b.iter().map(|x| x * x).sum::<f64>() / n).sqrt();
            let mut abs: Vec<f64> = b.iter().map(|x| x.abs()).collect();
            abs.sort_by(f64::total_cmp);
            CellSummary {
                scenario,
                sub,
                model,
                delta,
                p,
                n_ok: b.len(),
                mean_bias: mean,
                variance,
                rmse,
                median_abs_bias: quantile_sorted(&abs, 0.5),
            }
        })
        .collect()
}

type RepOut = (Vec<EstimateRow>, Vec<FailureRecord>);

fn rows_for(
    scenario: u8,
    sub: &str,
    model: &str,
    delta: f64,
    rep: usize,
    targets: &[Target],
    p_hat: impl Fn(f64) -> Result<f64>,
) -> Result<Vec<EstimateRow>> {
    targets
        .iter()
        .map(|t| {
            let ph = p_hat(t.nu_p)?;
            Ok(EstimateRow {
                scenario,
                sub: sub.into(),
                model: model.into(),
                delta,
                p: t.p,
                replicate: rep,
                p_hat: ph,
                bias: ph - t.p,
            })
        })
        .collect()
}

fn record(out: &mut RepOut, sub: &str, model: &str, delta: f64, rep: usize, r: Result<Vec<EstimateRow>>) {
    match r {
        Ok(rows) => out.0.extend(rows),
        Err(e) => out.1.push(FailureRecord {
            sub: sub.into(),
            model: model.into(),
            delta,
            replicate: rep,
            message: e.to_string(),
        }),
    }
}

fn targets_for(cfg: &ScenarioConfig, root: RngStream) -> Result<Vec<Vec<Target>>> {
    cfg.delta_list
        .iter()
        .enumerate()
        .map(|(k, &delta)| {
            let nu = oracle_levels(&cfg.truth(delta)?, &cfg.p_targets, cfg.oracle_n, root.child(k as u64))?;
            Ok(cfg.p_targets.iter().zip(nu).map(|(&p, nu_p)| Target { delta, p, nu_p }).collect())
        })
        .collect()
}

/// Margin versus dependence misspecification.
pub fn run_scenario1(cfg: &ScenarioConfig) -> Result<ScenarioResult> {
    cfg.validate()?;
    let root = RngStream::new(cfg.seed);
    let targets = targets_for(cfg, root.child(0)).stage("oracle")?;
    let opts = HwFitOptions { censor_q: cfg.threshold_q, profile_grid: cfg.hw_profile_grid.clone(), ..HwFitOptions::default() };
    let jobs: Vec<(usize, usize)> =
        (0..cfg.delta_list.len()).flat_map(|k| (0..cfg.mc_reps).map(move |r| (k, r))).collect();
    let outs: Vec<RepOut> = jobs
        .par_iter()
        .map(|&(k, rep)| {
            let delta = cfg.delta_list[k];
            let rng = root.child(1).child(k as u64).child(rep as u64);
            let mut out = (Vec::new(), Vec::new());
            let data = match cfg.truth(delta).and_then(|t| hw_simulate(&t, cfg.n, rng.child(0))) {
                Ok(d) => d,
                Err(e) => {
                    record(&mut out, "-", "hw", delta, rep, Err(e));
                    return out;
                }
            };
            // Standard Pareto quantile of the exponential CDF: X^e = exp(X). The
            // fit works on ranks, so log X^e = X is passed to avoid overflow.
            let distorted_log = data.clone();
            let subs = [("1.1", "hw-gaussian", &distorted_log, CopulaFamily::Gaussian), ("1.2", "hw-ievl", &data, CopulaFamily::Ievl)];
            for (i, (sub, model, x, fam)) in subs.into_iter().enumerate() {
                let r = hw_fit_with(x, &COORDS, Metric::Euclidean, fam, &opts).and_then(|f| {
                    let sf = hw_sim_sf(&f.model, cfg.m_sim, rng.child(1 + i as u64))?;
                    let sim = sf_to_data(sf, cfg.margins, x, delta)?;
                    rows_for(1, sub, model, delta, rep, &targets[k], |v| Ok(exceed_freq(&sim, v)))
                });
                record(&mut out, sub, model, delta, rep, r);
            }
            out
        })
        .collect();
    let (rows, failures): (Vec<_>, Vec<_>) = outs.into_iter().unzip();
    let rows: Vec<EstimateRow> = rows.concat();
    Ok(ScenarioResult {
        scenario: 1,
        targets: targets.concat(),
        cells: summarize(1, &rows),
        rows,
        failures: failures.concat(),
        chi: Vec::new(),
        notes: vec![
            "sub 1.1 fits ranks of the Pareto-distorted sample; both subs map simulated rows to uniforms with the fitted model's margins and back to the original scale before comparing with nu_p".into(),
            margin_note(cfg.margins).into(),
            "nu_p is the upper-p quantile of (X1+X2)/2 in an oracle sample of the true model".into(),
        ],
    })
}

/// Maps marginal exceedance probabilities to the data scale.
fn sf_to_data(mut sf: Array2<f64>, mode: MarginMode, data: &Array2<f64>, delta: f64) -> Result<Array2<f64>> {
    match mode {
        MarginMode::Oracle => {
            for v in sf.iter_mut() {
                *v = hw_isf_log(v.clamp(1e-300, 1.0 - 1e-16), delta)?.exp();
            }
        }
        MarginMode::Empirical => {
            for j in 0..sf.ncols() {
                let t = MarginTransform::new(&data.column(j).to_vec())?;
                sf.column_mut(j).mapv_inplace(|s| t.quantile_from_sf(s));
            }
        }
    }
    Ok(sf)
}

/// Simulates a fitted HW model and returns its marginal exceedance probabilities.
fn hw_sim_sf(model: &HwModel, m: usize, rng: RngStream) -> Result<Array2<f64>> {
    let delta = model.dep_delta;
    Ok(hw_simulate_log(model, m, rng)?.mapv(|y| hw_ln_sf_log(y, delta).exp()))
}

fn margin_note(m: MarginMode) -> &'static str {
    match m {
        MarginMode::Oracle => "simulated uniforms are mapped to the data scale with the true HW margins",
        MarginMode::Empirical => "simulated uniforms are mapped to the data scale with empirical margins and GPD tails",
    }
}

struct ChiDraw {
    delta_k: usize,
    mgpd: Vec<f64>,
    efcm: Vec<f64>,
}

/// Levels at which χ(u) curves are reported.
pub fn chi_grid() -> Vec<f64> {
    (0..20).map(|i| 0.5 + 0.49 * i as f64 / 19.0).collect()
}

/// mGPD versus eFCM under HW truth.
pub fn run_scenario2(cfg: &ScenarioConfig) -> Result<ScenarioResult> {
    cfg.validate()?;
    let root = RngStream::new(cfg.seed);
    let targets = targets_for(cfg, root.child(0)).stage("oracle")?;
    let grid = chi_grid();
    let jobs: Vec<(usize, usize)> =
        (0..cfg.delta_list.len()).flat_map(|k| (0..cfg.mc_reps).map(move |r| (k, r))).collect();
    let outs: Vec<(RepOut, Option<ChiDraw>)> = jobs
        .par_iter()
        .map(|&(k, rep)| {
            let delta = cfg.delta_list[k];
            let rng = root.child(1).child(k as u64).child(rep as u64);
            let mut out = (Vec::new(), Vec::new());
            let data = match cfg.truth(delta).and_then(|t| hw_simulate(&t, cfg.n, rng.child(0))) {
                Ok(d) => d,
                Err(e) => {
                    record(&mut out, "-", "hw", delta, rep, Err(e));
                    return (out, None);
                }
            };
            let want_chi = rep < cfg.chi_reps;
            let mut chi_m = None;
            let mut chi_e = None;

            let r = ExceedanceSet::at_quantile(&data, cfg.threshold_q).and_then(|ex| {
                let f = mgpd_fit(&ex)?;
                if want_chi {
                    chi_m = grid
                        .iter()
                        .map(|&u| mgpd_chi_u_pair(&f.model, 0, 1, u, cfg.chi_n_mc, rng.child(3)).map(|c| c.value))
                        .collect::<Result<Vec<_>>>()
                        .ok();
                }
                rows_for(2, "-", "mgpd", delta, rep, &targets[k], |v| {
                    mgpd_tail_prob(&f.model, &data, &W, &ex.threshold_u, v)
                })
            });
            record(&mut out, "-", "mgpd", delta, rep, r);

            let r = efcm_fit(&data, &COORDS, Metric::Euclidean, cfg.threshold_q).and_then(|f| {
                if want_chi {
                    let rho = f.model.rho(0, 1);
                    chi_e = grid.iter().map(|&u| efcm_chi_u(f.model.lambda, rho, u)).collect::<Result<Vec<_>>>().ok();
                }
                let z = efcm_simulate(&f.model, cfg.m_sim, rng.child(2))?;
                let sf = z.mapv(|w| efcm_marginal_sf(w, f.model.lambda));
                let x = sf_to_data(sf, cfg.margins, &data, delta)?;
                rows_for(2, "-", "efcm", delta, rep, &targets[k], |v| Ok(exceed_freq(&x, v)))
            });
            record(&mut out, "-", "efcm", delta, rep, r);
            let draw = match (chi_m, chi_e) {
                (Some(mgpd), Some(efcm)) => Some(ChiDraw { delta_k: k, mgpd, efcm }),
                _ => None,
            };
            (out, draw)
        })
        .collect();

    let mut chi = Vec::new();
    for (k, &delta) in cfg.delta_list.iter().enumerate() {
        let truth = cfg.truth(delta)?;
        for &u in &grid {
            let t = hw_chi_u(&truth, u).stage("chi")?;
            chi.push(ChiRow { delta, model: "truth".into(), u, median: t, lower: t, upper: t });
        }
        let draws: Vec<&ChiDraw> = outs.iter().filter_map(|o| o.1.as_ref()).filter(|d| d.delta_k == k).collect();
        if draws.is_empty() {
            continue;
        }
        for (name, pick) in [("mgpd", 0), ("efcm", 1)] {
            for (g, &u) in grid.iter().enumerate() {
                let mut v: Vec<f64> = draws.iter().map(|d| if pick == 0 { d.mgpd[g] } else { d.efcm[g] }).collect();
                v.sort_by(f64::total_cmp);
                chi.push(ChiRow {
                    delta,
                    model: name.into(),
                    u,
                    median: quantile_sorted(&v, 0.5),
                    lower: quantile_sorted(&v, 0.025),
                    upper: quantile_sorted(&v, 0.975),
                });
            }
        }
    }
    let (rows, failures): (Vec<_>, Vec<_>) = outs.into_iter().map(|o| o.0).unzip();
    let rows: Vec<EstimateRow> = rows.concat();
    Ok(ScenarioResult {
        scenario: 2,
        targets: targets.concat(),
        cells: summarize(2, &rows),
        rows,
        failures: failures.concat(),
        chi,
        notes: vec![
            margin_note(cfg.margins).into(),
            "mGPD p_hat uses the projection GPD above the 0.9 marginal thresholds".into(),
            "nu_p is the upper-p quantile of (X1+X2)/2 in an oracle sample of the true model".into(),
        ],
    })
}
