//! Causal attribution for threshold-exceedance events of weighted sums.
//!
//! The event is {w·X > v}, with v a counterfactual return level of w·X. Its
//! probabilities p₀ (counterfactual) and p₁ (factual) come from one of the
//! fitted dependence models or from the raw sample, and feed the causal
//! metrics PN, PS, PNS, RR and AR. Weights are chosen on the unit simplex to
//! maximize PN or AR; intervals come from a percentile bootstrap that refits
//! the models on every resample.

use std::collections::BTreeMap;

use ndarray::Array2;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{weighted_sums, Metric, WorldSample};
use crate::efcm::{efcm_fit, efcm_marginal_sf, efcm_simulate, EfcmModel};
use crate::error::{Error, Result, StageExt};
use crate::hw::{hw_fit_with, hw_ln_sf_log, hw_simulate_log, CopulaFamily, HwFitOptions, HwModel};
use crate::mgpd::{mgpd_fit, mgpd_tail_prob, ExceedanceSet, MgpdModel};
use crate::numerics::{nelder_mead_with, Constraint, NmOptions, RngStream};
use crate::univariate::{gpd_fit_mle, gpd_quantile, quantile_sorted, return_level, GpdParams, ReturnLevelSpec};

/// A metric value that may be +∞ or undefined (0/0).
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Ext {
    Value(f64),
    Infinite,
    Undefined,
}

impl Ext {
    pub fn value(&self) -> Option<f64> {
        match self {
            Ext::Value(v) => Some(*v),
            _ => None,
        }
    }

    /// +∞ and NaN stand in for the markers.
    pub fn to_f64(&self) -> f64 {
        match self {
            Ext::Value(v) => *v,
            Ext::Infinite => f64::INFINITY,
            Ext::Undefined => f64::NAN,
        }
    }

    pub fn from_f64(v: f64) -> Ext {
        if v.is_nan() {
            Ext::Undefined
        } else if v == f64::INFINITY {
            Ext::Infinite
        } else {
            Ext::Value(v)
        }
    }
}

impl Serialize for Ext {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Ext::Value(v) => s.serialize_f64(*v),
            Ext::Infinite => s.serialize_str("+inf"),
            Ext::Undefined => s.serialize_none(),
        }
    }
}

impl<'de> Deserialize<'de> for Ext {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Str(String),
            Null(()),
        }
        match Raw::deserialize(d)? {
            Raw::Num(v) => Ok(Ext::Value(v)),
            Raw::Str(s) if s == "+inf" => Ok(Ext::Infinite),
            Raw::Str(s) => Err(serde::de::Error::custom(format!("unknown marker {s:?}"))),
            Raw::Null(()) => Ok(Ext::Undefined),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CausalMetrics {
    pub p0: f64,
    pub p1: f64,
    pub pn: Ext,
    pub ps: Ext,
    pub pns: f64,
    pub rr: Ext,
    pub ar: Ext,
}

/// PN = max(1 − p₀/p₁, 0), PS = max(1 − (1−p₀)/(1−p₁), 0), PNS = max(p₁ − p₀, 0),
/// RR = p₁/p₀, AR = (p₀ − p₁)/p₁.
pub fn causal_metrics(p0: f64, p1: f64) -> Result<CausalMetrics> {
    if !((0.0..=1.0).contains(&p0) && (0.0..=1.0).contains(&p1)) {
        return Err(Error::input(format!("probabilities ({p0}, {p1}) outside [0, 1]")));
    }
    let pn = if p1 > 0.0 { Ext::Value((1.0 - p0 / p1).max(0.0)) } else { Ext::Undefined };
    let ps = if p1 < 1.0 {
        Ext::Value((1.0 - (1.0 - p0) / (1.0 - p1)).max(0.0))
    } else if p0 < 1.0 {
        Ext::Value(0.0)
    } else {
        Ext::Undefined
    };
    let rr = if p0 > 0.0 {
        Ext::Value(p1 / p0)
    } else if p1 > 0.0 {
        Ext::Infinite
    } else {
        Ext::Undefined
    };
    let ar = if p1 > 0.0 {
        Ext::Value((p0 - p1) / p1)
    } else if p0 > 0.0 {
        Ext::Infinite
    } else {
        Ext::Undefined
    };
    Ok(CausalMetrics { p0, p1, pn, ps, pns: (p1 - p0).max(0.0), rr, ar })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelTag {
    Mgpd,
    Efcm,
    Hw,
    Empirical,
}

impl std::str::FromStr for ModelTag {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mgpd" => Ok(ModelTag::Mgpd),
            "efcm" => Ok(ModelTag::Efcm),
            "hw" => Ok(ModelTag::Hw),
            "empirical" => Ok(ModelTag::Empirical),
            _ => Err(Error::input(format!("unknown model {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Objective {
    Pn,
    Ar,
}

impl std::str::FromStr for Objective {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "PN" => Ok(Objective::Pn),
            "AR" => Ok(Objective::Ar),
            _ => Err(Error::input(format!("unknown objective {s:?}"))),
        }
    }
}

// ---------- margins for copula Monte Carlo ----------

/// Empirical quantile function with a GPD tail above the 0.95 quantile.
#[derive(Debug, Clone)]
pub struct MarginTransform {
    sorted: Vec<f64>,
    tail: Option<(f64, GpdParams)>,
}

const TAIL_Q: f64 = 0.95;

impl MarginTransform {
    pub fn new(sample: &[f64]) -> Result<Self> {
        if sample.is_empty() {
            return Err(Error::input("empty margin sample"));
        }
        let mut sorted = sample.to_vec();
        sorted.sort_by(f64::total_cmp);
        let t = quantile_sorted(&sorted, TAIL_Q);
        let exc: Vec<f64> = sorted.iter().filter(|&&x| x > t).map(|&x| x - t).collect();
        let tail = gpd_fit_mle(&exc).ok().map(|g| (t, g));
        Ok(MarginTransform { sorted, tail })
    }

    /// Data-scale value whose exceedance probability is `sf`.
    pub fn quantile_from_sf(&self, sf: f64) -> f64 {
        let sf = sf.clamp(0.0, 1.0);
        match self.tail {
            Some((t, g)) if sf < 1.0 - TAIL_Q => {
                let q = 1.0 - sf / (1.0 - TAIL_Q);
                t + gpd_quantile(q.min(1.0 - 1e-16), &g)
            }
            _ => quantile_sorted(&self.sorted, 1.0 - sf),
        }
    }
}

// ---------- fitted worlds ----------

/// A model fitted to one world, ready to evaluate tail probabilities.
#[derive(Debug, Clone)]
pub enum WorldModel {
    Empirical,
    Mgpd { model: MgpdModel, u: Vec<f64> },
    Efcm(EfcmModel),
    Hw(HwModel),
}

#[derive(Debug, Clone)]
pub struct FitSettings {
    pub threshold_q: f64,
    pub coords: Vec<[f64; 2]>,
    pub metric: Metric,
    pub hw_family: CopulaFamily,
    pub hw_options: HwFitOptions,
}

impl FitSettings {
    pub fn new(coords: Vec<[f64; 2]>, metric: Metric) -> Self {
        FitSettings {
            threshold_q: 0.9,
            coords,
            metric,
            hw_family: CopulaFamily::Gaussian,
            hw_options: HwFitOptions { profile_grid: vec![0.3, 0.5, 0.7, 0.9], ..HwFitOptions::default() },
        }
    }
}

pub fn fit_world(tag: ModelTag, values: &Array2<f64>, s: &FitSettings) -> Result<WorldModel> {
    match tag {
        ModelTag::Empirical => Ok(WorldModel::Empirical),
        ModelTag::Mgpd => {
            let ex = ExceedanceSet::at_quantile(values, s.threshold_q)?;
            let f = mgpd_fit(&ex)?;
            Ok(WorldModel::Mgpd { model: f.model, u: ex.threshold_u })
        }
        ModelTag::Efcm => Ok(WorldModel::Efcm(efcm_fit(values, &s.coords, s.metric, s.threshold_q)?.model)),
        ModelTag::Hw => {
            let opts = HwFitOptions { censor_q: s.threshold_q, ..s.hw_options.clone() };
            Ok(WorldModel::Hw(hw_fit_with(values, &s.coords, s.metric, s.hw_family, &opts)?.model))
        }
    }
}

/// Tail probability with a flag for Monte Carlo results of zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TailProb {
    pub p: f64,
    /// No simulated row exceeded v; the true value is below 1/n_mc.
    pub resolution_warning: bool,
}

/// Evaluates P(w·X > v) for one world, sharing one Monte Carlo sample across calls.
pub struct WorldEstimator<'a> {
    model: &'a WorldModel,
    data: &'a Array2<f64>,
    mc: Option<Array2<f64>>,
}

impl<'a> WorldEstimator<'a> {
    pub fn new(model: &'a WorldModel, data: &'a Array2<f64>, n_mc: usize, rng: RngStream) -> Result<Self> {
        let d = data.ncols();
        let latent_sf: Option<Array2<f64>> = match model {
            WorldModel::Efcm(m) => {
                let z = efcm_simulate(m, n_mc, rng)?;
                Some(z.mapv(|w| efcm_marginal_sf(w, m.lambda)))
            }
            WorldModel::Hw(m) => {
                let y = hw_simulate_log(m, n_mc, rng)?;
                Some(y.mapv(|v| hw_ln_sf_log(v, m.dep_delta).exp()))
            }
            _ => None,
        };
        let mc = match latent_sf {
            Some(mut s) => {
                if n_mc == 0 {
                    return Err(Error::input("Monte Carlo size must be positive"));
                }
                if s.ncols() != d {
                    return Err(Error::input("fitted model and sample disagree on the number of sites"));
                }
                for j in 0..d {
                    let t = MarginTransform::new(&data.column(j).to_vec())?;
                    s.column_mut(j).mapv_inplace(|p| t.quantile_from_sf(p));
                }
                Some(s)
            }
            None => None,
        };
        Ok(WorldEstimator { model, data, mc })
    }

    pub fn prob(&self, w: &[f64], v: f64) -> Result<TailProb> {
        if w.len() != self.data.ncols() {
            return Err(Error::input("weight length does not match the number of sites"));
        }
        if v == f64::NEG_INFINITY {
            return Ok(TailProb { p: 1.0, resolution_warning: false });
        }
        if v.is_nan() {
            return Err(Error::input("threshold is NaN"));
        }
        let freq = |x: &Array2<f64>| {
            let s = weighted_sums(x, w);
            s.iter().filter(|&&t| t > v).count() as f64 / s.len() as f64
        };
        match (self.model, &self.mc) {
            (WorldModel::Empirical, _) => Ok(TailProb { p: freq(self.data), resolution_warning: false }),
            (WorldModel::Mgpd { model, u }, _) => {
                Ok(TailProb { p: mgpd_tail_prob(model, self.data, w, u, v)?, resolution_warning: false })
            }
            (_, Some(mc)) => {
                let p = freq(mc);
                Ok(TailProb { p, resolution_warning: p == 0.0 })
            }
            _ => unreachable!(),
        }
    }
}

/// P(w·X > v) under a fitted model; copula models are simulated and mapped to
/// the data scale through the sample's margins.
pub fn estimate_p(model: &WorldModel, sample: &Array2<f64>, w: &[f64], v: f64, n_mc: usize, rng: RngStream) -> Result<TailProb> {
    WorldEstimator::new(model, sample, n_mc, rng)?.prob(w, v)
}

// ---------- weights ----------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightChoice {
    pub w: Vec<f64>,
    pub v: f64,
    pub p0: f64,
    pub p1: f64,
    pub objective_value: f64,
}

const PENALTY: f64 = 1e6;

fn evaluate(
    w: &[f64],
    objective: Objective,
    f: &WorldEstimator<'_>,
    c: &WorldEstimator<'_>,
    counterfactual: &Array2<f64>,
    spec: &ReturnLevelSpec,
    threshold_q: f64,
) -> Option<(f64, f64, f64, f64)> {
    let v = return_level(&weighted_sums(counterfactual, w), spec, threshold_q).ok()?;
    let p0 = c.prob(w, v).ok()?.p;
    let p1 = f.prob(w, v).ok()?.p;
    if !(p1 > 0.0) {
        return None;
    }
    let val = match objective {
        Objective::Pn => (1.0 - p0 / p1).max(0.0),
        Objective::Ar => (p0 - p1) / p1,
    };
    Some((val, v, p0, p1))
}

/// Uniform start plus four starts leaning 70% on one site.
fn starts(d: usize) -> Vec<Vec<f64>> {
    let mut s = vec![vec![1.0 / d as f64; d]];
    for k in 0..4 {
        let mut w = vec![0.3 / (d - 1) as f64; d];
        w[k % d] = 0.7;
        s.push(w);
    }
    s
}

/// Maximize PN or AR over the unit simplex from five deterministic starts.
pub fn optimize_weights_with(
    objective: Objective,
    factual: &WorldEstimator<'_>,
    counterfactual: &WorldEstimator<'_>,
    counterfactual_values: &Array2<f64>,
    spec: &ReturnLevelSpec,
    threshold_q: f64,
) -> Result<WeightChoice> {
    let d = counterfactual_values.ncols();
    let eval = |w: &[f64]| evaluate(w, objective, factual, counterfactual, counterfactual_values, spec, threshold_q);
    if d == 1 {
        let w = vec![1.0];
        let (val, v, p0, p1) =
            eval(&w).ok_or_else(|| Error::input("factual tail probability is zero for every weight vector"))?;
        return Ok(WeightChoice { w, v, p0, p1, objective_value: val });
    }
    let opts = NmOptions { tol: 1e-4, max_evals: 400, restarts: 0, initial_step: 0.5 };
    let mut best: Option<(f64, Vec<f64>)> = None;
    for s in starts(d) {
        let r = nelder_mead_with(|w| eval(w).map_or(PENALTY, |e| -e.0), &s, &Constraint::Simplex, &opts);
        let Ok(r) = r else { continue };
        if r.objective_value < PENALTY && best.as_ref().is_none_or(|b| r.objective_value < b.0) {
            best = Some((r.objective_value, r.argmin));
        }
    }
    let (_, w) = best.ok_or_else(|| Error::input("factual tail probability is zero for every weight vector"))?;
    let (val, v, p0, p1) = eval(&w).expect("feasible optimum");
    Ok(WeightChoice { w, v, p0, p1, objective_value: val })
}

/// Fits both worlds with `cfg` and optimizes the weights.
pub fn optimize_weights(
    objective: Objective,
    factual: &WorldSample,
    counterfactual: &WorldSample,
    cfg: &AttributionConfig,
    fit: &FitSettings,
) -> Result<WeightChoice> {
    check_aligned(factual, counterfactual)?;
    let mf = fit_world(cfg.model, &factual.values, fit).stage("fit factual")?;
    let mc = fit_world(cfg.model, &counterfactual.values, fit).stage("fit counterfactual")?;
    let rng = RngStream::new(cfg.seed).child(1);
    let ef = WorldEstimator::new(&mf, &factual.values, cfg.n_mc, rng)?;
    let ec = WorldEstimator::new(&mc, &counterfactual.values, cfg.n_mc, rng)?;
    optimize_weights_with(objective, &ef, &ec, &counterfactual.values, &cfg.return_period, fit.threshold_q)
}

// ---------- bootstrap ----------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum BootstrapScheme {
    Iid,
    /// Moving blocks of `length` consecutive time steps.
    Block { length: usize },
}

/// Row indices of one resample of size n.
pub fn resample_indices<R: Rng + ?Sized>(n: usize, scheme: BootstrapScheme, rng: &mut R) -> Vec<usize> {
    match scheme {
        BootstrapScheme::Iid => (0..n).map(|_| rng.random_range(0..n)).collect(),
        BootstrapScheme::Block { length } => {
            let l = length.clamp(1, n.max(1));
            let mut out = Vec::with_capacity(n + l);
            while out.len() < n {
                let s = rng.random_range(0..=n - l);
                out.extend(s..s + l);
            }
            out.truncate(n);
            out
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lower: f64,
    pub upper: f64,
    pub level: f64,
    pub failures: usize,
}

/// Type-7 percentile of sorted values that may include +∞.
fn percentile(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    if lo == hi || sorted[lo] == sorted[hi] {
        return sorted[lo];
    }
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

fn check_bootstrap(replicates: usize, level: f64, scheme: BootstrapScheme, n: usize) -> Result<()> {
    if replicates < 200 {
        return Err(Error::input(format!("bootstrap needs at least 200 replicates, got {replicates}")));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::input("confidence level must lie in (0, 1)"));
    }
    if let BootstrapScheme::Block { length } = scheme {
        if length == 0 || length > n {
            return Err(Error::input(format!("block length {length} outside 1..={n}")));
        }
    }
    Ok(())
}

/// Replicates of a vector statistic; worlds are resampled independently.
pub fn bootstrap_replicates<F>(
    statistic: F,
    factual: &Array2<f64>,
    counterfactual: &Array2<f64>,
    scheme: BootstrapScheme,
    replicates: usize,
    rng: RngStream,
) -> (Vec<Vec<f64>>, usize)
where
    F: Fn(&Array2<f64>, &Array2<f64>, RngStream) -> Result<Vec<f64>> + Sync,
{
    let out: Vec<Option<Vec<f64>>> = (0..replicates)
        .into_par_iter()
        .map(|b| {
            let s = rng.child(b as u64);
            let mut r = s.child(0).rng();
            let fi = resample_indices(factual.nrows(), scheme, &mut r);
            let ci = resample_indices(counterfactual.nrows(), scheme, &mut r);
            let f = factual.select(ndarray::Axis(0), &fi);
            let c = counterfactual.select(ndarray::Axis(0), &ci);
            statistic(&f, &c, s.child(1)).ok()
        })
        .collect();
    let failures = out.iter().filter(|o| o.is_none()).count();
    (out.into_iter().flatten().collect(), failures)
}

/// Percentile interval per component; NaN replicates are skipped.
fn percentile_intervals(reps: &[Vec<f64>], k: usize, level: f64) -> Vec<(f64, f64)> {
    let a = 0.5 * (1.0 - level);
    (0..k)
        .map(|j| {
            let mut v: Vec<f64> = reps.iter().map(|r| r[j]).filter(|x| !x.is_nan()).collect();
            if v.is_empty() {
                return (f64::NAN, f64::NAN);
            }
            v.sort_by(f64::total_cmp);
            (percentile(&v, a), percentile(&v, 1.0 - a))
        })
        .collect()
}

fn failure_check(failures: usize, replicates: usize) -> Result<()> {
    if failures * 10 > replicates {
        return Err(Error::Numerical {
            msg: format!("statistic failed in {failures} of {replicates} bootstrap replicates"),
            best: None,
        });
    }
    Ok(())
}

/// Percentile bootstrap interval for a scalar statistic of the two worlds.
pub fn bootstrap_ci<F>(
    statistic: F,
    factual: &Array2<f64>,
    counterfactual: &Array2<f64>,
    scheme: BootstrapScheme,
    replicates: usize,
    level: f64,
    rng: RngStream,
) -> Result<Interval>
where
    F: Fn(&Array2<f64>, &Array2<f64>) -> Result<f64> + Sync,
{
    check_bootstrap(replicates, level, scheme, factual.nrows().min(counterfactual.nrows()))?;
    let (reps, failures) = bootstrap_replicates(
        |f, c, _| {
            let v = statistic(f, c)?;
            if v.is_nan() { Err(Error::numerical("statistic is NaN")) } else { Ok(vec![v]) }
        },
        factual,
        counterfactual,
        scheme,
        replicates,
        rng,
    );
    failure_check(failures, replicates)?;
    let (lower, upper) = percentile_intervals(&reps, 1, level)[0];
    Ok(Interval { lower, upper, level, failures })
}

// ---------- pipeline ----------

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CiConfig {
    pub replicates: usize,
    pub level: f64,
    pub scheme: BootstrapScheme,
}

impl Default for CiConfig {
    fn default() -> Self {
        CiConfig { replicates: 300, level: 0.9, scheme: BootstrapScheme::Block { length: 13 } }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributionConfig {
    pub model: ModelTag,
    pub objective: Objective,
    pub return_period: ReturnLevelSpec,
    /// Fixed weights; optimized when absent.
    pub weights: Option<Vec<f64>>,
    pub n_mc: usize,
    pub ci: Option<CiConfig>,
    pub seed: u64,
}

impl AttributionConfig {
    pub fn new(model: ModelTag, objective: Objective, return_period: ReturnLevelSpec) -> Self {
        AttributionConfig {
            model,
            objective,
            return_period,
            weights: None,
            n_mc: 20_000,
            ci: Some(CiConfig::default()),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CiReport {
    pub level: f64,
    pub replicates: usize,
    pub failures: usize,
    pub scheme: BootstrapScheme,
    /// Metric name → [lower, upper].
    pub intervals: BTreeMap<String, [Ext; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributionReport {
    pub model_tag: ModelTag,
    pub objective: Objective,
    pub weights: Vec<f64>,
    pub v: f64,
    pub return_period: ReturnLevelSpec,
    #[serde(flatten)]
    pub metrics: CausalMetrics,
    pub resolution_warning: bool,
    pub ci: Option<CiReport>,
}

const METRIC_NAMES: [&str; 7] = ["p0", "p1", "pn", "ps", "pns", "rr", "ar"];

fn metric_vector(m: &CausalMetrics) -> Vec<f64> {
    vec![m.p0, m.p1, m.pn.to_f64(), m.ps.to_f64(), m.pns, m.rr.to_f64(), m.ar.to_f64()]
}

fn check_aligned(f: &WorldSample, c: &WorldSample) -> Result<()> {
    if f.site_ids != c.site_ids {
        return Err(Error::input("factual and counterfactual samples do not share sites"));
    }
    Ok(())
}

fn validate_weights(w: &[f64], d: usize) -> Result<()> {
    if w.len() != d {
        return Err(Error::input(format!("{} weights for {d} sites", w.len())));
    }
    if w.iter().any(|x| !(*x >= 0.0)) || (w.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::input("weights must be nonnegative and sum to one"));
    }
    Ok(())
}

/// Point estimate for fixed weights: fit both worlds, set v, estimate p₀ and p₁.
#[allow(clippy::too_many_arguments)]
fn point_metrics(
    tag: ModelTag,
    f: &Array2<f64>,
    c: &Array2<f64>,
    w: &[f64],
    spec: &ReturnLevelSpec,
    fit: &FitSettings,
    n_mc: usize,
    rng: RngStream,
) -> Result<(CausalMetrics, f64, bool)> {
    let mf = fit_world(tag, f, fit)?;
    let mc = fit_world(tag, c, fit)?;
    let v = return_level(&weighted_sums(c, w), spec, fit.threshold_q)?;
    let p1 = WorldEstimator::new(&mf, f, n_mc, rng)?.prob(w, v)?;
    let p0 = WorldEstimator::new(&mc, c, n_mc, rng)?.prob(w, v)?;
    Ok((causal_metrics(p0.p, p1.p)?, v, p0.resolution_warning || p1.resolution_warning))
}

/// Full pipeline: fits per world, weights, event level, metrics and bootstrap intervals.
pub fn attribute(
    factual: &WorldSample,
    counterfactual: &WorldSample,
    cfg: &AttributionConfig,
    fit: &FitSettings,
) -> Result<AttributionReport> {
    check_aligned(factual, counterfactual)?;
    let d = factual.d();
    if fit.coords.len() != d && matches!(cfg.model, ModelTag::Efcm | ModelTag::Hw) {
        return Err(Error::input("coordinates are required for every site"));
    }
    let root = RngStream::new(cfg.seed);
    let w = match &cfg.weights {
        Some(w) => {
            validate_weights(w, d)?;
            w.clone()
        }
        None => optimize_weights(cfg.objective, factual, counterfactual, cfg, fit).stage("weights")?.w,
    };
    let (metrics, v, warn) = point_metrics(
        cfg.model,
        &factual.values,
        &counterfactual.values,
        &w,
        &cfg.return_period,
        fit,
        cfg.n_mc,
        root.child(2),
    )
    .stage("estimate")?;

    let ci = match cfg.ci {
        None => None,
        Some(ci) => {
            check_bootstrap(ci.replicates, ci.level, ci.scheme, factual.n().min(counterfactual.n())).stage("bootstrap")?;
            let (reps, failures) = bootstrap_replicates(
                |f, c, s| {
                    let (m, _, _) = point_metrics(cfg.model, f, c, &w, &cfg.return_period, fit, cfg.n_mc, s)?;
                    Ok(metric_vector(&m))
                },
                &factual.values,
                &counterfactual.values,
                ci.scheme,
                ci.replicates,
                root.child(3),
            );
            failure_check(failures, ci.replicates).stage("bootstrap")?;
            let iv = percentile_intervals(&reps, METRIC_NAMES.len(), ci.level);
            let intervals = METRIC_NAMES
                .iter()
                .zip(iv)
                .map(|(k, (lo, hi))| (k.to_string(), [Ext::from_f64(lo), Ext::from_f64(hi)]))
                .collect();
            Some(CiReport { level: ci.level, replicates: ci.replicates, failures, scheme: ci.scheme, intervals })
        }
    };
    Ok(AttributionReport {
        model_tag: cfg.model,
        objective: cfg.objective,
        weights: w,
        v,
        return_period: cfg.return_period,
        metrics,
        resolution_warning: warn,
        ci,
    })
}
