//! Command-line front end.
//!
//! Every subcommand takes `--out DIR`, an optional `--config FILE` holding its
//! options as JSON, and flags that override the file. Outputs are CSV/JSON
//! tables plus `metadata.json` with the seed, config hash and version.
//! Exit codes: 0 success, 1 computation error, 2 usage error.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use ndarray::Array2;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::attribution::{
    attribute, AttributionConfig, AttributionReport, BootstrapScheme, CiConfig, Ext, FitSettings, ModelTag, Objective,
};
use crate::data::{Metric, World, WorldSample};
use crate::dependence::{chi_curve_empirical, chi_curve_model, default_u_grid, Band, ChiModel};
use crate::efcm::{efcm_fit, efcm_simulate, EfcmFit, EfcmModel};
use crate::error::{Error, Result, StageExt};
use crate::hw::{hw_fit_with, CopulaFamily, HwFit, HwFitOptions};
use crate::io::ingest::{coords_of, ingest, read_sites, read_world, write_sites, write_world, Aggregation, DatasetManifest, Site};
use crate::io::output::{fmt17, fmt_opt, write_csv, write_json, write_metadata};
use crate::mgpd::{mgpd_fit, ExceedanceSet, MgpdFit};
use crate::numerics::RngStream;
use crate::regions::{build_grid, cluster_all, BBox, Criteria};
use crate::simharness::{run_scenario1, run_scenario2, MarginMode, ScenarioConfig, ScenarioResult};
use crate::univariate::{return_level_fit, ReturnLevelSpec};

#[derive(Debug, Parser)]
#[command(name = "tailattrib", version, about = "Multivariate extremes and counterfactual event attribution")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit a dependence model to each world.
    Fit(FitArgs),
    /// χ(u) curves for one site pair.
    Chi(ChiArgs),
    /// Homogeneous site clusters around grid centroids.
    Cluster(ClusterArgs),
    /// Causal attribution metrics for a weighted-sum event.
    Attribute(AttributeArgs),
    /// Margin versus dependence misspecification study.
    Simulate1(SimArgs),
    /// mGPD versus eFCM study under HW truth.
    Simulate2(SimArgs),
    /// Peaks-over-threshold return levels per site.
    Returnlevel(ReturnLevelArgs),
    /// Write a synthetic two-world dataset.
    Synth(SynthArgs),
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// Output directory, created when missing.
    #[arg(long)]
    pub out: PathBuf,
    /// JSON file of option values; flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Root seed of all random streams.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct DataArgs {
    /// Dataset manifest (JSON).
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Factual world, long CSV time,site_id,value.
    #[arg(long)]
    pub factual: Option<PathBuf>,
    /// Counterfactual world, same layout.
    #[arg(long)]
    pub counterfactual: Option<PathBuf>,
    /// Site table with columns site_id,lat,lon.
    #[arg(long)]
    pub sites: Option<PathBuf>,
    /// Reduce to maxima over blocks of k rows.
    #[arg(long)]
    pub k_day: Option<usize>,
    /// Months to keep, e.g. 12,1,2.
    #[arg(long, value_delimiter = ',')]
    pub months: Option<Vec<u32>>,
    /// Restrict to these site ids, in this order.
    #[arg(long, value_delimiter = ',')]
    pub select: Option<Vec<String>>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataOptions {
    pub manifest: Option<PathBuf>,
    pub factual: Option<PathBuf>,
    pub counterfactual: Option<PathBuf>,
    pub sites: Option<PathBuf>,
    pub k_day: Option<usize>,
    pub months: Option<Vec<u32>>,
    pub select: Option<Vec<String>>,
}

macro_rules! set {
    ($dst:expr, $src:expr) => {
        if let Some(v) = $src {
            $dst = v;
        }
    };
}

macro_rules! set_opt {
    ($dst:expr, $src:expr) => {
        if let Some(v) = $src {
            $dst = Some(v);
        }
    };
}

impl DataOptions {
    fn merge(&mut self, a: DataArgs) {
        set_opt!(self.manifest, a.manifest);
        set_opt!(self.factual, a.factual);
        set_opt!(self.counterfactual, a.counterfactual);
        set_opt!(self.sites, a.sites);
        set_opt!(self.k_day, a.k_day);
        set_opt!(self.months, a.months);
        set_opt!(self.select, a.select);
    }
}

struct Dataset {
    factual: WorldSample,
    counterfactual: WorldSample,
    sites: Vec<Site>,
}

impl Dataset {
    fn coords(&self) -> Vec<[f64; 2]> {
        coords_of(&self.sites)
    }

    fn world(&self, w: World) -> &WorldSample {
        match w {
            World::Factual => &self.factual,
            World::Counterfactual => &self.counterfactual,
        }
    }
}

fn site_indices(sites: &[Site], ids: &[String]) -> Result<Vec<usize>> {
    ids.iter()
        .map(|id| {
            sites.iter().position(|s| &s.site_id == id).ok_or_else(|| Error::input(format!("unknown site {id}")))
        })
        .collect()
}

fn load(d: &DataOptions) -> Result<Dataset> {
    let mut m = match (&d.manifest, &d.factual, &d.counterfactual, &d.sites) {
        (Some(p), _, _, _) => DatasetManifest::from_json(p)?,
        (None, Some(f), Some(c), Some(s)) => DatasetManifest {
            factual_path: f.clone(),
            counterfactual_path: c.clone(),
            site_file: s.clone(),
            time_aggregation: Aggregation::None,
            seasonal_filter: None,
        },
        _ => return Err(Error::input("no dataset: pass --manifest or all of --factual, --counterfactual, --sites")),
    };
    if let Some(k) = d.k_day {
        m.time_aggregation = Aggregation::KDayMaxima { k };
    }
    if let Some(months) = &d.months {
        m.seasonal_filter = Some(months.clone());
    }
    let (f, c, sites) = ingest(&m)?;
    match &d.select {
        None => Ok(Dataset { factual: f, counterfactual: c, sites }),
        Some(ids) => {
            let idx = site_indices(&sites, ids)?;
            Ok(Dataset {
                factual: f.select_sites(&idx),
                counterfactual: c.select_sites(&idx),
                sites: idx.iter().map(|&i| sites[i].clone()).collect(),
            })
        }
    }
}

fn load_config<T: DeserializeOwned + Default>(path: &Option<PathBuf>) -> Result<T> {
    match path {
        None => Ok(T::default()),
        Some(p) => {
            let f = std::fs::File::open(p).map_err(|e| Error::input(format!("config {}: {e}", p.display())))?;
            serde_json::from_reader(f).map_err(|e| Error::input(format!("config {}: {e}", p.display())))
        }
    }
}

fn out_dir(p: &Path) -> Result<PathBuf> {
    std::fs::create_dir_all(p)?;
    Ok(p.to_path_buf())
}

fn parse_family(s: &str) -> std::result::Result<CopulaFamily, String> {
    match s.to_ascii_lowercase().as_str() {
        "gaussian" => Ok(CopulaFamily::Gaussian),
        "ievl" => Ok(CopulaFamily::Ievl),
        _ => Err(format!("unknown W family {s:?}")),
    }
}

fn parse_world(s: &str) -> std::result::Result<World, String> {
    match s.to_ascii_lowercase().as_str() {
        "factual" => Ok(World::Factual),
        "counterfactual" => Ok(World::Counterfactual),
        _ => Err(format!("unknown world {s:?}")),
    }
}

fn fit_settings(coords: Vec<[f64; 2]>, threshold_q: f64, family: CopulaFamily) -> FitSettings {
    let mut s = FitSettings::new(coords, Metric::Haversine);
    s.threshold_q = threshold_q;
    s.hw_family = family;
    s
}

fn ext_str(e: Ext) -> String {
    match e {
        Ext::Value(v) => fmt17(v),
        Ext::Infinite => "inf".into(),
        Ext::Undefined => String::new(),
    }
}

// ---------- fit ----------

#[derive(Debug, Args)]
pub struct FitArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub data: DataArgs,
    /// mgpd, efcm or hw.
    #[arg(long)]
    pub model: Option<ModelTag>,
    /// Marginal quantile used as threshold or censoring level.
    #[arg(long)]
    pub threshold_q: Option<f64>,
    /// W family for hw: gaussian or ievl.
    #[arg(long, value_parser = parse_family)]
    pub family: Option<CopulaFamily>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitOptions {
    pub data: DataOptions,
    pub model: ModelTag,
    pub threshold_q: f64,
    pub family: CopulaFamily,
    pub seed: u64,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            data: DataOptions::default(),
            model: ModelTag::Efcm,
            threshold_q: 0.9,
            family: CopulaFamily::Gaussian,
            seed: 0,
        }
    }
}

#[derive(Debug, Serialize)]
#[serde(tag = "model", rename_all = "lowercase")]
enum FitOut {
    Mgpd { fit: MgpdFit, thresholds: Vec<f64> },
    Efcm { fit: EfcmFit },
    Hw { fit: HwFit },
}

fn fit_one(o: &FitOptions, x: &Array2<f64>, coords: &[[f64; 2]]) -> Result<FitOut> {
    match o.model {
        ModelTag::Mgpd => {
            let ex = ExceedanceSet::at_quantile(x, o.threshold_q)?;
            Ok(FitOut::Mgpd { fit: mgpd_fit(&ex)?, thresholds: ex.threshold_u })
        }
        ModelTag::Efcm => Ok(FitOut::Efcm { fit: efcm_fit(x, coords, Metric::Haversine, o.threshold_q)? }),
        ModelTag::Hw => {
            let opts = HwFitOptions { censor_q: o.threshold_q, ..HwFitOptions::default() };
            Ok(FitOut::Hw { fit: hw_fit_with(x, coords, Metric::Haversine, o.family, &opts)? })
        }
        ModelTag::Empirical => Err(Error::input("the empirical model has nothing to fit")),
    }
}

fn run_fit(a: FitArgs) -> Result<()> {
    let mut o: FitOptions = load_config(&a.common.config)?;
    o.data.merge(a.data);
    set!(o.model, a.model);
    set!(o.threshold_q, a.threshold_q);
    set!(o.family, a.family);
    set!(o.seed, a.common.seed);
    let out = out_dir(&a.common.out)?;
    let d = load(&o.data).stage("ingest")?;
    let coords = d.coords();
    let mut res = BTreeMap::new();
    res.insert("factual", fit_one(&o, &d.factual.values, &coords).stage("fit factual")?);
    res.insert("counterfactual", fit_one(&o, &d.counterfactual.values, &coords).stage("fit counterfactual")?);
    let p = out.join("fit.json");
    write_json(&p, &res)?;
    write_metadata(&out, "fit", o.seed, &o, &[p], vec![])
}

// ---------- chi ----------

#[derive(Debug, Args)]
pub struct ChiArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub data: DataArgs,
    /// Two site ids, e.g. A,B.
    #[arg(long, value_delimiter = ',')]
    pub pair: Option<Vec<String>>,
    /// Any of empirical, mgpd, efcm, hw.
    #[arg(long, value_delimiter = ',')]
    pub models: Option<Vec<String>>,
    /// factual or counterfactual.
    #[arg(long, value_parser = parse_world)]
    pub world: Option<World>,
    /// Marginal quantile used as threshold or censoring level.
    #[arg(long)]
    pub threshold_q: Option<f64>,
    /// Bootstrap replicates for empirical bands; 0 disables them.
    /// Bootstrap replicates.
    #[arg(long)]
    pub replicates: Option<usize>,
    /// Confidence level of the intervals.
    #[arg(long)]
    pub level: Option<f64>,
    /// Moving-block length; 0 means iid resampling.
    #[arg(long)]
    pub block_length: Option<usize>,
    /// Monte Carlo size for the mGPD χ(u).
    /// Monte Carlo sample size for model probabilities.
    #[arg(long)]
    pub n_mc: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChiOptions {
    pub data: DataOptions,
    pub pair: Vec<String>,
    pub models: Vec<String>,
    pub world: World,
    pub threshold_q: f64,
    pub replicates: usize,
    pub level: f64,
    pub block_length: usize,
    pub n_mc: usize,
    pub seed: u64,
}

impl Default for ChiOptions {
    fn default() -> Self {
        ChiOptions {
            data: DataOptions::default(),
            pair: Vec::new(),
            models: vec!["empirical".into(), "mgpd".into(), "efcm".into(), "hw".into()],
            world: World::Factual,
            threshold_q: 0.9,
            replicates: 0,
            level: 0.95,
            block_length: 0,
            n_mc: 20_000,
            seed: 0,
        }
    }
}

fn scheme(block_length: usize) -> BootstrapScheme {
    if block_length == 0 { BootstrapScheme::Iid } else { BootstrapScheme::Block { length: block_length } }
}

fn run_chi(a: ChiArgs) -> Result<()> {
    let mut o: ChiOptions = load_config(&a.common.config)?;
    o.data.merge(a.data);
    set!(o.pair, a.pair);
    set!(o.models, a.models);
    set!(o.world, a.world);
    set!(o.threshold_q, a.threshold_q);
    set!(o.replicates, a.replicates);
    set!(o.level, a.level);
    set!(o.block_length, a.block_length);
    set!(o.n_mc, a.n_mc);
    set!(o.seed, a.common.seed);
    if o.pair.len() != 2 {
        return Err(Error::input("--pair needs exactly two site ids"));
    }
    let out = out_dir(&a.common.out)?;
    let d = load(&o.data).stage("ingest")?;
    let idx = site_indices(&d.sites, &o.pair)?;
    let s = d.world(o.world).select_sites(&idx);
    let coords: Vec<[f64; 2]> = idx.iter().map(|&i| d.coords()[i]).collect();
    let grid = default_u_grid();
    let root = RngStream::new(o.seed);
    let mut header = vec!["u".to_string()];
    let mut cols: Vec<Vec<String>> = Vec::new();
    for (k, name) in o.models.iter().enumerate() {
        let rng = root.child(k as u64);
        let curve = match name.as_str() {
            "empirical" => {
                let band = if o.replicates == 0 {
                    Band::None
                } else {
                    Band::Bootstrap { replicates: o.replicates, level: o.level, scheme: scheme(o.block_length) }
                };
                chi_curve_empirical(&s.column(0).to_vec(), &s.column(1).to_vec(), &grid, band, rng)
            }
            "mgpd" => ExceedanceSet::at_quantile(&s.values, o.threshold_q)
                .and_then(|ex| mgpd_fit(&ex))
                .and_then(|f| chi_curve_model(ChiModel::Mgpd { model: &f.model, n_mc: o.n_mc }, 0, 1, &grid, rng)),
            "efcm" => efcm_fit(&s.values, &coords, Metric::Haversine, o.threshold_q)
                .and_then(|f| chi_curve_model(ChiModel::Efcm(&f.model), 0, 1, &grid, rng)),
            "hw" => {
                let opts = HwFitOptions { censor_q: o.threshold_q, ..HwFitOptions::default() };
                hw_fit_with(&s.values, &coords, Metric::Haversine, CopulaFamily::Gaussian, &opts)
                    .and_then(|f| chi_curve_model(ChiModel::Hw(&f.model), 0, 1, &grid, rng))
            }
            other => Err(Error::input(format!("unknown χ model {other:?}"))),
        }
        .stage("chi")?;
        header.push(name.clone());
        cols.push(curve.values.iter().map(|v| fmt_opt(*v)).collect());
        if let (Some(lo), Some(hi)) = (curve.lower, curve.upper) {
            header.push(format!("{name}_lower"));
            cols.push(lo.iter().map(|v| fmt_opt(*v)).collect());
            header.push(format!("{name}_upper"));
            cols.push(hi.iter().map(|v| fmt_opt(*v)).collect());
        }
    }
    let rows: Vec<Vec<String>> = grid
        .iter()
        .enumerate()
        .map(|(g, u)| std::iter::once(fmt17(*u)).chain(cols.iter().map(|c| c[g].clone())).collect())
        .collect();
    let p = out.join("chi.csv");
    let h: Vec<&str> = header.iter().map(String::as_str).collect();
    write_csv(&p, &h, &rows)?;
    write_metadata(&out, "chi", o.seed, &o, &[p], vec![])
}

// ---------- cluster ----------

#[derive(Debug, Args)]
pub struct ClusterArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub data: DataArgs,
    /// lat_min,lat_max,lon_min,lon_max; defaults to the sites' bounding box.
    #[arg(long, value_delimiter = ',')]
    pub bbox: Option<Vec<f64>>,
    /// Grid spacing in degrees.
    #[arg(long)]
    pub spacing: Option<f64>,
    /// Largest cluster size tried.
    #[arg(long)]
    pub d0_max: Option<usize>,
    /// Heterogeneity bound on H.
    #[arg(long)]
    pub h_max: Option<f64>,
    /// Anderson–Darling significance level.
    #[arg(long)]
    pub ad_alpha: Option<f64>,
    /// Simulated regions for H.
    #[arg(long)]
    pub n_sim: Option<usize>,
    /// Marginal quantile used as threshold or censoring level.
    #[arg(long)]
    pub threshold_q: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClusterOptions {
    pub data: DataOptions,
    pub bbox: Option<BBox>,
    pub spacing: f64,
    pub d0_max: usize,
    pub criteria: Criteria,
    pub seed: u64,
}

impl Default for ClusterOptions {
    fn default() -> Self {
        ClusterOptions {
            data: DataOptions::default(),
            bbox: None,
            spacing: 1.0,
            d0_max: 10,
            criteria: Criteria::default(),
            seed: 0,
        }
    }
}

const CLUSTER_HEADER: [&str; 9] =
    ["cluster_id", "centroid_lat", "centroid_lon", "d0", "members", "hw_h", "ad_p", "singleton", "kappa_fallback"];

fn run_cluster(a: ClusterArgs) -> Result<()> {
    let mut o: ClusterOptions = load_config(&a.common.config)?;
    o.data.merge(a.data);
    if let Some(b) = a.bbox {
        if b.len() != 4 {
            return Err(Error::input("--bbox needs lat_min,lat_max,lon_min,lon_max"));
        }
        o.bbox = Some(BBox { lat_min: b[0], lat_max: b[1], lon_min: b[2], lon_max: b[3] });
    }
    set!(o.spacing, a.spacing);
    set!(o.d0_max, a.d0_max);
    set!(o.criteria.h_max, a.h_max);
    set!(o.criteria.ad_alpha, a.ad_alpha);
    set!(o.criteria.n_sim, a.n_sim);
    set!(o.criteria.threshold_q, a.threshold_q);
    set!(o.seed, a.common.seed);
    let out = out_dir(&a.common.out)?;
    let d = load(&o.data).stage("ingest")?;
    let coords = d.coords();
    let bbox = o.bbox.unwrap_or_else(|| {
        let f = |k: usize, init: f64, op: fn(f64, f64) -> f64| coords.iter().map(|c| c[k]).fold(init, op);
        BBox {
            lat_min: f(0, f64::INFINITY, f64::min),
            lat_max: f(0, f64::NEG_INFINITY, f64::max),
            lon_min: f(1, f64::INFINITY, f64::min),
            lon_max: f(1, f64::NEG_INFINITY, f64::max),
        }
    });
    let centroids = build_grid(&bbox, o.spacing).stage("grid")?;
    let d0_max = o.d0_max.min(coords.len());
    let cl = cluster_all(&centroids, &coords, &[&d.factual, &d.counterfactual], d0_max, &o.criteria, RngStream::new(o.seed))
        .stage("cluster")?;
    let rows: Vec<Vec<String>> = cl
        .iter()
        .enumerate()
        .map(|(i, c)| {
            vec![
                i.to_string(),
                fmt17(c.centroid[0]),
                fmt17(c.centroid[1]),
                c.d0.to_string(),
                c.member_sites.iter().map(|&j| d.sites[j].site_id.clone()).collect::<Vec<_>>().join(";"),
                fmt_opt(c.hw_h),
                fmt_opt(c.ad_p),
                c.singleton.to_string(),
                c.kappa_fallback.to_string(),
            ]
        })
        .collect();
    let p = out.join("clusters.csv");
    write_csv(&p, &CLUSTER_HEADER, &rows)?;
    write_metadata(&out, "cluster", o.seed, &o, &[p], vec![])
}

// ---------- attribute ----------

#[derive(Debug, Args)]
pub struct AttributeArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub data: DataArgs,
    /// mgpd, efcm, hw or empirical.
    #[arg(long)]
    pub model: Option<ModelTag>,
    /// PN or AR.
    #[arg(long)]
    pub objective: Option<Objective>,
    /// Return period of the event in years.
    #[arg(long)]
    pub return_years: Option<f64>,
    /// Rows per year, 52 for weekly data.
    #[arg(long)]
    pub blocks_per_year: Option<f64>,
    /// Marginal quantile used as threshold or censoring level.
    #[arg(long)]
    pub threshold_q: Option<f64>,
    /// Fixed weights; optimized when absent.
    #[arg(long, value_delimiter = ',')]
    pub weights: Option<Vec<f64>>,
    /// Monte Carlo sample size for model probabilities.
    #[arg(long)]
    pub n_mc: Option<usize>,
    /// Bootstrap replicates.
    #[arg(long)]
    pub replicates: Option<usize>,
    /// Confidence level of the intervals.
    #[arg(long)]
    pub level: Option<f64>,
    /// Moving-block length; 0 means iid resampling.
    #[arg(long)]
    pub block_length: Option<usize>,
    /// Skip bootstrap intervals.
    #[arg(long)]
    pub no_ci: bool,
    /// W family for hw: gaussian or ievl.
    #[arg(long, value_parser = parse_family)]
    pub family: Option<CopulaFamily>,
    /// Cluster table from `cluster`; one attribution per cluster with d0 ≥ 2.
    #[arg(long)]
    pub clusters: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttributeOptions {
    pub data: DataOptions,
    pub model: ModelTag,
    pub objective: Objective,
    pub return_years: f64,
    pub blocks_per_year: f64,
    pub threshold_q: f64,
    pub weights: Option<Vec<f64>>,
    pub n_mc: usize,
    pub ci: bool,
    pub replicates: usize,
    pub level: f64,
    pub block_length: usize,
    pub family: CopulaFamily,
    pub clusters: Option<PathBuf>,
    pub seed: u64,
}

impl Default for AttributeOptions {
    fn default() -> Self {
        AttributeOptions {
            data: DataOptions::default(),
            model: ModelTag::Efcm,
            objective: Objective::Pn,
            return_years: 5.0,
            blocks_per_year: 52.0,
            threshold_q: 0.9,
            weights: None,
            n_mc: 20_000,
            ci: true,
            replicates: 300,
            level: 0.9,
            block_length: 13,
            family: CopulaFamily::Gaussian,
            clusters: None,
            seed: 0,
        }
    }
}

#[derive(Debug, Serialize)]
struct AttributeOut<'a> {
    site_ids: Vec<String>,
    #[serde(flatten)]
    report: &'a AttributionReport,
}

fn attribution_config(o: &AttributeOptions) -> Result<AttributionConfig> {
    let spec = ReturnLevelSpec::new(o.return_years, o.blocks_per_year)?;
    let mut c = AttributionConfig::new(o.model, o.objective, spec);
    c.weights = o.weights.clone();
    c.n_mc = o.n_mc;
    c.seed = o.seed;
    c.ci = o.ci.then_some(CiConfig { replicates: o.replicates, level: o.level, scheme: scheme(o.block_length) });
    Ok(c)
}

/// Cluster id, centroid and member site ids.
type ClusterRow = (String, [f64; 2], Vec<String>);

fn read_cluster_members(path: &Path) -> Result<Vec<ClusterRow>> {
    let mut r = csv::Reader::from_path(path)?;
    let h = r.headers()?.clone();
    let col = |name: &str| h.iter().position(|x| x == name).ok_or_else(|| Error::input(format!("cluster table lacks {name}")));
    let (ci, la, lo, me) = (col("cluster_id")?, col("centroid_lat")?, col("centroid_lon")?, col("members")?);
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let num = |k: usize| rec[k].parse::<f64>().map_err(|_| Error::input(format!("bad number {:?}", &rec[k])));
        out.push((rec[ci].to_string(), [num(la)?, num(lo)?], rec[me].split(';').map(String::from).collect()));
    }
    Ok(out)
}

const MAP_HEADER: [&str; 20] = [
    "cluster_id", "centroid_lat", "centroid_lon", "d0", "members", "weights", "v", "p0", "p1", "pn", "ps", "pns", "rr",
    "ar", "pn_lower", "pn_upper", "ar_lower", "ar_upper", "resolution_warning", "status",
];

fn run_attribute(a: AttributeArgs) -> Result<()> {
    let mut o: AttributeOptions = load_config(&a.common.config)?;
    o.data.merge(a.data);
    set!(o.model, a.model);
    set!(o.objective, a.objective);
    set!(o.return_years, a.return_years);
    set!(o.blocks_per_year, a.blocks_per_year);
    set!(o.threshold_q, a.threshold_q);
    set_opt!(o.weights, a.weights);
    set!(o.n_mc, a.n_mc);
    set!(o.replicates, a.replicates);
    set!(o.level, a.level);
    set!(o.block_length, a.block_length);
    set!(o.family, a.family);
    set_opt!(o.clusters, a.clusters);
    set!(o.seed, a.common.seed);
    if a.no_ci {
        o.ci = false;
    }
    let out = out_dir(&a.common.out)?;
    let d = load(&o.data).stage("ingest")?;
    let cfg = attribution_config(&o).stage("config")?;
    let run = |idx: &[usize]| -> Result<AttributionReport> {
        let f = d.factual.select_sites(idx);
        let c = d.counterfactual.select_sites(idx);
        let coords = idx.iter().map(|&i| [d.sites[i].lat, d.sites[i].lon]).collect();
        attribute(&f, &c, &cfg, &fit_settings(coords, o.threshold_q, o.family))
    };
    match &o.clusters {
        None => {
            let idx: Vec<usize> = (0..d.sites.len()).collect();
            let rep = run(&idx)?;
            let p = out.join("report.json");
            write_json(&p, &AttributeOut { site_ids: d.factual.site_ids.clone(), report: &rep })?;
            write_metadata(&out, "attribute", o.seed, &o, &[p], vec![])
        }
        Some(path) => {
            let clusters = read_cluster_members(path).stage("clusters")?;
            let results: Vec<_> = clusters
                .iter()
                .filter(|c| c.2.len() >= 2)
                .map(|(id, centroid, members)| (id, centroid, members, site_indices(&d.sites, members).and_then(|idx| run(&idx))))
                .collect();
            let mut rows = Vec::new();
            let mut reports = BTreeMap::new();
            for (id, centroid, members, res) in &results {
                let base = vec![
                    id.to_string(),
                    fmt17(centroid[0]),
                    fmt17(centroid[1]),
                    members.len().to_string(),
                    members.join(";"),
                ];
                let tail = match res {
                    Ok(r) => {
                        let ci = |k: &str, side: usize| {
                            r.ci.as_ref().map(|c| ext_str(c.intervals[k][side])).unwrap_or_default()
                        };
                        let m = &r.metrics;
                        reports.insert(id.to_string(), AttributeOut { site_ids: members.to_vec(), report: r });
                        vec![
                            r.weights.iter().map(|w| fmt17(*w)).collect::<Vec<_>>().join(";"),
                            fmt17(r.v),
                            fmt17(m.p0),
                            fmt17(m.p1),
                            ext_str(m.pn),
                            ext_str(m.ps),
                            fmt17(m.pns),
                            ext_str(m.rr),
                            ext_str(m.ar),
                            ci("pn", 0),
                            ci("pn", 1),
                            ci("ar", 0),
                            ci("ar", 1),
                            r.resolution_warning.to_string(),
                            "ok".into(),
                        ]
                    }
                    Err(e) => {
                        let mut v = vec![String::new(); 14];
                        v.push(format!("error: {e}"));
                        v
                    }
                };
                rows.push(base.into_iter().chain(tail).collect::<Vec<_>>());
            }
            let p1 = out.join("attribution_map.csv");
            write_csv(&p1, &MAP_HEADER, &rows)?;
            let p2 = out.join("reports.json");
            write_json(&p2, &reports)?;
            write_metadata(&out, "attribute", o.seed, &o, &[p1, p2], vec![])
        }
    }
}

// ---------- simulations ----------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    /// A few replicates for checks.
    Smoke,
    /// 100 replicates, 2·10⁴ simulated rows.
    Desk,
    /// 1000 replicates, 10⁵ simulated rows.
    Full,
}

#[derive(Debug, Args)]
pub struct SimArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Scale of the study: smoke, desk or full.
    #[arg(long, value_enum)]
    pub preset: Option<Preset>,
    /// Rows per simulated data set.
    #[arg(long)]
    pub n: Option<usize>,
    /// Monte Carlo replicates per cell.
    #[arg(long)]
    pub mc_reps: Option<usize>,
    /// Rows simulated from each fitted model.
    #[arg(long)]
    pub m_sim: Option<usize>,
    /// Oracle sample size for the target quantiles.
    #[arg(long)]
    pub oracle_n: Option<usize>,
    /// True δ values.
    #[arg(long, value_delimiter = ',')]
    pub deltas: Option<Vec<f64>>,
    /// Exceedance probabilities p.
    #[arg(long, value_delimiter = ',')]
    pub p_targets: Option<Vec<f64>>,
    /// oracle or empirical.
    #[arg(long)]
    pub margins: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimOptions {
    pub preset: Option<Preset>,
    pub n: Option<usize>,
    pub mc_reps: Option<usize>,
    pub m_sim: Option<usize>,
    pub oracle_n: Option<usize>,
    pub deltas: Option<Vec<f64>>,
    pub p_targets: Option<Vec<f64>>,
    pub margins: Option<MarginMode>,
    pub seed: Option<u64>,
}

/// Effective scenario settings for `which` ∈ {1, 2}.
pub fn scenario_config(which: u8, o: &SimOptions) -> ScenarioConfig {
    let mut c = if which == 1 { ScenarioConfig::scenario1() } else { ScenarioConfig::scenario2() };
    match o.preset.unwrap_or(Preset::Desk) {
        Preset::Desk => {}
        Preset::Full => {
            c.mc_reps = 1000;
            c.m_sim = 100_000;
            c.chi_reps = 100;
        }
        Preset::Smoke => {
            c.mc_reps = 2;
            c.m_sim = 5000;
            c.oracle_n = 200_000;
            c.chi_reps = 1;
            c.chi_n_mc = 500;
        }
    }
    set!(c.n, o.n);
    set!(c.mc_reps, o.mc_reps);
    set!(c.m_sim, o.m_sim);
    set!(c.oracle_n, o.oracle_n);
    set!(c.delta_list, o.deltas.clone());
    set!(c.p_targets, o.p_targets.clone());
    set!(c.margins, o.margins);
    set!(c.seed, o.seed);
    c
}

/// Writes the tables of a scenario run and returns their paths.
pub fn write_scenario(out: &Path, r: &ScenarioResult) -> Result<Vec<PathBuf>> {
    let mut paths = Vec::new();
    let p = out.join("estimates.csv");
    let rows: Vec<Vec<String>> = r
        .rows
        .iter()
        .map(|e| {
            vec![
                e.scenario.to_string(),
                e.sub.clone(),
                e.model.clone(),
                fmt17(e.delta),
                fmt17(e.p),
                e.replicate.to_string(),
                fmt17(e.p_hat),
                fmt17(e.bias),
            ]
        })
        .collect();
    write_csv(&p, &["scenario", "sub", "model", "delta", "p", "replicate", "p_hat", "bias"], &rows)?;
    paths.push(p);
    let p = out.join("cells.csv");
    let rows: Vec<Vec<String>> = r
        .cells
        .iter()
        .map(|c| {
            vec![
                c.scenario.to_string(),
                c.sub.clone(),
                c.model.clone(),
                fmt17(c.delta),
                fmt17(c.p),
                c.n_ok.to_string(),
                fmt17(c.mean_bias),
                fmt17(c.variance),
                fmt17(c.rmse),
                fmt17(c.median_abs_bias),
            ]
        })
        .collect();
    let h = ["scenario", "sub", "model", "delta", "p", "n_ok", "mean_bias", "variance", "rmse", "median_abs_bias"];
    write_csv(&p, &h, &rows)?;
    paths.push(p);
    let p = out.join("targets.csv");
    let rows: Vec<Vec<String>> = r.targets.iter().map(|t| vec![fmt17(t.delta), fmt17(t.p), fmt17(t.nu_p)]).collect();
    write_csv(&p, &["delta", "p", "nu_p"], &rows)?;
    paths.push(p);
    let p = out.join("failures.csv");
    let rows: Vec<Vec<String>> = r
        .failures
        .iter()
        .map(|f| vec![f.sub.clone(), f.model.clone(), fmt17(f.delta), f.replicate.to_string(), f.message.clone()])
        .collect();
    write_csv(&p, &["sub", "model", "delta", "replicate", "message"], &rows)?;
    paths.push(p);
    if !r.chi.is_empty() {
        let p = out.join("chi.csv");
        let rows: Vec<Vec<String>> = r
            .chi
            .iter()
            .map(|c| vec![fmt17(c.delta), c.model.clone(), fmt17(c.u), fmt17(c.median), fmt17(c.lower), fmt17(c.upper)])
            .collect();
        write_csv(&p, &["delta", "model", "u", "median", "lower", "upper"], &rows)?;
        paths.push(p);
    }
    Ok(paths)
}

fn run_sim(which: u8, a: SimArgs) -> Result<()> {
    let mut o: SimOptions = load_config(&a.common.config)?;
    set_opt!(o.preset, a.preset);
    set_opt!(o.n, a.n);
    set_opt!(o.mc_reps, a.mc_reps);
    set_opt!(o.m_sim, a.m_sim);
    set_opt!(o.oracle_n, a.oracle_n);
    set_opt!(o.deltas, a.deltas);
    set_opt!(o.p_targets, a.p_targets);
    if let Some(m) = a.margins {
        o.margins = Some(match m.as_str() {
            "oracle" => MarginMode::Oracle,
            "empirical" => MarginMode::Empirical,
            _ => return Err(Error::input(format!("unknown margin mode {m:?}"))),
        });
    }
    set_opt!(o.seed, a.common.seed);
    let cfg = scenario_config(which, &o);
    let out = out_dir(&a.common.out)?;
    let r = if which == 1 { run_scenario1(&cfg) } else { run_scenario2(&cfg) }.stage("simulate")?;
    let paths = write_scenario(&out, &r)?;
    let name = if which == 1 { "simulate1" } else { "simulate2" };
    write_metadata(&out, name, cfg.seed, &cfg, &paths, r.notes.clone())
}

// ---------- return levels ----------

#[derive(Debug, Args)]
pub struct ReturnLevelArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub data: DataArgs,
    /// Return period of the event in years.
    #[arg(long)]
    pub return_years: Option<f64>,
    /// Rows per year, 52 for weekly data.
    #[arg(long)]
    pub blocks_per_year: Option<f64>,
    /// Marginal quantile used as threshold or censoring level.
    #[arg(long)]
    pub threshold_q: Option<f64>,
    /// Also report the weighted sum with these weights.
    #[arg(long, value_delimiter = ',')]
    pub weights: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReturnLevelOptions {
    pub data: DataOptions,
    pub return_years: f64,
    pub blocks_per_year: f64,
    pub threshold_q: f64,
    pub weights: Option<Vec<f64>>,
    pub seed: u64,
}

impl Default for ReturnLevelOptions {
    fn default() -> Self {
        ReturnLevelOptions {
            data: DataOptions::default(),
            return_years: 5.0,
            blocks_per_year: 52.0,
            threshold_q: 0.9,
            weights: None,
            seed: 0,
        }
    }
}

fn run_returnlevel(a: ReturnLevelArgs) -> Result<()> {
    let mut o: ReturnLevelOptions = load_config(&a.common.config)?;
    o.data.merge(a.data);
    set!(o.return_years, a.return_years);
    set!(o.blocks_per_year, a.blocks_per_year);
    set!(o.threshold_q, a.threshold_q);
    set_opt!(o.weights, a.weights);
    set!(o.seed, a.common.seed);
    let out = out_dir(&a.common.out)?;
    let d = load(&o.data).stage("ingest")?;
    let spec = ReturnLevelSpec::new(o.return_years, o.blocks_per_year).stage("config")?;
    let mut rows = Vec::new();
    for s in [&d.factual, &d.counterfactual] {
        let world = if s.world == World::Factual { "factual" } else { "counterfactual" };
        let mut series: Vec<(String, Vec<f64>)> =
            s.site_ids.iter().enumerate().map(|(j, id)| (id.clone(), s.column(j).to_vec())).collect();
        if let Some(w) = &o.weights {
            if w.len() != s.d() {
                return Err(Error::input(format!("{} weights for {} sites", w.len(), s.d())));
            }
            series.push(("weighted".into(), s.weighted_sums(w)));
        }
        for (name, x) in series {
            let f = return_level_fit(&x, &spec, o.threshold_q).stage("returnlevel")?;
            rows.push(vec![
                world.to_string(),
                name,
                fmt17(o.return_years),
                fmt17(o.blocks_per_year),
                fmt17(f.threshold),
                fmt17(f.rate),
                fmt17(f.gpd.sigma),
                fmt17(f.gpd.gamma),
                fmt17(f.level),
            ]);
        }
    }
    let p = out.join("returnlevels.csv");
    let h = ["world", "series", "years", "blocks_per_year", "threshold", "rate", "sigma", "gamma", "level"];
    write_csv(&p, &h, &rows)?;
    write_metadata(&out, "returnlevel", o.seed, &o, &[p], vec![])
}

// ---------- synthetic data ----------

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Weekly rows per world.
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub n_sites: Option<usize>,
    /// Location shift of the factual world.
    #[arg(long)]
    pub shift: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthOptions {
    pub n: usize,
    pub n_sites: usize,
    pub shift: f64,
    pub lambda: f64,
    /// Correlation range in km.
    pub range_km: f64,
    pub seed: u64,
}

impl Default for SynthOptions {
    fn default() -> Self {
        SynthOptions { n: 1040, n_sites: 4, shift: 1.0, lambda: 1.5, range_km: 100.0, seed: 1 }
    }
}

/// Two worlds of eFCM-dependent values, weekly from 1980-01-06, sites 0.5° apart.
pub fn synth_dataset(o: &SynthOptions) -> Result<(WorldSample, WorldSample, Vec<Site>)> {
    if o.n_sites < 2 || o.n < 200 {
        return Err(Error::input("synthetic data needs at least 2 sites and 200 rows"));
    }
    let sites: Vec<Site> = (0..o.n_sites)
        .map(|i| Site { site_id: format!("S{:02}", i + 1), lat: 45.0 + 0.5 * (i / 3) as f64, lon: 7.0 + 0.5 * (i % 3) as f64 })
        .collect();
    let model = EfcmModel::new(o.lambda, o.range_km, coords_of(&sites), Metric::Haversine)?;
    let start = chrono::NaiveDate::from_ymd_opt(1980, 1, 6).expect("valid date");
    let times: Vec<String> = (0..o.n).map(|i| (start + chrono::Duration::days(7 * i as i64)).to_string()).collect();
    let ids: Vec<String> = sites.iter().map(|s| s.site_id.clone()).collect();
    let root = RngStream::new(o.seed);
    let make = |k: u64, shift: f64, world: World| -> Result<WorldSample> {
        let z = efcm_simulate(&model, o.n, root.child(k))?;
        WorldSample::new(z.mapv(|w| 20.0 + shift + 2.0 * w), world, ids.clone(), times.clone())
    };
    Ok((make(1, o.shift, World::Factual)?, make(0, 0.0, World::Counterfactual)?, sites))
}

fn run_synth(a: SynthArgs) -> Result<()> {
    let mut o: SynthOptions = load_config(&a.common.config)?;
    set!(o.n, a.n);
    set!(o.n_sites, a.n_sites);
    set!(o.shift, a.shift);
    set!(o.seed, a.common.seed);
    let out = out_dir(&a.common.out)?;
    let (f, c, sites) = synth_dataset(&o)?;
    let paths = [out.join("factual.csv"), out.join("counterfactual.csv"), out.join("sites.csv"), out.join("manifest.json")];
    write_world(&paths[0], &f)?;
    write_world(&paths[1], &c)?;
    write_sites(&paths[2], &sites)?;
    let m = DatasetManifest {
        factual_path: "factual.csv".into(),
        counterfactual_path: "counterfactual.csv".into(),
        site_file: "sites.csv".into(),
        time_aggregation: Aggregation::None,
        seasonal_filter: None,
    };
    write_json(&paths[3], &m)?;
    write_metadata(&out, "synth", o.seed, &o, &paths, vec![])
}

/// Sizes the global thread pool from `TAILATTRIB_THREADS` when set.
pub fn init_threads() -> Result<()> {
    if let Ok(v) = std::env::var("TAILATTRIB_THREADS") {
        let n: usize = v.parse().map_err(|_| Error::input(format!("TAILATTRIB_THREADS={v:?} is not a count")))?;
        if n == 0 {
            return Err(Error::input("TAILATTRIB_THREADS must be positive"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::input(format!("thread pool: {e}")))?;
    }
    Ok(())
}

pub fn run(cli: Cli) -> Result<()> {
    init_threads()?;
    match cli.command {
        Command::Fit(a) => run_fit(a),
        Command::Chi(a) => run_chi(a),
        Command::Cluster(a) => run_cluster(a),
        Command::Attribute(a) => run_attribute(a),
        Command::Simulate1(a) => run_sim(1, a),
        Command::Simulate2(a) => run_sim(2, a),
        Command::Returnlevel(a) => run_returnlevel(a),
        Command::Synth(a) => run_synth(a),
    }
}

/// Reads the site table and one world, for callers that only need a single sample.
pub fn read_single(sites: &Path, world_file: &Path, world: World) -> Result<(WorldSample, Vec<Site>)> {
    let s = read_sites(sites)?;
    let order: Vec<String> = s.iter().map(|x| x.site_id.clone()).collect();
    Ok((read_world(world_file, world, &order)?, s))
}
