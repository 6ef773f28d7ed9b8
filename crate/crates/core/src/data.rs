//! Sample containers shared across models.

use ndarray::{Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which climate a sample was drawn from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum World {
    /// With anthropogenic forcing (t = 1).
    Factual,
    /// Without it (t = 0).
    Counterfactual,
}

/// An n×d matrix of one variable at d sites under one world.
#[derive(Debug, Clone, PartialEq)]
pub struct WorldSample {
    pub values: Array2<f64>,
    pub world: World,
    pub site_ids: Vec<String>,
    pub time_index: Vec<String>,
}

impl WorldSample {
    pub fn new(values: Array2<f64>, world: World, site_ids: Vec<String>, time_index: Vec<String>) -> Result<Self> {
        let (n, d) = values.dim();
        if d == 0 {
            return Err(Error::input("sample has no sites"));
        }
        if site_ids.len() != d {
            return Err(Error::input(format!("{} site ids for {d} columns", site_ids.len())));
        }
        if time_index.len() != n {
            return Err(Error::input(format!("{} time stamps for {n} rows", time_index.len())));
        }
        if let Some(((i, j), _)) = values.indexed_iter().find(|(_, v)| !v.is_finite()) {
            return Err(Error::input(format!("missing or non-finite value at row {i}, site {}", site_ids[j])));
        }
        Ok(WorldSample { values, world, site_ids, time_index })
    }

    /// Generic labels `s0..`, `t0..`.
    pub fn from_matrix(values: Array2<f64>, world: World) -> Result<Self> {
        let (n, d) = values.dim();
        let sites = (0..d).map(|j| format!("s{j}")).collect();
        let times = (0..n).map(|i| i.to_string()).collect();
        WorldSample::new(values, world, sites, times)
    }

    pub fn n(&self) -> usize {
        self.values.nrows()
    }

    pub fn d(&self) -> usize {
        self.values.ncols()
    }

    pub fn column(&self, j: usize) -> ArrayView1<'_, f64> {
        self.values.column(j)
    }

    /// Row subset, keeping labels aligned.
    pub fn select_rows(&self, rows: &[usize]) -> WorldSample {
        let values = self.values.select(ndarray::Axis(0), rows);
        let time_index = rows.iter().map(|&i| self.time_index[i].clone()).collect();
        WorldSample { values, world: self.world, site_ids: self.site_ids.clone(), time_index }
    }

    /// Column subset, keeping labels aligned.
    pub fn select_sites(&self, cols: &[usize]) -> WorldSample {
        let values = self.values.select(ndarray::Axis(1), cols);
        let site_ids = cols.iter().map(|&j| self.site_ids[j].clone()).collect();
        WorldSample { values, world: self.world, site_ids, time_index: self.time_index.clone() }
    }

    /// w·xᵢ for every row.
    pub fn weighted_sums(&self, w: &[f64]) -> Vec<f64> {
        weighted_sums(&self.values, w)
    }
}

pub fn weighted_sums(values: &Array2<f64>, w: &[f64]) -> Vec<f64> {
    values.rows().into_iter().map(|r| r.iter().zip(w).map(|(x, wi)| x * wi).sum()).collect()
}

/// Site coordinates as (x, y) or (lat, lon) pairs.
pub type Coords = Vec<[f64; 2]>;

/// Euclidean distance between two coordinate pairs.
pub fn euclid(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

/// How site separation is measured for correlograms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    /// Planar distance in coordinate units.
    #[default]
    Euclidean,
    /// Great-circle distance in km, coordinates as (lat, lon) degrees.
    Haversine,
}

impl Metric {
    pub fn distance(&self, a: [f64; 2], b: [f64; 2]) -> f64 {
        match self {
            Metric::Euclidean => euclid(a, b),
            Metric::Haversine => haversine_km(a, b),
        }
    }
}

pub const EARTH_RADIUS_KM: f64 = 6371.0088;

/// Great-circle distance between (lat, lon) points in degrees.
pub fn haversine_km(a: [f64; 2], b: [f64; 2]) -> f64 {
    let (p1, p2) = (a[0].to_radians(), b[0].to_radians());
    let dp = p2 - p1;
    let dl = (b[1] - a[1]).to_radians();
    let h = (dp / 2.0).sin().powi(2) + p1.cos() * p2.cos() * (dl / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_KM * h.sqrt().min(1.0).asin()
}

/// All pairs (i < j) in lexicographic order.
pub fn pairs(d: usize) -> Vec<(usize, usize)> {
    (0..d).flat_map(|i| (i + 1..d).map(move |j| (i, j))).collect()
}

/// Exponential correlation exp(−h/range) between every pair of sites.
pub fn exp_correlation(coords: &[[f64; 2]], range: f64, metric: Metric) -> Array2<f64> {
    let d = coords.len();
    Array2::from_shape_fn((d, d), |(i, j)| {
        if i == j {
            1.0
        } else {
            (-metric.distance(coords[i], coords[j]) / range).exp()
        }
    })
}
