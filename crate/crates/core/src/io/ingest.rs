//! Long-format CSV ingestion for two-world datasets.
//!
//! Each world file has columns `time,site_id,value`; a site table has
//! `site_id,lat,lon`. Values are pivoted to an n×d matrix whose columns follow
//! the site table, then optionally filtered by month and reduced to k-row maxima.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use chrono::{Datelike, NaiveDate};
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::data::{World, WorldSample};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Aggregation {
    #[default]
    None,
    /// Maxima over consecutive blocks of k retained rows; a trailing partial block is dropped.
    KDayMaxima { k: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub factual_path: PathBuf,
    pub counterfactual_path: PathBuf,
    pub site_file: PathBuf,
    #[serde(default)]
    pub time_aggregation: Aggregation,
    /// Months (1–12) to keep; all when absent.
    #[serde(default)]
    pub seasonal_filter: Option<Vec<u32>>,
}

impl DatasetManifest {
    /// Reads a JSON manifest; relative paths resolve against its directory.
    pub fn from_json(path: &Path) -> Result<Self> {
        let mut m: DatasetManifest = serde_json::from_reader(std::fs::File::open(path)?)?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut m.factual_path, &mut m.counterfactual_path, &mut m.site_file] {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(m)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Site {
    pub site_id: String,
    pub lat: f64,
    pub lon: f64,
}

#[derive(Debug, Deserialize)]
struct LongRow {
    time: String,
    site_id: String,
    value: Option<f64>,
}

pub fn read_sites(path: &Path) -> Result<Vec<Site>> {
    let mut r = csv::Reader::from_path(path)?;
    let sites: Vec<Site> = r.deserialize().collect::<std::result::Result<_, _>>()?;
    if sites.is_empty() {
        return Err(Error::input(format!("{} lists no sites", path.display())));
    }
    let mut seen = BTreeMap::new();
    for s in &sites {
        if !(s.lat.is_finite() && s.lon.is_finite()) {
            return Err(Error::input(format!("site {} has non-finite coordinates", s.site_id)));
        }
        if seen.insert(s.site_id.clone(), ()).is_some() {
            return Err(Error::input(format!("site {} listed twice", s.site_id)));
        }
    }
    Ok(sites)
}

/// Ordering key that compares dates, then numbers, then raw text.
#[derive(Debug, Clone, PartialEq, PartialOrd)]
enum TimeKey {
    Date(NaiveDate),
    Num(f64),
    Text(String),
}

fn parse_date(t: &str) -> Option<NaiveDate> {
    let head = t.get(..10).unwrap_or(t);
    NaiveDate::parse_from_str(head, "%Y-%m-%d").ok()
}

fn time_keys(times: &[String]) -> Vec<TimeKey> {
    if times.iter().all(|t| parse_date(t).is_some()) {
        times.iter().map(|t| TimeKey::Date(parse_date(t).expect("checked"))).collect()
    } else if times.iter().all(|t| t.parse::<f64>().is_ok()) {
        times.iter().map(|t| TimeKey::Num(t.parse().expect("checked"))).collect()
    } else {
        times.iter().map(|t| TimeKey::Text(t.clone())).collect()
    }
}

/// Pivots a long CSV into columns ordered as `site_order`.
pub fn read_world(path: &Path, world: World, site_order: &[String]) -> Result<WorldSample> {
    let mut r = csv::Reader::from_path(path)?;
    let col: BTreeMap<&str, usize> = site_order.iter().enumerate().map(|(j, s)| (s.as_str(), j)).collect();
    let mut times: Vec<String> = Vec::new();
    let mut row_of: BTreeMap<String, usize> = BTreeMap::new();
    let mut cells: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    let mut missing: Vec<String> = Vec::new();
    for rec in r.deserialize::<LongRow>() {
        let rec = rec?;
        let j = *col.get(rec.site_id.as_str()).ok_or_else(|| {
            Error::input(format!("{}: site {} is not in the site table", path.display(), rec.site_id))
        })?;
        let i = *row_of.entry(rec.time.clone()).or_insert_with(|| {
            times.push(rec.time.clone());
            times.len() - 1
        });
        match rec.value {
            Some(v) if v.is_finite() => {
                if cells.insert((i, j), v).is_some() {
                    return Err(Error::input(format!("{}: duplicate value for ({}, {})", path.display(), rec.time, rec.site_id)));
                }
            }
            _ => missing.push(format!("({}, {})", rec.time, rec.site_id)),
        }
    }
    if times.is_empty() {
        return Err(Error::input(format!("{} has no rows", path.display())));
    }
    let (n, d) = (times.len(), site_order.len());
    for (i, t) in times.iter().enumerate() {
        for (j, s) in site_order.iter().enumerate() {
            let cell = format!("({t}, {s})");
            if !cells.contains_key(&(i, j)) && !missing.contains(&cell) {
                missing.push(cell);
            }
        }
    }
    if !missing.is_empty() {
        let shown: Vec<&str> = missing.iter().take(10).map(String::as_str).collect();
        let more = if missing.len() > 10 { format!(" and {} more", missing.len() - 10) } else { String::new() };
        return Err(Error::input(format!("{}: missing values at {}{more}", path.display(), shown.join(", "))));
    }
    let keys = time_keys(&times);
    if let Some(k) = keys.windows(2).position(|w| !(w[0] < w[1])) {
        return Err(Error::input(format!(
            "{}: time stamps not strictly increasing at {} → {}",
            path.display(),
            times[k],
            times[k + 1]
        )));
    }
    let values = Array2::from_shape_fn((n, d), |(i, j)| cells[&(i, j)]);
    WorldSample::new(values, world, site_order.to_vec(), times)
}

/// Keeps rows whose date falls in one of `months`.
pub fn filter_months(s: &WorldSample, months: &[u32]) -> Result<WorldSample> {
    if months.iter().any(|m| !(1..=12).contains(m)) {
        return Err(Error::input("months must lie in 1..=12"));
    }
    let mut keep = Vec::new();
    for (i, t) in s.time_index.iter().enumerate() {
        let d = parse_date(t).ok_or_else(|| Error::input(format!("month filter needs YYYY-MM-DD times, got {t:?}")))?;
        if months.contains(&d.month()) {
            keep.push(i);
        }
    }
    if keep.is_empty() {
        return Err(Error::input("month filter removed every row"));
    }
    Ok(s.select_rows(&keep))
}

/// Maxima over consecutive blocks of k rows, labelled by each block's first time.
pub fn block_maxima(s: &WorldSample, k: usize) -> Result<WorldSample> {
    if k == 0 {
        return Err(Error::input("block length must be positive"));
    }
    let blocks = s.n() / k;
    if blocks == 0 {
        return Err(Error::input(format!("{} rows are fewer than one block of {k}", s.n())));
    }
    let values = Array2::from_shape_fn((blocks, s.d()), |(b, j)| {
        (0..k).map(|r| s.values[(b * k + r, j)]).fold(f64::NEG_INFINITY, f64::max)
    });
    let times = (0..blocks).map(|b| s.time_index[b * k].clone()).collect();
    WorldSample::new(values, s.world, s.site_ids.clone(), times)
}

fn prepare(s: WorldSample, m: &DatasetManifest) -> Result<WorldSample> {
    let s = match &m.seasonal_filter {
        Some(months) => filter_months(&s, months)?,
        None => s,
    };
    match m.time_aggregation {
        Aggregation::None => Ok(s),
        Aggregation::KDayMaxima { k } => block_maxima(&s, k),
    }
}

/// Reads both worlds aligned to the site table, plus (lat, lon) coordinates.
pub fn ingest(m: &DatasetManifest) -> Result<(WorldSample, WorldSample, Vec<Site>)> {
    let sites = read_sites(&m.site_file)?;
    let order: Vec<String> = sites.iter().map(|s| s.site_id.clone()).collect();
    let f = prepare(read_world(&m.factual_path, World::Factual, &order)?, m)?;
    let c = prepare(read_world(&m.counterfactual_path, World::Counterfactual, &order)?, m)?;
    Ok((f, c, sites))
}

pub fn coords_of(sites: &[Site]) -> Vec<[f64; 2]> {
    sites.iter().map(|s| [s.lat, s.lon]).collect()
}

/// Writes a sample in long format with 17 significant digits.
pub fn write_world(path: &Path, s: &WorldSample) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["time", "site_id", "value"])?;
    for (i, t) in s.time_index.iter().enumerate() {
        for (j, id) in s.site_ids.iter().enumerate() {
            w.write_record([t.as_str(), id.as_str(), &super::output::fmt17(s.values[(i, j)])])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_sites(path: &Path, sites: &[Site]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["site_id", "lat", "lon"])?;
    for s in sites {
        w.write_record([s.site_id.as_str(), &super::output::fmt17(s.lat), &super::output::fmt17(s.lon)])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write(dir: &Path, name: &str, body: &str) -> PathBuf {
        let p = dir.join(name);
        std::fs::File::create(&p).unwrap().write_all(body.as_bytes()).unwrap();
        p
    }

    #[test]
    fn realigns_shuffled_sites_and_aggregates() {
        let dir = tempfile::tempdir().unwrap();
        let sites = write(dir.path(), "s.csv", "site_id,lat,lon\nA,45,7\nB,46,8\n");
        let mut f = String::from("time,site_id,value\n");
        let mut c = String::from("time,site_id,value\n");
        for day in 1..=14 {
            f += &format!("2000-01-{day:02},A,{day}\n2000-01-{day:02},B,{}\n", 100 + day);
            c += &format!("2000-01-{day:02},B,{}\n2000-01-{day:02},A,{}\n", -day, 2 * day);
        }
        let m = DatasetManifest {
            factual_path: write(dir.path(), "f.csv", &f),
            counterfactual_path: write(dir.path(), "c.csv", &c),
            site_file: sites,
            time_aggregation: Aggregation::KDayMaxima { k: 7 },
            seasonal_filter: None,
        };
        let (fw, cw, s) = ingest(&m).unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(fw.n(), 2);
        assert_eq!(fw.values.row(0).to_vec(), vec![7.0, 107.0]);
        assert_eq!(cw.values.row(1).to_vec(), vec![28.0, -8.0]);
        assert_eq!(cw.time_index, vec!["2000-01-01", "2000-01-08"]);
    }

    #[test]
    fn missing_cells_and_bad_order_are_reported() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), "s.csv", "site_id,lat,lon\nA,0,0\nB,0,1\n");
        let order = vec!["A".to_string(), "B".to_string()];
        let p = write(dir.path(), "m.csv", "time,site_id,value\n1,A,1\n1,B,\n2,A,3\n");
        let e = read_world(&p, World::Factual, &order).unwrap_err().to_string();
        assert!(e.contains("(1, B)") && e.contains("(2, B)"), "{e}");
        let p = write(dir.path(), "o.csv", "time,site_id,value\n2,A,1\n2,B,1\n1,A,3\n1,B,3\n");
        assert!(read_world(&p, World::Factual, &order).unwrap_err().to_string().contains("increasing"));
        let p = write(dir.path(), "x.csv", "time,site_id,value\n1,C,1\n");
        assert!(read_world(&p, World::Factual, &order).is_err());
    }

    #[test]
    fn month_filter() {
        let v = Array2::from_shape_vec((3, 1), vec![1.0, 2.0, 3.0]).unwrap();
        let s = WorldSample::new(
            v,
            World::Factual,
            vec!["A".into()],
            vec!["2000-01-15".into(), "2000-06-15".into(), "2000-12-15".into()],
        )
        .unwrap();
        let w = filter_months(&s, &[12, 1, 2]).unwrap();
        assert_eq!(w.values.column(0).to_vec(), vec![1.0, 3.0]);
        assert!(filter_months(&s, &[13]).is_err());
    }

    #[test]
    fn round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let v = Array2::from_shape_fn((5, 2), |(i, j)| (i as f64 + 0.1) / 3.0 * (j as f64 + 1.0).sqrt());
        let s = WorldSample::from_matrix(v, World::Factual).unwrap();
        let p = dir.path().join("w.csv");
        write_world(&p, &s).unwrap();
        let back = read_world(&p, World::Factual, &s.site_ids).unwrap();
        assert_eq!(back, s);
    }
}
