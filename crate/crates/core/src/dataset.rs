//! Labelled samples: space-time cylinder labels, lagged RTL feature rows,
//! normalisation, chronological splitting and class resampling.

use std::io::{Read, Write};

use ndarray::{Array2, ArrayView1, Axis};
use rand::seq::index::sample as sample_indices;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::catalog::{Catalog, GeoPoint, SpatialIndex};
use crate::error::{Error, Result};
use crate::rtl::{rtl_features, RtlConfig};

/// Target definition: a sample at `(x, t)` is positive when some event with
/// `mag >= m_c` lies within `r_c_km` and `delta_c < t_e - t < t_c`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LabelRule {
    pub m_c: f64,
    pub r_c_km: f64,
    pub delta_c_days: f64,
    pub t_c_days: f64,
}

impl Default for LabelRule {
    fn default() -> Self {
        Self { m_c: 5.0, r_c_km: 50.0, delta_c_days: 10.0, t_c_days: 180.0 }
    }
}

impl LabelRule {
    pub fn validate(&self) -> Result<()> {
        let ok = self.r_c_km > 0.0
            && self.r_c_km.is_finite()
            && self.delta_c_days >= 0.0
            && self.delta_c_days < self.t_c_days
            && self.t_c_days.is_finite()
            && !self.m_c.is_nan();
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid label rule {self:?}")))
        }
    }
}

/// 1 iff a qualifying future event falls inside the label cylinder.
pub fn make_label(index: &SpatialIndex, point: GeoPoint, t: f64, rule: &LabelRule) -> u8 {
    let hits = index.query_future(point, t, rule.r_c_km, rule.delta_c_days, rule.t_c_days, rule.m_c);
    u8::from(!hits.is_empty())
}

/// Where samples are taken.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SampleSpec {
    /// At every catalog event with `mag >= min_mag` (all events when `None`).
    AtEvents { min_mag: Option<f64> },
    /// Explicit `(lat, lon, time)` points.
    Points { points: Vec<(f64, f64, f64)> },
    /// Regular lattice over the catalog's bounding box and time span.
    Grid { lat_step: f64, lon_step: f64, time_step_days: f64 },
}

impl Default for SampleSpec {
    fn default() -> Self {
        SampleSpec::AtEvents { min_mag: None }
    }
}

impl SampleSpec {
    fn points(&self, catalog: &Catalog) -> Result<Vec<(GeoPoint, f64)>> {
        match self {
            SampleSpec::AtEvents { min_mag } => Ok(catalog
                .events()
                .iter()
                .filter(|e| min_mag.is_none_or(|m| e.mag >= m))
                .map(|e| (e.location(), e.time))
                .collect()),
            SampleSpec::Points { points } => points
                .iter()
                .map(|&(lat, lon, t)| {
                    let p = GeoPoint::new(lat, lon);
                    if p.is_valid() && t.is_finite() {
                        Ok((p, t))
                    } else {
                        Err(Error::Config(format!("invalid sample point ({lat}, {lon}, {t})")))
                    }
                })
                .collect(),
            SampleSpec::Grid { lat_step, lon_step, time_step_days } => {
                if !(*lat_step > 0.0 && *lon_step > 0.0 && *time_step_days > 0.0) {
                    return Err(Error::Config("grid steps must be positive".into()));
                }
                let Some((t_lo, t_hi)) = catalog.time_span() else {
                    return Ok(Vec::new());
                };
                let ev = catalog.events();
                let lat_lo = ev.iter().map(|e| e.lat).fold(f64::INFINITY, f64::min);
                let lat_hi = ev.iter().map(|e| e.lat).fold(f64::NEG_INFINITY, f64::max);
                let lon_lo = ev.iter().map(|e| e.lon).fold(f64::INFINITY, f64::min);
                let lon_hi = ev.iter().map(|e| e.lon).fold(f64::NEG_INFINITY, f64::max);
                let steps = |lo: f64, hi: f64, step: f64| ((hi - lo) / step).floor() as usize + 1;
                let mut out = Vec::new();
                for it in 0..steps(t_lo, t_hi, *time_step_days) {
                    let t = t_lo + it as f64 * time_step_days;
                    for ia in 0..steps(lat_lo, lat_hi, *lat_step) {
                        for io in 0..steps(lon_lo, lon_hi, *lon_step) {
                            let p = GeoPoint::new(lat_lo + ia as f64 * lat_step, lon_lo + io as f64 * lon_step);
                            out.push((p, t));
                        }
                    }
                }
                Ok(out)
            }
        }
    }
}

/// Feature matrix with labels and sample coordinates; all row-parallel.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub features: Array2<f64>,
    pub labels: Vec<u8>,
    pub sample_times: Vec<f64>,
    pub sample_locations: Vec<GeoPoint>,
    pub feature_names: Vec<String>,
}

impl Dataset {
    pub fn new(
        features: Array2<f64>,
        labels: Vec<u8>,
        sample_times: Vec<f64>,
        sample_locations: Vec<GeoPoint>,
        feature_names: Vec<String>,
    ) -> Result<Self> {
        let n = features.nrows();
        if labels.len() != n || sample_times.len() != n || sample_locations.len() != n {
            return Err(Error::Data("row count differs between features, labels, times and locations".into()));
        }
        if feature_names.len() != features.ncols() {
            return Err(Error::DimensionMismatch { expected: features.ncols(), got: feature_names.len() });
        }
        let mut names = feature_names.clone();
        names.sort();
        if names.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Data("duplicate feature names".into()));
        }
        if labels.iter().any(|&y| y > 1) {
            return Err(Error::Data("labels must be 0 or 1".into()));
        }
        Ok(Self { features, labels, sample_times, sample_locations, feature_names })
    }

    pub fn n_samples(&self) -> usize {
        self.labels.len()
    }

    pub fn n_features(&self) -> usize {
        self.features.ncols()
    }

    /// `(negatives, positives)`.
    pub fn class_counts(&self) -> (usize, usize) {
        let pos = self.labels.iter().filter(|&&y| y == 1).count();
        (self.labels.len() - pos, pos)
    }

    pub fn select_rows(&self, rows: &[usize]) -> Dataset {
        Dataset {
            features: self.features.select(Axis(0), rows),
            labels: rows.iter().map(|&i| self.labels[i]).collect(),
            sample_times: rows.iter().map(|&i| self.sample_times[i]).collect(),
            sample_locations: rows.iter().map(|&i| self.sample_locations[i]).collect(),
            feature_names: self.feature_names.clone(),
        }
    }

    /// Keeps only the named columns, in the given order.
    pub fn select_features(&self, names: &[String]) -> Result<Dataset> {
        let cols = names
            .iter()
            .map(|n| {
                self.feature_names
                    .iter()
                    .position(|f| f == n)
                    .ok_or_else(|| Error::Data(format!("unknown feature `{n}`")))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Dataset { features: self.features.select(Axis(1), &cols), feature_names: names.to_vec(), ..self.clone() })
    }

    pub fn with_features(&self, features: Array2<f64>) -> Result<Dataset> {
        Dataset::new(
            features,
            self.labels.clone(),
            self.sample_times.clone(),
            self.sample_locations.clone(),
            self.feature_names.clone(),
        )
    }

    /// CSV with header `sample_time,lat,lon,label,<feature_names...>`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        write!(out, "sample_time,lat,lon,label")?;
        for name in &self.feature_names {
            write!(out, ",{name}")?;
        }
        writeln!(out)?;
        for (i, row) in self.features.rows().into_iter().enumerate() {
            let loc = self.sample_locations[i];
            write!(out, "{},{},{},{}", self.sample_times[i], loc.lat, loc.lon, self.labels[i])?;
            for v in row {
                write!(out, ",{v}")?;
            }
            writeln!(out)?;
        }
        Ok(())
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Dataset> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
        let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
        if header.len() < 4 || header[..4] != ["sample_time", "lat", "lon", "label"] {
            return Err(Error::Parse { line: 1, msg: "expected header `sample_time,lat,lon,label,...`".into() });
        }
        let names = header[4..].to_vec();
        let d = names.len();
        let (mut times, mut locs, mut labels, mut values) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
        for rec in rdr.records() {
            let rec = rec?;
            let line = rec.position().map(|p| p.line()).unwrap_or(0);
            let num = |i: usize| -> Result<f64> {
                rec.get(i)
                    .and_then(|s| s.trim().parse::<f64>().ok())
                    .ok_or_else(|| Error::Parse { line, msg: format!("bad value in column {}", i + 1) })
            };
            times.push(num(0)?);
            locs.push(GeoPoint::new(num(1)?, num(2)?));
            labels.push(match rec.get(3).map(str::trim) {
                Some("0") => 0,
                Some("1") => 1,
                _ => return Err(Error::Parse { line, msg: "label must be 0 or 1".into() }),
            });
            for j in 0..d {
                values.push(num(4 + j)?);
            }
        }
        let n = labels.len();
        let features = Array2::from_shape_vec((n, d), values).map_err(|e| Error::Data(e.to_string()))?;
        Dataset::new(features, labels, times, locs, names)
    }
}

/// Result of [`build_dataset`] with the number of rows dropped on each edge.
#[derive(Debug, Clone)]
pub struct BuiltDataset {
    pub dataset: Dataset,
    /// Feature look-back started before the first catalog event.
    pub dropped_feature_window: usize,
    /// Label window extended past the last catalog event.
    pub dropped_label_window: usize,
}

/// Builds one row per sample point: config-major lagged RTL products and the
/// cylinder label. Rows whose windows leave the catalog time span are dropped.
pub fn build_dataset(
    catalog: &Catalog,
    index: &SpatialIndex,
    configs: &[RtlConfig],
    n_lags: usize,
    lag_step_days: f64,
    rule: &LabelRule,
    sample_spec: &SampleSpec,
) -> Result<BuiltDataset> {
    if configs.is_empty() {
        return Err(Error::Config("at least one RTL configuration is required".into()));
    }
    for c in configs {
        c.validate()?;
    }
    if n_lags == 0 || !(lag_step_days > 0.0) {
        return Err(Error::Config("n_lags must be >= 1 and lag_step_days > 0".into()));
    }
    rule.validate()?;
    let (start, end) = catalog.time_span().ok_or_else(|| Error::Data("catalog has no events".into()))?;

    let lookback =
        configs.iter().map(RtlConfig::search_window_days).fold(0.0, f64::max) + (n_lags - 1) as f64 * lag_step_days;
    let points = sample_spec.points(catalog)?;
    let mut dropped_feature_window = 0;
    let mut dropped_label_window = 0;
    let kept: Vec<(GeoPoint, f64)> = points
        .into_iter()
        .filter(|&(_, t)| {
            if t - lookback < start {
                dropped_feature_window += 1;
                false
            } else if t + rule.t_c_days > end {
                dropped_label_window += 1;
                false
            } else {
                true
            }
        })
        .collect();
    if kept.is_empty() {
        return Err(Error::Data(format!(
            "no usable samples ({dropped_feature_window} before catalog start, {dropped_label_window} past catalog end)"
        )));
    }

    let rows: Vec<(Vec<f64>, u8)> = kept
        .par_iter()
        .map(|&(p, t)| (rtl_features(index, p, t, configs, n_lags, lag_step_days), make_label(index, p, t, rule)))
        .collect();

    let width = configs.len() * n_lags;
    let mut values = Vec::with_capacity(rows.len() * width);
    let mut labels = Vec::with_capacity(rows.len());
    for (row, label) in rows {
        values.extend_from_slice(&row);
        labels.push(label);
    }
    let features = Array2::from_shape_vec((labels.len(), width), values).map_err(|e| Error::Data(e.to_string()))?;
    let names = configs.iter().flat_map(|c| (0..n_lags).map(move |k| c.feature_name(k))).collect();
    let dataset = Dataset::new(
        features,
        labels,
        kept.iter().map(|&(_, t)| t).collect(),
        kept.iter().map(|&(p, _)| p).collect(),
        names,
    )?;
    Ok(BuiltDataset { dataset, dropped_feature_window, dropped_label_window })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormMode {
    #[default]
    Zscore,
    MovingAverage,
}

/// Per-column statistics fitted on training rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub means: Vec<f64>,
    /// Divisors; forced to 1 for constant columns.
    pub stds: Vec<f64>,
    pub constant: Vec<bool>,
    pub mode: NormMode,
    pub window: usize,
}

impl NormStats {
    /// CSV `feature,mean,std`.
    pub fn write_csv<W: Write>(&self, names: &[String], mut out: W) -> Result<()> {
        writeln!(out, "feature,mean,std")?;
        for ((name, m), s) in names.iter().zip(&self.means).zip(&self.stds) {
            writeln!(out, "{name},{m},{s}")?;
        }
        Ok(())
    }
}

fn trailing_mean(col: ArrayView1<f64>, window: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(col.len());
    let mut sum = 0.0;
    for i in 0..col.len() {
        sum += col[i];
        if i >= window {
            sum -= col[i - window];
        }
        out.push(sum / (i + 1).min(window) as f64);
    }
    out
}

fn mean_and_pop_std(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = values.clone().count() as f64;
    let mean = values.clone().sum::<f64>() / n;
    let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Fits per-column normalisation on training rows (rows in time order for
/// the moving-average mode). Uses the population standard deviation.
pub fn fit_normalizer(train: &Array2<f64>, mode: NormMode, window: usize) -> Result<NormStats> {
    let n = train.nrows();
    if n == 0 {
        return Err(Error::Data("cannot fit normalisation on zero rows".into()));
    }
    if mode == NormMode::MovingAverage && (window == 0 || window > n) {
        return Err(Error::Config(format!("moving-average window {window} must be in 1..={n}")));
    }
    let mut stats = NormStats { means: Vec::new(), stds: Vec::new(), constant: Vec::new(), mode, window };
    for col in train.columns() {
        let first = col[0];
        let constant = col.iter().all(|&v| v == first);
        let (mean, std) = match mode {
            NormMode::Zscore => mean_and_pop_std(col.iter().copied()),
            NormMode::MovingAverage => {
                let ma = trailing_mean(col, window);
                let mean = col.iter().sum::<f64>() / n as f64;
                let (_, std) = mean_and_pop_std(col.iter().zip(&ma).map(|(v, m)| v - m));
                (mean, std)
            }
        };
        let degenerate = constant || !(std > 0.0);
        stats.means.push(mean);
        stats.stds.push(if degenerate { 1.0 } else { std });
        stats.constant.push(degenerate);
    }
    Ok(stats)
}

/// Applies fitted statistics. Z-score subtracts the training mean; moving
/// average subtracts the trailing mean of the rows being transformed. Both
/// divide by the training divisor.
pub fn apply_normalizer(features: &Array2<f64>, stats: &NormStats) -> Result<Array2<f64>> {
    if features.ncols() != stats.means.len() {
        return Err(Error::DimensionMismatch { expected: stats.means.len(), got: features.ncols() });
    }
    let mut out = features.clone();
    for (j, mut col) in out.columns_mut().into_iter().enumerate() {
        let std = stats.stds[j];
        match stats.mode {
            NormMode::Zscore => {
                let mean = stats.means[j];
                col.mapv_inplace(|v| (v - mean) / std);
            }
            NormMode::MovingAverage => {
                let ma = trailing_mean(features.column(j), stats.window);
                for (v, m) in col.iter_mut().zip(ma) {
                    *v = (*v - m) / std;
                }
            }
        }
    }
    Ok(out)
}

/// Sorts rows by time; the first `ceil(fraction * n)` rows (capped at
/// `n - 1`) train, the rest test.
pub fn chronological_split(ds: &Dataset, train_fraction: f64) -> Result<(Dataset, Dataset)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::Config(format!("train fraction {train_fraction} must lie in (0, 1)")));
    }
    let n = ds.n_samples();
    if n < 2 {
        return Err(Error::Degenerate(format!("cannot split {n} rows into train and test")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| ds.sample_times[a].total_cmp(&ds.sample_times[b]));
    let n_train = ((train_fraction * n as f64 - 1e-9).ceil() as usize).clamp(1, n - 1);
    Ok((ds.select_rows(&order[..n_train]), ds.select_rows(&order[n_train..])))
}

fn class_rows(ds: &Dataset) -> Result<(Vec<usize>, Vec<usize>)> {
    let (neg, pos): (Vec<usize>, Vec<usize>) = (0..ds.n_samples()).partition(|&i| ds.labels[i] == 0);
    if neg.is_empty() || pos.is_empty() {
        return Err(Error::Degenerate("resampling needs both classes".into()));
    }
    Ok((neg, pos))
}

/// Appends minority rows drawn uniformly with replacement until both classes
/// have the same count.
pub fn oversample(ds: &Dataset, seed: u64) -> Result<Dataset> {
    let (neg, pos) = class_rows(ds)?;
    let (minority, majority) = if pos.len() <= neg.len() { (pos, neg) } else { (neg, pos) };
    let deficit = majority.len() - minority.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows: Vec<usize> = (0..ds.n_samples()).collect();
    rows.extend((0..deficit).map(|_| minority[rng.random_range(0..minority.len())]));
    Ok(ds.select_rows(&rows))
}

/// Keeps a uniform random subset of majority rows of the minority's size.
/// Row order of the survivors is preserved.
pub fn undersample(ds: &Dataset, seed: u64) -> Result<Dataset> {
    let (neg, pos) = class_rows(ds)?;
    let (minority, majority) = if pos.len() <= neg.len() { (pos, neg) } else { (neg, pos) };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows: Vec<usize> = sample_indices(&mut rng, majority.len(), minority.len())
        .into_iter()
        .map(|k| majority[k])
        .chain(minority)
        .collect();
    rows.sort_unstable();
    Ok(ds.select_rows(&rows))
}
