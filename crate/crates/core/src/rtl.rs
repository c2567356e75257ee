//! Region-Time-Length features.
//!
//! For a point `(x, t)` and the past events `e_i` inside the cylinder of
//! radius `cutoff_factor * r0` and depth `cutoff_factor * t0`:
//!
//! ```text
//! R = sum exp(-r_i / r0)
//! T = sum exp(-(t - t_i) / t0)
//! L = sum l_i / max(r_i, min_r)      with log10(l_i) = 0.5 * M_i - 1.8
//! RTL = R * T * L
//! ```

use serde::{Deserialize, Serialize};

use crate::catalog::{GeoPoint, Neighbor, SpatialIndex};
use crate::error::{Error, Result};

/// Slack added to the shared look-back window of a batched query. Each lag
/// re-applies its exact predicate, so the slack only has to cover rounding.
const WINDOW_SLACK_DAYS: f64 = 1e-6;

/// Hyperparameters of one RTL feature family.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RtlConfig {
    pub r0_km: f64,
    pub t0_days: f64,
    /// Events count if `r_i <= cutoff_factor * r0` and
    /// `t - t_i <= cutoff_factor * t0`.
    pub cutoff_factor: f64,
    pub min_mag: f64,
    /// Floor applied to `r_i` in the L term.
    pub min_r_km: f64,
}

impl Default for RtlConfig {
    fn default() -> Self {
        Self { r0_km: 50.0, t0_days: 180.0, cutoff_factor: 1.0, min_mag: 5.0, min_r_km: 0.1 }
    }
}

impl RtlConfig {
    pub fn new(r0_km: f64, t0_days: f64) -> Self {
        Self { r0_km, t0_days, ..Self::default() }
    }

    pub fn with_min_mag(mut self, min_mag: f64) -> Self {
        self.min_mag = min_mag;
        self
    }

    pub fn with_cutoff_factor(mut self, cutoff_factor: f64) -> Self {
        self.cutoff_factor = cutoff_factor;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.r0_km.is_finite()
            && self.r0_km > 0.0
            && self.t0_days.is_finite()
            && self.t0_days > 0.0
            && self.cutoff_factor.is_finite()
            && self.cutoff_factor >= 1.0
            && self.min_r_km.is_finite()
            && self.min_r_km > 0.0
            && !self.min_mag.is_nan();
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid RTL configuration {self:?}")))
        }
    }

    pub fn search_radius_km(&self) -> f64 {
        self.cutoff_factor * self.r0_km
    }

    pub fn search_window_days(&self) -> f64 {
        self.cutoff_factor * self.t0_days
    }

    /// Short tag such as `r50_t180`.
    pub fn tag(&self) -> String {
        format!("r{}_t{}", fmt_num(self.r0_km), fmt_num(self.t0_days))
    }

    /// Column name of lag `k`, e.g. `rtl_r50_t180_lag03`.
    pub fn feature_name(&self, lag: usize) -> String {
        format!("rtl_{}_lag{lag:02}", self.tag())
    }
}

fn fmt_num(v: f64) -> String {
    if v.fract() == 0.0 && v.abs() < 1e15 {
        format!("{}", v as i64)
    } else {
        format!("{v}")
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct RtlValue {
    pub r_comp: f64,
    pub t_comp: f64,
    pub l_comp: f64,
    pub product: f64,
    pub n_events: usize,
}

/// Empirical rupture length in km: `10^(0.5 M - 1.8)`.
pub fn rupture_length_km(mag: f64) -> f64 {
    10f64.powf(0.5 * mag - 1.8)
}

/// Sums the three components over `hits` that satisfy the configuration's
/// cylinder at time `t`. Iteration follows the order of `hits`.
fn accumulate<'a>(hits: impl Iterator<Item = &'a Neighbor<'a>>, t: f64, cfg: &RtlConfig) -> RtlValue {
    let radius = cfg.search_radius_km();
    let window = cfg.search_window_days();
    let mut v = RtlValue::default();
    for h in hits {
        let age = t - h.event.time;
        if !(age > 0.0 && age <= window && h.distance_km <= radius && h.event.mag >= cfg.min_mag) {
            continue;
        }
        v.r_comp += (-h.distance_km / cfg.r0_km).exp();
        v.t_comp += (-age / cfg.t0_days).exp();
        v.l_comp += rupture_length_km(h.event.mag) / h.distance_km.max(cfg.min_r_km);
        v.n_events += 1;
    }
    v.product = v.r_comp * v.t_comp * v.l_comp;
    v
}

/// RTL components at one space-time point.
pub fn rtl_at(index: &SpatialIndex, point: GeoPoint, t: f64, cfg: &RtlConfig) -> RtlValue {
    let hits = index.query_cylinder(point, t, cfg.search_radius_km(), cfg.search_window_days(), cfg.min_mag);
    accumulate(hits.iter(), t, cfg)
}

/// `n_lags` RTL products at `t, t - step, ..., t - (n_lags - 1) * step`.
pub fn rtl_series(
    index: &SpatialIndex,
    point: GeoPoint,
    t: f64,
    cfg: &RtlConfig,
    n_lags: usize,
    lag_step_days: f64,
) -> Vec<f64> {
    rtl_features(index, point, t, std::slice::from_ref(cfg), n_lags, lag_step_days)
}

/// Lagged RTL products for several configurations from one index query.
///
/// Output layout is config-major: `out[c * n_lags + k]` is config `c` at lag
/// `k`. Every entry is bit-identical to
/// `rtl_at(index, point, t - k * lag_step_days, &configs[c]).product`.
pub fn rtl_features(
    index: &SpatialIndex,
    point: GeoPoint,
    t: f64,
    configs: &[RtlConfig],
    n_lags: usize,
    lag_step_days: f64,
) -> Vec<f64> {
    let mut out = Vec::with_capacity(configs.len() * n_lags);
    if configs.is_empty() || n_lags == 0 {
        return out;
    }
    let radius = configs.iter().map(RtlConfig::search_radius_km).fold(0.0, f64::max);
    let window = configs.iter().map(RtlConfig::search_window_days).fold(0.0, f64::max)
        + (n_lags - 1) as f64 * lag_step_days
        + WINDOW_SLACK_DAYS;
    let min_mag = configs.iter().map(|c| c.min_mag).fold(f64::INFINITY, f64::min);
    let hits = index.query_cylinder(point, t, radius, window, min_mag);

    for cfg in configs {
        for k in 0..n_lags {
            let t_k = t - k as f64 * lag_step_days;
            out.push(accumulate(hits.iter(), t_k, cfg).product);
        }
    }
    out
}
