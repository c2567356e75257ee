//! Synthetic catalogs from the Gutenberg-Richter and Omori-Utsu laws.
//!
//! Background events are a homogeneous Poisson process with G-R magnitudes,
//! uniform over a lat/lon box or partly drawn from Gaussian seismic zones.
//! Events at or above the trigger magnitude spawn aftershock sequences with
//! rate `c1 / (c2 + t)^p`, simulated by thinning against the rate at `t = 0`.
//! Optionally, background events above a second threshold get a swarm of
//! smaller events planted some days before them, centred on the event or on a
//! ring around it, which gives classifiers a learnable precursor signal.

use std::f64::consts::{E, PI};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::catalog::{Catalog, CatalogEvent, EARTH_RADIUS_KM};
use crate::error::{Error, Result};

const KM_PER_DEGREE: f64 = EARTH_RADIUS_KM * PI / 180.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GrParams {
    /// log10 of the number of events with magnitude >= 0.
    pub a: f64,
    pub b: f64,
    pub m_min: f64,
}

impl Default for GrParams {
    fn default() -> Self {
        Self { a: 5.0, b: 1.0, m_min: 3.0 }
    }
}

impl GrParams {
    /// `10^(a - b*m)`.
    pub fn expected_count(&self, m: f64) -> f64 {
        10f64.powf(self.a - self.b * m)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OuParams {
    pub c1: f64,
    /// Days.
    pub c2: f64,
    pub p: f64,
}

impl Default for OuParams {
    fn default() -> Self {
        Self { c1: 5.0, c2: 0.05, p: 1.1 }
    }
}

impl OuParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.c1 >= 0.0 && self.c2 > 0.0 && self.p > 0.0) {
            return Err(Error::Config(format!("invalid Omori parameters {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub lat_min: f64,
    pub lat_max: f64,
    pub lon_min: f64,
    pub lon_max: f64,
}

impl Default for Region {
    fn default() -> Self {
        Self { lat_min: -1.0, lat_max: 1.0, lon_min: -1.0, lon_max: 1.0 }
    }
}

/// A Gaussian patch of elevated background seismicity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeismicZone {
    pub lat: f64,
    pub lon: f64,
    pub sigma_km: f64,
    /// Share of background events drawn from this zone; the shares of all
    /// zones sum to at most 1 and the rest are uniform over the region.
    pub fraction: f64,
}

/// Swarms planted before large background events.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PrecursorSpec {
    /// Background events at or above this magnitude get a swarm.
    pub trigger_mag: f64,
    /// Poisson mean of the swarm size.
    pub mean_count: f64,
    /// Swarm events fall uniformly in `[t - lead_max_days, t - lead_min_days]`.
    pub lead_min_days: f64,
    pub lead_max_days: f64,
    pub sigma_km: f64,
    /// Radius of the ring the swarm is centred on; 0 centres it on the
    /// triggering event.
    pub ring_km: f64,
    /// Swarm magnitudes follow G-R with the catalog's b and this floor.
    pub m_min: f64,
}

impl Default for PrecursorSpec {
    fn default() -> Self {
        Self {
            trigger_mag: 5.0,
            mean_count: 20.0,
            lead_min_days: 10.0,
            lead_max_days: 180.0,
            sigma_km: 20.0,
            ring_km: 0.0,
            m_min: 3.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub duration_days: f64,
    pub region: Region,
    /// Background events per day.
    pub background_rate: f64,
    /// Empty means a spatially uniform background.
    pub zones: Vec<SeismicZone>,
    pub gr: GrParams,
    pub ou: OuParams,
    pub aftershock_trigger_mag: f64,
    /// Aftershock sequences are cut off this many days after the parent.
    /// `None` runs them to the end of the catalog.
    pub aftershock_horizon_days: Option<f64>,
    pub cluster_sigma_km: f64,
    pub seed: u64,
    /// 1 means only background events trigger; larger values let
    /// aftershocks trigger their own sequences.
    pub generations: u32,
    pub precursors: Option<PrecursorSpec>,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            duration_days: 3650.0,
            region: Region::default(),
            background_rate: 5.0,
            zones: Vec::new(),
            gr: GrParams::default(),
            ou: OuParams::default(),
            aftershock_trigger_mag: 5.0,
            aftershock_horizon_days: Some(365.0),
            cluster_sigma_km: 10.0,
            seed: 0,
            generations: 1,
            precursors: None,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let r = &self.region;
        let region_ok = r.lat_min < r.lat_max
            && r.lon_min < r.lon_max
            && r.lat_min >= -90.0
            && r.lat_max <= 90.0
            && r.lon_min >= -180.0
            && r.lon_max <= 180.0;
        if !region_ok {
            return Err(Error::Config(format!("invalid region {r:?}")));
        }
        if !(self.duration_days > 0.0 && self.duration_days.is_finite()) {
            return Err(Error::Config("duration_days must be positive".into()));
        }
        if !(self.background_rate >= 0.0 && self.background_rate.is_finite()) {
            return Err(Error::Config("background_rate must be non-negative".into()));
        }
        if !(self.gr.b > 0.0) {
            return Err(Error::Config("b-value must be positive".into()));
        }
        self.ou.validate()?;
        let share: f64 = self.zones.iter().map(|z| z.fraction).sum();
        let zones_ok = self.zones.iter().all(|z| z.fraction >= 0.0 && z.sigma_km > 0.0 && z.lat.abs() <= 90.0)
            && share <= 1.0 + 1e-12;
        if !zones_ok {
            return Err(Error::Config(
                "zone fractions must be non-negative, sum to at most 1, with positive sigma".into(),
            ));
        }
        if !(self.cluster_sigma_km >= 0.0) {
            return Err(Error::Config("cluster_sigma_km must be non-negative".into()));
        }
        if self.aftershock_horizon_days.is_some_and(|h| !(h > 0.0)) {
            return Err(Error::Config("aftershock_horizon_days must be positive".into()));
        }
        if self.generations == 0 {
            return Err(Error::Config("generations must be at least 1".into()));
        }
        if let Some(p) = &self.precursors {
            if !(p.mean_count >= 0.0
                && p.sigma_km >= 0.0
                && p.ring_km >= 0.0
                && 0.0 <= p.lead_min_days
                && p.lead_min_days <= p.lead_max_days)
            {
                return Err(Error::Config(format!("invalid precursor spec {p:?}")));
            }
        }
        Ok(())
    }
}

/// Inverse-transform draw `m_min - log10(u) / b` for `u` in (0, 1).
pub fn sample_gr_magnitude(gr: &GrParams, u: f64) -> f64 {
    gr.m_min - u.log10() / gr.b
}

/// Aki's maximum-likelihood b-value, `log10(e) / (mean - m_min)`.
pub fn fit_b_value(mags: &[f64], m_min: f64) -> Result<f64> {
    if mags.len() < 30 {
        return Err(Error::Data(format!("b-value fit needs at least 30 magnitudes, got {}", mags.len())));
    }
    if let Some(m) = mags.iter().find(|&&m| !(m >= m_min)) {
        return Err(Error::Data(format!("magnitude {m} below m_min {m_min}")));
    }
    let mean = mags.iter().sum::<f64>() / mags.len() as f64;
    if mean <= m_min {
        return Err(Error::Degenerate("mean magnitude equals m_min".into()));
    }
    Ok(E.log10() / (mean - m_min))
}

/// Asymptotic standard error `b / sqrt(n)` of the Aki estimate.
pub fn b_value_std_error(b: f64, n: usize) -> f64 {
    b / (n as f64).sqrt()
}

pub fn omori_rate(t_since_mainshock: f64, ou: &OuParams) -> f64 {
    ou.c1 / (ou.c2 + t_since_mainshock).powf(ou.p)
}

/// Times (days after the mainshock, ascending, within `(0, horizon]`) of one
/// aftershock sequence, by thinning a Poisson process of rate
/// `omori_rate(0)`.
pub fn simulate_omori_times<R: Rng>(ou: &OuParams, horizon: f64, rng: &mut R) -> Vec<f64> {
    let envelope = omori_rate(0.0, ou);
    let mut out = Vec::new();
    if !(envelope > 0.0) || !(horizon > 0.0) {
        return out;
    }
    let mut t = 0.0;
    loop {
        let u: f64 = 1.0 - rng.random::<f64>();
        t -= u.ln() / envelope;
        if t > horizon {
            return out;
        }
        if rng.random::<f64>() * envelope < omori_rate(t, ou) {
            out.push(t);
        }
    }
}

fn gr_draw<R: Rng>(gr: &GrParams, rng: &mut R) -> f64 {
    // 1 - [0, 1) lies in (0, 1]
    sample_gr_magnitude(gr, 1.0 - rng.random::<f64>())
}

/// Point offset by Gaussian north/east displacements of standard deviation
/// `sigma_km`.
fn scatter<R: Rng>(lat: f64, lon: f64, sigma_km: f64, rng: &mut R) -> (f64, f64) {
    if sigma_km == 0.0 {
        return (lat, lon);
    }
    let normal = Normal::new(0.0, sigma_km).expect("sigma is positive");
    let dn = normal.sample(rng);
    let de = normal.sample(rng);
    displace(lat, lon, dn, de)
}

/// Point `dn` km north and `de` km east of `(lat, lon)`, flat-earth.
fn displace(lat: f64, lon: f64, dn: f64, de: f64) -> (f64, f64) {
    let new_lat = (lat + dn / KM_PER_DEGREE).clamp(-90.0, 90.0);
    let coslat = lat.to_radians().cos().max(1e-6);
    let mut new_lon = lon + de / (KM_PER_DEGREE * coslat);
    if !(-180.0..=180.0).contains(&new_lon) {
        new_lon = (new_lon + 180.0).rem_euclid(360.0) - 180.0;
    }
    (new_lat, new_lon)
}

/// Gaussian draw around the zone centre, redrawn until it lands in the region.
fn zone_point<R: Rng>(zone: &SeismicZone, region: &Region, rng: &mut R) -> (f64, f64) {
    const MAX_TRIES: usize = 1000;
    let mut p = (zone.lat, zone.lon);
    for _ in 0..MAX_TRIES {
        p = scatter(zone.lat, zone.lon, zone.sigma_km, rng);
        if (region.lat_min..=region.lat_max).contains(&p.0) && (region.lon_min..=region.lon_max).contains(&p.1) {
            return p;
        }
    }
    (p.0.clamp(region.lat_min, region.lat_max), p.1.clamp(region.lon_min, region.lon_max))
}

/// Deterministic in `spec.seed`. Background events are drawn first, then
/// precursor swarms, then aftershocks generation by generation.
pub fn generate_catalog(spec: &SynthSpec) -> Result<Catalog> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let r = &spec.region;
    let duration = spec.duration_days;

    let lambda = spec.background_rate * duration;
    let n_background = if lambda > 0.0 {
        Poisson::new(lambda).map_err(|e| Error::Config(e.to_string()))?.sample(&mut rng) as usize
    } else {
        0
    };
    let mut events = Vec::with_capacity(n_background);
    let uniform = |rng: &mut ChaCha8Rng| {
        let lat = r.lat_min + rng.random::<f64>() * (r.lat_max - r.lat_min);
        let lon = r.lon_min + rng.random::<f64>() * (r.lon_max - r.lon_min);
        (lat, lon)
    };
    for _ in 0..n_background {
        let time = rng.random::<f64>() * duration;
        let (lat, lon) = if spec.zones.is_empty() {
            uniform(&mut rng)
        } else {
            let mut u = rng.random::<f64>();
            match spec.zones.iter().find(|z| {
                u -= z.fraction;
                u < 0.0
            }) {
                Some(z) => zone_point(z, r, &mut rng),
                None => uniform(&mut rng),
            }
        };
        let mag = gr_draw(&spec.gr, &mut rng);
        events.push(CatalogEvent::new(time, lat, lon, None, mag));
    }
    events.sort_by(|a, b| a.time.total_cmp(&b.time));

    if let Some(pre) = &spec.precursors {
        let swarm_gr = GrParams { m_min: pre.m_min, ..spec.gr };
        let triggers: Vec<CatalogEvent> = events.iter().filter(|e| e.mag >= pre.trigger_mag).cloned().collect();
        for parent in &triggers {
            let count = if pre.mean_count > 0.0 {
                Poisson::new(pre.mean_count).map_err(|e| Error::Config(e.to_string()))?.sample(&mut rng) as usize
            } else {
                0
            };
            for _ in 0..count {
                let lead = pre.lead_min_days + rng.random::<f64>() * (pre.lead_max_days - pre.lead_min_days);
                let (clat, clon) = if pre.ring_km > 0.0 {
                    let theta = rng.random::<f64>() * 2.0 * PI;
                    displace(parent.lat, parent.lon, pre.ring_km * theta.cos(), pre.ring_km * theta.sin())
                } else {
                    (parent.lat, parent.lon)
                };
                let (lat, lon) = scatter(clat, clon, pre.sigma_km, &mut rng);
                let mag = gr_draw(&swarm_gr, &mut rng);
                let time = parent.time - lead;
                if time >= 0.0 {
                    events.push(CatalogEvent::new(time, lat, lon, None, mag));
                }
            }
        }
    }

    let mut parents: Vec<CatalogEvent> =
        events.iter().filter(|e| e.mag >= spec.aftershock_trigger_mag).cloned().collect();
    parents.sort_by(|a, b| a.time.total_cmp(&b.time));
    for _ in 0..spec.generations {
        let mut spawned = Vec::new();
        for parent in &parents {
            let horizon =
                spec.aftershock_horizon_days.map_or(duration - parent.time, |h| h.min(duration - parent.time));
            for dt in simulate_omori_times(&spec.ou, horizon, &mut rng) {
                let (lat, lon) = scatter(parent.lat, parent.lon, spec.cluster_sigma_km, &mut rng);
                let mag = gr_draw(&spec.gr, &mut rng);
                spawned.push(CatalogEvent::new(parent.time + dt, lat, lon, None, mag));
            }
        }
        parents = spawned.iter().filter(|e| e.mag >= spec.aftershock_trigger_mag).cloned().collect();
        events.extend(spawned);
        if parents.is_empty() {
            break;
        }
    }
    Catalog::new("synthetic", events)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gr_inverse_transform() {
        let gr = GrParams { a: 0.0, b: 1.0, m_min: 2.0 };
        assert!((sample_gr_magnitude(&gr, 0.1) - 3.0).abs() < 1e-12);
        assert_eq!(sample_gr_magnitude(&gr, 1.0), 2.0);
    }

    #[test]
    fn aki_forced_value() {
        let mags = vec![3.0 + E.log10(); 40];
        assert!((fit_b_value(&mags, 3.0).unwrap() - 1.0).abs() < 1e-12);
        assert!(fit_b_value(&mags[..29], 3.0).is_err());
        assert!(matches!(fit_b_value(&[3.0; 40], 3.0), Err(Error::Degenerate(_))));
    }

    #[test]
    fn omori_values() {
        let ou = OuParams { c1: 10.0, c2: 1.0, p: 1.0 };
        assert_eq!(omori_rate(9.0, &ou), 1.0);
        assert_eq!(omori_rate(0.0, &ou), 10.0);
        let mut prev = f64::INFINITY;
        for k in 0..100 {
            let r = omori_rate(k as f64 * 0.37, &ou);
            assert!(r < prev);
            prev = r;
        }
    }

    #[test]
    fn zero_rate_gives_empty_catalog() {
        let spec = SynthSpec { background_rate: 0.0, ..SynthSpec::default() };
        assert!(generate_catalog(&spec).unwrap().is_empty());
    }

    #[test]
    fn aftershocks_follow_parent_and_stay_in_duration() {
        let spec = SynthSpec {
            duration_days: 400.0,
            background_rate: 2.0,
            aftershock_trigger_mag: 4.5,
            seed: 3,
            ..SynthSpec::default()
        };
        let cat = generate_catalog(&spec).unwrap();
        assert!(cat.events().iter().all(|e| (0.0..=spec.duration_days).contains(&e.time)));
        assert!(cat.events().windows(2).all(|w| w[0].time <= w[1].time));
    }

    #[test]
    fn ring_swarms_sit_at_ring_distance() {
        let spec = SynthSpec {
            duration_days: 50.0,
            background_rate: 0.2,
            gr: GrParams { a: 5.0, b: 5.0, m_min: 3.0 },
            aftershock_trigger_mag: 10.0,
            seed: 5,
            precursors: Some(PrecursorSpec {
                trigger_mag: 3.0,
                mean_count: 10.0,
                lead_min_days: 0.0,
                lead_max_days: 1.0,
                sigma_km: 0.0,
                ring_km: 40.0,
                m_min: 1.0,
            }),
            ..SynthSpec::default()
        };
        let cat = generate_catalog(&spec).unwrap();
        let (parents, swarm): (Vec<&CatalogEvent>, Vec<&CatalogEvent>) =
            cat.events().iter().partition(|e| e.mag >= 3.0);
        assert!(!swarm.is_empty());
        for e in swarm {
            let near = parents.iter().any(|p| {
                (p.time - e.time) <= 1.0
                    && (crate::catalog::surface_distance_km(p.location(), e.location()) - 40.0).abs() < 0.5
            });
            assert!(near, "{e:?}");
        }
    }

    #[test]
    fn same_seed_same_catalog() {
        let spec = SynthSpec { duration_days: 200.0, seed: 9, ..SynthSpec::default() };
        assert_eq!(generate_catalog(&spec).unwrap().events(), generate_catalog(&spec).unwrap().events());
    }
}
