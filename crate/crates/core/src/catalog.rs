//! Earthquake catalogs and the grid index used for space-time cylinder queries.
//!
//! Times are fractional days since 1970-01-01 UTC. Distances are great-circle
//! (haversine) kilometres.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::ops::Range;

use chrono::DateTime;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Mean Earth radius (IUGG) in kilometres.
pub const EARTH_RADIUS_KM: f64 = 6371.0088;

pub const CATALOG_HEADER: &str = "time,lat,lon,depth,mag";

const SECONDS_PER_DAY: f64 = 86_400.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoPoint {
    pub lat: f64,
    pub lon: f64,
}

impl GeoPoint {
    pub fn new(lat: f64, lon: f64) -> Self {
        Self { lat, lon }
    }

    pub fn is_valid(&self) -> bool {
        self.lat.is_finite()
            && self.lon.is_finite()
            && (-90.0..=90.0).contains(&self.lat)
            && (-180.0..=180.0).contains(&self.lon)
    }
}

/// One earthquake.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CatalogEvent {
    pub time: f64,
    pub lat: f64,
    pub lon: f64,
    /// Carried for completeness; distances are epicentral only.
    pub depth_km: Option<f64>,
    pub mag: f64,
}

impl CatalogEvent {
    pub fn new(time: f64, lat: f64, lon: f64, depth_km: Option<f64>, mag: f64) -> Self {
        Self { time, lat, lon, depth_km, mag }
    }

    pub fn location(&self) -> GeoPoint {
        GeoPoint::new(self.lat, self.lon)
    }

    fn check(&self) -> std::result::Result<(), String> {
        if !self.time.is_finite() {
            return Err(format!("time is not finite: {}", self.time));
        }
        if !self.mag.is_finite() {
            return Err(format!("magnitude is not finite: {}", self.mag));
        }
        if !self.lat.is_finite() || !(-90.0..=90.0).contains(&self.lat) {
            return Err(format!("latitude {} outside [-90, 90]", self.lat));
        }
        if !self.lon.is_finite() || !(-180.0..=180.0).contains(&self.lon) {
            return Err(format!("longitude {} outside [-180, 180]", self.lon));
        }
        if let Some(d) = self.depth_km {
            if d.is_nan() {
                return Err("depth is NaN".into());
            }
        }
        Ok(())
    }
}

/// A time-ordered list of events.
#[derive(Debug, Clone, PartialEq)]
pub struct Catalog {
    events: Vec<CatalogEvent>,
    source_name: String,
}

impl Catalog {
    /// Validates every event and sorts by time (stable, so equal times keep
    /// their input order).
    pub fn new(source_name: impl Into<String>, mut events: Vec<CatalogEvent>) -> Result<Self> {
        for (i, e) in events.iter().enumerate() {
            e.check().map_err(|msg| Error::Validation { line: i as u64 + 1, msg })?;
        }
        events.sort_by(|a, b| a.time.total_cmp(&b.time));
        Ok(Self { events, source_name: source_name.into() })
    }

    pub fn empty(source_name: impl Into<String>) -> Self {
        Self { events: Vec::new(), source_name: source_name.into() }
    }

    pub fn events(&self) -> &[CatalogEvent] {
        &self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn source_name(&self) -> &str {
        &self.source_name
    }

    /// First and last event time.
    pub fn time_span(&self) -> Option<(f64, f64)> {
        Some((self.events.first()?.time, self.events.last()?.time))
    }

    /// Sub-catalog of events with `mag >= min_mag`.
    pub fn filter_min_mag(&self, min_mag: f64) -> Catalog {
        Catalog {
            events: self.events.iter().copied().filter(|e| e.mag >= min_mag).collect(),
            source_name: self.source_name.clone(),
        }
    }

    /// Writes the catalog CSV. Times are written as decimal epoch days using
    /// the shortest representation that round-trips.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "{CATALOG_HEADER}")?;
        for e in &self.events {
            match e.depth_km {
                Some(d) => writeln!(out, "{},{},{},{},{}", e.time, e.lat, e.lon, d, e.mag)?,
                None => writeln!(out, "{},{},{},,{}", e.time, e.lat, e.lon, e.mag)?,
            }
        }
        Ok(())
    }
}

/// Parses a `time` field: ISO-8601 / RFC 3339 (`1995-01-17T05:46:52Z`) or a
/// decimal number of days since the Unix epoch.
pub fn parse_time(field: &str) -> Option<f64> {
    let field = field.trim();
    if let Ok(days) = field.parse::<f64>() {
        return days.is_finite().then_some(days);
    }
    let dt = DateTime::parse_from_rfc3339(field).ok()?;
    let secs = dt.timestamp() as f64 + f64::from(dt.timestamp_subsec_nanos()) * 1e-9;
    Some(secs / SECONDS_PER_DAY)
}

/// Reads a catalog CSV with header `time,lat,lon,depth,mag`.
///
/// Rows may come in any order; the result is sorted by time. Errors carry
/// the 1-based line number of the offending row.
pub fn parse_catalog<R: Read>(reader: R, source_name: &str) -> Result<Catalog> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).flexible(true).from_reader(reader);

    let header: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();
    if header.join(",") != CATALOG_HEADER {
        return Err(Error::Parse {
            line: 1,
            msg: format!("expected header `{CATALOG_HEADER}`, found `{}`", header.join(",")),
        });
    }

    let mut events = Vec::new();
    let mut record = csv::StringRecord::new();
    loop {
        let more = rdr.read_record(&mut record).map_err(|e| {
            let line = e.position().map(|p| p.line()).unwrap_or(0);
            Error::Parse { line, msg: e.to_string() }
        })?;
        if !more {
            break;
        }
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        if record.len() == 1 && record[0].trim().is_empty() {
            continue;
        }
        if record.len() != 5 {
            return Err(Error::Parse { line, msg: format!("expected 5 fields, found {}", record.len()) });
        }
        let num = |idx: usize, name: &str| -> Result<f64> {
            record[idx]
                .trim()
                .parse::<f64>()
                .map_err(|_| Error::Parse { line, msg: format!("bad {name} `{}`", &record[idx]) })
        };
        let time =
            parse_time(&record[0]).ok_or_else(|| Error::Parse { line, msg: format!("bad time `{}`", &record[0]) })?;
        let lat = num(1, "lat")?;
        let lon = num(2, "lon")?;
        let depth_km = if record[3].trim().is_empty() { None } else { Some(num(3, "depth")?) };
        let mag = num(4, "mag")?;

        let event = CatalogEvent::new(time, lat, lon, depth_km, mag);
        event.check().map_err(|msg| Error::Validation { line, msg })?;
        events.push(event);
    }
    Catalog::new(source_name, events)
}

/// Great-circle distance by the haversine formula.
pub fn surface_distance_km(a: GeoPoint, b: GeoPoint) -> f64 {
    let (phi1, phi2) = (a.lat.to_radians(), b.lat.to_radians());
    let dphi = (b.lat - a.lat).to_radians();
    let dlambda = (b.lon - a.lon).to_radians();
    let s_phi = (dphi * 0.5).sin();
    let s_lambda = (dlambda * 0.5).sin();
    let h = s_phi * s_phi + phi1.cos() * phi2.cos() * s_lambda * s_lambda;
    2.0 * EARTH_RADIUS_KM * h.sqrt().min(1.0).asin()
}

/// An event returned by a cylinder query together with its epicentral distance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor<'a> {
    /// Position of the event in [`SpatialIndex::events`].
    pub index: usize,
    pub event: &'a CatalogEvent,
    pub distance_km: f64,
}

/// Immutable uniform grid over a local equirectangular projection centred at
/// the catalog centroid. Each cell keeps its events sorted by time so the time
/// window is located by binary search.
#[derive(Debug, Clone)]
pub struct SpatialIndex {
    cell_size_km: f64,
    origin: GeoPoint,
    cos_lat0: f64,
    events: Vec<CatalogEvent>,
    cells: BTreeMap<(i64, i64), Vec<u32>>,
}

impl SpatialIndex {
    pub fn build(catalog: &Catalog, cell_size_km: f64) -> Result<Self> {
        if !(cell_size_km.is_finite() && cell_size_km > 0.0) {
            return Err(Error::Config(format!("cell size must be positive, got {cell_size_km}")));
        }
        let events = catalog.events().to_vec();
        let origin = if events.is_empty() {
            GeoPoint::new(0.0, 0.0)
        } else {
            let n = events.len() as f64;
            GeoPoint::new(events.iter().map(|e| e.lat).sum::<f64>() / n, events.iter().map(|e| e.lon).sum::<f64>() / n)
        };
        let cos_lat0 = origin.lat.to_radians().cos().max(1e-3);
        let mut index = Self { cell_size_km, origin, cos_lat0, events, cells: BTreeMap::new() };

        let mut cells: BTreeMap<(i64, i64), Vec<u32>> = BTreeMap::new();
        // events are time-sorted, so pushing in order keeps every cell sorted
        for (i, e) in index.events.iter().enumerate() {
            let key = (index.cell_x(e.lon), index.cell_y(e.lat));
            cells.entry(key).or_default().push(i as u32);
        }
        index.cells = cells;
        Ok(index)
    }

    pub fn cell_size_km(&self) -> f64 {
        self.cell_size_km
    }

    pub fn projection_origin(&self) -> GeoPoint {
        self.origin
    }

    pub fn events(&self) -> &[CatalogEvent] {
        &self.events
    }

    pub fn n_cells(&self) -> usize {
        self.cells.len()
    }

    /// Occupied cells with their event positions, in key order.
    pub fn cells(&self) -> impl Iterator<Item = (&(i64, i64), &[u32])> {
        self.cells.iter().map(|(k, v)| (k, v.as_slice()))
    }

    fn cell_x(&self, lon: f64) -> i64 {
        let x = EARTH_RADIUS_KM * (lon - self.origin.lon).to_radians() * self.cos_lat0;
        (x / self.cell_size_km).floor() as i64
    }

    fn cell_y(&self, lat: f64) -> i64 {
        let y = EARTH_RADIUS_KM * (lat - self.origin.lat).to_radians();
        (y / self.cell_size_km).floor() as i64
    }

    /// Past events around `center`: `distance <= radius_km`,
    /// `0 < t - t_i <= t_window` and `mag >= min_mag`, sorted by time.
    pub fn query_cylinder(
        &self,
        center: GeoPoint,
        t: f64,
        radius_km: f64,
        t_window: f64,
        min_mag: f64,
    ) -> Vec<Neighbor<'_>> {
        let events = &self.events;
        self.collect(center, radius_km, min_mag, |ids| {
            let lo = ids.partition_point(|&i| t - events[i as usize].time > t_window);
            let hi = ids.partition_point(|&i| t - events[i as usize].time > 0.0);
            lo..hi.max(lo)
        })
    }

    /// Future events around `center` with `after < t_e - t < before` (both
    /// bounds strict) and `mag >= min_mag`, sorted by time.
    pub fn query_future(
        &self,
        center: GeoPoint,
        t: f64,
        radius_km: f64,
        after: f64,
        before: f64,
        min_mag: f64,
    ) -> Vec<Neighbor<'_>> {
        let events = &self.events;
        self.collect(center, radius_km, min_mag, |ids| {
            let lo = ids.partition_point(|&i| events[i as usize].time - t <= after);
            let hi = ids.partition_point(|&i| events[i as usize].time - t < before);
            lo..hi.max(lo)
        })
    }

    /// Gathers exact matches from every cell that can hold a point within
    /// `radius_km` of `center`. `time_range` maps a cell's time-sorted ids to
    /// the sub-range satisfying the time predicate exactly.
    fn collect<F>(&self, center: GeoPoint, radius_km: f64, min_mag: f64, time_range: F) -> Vec<Neighbor<'_>>
    where
        F: Fn(&[u32]) -> Range<usize>,
    {
        let mut out = Vec::new();
        if self.events.is_empty() || !(radius_km >= 0.0) {
            return out;
        }

        let mut visit = |ids: &[u32]| {
            for &i in &ids[time_range(ids)] {
                let e = &self.events[i as usize];
                if e.mag < min_mag {
                    continue;
                }
                let d = surface_distance_km(center, e.location());
                if d <= radius_km {
                    out.push(Neighbor { index: i as usize, event: e, distance_km: d });
                }
            }
        };

        let (lat_lo, lat_hi, lon_ranges) = bounding_ranges(center, radius_km);
        let (y_lo, y_hi) = (self.cell_y(lat_lo), self.cell_y(lat_hi));
        let x_ranges: Vec<(i64, i64)> = lon_ranges.iter().map(|&(a, b)| (self.cell_x(a), self.cell_x(b))).collect();
        let n_candidates: u128 =
            x_ranges.iter().map(|&(a, b)| (b - a + 1).max(0) as u128 * (y_hi - y_lo + 1).max(0) as u128).sum();

        if n_candidates > self.cells.len() as u128 {
            for (&(cx, cy), ids) in &self.cells {
                if cy >= y_lo && cy <= y_hi && x_ranges.iter().any(|&(a, b)| cx >= a && cx <= b) {
                    visit(ids);
                }
            }
        } else {
            for &(xa, xb) in &x_ranges {
                for cx in xa..=xb {
                    for cy in y_lo..=y_hi {
                        if let Some(ids) = self.cells.get(&(cx, cy)) {
                            visit(ids);
                        }
                    }
                }
            }
        }
        // positions in the time-sorted event list, so this is time order
        out.sort_unstable_by_key(|n| n.index);
        out.dedup_by_key(|n| n.index);
        out
    }
}

/// Latitude bounds and longitude intervals (within [-180, 180]) that contain
/// every point within `radius_km` of `center`.
fn bounding_ranges(center: GeoPoint, radius_km: f64) -> (f64, f64, Vec<(f64, f64)>) {
    const PAD_DEG: f64 = 1e-7;
    let ang = radius_km / EARTH_RADIUS_KM;
    let dlat = ang.to_degrees() + PAD_DEG;
    let lat_lo = (center.lat - dlat).max(-90.0);
    let lat_hi = (center.lat + dlat).min(90.0);

    let all_lons = vec![(-180.0, 180.0)];
    if lat_lo <= -90.0 || lat_hi >= 90.0 || ang >= std::f64::consts::FRAC_PI_2 {
        return (lat_lo, lat_hi, all_lons);
    }
    let s = ang.sin() / center.lat.to_radians().cos();
    if !(s < 1.0) {
        return (lat_lo, lat_hi, all_lons);
    }
    let dlon = s.asin().to_degrees() + PAD_DEG;
    if dlon >= 180.0 {
        return (lat_lo, lat_hi, all_lons);
    }
    let (lo, hi) = (center.lon - dlon, center.lon + dlon);
    let mut ranges = vec![(lo.max(-180.0), hi.min(180.0))];
    if lo < -180.0 {
        ranges.push((lo + 360.0, 180.0));
    }
    if hi > 180.0 {
        ranges.push((-180.0, hi - 360.0));
    }
    (lat_lo, lat_hi, ranges)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn csv(body: &str) -> String {
        format!("{CATALOG_HEADER}\n{body}")
    }

    #[test]
    fn header_only_is_empty() {
        let cat = parse_catalog(csv("").as_bytes(), "t").unwrap();
        assert!(cat.is_empty());
    }

    #[test]
    fn rows_are_sorted_by_time() {
        let body = "30.5,35,139,10,4.1\n10,35,139,,3.0\n20.25,35,139,5,5.5\n";
        let cat = parse_catalog(csv(body).as_bytes(), "t").unwrap();
        let times: Vec<f64> = cat.events().iter().map(|e| e.time).collect();
        assert_eq!(times, vec![10.0, 20.25, 30.5]);
        assert_eq!(cat.events()[0].depth_km, None);
    }

    #[test]
    fn latitude_out_of_range_names_line() {
        let body = "1,35,139,,4\n2,91,139,,4\n";
        match parse_catalog(csv(body).as_bytes(), "t") {
            Err(Error::Validation { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected validation error, got {other:?}"),
        }
    }

    #[test]
    fn malformed_row_is_parse_error() {
        let body = "1,35,139,,4\n2,abc,139,,4\n";
        match parse_catalog(csv(body).as_bytes(), "t") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
        assert!(parse_catalog("a,b,c\n".as_bytes(), "t").is_err());
    }

    #[test]
    fn iso_times_and_crlf() {
        let text =
            "time,lat,lon,depth,mag\r\n1970-01-02T12:00:00Z,0,0,,5\r\n1995-01-17T05:46:52Z,34.6,135.0,16,7.3\r\n";
        let cat = parse_catalog(text.as_bytes(), "t").unwrap();
        assert_eq!(cat.events()[0].time, 1.5);
        let kobe = cat.events()[1].time;
        assert!((kobe - (9147.0 + (5.0 * 3600.0 + 46.0 * 60.0 + 52.0) / 86400.0)).abs() < 1e-9);
    }

    #[test]
    fn csv_round_trip() {
        let events = vec![
            CatalogEvent::new(0.1, 35.25, 139.125, Some(10.0), 4.3),
            CatalogEvent::new(2.0 / 3.0, -12.5, -77.0, None, 5.01),
        ];
        let cat = Catalog::new("x", events).unwrap();
        let mut buf = Vec::new();
        cat.write_csv(&mut buf).unwrap();
        let back = parse_catalog(buf.as_slice(), "x").unwrap();
        assert_eq!(back, cat);
    }

    #[test]
    fn distance_identity_and_known_pair() {
        let a = GeoPoint::new(35.0, 139.0);
        assert_eq!(surface_distance_km(a, a), 0.0);
        let tokyo = GeoPoint::new(35.6762, 139.6503);
        let osaka = GeoPoint::new(34.6937, 135.5023);
        let d = surface_distance_km(tokyo, osaka);
        // reference value from an independent haversine evaluation
        assert!((d - 392.4417720145063).abs() < 1e-9, "{d}");
        let one_degree = surface_distance_km(GeoPoint::new(0.0, 0.0), GeoPoint::new(0.0, 1.0));
        assert!((one_degree - 111.1950802335329).abs() < 1e-9);
    }

    #[test]
    fn index_of_empty_and_single() {
        let idx = SpatialIndex::build(&Catalog::empty("e"), 10.0).unwrap();
        assert_eq!(idx.n_cells(), 0);
        assert!(idx.query_cylinder(GeoPoint::new(0.0, 0.0), 10.0, 50.0, 10.0, -10.0).is_empty());

        let cat = Catalog::new("one", vec![CatalogEvent::new(1.0, 10.0, 20.0, None, 3.0)]).unwrap();
        let idx = SpatialIndex::build(&cat, 10.0).unwrap();
        assert_eq!(idx.n_cells(), 1);
        assert_eq!(idx.cells().next().unwrap().1, &[0]);
        assert!(SpatialIndex::build(&cat, 0.0).is_err());
    }

    #[test]
    fn boundary_distance_is_inclusive_and_past_strict() {
        let center = GeoPoint::new(0.0, 0.0);
        let ev = CatalogEvent::new(9.0, 0.0, 0.5, None, 5.0);
        let r = surface_distance_km(center, ev.location());
        let cat = Catalog::new("b", vec![ev]).unwrap();
        let idx = SpatialIndex::build(&cat, r).unwrap();
        assert_eq!(idx.query_cylinder(center, 10.0, r, 5.0, 0.0).len(), 1);
        assert!(idx.query_cylinder(center, 10.0, r * (1.0 - 1e-12), 5.0, 0.0).is_empty());
        // same time as the query point: not in the past
        assert!(idx.query_cylinder(center, 9.0, r, 5.0, 0.0).is_empty());
        // exactly t_window old: included
        assert_eq!(idx.query_cylinder(center, 10.0, r, 1.0, 0.0).len(), 1);
        assert!(idx.query_cylinder(center, 10.0, r, 0.999, 0.0).is_empty());
    }

    #[test]
    fn dateline_and_pole_queries() {
        let events = vec![
            CatalogEvent::new(1.0, 0.0, 179.9, None, 5.0),
            CatalogEvent::new(1.0, 0.0, -179.9, None, 5.0),
            CatalogEvent::new(1.0, 89.9, 0.0, None, 5.0),
            CatalogEvent::new(1.0, 89.9, 180.0, None, 5.0),
        ];
        let cat = Catalog::new("w", events).unwrap();
        let idx = SpatialIndex::build(&cat, 5.0).unwrap();
        let hits = idx.query_cylinder(GeoPoint::new(0.0, 180.0), 2.0, 20.0, 5.0, 0.0);
        assert_eq!(hits.len(), 2);
        let hits = idx.query_cylinder(GeoPoint::new(90.0, 0.0), 2.0, 20.0, 5.0, 0.0);
        assert_eq!(hits.len(), 2);
    }
}
