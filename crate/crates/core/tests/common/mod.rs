//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use rand::Rng;
use rtl_core::catalog::{surface_distance_km, Catalog, CatalogEvent, GeoPoint};
use rtl_core::rtl::{rupture_length_km, RtlConfig, RtlValue};

/// Random catalog in one of several geometries: a small box anywhere on the
/// globe (including the poles and the antimeridian), a mid-latitude box, or
/// the whole sphere. Some epicentres and times are repeated on purpose.
pub fn random_catalog<R: Rng>(rng: &mut R, n: usize) -> Catalog {
    let (lat_c, lon_c, half): (f64, f64, f64) = match rng.random_range(0..4) {
        0 => (rng.random_range(-89.0..89.0), rng.random_range(-180.0..180.0), rng.random_range(0.1..3.0)),
        1 => (rng.random_range(-60.0..60.0), 179.5, 1.5),
        2 => (rng.random_range(85.0..90.0), 0.0, 5.0),
        _ => (0.0, 0.0, 180.0),
    };
    let mut events: Vec<CatalogEvent> = Vec::with_capacity(n);
    for _ in 0..n {
        if !events.is_empty() && rng.random::<f64>() < 0.05 {
            let prev = events[rng.random_range(0..events.len())];
            events.push(CatalogEvent::new(prev.time, prev.lat, prev.lon, None, prev.mag));
            continue;
        }
        let lat = (lat_c + rng.random_range(-half..=half)).clamp(-90.0, 90.0);
        let mut lon = lon_c + rng.random_range(-half..=half) * 2.0;
        if !(-180.0..=180.0).contains(&lon) {
            lon = (lon + 180.0f64).rem_euclid(360.0) - 180.0;
        }
        let time = (rng.random_range(0.0..1000.0) * 4.0f64).round() / 4.0;
        let mag = (rng.random_range(2.0..7.0) * 10.0f64).round() / 10.0;
        events.push(CatalogEvent::new(time, lat, lon, None, mag));
    }
    Catalog::new("random", events).expect("random events are valid")
}

/// Positions (in the catalog's time order) of every event in the past cylinder.
pub fn naive_cylinder(
    events: &[CatalogEvent],
    center: GeoPoint,
    t: f64,
    radius_km: f64,
    t_window: f64,
    min_mag: f64,
) -> Vec<usize> {
    (0..events.len())
        .filter(|&i| {
            let e = &events[i];
            let age = t - e.time;
            age > 0.0 && age <= t_window && e.mag >= min_mag && surface_distance_km(center, e.location()) <= radius_km
        })
        .collect()
}

/// RTL sums recomputed from a full scan of the catalog.
pub fn brute_rtl(events: &[CatalogEvent], center: GeoPoint, t: f64, cfg: &RtlConfig) -> RtlValue {
    let mut v = RtlValue::default();
    for e in events {
        let age = t - e.time;
        let r = surface_distance_km(center, e.location());
        if age <= 0.0
            || age > cfg.cutoff_factor * cfg.t0_days
            || r > cfg.cutoff_factor * cfg.r0_km
            || e.mag < cfg.min_mag
        {
            continue;
        }
        v.r_comp += (-r / cfg.r0_km).exp();
        v.t_comp += (-age / cfg.t0_days).exp();
        v.l_comp += rupture_length_km(e.mag) / r.max(cfg.min_r_km);
        v.n_events += 1;
    }
    v.product = v.r_comp * v.t_comp * v.l_comp;
    v
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else {
        (a - b).abs() / a.abs().max(b.abs())
    }
}

/// P(score+ > score-) + 0.5 P(tie) over all positive/negative pairs.
pub fn pairwise_auc(scores: &[f64], truth: &[u8]) -> f64 {
    let mut wins = 0.0;
    let mut pairs = 0.0;
    for (i, &si) in scores.iter().enumerate() {
        if truth[i] != 1 {
            continue;
        }
        for (j, &sj) in scores.iter().enumerate() {
            if truth[j] != 0 {
                continue;
            }
            pairs += 1.0;
            if si > sj {
                wins += 1.0;
            } else if si == sj {
                wins += 0.5;
            }
        }
    }
    wins / pairs
}

/// Average precision from a sweep over every distinct score as threshold,
/// recounting the confusion matrix from scratch at each one.
pub fn sweep_average_precision(scores: &[f64], truth: &[u8]) -> f64 {
    let mut thresholds: Vec<f64> = scores.to_vec();
    thresholds.sort_by(|a, b| b.total_cmp(a));
    thresholds.dedup();
    let n_pos = truth.iter().filter(|&&y| y == 1).count() as f64;
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for &thr in &thresholds {
        let (mut tp, mut fp) = (0.0, 0.0);
        for (&s, &y) in scores.iter().zip(truth) {
            if s >= thr {
                if y == 1 {
                    tp += 1.0;
                } else {
                    fp += 1.0;
                }
            }
        }
        let recall = tp / n_pos;
        let precision = tp / (tp + fp);
        ap += (recall - prev_recall) * precision;
        prev_recall = recall;
    }
    ap
}

/// Scores with a fair share of ties and labels holding both classes.
pub fn random_scored<R: Rng>(rng: &mut R, n: usize) -> (Vec<f64>, Vec<u8>) {
    loop {
        let levels = rng.random_range(2..50);
        let truth: Vec<u8> = (0..n).map(|_| u8::from(rng.random::<f64>() < 0.3)).collect();
        let scores: Vec<f64> =
            truth.iter().map(|&y| (rng.random_range(0..levels) as f64 + f64::from(y) * 3.0) / levels as f64).collect();
        if truth.contains(&0) && truth.contains(&1) {
            return (scores, truth);
        }
    }
}

/// Composite Simpson rule with `n` (even) intervals.
pub fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    let h = (b - a) / n as f64;
    let mut s = f(a) + f(b);
    for k in 1..n {
        let w = if k % 2 == 1 { 4.0 } else { 2.0 };
        s += w * f(a + k as f64 * h);
    }
    s * h / 3.0
}
