use ndarray::Array2;
use proptest::prelude::*;
use rtl_core::catalog::{parse_catalog, surface_distance_km, Catalog, CatalogEvent, GeoPoint, SpatialIndex};
use rtl_core::dataset::{
    apply_normalizer, chronological_split, fit_normalizer, oversample, undersample, Dataset, NormMode,
};
use rtl_core::metrics::{f1_score, pr_auc, roc_auc};
use rtl_core::rtl::{rtl_at, RtlConfig};

fn point() -> impl Strategy<Value = GeoPoint> {
    (-90.0..=90.0f64, -180.0..=180.0f64).prop_map(|(lat, lon)| GeoPoint::new(lat, lon))
}

/// Events within about 100 km and 400 days of (0, 0) at t = 500.
fn local_events(max: usize) -> impl Strategy<Value = Vec<CatalogEvent>> {
    prop::collection::vec((100.0..500.0f64, -0.8..0.8f64, -0.8..0.8f64, 3.0..7.0f64), 0..max)
        .prop_map(|v| v.into_iter().map(|(t, lat, lon, m)| CatalogEvent::new(t, lat, lon, None, m)).collect())
}

fn rtl_of(events: Vec<CatalogEvent>, t: f64, cfg: &RtlConfig) -> rtl_core::RtlValue {
    let cat = Catalog::new("p", events).unwrap();
    rtl_at(&SpatialIndex::build(&cat, 20.0).unwrap(), GeoPoint::new(0.0, 0.0), t, cfg)
}

fn labelled(n: usize) -> impl Strategy<Value = Dataset> {
    prop::collection::vec((0u8..=1, -5.0..5.0f64, 0.0..100.0f64), n).prop_map(|rows| {
        let n = rows.len();
        let features = Array2::from_shape_fn((n, 2), |(i, j)| if j == 0 { rows[i].1 } else { 1.0 });
        Dataset::new(
            features,
            rows.iter().map(|r| r.0).collect(),
            rows.iter().map(|r| r.2).collect(),
            vec![GeoPoint::new(0.0, 0.0); n],
            vec!["x".into(), "flat".into()],
        )
        .unwrap()
    })
}

fn both_classes(ds: &Dataset) -> bool {
    let (neg, pos) = ds.class_counts();
    neg > 0 && pos > 0
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn distance_is_a_metric(a in point(), b in point(), c in point()) {
        let ab = surface_distance_km(a, b);
        prop_assert_eq!(surface_distance_km(a, a), 0.0);
        prop_assert!((ab - surface_distance_km(b, a)).abs() <= 1e-9);
        prop_assert!(surface_distance_km(a, c) <= ab + surface_distance_km(b, c) + 1e-6);
        prop_assert!(ab <= std::f64::consts::PI * rtl_core::catalog::EARTH_RADIUS_KM + 1e-6);
    }

    #[test]
    fn extra_event_never_decreases_components(
        events in local_events(30),
        extra in (100.0..500.0f64, -0.3..0.3f64, -0.3..0.3f64, 3.0..7.0f64),
    ) {
        let cfg = RtlConfig::new(60.0, 200.0).with_min_mag(3.0).with_cutoff_factor(2.0);
        let before = rtl_of(events.clone(), 500.0, &cfg);
        let mut more = events;
        more.push(CatalogEvent::new(extra.0, extra.1, extra.2, None, extra.3));
        let after = rtl_of(more, 500.0, &cfg);
        prop_assert!(after.r_comp >= before.r_comp);
        prop_assert!(after.t_comp >= before.t_comp);
        prop_assert!(after.l_comp >= before.l_comp);
        prop_assert!(after.n_events == before.n_events + 1);
    }

    #[test]
    fn unit_cutoff_bounds_and_sign(events in local_events(40), r0 in 5.0..150.0f64, t0 in 10.0..400.0f64) {
        let v = rtl_of(events, 500.0, &RtlConfig::new(r0, t0).with_min_mag(3.0));
        let n = v.n_events as f64;
        prop_assert!(v.r_comp <= n && v.t_comp <= n);
        prop_assert!(v.product >= 0.0);
    }

    #[test]
    fn time_translation_invariance(events in local_events(30), shift in -1e4..1e4f64) {
        let cfg = RtlConfig::new(70.0, 150.0).with_min_mag(3.0);
        let base = rtl_of(events.clone(), 500.0, &cfg);
        let moved: Vec<CatalogEvent> =
            events.iter().map(|e| CatalogEvent::new(e.time + shift, e.lat, e.lon, None, e.mag)).collect();
        let shifted = rtl_of(moved, 500.0 + shift, &cfg);
        let close = |a: f64, b: f64| (a - b).abs() <= 1e-12 * a.abs().max(b.abs()).max(1e-300);
        // shifting can move an age across a window edge by one ulp
        if base.n_events == shifted.n_events {
            prop_assert!(close(base.r_comp, shifted.r_comp));
            prop_assert!(close(base.l_comp, shifted.l_comp));
            prop_assert!(close(base.t_comp, shifted.t_comp));
        }
    }

    #[test]
    fn roc_auc_symmetry_and_invariance(raw in prop::collection::vec((0u32..1_000_000, 0u8..=1), 2..200)) {
        let mut seen = std::collections::HashSet::new();
        let rows: Vec<(u32, u8)> = raw.into_iter().filter(|r| seen.insert(r.0)).collect();
        let truth: Vec<u8> = rows.iter().map(|r| r.1).collect();
        prop_assume!(truth.contains(&0) && truth.contains(&1));
        let s: Vec<f64> = rows.iter().map(|r| f64::from(r.0) / 1024.0).collect();
        let neg: Vec<f64> = s.iter().map(|v| -v).collect();
        let affine: Vec<f64> = s.iter().map(|v| 2.0 * v + 1.0).collect();
        let auc = roc_auc(&s, &truth).unwrap();
        prop_assert!((auc + roc_auc(&neg, &truth).unwrap() - 1.0).abs() <= 1e-12);
        prop_assert_eq!(auc, roc_auc(&affine, &truth).unwrap());
        prop_assert_eq!(pr_auc(&s, &truth).unwrap(), pr_auc(&affine, &truth).unwrap());
    }

    #[test]
    fn constant_scores_give_prevalence(truth in prop::collection::vec(0u8..=1, 1..100)) {
        prop_assume!(truth.contains(&1));
        let prevalence = truth.iter().filter(|&&y| y == 1).count() as f64 / truth.len() as f64;
        prop_assert!((pr_auc(&vec![0.3; truth.len()], &truth).unwrap() - prevalence).abs() <= 1e-12);
    }

    #[test]
    fn f1_bounds(p in 0.0..=1.0f64, r in 0.0..=1.0f64) {
        let f = f1_score(p, r).value;
        prop_assert!(f <= 2.0 * p.min(r) + 1e-15);
        prop_assert!(f <= p.max(r) + 1e-15);
    }

    #[test]
    fn zscore_standardises_training_columns(ds in labelled(50)) {
        let stats = fit_normalizer(&ds.features, NormMode::Zscore, 1).unwrap();
        let z = apply_normalizer(&ds.features, &stats).unwrap();
        prop_assert!(stats.constant[1]);
        prop_assert!(z.column(1).iter().all(|&v| v == 0.0));
        if !stats.constant[0] {
            let col = z.column(0);
            let mean = col.sum() / 50.0;
            let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 50.0;
            prop_assert!(mean.abs() <= 1e-9 && (var - 1.0).abs() <= 1e-9);
        }
    }

    #[test]
    fn split_is_chronological(ds in labelled(40), frac in 0.05..0.95f64) {
        let (train, test) = chronological_split(&ds, frac).unwrap();
        prop_assert_eq!(train.n_samples() + test.n_samples(), 40);
        let last = train.sample_times.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(test.sample_times.iter().all(|&t| t >= last));
    }

    #[test]
    fn resampling_balances_classes(ds in labelled(60), seed in any::<u64>()) {
        prop_assume!(both_classes(&ds));
        let (neg, pos) = ds.class_counts();
        let over = oversample(&ds, seed).unwrap();
        let under = undersample(&ds, seed).unwrap();
        prop_assert_eq!(over.class_counts(), (neg.max(pos), neg.max(pos)));
        prop_assert_eq!(under.class_counts(), (neg.min(pos), neg.min(pos)));
    }

    #[test]
    fn catalog_csv_round_trip(events in local_events(20)) {
        let cat = Catalog::new("rt", events).unwrap();
        let mut buf = Vec::new();
        cat.write_csv(&mut buf).unwrap();
        let back = parse_catalog(buf.as_slice(), "rt").unwrap();
        prop_assert_eq!(cat.events(), back.events());
    }
}
