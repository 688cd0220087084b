use std::collections::BTreeMap;

use chrono::NaiveDate;
use foreshap::blackbox::{forecast, member_forecast, EnsembleSpec};
use foreshap::data::{aggregate, compute_stats, trim_leading_zeros, ProcessedSeries, SeriesSet, SeriesStats};
use foreshap::evaluation::{metrics, pearson};
use foreshap::explain::{calibrate, calibration_epsilon, denormalize_explanation, CalibrationStatus};
use foreshap::features::{decompose, FeatureBuilder, FeatureConfig, FeatureSchema};
use foreshap::forecastability::spectral_predictability;
use foreshap::surrogate::{fit_rows, TrainParams, TreeEnsemble};
use foreshap::treeshap::{tree_shap, Explanation, Units};
use proptest::prelude::*;

fn start() -> NaiveDate {
    NaiveDate::from_ymd_opt(2024, 1, 1).unwrap()
}

fn series(n: std::ops::Range<usize>) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1000.0..1000.0f64, n)
}

fn small_model(seed_rows: &[Vec<f64>], y: &[f64], n_trees: usize) -> TreeEnsemble {
    let rows: Vec<&[f64]> = seed_rows.iter().map(Vec::as_slice).collect();
    let schema = FeatureSchema::new((0..seed_rows[0].len()).map(|i| format!("f{i}")).collect());
    let params = TrainParams {
        n_trees,
        max_depth: 3,
        min_samples_leaf: 2,
        ..TrainParams::default()
    };
    fit_rows(&rows, y, schema, &params).unwrap()
}

fn dataset() -> impl Strategy<Value = (Vec<Vec<f64>>, Vec<f64>)> {
    (10usize..40).prop_flat_map(|n| {
        (
            prop::collection::vec(prop::collection::vec(-5.0..5.0f64, 4), n),
            prop::collection::vec(-10.0..10.0f64, n),
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn normalize_round_trip(v in series(2..200)) {
        let stats = compute_stats(&v).unwrap();
        for x in &v {
            let back = stats.denormalize(stats.normalize(*x));
            prop_assert!((back - x).abs() <= 1e-9 * x.abs().max(1.0));
        }
        if stats.sigma_eff != 1.0 || stats.sigma > 1e-12 {
            let z: Vec<f64> = v.iter().map(|x| stats.normalize(*x)).collect();
            let n = z.len() as f64;
            let m = z.iter().sum::<f64>() / n;
            let s = (z.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n).sqrt();
            prop_assert!(m.abs() < 1e-9);
            prop_assert!((s - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn trim_is_idempotent(zeros in 0usize..20, v in prop::collection::vec(0.5..100.0f64, 1..50)) {
        let mut full = vec![0.0; zeros];
        full.extend(&v);
        let once = trim_leading_zeros(&full, None).unwrap();
        let twice = trim_leading_zeros(&once.values, None).unwrap();
        prop_assert_eq!(once.offset, zeros);
        prop_assert_eq!(twice.offset, 0);
        prop_assert_eq!(twice.values, once.values);
    }

    #[test]
    fn aggregate_preserves_totals(a in prop::collection::vec(0.0..50.0f64, 5..30), b in prop::collection::vec(0.0..50.0f64, 5..30), k in 1.0..4.0f64) {
        let set = SeriesSet::from_daily(start(), [("a".to_string(), a.clone()), ("b".to_string(), b.clone())]).unwrap();
        let scaled = SeriesSet::from_daily(
            start(),
            [("a".to_string(), a.iter().map(|x| k * x).collect()), ("b".to_string(), b.iter().map(|x| k * x).collect())],
        )
        .unwrap();
        let grouping: BTreeMap<String, String> = [("a", "g"), ("b", "g")].iter().map(|(i, g)| (i.to_string(), g.to_string())).collect();
        let agg = aggregate(&set, &grouping).unwrap().values("g").unwrap();
        let agg_scaled = aggregate(&scaled, &grouping).unwrap().values("g").unwrap();
        let total: f64 = a.iter().chain(&b).sum();
        prop_assert!((agg.iter().sum::<f64>() - total).abs() < 1e-9 * total.max(1.0));
        for (x, y) in agg.iter().zip(&agg_scaled) {
            prop_assert!((k * x - y).abs() < 1e-9 * y.abs().max(1.0));
        }
    }

    #[test]
    fn features_ignore_the_future(v in prop::collection::vec(1.0..100.0f64, 60..120), origin_frac in 0.3..0.9f64, step in 1usize..10, bump in 1.0..50.0f64) {
        let origin = ((v.len() as f64) * origin_frac) as usize;
        let cfg = FeatureConfig::default();
        let stats = SeriesStats::IDENTITY;
        let set = SeriesSet::from_daily(start(), [("x".to_string(), v.clone())]).unwrap();
        let s = ProcessedSeries::new("x", set.get("x").unwrap(), None).unwrap();
        let mut future = v.clone();
        for x in &mut future[origin..] {
            *x += bump;
        }
        let set2 = SeriesSet::from_daily(start(), [("x".to_string(), future)]).unwrap();
        let s2 = ProcessedSeries::new("x", set2.get("x").unwrap(), None).unwrap();
        let a = FeatureBuilder::new(&s, &stats, &cfg).unwrap().row(origin, step);
        let b = FeatureBuilder::new(&s2, &stats, &cfg).unwrap().row(origin, step);
        for (x, y) in a.values.iter().zip(&b.values) {
            prop_assert!(x == y || (x.is_nan() && y.is_nan()));
        }
    }

    #[test]
    fn seasonal_pattern_sums_to_zero(v in prop::collection::vec(0.0..100.0f64, 21..100), period in 2usize..8) {
        if let Ok(d) = decompose(&v, period) {
            prop_assert!(d.pattern.iter().sum::<f64>().abs() < 1e-9 * v.iter().map(|x| x.abs()).sum::<f64>().max(1.0));
        }
    }

    #[test]
    fn ensemble_within_member_hull(v in prop::collection::vec(0.0..100.0f64, 15..80), h in 1usize..30) {
        let spec = EnsembleSpec::default();
        let f = forecast(&v, h, &spec).unwrap();
        let members: Vec<Vec<f64>> = spec.members.iter().map(|m| member_forecast(m.member, &v, h)).collect();
        for (t, x) in f.iter().enumerate() {
            let lo = members.iter().map(|m| m[t]).fold(f64::INFINITY, f64::min);
            let hi = members.iter().map(|m| m[t]).fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(*x >= lo - 1e-9 * lo.abs().max(1.0) && *x <= hi + 1e-9 * hi.abs().max(1.0));
        }
    }

    #[test]
    fn pearson_affine_invariant(x in series(3..50), y in series(3..50), a in 0.1..10.0f64, b in -100.0..100.0f64) {
        let n = x.len().min(y.len());
        let (x, y) = (&x[..n], &y[..n]);
        if let Ok(r) = pearson(x, y) {
            let ax: Vec<f64> = x.iter().map(|v| a * v + b).collect();
            let r2 = pearson(&ax, y).unwrap();
            prop_assert!((r - r2).abs() < 1e-9);
            let neg: Vec<f64> = x.iter().map(|v| -a * v + b).collect();
            prop_assert!((r + pearson(&neg, y).unwrap()).abs() < 1e-9);
        }
    }

    #[test]
    fn mae_not_above_rmse(p in series(1..50), r in series(1..50)) {
        let n = p.len().min(r.len());
        let m = metrics(&p[..n], &r[..n]).unwrap();
        prop_assert!(m.mae <= m.rmse + 1e-12 * m.rmse.max(1.0));
    }

    #[test]
    fn sp_affine_invariant(v in prop::collection::vec(-10.0..10.0f64, 16..128), a in 0.5..20.0f64, b in -50.0..50.0f64) {
        if let Ok(s) = spectral_predictability(&v) {
            let w: Vec<f64> = v.iter().map(|x| a * x + b).collect();
            let s2 = spectral_predictability(&w).unwrap();
            if !s.degenerate && !s2.degenerate {
                prop_assert!((s.sp - s2.sp).abs() < 1e-7);
            }
        }
    }

    #[test]
    fn treeshap_additive_and_dummy((x, y) in dataset(), probe in prop::collection::vec(-6.0..6.0f64, 4)) {
        // Feature 3 is constant, so no tree can split on it.
        let x: Vec<Vec<f64>> = x.into_iter().map(|mut r| { r[3] = 1.0; r }).collect();
        let model = small_model(&x, &y, 8);
        let e = tree_shap(&model, &probe).unwrap();
        prop_assert!(e.additivity_gap() <= 1e-8 * e.prediction.abs().max(1.0));
        prop_assert_eq!(e.attributions[3], 0.0);
    }

    #[test]
    fn treeshap_linear_across_trees((x, y) in dataset(), probe in prop::collection::vec(-6.0..6.0f64, 4)) {
        let model = small_model(&x, &y, 6);
        let whole = tree_shap(&model, &probe).unwrap();
        let mut summed = vec![0.0; 4];
        for tree in &model.trees {
            let single = TreeEnsemble { trees: vec![tree.clone()], ..model.clone() };
            for (s, p) in summed.iter_mut().zip(tree_shap(&single, &probe).unwrap().attributions) {
                *s += p;
            }
        }
        for (a, b) in whole.attributions.iter().zip(&summed) {
            prop_assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn denormalization_keeps_additivity(base in -3.0..3.0f64, phi in prop::collection::vec(-2.0..2.0f64, 1..20), mu in -500.0..500.0f64, sigma in 0.01..300.0f64) {
        let e = Explanation {
            base_value: base,
            prediction: base + phi.iter().sum::<f64>(),
            attributions: phi,
            units: Units::Normalized,
        };
        let d = denormalize_explanation(&e, &SeriesStats { mu, sigma, sigma_eff: sigma }).unwrap();
        prop_assert!(d.additivity_gap() <= 1e-9 * d.prediction.abs().max(1.0));
    }

    #[test]
    fn calibration_reconstructs_target(base in -100.0..100.0f64, phi in prop::collection::vec(-20.0..20.0f64, 1..10), target in -100.0..100.0f64) {
        let e = Explanation {
            base_value: base,
            prediction: base + phi.iter().sum::<f64>(),
            attributions: phi,
            units: Units::Original,
        };
        let c = calibrate(&e, target);
        for (p, q) in c.attributions.iter().zip(&e.attributions) {
            prop_assert_eq!(*p, c.scale * q);
        }
        if e.attribution_sum().abs() > calibration_epsilon(base) {
            prop_assert!(matches!(c.status, CalibrationStatus::Calibrated | CalibrationStatus::ZeroForecastRule));
            prop_assert!((c.reconstruction() - target).abs() <= 1e-9 * target.abs().max(1.0));
            // The scale turns negative exactly when phi_0 lies strictly between f(x) and the target.
            let between = (base - e.prediction) * (base - target) < 0.0;
            prop_assert_eq!(c.scale < 0.0, between);
        }
    }
}
