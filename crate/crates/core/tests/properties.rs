use ndarray::{Array1, Array2};
use proptest::prelude::*;

use spatial_ivae::compositional::{clr, helmert_basis, ilr, ilr_inverse, ilr_to_clr};
use spatial_ivae::evaluation::{mcc, mcc_brute_force};
use spatial_ivae::ivae::learning_rate;
use spatial_ivae::ivae::TrainConfig;
use spatial_ivae::kriging::{fold_assignment, kriging_weights, Family, KrigingKind, VariogramModel};
use spatial_ivae::mixing::{apply_mixing, generate_mixing, normalize_rows_cols};
use spatial_ivae::random_fields::{matern_correlation, MaternParams};
use spatial_ivae::segmentation::{encode_segments, GridSpec};
use spatial_ivae::shap::{exact_shapley, ExplainTarget, FnModel};
use spatial_ivae::Domain2D;

fn matrix(rows: usize, cols: usize, lo: f64, hi: f64) -> impl Strategy<Value = Array2<f64>> {
    prop::collection::vec(lo..hi, rows * cols).prop_map(move |v| Array2::from_shape_vec((rows, cols), v).unwrap())
}

fn points(n: usize) -> impl Strategy<Value = Array2<f64>> {
    matrix(n, 2, 0.0, 100.0)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn clr_is_scale_invariant(x in prop::collection::vec(0.01f64..50.0, 2..8), c in 0.01f64..100.0) {
        let a = Array1::from(x.clone());
        let b = a.mapv(|v| v * c);
        let (ca, cb) = (clr(a.view()).unwrap(), clr(b.view()).unwrap());
        for (p, q) in ca.iter().zip(cb.iter()) {
            prop_assert!((p - q).abs() < 1e-10);
        }
    }

    #[test]
    fn ilr_is_isometric_and_invertible(x in prop::collection::vec(0.01f64..50.0, 2..8)) {
        let a = Array1::from(x);
        let y = ilr(a.view()).unwrap();
        let c = clr(a.view()).unwrap();
        prop_assert!((y.dot(&y).sqrt() - c.dot(&c).sqrt()).abs() < 1e-10);
        let back = ilr_inverse(y.view());
        let closed = &a / a.sum();
        for (p, q) in back.iter().zip(closed.iter()) {
            prop_assert!((p - q).abs() < 1e-10 * q.max(1.0));
        }
        let c2 = ilr_to_clr(y.view());
        for (p, q) in c.iter().zip(c2.iter()) {
            prop_assert!((p - q).abs() < 1e-10);
        }
    }

    #[test]
    fn helmert_columns_orthonormal(parts in 2usize..12) {
        let v = helmert_basis(parts);
        let g = v.t().dot(&v);
        for i in 0..parts - 1 {
            for j in 0..parts - 1 {
                let want = if i == j { 1.0 } else { 0.0 };
                prop_assert!((g[[i, j]] - want).abs() < 1e-12);
            }
            prop_assert!(v.column(i).sum().abs() < 1e-12);
        }
    }

    #[test]
    fn mcc_matches_brute_force_and_trace_bound(k in (1usize..=6).prop_flat_map(|d| matrix(d, d, -1.0, 1.0))) {
        let d = k.nrows();
        let m = mcc(&k).unwrap();
        prop_assert!((m - mcc_brute_force(&k)).abs() < 1e-12);
        let trace: f64 = (0..d).map(|i| k[[i, i]].abs()).sum::<f64>() / d as f64;
        prop_assert!(m >= trace - 1e-15);
    }

    #[test]
    fn segments_partition_locations(locs in points(60), nx in 1usize..8, ny in 1usize..8) {
        let dom = Domain2D::square(100.0).unwrap();
        let enc = encode_segments(&locs, &dom, GridSpec::Cells { nx, ny }).unwrap();
        prop_assert_eq!(enc.segments.len(), 60);
        prop_assert!(enc.m() <= nx * ny);
        let mut counts = vec![0usize; enc.m()];
        for &s in &enc.segments {
            counts[s] += 1;
        }
        prop_assert!(counts.iter().all(|&c| c >= 1));
        let u = enc.u();
        for row in u.rows() {
            prop_assert_eq!(row.sum(), 1.0);
        }
        let again = encode_segments(&locs, &dom, GridSpec::Cells { nx, ny }).unwrap();
        prop_assert_eq!(again.segments, enc.segments);
    }

    #[test]
    fn normalization_is_idempotent(b in matrix(3, 3, -2.0, 2.0)) {
        prop_assume!(b.rows().into_iter().all(|r| r.dot(&r) > 1e-2));
        prop_assume!(b.columns().into_iter().all(|c| c.dot(&c) > 1e-2));
        if let Ok((once, _)) = normalize_rows_cols(&b) {
            let (twice, _) = normalize_rows_cols(&once).unwrap();
            for (p, q) in once.iter().zip(twice.iter()) {
                prop_assert!((p - q).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn one_layer_mixing_is_linear(seed in any::<u64>(), z in matrix(2, 3, -5.0, 5.0), a in -3.0f64..3.0, b in -3.0f64..3.0) {
        let spec = generate_mixing(1, 3, seed).unwrap();
        let combo = Array2::from_shape_fn((1, 3), |(_, j)| a * z[[0, j]] + b * z[[1, j]]);
        let f = apply_mixing(&spec, &z).unwrap();
        let fc = apply_mixing(&spec, &combo).unwrap();
        for j in 0..3 {
            prop_assert!((fc[[0, j]] - (a * f[[0, j]] + b * f[[1, j]])).abs() < 1e-10);
        }
    }

    #[test]
    fn matern_nonincreasing(nu in 0.1f64..6.0, phi in 0.5f64..40.0) {
        let p = MaternParams::new(nu, phi).unwrap();
        let mut prev = matern_correlation(0.0, &p);
        prop_assert_eq!(prev, 1.0);
        for i in 1..1000 {
            let c = matern_correlation(i as f64 * 0.2, &p);
            prop_assert!(c <= prev + 1e-15 && c >= 0.0);
            prev = c;
        }
    }

    #[test]
    fn learning_rate_monotone(start in 1e-3f64..1.0, ratio in 0.0f64..1.0, steps in 1usize..5000) {
        let cfg = TrainConfig { lr_start: start, lr_end: start * ratio, decay_steps: steps, ..TrainConfig::default() };
        prop_assert!((learning_rate(&cfg, 0) - start).abs() < 1e-15);
        prop_assert!((learning_rate(&cfg, steps) - start * ratio).abs() < 1e-15);
        let mut prev = f64::INFINITY;
        for t in (0..steps + 10).step_by(1 + steps / 50) {
            let lr = learning_rate(&cfg, t);
            prop_assert!(lr <= prev);
            prev = lr;
        }
    }

    #[test]
    fn kriging_weights_reproduce_drift(sites in points(12), tx in 10.0f64..90.0, ty in 10.0f64..90.0, range in 5.0f64..80.0) {
        let vgm = VariogramModel::new(Family::Exponential, 1.0, range, 0.1, None).unwrap();
        let w = kriging_weights(&sites, [tx, ty], &vgm, KrigingKind::Ordinary).unwrap();
        prop_assert!((w.sum() - 1.0).abs() < 1e-10);
        let w = kriging_weights(&sites, [tx, ty], &vgm, KrigingKind::Universal).unwrap();
        prop_assert!((w.sum() - 1.0).abs() < 1e-10);
        prop_assert!((w.dot(&sites.column(0)) - tx).abs() < 1e-8);
        prop_assert!((w.dot(&sites.column(1)) - ty).abs() < 1e-8);
    }

    #[test]
    fn folds_partition(n in 10usize..300, k in 2usize..10, seed in any::<u64>()) {
        prop_assume!(n >= k);
        let f = fold_assignment(n, k, seed).unwrap();
        prop_assert_eq!(&f, &fold_assignment(n, k, seed).unwrap());
        let mut sizes = vec![0usize; k];
        for &x in &f {
            sizes[x] += 1;
        }
        let (lo, hi) = (sizes.iter().min().unwrap(), sizes.iter().max().unwrap());
        prop_assert!(hi - lo <= 1 && *lo >= 1);
    }

    #[test]
    fn shapley_efficiency(w in matrix(4, 2, -2.0, 2.0), bg in matrix(5, 4, -1.0, 1.0), x in prop::collection::vec(-2.0f64..2.0, 4)) {
        let model = FnModel { inputs: 4, outputs: 2, f: |z: &Array2<f64>| z.dot(&w).mapv(f64::sin) };
        let target = ExplainTarget::new(&model, bg).unwrap();
        let sv = exact_shapley(&target, Array1::from(x).view()).unwrap();
        for h in 0..2 {
            prop_assert!((sv.phi.row(h).sum() - (sv.fx[h] - sv.base[h])).abs() < 1e-9);
        }
    }
}
