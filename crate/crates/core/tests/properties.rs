use ndarray::Array2;
use proptest::prelude::*;
use rand::Rng;
use spde2d::coordinate::{f_ratio, profiled_mu_pow, residual_sum, score_v1};
use spde2d::model::inner_product;
use spde2d::spatial::{from_shape, to_shape, SpatialOptConfig};
use spde2d::*;

fn params() -> impl Strategy<Value = SpdeParams> {
    (-5.0..5.0f64, -2.0..2.0f64, -2.0..2.0f64, 0.1..2.0f64)
        .prop_map(|(a, b, c, d)| SpdeParams::new(a, b, c, d).unwrap())
}

fn ou_path(lambda: f64, eps: f64, n: usize, seed: u64) -> CoordinatePath {
    let m = OuModel { case: OuCase::Case1, lambda, mu: None, epsilon: eps, alpha: 0.5, x0: 1.0, n };
    simulate_ou(&m, SeedPath::new(seed, 0)).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn eigenfunctions_are_orthonormal(p in params(), k1 in 1u32..4, l1 in 1u32..4, k2 in 1u32..4, l2 in 1u32..4) {
        let rule = GaussLegendre::new(48);
        let (a, b) = (EigenIndex { k: k1, l: l1 }, EigenIndex { k: k2, l: l2 });
        let v = inner_product(&p, |y, z| eigenfunction_at(&p, a, y, z), |y, z| eigenfunction_at(&p, b, y, z), &rule).unwrap();
        let want = if a == b { 1.0 } else { 0.0 };
        prop_assert!((v - want).abs() < 1e-10, "{v}");
    }

    #[test]
    fn eigenvalues_increase_with_frequency(p in params(), k in 1u32..20, l in 1u32..20) {
        let base = eigenvalue(&p, EigenIndex { k, l });
        let (up_k, up_l) = (EigenIndex { k: k + 1, l }, EigenIndex { k, l: l + 1 });
        prop_assert!(eigenvalue(&p, up_k) > base);
        prop_assert!(eigenvalue(&p, up_l) > base);
    }

    #[test]
    fn theta0_round_trip(p in params()) {
        let back = theta0_from_lambda(p.lambda11(), p.theta1, p.eta1, p.theta2);
        prop_assert!((back - p.theta0).abs() < 1e-9);
    }

    #[test]
    fn quadratic_variation_shift_and_scale(xs in prop::collection::vec(-10.0..10.0f64, 2..60), c in -5.0..5.0f64, s in 0.1..5.0f64) {
        let z = z_statistic(&xs, 0.5).unwrap();
        let shifted: Vec<f64> = xs.iter().map(|x| x + c).collect();
        let scaled: Vec<f64> = xs.iter().map(|x| s * x).collect();
        prop_assert!((z_statistic(&shifted, 0.5).unwrap() - z).abs() <= 1e-9 * (1.0 + z));
        prop_assert!((z_statistic(&scaled, 0.5).unwrap() - s * s * z).abs() <= 1e-9 * (1.0 + s * s * z));
    }

    #[test]
    fn limit_surface_is_log_linear(p in params(), y1 in 0.0..1.0f64, y2 in 0.0..1.0f64, z in 0.0..1.0f64, q2 in any::<bool>()) {
        let kind = if q2 { NoiseKind::Q2 } else { NoiseKind::Q1 };
        let f = |y: f64| limit_surface(kind, 0.5, p.theta1, p.eta1, p.theta2, y, z).ln();
        let mid = f(0.5 * (y1 + y2));
        prop_assert!((mid - 0.5 * (f(y1) + f(y2))).abs() < 1e-10);
    }

    #[test]
    fn shape_map_round_trip(p in params(), alpha in 0.1..0.9f64, q2 in any::<bool>()) {
        let kind = if q2 { NoiseKind::Q2 } else { NoiseKind::Q1 };
        let (a, k, e) = to_shape(kind, alpha, p.theta1, p.eta1, p.theta2);
        let (t1, e1, t2) = from_shape(kind, alpha, a, k, e);
        prop_assert!((t1 - p.theta1).abs() < 1e-9 && (e1 - p.eta1).abs() < 1e-9 && (t2 - p.theta2).abs() < 1e-9 * p.theta2);
    }

    #[test]
    fn f_ratio_matches_closed_form(s in 1e-3..20.0f64) {
        let direct = s / -(-s).exp_m1();
        prop_assert!((f_ratio(s) - direct).abs() <= 1e-12 * direct);
    }

    #[test]
    fn v2_on_the_diagonal_is_v1(lambda in 0.05..20.0f64, seed in 0u64..1000) {
        let p = ou_path(2.0, 0.05, 200, seed);
        let v1 = contrast_v1(lambda, &p.values, p.dt(), 0.05, 0.5).unwrap();
        let v2 = contrast_v2(lambda, lambda, &p.values, p.dt(), 0.05, 0.5).unwrap();
        prop_assert!((v1 - v2).abs() <= 1e-10 * v1.abs().max(1.0));
    }

    #[test]
    fn lambda_estimate_is_sign_invariant(seed in 0u64..1000) {
        let p = ou_path(2.0, 0.05, 200, seed);
        let neg: Vec<f64> = p.values.iter().map(|v| -v).collect();
        let s = LambdaSearch::default();
        let a = estimate_lambda_q1(&p.values, p.dt(), 0.05, 0.5, &s).unwrap();
        let b = estimate_lambda_q1(&neg, p.dt(), 0.05, 0.5, &s).unwrap();
        prop_assert_eq!(a.lambda, b.lambda);
    }

    #[test]
    fn score_is_the_contrast_derivative(lambda in 0.2..10.0f64, seed in 0u64..1000) {
        let p = ou_path(2.0, 0.05, 200, seed);
        let (dt, h) = (p.dt(), 1e-5 * lambda);
        let v = |l: f64| contrast_v1(l, &p.values, dt, 0.05, 0.5).unwrap();
        let fd = (v(lambda + h) - v(lambda - h)) / (2.0 * h);
        let sc = score_v1(lambda, &p.values, dt, 0.05, 0.5);
        prop_assert!((fd - sc).abs() <= 1e-4 * (1.0 + sc.abs()), "{fd} vs {sc}");
    }

    #[test]
    fn profiled_mu_minimizes_v2(lambda in 0.5..8.0f64, seed in 0u64..1000) {
        let p = ou_path(2.0, 0.05, 200, seed);
        let dt = p.dt();
        let mu = profiled_mu_pow(lambda, &p.values, dt, 0.05).unwrap().powf(2.0);
        let v = |m: f64| contrast_v2(lambda, m, &p.values, dt, 0.05, 0.5).unwrap();
        prop_assert!(v(mu) <= v(mu * 1.01) && v(mu) <= v(mu * 0.99));
    }

    #[test]
    fn noise_enters_linearly(eps in 0.01..0.5f64, seed in 0u64..1000) {
        let times: Vec<f64> = (0..=50).map(|i| i as f64 / 50.0).collect();
        let path = |e: f64| {
            let mut rng = SeedPath::new(seed, 0).stream(Domain::Aux, 0, 0);
            simulate_coordinate_path(1.5, 0.7, e, 2.0, &times, &mut rng).unwrap().values
        };
        let (det, base, scaled) = (path(0.0), path(1.0), path(eps));
        for ((d, b), s) in det.iter().zip(&base).zip(&scaled) {
            prop_assert!(((s - d) - eps * (b - d)).abs() < 1e-12);
        }
        for (t, d) in times.iter().zip(&det) {
            prop_assert!((d - 2.0 * (-1.5 * t).exp()).abs() < 1e-13);
        }
    }

    #[test]
    fn distinct_streams_differ(master in any::<u64>(), rep in any::<u64>(), a in 0u32..100, b in 0u32..100) {
        let draw = |d: Domain, x: u32, y: u32| SeedPath::new(master, rep).stream(d, x, y).random::<u64>();
        prop_assert_eq!(draw(Domain::Mode, a, b), draw(Domain::Mode, a, b));
        prop_assert_ne!(draw(Domain::Mode, a, b), draw(Domain::Mode, a, b + 1));
        prop_assert_ne!(draw(Domain::Mode, a, b), draw(Domain::AliasClass, a, b));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn exact_surface_is_recovered(theta1 in -1.0..1.0f64, eta1 in -1.0..1.0f64, theta2 in 0.2..2.0f64, q2 in any::<bool>()) {
        let kind = if q2 { NoiseKind::Q2 } else { NoiseKind::Q1 };
        let grid = build_thinned_space_grid(50, 50, 10, 10, 0.05).unwrap();
        let z = Array2::from_shape_fn((grid.m1(), grid.m2()), |(a, b)| {
            limit_surface(kind, 0.5, theta1, eta1, theta2, grid.y[a], grid.z[b])
        });
        let input = SpatialContrastInput::new(z, grid, 0.5, 0.01, kind).unwrap();
        let est = minimize_contrast(&input, &SearchBox::default(), &SpatialOptConfig::default()).unwrap();
        prop_assert!((est.theta1 - theta1).abs() < 1e-6 && (est.eta1 - eta1).abs() < 1e-6);
        prop_assert!((est.theta2 - theta2).abs() < 1e-6 * theta2);
    }

    #[test]
    fn swapping_axes_swaps_estimates(seed in 0u64..1000) {
        let grid = build_thinned_space_grid(50, 50, 10, 10, 0.05).unwrap();
        let mut rng = SeedPath::new(seed, 0).stream(Domain::Aux, 1, 1);
        let z = Array2::from_shape_fn((grid.m1(), grid.m2()), |(a, b)| {
            limit_surface(NoiseKind::Q1, 0.5, 0.3, -0.4, 0.6, grid.y[a], grid.z[b]) * (1.0 + 0.05 * (rng.random::<f64>() - 0.5))
        });
        let zt = z.t().to_owned();
        let a = minimize_contrast(&SpatialContrastInput::new(z, grid.clone(), 0.5, 0.01, NoiseKind::Q1).unwrap(), &SearchBox::default(), &SpatialOptConfig::default()).unwrap();
        let b = minimize_contrast(&SpatialContrastInput::new(zt, grid, 0.5, 0.01, NoiseKind::Q1).unwrap(), &SearchBox::default(), &SpatialOptConfig::default()).unwrap();
        prop_assert!((a.theta1 - b.eta1).abs() < 1e-6 && (a.eta1 - b.theta1).abs() < 1e-6 && (a.theta2 - b.theta2).abs() < 1e-6);
    }

    #[test]
    fn residual_sum_vanishes_on_noiseless_paths(lambda in 0.1..20.0f64) {
        let p = ou_path(lambda, 0.0, 100, 0);
        prop_assert!(residual_sum(lambda, &p.values, p.dt()) < 1e-24);
        let est = estimate_lambda_q1(&p.values, p.dt(), 0.0, 0.5, &LambdaSearch::default()).unwrap();
        prop_assert!((est.lambda - lambda).abs() < 1e-6 * lambda);
    }
}
