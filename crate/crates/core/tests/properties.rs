use proptest::prelude::*;

use implicit_em::diagnostics::{
    collapse_score, responsibilities_from_gradient, specialization_entropy, stabilization_step, ObjectiveTag,
};
use implicit_em::distance::{directional_distance, from_gaussian, GaussianComponent};
use implicit_em::numeric::{log_sum_exp, max_abs_diff};
use implicit_em::objectives::{
    cross_entropy_distance_gradient, cross_entropy_gradient, cross_entropy_value, lse_gradient, lse_value,
    nll_gradient, soft_assign, DistanceVector, Label,
};
use implicit_em::regimes::{em_step, mixture_nll};

fn distances(max_k: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-10.0..10.0f64, 1..=max_k)
}

fn labeled(max_k: usize) -> impl Strategy<Value = (Vec<f64>, usize)> {
    distances(max_k).prop_flat_map(|d| {
        let k = d.len();
        (Just(d), 0..k)
    })
}

fn dv(d: &[f64]) -> DistanceVector {
    DistanceVector::new(d.to_vec()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    #[test]
    fn responsibilities_lie_on_the_simplex(d in distances(64)) {
        let r = soft_assign(&dv(&d)).unwrap().r;
        prop_assert!(r.iter().all(|v| (0.0..=1.0).contains(v)));
        prop_assert!((r.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn lse_gradient_is_minus_r(d in distances(64)) {
        let d = dv(&d);
        let r = soft_assign(&d).unwrap().r;
        let g = lse_gradient(&d).unwrap();
        prop_assert!(g.iter().zip(&r).all(|(g, r)| (g + r).abs() < 1e-12));
    }

    #[test]
    fn gradient_sum_laws((d, y) in labeled(64)) {
        let d = dv(&d);
        let y = Label(y);
        prop_assert!((lse_gradient(&d).unwrap().iter().sum::<f64>() + 1.0).abs() < 1e-12);
        prop_assert!((nll_gradient(&d).unwrap().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(cross_entropy_gradient(&d, y).unwrap().iter().sum::<f64>().abs() < 1e-12);
        prop_assert!(cross_entropy_distance_gradient(&d, y).unwrap().iter().sum::<f64>().abs() < 1e-12);
    }

    #[test]
    fn cross_entropy_is_r_minus_onehot((d, y) in labeled(32)) {
        let d = dv(&d);
        let mut expected = soft_assign(&d).unwrap().r;
        expected[y] -= 1.0;
        prop_assert_eq!(cross_entropy_gradient(&d, Label(y)).unwrap(), expected);
    }

    #[test]
    fn shifts_move_lse_and_leave_r((d, c) in (distances(32), -100.0..100.0f64)) {
        let shifted: Vec<f64> = d.iter().map(|v| v + c).collect();
        let (a, b) = (dv(&d), dv(&shifted));
        prop_assert!(max_abs_diff(&soft_assign(&a).unwrap().r, &soft_assign(&b).unwrap().r) < 1e-12);
        prop_assert!((lse_value(&b).unwrap() - (lse_value(&a).unwrap() - c)).abs() < 1e-11);
    }

    #[test]
    fn lse_is_bounded_by_max_and_max_plus_ln_k(d in distances(64)) {
        let z: Vec<f64> = d.iter().map(|v| -v).collect();
        let l = log_sum_exp(&z).unwrap();
        let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(l >= m - 1e-12);
        prop_assert!(l <= m + (z.len() as f64).ln() + 1e-12);
    }

    #[test]
    fn cross_entropy_is_non_negative((d, y) in labeled(32)) {
        prop_assert!(cross_entropy_value(&dv(&d), Label(y)).unwrap() >= 0.0);
    }

    #[test]
    fn extraction_round_trips((d, y) in labeled(64)) {
        let d = dv(&d);
        let y = Label(y);
        let r = soft_assign(&d).unwrap().r;
        let cases = [
            (ObjectiveTag::Lse, lse_gradient(&d).unwrap()),
            (ObjectiveTag::Nll, nll_gradient(&d).unwrap()),
            (ObjectiveTag::CrossEntropy, cross_entropy_gradient(&d, y).unwrap()),
        ];
        for (tag, g) in cases {
            let back = responsibilities_from_gradient(&g, tag, Some(y)).unwrap();
            prop_assert!(max_abs_diff(&back, &r) < 1e-12);
        }
    }

    #[test]
    fn entropy_is_within_zero_and_ln_k(d in distances(64)) {
        let r = soft_assign(&dv(&d)).unwrap().r;
        let h = specialization_entropy(&r).unwrap();
        prop_assert!(h >= 0.0 && h <= (r.len() as f64).ln() + 1e-12);
    }

    #[test]
    fn collapse_score_is_between_one_over_k_and_one(rows in prop::collection::vec(prop::collection::vec(-10.0..10.0f64, 8), 1..20)) {
        let assignments: Vec<Vec<f64>> = rows.iter().map(|d| soft_assign(&dv(d)).unwrap().r).collect();
        let c = collapse_score(&assignments).unwrap();
        prop_assert!((1.0 / 8.0 - 1e-12..=1.0).contains(&c));
    }

    #[test]
    fn stabilization_step_lands_in_range(drift in prop::collection::vec(0.0..10.0f64, 1..50)) {
        let steps: Vec<usize> = (0..drift.len()).collect();
        let s = stabilization_step(&steps, &drift);
        prop_assert!(s <= drift.len());
        let peak = drift.iter().copied().fold(0.0, f64::max);
        prop_assert!(drift[s.min(drift.len())..].iter().all(|&v| v < 0.1 * peak || peak == 0.0));
    }

    #[test]
    fn gaussian_conversion_gives_scaled_projection(
        mu in prop::collection::vec(-5.0..5.0f64, 2),
        angle in 0.0..std::f64::consts::TAU,
        lambda in 0.1..10.0f64,
        x in prop::collection::vec(-5.0..5.0f64, 2),
    ) {
        let v = [angle.cos(), angle.sin()];
        let g = GaussianComponent::with_direction(mu.clone(), &v, lambda).unwrap();
        let unit = from_gaussian(&g).unwrap();
        let proj = (v[0] * (x[0] - mu[0]) + v[1] * (x[1] - mu[1])).abs() / lambda.sqrt();
        prop_assert!((directional_distance(&unit, &x).unwrap() - proj).abs() < 1e-12);
        prop_assert!(directional_distance(&unit, &mu).unwrap().abs() < 1e-12);
    }

    #[test]
    fn em_never_increases_nll(
        points in prop::collection::vec(prop::collection::vec(-4.0..4.0f64, 2), 2..30),
        init in prop::collection::vec(prop::collection::vec(-4.0..4.0f64, 2), 1..4),
        sigma2 in 0.3..3.0f64,
    ) {
        let before = mixture_nll(&points, &init, sigma2).unwrap();
        let next = em_step(&points, &init, sigma2).unwrap();
        let after = mixture_nll(&points, &next, sigma2).unwrap();
        prop_assert!(after <= before + 1e-12, "{} -> {}", before, after);
    }
}
