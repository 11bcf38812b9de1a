use std::f64::consts::{FRAC_PI_2, FRAC_PI_4};

use angof::empirical::{euclidean_weights, select_exceedances};
use angof::geometry::{constraint_f, in_c_p_theta, lp_norm, weight_q_integral, y_p};
use angof::wasserstein::{test_statistic, weighted_l1_distance};
use angof::{AngularModel, BivariateSample, CopulaSpec, Family, ModelParams, PNorm, StepCdf, WeightKind};
use proptest::prelude::*;

fn pnorm() -> impl Strategy<Value = PNorm> {
    prop_oneof![(1.0f64..8.0).prop_map(PNorm::Finite), Just(PNorm::Infinity)]
}

fn weight() -> impl Strategy<Value = WeightKind> {
    prop_oneof![Just(WeightKind::Constant), Just(WeightKind::InvSqrtPi4)]
}

fn step_cdf() -> impl Strategy<Value = StepCdf> {
    prop::collection::vec((0.0f64..FRAC_PI_2, 0.01f64..1.0), 1..12).prop_map(|pts| {
        let total: f64 = pts.iter().map(|p| p.1).sum();
        let locs: Vec<f64> = pts.iter().map(|p| p.0).collect();
        let masses: Vec<f64> = pts.iter().map(|p| p.1 / total).collect();
        StepCdf::new(&locs, &masses).unwrap()
    })
}

fn copula() -> impl Strategy<Value = CopulaSpec> {
    prop_oneof![
        (1.0f64..5.0).prop_map(|t| CopulaSpec::gumbel(t).unwrap()),
        (0.2f64..3.0).prop_map(|r| CopulaSpec::husler_reiss(r).unwrap()),
        Just(CopulaSpec::Comonotone),
        (0.0f64..1.0).prop_map(|l| CopulaSpec::scenario_max_linear(l).unwrap()),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn norm_is_symmetric_homogeneous_and_bounded(p in pnorm(), x in 0.0f64..50.0, y in 0.0f64..50.0, c in 0.01f64..100.0) {
        let n = lp_norm(p, x, y);
        prop_assert_eq!(n, lp_norm(p, y, x));
        prop_assert!((lp_norm(p, c * x, c * y) - c * n).abs() <= 1e-12 * (1.0 + c * n));
        prop_assert!(n >= x.max(y) * (1.0 - 1e-15) && n <= (x + y) * (1.0 + 1e-15));
    }

    #[test]
    fn norm_decreases_in_index(p1 in 1.0f64..8.0, dp in 0.0f64..8.0, x in 0.0f64..10.0, y in 0.0f64..10.0) {
        let a = lp_norm(PNorm::Finite(p1), x, y);
        let b = lp_norm(PNorm::Finite(p1 + dp), x, y);
        prop_assert!(b <= a * (1.0 + 1e-14));
        prop_assert!(lp_norm(PNorm::Infinity, x, y) <= b * (1.0 + 1e-14));
    }

    #[test]
    fn boundary_curve_lies_on_unit_sphere(p in 1.0f64..8.0, x in 1.001f64..1e4) {
        let y = y_p(PNorm::Finite(p), x);
        prop_assert!(y >= 1.0);
        let n = lp_norm(PNorm::Finite(p), 1.0 / x, 1.0 / y);
        prop_assert!((n - 1.0).abs() < 1e-9, "norm {}", n);
    }

    #[test]
    fn constraint_is_antisymmetric_and_bounded(p in pnorm(), theta in 0.0f64..FRAC_PI_2) {
        let f = constraint_f(p, theta);
        prop_assert!(f.abs() <= 1.0 + 1e-12);
        prop_assert!((f + constraint_f(p, FRAC_PI_2 - theta)).abs() < 1e-12);
    }

    #[test]
    fn angular_sets_are_nested(p in pnorm(), t1 in 0.01f64..FRAC_PI_2, t2 in 0.01f64..FRAC_PI_2, x in 0.5f64..20.0, y in 0.0f64..20.0) {
        let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
        if in_c_p_theta(p, lo, x, y) {
            prop_assert!(in_c_p_theta(p, hi, x, y));
            prop_assert!(in_c_p_theta(p, lo, x, 0.5 * y));
        }
    }

    #[test]
    fn weight_integral_is_additive(w in weight(), a in 0.0f64..FRAC_PI_2, b in 0.0f64..FRAC_PI_2, c in 0.0f64..FRAC_PI_2) {
        let mut v = [a, b, c];
        v.sort_by(f64::total_cmp);
        let whole = weight_q_integral(w, v[0], v[2]);
        let parts = weight_q_integral(w, v[0], v[1]) + weight_q_integral(w, v[1], v[2]);
        prop_assert!(whole >= 0.0);
        prop_assert!((whole - parts).abs() < 1e-12);
    }

    #[test]
    fn euclidean_weights_satisfy_constraints(p in pnorm(), angles in prop::collection::vec(0.0f64..FRAC_PI_2, 3..200)) {
        let spread = angles.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
            - angles.iter().cloned().fold(f64::INFINITY, f64::min);
        prop_assume!(spread > 1e-3);
        let w = euclidean_weights(&angles, p).unwrap();
        let sum: f64 = w.iter().sum();
        let moment: f64 = w.iter().zip(&angles).map(|(wj, &t)| wj * constraint_f(p, t)).sum();
        prop_assert!((sum - 1.0).abs() < 1e-12, "sum {}", sum);
        prop_assert!(moment.abs() < 1e-12, "moment {}", moment);
    }

    #[test]
    fn distance_is_a_metric_on_step_cdfs(q in weight(), f in step_cdf(), g in step_cdf(), h in step_cdf()) {
        let d = |a: &StepCdf, b: &StepCdf| weighted_l1_distance(a, b, q).unwrap().value;
        let (fg, gh, fh) = (d(&f, &g), d(&g, &h), d(&f, &h));
        prop_assert!(fg >= 0.0 && d(&f, &f) < 1e-12);
        prop_assert!((fg - d(&g, &f)).abs() < 1e-9 * (1.0 + fg));
        prop_assert!(fh <= fg + gh + 1e-9);
    }

    #[test]
    fn copula_satisfies_axioms(c in copula(), u in 0.0f64..1.0, v in 0.0f64..1.0, du in 0.0f64..0.5, dv in 0.0f64..0.5) {
        prop_assert!((c.cdf(u, 1.0) - u).abs() < 1e-12, "{} {}", u, c.cdf(u, 1.0));
        prop_assert!((c.cdf(1.0, v) - v).abs() < 1e-12);
        prop_assert!(c.cdf(0.0, v).abs() < 1e-12 && c.cdf(u, 0.0).abs() < 1e-12);
        let x = c.cdf(u, v);
        prop_assert!(x >= (u + v - 1.0).max(0.0) - 1e-12 && x <= u.min(v) + 1e-12);
        let (u2, v2) = ((u + du).min(1.0), (v + dv).min(1.0));
        let vol = c.cdf(u2, v2) - c.cdf(u, v2) - c.cdf(u2, v) + c.cdf(u, v);
        prop_assert!(vol >= -1e-12, "rectangle volume {}", vol);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn statistic_is_invariant_under_monotone_marginal_maps(seed in 0u64..1000, k in 20usize..60, p in pnorm()) {
        let sample = CopulaSpec::gumbel(2.0).unwrap().sample(600, seed).unwrap();
        let x: Vec<f64> = sample.x().iter().map(|u| (3.0 * u).exp() - 7.0).collect();
        let y: Vec<f64> = sample.y().iter().map(|v| -1.0 / v.ln()).collect();
        let mapped = BivariateSample::new(x, y).unwrap();
        let a = select_exceedances(&sample, k, p).unwrap();
        let b = select_exceedances(&mapped, k, p).unwrap();
        prop_assert_eq!(&a.angles, &b.angles);
        prop_assume!(a.count() >= 3 && p.is_finite());
        let (mut a, mut b) = (a, b);
        a.reweight().unwrap();
        b.reweight().unwrap();
        let model = AngularModel::new(ModelParams::new(Family::Logistic, 0.5).unwrap(), p).unwrap();
        let ta = test_statistic(&a, &model, WeightKind::InvSqrtPi4).unwrap();
        let tb = test_statistic(&b, &model, WeightKind::InvSqrtPi4).unwrap();
        prop_assert_eq!(ta, tb);
    }
}

#[test]
fn constraint_vanishes_on_the_diagonal() {
    for p in [PNorm::Finite(1.0), PNorm::Finite(2.5), PNorm::Infinity] {
        assert!(constraint_f(p, FRAC_PI_4).abs() < 1e-15);
    }
}
