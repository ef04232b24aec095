//! Property tests of structural invariants.

use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use thicken::cli::fmt;
use thicken::flow::{integrate_forward, Trajectory};
use thicken::lambda_verify::fit_decay_rate;
use thicken::local_model::{build_ladder, LadderChoices, LocalModel, Numerics};
use thicken::lyapunov_perron::{graph_g_t, BaseGrid, TensorGrid};
use thicken::reference;
use thicken::spectral::{split_default, Subspace};

fn quartic() -> &'static LocalModel {
    static MODEL: OnceLock<LocalModel> = OnceLock::new();
    MODEL.get_or_init(|| {
        let numerics = Numerics {
            kappa_samples: 400,
            ..Numerics::default()
        };
        LocalModel::build(reference::quartic(), &LadderChoices::default(), numerics).unwrap()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn ladder_identities_hold_for_any_lambda(frac in 0.05f64..0.95) {
        let m = quartic();
        let choices = LadderChoices { lambda: Some(frac * m.split.gap), ..LadderChoices::default() };
        let l = build_ladder(&m.split, m.ladder.kappa.clone(), &choices).unwrap();
        prop_assert!(l.invariants_hold(), "{:?}", l.invariant_checks());
        prop_assert_eq!(l.t1, -l.varkappa.ln() / l.lambda);
        prop_assert_eq!(l.t0, l.t1.max(l.t2).max(1.0));
        prop_assert!((-l.t2 * l.mu / 4.0).exp() <= 0.125);
        prop_assert!(l.delta < l.mu && l.mu < 0.5 * (l.gap + l.lambda));
        prop_assert!(l.rho <= l.manifold_rho && l.manifold_rho <= l.trust_radius);
    }

    #[test]
    fn kappa_is_monotone(a in 0.0f64..1.0, b in 0.0f64..1.0) {
        let k = &quartic().ladder.kappa;
        let top = k.max_radius();
        let (lo, hi) = (a.min(b) * top, a.max(b) * top);
        prop_assert!(k.at(lo) <= k.at(hi));
        prop_assert!(k.at(lo) >= 0.0);
    }

    #[test]
    fn tensor_stencil_reproduces_affine_functions(
        per_axis in 2usize..12,
        x in -1.0f64..1.0,
        slope in -5.0f64..5.0,
        offset in -5.0f64..5.0,
    ) {
        let split = split_default(&DMatrix::from_diagonal(&DVector::from_vec(vec![-1.0, 2.0]))).unwrap();
        let grid = TensorGrid::inscribed(&split, Subspace::Plus, 0.3, per_axis);
        let c = DVector::from_vec(vec![x * grid.half_width]);
        let stencil = grid.stencil(&c).unwrap();
        let total: f64 = stencil.iter().map(|(_, w)| w).sum();
        prop_assert!((total - 1.0).abs() <= 1e-14);
        prop_assert!(stencil.iter().all(|(_, w)| *w >= 0.0));
        let value: f64 = stencil.iter().map(|(i, w)| w * (slope * grid.coordinates(*i)[0] + offset)).sum();
        let exact = slope * c[0] + offset;
        prop_assert!((value - exact).abs() <= 1e-12 * (1.0 + exact.abs()));
    }

    #[test]
    fn split_projections_are_complementary(
        a in -3.0f64..-0.2,
        b in 0.2f64..3.0,
        c in 0.2f64..3.0,
        angle in 0.0f64..std::f64::consts::PI,
    ) {
        let (s, co) = angle.sin_cos();
        let q = DMatrix::from_row_slice(3, 3, &[co, -s, 0.0, s, co, 0.0, 0.0, 0.0, 1.0]);
        let h = &q * DMatrix::from_diagonal(&DVector::from_vec(vec![a, b, c])) * q.transpose();
        let split = split_default(&h).unwrap();
        prop_assert_eq!(split.morse_index, 1);
        let sum = split.projection(Subspace::Minus) + split.projection(Subspace::Plus);
        prop_assert!((sum - DMatrix::identity(3, 3)).amax() <= 1e-12);
        prop_assert!((split.gap - a.abs().min(b).min(c)).abs() <= 1e-12);
        prop_assert!(split.eigenvalues.as_slice().windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn quadratic_flow_matches_closed_form(x in -0.1f64..0.1, y in -0.1f64..0.1, t in 0.1f64..3.0) {
        let start = DVector::from_vec(vec![x, y]);
        let tr = integrate_forward(&reference::quadratic(), &start, t, 1e-12).unwrap();
        let exact = DVector::from_vec(vec![x * t.exp(), y * (-2.0 * t).exp()]);
        prop_assert!((tr.end() - &exact).norm() <= 1e-9 * (1.0 + exact.norm()));
        prop_assert!(tr.is_monotone(1e-15));
    }

    #[test]
    fn chained_legs_agree_with_one_run(x in -0.05f64..0.05, y in -0.05f64..0.05, split_at in 0.2f64..0.8, s in 0.0f64..1.0) {
        let problem = reference::quartic();
        let start = DVector::from_vec(vec![x, y]);
        let total = 2.0;
        let first = integrate_forward(&problem, &start, split_at * total, 1e-12).unwrap();
        let second = integrate_forward(&problem, first.end(), (1.0 - split_at) * total, 1e-12).unwrap();
        let chained = Trajectory::chain(vec![first, second]);
        let direct = integrate_forward(&problem, &start, total, 1e-12).unwrap();
        prop_assert!((chained.end_time() - total).abs() <= 1e-12);
        let t = s * total;
        prop_assert!((chained.at(t) - direct.at(t)).norm() <= 1e-9 * (1.0 + start.norm()));
    }

    #[test]
    fn decay_fit_recovers_exact_exponentials(rate in 0.01f64..3.0, scale in 1e-6f64..10.0, count in 3usize..9) {
        let x: Vec<f64> = (0..count).map(|i| 1.0 + i as f64).collect();
        let y: Vec<f64> = x.iter().map(|t| scale * (-rate * t).exp()).collect();
        prop_assert!((fit_decay_rate(&x, &y) - rate).abs() <= 1e-10 * (1.0 + rate));
    }

    #[test]
    fn csv_formatting_round_trips(v in proptest::num::f64::NORMAL | proptest::num::f64::SUBNORMAL | proptest::num::f64::ZERO) {
        prop_assert_eq!(fmt(v).parse::<f64>().unwrap(), v);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn finite_horizon_boundary_data_are_exact(frac in -0.9f64..0.9, side in prop::bool::ANY, t_scale in 1.0f64..2.0) {
        let m = quartic();
        let split = &m.split;
        let sign = if side { 1.0 } else { -1.0 };
        let zm = split.embed(Subspace::Minus, &DVector::from_vec(vec![sign * 0.5 * m.ladder.manifold_radius]));
        let zp = split.embed(Subspace::Plus, &DVector::from_vec(vec![frac * m.ladder.fiber_radius()]));
        let t = m.ladder.t0 * t_scale;
        let s = graph_g_t(m, t, &zm, BaseGrid::Points(vec![zp.clone()])).unwrap();
        prop_assert!(s.boundary_errors[0] <= 1e-12);
        let start = &s.base_points[0] + &s.values[0];
        prop_assert!((split.project(Subspace::Plus, &start) - &zp).norm() <= 1e-12);
        prop_assert!((split.project(Subspace::Minus, &s.endpoints[0]) - &zm).norm() <= 1e-12);
    }
}
