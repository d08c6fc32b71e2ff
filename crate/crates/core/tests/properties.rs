//! Property tests over random models, points and directions.

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use subelliptic::algebra::{group_inv, group_mul, hormander_lambda, ModelSpec};
use subelliptic::fields::{apply_xi, apply_xi_hat, registry, CurvatureContext};
use subelliptic::inequalities::{cc_controls, cc_controls_from, control_endpoint, ControlBudget};
use subelliptic::malliavin::{weights_from_functionals, Direction};
use subelliptic::paths::{compute_functionals, sample_brownian, PathGrid};
use subelliptic::GroupPoint;

/// Random `(m, d)` model with a well-conditioned `σ`.
fn arb_model() -> impl Strategy<Value = ModelSpec> {
    (2usize..=4, 1usize..=3)
        .prop_flat_map(|(m, d)| {
            (
                Just(m),
                Just(d),
                prop::collection::vec(-0.3f64..0.3, m * m),
                prop::collection::vec(-1.0f64..1.0, d * m * m),
            )
        })
        .prop_filter_map("degenerate draw", |(m, d, s, a)| {
            let sigma = DMatrix::identity(m, m) + DMatrix::from_row_slice(m, m, &s);
            let a = (0..d).map(|l| DMatrix::from_row_slice(m, m, &a[l * m * m..(l + 1) * m * m])).collect();
            ModelSpec::new(m, d, sigma, a).ok()
        })
}

fn arb_point(m: usize, d: usize) -> impl Strategy<Value = GroupPoint> {
    (prop::collection::vec(-3.0f64..3.0, m), prop::collection::vec(-3.0f64..3.0, d)).prop_map(|(x, y)| GroupPoint::new(x, y))
}

fn model_and_points(k: usize) -> impl Strategy<Value = (ModelSpec, Vec<GroupPoint>)> {
    arb_model().prop_flat_map(move |model| {
        let (m, d) = (model.m(), model.d());
        (Just(model), prop::collection::vec(arb_point(m, d), k))
    })
}

fn max_diff(a: &GroupPoint, b: &GroupPoint) -> f64 {
    a.concat().iter().zip(b.concat()).map(|(u, v)| (u - v).abs()).fold(0.0, f64::max)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn group_axioms((model, pts) in model_and_points(3)) {
        let (p, q, r) = (&pts[0], &pts[1], &pts[2]);
        let e = GroupPoint::origin(&model);
        let lhs = group_mul(&group_mul(p, q, &model), r, &model);
        let rhs = group_mul(p, &group_mul(q, r, &model), &model);
        prop_assert!(max_diff(&lhs, &rhs) <= 1e-12 * (1.0 + lhs.concat().iter().fold(0.0f64, |a, v| a.max(v.abs()))));
        prop_assert!(max_diff(&group_mul(p, &e, &model), p) == 0.0);
        prop_assert!(max_diff(&group_mul(&e, p, &model), p) == 0.0);
        let inv = group_inv(p, &model);
        prop_assert!(max_diff(&group_mul(p, &inv, &model), &e) <= 1e-12);
        prop_assert!(max_diff(&group_mul(&inv, p, &model), &e) <= 1e-12);
    }

    #[test]
    fn brackets_are_skew_and_traceless(model in arb_model()) {
        for g in model.g() {
            prop_assert!((g + g.transpose()).abs().max() <= 1e-12);
            prop_assert!(g.trace().abs() <= 1e-12);
        }
    }

    #[test]
    fn left_translation_preserves_volume((model, pts) in model_and_points(2)) {
        let (p, q) = (&pts[0], &pts[1]);
        let n = model.dim();
        let h = 1e-5;
        let base = q.concat();
        let jac = DMatrix::from_fn(n, n, |i, j| {
            let mut a = base.clone();
            let mut b = base.clone();
            a[j] += h;
            b[j] -= h;
            let fa = group_mul(p, &GroupPoint::from_concat(&a, model.m()), &model).concat();
            let fb = group_mul(p, &GroupPoint::from_concat(&b, model.m()), &model).concat();
            (fa[i] - fb[i]) / (2.0 * h)
        });
        prop_assert!((jac.determinant() - 1.0).abs() <= 1e-6);
    }

    #[test]
    fn hat_fields_agree_with_plain_fields_on_the_vertical_axis(model in arb_model(), y in prop::collection::vec(-3.0f64..3.0, 3)) {
        let (m, d) = (model.m(), model.d());
        let mut z = vec![0.0; m];
        z.extend(&y[..d]);
        for f in registry::all_families(m, d) {
            let b = f.bind(&model);
            for i in 0..m {
                prop_assert_eq!(apply_xi(&b, i, &z, &model), apply_xi_hat(&b, i, &z, &model));
            }
        }
    }

    #[test]
    fn weights_are_linear_in_the_direction(
        seed in any::<u64>(),
        c1 in -2.0f64..2.0,
        c2 in -2.0f64..2.0,
        u1 in prop::collection::vec(-1.0f64..1.0, 2),
        u2 in prop::collection::vec(-1.0f64..1.0, 2),
        v1 in -1.0f64..1.0,
        v2 in -1.0f64..1.0,
    ) {
        let model = ModelSpec::heisenberg();
        let z0 = GroupPoint::new(vec![0.3, -0.4], vec![0.2]);
        let grid = PathGrid::new(1.0, 32).unwrap();
        let b = sample_brownian(grid, 2, seed, 0);
        let f = compute_functionals(&model, &b);
        let d1 = Direction::new(u1, vec![v1]);
        let d2 = Direction::new(u2, vec![v2]);
        let mix = d1.scale(c1).add(&d2.scale(c2));
        let ws = weights_from_functionals(&model, &z0, &[d1, d2, mix], &f);
        prop_assume!(!ws[0].rejected);
        for (a, b, c) in [
            (ws[0].dstar_h, ws[1].dstar_h, ws[2].dstar_h),
            (ws[0].dstar_h_tilde, ws[1].dstar_h_tilde, ws[2].dstar_h_tilde),
        ] {
            let lin = c1 * a + c2 * b;
            prop_assert!((c - lin).abs() <= 1e-10 * (c1.abs() * a.abs() + c2.abs() * b.abs()).max(1e-300) + 1e-14);
        }
    }

    #[test]
    fn alpha_minus_alpha_tilde_is_the_terminal_term(seed in any::<u64>(), u in prop::collection::vec(-1.0f64..1.0, 4)) {
        let model = ModelSpec::block_rotations_4x2();
        let z0 = GroupPoint::new(vec![0.1, 0.2, -0.3, 0.4], vec![0.5, -0.5]);
        let grid = PathGrid::new(1.0, 16).unwrap();
        let b = sample_brownian(grid, 4, seed, 3);
        let f = compute_functionals(&model, &b);
        let dir = Direction::new(u.clone(), vec![0.7, -0.2]);
        let (alpha, alpha_tilde) = subelliptic::malliavin::compute_alpha(&model, &z0, &dir, &f);
        let uv = DVector::from_column_slice(&u);
        let bt = DVector::from_column_slice(b.terminal());
        for l in 0..2 {
            let expected = (&model.a()[l] * &uv).dot(&bt);
            prop_assert!((alpha_tilde[l] - alpha[l] - expected).abs() <= 1e-12);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn cd_margin_is_nonnegative_on_a2_models(
        which in 0usize..2,
        raw in prop::collection::vec(-3.0f64..3.0, 6),
        r in prop::sample::select(vec![0.1, 1.0, 10.0]),
    ) {
        let model = if which == 0 { ModelSpec::heisenberg() } else { ModelSpec::block_rotations_4x2() };
        let z = &raw[..model.dim()];
        let ctx = CurvatureContext::new(&model).unwrap();
        for f in registry::all_families(model.m(), model.d()) {
            let margin = ctx.margin(&f.bind(&model), z, r, &model);
            prop_assert!(margin >= -1e-9, "{} margin {} at {:?}", f.name(), margin, z);
        }
    }
}

/// Smallest and largest `Σ_{ij} |Σ_l (G_l)_{ij} a_l|²` over an equispaced
/// grid of the unit circle (d = 2) or the unit "sphere" `{±1}` (d = 1).
fn sphere_range(model: &ModelSpec, n: usize) -> (f64, f64) {
    let q = |a: &[f64]| {
        let mut s = DMatrix::zeros(model.m(), model.m());
        for (l, g) in model.g().iter().enumerate() {
            s += g * a[l];
        }
        s.norm_squared()
    };
    match model.d() {
        1 => (q(&[1.0]), q(&[1.0])),
        2 => (0..n)
            .map(|k| {
                let th = std::f64::consts::PI * k as f64 / n as f64;
                q(&[th.cos(), th.sin()])
            })
            .fold((f64::INFINITY, 0.0), |(lo, hi), v| (lo.min(v), hi.max(v))),
        _ => unreachable!(),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn lambda_matches_sphere_sampling(model in arb_model().prop_filter("d <= 2", |m| m.d() <= 2)) {
        let lambda = hormander_lambda(&model).unwrap();
        let (brute, top) = sphere_range(&model, 100_000);
        // grid error is at most top·(π/n)²/4 ≈ 2.5e-10·top
        prop_assert!((lambda - brute).abs() <= 1e-6 * brute + 1e-9 * top, "{} vs {}", lambda, brute);
    }
}

fn heis_point() -> impl Strategy<Value = GroupPoint> {
    arb_point(2, 1).prop_map(|p| GroupPoint::new(p.x.iter().map(|v| v / 3.0).collect(), p.y.iter().map(|v| v / 3.0).collect()))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn cc_upper_bound_triangle_inequality(a in heis_point(), b in heis_point(), c in heis_point()) {
        let model = ModelSpec::heisenberg();
        let k = 8;
        let budget = ControlBudget { segments: k, ..ControlBudget::default() };
        let (l1, u1) = cc_controls(&model, &a, &b, &budget).unwrap();
        let (l2, u2) = cc_controls(&model, &b, &c, &budget).unwrap();
        let start: Vec<f64> = u1.iter().chain(&u2).map(|v| 2.0 * v).collect();
        let end = control_endpoint(&model, &a, &start, 2 * k);
        prop_assert!(end.iter().zip(c.concat()).all(|(e, t)| (e - t).abs() <= 1e-3));
        let direct = ControlBudget { segments: 2 * k, ..ControlBudget::default() };
        let (l3, _) = cc_controls_from(&model, &a, &c, &direct, Some(&start)).unwrap();
        prop_assert!(l3 <= l1 + l2 + 1e-6, "{} > {} + {}", l3, l1, l2);
    }

    #[test]
    fn cc_upper_bound_is_symmetric(a in heis_point(), b in heis_point()) {
        let model = ModelSpec::heisenberg();
        let budget = ControlBudget::default();
        let (ab, _) = cc_controls(&model, &a, &b, &budget).unwrap();
        let (ba, _) = cc_controls(&model, &b, &a, &budget).unwrap();
        prop_assert!((ab - ba).abs() <= 1e-3 * ab.max(ba), "{} vs {}", ab, ba);
    }
}
