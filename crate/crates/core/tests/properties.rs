use heislab::cylinder::CylinderFn;
use heislab::heis::{
    dilate, group_inv, group_mul, horizontal_derivative, sub_laplacian, GroupElement, ScalarField,
};
use heislab::lab::functionals::TwoPointMeasure;
use heislab::metric::{cc_distance, cc_distance_pair, geodesic_point, GeodesicParams};
use heislab::model::{hamiltonian, LatticeConfig, ModelSpec, Window};
use proptest::prelude::*;

fn point(w: f64) -> impl Strategy<Value = GroupElement> {
    (-w..w, -w..w, -w..w).prop_map(|(a, b, c)| GroupElement::new(a, b, c))
}

fn rel(a: &GroupElement, b: &GroupElement) -> f64 {
    let s = a
        .to_array()
        .iter()
        .chain(b.to_array().iter())
        .fold(1.0f64, |m, v| m.max(v.abs()));
    a.max_abs_diff(b) / s
}

fn cubic() -> ScalarField {
    ScalarField::smooth("x1^3+x1*x2*x3+x2^2*x3", |x| {
        x.x1.powi(3) + x.x1 * x.x2 * x.x3 + x.x2 * x.x2 * x.x3
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn group_law_is_associative(a in point(10.0), b in point(10.0), c in point(10.0)) {
        let l = group_mul(&group_mul(&a, &b), &c);
        let r = group_mul(&a, &group_mul(&b, &c));
        prop_assert!(rel(&l, &r) <= 1e-12);
    }

    #[test]
    fn identity_and_inverse(a in point(10.0)) {
        let e = GroupElement::IDENTITY;
        prop_assert_eq!(group_mul(&e, &a), a);
        prop_assert_eq!(group_mul(&a, &e), a);
        prop_assert!(rel(&group_mul(&a, &group_inv(&a)), &e) <= 1e-12);
    }

    #[test]
    fn dilation_is_an_automorphism(a in point(5.0), b in point(5.0), lambda in 0.05f64..20.0) {
        let l = dilate(&group_mul(&a, &b), lambda).unwrap();
        let r = group_mul(&dilate(&a, lambda).unwrap(), &dilate(&b, lambda).unwrap());
        prop_assert!(rel(&l, &r) <= 1e-12);
    }

    #[test]
    fn distance_is_homogeneous(a in point(5.0), lambda in 0.1f64..10.0) {
        let d = cc_distance(&a).unwrap();
        let dl = cc_distance(&dilate(&a, lambda).unwrap()).unwrap();
        prop_assert!((dl - lambda * d).abs() <= 1e-9 * lambda * d.max(1e-300));
    }

    #[test]
    fn distance_is_inversion_symmetric(a in point(5.0)) {
        prop_assert!((cc_distance(&a).unwrap() - cc_distance(&group_inv(&a)).unwrap()).abs() <= 1e-10 * cc_distance(&a).unwrap().max(1.0));
    }

    #[test]
    fn triangle_inequality(a in point(3.0), b in point(3.0), c in point(3.0)) {
        let ac = cc_distance_pair(&a, &c).unwrap();
        let ab = cc_distance_pair(&a, &b).unwrap();
        let bc = cc_distance_pair(&b, &c).unwrap();
        prop_assert!(ac <= ab + bc + 1e-9);
    }

    #[test]
    fn geodesics_are_minimising(k in -3.0f64..3.0, phi in 0.0f64..std::f64::consts::TAU, s in 0.01f64..2.0) {
        prop_assume!((k * s).abs() <= 2.0 * std::f64::consts::PI - 0.1);
        let x = geodesic_point(&GeodesicParams::new(k, phi, s));
        prop_assert!((cc_distance(&x).unwrap() - s).abs() <= 1e-8 * s.max(1.0));
    }

    #[test]
    fn horizontal_derivative_is_second_order(a in point(2.0), dir in 1u8..=2) {
        let f = cubic();
        let h = 1e-2;
        let exact = {
            // closed forms of X1 f and X2 f for the cubic
            let (x1, x2, x3) = (a.x1, a.x2, a.x3);
            let d1 = 3.0 * x1 * x1 + x2 * x3;
            let d2 = x1 * x3;
            let d3 = x1 * x2 + x2 * x2;
            if dir == 1 { d1 - 0.5 * x2 * d3 } else { d2 + 2.0 * x2 * x3 + 0.5 * x1 * d3 }
        };
        let e1 = (horizontal_derivative(&f, &a, dir, h).unwrap() - exact).abs();
        let e2 = (horizontal_derivative(&f, &a, dir, h / 2.0).unwrap() - exact).abs();
        prop_assume!(e1 > 1e-9);
        let ratio = e1 / e2;
        prop_assert!((3.5..=4.5).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn sub_laplacian_matches_nested_derivatives(a in point(2.0)) {
        let f = cubic();
        let h = 1e-3;
        let nested = |dir: u8| {
            let inner = cubic();
            let g = ScalarField::smooth("Xf", move |x| horizontal_derivative(&inner, x, dir, h).unwrap());
            horizontal_derivative(&g, &a, dir, h).unwrap()
        };
        let lap = sub_laplacian(&f, &a, h).unwrap();
        prop_assert!((lap - nested(1) - nested(2)).abs() <= 1e-6 * lap.abs().max(1.0));
    }

    #[test]
    fn hamiltonian_parts_sum_to_total(rs in proptest::collection::vec(0.0f64..4.0, 5), s in 1.0f64..1.99, j in 0.0f64..0.5) {
        let spec = ModelSpec::example1(s, j).unwrap();
        let at = |r: f64| geodesic_point(&GeodesicParams::new(0.3, 1.0, r));
        let w = Window::new(0, 2).unwrap();
        let cfg = LatticeConfig::new(w, rs[1..4].iter().map(|&r| at(r)).collect(), at(rs[0]), at(rs[4])).unwrap();
        let h = hamiltonian(&cfg, &spec).unwrap();
        let parts: f64 = h.per_site_phase.iter().chain(&h.per_bond_interaction).sum();
        prop_assert!((h.total - parts).abs() <= 1e-12 * h.total.max(1.0));
        prop_assert!(h.per_site_phase.iter().chain(&h.per_bond_interaction).all(|v| *v >= 0.0));
        let shifted = hamiltonian(&cfg.shifted(7), &spec).unwrap();
        prop_assert!((shifted.total - h.total).abs() <= 1e-12 * h.total.max(1.0));
    }

    #[test]
    fn two_point_functionals_are_q_homogeneous(p0 in 0.01f64..0.99, a in 0.1f64..5.0, b in 0.1f64..5.0, lambda in 0.1f64..10.0, q in 1.01f64..2.0) {
        let m = TwoPointMeasure::new(p0).unwrap();
        let l = lambda.powf(q);
        let e = m.entropy_q([a, b], q).unwrap();
        prop_assert!(e >= 0.0);
        // entropy is a difference of O(mass · |log mass|) terms
        let mass = p0 * a.powf(q) + (1.0 - p0) * b.powf(q);
        let floor = 1e-13 * l * mass * (1.0 + mass.ln().abs() + l.ln().abs());
        let close = |x: f64, y: f64| (x - y).abs() <= 1e-10 * y.abs() + floor;
        prop_assert!(close(m.entropy_q([lambda * a, lambda * b], q).unwrap(), l * e));
        prop_assert!(close(m.dirichlet_q([lambda * a, lambda * b], q).unwrap(), l * m.dirichlet_q([a, b], q).unwrap()));
        prop_assert!(close(m.variance_q([lambda * a, lambda * b], q).unwrap(), l * m.variance_q([a, b], q).unwrap()));
    }

    #[test]
    fn cylinder_display_round_trips(c in 0.1f64..5.0, e in 1.0f64..3.0, i in -3i64..3, j in -3i64..3) {
        let f = CylinderFn::plus(CylinderFn::constant(c), CylinderFn::times(CylinderFn::distance_pow(i, e), CylinderFn::distance(j)));
        let g: CylinderFn = f.to_string().parse().unwrap();
        let r = |k: i64| 1.0 + 0.3 * k as f64 * k as f64;
        prop_assert!((f.eval(&r) - g.eval(&r)).abs() <= 1e-12 * f.eval(&r).abs().max(1.0));
    }
}
