use bwlab_core::models::{turning_points, scale_map, Target};
use bwlab_core::{ModelSpec, C64};
use proptest::prelude::*;

fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

fn close(a: C64, b: C64, tol: f64) -> bool {
    (a - b).norm() <= tol * (1.0 + a.norm().max(b.norm()))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn turning_points_satisfy_vieta(h in 0.05..3.0f64, er in -2.0..2.0f64, ei in -2.0..2.0f64) {
        let spec = ModelSpec::hbar(h);
        let e = c(er, ei);
        let tp = turning_points(&spec, e);
        prop_assert_eq!(tp.roots.len(), 3);
        prop_assert!(tp.vieta_residual(&spec.poly()) < 1e-10);
        for z in &tp.roots {
            prop_assert!((spec.potential(*z) - e).norm() < 1e-9 * (1.0 + e.norm()));
        }
    }

    #[test]
    fn pt_potentials_are_mirror_symmetric(h in 0.05..3.0f64, x in -3.0..3.0f64, y in -3.0..3.0f64) {
        let spec = ModelSpec::hbar(h);
        prop_assert!(spec.is_pt_symmetric());
        let z = c(x, y);
        prop_assert!(close(spec.potential(-z.conj()).conj(), spec.potential(z), 1e-13));
    }

    #[test]
    fn real_energy_turning_sets_are_mirror_symmetric(h in 0.05..3.0f64, e in 0.01..3.0f64) {
        let spec = ModelSpec::hbar(h);
        let tp = turning_points(&spec, c(e, 0.0));
        for z in &tp.roots {
            let m = -z.conj();
            let d = tp.roots.iter().map(|w| (w - m).norm()).fold(f64::INFINITY, f64::min);
            prop_assert!(d < 1e-9, "{} has no mirror", z);
        }
    }

    #[test]
    fn scale_maps_round_trip(r in 0.1..3.0f64, th in -0.6..0.6f64, er in -3.0..3.0f64, ei in -3.0..3.0f64) {
        let src = ModelSpec::hbar_complex(C64::from_polar(r, th));
        let e = c(er, ei);
        let z = c(ei, er);
        for tgt in [Target::AlphaHat, Target::BetaPlus, Target::BetaMinus] {
            let m = scale_map(&src, tgt).unwrap();
            prop_assert!(close(m.energy_inverse(m.energy(e)), e, 1e-12));
            prop_assert!(close(m.point_inverse(m.point(z)), z, 1e-12));
            let inv = m.inverse();
            prop_assert!(close(inv.energy(m.energy(e)), e, 1e-12));
            prop_assert!(close(inv.point(m.point(z)), z, 1e-12));
        }
    }

    #[test]
    fn scale_maps_intertwine_potentials(h in 0.1..3.0f64, x in -2.0..2.0f64, y in -2.0..2.0f64) {
        let src = ModelSpec::hbar(h);
        let z = c(x, y);
        for tgt in [Target::AlphaHat, Target::BetaPlus, Target::KDelta { delta: 1.5 }] {
            let m = scale_map(&src, tgt).unwrap();
            let kin = m.scale * src.kinetic() * m.coord_scale * m.coord_scale;
            prop_assert!(close(kin, m.target.kinetic(), 1e-11));
            let lhs = m.target.potential(m.point(z));
            let rhs = m.scale * src.potential(z) + m.offset;
            prop_assert!(close(lhs, rhs, 1e-10));
        }
    }

    #[test]
    fn parameter_round_trip(p in 0.05..3.0f64, q in -0.3..0.3f64) {
        for spec in [ModelSpec::hbar(1.0), ModelSpec::beta(c(0.2, 0.0)), ModelSpec::alpha(c(0.0, 0.0))] {
            let v = c(p, q);
            let moved = spec.with_parameter(v);
            prop_assert_eq!(moved.parameter(), v);
            prop_assert_eq!(moved.family, spec.family);
        }
    }
}
