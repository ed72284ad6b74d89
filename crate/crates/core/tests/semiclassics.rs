use bwlab_core::eigensolver::{solve_eigenvalue, spectrum_scan, EnergyWindow, ScanOptions, SolveOptions};
use bwlab_core::models::{e0, Side, C};
use bwlab_core::semiclassics::*;
use bwlab_core::zeros::Rect;
use bwlab_core::{ModelSpec, C64};
use proptest::prelude::*;

fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

#[test]
fn lines_keep_the_action_real() {
    for e in [c(0.2, 0.0), c(0.7, 0.0), c(0.3, -0.1)] {
        let d = trace_stokes_lines(&ModelSpec::hbar(1.0), e).unwrap();
        assert_eq!(d.lines.len(), 9);
        assert!(d.worst_invariant() < 1e-6, "{}", d.worst_invariant());
    }
}

#[test]
fn real_energy_diagrams_are_mirror_symmetric() {
    for e in [0.2, 0.6, 2.0] {
        let d = trace_stokes_lines(&ModelSpec::hbar(1.0), c(e, 0.0)).unwrap();
        assert!(d.reflection_distance(25.0) < 1e-4);
    }
}

#[test]
fn escape_line_at_the_upper_limit_energy() {
    let d = trace_stokes_lines(&ModelSpec::hbar(1.0), -e0()).unwrap();
    let eta = &d.lines[d.eta.unwrap()];
    assert!((d.turning_points.roots[eta.start] - 2.0 / 3f64.sqrt()).norm() < 1e-5);
    assert!(eta.points.iter().skip(1).all(|z| z.re > 0.0));
    let fit = escape_line_asymptote(&ModelSpec::hbar(1.0), -e0()).unwrap();
    assert!(((fit.c_eff - C) / C).abs() < 0.01, "{fit:?}");
}

#[test]
fn escape_line_at_the_lower_limit_energy_is_mirrored() {
    let fit = escape_line_asymptote(&ModelSpec::hbar(1.0), e0()).unwrap();
    assert!(((fit.c_eff + C) / C).abs() < 0.01, "{fit:?}");
}

#[test]
fn escape_line_at_real_energy_has_no_offset() {
    let fit = escape_line_asymptote(&ModelSpec::hbar(1.0), c(0.5, 0.0)).unwrap();
    assert!(fit.c_eff.abs() < 0.01);
}

#[test]
fn short_traces_report_partial_data() {
    let opts = TraceOptions {
        max_length: 12.0,
        ..TraceOptions::default()
    };
    let err = escape_line_fit_with(&ModelSpec::hbar(1.0), -e0(), 10.0, 20.0, &opts).unwrap_err();
    assert!(matches!(err, bwlab_core::Error::NotFound(_)), "{err}");
}

#[test]
fn oscillatory_range_joins_the_outer_points_only_above_the_critical_energy() {
    let spec = ModelSpec::hbar(1.0);
    let below = trace_stokes_lines(&spec, c(0.2, 0.0)).unwrap();
    assert!(below.rho.is_none());
    assert!(below.connections.is_empty());
    for e in [0.5, 2.0] {
        let above = trace_stokes_lines(&spec, c(e, 0.0)).unwrap();
        let l = above.turning_points.labels.unwrap();
        assert!(above.connections.contains(&(l.minus.min(l.plus), l.minus.max(l.plus))));
        let i0 = above.turning_points.roots[l.i0];
        let rho = above.rho.unwrap();
        assert!(rho.iter().all(|z| (z - i0).norm() > 1e-2));
        let cross = rho.iter().min_by(|a, b| a.re.abs().partial_cmp(&b.re.abs()).unwrap()).unwrap();
        assert!(cross.im < i0.im);
    }
}

#[test]
fn pure_cubic_lines_scale_with_the_cube_root_of_energy() {
    let spec = ModelSpec::alpha(c(0.0, 0.0));
    let a = trace_stokes_lines(&spec, c(1.0, 0.0)).unwrap();
    let b = trace_stokes_lines(&spec, c(8.0, 0.0)).unwrap();
    let scaled: Vec<Vec<C64>> = a.polylines().iter().map(|l| l.iter().map(|z| z * 2.0).collect()).collect();
    assert!(hausdorff(&scaled, &b.polylines(), 20.0) < 1e-5);
}

#[test]
fn critical_energy_and_its_bracket() {
    let spec = ModelSpec::hbar(1.0);
    assert_ne!(topology_indicator(&spec, 0.1).unwrap(), topology_indicator(&spec, 0.9).unwrap());
    let ce = critical_energy(&spec).unwrap();
    assert!((ce.value - 0.352268).abs() < 5e-4, "{ce:?}");
    assert_eq!(ce.changes.len(), 1);
    assert!(ce.bracket.0 <= ce.value + 1e-4 && ce.value - 1e-4 <= ce.bracket.1);
    assert!(ce.refined_residual.unwrap() < 1e-10);
    assert_eq!(topology_indicator(&spec, ce.value - 1e-3).unwrap(), Some(ce.certificate.0));
    assert_eq!(topology_indicator(&spec, ce.value + 1e-3).unwrap(), Some(ce.certificate.1));
}

#[test]
fn real_form_instability_is_at_c() {
    let ce = critical_energy(&ModelSpec::real_cubic(1.0)).unwrap();
    assert!((ce.value - C).abs() < 1e-5, "{ce:?}");
}

#[test]
fn pure_cubic_action_scaling() {
    let spec = ModelSpec::alpha(c(0.0, 0.0));
    let j1 = action_integral(&spec, c(1.0, 0.0), Contour::GammaM).unwrap().j;
    let j2 = action_integral(&spec, c(2.0, 0.0), Contour::GammaM).unwrap().j;
    assert!((j2 / j1 - 2f64.powf(5.0 / 6.0)).norm() < 1e-6);
}

#[test]
fn full_action_is_twice_the_real_part_of_one_pair() {
    let spec = ModelSpec::hbar(1.0);
    for e in [0.4, 0.8, 3.0] {
        let full = action_integral(&spec, c(e, 0.0), Contour::GammaM).unwrap().j;
        let plus = action_integral(&spec, c(e, 0.0), Contour::GammaPlus).unwrap().j;
        let minus = action_integral(&spec, c(e, 0.0), Contour::GammaMinus).unwrap().j;
        assert!((full - 2.0 * plus.re).norm() < 1e-8);
        assert!((plus - minus.conj()).norm() < 1e-8);
    }
}

#[test]
fn quadrature_converges() {
    let spec = ModelSpec::hbar(1.0);
    for e in [c(0.35, 0.0), c(0.1, -0.3), c(2.0, 0.0)] {
        let a = action_integral_n(&spec, e, Contour::GammaPlus, 256).unwrap();
        let b = action_integral_n(&spec, e, Contour::GammaPlus, 512).unwrap();
        assert!((a.j - b.j).norm() < 1e-9);
    }
}

#[test]
fn harmonic_wkb_is_exact() {
    let spec = ModelSpec::beta(c(0.0, 0.0));
    for n in 0..4 {
        let w = solve_wkb_level(&spec, n, Quantization::Cc3, Side::Plus, None).unwrap();
        assert!((w.energy - (2 * n + 1) as f64).norm() < 1e-10);
    }
}

#[test]
fn wkb_error_is_second_order() {
    let err = |h: f64| {
        let spec = ModelSpec::hbar(h);
        let w = solve_wkb_level(&spec, 0, Quantization::Cc1, Side::Plus, None).unwrap();
        let p = solve_eigenvalue(&spec, w.energy, &SolveOptions::default()).unwrap();
        (p.energy - w.energy).norm()
    };
    let (a, b, d) = (err(0.1), err(0.05), err(0.025));
    for r in [a / b, b / d] {
        assert!((3.0..=5.0).contains(&r), "{a} {b} {d}");
    }
}

#[test]
fn minus_branch_wkb_is_the_conjugate() {
    let spec = ModelSpec::hbar(0.05);
    let p = solve_wkb_level(&spec, 1, Quantization::Cc1, Side::Plus, None).unwrap();
    let m = solve_wkb_level(&spec, 1, Quantization::Cc1, Side::Minus, None).unwrap();
    assert!((p.energy - m.energy.conj()).norm() < 1e-10);
    assert!(p.energy.im < 0.0);
}

#[test]
fn exact_rule_at_large_hbar() {
    let spec = ModelSpec::hbar(3.0);
    let levels = spectrum_scan(&spec, EnergyWindow::new(0.01, 30.0, -1.0, 1.0), 3, &ScanOptions::default()).unwrap();
    let r = exact_quantization_residual(&levels[2], Contour::GammaM).unwrap();
    assert!(r.residual < 1e-7, "{r:?}");
}

#[test]
fn exact_rule_around_the_well() {
    let h = 0.05;
    let spec = ModelSpec::hbar(h);
    let guess = e0() + Side::Plus.frequency() * h * 3.0;
    let p = solve_eigenvalue(&spec, guess, &SolveOptions::default()).unwrap();
    let r = exact_quantization_residual(&p, Contour::GammaPlus).unwrap();
    assert!(r.residual < 1e-7, "{r:?}");
}

#[test]
fn zero_free_contour_leaves_the_label_term() {
    let h = 0.05;
    let spec = ModelSpec::hbar(h);
    let guess = e0() + Side::Plus.frequency() * h * 5.0;
    let p = solve_eigenvalue(&spec, guess, &SolveOptions::default()).unwrap();
    let ef = bwlab_core::zeros::Eigenfunction::new(&p).unwrap();
    let path = Rect::centered(c(1.6, 0.0), 0.1).path();
    let r = residual_on(&ef, &path, 2, Contour::GammaPlus).unwrap();
    assert!((r.residual - 2.0 * h).abs() < 1e-9, "{r:?}");
}

#[test]
fn divergence_exclusion_grows_with_energy() {
    let a = divergence_exclusion_check(100.0, 0, 1.0).unwrap();
    assert!((a.k - 100f64.powf(-5.0 / 6.0)).abs() < 1e-15);
    assert!(a.mismatch > 0.1);
    let b = divergence_exclusion_check(1e4, 0, 1.0).unwrap();
    assert!(b.mismatch > a.mismatch);
    assert!(harmonic_balance(3, 1.0).unwrap() < 1e-12);
    assert!(divergence_exclusion_check(5.0, 0, 1.0).is_err());
}

#[test]
fn contours_too_close_to_a_third_point_are_rejected() {
    // At small energy the three turning points of iz³ form a tiny triangle,
    // so an ellipse with the fixed clearance around one side swallows the third.
    let err = action_integral(&ModelSpec::alpha(c(0.0, 0.0)), c(1e-3, 0.0), Contour::GammaPlus).unwrap_err();
    assert!(matches!(err, bwlab_core::Error::Geometry(_)), "{err}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn actions_are_conjugate_for_real_energy(e in 0.05..4.0f64) {
        let spec = ModelSpec::hbar(1.0);
        let p = action_integral(&spec, c(e, 0.0), Contour::GammaPlus).unwrap().j;
        let m = action_integral(&spec, c(e, 0.0), Contour::GammaMinus).unwrap().j;
        prop_assert!((p - m.conj()).norm() < 1e-8);
    }

    #[test]
    fn diagram_symmetry_for_real_energy(e in 0.05..3.0f64) {
        let d = trace_stokes_lines(&ModelSpec::hbar(1.0), c(e, 0.0)).unwrap();
        prop_assert!(d.reflection_distance(25.0) < 1e-4);
        prop_assert!(d.worst_invariant() < 1e-6);
    }
}
