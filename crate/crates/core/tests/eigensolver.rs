use bwlab_core::eigensolver::{solve_eigenvalue, spectrum_scan, Branch, EnergyWindow, ScanOptions, SolveOptions};
use bwlab_core::models::{e0, scale_map, Side, Target};
use bwlab_core::{ModelSpec, C64};

fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

/// Eigenvalue of the three-point finite-difference matrix for `−d²/dx² + V`
/// on `[−L, L]` with Dirichlet ends, by Newton on the characteristic
/// polynomial evaluated through the tridiagonal recurrence.
fn grid_level(v: impl Fn(f64) -> C64, l: f64, n: usize, guess: C64) -> C64 {
    let h = 2.0 * l / (n + 1) as f64;
    let off = 1.0 / (h * h * h * h);
    let diag: Vec<C64> = (1..=n).map(|j| v(-l + h * j as f64) + 2.0 / (h * h)).collect();
    let mut e = guess;
    for _ in 0..50 {
        // r_k = d_k − E − off / r_{k−1};  d ln det / dE = Σ r_k′ / r_k.
        let mut r = diag[0] - e;
        let mut dr = c(-1.0, 0.0);
        let mut dlog = dr / r;
        for d in &diag[1..] {
            let nr = *d - e - off / r;
            let ndr = c(-1.0, 0.0) + off * dr / (r * r);
            r = nr;
            dr = ndr;
            dlog += dr / r;
        }
        let step = -1.0 / dlog;
        e += step;
        if step.norm() < 1e-13 {
            break;
        }
    }
    e
}

#[test]
fn grid_oracle_reproduces_harmonic_levels() {
    let e = grid_level(|x| c(x * x, 0.0), 8.0, 3999, c(1.1, 0.0));
    assert!((e - 1.0).norm() < 1e-5, "{e}");
}

#[test]
fn pure_cubic_ground_level_matches_grid_oracle() {
    let v = |x: f64| c(0.0, x * x * x);
    let coarse = grid_level(v, 8.0, 1599, c(1.1, 0.0));
    let fine = grid_level(v, 8.0, 3199, c(1.1, 0.0));
    let oracle = (4.0 * fine - coarse) / 3.0;
    let p = solve_eigenvalue(&ModelSpec::alpha(c(0.0, 0.0)), c(1.1, 0.0), &SolveOptions::default()).unwrap();
    assert!((p.energy - oracle).norm() < 1e-5, "{} vs {}", p.energy, oracle);
    assert_eq!(p.branch, Branch::RealPositive);
    assert_eq!(p.label, Some(0));
    assert!(p.energy.im.abs() <= 1e-8 && p.energy.re > 0.0);
}

#[test]
fn harmonic_window_scan() {
    let spec = ModelSpec::beta(c(0.0, 0.0));
    let levels = spectrum_scan(&spec, EnergyWindow::new(0.0, 12.0, -1.0, 1.0), 20, &ScanOptions::default()).unwrap();
    let e: Vec<f64> = levels.iter().map(|p| p.energy.re).collect();
    assert_eq!(e.len(), 6, "{e:?}");
    for (k, p) in levels.iter().enumerate() {
        assert!((p.energy - (2 * k + 1) as f64).norm() < 1e-8, "{}", p.energy);
        assert_eq!(p.label, Some(k));
    }
}

#[test]
fn real_levels_above_the_crossings() {
    // Levels scale as ħ^{6/5}: at ħ = 4 the fourth one sits near 58.
    let spec = ModelSpec::hbar(4.0);
    let levels = spectrum_scan(&spec, EnergyWindow::new(0.01, 80.0, -1.0, 1.0), 20, &ScanOptions::default()).unwrap();
    assert!(levels.len() >= 4, "{}", levels.len());
    for w in levels.windows(2) {
        assert!(w[1].energy.re > w[0].energy.re);
    }
    for p in &levels {
        assert!(p.energy.im.abs() < 1e-8 && p.energy.re > 0.0, "{}", p.energy);
        assert_eq!(p.branch, Branch::RealPositive);
    }
}

#[test]
fn levels_at_hbar_two_are_real() {
    let spec = ModelSpec::hbar(2.0);
    let levels = spectrum_scan(&spec, EnergyWindow::new(0.01, 12.0, -1.0, 1.0), 20, &ScanOptions::default()).unwrap();
    assert!(!levels.is_empty());
    for p in &levels {
        assert!(p.energy.im.abs() < 1e-8 && p.energy.re > 0.0, "{}", p.energy);
    }
}

#[test]
fn small_hbar_levels_come_in_conjugate_pairs() {
    let h = 0.05;
    let spec = ModelSpec::hbar(h);
    // Window around the upper limit point +ic.
    let upper = spectrum_scan(&spec, EnergyWindow::new(-0.2, 0.2, 0.2, 0.39), 8, &ScanOptions::default()).unwrap();
    assert!(upper.len() >= 2, "{}", upper.len());
    for p in &upper {
        assert!(p.energy.im > 0.0);
        assert_eq!(p.branch, Branch::Minus);
        let q = solve_eigenvalue(&spec, p.energy.conj(), &SolveOptions::fast()).unwrap();
        assert_eq!(q.branch, Branch::Plus);
        assert!((q.energy - p.energy.conj()).norm() < 1e-8, "{} {}", q.energy, p.energy);
    }
}

#[test]
fn perturbative_labels_at_small_hbar() {
    let h = 0.05;
    let spec = ModelSpec::hbar(h);
    for n in 0..3 {
        let guess = e0() + Side::Plus.frequency() * h * (2 * n + 1) as f64;
        let p = solve_eigenvalue(&spec, guess, &SolveOptions::default()).unwrap();
        assert!((p.energy - guess).norm() < 3.0 * (h * (2 * n + 1) as f64).powi(2), "{}", p.energy);
        assert_eq!(p.branch, Branch::Plus);
        assert_eq!(p.nodes.local, Some(n));
        assert_eq!(p.label, Some(n));
    }
}

#[test]
fn hbar_and_alpha_pictures_agree() {
    let h = 0.5;
    let spec = ModelSpec::hbar(h);
    let map = scale_map(&spec, Target::AlphaHat).unwrap();
    let p = solve_eigenvalue(&spec, c(0.5, 0.0), &SolveOptions::fast()).unwrap();
    let q = solve_eigenvalue(&map.target, map.energy(p.energy), &SolveOptions::fast()).unwrap();
    assert!((q.energy - map.energy(p.energy)).norm() < 1e-7, "{} {}", q.energy, map.energy(p.energy));
}

#[test]
fn duplicate_levels_are_flagged() {
    let spec = ModelSpec::beta(c(0.0, 0.0));
    let opts = SolveOptions {
        known: vec![c(3.0, 0.0)],
        ..SolveOptions::fast()
    };
    let p = solve_eigenvalue(&spec, c(3.2, 0.0), &opts).unwrap();
    assert_eq!(p.duplicate_of, Some(0));
}

#[test]
fn deterministic_solves() {
    let spec = ModelSpec::hbar(1.0);
    let a = solve_eigenvalue(&spec, c(3.0, 0.1), &SolveOptions::fast()).unwrap();
    let b = solve_eigenvalue(&spec, c(3.0, 0.1), &SolveOptions::fast()).unwrap();
    assert_eq!(a.energy, b.energy);
}

#[test]
fn non_convergence_is_reported() {
    let spec = ModelSpec::hbar(1.0);
    let opts = SolveOptions {
        max_iter: 1,
        ..SolveOptions::fast()
    };
    let err = solve_eigenvalue(&spec, c(2.0, 0.0), &opts).unwrap_err();
    assert!(matches!(err, bwlab_core::Error::Convergence { .. }), "{err}");
}
