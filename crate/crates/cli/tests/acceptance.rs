//! One line per acceptance criterion; exits non-zero if any fails.

use std::process::Command;
use std::time::{Duration, Instant};

use bwlab_core::continuation::{crossing_report, edge_check, locate_branch_point, monodromy_loop};
use bwlab_core::eigensolver::{solve_eigenvalue, spectrum_scan, EnergyWindow, ScanOptions, SolveOptions};
use bwlab_core::models::{e0, Side};
use bwlab_core::semiclassics::{
    escape_line_asymptote, exact_quantization_residual, solve_wkb_level, Contour, Quantization,
};
use bwlab_core::zeros::{cone_depth, flux_balance, locate_zeros, Eigenfunction, Rect};
use bwlab_core::{ModelSpec, C64};
use serde_json::Value;

const E_CRITICAL: f64 = 0.352268;

struct Report {
    failed: usize,
    lines: Vec<(usize, String)>,
}

impl Report {
    fn line(&mut self, id: usize, name: &str, ok: bool, elapsed: Duration, detail: String) {
        if !ok {
            self.failed += 1;
        }
        let line = format!(
            "[{}] {id:>2} {name}: {detail} ({:.2} s)",
            if ok { "PASS" } else { "FAIL" },
            elapsed.as_secs_f64()
        );
        self.lines.push((id, line));
    }
}

fn sci(v: &[f64]) -> String {
    let parts: Vec<String> = v.iter().map(|x| format!("{x:.3e}")).collect();
    format!("[{}]", parts.join(", "))
}

fn bwlab(args: &[&str]) -> Result<Value, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_bwlab"))
        .args(args)
        .arg("--json")
        .output()
        .map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(String::from_utf8_lossy(&out.stderr).into_owned());
    }
    serde_json::from_slice(&out.stdout).map_err(|e| e.to_string())
}

fn harmonic(r: &mut Report) {
    let t = Instant::now();
    let res = bwlab(&["spectrum", "--family", "beta", "--beta", "0", "--window", "0,12"]);
    let el = t.elapsed();
    match res {
        Ok(doc) => {
            let levels = doc["result"].as_array().cloned().unwrap_or_default();
            let worst = (0..6)
                .map(|n| {
                    levels.get(n).map_or(f64::INFINITY, |l| {
                        let e = C64::new(l["re_E"].as_f64().unwrap_or(f64::NAN), l["im_E"].as_f64().unwrap_or(f64::NAN));
                        (e - (2 * n + 1) as f64).norm()
                    })
                })
                .fold(0.0, f64::max);
            let ok = levels.len() == 6 && worst < 1e-8 && el < Duration::from_secs(5);
            r.line(1, "harmonic spectrum", ok, el, format!("{} levels, max |E_n - (2n+1)| = {worst:.2e} (< 1e-8, < 5 s)", levels.len()));
        }
        Err(e) => r.line(1, "harmonic spectrum", false, el, e),
    }
}

fn critical(r: &mut Report) {
    let t = Instant::now();
    let res = bwlab(&["stokes", "--E-critical"]);
    let el = t.elapsed();
    match res.map(|d| d["result"]["value"].as_f64()) {
        Ok(Some(v)) => {
            let err = (v - E_CRITICAL).abs();
            let ok = err < 5e-4 && el < Duration::from_secs(60);
            r.line(2, "critical energy", ok, el, format!("E^c = {v:.8}, |E^c - {E_CRITICAL}| = {err:.2e} (< 5e-4, < 60 s)"));
        }
        Ok(None) => r.line(2, "critical energy", false, el, "no value in output".into()),
        Err(e) => r.line(2, "critical energy", false, el, e),
    }
}

fn slope(r: &mut Report) {
    let t = Instant::now();
    let c_plus = Side::Plus.frequency();
    let errs: Result<Vec<f64>, String> = [0.04, 0.02, 0.01]
        .iter()
        .map(|&h| {
            let guess = e0() + c_plus * h;
            let opts = SolveOptions {
                count_nodes: false,
                ..SolveOptions::default()
            };
            solve_eigenvalue(&ModelSpec::hbar(h), guess, &opts)
                .map(|p| ((p.energy - e0()) / h - c_plus).norm())
                .map_err(|e| e.to_string())
        })
        .collect();
    let el = t.elapsed();
    match errs {
        Ok(errs) => {
            let ratios: Vec<f64> = errs.windows(2).map(|w| w[0] / w[1]).collect();
            let ok = ratios.iter().all(|q| (1.6..=2.4).contains(q));
            r.line(3, "perturbative slope", ok, el, format!("errors {}, halving ratios {ratios:.3?} (in [1.6, 2.4])", sci(&errs)));
        }
        Err(e) => r.line(3, "perturbative slope", false, el, e),
    }
}

fn first_branch_point(r: &mut Report) {
    let t = Instant::now();
    let run = || -> Result<String, String> {
        let bp = locate_branch_point(0).map_err(|e| e.to_string())?;
        let m = monodromy_loop(&bp, 0.1 * bp.hbar_n, 1).map_err(|e| e.to_string())?;
        let edge = edge_check(&bp, 0.8, 1e-3).map_err(|e| e.to_string())?;
        let analytic = bp.s_imag < 1e-6 && bp.linearity < 0.02;
        let exponent = (0.45..=0.55).contains(&bp.fit.exponent);
        let edges = edge.gap_lower < 5e-3 && edge.gap_upper < 5e-3;
        let detail = format!(
            "hbar_0 = {:.7}, max |Im s|/|s| = {:.1e}, linearity {:.1e}, exponent {:.4}, one loop {}, edge gaps {:.2e}/{:.2e} (< 5e-3)",
            bp.hbar_n,
            bp.s_imag,
            bp.linearity,
            bp.fit.exponent,
            if m.is_transposition() { "(0 1)" } else { "not (0 1)" },
            edge.gap_lower,
            edge.gap_upper
        );
        if analytic && exponent && m.is_transposition() && edges {
            Ok(detail)
        } else {
            Err(detail)
        }
    };
    let res = run();
    let el = t.elapsed();
    let ok = res.is_ok() && el < Duration::from_secs(300);
    r.line(4, "first branch point", ok, el, res.unwrap_or_else(|e| e) + " (< 5 min)");
}

fn node_laws(r: &mut Report) {
    let t = Instant::now();
    let spec = ModelSpec::hbar(3.0);
    let run = || -> Result<String, String> {
        let levels = spectrum_scan(&spec, EnergyWindow::new(0.01, 60.0, -1.0, 1.0), 4, &ScanOptions::default())
            .map_err(|e| e.to_string())?;
        let mut ok = levels.len() == 4;
        let mut parts = Vec::new();
        for (m, p) in levels.iter().enumerate() {
            let ef = Eigenfunction::new(p).map_err(|e| e.to_string())?;
            let y = cone_depth(&spec, p.energy);
            let set = locate_zeros(&ef, Rect::new(-2.0 * y, 2.0 * y, -y, y), 0).map_err(|e| e.to_string())?;
            let mirror = set.reflection_mismatch();
            ok &= p.nodes.lower == Some(m) && p.nodes.imaginary == Some(m % 2) && mirror < 1e-7;
            parts.push(format!(
                "m={m}: {:?} nodes, {:?} imaginary, mirror {mirror:.1e}",
                p.nodes.lower, p.nodes.imaginary
            ));
        }
        let detail = parts.join("; ");
        if ok {
            Ok(detail)
        } else {
            Err(detail)
        }
    };
    let res = run();
    let el = t.elapsed();
    r.line(6, "node laws at hbar = 3", res.is_ok(), el, res.unwrap_or_else(|e| e));
}

fn loeffel_martin(r: &mut Report) {
    let t = Instant::now();
    let h = 0.05;
    let run = || -> Result<(f64, f64, f64), String> {
        let guess = (e0() + Side::Plus.frequency() * h).conj();
        let p = solve_eigenvalue(&ModelSpec::hbar(h), guess, &SolveOptions::default()).map_err(|e| e.to_string())?;
        let ef = Eigenfunction::new(&p).map_err(|e| e.to_string())?;
        let fb = flux_balance(&ef, 0.0, 12.0, 5e-4).map_err(|e| e.to_string())?;
        Ok((fb.lhs, fb.rhs, fb.relative_gap()))
    };
    let res = run();
    let el = t.elapsed();
    match res {
        Ok((lhs, rhs, gap)) => r.line(
            7,
            "Loeffel-Martin identity",
            gap < 0.02,
            el,
            format!("lhs {lhs:.6e}, rhs {rhs:.6e}, relative gap {gap:.2e} (< 2%)"),
        ),
        Err(e) => r.line(7, "Loeffel-Martin identity", false, el, e),
    }
}

fn escape(r: &mut Report) {
    let t = Instant::now();
    let c = 2.0 / (3.0 * 3f64.sqrt());
    let res = escape_line_asymptote(&ModelSpec::hbar(1.0), -e0());
    let el = t.elapsed();
    match res {
        Ok(fit) => {
            let rel = (fit.c_eff - c).abs() / c;
            r.line(8, "escape-line asymptote", rel < 0.01, el, format!("fit {:.6} vs c = {c:.6}, relative {rel:.2e} (< 1%)", fit.c_eff));
        }
        Err(e) => r.line(8, "escape-line asymptote", false, el, e.to_string()),
    }
}

fn wkb_order(r: &mut Report) {
    let t = Instant::now();
    let run = || -> Result<(Vec<f64>, Vec<f64>, f64), String> {
        let mut errs = Vec::new();
        let mut worst: f64 = 0.0;
        for h in [0.1, 0.05, 0.025] {
            let spec = ModelSpec::hbar(h);
            let w = solve_wkb_level(&spec, 0, Quantization::Cc1, Side::Plus, None).map_err(|e| e.to_string())?;
            let mut p = solve_eigenvalue(&spec, w.energy, &SolveOptions::default()).map_err(|e| e.to_string())?;
            errs.push((p.energy - w.energy).norm());
            p.label = Some(0);
            worst = worst.max(exact_quantization_residual(&p, Contour::GammaPlus).map_err(|e| e.to_string())?.residual);
        }
        let spec = ModelSpec::hbar(3.0);
        let levels = spectrum_scan(&spec, EnergyWindow::new(0.01, 30.0, -1.0, 1.0), 3, &ScanOptions::default())
            .map_err(|e| e.to_string())?;
        for p in &levels {
            worst = worst.max(exact_quantization_residual(p, Contour::GammaM).map_err(|e| e.to_string())?.residual);
        }
        let ratios = errs.windows(2).map(|w| w[0] / w[1]).collect();
        Ok((errs, ratios, worst))
    };
    let res = run();
    let el = t.elapsed();
    match res {
        Ok((errs, ratios, worst)) => {
            let ok = ratios.iter().all(|q| (3.0..=5.0).contains(q)) && worst < 1e-7;
            r.line(
                9,
                "WKB order and exact rule",
                ok,
                el,
                format!("errors {}, ratios {ratios:.3?} (in [3, 5]), worst exact residual {worst:.1e} (< 1e-7)", sci(&errs)),
            );
        }
        Err(e) => r.line(9, "WKB order and exact rule", false, el, e),
    }
}

/// Criteria 5 and 10 share the crossings n = 0..=4.
fn crossings(r: &mut Report) {
    let t = Instant::now();
    let res = crossing_report(4);
    let el = t.elapsed();
    let rep = match res {
        Ok(rep) => rep,
        Err(e) => {
            r.line(5, "selection rules", false, el, e.to_string());
            r.line(10, "limit trends", false, el, e.to_string());
            return;
        }
    };
    let pts = &rep.points[..3];
    let pairs_ok = pts.iter().all(|bp| bp.pair == (2 * bp.n, 2 * bp.n + 1));
    let odd_ok = pts.iter().all(|bp| bp.neighbour_gap > 1e-6);
    r.line(
        5,
        "selection rules",
        pairs_ok && odd_ok,
        el,
        format!(
            "pairs {:?}, smallest (2n+1, 2n+2) gaps {} (no coalescence)",
            pts.iter().map(|b| b.pair).collect::<Vec<_>>(),
            sci(&pts.iter().map(|b| b.neighbour_gap).collect::<Vec<_>>())
        ),
    );
    let gaps = &rep.action_gaps[2..=4];
    let gaps_ok = gaps.windows(2).all(|w| w[1] < w[0]);
    let ok = rep.hbar_decreasing && rep.e_c_monotone_towards_critical && gaps_ok;
    r.line(
        10,
        "limit trends",
        ok,
        el,
        format!(
            "hbar_n {:.6?}, E_n^c {:.6?}, |2n hbar_n - J2^c| for n = 2..4 {gaps:.4?}",
            rep.rows.iter().map(|x| x.hbar_n).collect::<Vec<_>>(),
            rep.rows.iter().map(|x| x.e_c).collect::<Vec<_>>()
        ),
    );
}

fn main() {
    let start = Instant::now();
    let mut r = Report { failed: 0, lines: Vec::new() };
    harmonic(&mut r);
    critical(&mut r);
    slope(&mut r);
    first_branch_point(&mut r);
    crossings(&mut r);
    node_laws(&mut r);
    loeffel_martin(&mut r);
    escape(&mut r);
    wkb_order(&mut r);
    r.lines.sort_by_key(|l| l.0);
    for (_, l) in &r.lines {
        println!("{l}");
    }
    let total = start.elapsed();
    let within = total < Duration::from_secs(1800);
    if !within {
        r.failed += 1;
    }
    println!(
        "acceptance: {} failing, total {:.1} s ({})",
        r.failed,
        total.as_secs_f64(),
        if within { "< 30 min" } else { "over 30 min" }
    );
    if r.failed > 0 {
        std::process::exit(1);
    }
}
