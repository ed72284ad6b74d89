use bwlab_core::continuation::{crossing_report, edge_check, locate_branch_point, monodromy_loop, BranchPoint, CrossingRow};
use bwlab_core::eigensolver::{solve_eigenvalue, spectrum_scan, EigenPair, EnergyWindow, LabelScheme, ScanOptions, SolveOptions};
use bwlab_core::models::{Family, Side};
use bwlab_core::semiclassics::{
    critical_energy, escape_line_asymptote, exact_quantization_residual, solve_wkb_level, trace_stokes_lines, Contour,
    Quantization,
};
use bwlab_core::zeros::{cone_depth, locate_zeros, Eigenfunction, Rect, ZeroClass};
use bwlab_core::{Error, ModelSpec, Result, C64};
use serde_json::{json, Value};

use crate::config::{Cli, Command, Rule, SideArg, Window};
use crate::output::Sink;

pub struct Outcome {
    pub summary: String,
    pub result: Value,
}

fn fmt_c(z: C64) -> String {
    format!("{:.12}{:+.12}i", z.re, z.im)
}

fn solve_options(cli: &Cli) -> SolveOptions {
    SolveOptions {
        tol: cli.global.tol,
        ..SolveOptions::default()
    }
}

fn default_window(spec: &ModelSpec) -> Window {
    match spec.family {
        Family::BetaTilde => Window([0.0, 12.0, -0.5, 0.5]),
        _ => Window([0.01, 30.0, -1.0, 1.0]),
    }
}

pub fn run(cli: &Cli, spec: ModelSpec, sink: &mut Sink) -> Result<Outcome> {
    match &cli.command {
        Command::Spectrum { window, count } => spectrum(cli, spec, window.unwrap_or_else(|| default_window(&spec)), *count, sink),
        Command::Branchpoint { n, monodromy, radius, edge } => branchpoint(spec, *n, *monodromy, *radius, *edge, sink),
        Command::Stokes { energy, e_critical, escape } => stokes(spec, energy.c64(), *e_critical, *escape, sink),
        Command::Zeros { m, energy } => zeros(cli, spec, *m, energy.map(|e| e.c64()), sink),
        Command::Wkb { n, rule, side, exact } => wkb(cli, spec, *n, *rule, *side, *exact, sink),
        Command::Report { n_max } => report(spec, *n_max, sink),
    }
}

fn spectrum(cli: &Cli, spec: ModelSpec, w: Window, count: usize, sink: &mut Sink) -> Result<Outcome> {
    let [a, b, c, d] = w.0;
    let opts = ScanOptions {
        solve: solve_options(cli),
        seed: cli.global.seed,
        ..ScanOptions::default()
    };
    let levels = spectrum_scan(&spec, EnergyWindow::new(a, b, c, d), count, &opts)?;
    let records: Vec<_> = levels.iter().map(EigenPair::record).collect();
    let mut csv = String::from("label,label_scheme,branch,re_E,im_E,residual_w,nodes_lower,nodes_imag\n");
    let mut summary = format!("{} level(s) in [{a}, {b}] x [{c}, {d}]\n", levels.len());
    for p in &levels {
        let label = p.label.map(|l| l.to_string()).unwrap_or_default();
        let opt = |v: Option<usize>| v.map(|l| l.to_string()).unwrap_or_default();
        csv.push_str(&format!(
            "{label},{:?},{:?},{:.15e},{:.15e},{:.3e},{},{}\n",
            p.label_scheme,
            p.branch,
            p.energy.re,
            p.energy.im,
            p.residual_w,
            opt(p.nodes.lower),
            opt(p.nodes.imaginary)
        ));
        summary.push_str(&format!("  m={label:>3}  E = {}  [{:?}]\n", fmt_c(p.energy), p.branch));
    }
    sink.json("spectrum.json", &records)?;
    sink.csv("spectrum.csv", &csv)?;
    Ok(Outcome {
        summary,
        result: serde_json::to_value(&records).unwrap(),
    })
}

fn require_hbar(spec: &ModelSpec, what: &str) -> Result<()> {
    if spec.family != Family::Hbar {
        return Err(Error::Config(format!("{what} is defined for the hbar family only")));
    }
    Ok(())
}

fn perm_cycle(perm: &[usize], pair: (usize, usize)) -> String {
    let labels = [pair.0, pair.1];
    if perm == [1, 0] {
        format!("({} {})", labels[0], labels[1])
    } else {
        "()".to_string()
    }
}

fn branchpoint(spec: ModelSpec, n: usize, monodromy: bool, radius: f64, edge: bool, sink: &mut Sink) -> Result<Outcome> {
    require_hbar(&spec, "branchpoint")?;
    if n > 5 {
        return Err(Error::Config("branchpoint supports n <= 5".into()));
    }
    if !(radius > 0.0 && radius < 0.5) {
        return Err(Error::Config("--radius must lie in (0, 0.5)".into()));
    }
    let bp = locate_branch_point(n)?;
    let mut summary = format!(
        "n = {n}: hbar_n = {:.9}, E_c = {:.9}, pair ({}, {}), sqrt exponent {:.4}\n",
        bp.hbar_n, bp.e_c, bp.pair.0, bp.pair.1, bp.fit.exponent
    );
    let mut result = json!({ "branch_point": &bp });
    if monodromy {
        let m = monodromy_loop(&bp, radius * bp.hbar_n, 1)?;
        let twice = monodromy_loop(&bp, radius * bp.hbar_n, 2)?;
        let cycle = perm_cycle(&m.permutation, bp.pair);
        summary.push_str(&format!(
            "monodromy (radius {radius}·hbar_n): one loop {cycle}, two loops {}\n",
            perm_cycle(&twice.permutation, bp.pair)
        ));
        result["monodromy"] = json!({ "permutation": cycle, "once": m, "twice": twice });
    }
    if edge {
        let e = edge_check(&bp, 0.8, 1e-3)?;
        summary.push_str(&format!(
            "edge at hbar = {:.6} + 1e-3 i: |E_lo − E_n^+| = {:.3e}, |E_hi − E_n^-| = {:.3e}\n",
            e.hbar, e.gap_lower, e.gap_upper
        ));
        result["edge"] = serde_json::to_value(&e).unwrap();
    }
    sink.json(&format!("branchpoint_n{n}.json"), &result)?;
    sink.markdown(&format!("branchpoint_n{n}.md"), &branch_row(&bp))?;
    let mut s_csv = String::from("hbar,re_s,im_s\n");
    for (h, s) in &bp.s_samples {
        s_csv.push_str(&format!("{h:.15e},{:.15e},{:.15e}\n", s.re, s.im));
    }
    sink.csv(&format!("branchpoint_n{n}_s.csv"), &s_csv)?;
    Ok(Outcome { summary, result })
}

fn branch_row(bp: &BranchPoint) -> String {
    format!(
        "| n | hbar_n | E_c | pair | a | b | exponent |\n|---|---|---|---|---|---|---|\n| {} | {:.9} | {:.9} | ({}, {}) | {:.6} | {:.6} | {:.4} |\n",
        bp.n, bp.hbar_n, bp.e_c, bp.pair.0, bp.pair.1, bp.fit.a, bp.fit.b, bp.fit.exponent
    )
}

fn stokes(spec: ModelSpec, e: C64, e_critical: bool, escape: bool, sink: &mut Sink) -> Result<Outcome> {
    if e_critical {
        let ec = critical_energy(&spec)?;
        sink.json("critical_energy.json", &ec)?;
        return Ok(Outcome {
            summary: format!("E^c = {:.8}  (bracket [{:.8}, {:.8}])\n", ec.value, ec.bracket.0, ec.bracket.1),
            result: serde_json::to_value(&ec).unwrap(),
        });
    }
    let diagram = trace_stokes_lines(&spec, e)?;
    let topo = diagram.topology();
    let mut result = json!({ "topology": &topo, "worst_invariant": diagram.worst_invariant() });
    let mut summary = format!(
        "E = {}: {} lines, connections {:?}, rho {}, escape line {:?}\n",
        fmt_c(e),
        diagram.lines.len(),
        diagram.connections,
        if diagram.rho.is_some() { "found" } else { "absent" },
        diagram.eta
    );
    if escape {
        let fit = escape_line_asymptote(&spec, e)?;
        summary.push_str(&format!("escape line: x(y)(y^2 + 1/2) -> {:.6} on y in [10, 20]\n", fit.c_eff));
        result["escape_fit"] = serde_json::to_value(&fit).unwrap();
    }
    sink.json("stokes.json", &result)?;
    sink.csv("stokes.csv", &diagram.to_csv())?;
    Ok(Outcome { summary, result })
}

/// The real level with node label `m`.
fn real_level(spec: &ModelSpec, m: usize, opts: &SolveOptions) -> Result<EigenPair> {
    if let Ok(w) = solve_wkb_level(spec, m, Quantization::Cc3, Side::Plus, None) {
        if let Ok(p) = solve_eigenvalue(spec, C64::new(w.energy.re, 0.0), opts) {
            if p.label == Some(m) {
                return Ok(p);
            }
        }
    }
    let top = solve_wkb_level(spec, m + 1, Quantization::Cc3, Side::Plus, None)
        .map(|w| w.energy.re)
        .unwrap_or(30.0);
    let levels = spectrum_scan(spec, EnergyWindow::new(0.01, 2.0 * top + 1.0, -1.0, 1.0), m + 2, &ScanOptions::default())?;
    levels
        .into_iter()
        .find(|p| p.label == Some(m) && p.label_scheme == LabelScheme::NodeCount)
        .ok_or_else(|| Error::NotFound(format!("no real level with {m} nodes found")))
}

fn zeros(cli: &Cli, spec: ModelSpec, m: Option<usize>, energy: Option<C64>, sink: &mut Sink) -> Result<Outcome> {
    let opts = solve_options(cli);
    let pair = match (m, energy) {
        (_, Some(e)) => solve_eigenvalue(&spec, e, &opts)?,
        (Some(m), None) => real_level(&spec, m, &opts)?,
        (None, None) => return Err(Error::Config("zeros needs --m or --E".into())),
    };
    let ef = Eigenfunction::new(&pair)?;
    let y = cone_depth(&spec, pair.energy);
    let set = locate_zeros(&ef, Rect::new(-2.0 * y, 2.0 * y, -y, y), 0)?;
    let nodes = set.nodes();
    let imaginary = set.count(ZeroClass::ImaginaryNode);
    let summary = format!(
        "E = {} [{:?}], label {:?}: {} zero(s) located, {nodes} node(s), {imaginary} imaginary, reflection mismatch {:.2e}\n",
        fmt_c(pair.energy),
        pair.branch,
        pair.label,
        set.zeros.len(),
        set.reflection_mismatch()
    );
    let result = json!({
        "level": pair.record(),
        "nodes": nodes,
        "imaginary_nodes": imaginary,
        "zeros": &set,
    });
    sink.json("zeros.json", &result)?;
    sink.csv("zeros.csv", &set.to_csv())?;
    Ok(Outcome { summary, result })
}

fn wkb(cli: &Cli, spec: ModelSpec, n: usize, rule: Rule, side: SideArg, exact: bool, sink: &mut Sink) -> Result<Outcome> {
    let q = match rule {
        Rule::Cc1 => Quantization::Cc1,
        Rule::Cc3 => Quantization::Cc3,
    };
    let side = match side {
        SideArg::Plus => Side::Plus,
        SideArg::Minus => Side::Minus,
    };
    let level = solve_wkb_level(&spec, n, q, side, None)?;
    let mut summary = format!("WKB {:?} n = {n}: E = {}\n", q, fmt_c(level.energy));
    let mut result = json!({ "wkb": &level });
    if exact {
        let mut pair = solve_eigenvalue(&spec, level.energy, &solve_options(cli))?;
        pair.label = Some(n);
        let contour = match (q, side) {
            (Quantization::Cc3, _) => Contour::GammaM,
            (Quantization::Cc1, Side::Plus) => Contour::GammaPlus,
            (Quantization::Cc1, Side::Minus) => Contour::GammaMinus,
        };
        let res = exact_quantization_residual(&pair, contour)?;
        let diff = (pair.energy - level.energy).norm();
        summary.push_str(&format!(
            "exact E = {}, |E - E_WKB| = {diff:.3e}, exact-rule residual {:.2e}\n",
            fmt_c(pair.energy),
            res.residual
        ));
        result["exact"] = json!({ "level": pair.record(), "difference": diff, "residual": res });
    }
    sink.json("wkb.json", &result)?;
    Ok(Outcome { summary, result })
}

fn report(spec: ModelSpec, n_max: usize, sink: &mut Sink) -> Result<Outcome> {
    require_hbar(&spec, "report")?;
    if n_max > 5 {
        return Err(Error::Config("report supports --n-max <= 5".into()));
    }
    let r = crossing_report(n_max)?;
    let mut csv = String::from("n,hbar_n,E_c,two_n_hbar,J2\n");
    for CrossingRow { n, hbar_n, e_c, two_n_hbar, j2 } in &r.rows {
        csv.push_str(&format!("{n},{hbar_n:.12e},{e_c:.12e},{two_n_hbar:.12e},{j2:.12e}\n"));
    }
    let md = r.markdown();
    sink.json("report.json", &r)?;
    sink.csv("report.csv", &csv)?;
    sink.markdown("report.md", &md)?;
    Ok(Outcome {
        summary: md,
        result: serde_json::to_value(&r).unwrap(),
    })
}
