//! Continuation of levels in the family parameter and the branch points
//! where pairs of real levels meet.
//!
//! The search for a crossing works with `s(ħ) = (E_{2n+1} − E_{2n})²`. Unlike
//! the individual levels, `s` is single valued and analytic through the
//! branch point, real on the real axis, positive above `ħ_n` and negative
//! below it, so `ħ_n` is a simple real zero of `s`.

use std::sync::OnceLock;

use num_complex::Complex64 as C64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::eigensolver::{solve_eigenvalue, Branch, EigenPair, LabelScheme, SolveOptions};
use crate::error::{Error, Result};
use crate::models::{ModelSpec, Side};
use crate::semiclassics::{action_integral, critical_energy, solve_wkb_level, Contour, Quantization};

#[derive(Clone, Debug)]
pub struct ContinuationOptions {
    /// First step along the path, as a fraction of its length.
    pub initial_step: f64,
    pub max_step: f64,
    /// Halvings allowed at one point before giving up.
    pub max_refine: usize,
    /// Relative distance below which two tracked levels count as coalesced.
    pub coalesce_tol: f64,
    pub solve: SolveOptions,
}

impl Default for ContinuationOptions {
    fn default() -> Self {
        ContinuationOptions {
            initial_step: 0.02,
            max_step: 0.05,
            max_refine: 12,
            coalesce_tol: 1e-6,
            solve: SolveOptions::fast(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BranchSample {
    pub parameter: C64,
    pub energy: C64,
    pub residual_w: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BranchCurve {
    pub spec: ModelSpec,
    pub label: Option<usize>,
    pub samples: Vec<BranchSample>,
    /// Largest step-to-step change of the energy.
    pub max_jump: f64,
    /// Parameter value where this level met another tracked one.
    pub coalescence: Option<C64>,
    pub complete: bool,
    pub diagnostic: Option<String>,
}

impl BranchCurve {
    pub fn last(&self) -> &BranchSample {
        self.samples.last().unwrap()
    }

    pub fn csv_header() -> &'static str {
        "re_param,im_param,re_E,im_E,residual_w"
    }

    pub fn to_csv(&self) -> String {
        let mut s = format!("{}\n", Self::csv_header());
        for p in &self.samples {
            s.push_str(&format!(
                "{:.15e},{:.15e},{:.15e},{:.15e},{:.3e}\n",
                p.parameter.re, p.parameter.im, p.energy.re, p.energy.im, p.residual_w
            ));
        }
        s
    }
}

/// Arc-length parametrization of a polyline of parameter values.
struct Polyline {
    pts: Vec<C64>,
    cum: Vec<f64>,
}

impl Polyline {
    fn new(pts: &[C64]) -> Self {
        let mut cum = vec![0.0];
        for w in pts.windows(2) {
            cum.push(cum.last().unwrap() + (w[1] - w[0]).norm());
        }
        Polyline { pts: pts.to_vec(), cum }
    }

    fn length(&self) -> f64 {
        *self.cum.last().unwrap()
    }

    /// Arc length of the first vertex strictly after `t`.
    fn next_vertex(&self, t: f64) -> f64 {
        let tol = 1e-12 * self.length().max(1e-300);
        self.cum.iter().copied().find(|&c| c > t + tol).unwrap_or(self.length())
    }

    /// Turning angle of the path at arc length `t` if that is an interior vertex.
    fn turn_at(&self, t: f64) -> f64 {
        let tol = 1e-12 * self.length().max(1e-300);
        match self.cum.iter().position(|&c| (c - t).abs() <= tol) {
            Some(k) if k > 0 && k + 1 < self.pts.len() => {
                let a = self.pts[k] - self.pts[k - 1];
                let b = self.pts[k + 1] - self.pts[k];
                (b / a).arg().abs()
            }
            _ => 0.0,
        }
    }

    fn at(&self, t: f64) -> C64 {
        let k = self.cum.partition_point(|&c| c <= t).clamp(1, self.pts.len() - 1);
        let (a, b) = (self.pts[k - 1], self.pts[k]);
        let seg = self.cum[k] - self.cum[k - 1];
        if seg == 0.0 {
            return b;
        }
        a + (b - a) * ((t - self.cum[k - 1]) / seg).clamp(0.0, 1.0)
    }
}

/// Quadratic (or lower) extrapolation through the last samples.
fn extrapolate(ts: &[f64], es: &[C64], t: f64) -> C64 {
    let n = ts.len();
    match n {
        0 => unreachable!(),
        1 => es[0],
        2 => es[1] + (es[1] - es[0]) * ((t - ts[1]) / (ts[1] - ts[0])),
        _ => {
            let (t0, t1, t2) = (ts[n - 3], ts[n - 2], ts[n - 1]);
            let (e0, e1, e2) = (es[n - 3], es[n - 2], es[n - 1]);
            let l0 = (t - t1) * (t - t2) / ((t0 - t1) * (t0 - t2));
            let l1 = (t - t0) * (t - t2) / ((t1 - t0) * (t1 - t2));
            let l2 = (t - t0) * (t - t1) / ((t2 - t0) * (t2 - t1));
            e0 * l0 + e1 * l1 + e2 * l2
        }
    }
}

fn min_separation(es: &[C64], i: usize) -> f64 {
    es.iter()
        .enumerate()
        .filter(|(j, _)| *j != i)
        .map(|(_, e)| (e - es[i]).norm())
        .fold(f64::INFINITY, f64::min)
}

/// Continues one level along the parameter path.
pub fn trace_branch(start: &EigenPair, path: &[C64], opts: &ContinuationOptions) -> Result<BranchCurve> {
    Ok(trace_levels(std::slice::from_ref(start), path, opts)?.remove(0))
}

/// Continues several levels of one spec together along the parameter path,
/// keeping each corrector well inside the gap to its neighbours.
pub fn trace_levels(starts: &[EigenPair], path: &[C64], opts: &ContinuationOptions) -> Result<Vec<BranchCurve>> {
    if starts.is_empty() || path.len() < 2 {
        return Err(Error::Config("need at least one level and two path points".into()));
    }
    let base = starts[0].spec;
    if (base.parameter() - path[0]).norm() > 1e-12 * (1.0 + path[0].norm()) {
        return Err(Error::Config("the path must begin at the starting parameter".into()));
    }
    let line = Polyline::new(path);
    let total = line.length();
    let mut curves: Vec<BranchCurve> = starts
        .iter()
        .map(|p| BranchCurve {
            spec: base,
            label: p.label,
            samples: vec![BranchSample {
                parameter: path[0],
                energy: p.energy,
                residual_w: p.residual_w,
            }],
            max_jump: 0.0,
            coalescence: None,
            complete: false,
            diagnostic: None,
        })
        .collect();
    let mut ts = vec![0.0];
    // First sample usable by the predictor; moved past sharp corners.
    let mut from = 0;
    let mut t = 0.0;
    let mut h = (opts.initial_step * total).min(opts.max_step);
    let n = starts.len();
    while t < total - 1e-14 * total.max(1.0) {
        let mut refine = 0;
        let accepted = loop {
            let tn = (t + h).min(total).min(line.next_vertex(t));
            let p = line.at(tn);
            let spec = base.with_parameter(p);
            let last: Vec<C64> = curves.iter().map(|c| c.last().energy).collect();
            let preds: Vec<C64> = curves
                .iter()
                .map(|c| {
                    let es: Vec<C64> = c.samples[from..].iter().map(|s| s.energy).collect();
                    extrapolate(&ts[from..], &es, tn)
                })
                .collect();
            let solved: Vec<Result<EigenPair>> = preds
                .par_iter()
                .map(|&g| solve_eigenvalue(&spec, g, &opts.solve))
                .collect();
            let ok = solved.iter().enumerate().all(|(i, r)| match r {
                Ok(q) => {
                    let sep = if n > 1 { min_separation(&last, i) } else { f64::INFINITY };
                    let mut bound = (0.25 * sep).min(0.1 * (1.0 + last[i].norm()));
                    // Untracked levels may be closer than the tracked ones;
                    // a landing on one shows up as a miss far beyond the
                    // predictor's own error.
                    if ts.len() - from >= 2 {
                        bound = bound.min((0.5 * (preds[i] - last[i]).norm()).max(1e-7 * (1.0 + last[i].norm())));
                    }
                    (q.energy - preds[i]).norm() <= bound
                }
                Err(_) => false,
            });
            if ok {
                break Some((tn, p, solved.into_iter().map(|r| r.unwrap()).collect::<Vec<_>>()));
            }
            refine += 1;
            if refine > opts.max_refine {
                break None;
            }
            h *= 0.5;
        };
        let Some((tn, p, pairs)) = accepted else {
            let msg = format!("corrector failed after {} refinements near parameter {}", opts.max_refine, line.at(t + h));
            for c in &mut curves {
                c.diagnostic = Some(msg.clone());
            }
            return Ok(curves);
        };
        let energies: Vec<C64> = pairs.iter().map(|q| q.energy).collect();
        for (i, c) in curves.iter_mut().enumerate() {
            let jump = (energies[i] - c.last().energy).norm();
            c.max_jump = c.max_jump.max(jump);
            c.samples.push(BranchSample {
                parameter: p,
                energy: energies[i],
                residual_w: pairs[i].residual_w,
            });
        }
        ts.push(tn);
        t = tn;
        if line.turn_at(t) > 0.3 {
            from = ts.len() - 1;
        }
        let mut met = false;
        for i in 0..n {
            let sep = min_separation(&energies, i);
            if sep <= opts.coalesce_tol * (1.0 + energies[i].norm()) {
                curves[i].coalescence = Some(p);
                met = true;
            }
        }
        if met {
            return Ok(curves);
        }
        if refine == 0 {
            h = (h * 1.5).min(opts.max_step);
        }
    }
    for c in &mut curves {
        c.complete = true;
    }
    Ok(curves)
}

/// `J₂^c = J₂(E^c, 0)`, the limit of `2nħ_n`.
pub fn critical_action() -> Result<(f64, f64)> {
    static CACHE: OnceLock<(f64, f64)> = OnceLock::new();
    if let Some(v) = CACHE.get() {
        return Ok(*v);
    }
    let spec = ModelSpec::hbar(1.0);
    let ec = critical_energy(&spec)?.value;
    let j = action_integral(&spec, C64::new(ec, 0.0), Contour::GammaM)?.j.re;
    Ok(*CACHE.get_or_init(|| (ec, j)))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SqrtFit {
    /// `ΔE ≈ a δ^{1/2} + b δ`, `δ = ħ − ħ_n`.
    pub a: f64,
    pub b: f64,
    pub residual: f64,
    /// Slope of `log ΔE` against `log δ`.
    pub exponent: f64,
    pub deltas: Vec<f64>,
    pub gaps: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BranchPoint {
    pub n: usize,
    pub hbar_n: f64,
    pub e_c: f64,
    pub pair: (usize, usize),
    pub fit: SqrtFit,
    /// `(ħ, s)` samples used to locate the zero of `s`.
    pub s_samples: Vec<(f64, C64)>,
    /// Largest `|Im s| / |s|` over the samples.
    pub s_imag: f64,
    /// `|s(ħ_n + δ)/s(ħ_n − δ) + 1|` at `δ = 10⁻³ħ_n`: zero for a linear crossing.
    pub linearity: f64,
    pub hbar_start: f64,
    /// Smallest gap `E_{2n+2} − E_{2n+1}` seen between `ħ_n` and the start.
    pub neighbour_gap: f64,
    pub evaluations: usize,
}

impl BranchPoint {
    pub fn csv_header() -> &'static str {
        "n,hbar_n,E_c,m_minus,m_plus,sqrt_a,sqrt_b,exponent,fit_residual"
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{},{:.12e},{:.12e},{},{},{:.6e},{:.6e},{:.6},{:.3e}",
            self.n, self.hbar_n, self.e_c, self.pair.0, self.pair.1, self.fit.a, self.fit.b, self.fit.exponent, self.fit.residual
        )
    }
}

/// The real levels `E_{2n}`, `E_{2n+1}`, `E_{2n+2}` at `ħ`.
///
/// Cone node counts only label real levels for large `ħ`; closer to a
/// crossing nodes may leave the lower half plane. Here each level is instead
/// matched to its semiclassical prediction on `Γ_m`, which must single it
/// out against the neighbouring predictions.
fn labelled_levels(hbar: f64, n: usize) -> Option<[EigenPair; 3]> {
    let spec = ModelSpec::hbar(hbar);
    let ms: Vec<usize> = (2 * n..=2 * n + 3).collect();
    let wkb: Vec<f64> = ms
        .par_iter()
        .map(|&m| solve_wkb_level(&spec, m, Quantization::Cc3, Side::Plus, None).map(|w| w.energy))
        .collect::<Result<Vec<_>>>()
        .ok()?
        .into_iter()
        .map(|e| if e.im.abs() < 1e-6 * e.norm() { e.re } else { f64::NAN })
        .collect();
    if wkb.iter().any(|e| !e.is_finite()) || wkb.windows(2).any(|w| w[1] <= w[0]) {
        return None;
    }
    let solved: Vec<EigenPair> = wkb[..3]
        .par_iter()
        .map(|&e| solve_eigenvalue(&spec, C64::new(e, 0.0), &SolveOptions::fast()))
        .collect::<Result<Vec<_>>>()
        .ok()?;
    let mut out = Vec::new();
    for (k, mut p) in solved.into_iter().enumerate() {
        let below = if k > 0 { wkb[k] - wkb[k - 1] } else { wkb[1] - wkb[0] };
        let spacing = below.min(wkb[k + 1] - wkb[k]);
        if p.branch != Branch::RealPositive || p.energy.im.abs() > 1e-8 || (p.energy.re - wkb[k]).abs() > 0.25 * spacing {
            return None;
        }
        p.label = Some(ms[k]);
        p.label_scheme = LabelScheme::Continuation;
        out.push(p);
    }
    out.try_into().ok()
}

/// Pair state `(ħ, E_lo, E_hi)` used while marching towards the crossing.
#[derive(Clone, Copy, Debug)]
struct PairState {
    hbar: f64,
    lo: C64,
    hi: C64,
}

impl PairState {
    fn s(&self) -> C64 {
        (self.hi - self.lo) * (self.hi - self.lo)
    }

    fn mean(&self) -> C64 {
        (self.hi + self.lo) * 0.5
    }
}

struct PairSolver {
    evaluations: std::sync::atomic::AtomicUsize,
    opts: SolveOptions,
}

impl PairSolver {
    /// Solves both levels at `ħ` from the guesses and checks that they stayed apart.
    fn solve(&self, hbar: f64, lo: C64, hi: C64) -> Option<PairState> {
        let spec = ModelSpec::hbar(hbar);
        self.evaluations.fetch_add(2, std::sync::atomic::Ordering::Relaxed);
        let (a, b) = rayon::join(
            || solve_eigenvalue(&spec, lo, &self.opts),
            || solve_eigenvalue(&spec, hi, &self.opts),
        );
        let (a, b) = (a.ok()?.energy, b.ok()?.energy);
        let gap = (hi - lo).norm();
        if (a - b).norm() < 0.25 * gap || (a - lo).norm() > 0.3 * gap || (b - hi).norm() > 0.3 * gap {
            return None;
        }
        Some(PairState { hbar, lo: a, hi: b })
    }

    /// Solves at `ħ` with guesses from a local model `s(ħ)`, `Ē(ħ)`.
    fn solve_model(&self, hbar: f64, s: C64, mean: C64) -> Option<PairState> {
        let d = s.sqrt() * 0.5;
        // Order the guesses so that `lo` is the smaller real part (above) or
        // the one with negative imaginary part (below).
        let (lo, hi) = if s.re >= 0.0 { (mean - d, mean + d) } else { (mean - d.re.signum() * d, mean + d.re.signum() * d) };
        let (lo, hi) = if s.re < 0.0 && lo.im > hi.im { (hi, lo) } else { (lo, hi) };
        self.solve(hbar, lo, hi)
    }
}

/// Least-squares polynomial fit of degree `deg` (complex values, real abscissae).
fn polyfit(xs: &[f64], ys: &[C64], deg: usize) -> Vec<C64> {
    let m = deg + 1;
    let mut a = vec![vec![0.0f64; m]; m];
    let mut rhs = vec![C64::new(0.0, 0.0); m];
    for (x, y) in xs.iter().zip(ys) {
        let pw: Vec<f64> = (0..m).map(|k| x.powi(k as i32)).collect();
        for i in 0..m {
            for j in 0..m {
                a[i][j] += pw[i] * pw[j];
            }
            rhs[i] += y * pw[i];
        }
    }
    // Gaussian elimination with partial pivoting.
    for col in 0..m {
        let piv = (col..m).max_by(|&i, &j| a[i][col].abs().partial_cmp(&a[j][col].abs()).unwrap()).unwrap();
        a.swap(col, piv);
        rhs.swap(col, piv);
        for row in col + 1..m {
            let f = a[row][col] / a[col][col];
            for k in col..m {
                a[row][k] -= f * a[col][k];
            }
            let r = rhs[col] * f;
            rhs[row] -= r;
        }
    }
    let mut c = vec![C64::new(0.0, 0.0); m];
    for i in (0..m).rev() {
        let mut v = rhs[i];
        for k in i + 1..m {
            v -= c[k] * a[i][k];
        }
        c[i] = v / a[i][i];
    }
    c
}

fn polyval(c: &[C64], x: f64) -> C64 {
    c.iter().rev().fold(C64::new(0.0, 0.0), |acc, &ck| acc * x + ck)
}

/// Locates the crossing of `E_{2n}` and `E_{2n+1}`.
pub fn locate_branch_point(n: usize) -> Result<BranchPoint> {
    let (_, j2c) = critical_action()?;
    let solver = PairSolver {
        evaluations: Default::default(),
        opts: SolveOptions::fast(),
    };
    // Start where the semiclassical estimate puts us safely above the crossing.
    let mut hbar = 1.6 * j2c / (2 * n + 1) as f64;
    let mut levels = None;
    for _ in 0..6 {
        if let Some(l) = labelled_levels(hbar, n) {
            levels = Some(l);
            break;
        }
        hbar *= 1.5;
    }
    let [lo, hi, up] = levels.ok_or_else(|| Error::NotFound(format!("no real pair ({}, {}) found above the crossing", 2 * n, 2 * n + 1)))?;
    let hbar_start = hbar;
    let pair = (
        lo.label.unwrap_or(2 * n),
        hi.label.unwrap_or(2 * n + 1),
    );

    // March down in ħ until s changes sign, tracking the next level as well.
    let mut hist = vec![PairState { hbar, lo: lo.energy, hi: hi.energy }];
    let mut upper = vec![(hbar, up.energy)];
    let mut neighbour_gap = (up.energy - hi.energy).re;
    let mut step = 0.01 * hbar;
    let bracket = loop {
        let last = *hist.last().unwrap();
        if step < 1e-7 * last.hbar || last.hbar - step <= 0.0 {
            return Err(Error::NotFound(format!(
                "no coalescence of levels {} and {} found in (0, {hbar_start}]",
                pair.0, pair.1
            )));
        }
        let h = last.hbar - step;
        let (s_pred, mean_pred) = if hist.len() >= 2 {
            let p = hist[hist.len() - 2];
            let f = (h - last.hbar) / (last.hbar - p.hbar);
            (last.s() + (last.s() - p.s()) * f, last.mean() + (last.mean() - p.mean()) * f)
        } else {
            (last.s(), last.mean())
        };
        // A shift of both levels by one would leave s alone, so the mean is
        // held to a fraction of the smallest gap as well.
        let scale = last.s().norm().sqrt().min((upper.last().unwrap().1 - last.hi).norm());
        let next = solver.solve_model(h, s_pred, mean_pred);
        let Some(next) = next.filter(|q| {
            (q.s() - s_pred).norm() <= 0.3 * last.s().norm() + 1e-12 && (q.mean() - mean_pred).norm() <= 0.15 * scale
        }) else {
            step *= 0.5;
            continue;
        };
        // Next level up, by linear extrapolation.
        let (uh, ue) = *upper.last().unwrap();
        let ug = if upper.len() >= 2 {
            let (ph, pe) = upper[upper.len() - 2];
            ue + (ue - pe) * ((h - uh) / (uh - ph))
        } else {
            ue
        };
        if let Ok(q) = solve_eigenvalue(&ModelSpec::hbar(h), ug, &SolveOptions::fast()) {
            if (q.energy - ug).norm() < 0.5 * (ue - last.hi).norm() {
                neighbour_gap = neighbour_gap.min((q.energy - next.hi).re);
                upper.push((h, q.energy));
            }
        }
        hist.push(next);
        if next.s().re < 0.0 {
            break (last, next);
        }
        if next.s().re < 0.3 * last.s().re {
            step *= 0.5;
        } else {
            step = (step * 1.3).min(0.08 * next.hbar);
        }
    };

    // Linear model between the bracket ends, then local polynomial fits of s.
    let (a, b) = bracket;
    let mut root = a.hbar - a.s().re * (a.hbar - b.hbar) / (a.s().re - b.s().re);
    let lin_s = |h: f64| a.s() + (b.s() - a.s()) * ((h - a.hbar) / (b.hbar - a.hbar));
    let lin_m = |h: f64| a.mean() + (b.mean() - a.mean()) * ((h - a.hbar) / (b.hbar - a.hbar));
    let mut samples: Vec<PairState> = Vec::new();
    let mut model: Option<(Vec<C64>, Vec<C64>, f64)> = None;
    for width in [0.02, 0.005] {
        let pts: Vec<f64> = (-4..=4).filter(|&k| k != 0).map(|k| root * (1.0 + width * k as f64 / 4.0)).collect();
        let solved: Vec<Option<PairState>> = pts
            .par_iter()
            .map(|&h| {
                let (s, m) = match &model {
                    Some((cs, cm, r0)) => (polyval(cs, h - r0), polyval(cm, h - r0)),
                    None => (lin_s(h), lin_m(h)),
                };
                solver.solve_model(h, C64::new(s.re, 0.0), C64::new(m.re, 0.0))
            })
            .collect();
        let got: Vec<PairState> = solved.into_iter().flatten().collect();
        if got.len() < 5 {
            return Err(Error::Convergence {
                iterations: got.len(),
                last: C64::new(root, 0.0),
                trace: got.iter().map(|p| C64::new(p.hbar, 0.0)).collect(),
            });
        }
        let xs: Vec<f64> = got.iter().map(|p| p.hbar - root).collect();
        let cs = polyfit(&xs, &got.iter().map(|p| p.s()).collect::<Vec<_>>(), 3);
        let cm = polyfit(&xs, &got.iter().map(|p| p.mean()).collect::<Vec<_>>(), 2);
        // Newton for the real zero of the fitted s.
        let mut x = 0.0;
        for _ in 0..50 {
            let f = polyval(&cs, x).re;
            let df = cs[1].re + 2.0 * cs[2].re * x + 3.0 * cs[3].re * x * x;
            let dx = f / df;
            x -= dx;
            if dx.abs() < 1e-15 * root {
                break;
            }
        }
        let r_new = root + x;
        let shift = |c: &[C64]| -> Vec<C64> {
            // Re-expand the fitted polynomial about the new root.
            let xs: Vec<f64> = (0..=c.len()).map(|k| (k as f64 - 1.0) * 1e-3 * root).collect();
            let ys: Vec<C64> = xs.iter().map(|&t| polyval(c, t + x)).collect();
            polyfit(&xs, &ys, c.len() - 1)
        };
        model = Some((shift(&cs), shift(&cm), r_new));
        samples.extend(got);
        root = r_new;
    }
    let (cs, cm, _) = model.unwrap();
    let hbar_n = root;
    let e_c = polyval(&cm, 0.0).re;

    // Square-root law over two decades above the crossing.
    let deltas: Vec<f64> = (0..=6).map(|k| hbar_n * 10f64.powf(-4.0 + k as f64 / 3.0)).collect();
    let fitted: Vec<Option<PairState>> = deltas
        .par_iter()
        .map(|&d| solver.solve_model(hbar_n + d, C64::new(polyval(&cs, d).re, 0.0), C64::new(polyval(&cm, d).re, 0.0)))
        .collect();
    let mut ds = Vec::new();
    let mut gaps = Vec::new();
    for (d, p) in deltas.iter().zip(fitted) {
        if let Some(p) = p {
            ds.push(*d);
            gaps.push((p.hi - p.lo).re);
            samples.push(p);
        }
    }
    if ds.len() < 4 {
        return Err(Error::Accuracy("too few samples for the square-root fit".into()));
    }
    let fit = sqrt_fit(&ds, &gaps);

    let lin = |d: f64| -> Option<f64> {
        let up = solver.solve_model(hbar_n + d, C64::new(polyval(&cs, d).re, 0.0), C64::new(polyval(&cm, d).re, 0.0))?;
        let dn = solver.solve_model(hbar_n - d, C64::new(polyval(&cs, -d).re, 0.0), C64::new(polyval(&cm, -d).re, 0.0))?;
        Some((up.s() / dn.s() + 1.0).norm())
    };
    let linearity = lin(1e-3 * hbar_n).unwrap_or(f64::NAN);
    let s_samples: Vec<(f64, C64)> = hist.iter().chain(samples.iter()).map(|p| (p.hbar, p.s())).collect();
    let s_imag = s_samples
        .iter()
        .map(|(_, s)| s.im.abs() / s.norm().max(1e-300))
        .fold(0.0, f64::max);
    Ok(BranchPoint {
        n,
        hbar_n,
        e_c,
        pair,
        fit,
        s_samples,
        s_imag,
        linearity,
        hbar_start,
        neighbour_gap,
        evaluations: solver.evaluations.load(std::sync::atomic::Ordering::Relaxed),
    })
}

/// Fits `ΔE = a√δ + bδ` and the log-log slope.
pub fn sqrt_fit(deltas: &[f64], gaps: &[f64]) -> SqrtFit {
    let (mut s11, mut s12, mut s22, mut r1, mut r2) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (&d, &g) in deltas.iter().zip(gaps) {
        let (u, v) = (d.sqrt(), d);
        s11 += u * u;
        s12 += u * v;
        s22 += v * v;
        r1 += u * g;
        r2 += v * g;
    }
    let det = s11 * s22 - s12 * s12;
    let a = (r1 * s22 - r2 * s12) / det;
    let b = (s11 * r2 - s12 * r1) / det;
    let residual = (deltas
        .iter()
        .zip(gaps)
        .map(|(&d, &g)| (g - a * d.sqrt() - b * d).powi(2))
        .sum::<f64>()
        / deltas.len() as f64)
        .sqrt();
    let lx: Vec<f64> = deltas.iter().map(|d| d.ln()).collect();
    let ly: Vec<f64> = gaps.iter().map(|g| g.abs().ln()).collect();
    let n = lx.len() as f64;
    let (mx, my) = (lx.iter().sum::<f64>() / n, ly.iter().sum::<f64>() / n);
    let exponent = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum::<f64>()
        / lx.iter().map(|x| (x - mx).powi(2)).sum::<f64>();
    SqrtFit {
        a,
        b,
        residual,
        exponent,
        deltas: deltas.to_vec(),
        gaps: gaps.to_vec(),
    }
}

/// Real pair `(E_{2n}, E_{2n+1})` at `ħ_n + δ` from the fitted local model.
fn pair_above(bp: &BranchPoint, delta: f64) -> Result<(EigenPair, EigenPair)> {
    let g = bp.fit.a * delta.sqrt() + bp.fit.b * delta;
    let spec = ModelSpec::hbar(bp.hbar_n + delta);
    let opts = SolveOptions::fast();
    let (lo, hi) = rayon::join(
        || solve_eigenvalue(&spec, C64::new(bp.e_c - 0.5 * g, 0.0), &opts),
        || solve_eigenvalue(&spec, C64::new(bp.e_c + 0.5 * g, 0.0), &opts),
    );
    let (mut lo, mut hi) = (lo?, hi?);
    if (lo.energy - hi.energy).norm() < 0.25 * g {
        return Err(Error::Accuracy("both guesses converged to the same level".into()));
    }
    lo.label = Some(bp.pair.0);
    hi.label = Some(bp.pair.1);
    Ok((lo, hi))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Monodromy {
    pub n: usize,
    pub radius: f64,
    pub loops: usize,
    /// `permutation[i] = j`: the level starting as `pair[i]` ends as `pair[j]`.
    pub permutation: Vec<usize>,
    pub start: Vec<C64>,
    pub end: Vec<C64>,
    /// Distance of each end value from the level it was matched to.
    pub closure: f64,
    pub samples: usize,
}

impl Monodromy {
    pub fn is_transposition(&self) -> bool {
        self.permutation == vec![1, 0]
    }
}

fn arc(center: f64, radius: f64, from: f64, to: f64, n: usize) -> Vec<C64> {
    (0..=n)
        .map(|k| center + C64::from_polar(radius, from + (to - from) * k as f64 / n as f64))
        .collect()
}

/// Continues the pair once or more around `|ħ − ħ_n| = radius`.
pub fn monodromy_loop(bp: &BranchPoint, radius: f64, loops: usize) -> Result<Monodromy> {
    let (lo, hi) = pair_above(bp, radius)?;
    let (permutation, end, closure, samples) = loop_permutation(&[lo.clone(), hi.clone()], C64::new(bp.hbar_n, 0.0), loops)?;
    Ok(Monodromy {
        n: bp.n,
        radius,
        loops,
        permutation,
        start: vec![lo.energy, hi.energy],
        end,
        closure,
        samples,
    })
}

/// Continues the levels around the circle through their common parameter
/// with the given center and matches the end values to the start values.
///
/// Returns the permutation, the end values, the worst closure distance and
/// the number of samples per level. An end value that matches none of the
/// start values means the loop met levels outside the set.
pub fn loop_permutation(levels: &[EigenPair], center: C64, loops: usize) -> Result<(Vec<usize>, Vec<C64>, f64, usize)> {
    let p0 = levels[0].spec.parameter();
    let radius = (p0 - center).norm();
    let phase = (p0 - center).arg();
    let path: Vec<C64> = (0..=96 * loops)
        .map(|k| center + C64::from_polar(radius, phase + std::f64::consts::TAU * k as f64 / 96.0))
        .collect();
    let opts = ContinuationOptions {
        initial_step: 0.005,
        max_step: radius * 0.1,
        ..Default::default()
    };
    let curves = trace_levels(levels, &path, &opts)?;
    if let Some(c) = curves.iter().find(|c| !c.complete) {
        return Err(Error::Geometry(format!(
            "loop continuation stopped: {}",
            c.diagnostic.clone().unwrap_or_else(|| "levels met on the loop".into())
        )));
    }
    let start: Vec<C64> = levels.iter().map(|p| p.energy).collect();
    let end: Vec<C64> = curves.iter().map(|c| c.last().energy).collect();
    let mut permutation = Vec::new();
    let mut closure = 0.0f64;
    for e in &end {
        let (j, d) = start
            .iter()
            .enumerate()
            .map(|(j, s)| (j, (s - e).norm()))
            .min_by(|a, b| a.1.partial_cmp(&b.1).unwrap())
            .unwrap();
        permutation.push(j);
        closure = closure.max(d);
    }
    let scale = 1e-6 * (1.0 + start.iter().map(|e| e.norm()).fold(0.0, f64::max));
    let mut seen = permutation.clone();
    seen.sort_unstable();
    seen.dedup();
    if closure > scale || seen.len() != permutation.len() {
        return Err(Error::Geometry(format!(
            "loop of radius {radius:.3e} does not close on the tracked levels (closure {closure:.3e})"
        )));
    }
    Ok((permutation, end, closure, curves[0].samples.len()))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EdgeCheck {
    pub hbar: f64,
    pub epsilon: f64,
    /// `E_{2n}(ħ + iε)` continued through the upper half plane.
    pub lower_from_above: C64,
    /// `E_{2n+1}(ħ + iε)`, same path.
    pub upper_from_above: C64,
    /// `E_n^+(ħ)` from the small-`ħ` branch.
    pub small_plus: C64,
    pub small_minus: C64,
    pub gap_lower: f64,
    pub gap_upper: f64,
}

/// `E_n^+(ħ)` continued along the real axis from the perturbative regime.
pub fn small_hbar_branch(n: usize, side: Side, hbar: f64) -> Result<BranchCurve> {
    let h0 = (0.25 * hbar).min(0.02);
    let spec = ModelSpec::hbar(h0);
    let guess = side.limit_energy() + side.frequency() * h0 * (2 * n + 1) as f64;
    let start = solve_eigenvalue(&spec, guess, &SolveOptions::fast())?;
    let curve = trace_branch(
        &start,
        &[C64::new(h0, 0.0), C64::new(hbar, 0.0)],
        &ContinuationOptions {
            max_step: 0.1 * hbar,
            ..Default::default()
        },
    )?;
    if !curve.complete {
        return Err(Error::Convergence {
            iterations: curve.samples.len(),
            last: curve.last().energy,
            trace: curve.samples.iter().map(|s| s.energy).collect(),
        });
    }
    Ok(curve)
}

/// Edge values of the pair continued from above `ħ_n` through the upper half
/// `ħ`-plane to `ħ + iε`, against the small-`ħ` branches at `ħ`.
pub fn edge_check(bp: &BranchPoint, fraction: f64, epsilon: f64) -> Result<EdgeCheck> {
    let target = fraction * bp.hbar_n;
    let r = 0.5 * (bp.hbar_n - target);
    let (lo, hi) = pair_above(bp, r)?;
    let end_angle = std::f64::consts::PI - (epsilon / r).asin();
    let mut path = arc(bp.hbar_n, r, 0.0, end_angle, 48);
    path.push(C64::new(target, epsilon));
    let opts = ContinuationOptions {
        initial_step: 0.005,
        max_step: 0.1 * r,
        ..Default::default()
    };
    let curves = trace_levels(&[lo, hi], &path, &opts)?;
    if curves.iter().any(|c| !c.complete) {
        return Err(Error::Geometry("edge continuation did not reach the target".into()));
    }
    let (plus, minus) = rayon::join(
        || small_hbar_branch(bp.n, Side::Plus, target),
        || small_hbar_branch(bp.n, Side::Minus, target),
    );
    let (plus, minus) = (plus?.last().energy, minus?.last().energy);
    let lower = curves[0].last().energy;
    let upper = curves[1].last().energy;
    Ok(EdgeCheck {
        hbar: target,
        epsilon,
        lower_from_above: lower,
        upper_from_above: upper,
        small_plus: plus,
        small_minus: minus,
        gap_lower: (lower - plus).norm(),
        gap_upper: (upper - minus).norm(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CrossingRow {
    pub n: usize,
    pub hbar_n: f64,
    pub e_c: f64,
    pub two_n_hbar: f64,
    pub j2: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CrossingReport {
    pub rows: Vec<CrossingRow>,
    pub e_critical: f64,
    pub j2_critical: f64,
    pub hbar_decreasing: bool,
    pub e_c_monotone_towards_critical: bool,
    /// `|2nħ_n − J₂^c|` for each row.
    pub action_gaps: Vec<f64>,
    pub points: Vec<BranchPoint>,
}

impl CrossingReport {
    pub fn markdown(&self) -> String {
        let mut s = String::from("| n | ħ_n | E_n^c | 2nħ_n | J₂(E_n^c, 0) |\n|---|---|---|---|---|\n");
        for r in &self.rows {
            s.push_str(&format!(
                "| {} | {:.6} | {:.6} | {:.6} | {:.6} |\n",
                r.n, r.hbar_n, r.e_c, r.two_n_hbar, r.j2
            ));
        }
        s.push_str(&format!(
            "\nE^c = {:.6}, J₂^c = {:.6}; ħ_n decreasing: {}; E_n^c monotone towards E^c: {}\n",
            self.e_critical, self.j2_critical, self.hbar_decreasing, self.e_c_monotone_towards_critical
        ));
        s
    }
}

/// Branch points `n = 0..=n_max` with trend diagnostics.
pub fn crossing_report(n_max: usize) -> Result<CrossingReport> {
    let (ec, j2c) = critical_action()?;
    let points: Vec<BranchPoint> = (0..=n_max)
        .into_par_iter()
        .map(locate_branch_point)
        .collect::<Result<_>>()?;
    let spec = ModelSpec::hbar(1.0);
    let rows: Vec<CrossingRow> = points
        .iter()
        .map(|bp| {
            let j2 = action_integral(&spec, C64::new(bp.e_c, 0.0), Contour::GammaM)
                .map(|a| a.j.re)
                .unwrap_or(f64::NAN);
            CrossingRow {
                n: bp.n,
                hbar_n: bp.hbar_n,
                e_c: bp.e_c,
                two_n_hbar: 2.0 * bp.n as f64 * bp.hbar_n,
                j2,
            }
        })
        .collect();
    let hbar_decreasing = rows.windows(2).all(|w| w[1].hbar_n < w[0].hbar_n);
    let dist: Vec<f64> = rows.iter().map(|r| (r.e_c - ec).abs()).collect();
    let side_same = rows.iter().all(|r| (r.e_c - ec).signum() == (rows[0].e_c - ec).signum());
    let e_c_monotone_towards_critical = side_same && dist.windows(2).all(|w| w[1] < w[0]);
    let action_gaps = rows.iter().map(|r| (r.two_n_hbar - j2c).abs()).collect();
    Ok(CrossingReport {
        rows,
        e_critical: ec,
        j2_critical: j2c,
        hbar_decreasing,
        e_c_monotone_towards_critical,
        action_gaps,
        points,
    })
}
