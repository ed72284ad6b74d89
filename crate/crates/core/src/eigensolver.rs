//! Eigenvalues by bidirectional shooting along the real axis.
//!
//! Two solutions recessive at `±L` are integrated inward and compared
//! through their Wronskian `W(E) = ψ₊ψ₋′ − ψ₊′ψ₋`, an entire function of `E`
//! for fixed `L` whose zeros are the eigenvalues.  Newton steps use the exact
//! energy derivative obtained from the variational equation.

use std::collections::BTreeMap;

use num_complex::Complex64 as C64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{turning_points, Family, ModelSpec};
use crate::ode::{asymptotic_frame, integrate_linear, ComplexPath, OdeOptions, Scaled, Schrodinger};
use crate::zeros::{self, NodeCounts};

/// Minimum decay exponent accumulated between the turning region and `±L`.
const TAIL_ACTION: f64 = 30.0;
const MAX_L: f64 = 60.0;
const MATCH_GRID: usize = 41;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Branch {
    /// Real positive level of a PT-symmetric member.
    RealPositive,
    /// `Im E < 0`: the levels emerging from `E₀ = −ic`.
    Plus,
    /// `Im E > 0`.
    Minus,
    Other,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LabelScheme {
    /// Number of nodes in the lower cone.
    NodeCount,
    /// Number of zeros near the stationary point the level emerges from.
    Perturbative,
    /// Position among the real levels, fixed by continuation from large `ħ`.
    Continuation,
    Unlabelled,
}

#[derive(Clone, Debug)]
pub struct SolveOptions {
    /// Local integration tolerance.
    pub tol: f64,
    /// Convergence threshold on the normalized mismatch.
    pub w_tol: f64,
    pub max_iter: usize,
    /// Shooting half-length; chosen from the energy when absent.
    pub l: Option<f64>,
    /// Fixed matching abscissa; chosen per evaluation when absent.
    pub match_point: Option<f64>,
    /// Count nodes and attach a label after convergence.
    pub count_nodes: bool,
    /// Previously found levels, for duplicate detection.
    pub known: Vec<C64>,
    pub merge_tol: f64,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            tol: 1e-11,
            w_tol: 1e-9,
            max_iter: 60,
            l: None,
            match_point: None,
            count_nodes: true,
            known: Vec::new(),
            merge_tol: 1e-7,
        }
    }
}

impl SolveOptions {
    pub fn fast() -> Self {
        SolveOptions {
            count_nodes: false,
            ..Default::default()
        }
    }
}

/// A converged level with solver metadata.
#[derive(Clone, Debug, PartialEq)]
pub struct EigenPair {
    pub spec: ModelSpec,
    pub energy: C64,
    pub label: Option<usize>,
    pub label_scheme: LabelScheme,
    pub branch: Branch,
    /// `|W| / (|ψ₊ψ₋′| + |ψ₊′ψ₋|)` at the matching point.
    pub residual_w: f64,
    pub nodes: NodeCounts,
    pub iterations: usize,
    pub tol: f64,
    pub l: f64,
    pub match_point: f64,
    pub duplicate_of: Option<usize>,
}

/// Flat serialized form of an [`EigenPair`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EigenRecord {
    pub family: Family,
    pub params: BTreeMap<String, f64>,
    #[serde(rename = "re_E")]
    pub re_e: f64,
    #[serde(rename = "im_E")]
    pub im_e: f64,
    pub label: Option<usize>,
    pub label_scheme: LabelScheme,
    pub branch: Branch,
    pub residual_w: f64,
    pub nodes_lower: Option<usize>,
    pub nodes_upper: Option<usize>,
    pub nodes_imag: Option<usize>,
}

pub fn spec_params(spec: &ModelSpec) -> BTreeMap<String, f64> {
    let mut p = BTreeMap::new();
    match spec.family {
        Family::Hbar | Family::RealCubic => {
            p.insert("hbar".into(), spec.hbar);
            if spec.hbar_im != 0.0 {
                p.insert("hbar_im".into(), spec.hbar_im);
            }
        }
        Family::BetaTilde => {
            p.insert("beta_re".into(), spec.beta_re);
            p.insert("beta_im".into(), spec.beta_im);
        }
        Family::AlphaHat => {
            p.insert("alpha_re".into(), spec.alpha_re);
            p.insert("alpha_im".into(), spec.alpha_im);
        }
        Family::KDelta => {
            p.insert("k".into(), spec.k);
            p.insert("delta".into(), spec.delta);
        }
    }
    if spec.shift_re != 0.0 || spec.shift_im != 0.0 {
        p.insert("shift_re".into(), spec.shift_re);
        p.insert("shift_im".into(), spec.shift_im);
    }
    p
}

impl EigenPair {
    pub fn record(&self) -> EigenRecord {
        EigenRecord {
            family: self.spec.family,
            params: spec_params(&self.spec),
            re_e: self.energy.re,
            im_e: self.energy.im,
            label: self.label,
            label_scheme: self.label_scheme,
            branch: self.branch,
            residual_w: self.residual_w,
            nodes_lower: self.nodes.lower,
            nodes_upper: self.nodes.upper,
            nodes_imag: self.nodes.imaginary,
        }
    }
}

/// Branch tag of a level.
pub fn classify_branch(spec: &ModelSpec, e: C64) -> Branch {
    let tiny = 1e-8 * e.norm().max(1.0);
    if spec.is_pt_symmetric() && e.im.abs() <= tiny && e.re > 0.0 {
        Branch::RealPositive
    } else if e.im < -tiny {
        Branch::Plus
    } else if e.im > tiny {
        Branch::Minus
    } else {
        Branch::Other
    }
}

/// Shooting half-length for energies near `e`.
///
/// The smallest symmetric `L` beyond the turning points at which the decay
/// exponent `∫ Re q` accumulated outward from the turning region reaches
/// [`TAIL_ACTION`] on both sides and `|V(±L)| ≥ 150|E| + 1`, leaving room
/// for the energy to move during iteration.
pub fn shooting_length(spec: &ModelSpec, e: C64) -> Result<f64> {
    spec.validate()?;
    let poly = spec.poly();
    let tp = turning_points(spec, e);
    // A root far out on the imaginary axis (tiny cubic coefficient) does not
    // bound the real-axis turning region.
    let r0 = tp
        .roots
        .iter()
        .filter(|z| z.im.abs() <= 2.0 * z.re.abs() + 2.0)
        .map(|z| z.norm())
        .fold(0.0, f64::max);
    let k = spec.kinetic();
    let mut l: f64 = 0.0;
    for side in [1.0, -1.0] {
        let mut x = r0 + 0.5;
        let mut s = 0.0;
        let mut ok = false;
        while x <= MAX_L {
            let dx = 0.02 * x.max(1.0);
            let xm = side * (x + 0.5 * dx);
            let q = ((poly.eval(C64::new(xm, 0.0)) - e) / k).sqrt();
            s += (q.re * side).abs().min(q.norm()) * dx;
            x += dx;
            let v = poly.eval(C64::new(side * x, 0.0));
            if s >= TAIL_ACTION && v.norm() >= 150.0 * e.norm() + 1.0 {
                let q = ((v - e) / k).sqrt();
                if q.re.abs() >= 0.1 * q.norm() {
                    ok = true;
                    break;
                }
            }
        }
        if !ok {
            return Err(Error::Domain(format!(
                "no decaying shooting anchor within |x| <= {MAX_L} on the {} side",
                if side > 0.0 { "right" } else { "left" }
            )));
        }
        l = l.max(x);
    }
    Ok(l)
}

/// States of `ψ±` (and optionally their energy derivatives) at grid points.
pub(crate) struct Shot<const N: usize> {
    pub grid: Vec<f64>,
    pub plus: Vec<Scaled<N>>,
    pub minus: Vec<Scaled<N>>,
}

fn initial<const N: usize>(ld: C64, lde: C64) -> [C64; N] {
    let mut y = [C64::new(0.0, 0.0); N];
    y[0] = C64::new(1.0, 0.0);
    y[1] = ld;
    if N == 4 {
        y[3] = lde;
    }
    y
}

/// Integrates the recessive solution from `side·L` inward, recording the
/// states at `grid` (ascending abscissae inside `(−L, L)`).
pub(crate) fn shoot_side<const N: usize>(
    spec: &ModelSpec,
    e: C64,
    l: f64,
    side: f64,
    grid: &[f64],
    tol: f64,
) -> Result<Vec<Scaled<N>>> {
    let anchor = C64::new(side * l, 0.0);
    let fr = asymptotic_frame(spec, e, anchor, C64::new(side, 0.0))?;
    let sys = Schrodinger::new(spec, e);
    let far = if side > 0.0 { grid[0] } else { grid[grid.len() - 1] };
    let path = ComplexPath::segment(anchor, C64::new(far, 0.0));
    let stops: Vec<f64> = grid.iter().map(|x| (side * l - x).abs()).collect();
    let opts = OdeOptions::new(tol).with_stops(stops.clone());
    let y0 = initial::<N>(fr.log_derivative, fr.log_derivative_e);
    let run = if N == 4 {
        integrate_linear(
            |z, y: &[C64; N]| {
                let mut out = [C64::new(0.0, 0.0); N];
                let r = sys.rhs4(z, &[y[0], y[1], y[2], y[3]]);
                out.copy_from_slice(&r);
                out
            },
            &path,
            y0,
            0.0,
            &opts,
        )?
    } else {
        integrate_linear(
            |z, y: &[C64; N]| {
                let mut out = [C64::new(0.0, 0.0); N];
                let r = sys.rhs2(z, &[y[0], y[1]]);
                out.copy_from_slice(&r);
                out
            },
            &path,
            y0,
            0.0,
            &opts,
        )?
    };
    // Samples come back sorted by arc length; map them back to grid order.
    let mut out = vec![run.end; grid.len()];
    let mut order: Vec<usize> = (0..grid.len()).collect();
    order.sort_by(|&a, &b| stops[a].partial_cmp(&stops[b]).unwrap());
    for (k, &gi) in order.iter().enumerate() {
        out[gi] = run.samples[k].1;
    }
    Ok(out)
}

/// Candidate matching abscissae spanning the turning-point region.
pub(crate) fn match_grid(spec: &ModelSpec, e: C64, l: f64, fixed: Option<f64>) -> Vec<f64> {
    if let Some(x) = fixed {
        return vec![x];
    }
    let tp = turning_points(spec, e);
    let lo = tp.roots.iter().map(|z| z.re).fold(f64::INFINITY, f64::min) - 0.3;
    let hi = tp.roots.iter().map(|z| z.re).fold(f64::NEG_INFINITY, f64::max) + 0.3;
    let lo = lo.max(-0.8 * l);
    let hi = hi.min(0.8 * l);
    let (lo, hi) = if lo < hi { (lo, hi) } else { (-0.5, 0.5) };
    // Snap to a lattice so the grid, and with it W/(ψ₊ψ₋), is locally independent of E.
    let (lo, hi) = ((lo * 32.0).floor() / 32.0, (hi * 32.0).ceil() / 32.0);
    (0..MATCH_GRID)
        .map(|j| lo + (hi - lo) * j as f64 / (MATCH_GRID - 1) as f64)
        .collect()
}

pub(crate) fn shoot<const N: usize>(
    spec: &ModelSpec,
    e: C64,
    l: f64,
    grid: Vec<f64>,
    tol: f64,
) -> Result<Shot<N>> {
    let (plus, minus) = rayon::join(
        || shoot_side::<N>(spec, e, l, 1.0, &grid, tol),
        || shoot_side::<N>(spec, e, l, -1.0, &grid, tol),
    );
    Ok(Shot {
        grid,
        plus: plus?,
        minus: minus?,
    })
}

/// Wronskian mismatch at one energy.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Mismatch {
    pub energy: C64,
    /// Mantissa of `W`; the true value is `w·exp(log_scale)`.
    pub w: C64,
    /// Mantissa of `dW/dE` (same scale), when computed.
    pub dw: Option<C64>,
    pub log_scale: f64,
    /// Mantissa of `ψ₊ψ₋` at the matching point (same scale).
    pub psi_product: C64,
    /// Characteristic wavenumber `1 + √(|E|/|K|)`.
    pub wavenumber: f64,
    pub match_point: f64,
    pub l: f64,
}

impl Mismatch {
    /// `|W| / (|ψ₊ψ₋|·k)`, the size of the log-derivative jump in units of the wavenumber.
    pub fn relative(&self) -> f64 {
        self.w.norm() / (self.psi_product.norm() * self.wavenumber)
    }

    /// `W / (ψ₊ψ₋) = ψ₋′/ψ₋ − ψ₊′/ψ₊` at the matching point.
    pub fn normalized(&self) -> C64 {
        self.w / self.psi_product
    }

    /// `W·exp(−ref_scale)`, analytic in `E` for a fixed reference scale.
    pub fn analytic(&self, ref_scale: f64) -> C64 {
        self.w * (self.log_scale - ref_scale).exp()
    }

    /// `ln W` (principal argument).
    pub fn ln(&self) -> C64 {
        self.w.ln() + self.log_scale
    }

    pub fn newton_step(&self) -> Option<C64> {
        self.dw.map(|d| -self.w / d)
    }
}

fn pick_match<const N: usize>(shot: &Shot<N>) -> usize {
    let mut best = 0;
    let mut best_v = f64::NEG_INFINITY;
    for i in 0..shot.grid.len() {
        let p = &shot.plus[i];
        let m = &shot.minus[i];
        let v = p.y[0].norm().max(1e-300).ln() + p.log_scale + m.y[0].norm().max(1e-300).ln() + m.log_scale;
        if v > best_v {
            best_v = v;
            best = i;
        }
    }
    best
}

/// Moves the magnitude of `(ψ, ψ′)` into the log scale so products stay finite.
fn rescaled<const N: usize>(s: &Scaled<N>) -> Scaled<N> {
    let m = s.y[0].norm().max(s.y[1].norm());
    if m == 0.0 || !m.is_finite() {
        return *s;
    }
    let mut out = *s;
    for v in out.y.iter_mut() {
        *v /= m;
    }
    out.log_scale += m.ln();
    out
}

fn mismatch_from<const N: usize>(spec: &ModelSpec, e: C64, l: f64, shot: &Shot<N>) -> Mismatch {
    let i = pick_match(shot);
    let p = &rescaled(&shot.plus[i]);
    let m = &rescaled(&shot.minus[i]);
    let w = p.y[0] * m.y[1] - p.y[1] * m.y[0];
    let dw = if N == 4 {
        Some(p.y[0] * m.y[3] + p.y[2] * m.y[1] - p.y[1] * m.y[2] - p.y[3] * m.y[0])
    } else {
        None
    };
    Mismatch {
        energy: e,
        w,
        dw,
        log_scale: p.log_scale + m.log_scale,
        psi_product: p.y[0] * m.y[0],
        wavenumber: 1.0 + (e.norm() / spec.kinetic().norm()).sqrt(),
        match_point: shot.grid[i],
        l,
    }
}

/// Wronskian mismatch with its energy derivative.
pub fn mismatch(spec: &ModelSpec, e: C64, l: f64, match_point: Option<f64>, tol: f64) -> Result<Mismatch> {
    let grid = match_grid(spec, e, l, match_point);
    let shot = shoot::<4>(spec, e, l, grid, tol)?;
    Ok(mismatch_from(spec, e, l, &shot))
}

/// Wronskian mismatch without the derivative (half the work).
pub fn mismatch_value(spec: &ModelSpec, e: C64, l: f64, match_point: Option<f64>, tol: f64) -> Result<Mismatch> {
    let grid = match_grid(spec, e, l, match_point);
    let shot = shoot::<2>(spec, e, l, grid, tol)?;
    Ok(mismatch_from(spec, e, l, &shot))
}

/// Normalized Wronskian `W(E)/(ψ₊ψ₋)` at shooting length `L`.
///
/// This is the jump of the logarithmic derivative at the matching point:
/// analytic in `E` wherever `ψ±` do not vanish there, and of the order of
/// the local wavenumber away from eigenvalues.
pub fn wronskian_mismatch(spec: &ModelSpec, e: C64, l: f64, tol: f64) -> Result<C64> {
    spec.validate()?;
    let r0 = turning_points(spec, e).roots.iter().map(|z| z.norm()).fold(0.0, f64::max);
    if l < 2.0 * r0 + 1.0 || asymptotic_frame(spec, e, C64::new(l, 0.0), C64::new(1.0, 0.0)).is_err() {
        return Err(Error::Domain(format!("L = {l} too small for E = {e}")));
    }
    Ok(mismatch_value(spec, e, l, None, tol)?.normalized())
}

/// Newton iteration on `W` from `guess`.
pub fn solve_eigenvalue(spec: &ModelSpec, guess: C64, opts: &SolveOptions) -> Result<EigenPair> {
    spec.validate()?;
    let mut l = match opts.l {
        Some(l) => l,
        None => shooting_length(spec, guess)?,
    };
    let mut e = guess;
    let mut trace = vec![e];
    let mut last: Option<Mismatch> = None;
    let mut relength = opts.l.is_none();
    let mut stalled = 0;
    for it in 0..opts.max_iter {
        let m = match mismatch(spec, e, l, opts.match_point, opts.tol) {
            Err(Error::Domain(_)) if opts.l.is_none() => {
                l = shooting_length(spec, e)?;
                mismatch(spec, e, l, opts.match_point, opts.tol)?
            }
            r => r?,
        };
        let step = m.newton_step().unwrap();
        if !(step.re.is_finite() && step.im.is_finite()) {
            return Err(Error::Convergence {
                iterations: it,
                last: e,
                trace,
            });
        }
        // Backtrack when |W| grew by more than a factor of four.
        if let Some(prev) = last {
            if m.l == prev.l && m.ln().re > prev.ln().re + 4f64.ln() {
                let back = -prev.newton_step().unwrap();
                let shrink = back * 0.5;
                e = prev.energy - shrink;
                trace.push(e);
                last = Some(Mismatch {
                    // Pretend the halved step came from prev so repeated failures keep halving.
                    dw: prev.dw.map(|d| d * 2.0),
                    ..prev
                });
                continue;
            }
        }
        let converged = m.relative() <= opts.w_tol && step.norm() <= 1e-9 * (1.0 + e.norm());
        if converged {
            if relength && e.norm() > 2.0 * guess.norm().max(0.5) {
                relength = false;
                l = shooting_length(spec, e)?;
                last = None;
                continue;
            }
            // One more Newton update: quadratic convergence makes it essentially free accuracy.
            return Ok(finish(spec, e + step, &m, it + 1, opts));
        }
        if step.norm() <= 1e-14 * (1.0 + e.norm()) {
            stalled += 1;
            if stalled >= 3 {
                return Err(Error::Accuracy(format!(
                    "iteration stalled at {e} with relative mismatch {:e} above {:e}",
                    m.relative(),
                    opts.w_tol
                )));
            }
        }
        last = Some(m);
        e += step;
        trace.push(e);
    }
    Err(Error::Convergence {
        iterations: opts.max_iter,
        last: e,
        trace,
    })
}

fn finish(spec: &ModelSpec, e: C64, m: &Mismatch, iterations: usize, opts: &SolveOptions) -> EigenPair {
    let branch = classify_branch(spec, e);
    let duplicate_of = opts
        .known
        .iter()
        .position(|k| (k - e).norm() <= opts.merge_tol * (1.0 + e.norm()));
    let mut pair = EigenPair {
        spec: *spec,
        energy: e,
        label: None,
        label_scheme: LabelScheme::Unlabelled,
        branch,
        residual_w: m.relative(),
        nodes: NodeCounts::default(),
        iterations,
        tol: opts.tol,
        l: m.l,
        match_point: m.match_point,
        duplicate_of,
    };
    if opts.count_nodes {
        if let Ok(counts) = zeros::node_counts(&pair) {
            pair.nodes = counts;
            match (branch, counts.local) {
                (Branch::RealPositive, _) => {
                    pair.label = counts.lower;
                    pair.label_scheme = LabelScheme::NodeCount;
                }
                (Branch::Plus | Branch::Minus, Some(n)) => {
                    pair.label = Some(n);
                    pair.label_scheme = LabelScheme::Perturbative;
                }
                _ => {
                    if let Some(n) = counts.lower {
                        pair.label = Some(n);
                        pair.label_scheme = LabelScheme::NodeCount;
                    }
                }
            }
        }
    }
    pair
}

/// Closed rectangle in the energy plane.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnergyWindow {
    pub re_min: f64,
    pub re_max: f64,
    pub im_min: f64,
    pub im_max: f64,
}

impl EnergyWindow {
    pub fn new(re_min: f64, re_max: f64, im_min: f64, im_max: f64) -> Self {
        EnergyWindow {
            re_min,
            re_max,
            im_min,
            im_max,
        }
    }

    pub fn contains(&self, e: C64) -> bool {
        e.re >= self.re_min && e.re <= self.re_max && e.im >= self.im_min && e.im <= self.im_max
    }

    fn corners(&self) -> [C64; 4] {
        [
            C64::new(self.re_min, self.im_min),
            C64::new(self.re_max, self.im_min),
            C64::new(self.re_max, self.im_max),
            C64::new(self.re_min, self.im_max),
        ]
    }
}

#[derive(Clone, Debug)]
pub struct ScanOptions {
    pub solve: SolveOptions,
    pub seed: u64,
    pub max_depth: usize,
}

impl Default for ScanOptions {
    fn default() -> Self {
        ScanOptions {
            solve: SolveOptions {
                tol: 1e-10,
                ..SolveOptions::default()
            },
            seed: 0,
            max_depth: 14,
        }
    }
}

/// Samples `ln W` along an edge until the complex change of `ln W` between
/// neighbours is below π/4; bounding the modulus change as well as the
/// argument guards against phase aliasing.
fn edge_samples(
    eval: &(dyn Fn(C64) -> Result<Mismatch> + Sync),
    a: C64,
    b: C64,
) -> Result<Vec<(C64, C64)>> {
    const SEED: usize = 8;
    let pts: Vec<C64> = (0..=SEED).map(|j| a + (b - a) * (j as f64 / SEED as f64)).collect();
    let vals: Vec<Mismatch> = pts.par_iter().map(|&e| eval(e)).collect::<Result<_>>()?;
    let min_len = 1e-9 * (1.0 + a.norm() + b.norm());
    let mut out = vec![(a, vals[0].ln())];
    for k in 0..SEED {
        let mut stack = vec![(pts[k], vals[k], pts[k + 1], vals[k + 1], 0usize)];
        while let Some((p, mp, q, mq, depth)) = stack.pop() {
            let mut d = mq.ln() - mp.ln();
            d.im = (d.im + std::f64::consts::PI).rem_euclid(2.0 * std::f64::consts::PI) - std::f64::consts::PI;
            if d.norm() < std::f64::consts::FRAC_PI_4 {
                out.push((q, mq.ln()));
                continue;
            }
            if (q - p).norm() < min_len || depth > 40 {
                return Err(Error::Accuracy(format!("mismatch zero on or near the edge at {p}")));
            }
            let mid = (p + q) * 0.5;
            let mm = eval(mid)?;
            if mm.relative() < 1e-7 {
                return Err(Error::Accuracy(format!("mismatch zero on the edge at {mid}")));
            }
            stack.push((mid, mm, q, mq, depth + 1));
            stack.push((p, mp, mid, mm, depth + 1));
        }
    }
    Ok(out)
}

/// Power sums of the zeros inside a window, up to this order.
const MOMENTS: usize = 4;

/// Winding number of `W` around the window and the power sums
/// `s_p = Σ E_k^p = (1/2πi)∮ E^p d ln W`, `p = 1..=MOMENTS`.
fn boundary_data(
    eval: &(dyn Fn(C64) -> Result<Mismatch> + Sync),
    w: &EnergyWindow,
) -> Result<(i64, [C64; MOMENTS])> {
    let c = w.corners();
    let edges: Vec<Result<Vec<(C64, C64)>>> = (0..4)
        .into_par_iter()
        .map(|k| edge_samples(eval, c[k], c[(k + 1) % 4]))
        .collect();
    let mut total = 0.0;
    let mut sums = [C64::new(0.0, 0.0); MOMENTS];
    for edge in edges {
        let edge = edge?;
        for pair in edge.windows(2) {
            let (e0, l0) = pair[0];
            let (e1, l1) = pair[1];
            let mut dl = l1 - l0;
            let two_pi = 2.0 * std::f64::consts::PI;
            dl.im = (dl.im + std::f64::consts::PI).rem_euclid(two_pi) - std::f64::consts::PI;
            total += dl.im;
            let em = (e0 + e1) * 0.5;
            let mut pw = em;
            for s in sums.iter_mut() {
                *s += pw * dl;
                pw *= em;
            }
        }
    }
    let two_pi_i = C64::new(0.0, 2.0 * std::f64::consts::PI);
    let count = total / (2.0 * std::f64::consts::PI);
    let rounded = count.round();
    if (count - rounded).abs() > 1e-6 {
        return Err(Error::Accuracy(format!("non-integer winding {count}")));
    }
    Ok((rounded as i64, sums.map(|s| s / two_pi_i)))
}

/// Roots of the monic polynomial whose zeros have the given power sums
/// (Newton's identities, then Durand-Kerner).
fn roots_from_power_sums(sums: &[C64]) -> Vec<C64> {
    let k = sums.len();
    let mut e = vec![C64::new(1.0, 0.0)];
    for j in 1..=k {
        let mut acc = C64::new(0.0, 0.0);
        for i in 1..=j {
            let sign = if i % 2 == 1 { 1.0 } else { -1.0 };
            acc += e[j - i] * sums[i - 1] * sign;
        }
        e.push(acc / j as f64);
    }
    // z^k − e1 z^{k−1} + e2 z^{k−2} − …
    let coeff: Vec<C64> = (0..=k).map(|j| if j % 2 == 0 { e[j] } else { -e[j] }).collect();
    let eval = |z: C64| coeff.iter().fold(C64::new(0.0, 0.0), |acc, &c| acc * z + c);
    let scale = 1.0 + sums[0].norm() / k as f64;
    let mut z: Vec<C64> = (0..k)
        .map(|j| sums[0] / k as f64 + C64::from_polar(0.4 * scale, 0.4 + std::f64::consts::TAU * j as f64 / k as f64))
        .collect();
    for _ in 0..200 {
        let mut moved = 0.0f64;
        for i in 0..k {
            let mut den = C64::new(1.0, 0.0);
            for j in 0..k {
                if j != i {
                    den *= z[i] - z[j];
                }
            }
            let dz = eval(z[i]) / den;
            z[i] -= dz;
            moved = moved.max(dz.norm());
        }
        if moved < 1e-12 * scale {
            break;
        }
    }
    z
}

fn cell_seed(seed: u64, id: u64) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ id.wrapping_mul(0xBF58_476D_1CE4_E5B9)
}

fn split(w: &EnergyWindow, frac: f64) -> (EnergyWindow, EnergyWindow) {
    if w.re_max - w.re_min >= w.im_max - w.im_min {
        let x = w.re_min + frac * (w.re_max - w.re_min);
        (
            EnergyWindow { re_max: x, ..*w },
            EnergyWindow { re_min: x, ..*w },
        )
    } else {
        let y = w.im_min + frac * (w.im_max - w.im_min);
        (
            EnergyWindow { im_max: y, ..*w },
            EnergyWindow { im_min: y, ..*w },
        )
    }
}

struct ScanCtx<'a> {
    spec: &'a ModelSpec,
    l: f64,
    opts: &'a ScanOptions,
}

impl ScanCtx<'_> {
    fn eval(&self, e: C64) -> Result<Mismatch> {
        mismatch_value(self.spec, e, self.l, None, self.opts.solve.tol)
    }

    /// Roots inside `w`, given its count.
    fn cell(&self, w: EnergyWindow, count: i64, sums: [C64; MOMENTS], id: u64, depth: usize) -> Result<Vec<C64>> {
        if count <= 0 {
            return Ok(vec![]);
        }
        if count as usize <= MOMENTS {
            // Seeds from the power sums, accepted only if Newton keeps every
            // one inside the cell and they stay distinct.
            let solve = SolveOptions {
                l: Some(self.l),
                count_nodes: false,
                ..self.opts.solve.clone()
            };
            let seeds = roots_from_power_sums(&sums[..count as usize]);
            let found: Vec<Option<C64>> = seeds
                .par_iter()
                .map(|&g| solve_eigenvalue(self.spec, g, &solve).ok().map(|p| p.energy).filter(|e| w.contains(*e)))
                .collect();
            if found.iter().all(Option::is_some) {
                let v: Vec<C64> = found.into_iter().flatten().collect();
                let distinct = v.iter().enumerate().all(|(i, a)| {
                    v[i + 1..].iter().all(|b| (a - b).norm() > 1e-6 * (1.0 + a.norm()))
                });
                if distinct {
                    return Ok(v);
                }
            }
        }
        if depth >= self.opts.max_depth {
            return Err(Error::Accuracy(format!(
                "subdivision depth exhausted with {count} zero(s) left in {w:?}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(cell_seed(self.opts.seed, id));
        let ev = |e: C64| self.eval(e);
        for _attempt in 0..6 {
            let frac = 0.5 + rng.gen_range(-0.12..0.12);
            let (a, b) = split(&w, frac);
            let (ra, rb) = rayon::join(|| boundary_data(&ev, &a), || boundary_data(&ev, &b));
            let (Ok((ca, ma)), Ok((cb, mb))) = (ra, rb) else {
                continue;
            };
            if ca + cb != count {
                continue;
            }
            let (xa, xb) = rayon::join(
                || self.cell(a, ca, ma, id * 2, depth + 1),
                || self.cell(b, cb, mb, id * 2 + 1, depth + 1),
            );
            let mut v = xa?;
            v.extend(xb?);
            return Ok(v);
        }
        Err(Error::Accuracy(format!("could not split {w:?} cleanly")))
    }
}

/// All eigenvalues in `window`, found by counting zeros of `W` with the
/// argument principle and polishing each isolated zero by Newton's method.
///
/// Split lines carry a deterministic jitter drawn from `opts.seed`, which
/// also resolves zeros that happen to lie on a split line.
pub fn spectrum_scan(
    spec: &ModelSpec,
    window: EnergyWindow,
    max_levels: usize,
    opts: &ScanOptions,
) -> Result<Vec<EigenPair>> {
    spec.validate()?;
    if !(window.re_min < window.re_max && window.im_min < window.im_max) {
        return Err(Error::Config("empty energy window".into()));
    }
    let far = window
        .corners()
        .iter()
        .copied()
        .max_by(|a, b| a.norm().partial_cmp(&b.norm()).unwrap())
        .unwrap();
    let l = window
        .corners()
        .iter()
        .map(|&c| shooting_length(spec, c))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .fold(shooting_length(spec, far)?, f64::max);
    let ctx = ScanCtx { spec, l, opts };
    let ev = |e: C64| ctx.eval(e);
    let mut rng = ChaCha8Rng::seed_from_u64(cell_seed(opts.seed, 0));
    let mut w = window;
    let mut top = boundary_data(&ev, &w);
    for _ in 0..4 {
        if top.is_ok() {
            break;
        }
        let pad = 1e-3 * (1.0 + far.norm());
        w = EnergyWindow {
            re_min: window.re_min - pad * rng.gen::<f64>(),
            re_max: window.re_max + pad * rng.gen::<f64>(),
            im_min: window.im_min - pad * rng.gen::<f64>(),
            im_max: window.im_max + pad * rng.gen::<f64>(),
        };
        top = boundary_data(&ev, &w);
    }
    let (count, sums) = top?;
    let mut roots = ctx.cell(w, count, sums, 1, 0)?;
    if roots.len() as i64 != count {
        return Err(Error::Accuracy(format!(
            "found {} levels but the contour count is {count}",
            roots.len()
        )));
    }
    roots.sort_by(|a, b| (a.re, a.im).partial_cmp(&(b.re, b.im)).unwrap());
    roots.truncate(max_levels);
    let final_opts = SolveOptions {
        l: Some(l),
        ..opts.solve.clone()
    };
    roots
        .par_iter()
        .map(|&e| solve_eigenvalue(spec, e, &SolveOptions { max_iter: 8, ..final_opts.clone() }))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{e0, Side};

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    #[test]
    fn harmonic_mismatch() {
        let spec = ModelSpec::beta(c(0.0, 0.0));
        let l = shooting_length(&spec, c(3.0, 0.0)).unwrap();
        let w = wronskian_mismatch(&spec, c(3.0, 0.0), l, 1e-12).unwrap();
        assert!(w.norm() < 1e-9, "{w}");
        let w = wronskian_mismatch(&spec, c(2.5, 0.0), l, 1e-12).unwrap();
        assert!(w.norm() > 1e-2, "{w}");
    }

    #[test]
    fn mismatch_is_analytic() {
        let spec = ModelSpec::hbar(1.0);
        let e = c(1.0, 0.3);
        let l = shooting_length(&spec, e).unwrap();
        let h = 1e-5;
        let w = |z: C64| wronskian_mismatch(&spec, z, l, 1e-13).unwrap();
        let dx = (w(e + h) - w(e - h)) / (2.0 * h);
        let dy = (w(e + c(0.0, h)) - w(e - c(0.0, h))) / c(0.0, 2.0 * h);
        assert!((dx - dy).norm() < 1e-5 * (1.0 + dx.norm()), "{dx} {dy}");
        // Variational derivative agrees with the difference quotient.
        let m = mismatch(&spec, e, l, Some(0.1), 1e-13).unwrap();
        let mp = mismatch(&spec, e + h, l, Some(0.1), 1e-13).unwrap();
        let mm = mismatch(&spec, e - h, l, Some(0.1), 1e-13).unwrap();
        let fd = (mp.analytic(m.log_scale) - mm.analytic(m.log_scale)) / (2.0 * h);
        assert!((fd - m.dw.unwrap()).norm() < 1e-6 * fd.norm());
    }

    #[test]
    fn harmonic_levels() {
        let spec = ModelSpec::beta(c(0.0, 0.0));
        let p = solve_eigenvalue(&spec, c(1.2, 0.0), &SolveOptions::fast()).unwrap();
        assert!((p.energy - 1.0).norm() < 1e-9, "{}", p.energy);
        assert!(p.residual_w <= 1e-9);
        assert_eq!(p.branch, Branch::RealPositive);
    }

    #[test]
    fn small_hbar_perturbative_level() {
        let h = 0.05;
        let spec = ModelSpec::hbar(h);
        let guess = e0() + Side::Plus.frequency() * h;
        let p = solve_eigenvalue(&spec, guess, &SolveOptions::fast()).unwrap();
        assert!((p.energy - guess).norm() < 3.0 * h * h, "{} {}", p.energy, guess);
        assert_eq!(p.branch, Branch::Plus);
        let q = solve_eigenvalue(&spec, guess.conj(), &SolveOptions::fast()).unwrap();
        assert!((q.energy - p.energy.conj()).norm() < 1e-8);
        assert_eq!(q.branch, Branch::Minus);
    }

    #[test]
    fn match_point_independence() {
        let spec = ModelSpec::hbar(1.0);
        let a = solve_eigenvalue(&spec, c(0.7, 0.0), &SolveOptions { match_point: Some(0.0), ..SolveOptions::fast() }).unwrap();
        let b = solve_eigenvalue(&spec, c(0.7, 0.0), &SolveOptions { match_point: Some(0.3), ..SolveOptions::fast() }).unwrap();
        assert!((a.energy - b.energy).norm() < 1e-9, "{} {}", a.energy, b.energy);
    }

    #[test]
    fn record_fields() {
        let spec = ModelSpec::beta(c(0.0, 0.0));
        let p = solve_eigenvalue(&spec, c(2.9, 0.0), &SolveOptions::fast()).unwrap();
        let v = serde_json::to_value(p.record()).unwrap();
        for k in [
            "family", "params", "re_E", "im_E", "label", "label_scheme", "branch", "residual_w",
            "nodes_lower", "nodes_upper", "nodes_imag",
        ] {
            assert!(v.get(k).is_some(), "missing {k}");
        }
        assert_eq!(v["family"], "beta");
    }
}
