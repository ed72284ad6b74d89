//! Stokes geometry and WKB actions.
//!
//! A Stokes line is a curve along which `(E − V(z)) dz²` is positive, so the
//! action `S(z) = ∫ √(E − V) dz` from its starting turning point stays real.
//! Lines are traced by unit-speed integration of that direction field; after
//! every step the point is pushed back onto `Im S = const`.

use std::collections::HashMap;
use std::f64::consts::PI;

use num_complex::Complex64 as C64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::eigensolver::{Branch, EigenPair};
use crate::error::{Error, Result};
use crate::models::{turning_points, Cubic, Family, ModelSpec, Side, TurningPointSet, DOUBLE_ROOT_TOL};
use crate::ode::ComplexPath;
use crate::zeros::{cone_depth, local_center, node_window, Eigenfunction, Rect, LOCAL_HALF};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceOptions {
    /// Step length away from turning points.
    pub step: f64,
    pub max_length: f64,
    /// A line reaching this modulus is declared to run off to infinity.
    pub far_radius: f64,
    pub capture: f64,
}

impl Default for TraceOptions {
    fn default() -> Self {
        TraceOptions {
            step: 0.005,
            max_length: 40.0,
            far_radius: 30.0,
            capture: 1e-4,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum Terminus {
    /// Asymptotic to the `sector`-th direction where `V(z) dz²` is negative.
    Infinity { sector: usize },
    TurningPoint { index: usize },
    Truncated,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StokesLine {
    /// Index into the turning point roots.
    pub start: usize,
    pub direction: usize,
    pub points: Vec<C64>,
    pub terminus: Terminus,
    pub length: f64,
    /// `max |Im S|` along the line, `S` measured from the first traced point.
    pub max_im_action: f64,
}

impl StokesLine {
    pub fn path(&self) -> ComplexPath {
        ComplexPath::chain(self.points.clone())
    }

    pub fn end(&self) -> C64 {
        *self.points.last().unwrap()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StokesDiagram {
    pub spec: ModelSpec,
    pub energy: C64,
    /// Energy actually traced; differs from `energy` when a double turning
    /// point had to be split.
    pub traced_energy: C64,
    pub turning_points: TurningPointSet,
    pub lines: Vec<StokesLine>,
    pub rho: Option<Vec<C64>>,
    /// Index into `lines`.
    pub eta: Option<usize>,
    /// Pairs of turning points joined by a Stokes line.
    pub connections: Vec<(usize, usize)>,
}

/// JSON summary of a diagram's topology.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Topology {
    pub energy: [f64; 2],
    pub turning_points: Vec<[f64; 2]>,
    pub connections: Vec<(usize, usize)>,
    pub termini: Vec<(usize, usize, Terminus)>,
    pub rho_found: bool,
    pub eta_line: Option<usize>,
}

impl StokesDiagram {
    pub fn topology(&self) -> Topology {
        Topology {
            energy: [self.energy.re, self.energy.im],
            turning_points: self.turning_points.roots.iter().map(|z| [z.re, z.im]).collect(),
            connections: self.connections.clone(),
            termini: self.lines.iter().map(|l| (l.start, l.direction, l.terminus)).collect(),
            rho_found: self.rho.is_some(),
            eta_line: self.eta,
        }
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("line_id,re,im\n");
        for (k, l) in self.lines.iter().enumerate() {
            for z in &l.points {
                s.push_str(&format!("{k},{:.12e},{:.12e}\n", z.re, z.im));
            }
        }
        s
    }

    /// Largest `|Im S| / length` over the lines.
    pub fn worst_invariant(&self) -> f64 {
        self.lines
            .iter()
            .filter(|l| l.length > 0.0)
            .map(|l| l.max_im_action / l.length)
            .fold(0.0, f64::max)
    }

    pub fn polylines(&self) -> Vec<Vec<C64>> {
        self.lines.iter().map(|l| l.points.clone()).collect()
    }

    /// Hausdorff distance between the lines and their mirror image
    /// `z ↦ −z̄`, restricted to `|z| ≤ radius`.
    pub fn reflection_distance(&self, radius: f64) -> f64 {
        let a = self.polylines();
        let b: Vec<Vec<C64>> = a.iter().map(|l| l.iter().map(|z| -z.conj()).collect()).collect();
        hausdorff(&a, &b, radius)
    }
}

/// Directions `θ_k` along which Stokes lines reach infinity.
pub fn asymptotic_directions(poly: &Cubic) -> Vec<f64> {
    let (deg, lead) = poly.leading();
    let d = (deg + 2) as f64;
    (0..deg + 2)
        .map(|k| ((PI - lead.arg() + 2.0 * PI * k as f64) / d).rem_euclid(2.0 * PI))
        .collect()
}

/// Polynomial whose roots are the turning points, with `E − V = −q(z)`.
fn shifted(poly: &Cubic, e: C64) -> Cubic {
    let mut c = poly.coeffs;
    c[0] -= e;
    Cubic::new(c)
}

struct Tracer<'a> {
    q: Cubic,
    roots: &'a [C64],
    opts: &'a TraceOptions,
    sectors: Vec<f64>,
}

impl Tracer<'_> {
    /// `√(E − V)` continued from `prev`.
    fn momentum(&self, z: C64, prev: C64) -> C64 {
        let p = (-self.q.eval(z)).sqrt();
        if (p * prev.conj()).re < 0.0 {
            -p
        } else {
            p
        }
    }

    /// Unit tangent with `p·dz > 0`, continued from the previous tangent.
    fn direction(&self, p: C64, prev: C64) -> C64 {
        let d = p.conj() / p.norm();
        if (d * prev.conj()).re < 0.0 {
            -d
        } else {
            d
        }
    }

    fn nearest_root(&self, z: C64, skip: usize) -> (usize, f64) {
        self.roots
            .iter()
            .enumerate()
            .filter(|(j, _)| *j != skip)
            .map(|(j, r)| (j, (z - r).norm()))
            .fold((usize::MAX, f64::INFINITY), |a, b| if b.1 < a.1 { b } else { a })
    }

    fn sector(&self, z: C64) -> usize {
        let a = z.arg().rem_euclid(2.0 * PI);
        let gap = |t: f64| {
            let d = (a - t).rem_euclid(2.0 * PI);
            d.min(2.0 * PI - d)
        };
        (0..self.sectors.len())
            .min_by(|&i, &j| gap(self.sectors[i]).partial_cmp(&gap(self.sectors[j])).unwrap())
            .unwrap()
    }

    fn trace(&self, start: usize, direction: usize, delta: C64) -> StokesLine {
        let t0 = self.roots[start];
        let scale = 1.0 + t0.norm();
        let mut z = t0 + delta * (self.opts.capture * 0.1 * scale);
        let mut dir = delta;
        let mut p = self.momentum(z, dir.conj());
        let mut points = vec![t0, z];
        let mut length = (z - t0).norm();
        let mut im_s = 0.0f64;
        let mut max_im = 0.0f64;
        let mut terminus = Terminus::Truncated;
        while length < self.opts.max_length {
            let (near, dist) = self.nearest_root(z, start);
            let own = (z - t0).norm();
            if dist < self.opts.capture * scale {
                points.push(self.roots[near]);
                length += dist;
                terminus = Terminus::TurningPoint { index: near };
                break;
            }
            if z.norm() >= self.opts.far_radius {
                terminus = Terminus::Infinity { sector: self.sector(z) };
                break;
            }
            let far = self.opts.step * z.norm().max(1.0).sqrt();
            let h = far.min(0.25 * dist).min(0.5 * own.max(self.opts.capture * scale));
            // Classical RK4 on the continued direction field.
            let f = |w: C64, d: C64| -> C64 {
                let pw = self.momentum(w, p);
                self.direction(pw, d)
            };
            let k1 = f(z, dir);
            let k2 = f(z + k1 * (h / 2.0), k1);
            let k3 = f(z + k2 * (h / 2.0), k2);
            let k4 = f(z + k3 * h, k3);
            let mut zn = z + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
            let pm = self.momentum((z + zn) * 0.5, p);
            let mut pn = self.momentum(zn, pm);
            let mut ds = (zn - z) * (p + pm * 4.0 + pn) / 6.0;
            // Project back onto Im S = 0; the drift is tiny, two corrections suffice.
            for _ in 0..2 {
                let target = -(im_s + ds.im);
                if pn.norm() < 1e-8 || target.abs() < 1e-15 {
                    break;
                }
                let shift = C64::new(0.0, target) / pn;
                if shift.norm() > 0.1 * h {
                    break;
                }
                zn += shift;
                let pm = self.momentum((z + zn) * 0.5, p);
                pn = self.momentum(zn, pm);
                ds = (zn - z) * (p + pm * 4.0 + pn) / 6.0;
            }
            im_s += ds.im;
            max_im = max_im.max(im_s.abs());
            dir = self.direction(pn, k4);
            length += (zn - z).norm();
            z = zn;
            p = pn;
            points.push(z);
        }
        StokesLine {
            start,
            direction,
            points,
            terminus,
            length,
            max_im_action: max_im,
        }
    }
}

/// The three starting directions at a simple turning point `t`, where
/// `−V′(t) δ³ > 0` with `δ = z − t`.
fn start_directions(q: &Cubic, t: C64) -> Vec<C64> {
    let d = q.deriv(t);
    let base = (-d).arg();
    (0..3)
        .map(|k| C64::from_polar(1.0, (-base + 2.0 * PI * k as f64) / 3.0))
        .collect()
}

fn simple_roots(tp: &TurningPointSet) -> Vec<usize> {
    (0..tp.roots.len()).filter(|&j| tp.multiplicity[j] == 1).collect()
}

pub fn trace_stokes_lines(spec: &ModelSpec, e: C64) -> Result<StokesDiagram> {
    trace_stokes_lines_with(spec, e, &TraceOptions::default())
}

pub fn trace_stokes_lines_with(spec: &ModelSpec, e: C64, opts: &TraceOptions) -> Result<StokesDiagram> {
    spec.validate()?;
    let poly = spec.poly();
    if poly.degree() < 3 {
        return Err(Error::Config("Stokes tracing needs a cubic potential".into()));
    }
    let tp0 = turning_points(spec, e);
    let mut traced = e;
    let separated = |tp: &TurningPointSet| {
        let r = &tp.roots;
        (0..r.len()).all(|i| (i + 1..r.len()).all(|j| (r[i] - r[j]).norm() > 1e-6))
    };
    let tp = if separated(&tp0) && !tp0.has_multiple() {
        tp0.clone()
    } else {
        // Degenerate point: report the limit of the split configuration.
        traced = e + 1e-6;
        turning_points(spec, traced)
    };
    let q = shifted(&poly, traced);
    let tracer = Tracer {
        q,
        roots: &tp.roots,
        opts,
        sectors: asymptotic_directions(&poly),
    };
    let jobs: Vec<(usize, usize, C64)> = simple_roots(&tp)
        .into_iter()
        .flat_map(|j| {
            start_directions(&q, tp.roots[j])
                .into_iter()
                .enumerate()
                .map(move |(k, d)| (j, k, d))
        })
        .collect();
    let lines: Vec<StokesLine> = jobs.par_iter().map(|&(j, k, d)| tracer.trace(j, k, d)).collect();

    let mut connections: Vec<(usize, usize)> = lines
        .iter()
        .filter_map(|l| match l.terminus {
            Terminus::TurningPoint { index } => Some((l.start.min(index), l.start.max(index))),
            _ => None,
        })
        .collect();
    let pt = spec.is_pt_symmetric() && traced.im.abs() <= 1e-12 * (1.0 + traced.norm());
    let mut rho = None;
    if let Some(labels) = tp.labels {
        let (m, p) = (labels.minus, labels.plus);
        if let Some(l) = lines.iter().find(|l| l.start == p && l.terminus == Terminus::TurningPoint { index: m }) {
            rho = Some(l.points.clone());
        } else if pt {
            if let Some(half) = axis_crossing_half(&lines, p, tp.roots[labels.i0]) {
                let mut full = half.clone();
                full.extend(half.iter().rev().skip(1).map(|z| -z.conj()));
                connections.push((m.min(p), m.max(p)));
                rho = Some(full);
            }
        }
    }
    connections.sort_unstable();
    connections.dedup();
    let eta = escape_line_index(&tracer, &tp, &lines);
    Ok(StokesDiagram {
        spec: *spec,
        energy: e,
        traced_energy: traced,
        turning_points: tp,
        lines,
        rho,
        eta,
        connections,
    })
}

/// The part of a line from `start` up to its first crossing of the imaginary
/// axis below `i0`, if any.
fn axis_crossing_half(lines: &[StokesLine], start: usize, i0: C64) -> Option<Vec<C64>> {
    for l in lines.iter().filter(|l| l.start == start) {
        let s0 = l.points[1].re.signum();
        for k in 1..l.points.len() {
            let (a, b) = (l.points[k - 1], l.points[k]);
            if b.re.signum() != s0 && a.re.signum() == s0 {
                let t = a.re / (a.re - b.re);
                let y = a.im + t * (b.im - a.im);
                if y < i0.im {
                    let mut half = l.points[..k].to_vec();
                    half.push(C64::new(0.0, y));
                    return Some(half);
                }
                break;
            }
        }
    }
    None
}

/// The escape line: a line from an isolated simple turning point running off
/// towards `+i∞`.
fn escape_line_index(tracer: &Tracer, tp: &TurningPointSet, lines: &[StokesLine]) -> Option<usize> {
    let up = tracer.sector(C64::new(0.0, 1.0));
    let isolated = |j: usize| {
        tp.roots
            .iter()
            .enumerate()
            .filter(|(k, _)| *k != j)
            .all(|(_, r)| (r - tp.roots[j]).norm() > 1e-2)
    };
    lines
        .iter()
        .enumerate()
        .filter(|(_, l)| l.terminus == Terminus::Infinity { sector: up } || l.terminus == Terminus::Truncated && l.end().im > 0.0 && tracer.sector(l.end()) == up)
        .min_by(|(_, a), (_, b)| {
            let key = |l: &StokesLine| (!isolated(l.start) as u8, tp.roots[l.start].re.abs());
            let (ka, kb) = (key(a), key(b));
            ka.0.cmp(&kb.0).then(ka.1.partial_cmp(&kb.1).unwrap())
        })
        .map(|(k, _)| k)
}

/// Point-to-polyline Hausdorff distance between two line sets, using only
/// points with `|z| ≤ radius`.
pub fn hausdorff(a: &[Vec<C64>], b: &[Vec<C64>], radius: f64) -> f64 {
    one_sided(a, b, radius).max(one_sided(b, a, radius))
}

fn one_sided(a: &[Vec<C64>], b: &[Vec<C64>], radius: f64) -> f64 {
    let cell = 0.05;
    let key = |z: C64| ((z.re / cell).floor() as i64, (z.im / cell).floor() as i64);
    let mut grid: HashMap<(i64, i64), Vec<(C64, C64)>> = HashMap::new();
    for line in b {
        for w in line.windows(2) {
            let (k0, k1) = (key(w[0]), key(w[1]));
            for i in k0.0.min(k1.0)..=k0.0.max(k1.0) {
                for j in k0.1.min(k1.1)..=k0.1.max(k1.1) {
                    grid.entry((i, j)).or_default().push((w[0], w[1]));
                }
            }
        }
    }
    let seg_dist = |z: C64, s: &(C64, C64)| {
        let d = s.1 - s.0;
        let t = if d.norm_sqr() == 0.0 {
            0.0
        } else {
            (((z - s.0) * d.conj()).re / d.norm_sqr()).clamp(0.0, 1.0)
        };
        (z - s.0 - d * t).norm()
    };
    let pts: Vec<C64> = a.iter().flatten().copied().filter(|z| z.norm() <= radius).collect();
    pts.par_iter()
        .map(|&z| {
            let (ci, cj) = key(z);
            for ring in 0..40i64 {
                let mut best = f64::INFINITY;
                for i in ci - ring..=ci + ring {
                    for j in cj - ring..=cj + ring {
                        if let Some(v) = grid.get(&(i, j)) {
                            for s in v {
                                best = best.min(seg_dist(z, s));
                            }
                        }
                    }
                }
                if best <= ring as f64 * cell {
                    return best;
                }
            }
            f64::INFINITY
        })
        .reduce(|| 0.0, f64::max)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EscapeFit {
    pub energy: C64,
    /// Least-squares constant in `x(y)(y² + ½) ≈ c_eff`.
    pub c_eff: f64,
    /// RMS deviation of the samples from the constant.
    pub residual: f64,
    pub samples: usize,
    pub y_max: f64,
}

/// Fits `x(y)(y² + ½)` on the escape line over `y ∈ [y_lo, y_hi]`.
pub fn escape_line_asymptote(spec: &ModelSpec, e: C64) -> Result<EscapeFit> {
    escape_line_fit(spec, e, 10.0, 20.0)
}

pub fn escape_line_fit(spec: &ModelSpec, e: C64, y_lo: f64, y_hi: f64) -> Result<EscapeFit> {
    let opts = TraceOptions {
        max_length: 3.0 * y_hi,
        far_radius: 1.25 * y_hi + 2.0,
        ..TraceOptions::default()
    };
    escape_line_fit_with(spec, e, y_lo, y_hi, &opts)
}

pub fn escape_line_fit_with(spec: &ModelSpec, e: C64, y_lo: f64, y_hi: f64, opts: &TraceOptions) -> Result<EscapeFit> {
    let d = trace_stokes_lines_with(spec, e, opts)?;
    let eta = d.eta.ok_or_else(|| Error::NotFound("no escape line towards +i∞".into()))?;
    let pts = &d.lines[eta].points;
    let y_max = pts.iter().map(|z| z.im).fold(f64::NEG_INFINITY, f64::max);
    if y_max < y_hi {
        return Err(Error::NotFound(format!("partial data: escape line reaches only y = {y_max:.3}")));
    }
    let vals: Vec<f64> = pts
        .iter()
        .filter(|z| z.im >= y_lo && z.im <= y_hi)
        .map(|z| z.re * (z.im * z.im + 0.5))
        .collect();
    if vals.len() < 3 {
        return Err(Error::NotFound("partial data: too few samples on the escape line".into()));
    }
    let n = vals.len() as f64;
    let c_eff = vals.iter().sum::<f64>() / n;
    let residual = (vals.iter().map(|v| (v - c_eff).powi(2)).sum::<f64>() / n).sqrt();
    Ok(EscapeFit {
        energy: e,
        c_eff,
        residual,
        samples: vals.len(),
        y_max,
    })
}

/// Whether the Stokes line leaving the rightmost turning point towards the
/// others reaches a turning point (directly, or through the mirror-symmetric
/// crossing of the imaginary axis below `I₀`). `None` when it is captured by
/// `I₀` itself, i.e. at the critical energy up to the capture radius.
pub fn topology_indicator(spec: &ModelSpec, e: f64) -> Result<Option<bool>> {
    let e = C64::new(e, 0.0);
    let tp = turning_points(spec, e);
    if tp.roots.len() != 3 || tp.has_multiple() {
        return Ok(None);
    }
    let poly = spec.poly();
    let q = shifted(&poly, e);
    let opts = TraceOptions::default();
    let tracer = Tracer {
        q,
        roots: &tp.roots,
        opts: &opts,
        sectors: asymptotic_directions(&poly),
    };
    let right = (0..3)
        .max_by(|&a, &b| tp.roots[a].re.partial_cmp(&tp.roots[b].re).unwrap())
        .unwrap();
    let lines: Vec<StokesLine> = start_directions(&q, tp.roots[right])
        .into_iter()
        .enumerate()
        .map(|(k, d)| tracer.trace(right, k, d))
        .collect();
    let pt = spec.is_pt_symmetric();
    let i0 = if pt { tp.i0() } else { None };
    for l in &lines {
        if let Terminus::TurningPoint { index } = l.terminus {
            if Some(tp.roots[index]) == i0 {
                return Ok(None);
            }
            return Ok(Some(true));
        }
    }
    if let Some(i0) = i0 {
        if axis_crossing_half(&lines, right, i0).is_some() {
            return Ok(Some(true));
        }
    }
    Ok(Some(false))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CriticalEnergy {
    pub value: f64,
    /// Final bisection bracket of the topology indicator.
    pub bracket: (f64, f64),
    /// Indicator at the ends of the bracket (connected below, detached above).
    pub certificate: (bool, bool),
    /// All indicator changes found on the coarse scan.
    pub changes: Vec<(f64, f64)>,
    /// `Im ∫ √(E − V)` from `I₊` to `I₀` at `value`, when the refinement applies.
    pub refined_residual: Option<f64>,
}

/// Instability energy of the oscillatory range on `[lo, hi]`.
pub fn critical_energy(spec: &ModelSpec) -> Result<CriticalEnergy> {
    critical_energy_in(spec, 0.05, 1.0)
}

pub fn critical_energy_in(spec: &ModelSpec, lo: f64, hi: f64) -> Result<CriticalEnergy> {
    spec.validate()?;
    let n = 24;
    let grid: Vec<f64> = (0..=n).map(|k| lo + (hi - lo) * k as f64 / n as f64).collect();
    let ind: Vec<Option<bool>> = grid
        .par_iter()
        .map(|&e| topology_indicator(spec, e))
        .collect::<Result<_>>()?;
    let mut changes = Vec::new();
    let mut last: Option<(f64, bool)> = None;
    for (e, v) in grid.iter().zip(&ind) {
        if let Some(v) = v {
            if let Some((e0, v0)) = last {
                if v0 != *v {
                    changes.push((e0, *e));
                }
            }
            last = Some((*e, *v));
        }
    }
    let &(mut a, mut b) = changes
        .first()
        .ok_or_else(|| Error::NotFound(format!("no topology change of the Stokes complex in [{lo}, {hi}]")))?;
    let va = topology_indicator(spec, a)?.unwrap_or(true);
    let vb = !va;
    let mut hit = None;
    while b - a > 1e-6 {
        let m = 0.5 * (a + b);
        match topology_indicator(spec, m)? {
            Some(v) if v == va => a = m,
            Some(_) => b = m,
            None => {
                hit = Some(m);
                break;
            }
        }
    }
    let (mut value, mut refined_residual) = (hit.unwrap_or(0.5 * (a + b)), None);
    if spec.is_pt_symmetric() {
        // I₀ lies on the line from I₊ exactly when the action between them is real.
        let g = |e: f64| -> Option<f64> {
            let tp = turning_points(spec, C64::new(e, 0.0));
            let l = tp.labels?;
            Some(segment_action(&spec.poly(), C64::new(e, 0.0), tp.roots[l.plus], tp.roots[l.i0], 64).im)
        };
        let (lo, hi) = (a - 1e-4, b + 1e-4);
        if let (Some(mut ga), Some(mut gb)) = (g(lo), g(hi)) {
            let (mut x0, mut x1) = (lo, hi);
            if ga * gb < 0.0 {
                for _ in 0..80 {
                    let x = x1 - gb * (x1 - x0) / (gb - ga);
                    let x = if x <= x0.min(x1) || x >= x0.max(x1) { 0.5 * (x0 + x1) } else { x };
                    let gx = g(x).unwrap_or(0.0);
                    if gx * ga < 0.0 {
                        x1 = x;
                        gb = gx;
                    } else {
                        x0 = x;
                        ga = gx;
                    }
                    if (x1 - x0).abs() < 1e-13 || gx == 0.0 {
                        value = x;
                        break;
                    }
                    value = x;
                }
                refined_residual = g(value).map(f64::abs);
            }
        }
    }
    Ok(CriticalEnergy {
        value,
        bracket: (a, b),
        certificate: (va, vb),
        changes,
        refined_residual,
    })
}

/// `∫_a^b √(E − V) dz` along the straight segment between two simple
/// turning points, by Gauss–Chebyshev quadrature of the second kind (the
/// square-root endpoint behaviour is carried by the weight). The overall
/// sign follows the principal root at the midpoint.
pub fn segment_action(poly: &Cubic, e: C64, a: C64, b: C64, n: usize) -> C64 {
    let q = shifted(poly, e);
    let (deg, lead) = q.leading();
    let rest: Option<C64> = if deg == 3 {
        let sum = -q.coeffs[2] / lead;
        Some(sum - a - b)
    } else {
        None
    };
    // E − V = −q = −lead (z − a)(z − b)(z − r) = lead (b − a)² t(1 − t) (z − r).
    let f2 = |t: f64| -> C64 {
        let z = a + (b - a) * t;
        let base = lead * (b - a) * (b - a);
        match rest {
            Some(r) => base * (z - r),
            None => base,
        }
    };
    let nodes: Vec<(f64, f64)> = (1..=n)
        .map(|k| {
            let th = k as f64 * PI / (n + 1) as f64;
            ((1.0 + th.cos()) / 2.0, PI / (n + 1) as f64 * th.sin().powi(2))
        })
        .collect();
    // Continue the root from the middle node outwards in both directions.
    let mid = n / 2;
    let mut vals = vec![C64::new(0.0, 0.0); n];
    vals[mid] = f2(nodes[mid].0).sqrt();
    for k in (0..mid).rev() {
        let s = f2(nodes[k].0).sqrt();
        vals[k] = if (s * vals[k + 1].conj()).re < 0.0 { -s } else { s };
    }
    for k in mid + 1..n {
        let s = f2(nodes[k].0).sqrt();
        vals[k] = if (s * vals[k - 1].conj()).re < 0.0 { -s } else { s };
    }
    let sum: C64 = nodes.iter().zip(&vals).map(|((_, w), v)| v * *w).sum();
    (b - a) * sum * 0.25
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Contour {
    /// Around the cut `(I₀, I₊)`.
    GammaPlus,
    /// Around the cut `(I₋, I₀)`.
    GammaMinus,
    /// Both pair cuts together.
    GammaM,
}

impl Contour {
    pub fn name(self) -> &'static str {
        match self {
            Contour::GammaPlus => "gamma-plus",
            Contour::GammaMinus => "gamma-minus",
            Contour::GammaM => "Gamma-m",
        }
    }
}

impl std::str::FromStr for Contour {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gamma-plus" | "plus" => Ok(Contour::GammaPlus),
            "gamma-minus" | "minus" => Ok(Contour::GammaMinus),
            "Gamma-m" | "gamma-m" | "full" => Ok(Contour::GammaM),
            _ => Err(Error::Config(format!("unknown contour {s}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ActionMethod {
    WkbQuadrature,
    ExactLogDerivative,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ActionValue {
    pub energy: C64,
    pub hbar: f64,
    pub contour: Contour,
    pub j: C64,
    /// `dJ/dE`.
    pub dj: C64,
    pub method: ActionMethod,
    /// Change of `J` when the number of nodes is halved.
    pub error: f64,
}

impl ActionValue {
    pub fn csv_header() -> &'static str {
        "re_E,im_E,hbar,contour,re_J,im_J,method,error"
    }

    pub fn csv_row(&self) -> String {
        let m = match self.method {
            ActionMethod::WkbQuadrature => "wkb-quadrature",
            ActionMethod::ExactLogDerivative => "exact-logderivative",
        };
        format!(
            "{:.15e},{:.15e},{},{},{:.15e},{:.15e},{},{:.3e}",
            self.energy.re,
            self.energy.im,
            self.hbar,
            self.contour.name(),
            self.j.re,
            self.j.im,
            m,
            self.error
        )
    }
}

/// Minimum distance between the contour and its cut.
pub const CUT_CLEARANCE: f64 = 0.2;

/// `(1/2πi)∮√(V − E) dz` and its energy derivative on the confocal ellipse
/// `z = m + h cosh(ξ + iθ)` around the cut `[a, b]`, by the trapezoidal rule
/// with `n` nodes. On that ellipse `√((z − a)(z − b)) = h sinh(ξ + iθ)`
/// exactly, so only the factor from the third root needs branch tracking.
fn ellipse_action(q: &Cubic, a: C64, b: C64, n: usize) -> Result<(C64, C64)> {
    let (deg, lead) = q.leading();
    let m = (a + b) * 0.5;
    let h = (b - a) * 0.5;
    if h.norm() < 1e-14 {
        return Ok((C64::new(0.0, 0.0), C64::new(0.0, 0.0)));
    }
    let xi = (1.0 + CUT_CLEARANCE / h.norm()).acosh();
    let r = if deg == 3 { Some(-q.coeffs[2] / lead - a - b) } else { None };
    if let Some(r) = r {
        let wr = ((r - m) / h).acosh();
        if wr.re.abs() - xi < 0.05 {
            return Err(Error::Geometry(format!(
                "contour around ({a}, {b}) at clearance {CUT_CLEARANCE} would enclose the turning point {r}"
            )));
        }
    }
    let mut prev = C64::new(0.0, 0.0);
    let (mut j, mut dj) = (C64::new(0.0, 0.0), C64::new(0.0, 0.0));
    for k in 0..n {
        let th = 2.0 * PI * k as f64 / n as f64;
        let w = C64::new(xi, th);
        let z = m + h * w.cosh();
        let mut s = match r {
            Some(r) => (lead * (z - r)).sqrt(),
            None => lead.sqrt(),
        };
        if k > 0 && (s * prev.conj()).re < 0.0 {
            s = -s;
        }
        prev = s;
        let sh = h * w.sinh();
        j += sh * sh * s;
        dj += 1.0 / s;
    }
    Ok((j / n as f64, -dj / (2.0 * n as f64)))
}

fn orient(j: C64, dj: C64) -> (C64, C64) {
    let flip = if j.re.abs() > 1e-14 * j.norm() { j.re < 0.0 } else { j.im < 0.0 };
    if flip {
        (-j, -dj)
    } else {
        (j, dj)
    }
}

fn cut_pairs(spec: &ModelSpec, e: C64, contour: Contour) -> Result<Vec<(C64, C64)>> {
    let tp = turning_points(spec, e);
    if tp.roots.len() == 2 {
        return Ok(vec![(tp.roots[0], tp.roots[1])]);
    }
    let l = tp
        .labels
        .ok_or_else(|| Error::Geometry(format!("turning points at E = {e} could not be labelled")))?;
    let (i0, m, p) = (tp.roots[l.i0], tp.roots[l.minus], tp.roots[l.plus]);
    Ok(match contour {
        Contour::GammaPlus => vec![(i0, p)],
        Contour::GammaMinus => vec![(m, i0)],
        Contour::GammaM => vec![(i0, p), (m, i0)],
    })
}

/// Semiclassical action `J = (1/2πi)∮√(V − E) dz`, oriented so that
/// `Re J ≥ 0`.
pub fn action_integral(spec: &ModelSpec, e: C64, contour: Contour) -> Result<ActionValue> {
    action_integral_n(spec, e, contour, 512)
}

pub fn action_integral_n(spec: &ModelSpec, e: C64, contour: Contour, n: usize) -> Result<ActionValue> {
    spec.validate()?;
    let q = shifted(&spec.poly(), e);
    let mut total = (C64::new(0.0, 0.0), C64::new(0.0, 0.0));
    let mut coarse = C64::new(0.0, 0.0);
    for (a, b) in cut_pairs(spec, e, contour)? {
        let (j, dj) = orient_pair(&q, a, b, n)?;
        let (jc, _) = orient_pair(&q, a, b, n / 2)?;
        total.0 += j;
        total.1 += dj;
        coarse += jc;
    }
    Ok(ActionValue {
        energy: e,
        hbar: spec.hbar_eff().re,
        contour,
        j: total.0,
        dj: total.1,
        method: ActionMethod::WkbQuadrature,
        error: (total.0 - coarse).norm(),
    })
}

fn orient_pair(q: &Cubic, a: C64, b: C64, n: usize) -> Result<(C64, C64)> {
    let (j, dj) = ellipse_action(q, a, b, n)?;
    Ok(orient(j, dj))
}

/// Which semiclassical rule to quantize.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Quantization {
    /// One pair cut, for the non-real levels `E_n^±` at small `ħ`.
    Cc1,
    /// Both pair cuts, for the real levels `E_m`.
    Cc3,
}

impl std::str::FromStr for Quantization {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "cc1" => Ok(Quantization::Cc1),
            "cc3" => Ok(Quantization::Cc3),
            _ => Err(Error::Config(format!("unknown quantization {s}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WkbLevel {
    pub spec: ModelSpec,
    pub label: usize,
    pub quantization: Quantization,
    pub side: Side,
    pub energy: C64,
    pub action: ActionValue,
    pub iterations: usize,
}

/// `J₂(1)` for `iz³`, the large-energy normalization of the cubic families.
fn pure_cubic_j2() -> f64 {
    action_integral(&ModelSpec::alpha(C64::new(0.0, 0.0)), C64::new(1.0, 0.0), Contour::GammaM)
        .map(|a| a.j.re)
        .unwrap_or(0.46)
}

fn default_guess(spec: &ModelSpec, label: usize, q: Quantization, side: Side) -> C64 {
    let hb = spec.hbar_eff();
    let nu = label as f64 + 0.5;
    match (spec.family, q) {
        (Family::Hbar, Quantization::Cc1) => side.limit_energy() + hb * side.frequency() * (2.0 * nu),
        (Family::BetaTilde, _) => C64::new(2.0 * nu, 0.0) * hb,
        _ => {
            let e = (hb.re * nu / pure_cubic_j2()).powf(1.2);
            C64::new(e, 0.0)
        }
    }
}

/// Root of `J(E) = ħ(label + ½)` by Newton's method on the quadrature.
pub fn solve_wkb_level(spec: &ModelSpec, label: usize, q: Quantization, side: Side, guess: Option<C64>) -> Result<WkbLevel> {
    let contour = match (q, side) {
        (Quantization::Cc1, Side::Plus) => Contour::GammaPlus,
        (Quantization::Cc1, Side::Minus) => Contour::GammaMinus,
        (Quantization::Cc3, _) => Contour::GammaM,
    };
    let target = spec.hbar_eff() * (label as f64 + 0.5);
    let mut e = guess.unwrap_or_else(|| default_guess(spec, label, q, side));
    let mut trace = vec![e];
    for it in 0..60 {
        let a = action_integral(spec, e, contour)?;
        let f = a.j - target;
        let mut step = -f / a.dj;
        // Keep the iterate from jumping across the turning-point geometry.
        let cap = 0.5 * (1.0 + e.norm());
        if step.norm() > cap {
            step *= cap / step.norm();
        }
        e += step;
        trace.push(e);
        if !e.re.is_finite() || !e.im.is_finite() {
            break;
        }
        if step.norm() <= 1e-13 * (1.0 + e.norm()) {
            let action = action_integral(spec, e, contour)?;
            return Ok(WkbLevel {
                spec: *spec,
                label,
                quantization: q,
                side,
                energy: e,
                action,
                iterations: it + 1,
            });
        }
    }
    Err(Error::Convergence {
        iterations: trace.len() - 1,
        last: e,
        trace,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuantizationResidual {
    pub contour: Contour,
    pub label: usize,
    pub hbar: f64,
    /// `(1/2πi)∮ψ′/ψ dz` before rounding.
    pub winding: f64,
    pub residual: f64,
}

/// Contour for the exact rule: the box around `x±` for non-real `Hbar`
/// levels, the node window otherwise.
pub fn quantization_path(pair: &EigenPair, contour: Contour) -> Result<ComplexPath> {
    let depth = cone_depth(&pair.spec, pair.energy);
    match contour {
        Contour::GammaM => Ok(node_window(&pair.spec, depth)),
        Contour::GammaPlus | Contour::GammaMinus => {
            let branch = if contour == Contour::GammaPlus { Branch::Plus } else { Branch::Minus };
            let c = local_center(&pair.spec, branch)
                .ok_or_else(|| Error::Geometry("pair contours need the Hbar family".into()))?;
            Ok(Rect::centered(c, LOCAL_HALF).path())
        }
    }
}

/// `|(ħ/2πi)∮ψ′/ψ dz + ħ/2 − ħ(label + ½)|`.
pub fn exact_quantization_residual(pair: &EigenPair, contour: Contour) -> Result<QuantizationResidual> {
    let path = quantization_path(pair, contour)?;
    let label = pair
        .label
        .ok_or_else(|| Error::Config("eigenpair carries no label".into()))?;
    let ef = Eigenfunction::new(pair)?;
    residual_on(&ef, &path, label, contour)
}

pub fn residual_on(ef: &Eigenfunction, path: &ComplexPath, label: usize, contour: Contour) -> Result<QuantizationResidual> {
    let hbar = ef.spec.hbar_eff().re;
    let w = ef.log_change(path)?.im / (2.0 * PI);
    Ok(QuantizationResidual {
        contour,
        label,
        hbar,
        winding: w,
        residual: (hbar * w + hbar / 2.0 - hbar * (label as f64 + 0.5)).abs(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DivergenceCheck {
    pub e_magnitude: f64,
    pub label: usize,
    pub hbar: f64,
    /// `k = |E|^{−5/6} ħ`.
    pub k: f64,
    pub rhs: f64,
    /// `(φ, J₂)` for the unit operator at energy `e^{iφ}`.
    pub lhs: Vec<(f64, C64)>,
    /// Smallest `|J₂ − k(m + ½)|` over the phases.
    pub mismatch: f64,
}

/// Rescaled quantization mismatch for a hypothetical level of modulus `|E|`.
pub fn divergence_exclusion_check(e_magnitude: f64, label: usize, hbar: f64) -> Result<DivergenceCheck> {
    if e_magnitude < 10.0 {
        return Err(Error::Config("the rescaled check needs |E| ≥ 10".into()));
    }
    let k = e_magnitude.powf(-5.0 / 6.0) * hbar;
    let rhs = k * (label as f64 + 0.5);
    let unit = ModelSpec::alpha(C64::new(0.0, 0.0));
    let lhs: Vec<(f64, C64)> = [-0.6, -0.3, 0.0, 0.3, 0.6]
        .iter()
        .filter_map(|&phi| {
            action_integral(&unit, C64::from_polar(1.0, phi), Contour::GammaM)
                .ok()
                .map(|a| (phi, a.j))
        })
        .collect();
    if lhs.is_empty() {
        return Err(Error::Geometry("no phase admits the pair contours".into()));
    }
    let mismatch = lhs.iter().map(|(_, j)| (j - rhs).norm()).fold(f64::INFINITY, f64::min);
    Ok(DivergenceCheck {
        e_magnitude,
        label,
        hbar,
        k,
        rhs,
        lhs,
        mismatch,
    })
}

/// The same rescaling for the harmonic oscillator at `E = ħ(2m + 1)`, where
/// `k = ħ/|E|` and the balance is exact.
pub fn harmonic_balance(label: usize, hbar: f64) -> Result<f64> {
    let e = hbar * (2 * label + 1) as f64;
    let k = hbar / e;
    let a = action_integral(&ModelSpec::beta(C64::new(0.0, 0.0)), C64::new(1.0, 0.0), Contour::GammaM)?;
    Ok((a.j - k * (label as f64 + 0.5)).norm())
}

/// Whether two turning points are closer than the double-root tolerance.
pub fn is_degenerate(tp: &TurningPointSet) -> bool {
    tp.has_multiple()
        || (0..tp.roots.len()).any(|i| (i + 1..tp.roots.len()).any(|j| (tp.roots[i] - tp.roots[j]).norm() < DOUBLE_ROOT_TOL))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    #[test]
    fn harmonic_action_is_half_the_energy() {
        let spec = ModelSpec::beta(c(0.0, 0.0));
        for e in [0.5, 1.0, 3.0] {
            let a = action_integral(&spec, c(e, 0.0), Contour::GammaM).unwrap();
            assert!((a.j - e / 2.0).norm() < 1e-12, "{}", a.j);
            assert!((a.dj - 0.5).norm() < 1e-12, "{}", a.dj);
        }
    }

    #[test]
    fn ellipse_matches_segment_rule() {
        let spec = ModelSpec::hbar(1.0);
        let e = c(0.6, 0.0);
        let tp = turning_points(&spec, e);
        let l = tp.labels.unwrap();
        let (a, b) = (tp.roots[l.i0], tp.roots[l.plus]);
        let seg = segment_action(&spec.poly(), e, a, b, 200) / PI;
        let ell = action_integral(&spec, e, Contour::GammaPlus).unwrap().j;
        // Collapsing the ellipse onto the cut gives |J| = |∫ₐᵇ √(E − V) dz| / π.
        assert!((seg.norm() - ell.norm()).abs() < 1e-10, "{seg} {ell}");
    }

    #[test]
    fn derivative_matches_difference_quotient() {
        let spec = ModelSpec::hbar(1.0);
        let e = c(0.5, -0.1);
        let d = 1e-6;
        let a = action_integral(&spec, e, Contour::GammaPlus).unwrap();
        let b = action_integral(&spec, e + d, Contour::GammaPlus).unwrap();
        assert!(((b.j - a.j) / d - a.dj).norm() < 1e-5);
    }

    #[test]
    fn start_directions_satisfy_the_local_condition() {
        let spec = ModelSpec::hbar(1.0);
        let e = c(0.3, 0.0);
        let q = shifted(&spec.poly(), e);
        for t in turning_points(&spec, e).roots {
            for d in start_directions(&q, t) {
                let v = -q.deriv(t) * d * d * d;
                assert!(v.im.abs() < 1e-12 * v.norm() && v.re > 0.0);
            }
        }
    }
}
