//! Zeros of eigenfunctions in the complex plane.
//!
//! Eigenfunctions are entire, so their zeros in a region are counted by the
//! winding of `ψ` along its boundary.  Off the real axis `ψ` is obtained by
//! continuing the real-axis solution along straight segments.

use num_complex::Complex64 as C64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::eigensolver::{shoot_side, Branch, EigenPair};
use crate::error::{Error, Result};
use crate::models::{turning_points, Family, ModelSpec, Side};
use crate::ode::{asymptotic_frame, integrate_linear, ComplexPath, OdeOptions, Scaled, Schrodinger, WaveState};

const SQRT3: f64 = 1.732_050_807_568_877_2;
/// Real-axis sample spacing of a stored eigenfunction.
const SAMPLE_DX: f64 = 0.05;
/// Width of the band around cone edges and the imaginary axis treated as ambiguous.
const BAND: f64 = 1e-8;

/// Node counts attached to an eigenpair.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeCounts {
    /// Zeros in the lower cone `{y < 0, |x| < −√3 y}` (truncated).
    pub lower: Option<usize>,
    /// Zeros in the upper cone `{y > 0, |x| < √3 y}` (truncated).
    pub upper: Option<usize>,
    /// Zeros on the imaginary axis below the imaginary turning point.
    pub imaginary: Option<usize>,
    /// Zeros in the box around the stationary point a non-real level emerges from.
    pub local: Option<usize>,
}

/// Axis-aligned rectangle `[x0, x1] × [y0, y1]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub x0: f64,
    pub x1: f64,
    pub y0: f64,
    pub y1: f64,
}

impl Rect {
    pub fn new(x0: f64, x1: f64, y0: f64, y1: f64) -> Self {
        Rect { x0, x1, y0, y1 }
    }

    pub fn centered(c: C64, half: f64) -> Self {
        Rect::new(c.re - half, c.re + half, c.im - half, c.im + half)
    }

    pub fn contains(&self, z: C64) -> bool {
        z.re >= self.x0 && z.re <= self.x1 && z.im >= self.y0 && z.im <= self.y1
    }

    pub fn center(&self) -> C64 {
        C64::new(0.5 * (self.x0 + self.x1), 0.5 * (self.y0 + self.y1))
    }

    pub fn path(&self) -> ComplexPath {
        ComplexPath::rectangle(self.x0, self.x1, self.y0, self.y1)
    }

    fn quarter(&self, fx: f64, fy: f64) -> [Rect; 4] {
        let xm = self.x0 + fx * (self.x1 - self.x0);
        let ym = self.y0 + fy * (self.y1 - self.y0);
        [
            Rect::new(self.x0, xm, self.y0, ym),
            Rect::new(xm, self.x1, self.y0, ym),
            Rect::new(self.x0, xm, ym, self.y1),
            Rect::new(xm, self.x1, ym, self.y1),
        ]
    }
}

/// Eigenfunction sampled on the real axis, continued into the plane on demand.
#[derive(Clone, Debug)]
pub struct Eigenfunction {
    pub spec: ModelSpec,
    pub energy: C64,
    pub branch: Branch,
    pub l: f64,
    pub match_point: f64,
    pub tol: f64,
    core: f64,
    xs: Vec<f64>,
    states: Vec<WaveState>,
}

fn tidy(mut w: WaveState) -> WaveState {
    let m = w.psi.norm().max(w.dpsi.norm());
    if m > 0.0 && m.is_finite() {
        w.psi /= m;
        w.dpsi /= m;
        w.log_scale += m.ln();
    }
    w
}

fn to_wave(s: &Scaled<2>, reference: &Scaled<2>) -> WaveState {
    tidy(WaveState {
        z: s.z,
        psi: s.y[0] / reference.y[0],
        dpsi: s.y[1] / reference.y[0],
        log_scale: s.log_scale - reference.log_scale,
    })
}

impl Eigenfunction {
    pub fn new(pair: &EigenPair) -> Result<Self> {
        Self::build(&pair.spec, pair.energy, pair.branch, pair.l, pair.match_point, pair.tol.max(1e-12))
    }

    pub fn build(spec: &ModelSpec, energy: C64, branch: Branch, l: f64, match_point: f64, tol: f64) -> Result<Self> {
        let n = ((2.0 * l / SAMPLE_DX).ceil() as usize).clamp(200, 4000);
        let xs_all: Vec<f64> = (1..n).map(|j| -l + 2.0 * l * j as f64 / n as f64).collect();
        let mut right: Vec<f64> = vec![match_point];
        right.extend(xs_all.iter().copied().filter(|&x| x > match_point + 1e-9));
        let mut left: Vec<f64> = xs_all.iter().copied().filter(|&x| x < match_point - 1e-9).collect();
        left.push(match_point);
        let (rp, rm) = rayon::join(
            || shoot_side::<2>(spec, energy, l, 1.0, &right, tol),
            || shoot_side::<2>(spec, energy, l, -1.0, &left, tol),
        );
        let (rp, rm) = (rp?, rm?);
        let mref = *rm.last().unwrap();
        let pref = rp[0];
        let mut xs = Vec::with_capacity(left.len() + right.len());
        let mut states = Vec::with_capacity(left.len() + right.len());
        for (x, s) in left.iter().zip(&rm).take(left.len() - 1) {
            xs.push(*x);
            states.push(to_wave(s, &mref));
        }
        for (x, s) in right.iter().zip(&rp) {
            xs.push(*x);
            states.push(to_wave(s, &pref));
        }
        let mut ef = Eigenfunction {
            spec: *spec,
            energy,
            branch,
            l,
            match_point,
            tol,
            core: turning_points(spec, energy).roots.iter().map(|z| z.norm()).fold(0.0, f64::max) + 0.5,
            xs,
            states,
        };
        if branch == Branch::RealPositive {
            ef.fix_pt_gauge()?;
        }
        Ok(ef)
    }

    /// Imaginary turning point height `y₀` for real levels of PT-symmetric members.
    pub fn y0(&self) -> Option<f64> {
        let tp = turning_points(&self.spec, self.energy);
        tp.i0().map(|z| z.im)
    }

    /// Rotates the phase so that `ψ(iy)` is real with `ψ(i(y₀ − 1)) > 0`.
    fn fix_pt_gauge(&mut self) -> Result<()> {
        let y_ref = self.y0().unwrap_or(1.0) - 1.0;
        let w = self.state_at(C64::new(0.0, y_ref))?;
        let phase = w.psi.conj() / w.psi.norm();
        for s in self.states.iter_mut() {
            s.psi *= phase;
            s.dpsi *= phase;
        }
        Ok(())
    }

    pub fn sample_points(&self) -> &[f64] {
        &self.xs
    }

    pub fn real_samples(&self) -> &[WaveState] {
        &self.states
    }

    fn nearest(&self, x: f64) -> usize {
        let i = self.xs.partition_point(|&s| s < x);
        if i == 0 {
            0
        } else if i >= self.xs.len() {
            self.xs.len() - 1
        } else if (self.xs[i] - x).abs() < (x - self.xs[i - 1]).abs() {
            i
        } else {
            i - 1
        }
    }

    fn continue_along(&self, start: WaveState, vertices: Vec<C64>, opts: &OdeOptions) -> Result<crate::ode::Run<2>> {
        let sys = Schrodinger::new(&self.spec, self.energy);
        let path = ComplexPath::chain(vertices);
        integrate_linear(|z, y| sys.rhs2(z, y), &path, [start.psi, start.dpsi], start.log_scale, opts)
    }

    /// `(ψ, ψ′)` at `z` by straight continuation from the nearest real-axis sample.
    fn direct(&self, z: C64) -> Result<WaveState> {
        let i = self.nearest(z.re);
        let s = self.states[i];
        let mut v = vec![s.z];
        let corner = C64::new(z.re, 0.0);
        let tiny = 1e-6 * (1.0 + z.norm());
        if (corner - s.z).norm() > tiny && (z - corner).norm() > tiny {
            v.push(corner);
        }
        if (z - *v.last().unwrap()).norm() > 0.0 {
            v.push(z);
        }
        if v.len() == 1 {
            return Ok(s);
        }
        let run = self.continue_along(s, v, &OdeOptions::new(self.tol))?;
        Ok(tidy(WaveState {
            z,
            psi: run.end.y[0],
            dpsi: run.end.y[1],
            log_scale: run.end.log_scale,
        }))
    }

    /// Radius inside which straight continuation from the real axis is used.
    pub fn core_radius(&self) -> f64 {
        self.core
    }

    /// `+1`/`−1` when the ray at angle `theta` lies in the decaying sector
    /// connected to `±∞` on the real axis, tested at radius `r`.
    fn recessive_side(&self, theta: f64, r: f64) -> Option<f64> {
        let poly = self.spec.poly();
        let k = self.spec.kinetic();
        let q_at = |t: f64| ((poly.eval(C64::from_polar(r, t)) - self.energy) / k).sqrt();
        for side in [1.0, -1.0] {
            let start = if side > 0.0 { 0.0 } else { std::f64::consts::PI };
            let mut d = theta - start;
            d = (d + std::f64::consts::PI).rem_euclid(2.0 * std::f64::consts::PI) - std::f64::consts::PI;
            let mut q = q_at(start);
            if (q * side).re < 0.0 {
                q = -q;
            }
            let steps = 64;
            let mut ok = true;
            for j in 0..=steps {
                let t = start + d * j as f64 / steps as f64;
                let mut qn = q_at(t);
                if (qn - q).norm() > (qn + q).norm() {
                    qn = -qn;
                }
                q = qn;
                if (q * C64::from_polar(1.0, t)).re < 0.1 * q.norm() {
                    ok = false;
                    break;
                }
            }
            if ok {
                return Some(side);
            }
        }
        None
    }

    /// `(ψ, ψ′)` at `z`.
    ///
    /// Near the turning points `ψ` is continued straight from the real axis.
    /// Farther out, inside a sector where `ψ` decays, it is integrated inward
    /// from a recessive anchor on the ray through `z`; elsewhere it is
    /// integrated radially outward.  Both representations are matched at the
    /// core radius.
    pub fn state_at(&self, z: C64) -> Result<WaveState> {
        let r = z.norm();
        if r <= self.core {
            return self.direct(z);
        }
        let u = z / r;
        let z_ref = u * self.core;
        let reference = self.direct(z_ref)?;
        let ra = self.l.max(1.25 * r);
        if self.recessive_side(u.arg(), ra).is_some() {
            let anchor = u * ra;
            let fr = asymptotic_frame(&self.spec, self.energy, anchor, u)?;
            let opts = OdeOptions::new(self.tol).with_stops(vec![ra - r, ra - self.core]);
            let run = self.continue_along(
                WaveState::new(anchor, C64::new(1.0, 0.0), fr.log_derivative),
                vec![anchor, z_ref],
                &opts,
            )?;
            let at_z = run.samples[0].1;
            let at_ref = run.end;
            let c = reference.psi / at_ref.y[0];
            Ok(tidy(WaveState {
                z,
                psi: at_z.y[0] * c,
                dpsi: at_z.y[1] * c,
                log_scale: at_z.log_scale - at_ref.log_scale + reference.log_scale,
            }))
        } else {
            let run = self.continue_along(reference, vec![z_ref, z], &OdeOptions::new(self.tol))?;
            Ok(tidy(WaveState {
                z,
                psi: run.end.y[0],
                dpsi: run.end.y[1],
                log_scale: run.end.log_scale,
            }))
        }
    }

    /// Continuous change of `log ψ` along a polyline, from pointwise
    /// evaluations refined until neighbouring phases differ by less than π/4.
    pub fn log_change(&self, path: &ComplexPath) -> Result<C64> {
        path.validate()?;
        let parts: Vec<Result<C64>> = path
            .vertices
            .par_windows(2)
            .map(|w| self.edge_log_change(w[0], w[1]))
            .collect();
        parts.into_iter().sum()
    }

    fn edge_log_change(&self, a: C64, b: C64) -> Result<C64> {
        let n0 = 12;
        let pts: Vec<C64> = (0..=n0).map(|j| a + (b - a) * (j as f64 / n0 as f64)).collect();
        let states: Vec<WaveState> = pts.par_iter().map(|&z| self.state_at(z)).collect::<Result<_>>()?;
        let mut total = C64::new(0.0, 0.0);
        for k in 0..n0 {
            total += self.refine(states[k], states[k + 1], 0)?;
        }
        Ok(total)
    }

    fn refine(&self, sa: WaveState, sb: WaveState, depth: usize) -> Result<C64> {
        if sa.psi.norm() == 0.0 || sb.psi.norm() == 0.0 {
            return Err(Error::Geometry(format!("eigenfunction vanishes on the contour near {}", sa.z)));
        }
        let actual = (sb.psi / sa.psi).ln() + (sb.log_scale - sa.log_scale);
        let predicted = (sb.z - sa.z) * (sa.dpsi / sa.psi + sb.dpsi / sb.psi) * 0.5;
        if actual.im.abs() < std::f64::consts::FRAC_PI_4 && (actual - predicted).norm() < 0.5 {
            return Ok(actual);
        }
        if depth >= 24 || (sb.z - sa.z).norm() < 1e-10 * (1.0 + sa.z.norm()) {
            return Err(Error::Geometry(format!("eigenfunction zero on or near the contour at {}", sa.z)));
        }
        let mid = self.state_at((sa.z + sb.z) * 0.5)?;
        Ok(self.refine(sa, mid, depth + 1)? + self.refine(mid, sb, depth + 1)?)
    }

    /// Winding number of `ψ` along a closed polyline, with the raw value.
    pub fn winding(&self, path: &ComplexPath) -> Result<(i64, f64)> {
        let d = self.log_change(path)?;
        let w = d.im / (2.0 * std::f64::consts::PI);
        if (w - w.round()).abs() <= 0.05 {
            Ok((w.round() as i64, w))
        } else {
            Err(Error::Accuracy(format!("non-integer winding {w}")))
        }
    }

    /// Samples `ψ(iy)` for `y` in `ys` (ascending, may straddle 0).
    pub fn imaginary_axis(&self, ys: &[f64]) -> Result<Vec<WaveState>> {
        let origin = self.state_at(C64::new(0.0, 0.0))?;
        let mut out = vec![origin; ys.len()];
        for dir in [1.0, -1.0] {
            let idx: Vec<usize> = (0..ys.len()).filter(|&k| ys[k] * dir > 0.0).collect();
            if idx.is_empty() {
                continue;
            }
            let far = idx.iter().map(|&k| ys[k].abs()).fold(0.0, f64::max);
            let stops: Vec<f64> = idx.iter().map(|&k| ys[k].abs()).collect();
            let opts = OdeOptions::new(self.tol).with_stops(stops.clone());
            let run = self.continue_along(origin, vec![C64::new(0.0, 0.0), C64::new(0.0, dir * far)], &opts)?;
            let mut order: Vec<usize> = (0..idx.len()).collect();
            order.sort_by(|&a, &b| stops[a].partial_cmp(&stops[b]).unwrap());
            for (j, &o) in order.iter().enumerate() {
                let s = run.samples[j].1;
                out[idx[o]] = WaveState {
                    z: s.z,
                    psi: s.y[0],
                    dpsi: s.y[1],
                    log_scale: s.log_scale,
                };
            }
        }
        Ok(out)
    }
}

/// Number of zeros of the eigenfunction inside `rect`.
/// A zero on or next to the boundary triggers up to three deterministic
/// outward jitters of the rectangle; a non-integer winding is retried once
/// with the integration tolerance tightened a hundredfold.
pub fn count_zeros_in_rectangle(ef: &Eigenfunction, rect: Rect) -> Result<usize> {
    let size = (rect.x1 - rect.x0).max(rect.y1 - rect.y0);
    let mut last = None;
    for k in 0..4 {
        let d = 1e-5 * size * k as f64;
        let r = Rect::new(rect.x0 - 0.7 * d, rect.x1 + 1.3 * d, rect.y0 - 1.1 * d, rect.y1 + 0.9 * d);
        match count_zeros_in_polygon(ef, &r.path()) {
            Err(e @ Error::Geometry(_)) => last = Some(e),
            other => return other,
        }
    }
    Err(last.unwrap())
}

pub fn count_zeros_in_polygon(ef: &Eigenfunction, path: &ComplexPath) -> Result<usize> {
    let (n, _) = match ef.winding(path) {
        Err(Error::Accuracy(_)) if ef.tol > 1e-13 => {
            let tighter = Eigenfunction::build(&ef.spec, ef.energy, ef.branch, ef.l, ef.match_point, (ef.tol * 1e-2).max(1e-13))?;
            tighter.winding(path)?
        }
        r => r?,
    };
    if n < 0 {
        return Err(Error::Geometry(format!("negative winding {n}: contour orientation")));
    }
    Ok(n as usize)
}

/// Truncated lower cone `{y < 0, |x| < −√3 y, y > −depth}` as a closed triangle.
pub fn lower_cone(depth: f64) -> ComplexPath {
    ComplexPath::chain(vec![
        C64::new(0.0, 0.0),
        C64::new(-SQRT3 * depth, -depth),
        C64::new(SQRT3 * depth, -depth),
        C64::new(0.0, 0.0),
    ])
}

/// Truncated upper cone `{y > 0, |x| < √3 y, y < height}`.
pub fn upper_cone(height: f64) -> ComplexPath {
    ComplexPath::chain(vec![
        C64::new(0.0, 0.0),
        C64::new(SQRT3 * height, height),
        C64::new(-SQRT3 * height, height),
        C64::new(0.0, 0.0),
    ])
}

pub fn in_lower_cone(z: C64) -> bool {
    z.im < -BAND && z.re.abs() < -SQRT3 * z.im - BAND
}

pub fn in_upper_cone(z: C64) -> bool {
    z.im > BAND && z.re.abs() < SQRT3 * z.im - BAND
}

/// Region whose zeros are counted as nodes.
///
/// For the harmonic picture the nodes sit on or just below the real axis,
/// so the window is the lower half plane slightly lifted; elsewhere it is
/// the truncated lower cone.
pub fn node_window(spec: &ModelSpec, depth: f64) -> ComplexPath {
    if spec.family == Family::BetaTilde {
        ComplexPath::rectangle(-depth, depth, -depth, HARMONIC_LIFT)
    } else {
        lower_cone(depth)
    }
}

/// Height above the real axis included in the harmonic node window.
pub const HARMONIC_LIFT: f64 = 0.1;

/// Depth of the cone windows: comfortably beyond the turning points.
pub fn cone_depth(spec: &ModelSpec, e: C64) -> f64 {
    let r = turning_points(spec, e).roots.iter().map(|z| z.norm()).fold(0.0, f64::max);
    1.5 * r + 1.0
}

/// The stationary point a non-real `Hbar` level localizes at, if any.
pub fn local_center(spec: &ModelSpec, branch: Branch) -> Option<C64> {
    if spec.family != Family::Hbar || spec.shift() != C64::new(0.0, 0.0) {
        return None;
    }
    match branch {
        Branch::Plus => Some(C64::new(Side::Plus.stationary_point(), 0.0)),
        Branch::Minus => Some(C64::new(Side::Minus.stationary_point(), 0.0)),
        _ => None,
    }
}

/// Half-size of the box around `x±` used for perturbative labels.
pub const LOCAL_HALF: f64 = 0.45;

pub fn node_counts(pair: &EigenPair) -> Result<NodeCounts> {
    let ef = Eigenfunction::new(pair)?;
    node_counts_of(&ef)
}

pub fn node_counts_of(ef: &Eigenfunction) -> Result<NodeCounts> {
    let y = cone_depth(&ef.spec, ef.energy);
    let (lower, upper) = rayon::join(
        || count_zeros_in_polygon(ef, &node_window(&ef.spec, y)),
        || count_zeros_in_polygon(ef, &upper_cone(y)),
    );
    let mut counts = NodeCounts {
        lower: lower.ok(),
        upper: upper.ok(),
        imaginary: None,
        local: None,
    };
    if ef.branch == Branch::RealPositive {
        if let Some(y0) = ef.y0() {
            counts.imaginary = Some(imaginary_nodes(ef, -y, y0)?);
        }
    }
    if let Some(c) = local_center(&ef.spec, ef.branch) {
        counts.local = count_zeros_in_rectangle(ef, Rect::centered(c, LOCAL_HALF)).ok();
    }
    Ok(counts)
}

/// Sign changes of the real profile `ψ(iy)` on `(y_min, y_max)`.
pub fn imaginary_nodes(ef: &Eigenfunction, y_min: f64, y_max: f64) -> Result<usize> {
    let n = 400;
    let ys: Vec<f64> = (0..=n)
        .map(|j| y_min + (y_max - y_min) * j as f64 / n as f64)
        .collect();
    let prof = ef.imaginary_axis(&ys)?;
    let mut changes = 0;
    for w in prof.windows(2) {
        if w[0].psi.re.signum() != w[1].psi.re.signum() && w[0].psi.re != 0.0 {
            changes += 1;
        }
    }
    Ok(changes)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ZeroClass {
    NodeLower,
    NodeUpper,
    ImaginaryNode,
    EscapeZero,
    Unclassified,
}

impl ZeroClass {
    pub fn name(self) -> &'static str {
        match self {
            ZeroClass::NodeLower => "node-lower",
            ZeroClass::NodeUpper => "node-upper",
            ZeroClass::ImaginaryNode => "imaginary-node",
            ZeroClass::EscapeZero => "escape-zero",
            ZeroClass::Unclassified => "unclassified",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Zero {
    pub z: C64,
    pub class: ZeroClass,
    /// `|ψ/ψ′|` at the polished position.
    pub residual: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegionCounts {
    pub lower_cone: usize,
    pub upper_cone: usize,
    /// `Re z > 0`.
    pub right_half: usize,
    /// `Re z < 0`.
    pub left_half: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ZeroSet {
    pub energy: C64,
    pub branch: Branch,
    pub zeros: Vec<Zero>,
    pub counts: RegionCounts,
    /// Zeros the caller expected in the region.
    pub expected: usize,
    /// Argument-principle count of the whole region.
    pub found: usize,
}

impl ZeroSet {
    pub fn matches_expected(&self) -> bool {
        self.found == self.expected && self.zeros.len() == self.found
    }

    pub fn nodes(&self) -> usize {
        self.zeros
            .iter()
            .filter(|z| matches!(z.class, ZeroClass::NodeLower | ZeroClass::NodeUpper | ZeroClass::ImaginaryNode))
            .count()
    }

    pub fn count(&self, class: ZeroClass) -> usize {
        self.zeros.iter().filter(|z| z.class == class).count()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("re,im,class,residual\n");
        for z in &self.zeros {
            s.push_str(&format!("{},{},{},{:e}\n", z.z.re, z.z.im, z.class.name(), z.residual));
        }
        s
    }

    /// Largest distance from a zero to the nearest reflected zero `−z̄`.
    pub fn reflection_mismatch(&self) -> f64 {
        let pts: Vec<C64> = self.zeros.iter().map(|z| z.z).collect();
        pts.iter()
            .map(|z| {
                let r = -z.conj();
                pts.iter().map(|w| (w - r).norm()).fold(f64::INFINITY, f64::min)
            })
            .fold(0.0, f64::max)
    }
}

/// Newton polish of a zero starting at `z`, staying inside `rect`.
fn polish(ef: &Eigenfunction, mut z: C64, rect: &Rect) -> Option<(C64, f64)> {
    let slack = 1e-9 * (1.0 + rect.center().norm());
    let grown = Rect::new(rect.x0 - slack, rect.x1 + slack, rect.y0 - slack, rect.y1 + slack);
    for _ in 0..40 {
        let w = ef.state_at(z).ok()?;
        let step = w.psi / w.dpsi;
        if !(step.re.is_finite() && step.im.is_finite()) {
            return None;
        }
        z -= step;
        if !grown.contains(z) {
            return None;
        }
        if step.norm() < 1e-12 * (1.0 + z.norm()) {
            let w = ef.state_at(z).ok()?;
            return Some((z, (w.psi / w.dpsi).norm()));
        }
    }
    let w = ef.state_at(z).ok()?;
    let r = (w.psi / w.dpsi).norm();
    (r < 1e-10).then_some((z, r))
}

fn locate_in(ef: &Eigenfunction, rect: Rect, count: usize, depth: usize) -> Result<Vec<C64>> {
    if count == 0 {
        return Ok(vec![]);
    }
    if count == 1 {
        if let Some((z, _)) = polish(ef, rect.center(), &rect) {
            return Ok(vec![z]);
        }
    }
    if depth >= 20 {
        return Err(Error::Accuracy(format!("zero subdivision depth exhausted in {rect:?}")));
    }
    const SPLITS: [(f64, f64); 4] = [(0.5, 0.5), (0.471, 0.537), (0.538, 0.462), (0.413, 0.589)];
    for (fx, fy) in SPLITS {
        let cells = rect.quarter(fx, fy);
        let counts: Vec<Result<usize>> = cells.par_iter().map(|c| count_zeros_in_rectangle(ef, *c)).collect();
        if counts.iter().any(|c| c.is_err()) {
            continue;
        }
        let counts: Vec<usize> = counts.into_iter().map(|c| c.unwrap()).collect();
        if counts.iter().sum::<usize>() != count {
            continue;
        }
        let found: Vec<Result<Vec<C64>>> = cells
            .par_iter()
            .zip(counts.par_iter())
            .map(|(c, &n)| locate_in(ef, *c, n, depth + 1))
            .collect();
        let mut out = Vec::new();
        for f in found {
            out.extend(f?);
        }
        return Ok(out);
    }
    Err(Error::Accuracy(format!("could not subdivide {rect:?} consistently")))
}

/// Classification of a zero by region and symmetry.
pub fn classify(spec: &ModelSpec, branch: Branch, z: C64) -> ZeroClass {
    if let Some(c) = local_center(spec, branch) {
        if Rect::centered(c, LOCAL_HALF).contains(z) {
            return if z.im < 0.0 {
                ZeroClass::NodeLower
            } else {
                ZeroClass::NodeUpper
            };
        }
        if in_upper_cone(z) || z.im > LOCAL_HALF {
            return ZeroClass::EscapeZero;
        }
        return ZeroClass::Unclassified;
    }
    if in_lower_cone(z) {
        if z.re.abs() < BAND {
            ZeroClass::ImaginaryNode
        } else {
            ZeroClass::NodeLower
        }
    } else if in_upper_cone(z) {
        ZeroClass::EscapeZero
    } else {
        ZeroClass::Unclassified
    }
}

/// Locates the zeros in `region`.
///
/// The set records both `expected` and the contour count; a disagreement
/// is reported through [`ZeroSet::matches_expected`] rather than hidden.
pub fn locate_zeros(ef: &Eigenfunction, region: Rect, expected: usize) -> Result<ZeroSet> {
    let found = count_zeros_in_rectangle(ef, region)?;
    let pts = locate_in(ef, region, found, 0)?;
    Ok(zero_set(ef, pts, expected, found))
}

fn zero_set(ef: &Eigenfunction, mut pts: Vec<C64>, expected: usize, found: usize) -> ZeroSet {
    pts.sort_by(|a, b| (a.im, a.re).partial_cmp(&(b.im, b.re)).unwrap());
    let zeros: Vec<Zero> = pts
        .par_iter()
        .map(|&z| {
            let residual = ef.state_at(z).map(|w| (w.psi / w.dpsi).norm()).unwrap_or(f64::NAN);
            Zero {
                z,
                class: ZeroClass::Unclassified,
                residual,
            }
        })
        .collect();
    let mut set = ZeroSet {
        energy: ef.energy,
        branch: ef.branch,
        zeros,
        counts: RegionCounts::default(),
        expected,
        found,
    };
    classify_zeros(&ef.spec, &mut set);
    set
}

/// Assigns classes and region counts.
pub fn classify_zeros(spec: &ModelSpec, set: &mut ZeroSet) {
    let mut counts = RegionCounts::default();
    for z in set.zeros.iter_mut() {
        z.class = classify(spec, set.branch, z.z);
        if in_lower_cone(z.z) {
            counts.lower_cone += 1;
        }
        if in_upper_cone(z.z) {
            counts.upper_cone += 1;
        }
        if z.z.re > BAND {
            counts.right_half += 1;
        } else if z.z.re < -BAND {
            counts.left_half += 1;
        }
    }
    set.counts = counts;
}

/// Real profile `φ(y) = ψ(iy)` and its sign changes.
#[derive(Clone, Debug)]
pub struct AxisProfile {
    pub ys: Vec<f64>,
    /// `φ(y)` mantissas with their log scales.
    pub values: Vec<WaveState>,
    pub sign_changes: usize,
    /// `min |φ|` relative to `max |φ|` over the samples.
    pub min_relative: f64,
}

pub fn imaginary_axis_profile(ef: &Eigenfunction, y_min: f64, y_max: f64, n: usize) -> Result<AxisProfile> {
    let ys: Vec<f64> = (0..=n).map(|j| y_min + (y_max - y_min) * j as f64 / n as f64).collect();
    let values = ef.imaginary_axis(&ys)?;
    let mut changes = 0;
    for w in values.windows(2) {
        if w[0].psi.re != 0.0 && w[0].psi.re.signum() != w[1].psi.re.signum() {
            changes += 1;
        }
    }
    let logs: Vec<f64> = values.iter().map(|w| w.psi.norm().ln() + w.log_scale).collect();
    let lmax = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lmin = logs.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(AxisProfile {
        ys,
        values,
        sign_changes: changes,
        min_relative: (lmin - lmax).exp(),
    })
}

/// Both sides of the flux balance `K·Im(φ̄φ′)(y) = −Im E ∫_y^∞ |φ|²` on the imaginary axis.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FluxBalance {
    pub y: f64,
    pub lhs: f64,
    pub rhs: f64,
    /// Part of the integral beyond the sampled range, from the `y^{−3/2}` tail law.
    pub tail: f64,
}

impl FluxBalance {
    pub fn relative_gap(&self) -> f64 {
        (self.lhs - self.rhs).abs() / self.rhs.abs().max(self.lhs.abs())
    }
}

/// Evaluates the flux balance at `y` by Simpson's rule on `[y, y_max]` plus a tail estimate.
pub fn flux_balance(ef: &Eigenfunction, y: f64, y_max: f64, spacing: f64) -> Result<FluxBalance> {
    if ef.spec.kinetic().im != 0.0 {
        return Err(Error::Config("flux balance needs a real kinetic coefficient".into()));
    }
    let mut n = ((y_max - y) / spacing).ceil() as usize;
    if n % 2 == 1 {
        n += 1;
    }
    let ys: Vec<f64> = (0..=n).map(|j| y + (y_max - y) * j as f64 / n as f64).collect();
    let vals = ef.imaginary_axis(&ys)?;
    let ref_ls = vals[0].log_scale;
    let dens: Vec<f64> = vals
        .iter()
        .map(|w| w.psi.norm_sqr() * (2.0 * (w.log_scale - ref_ls)).exp())
        .collect();
    let h = (y_max - y) / n as f64;
    let mut simpson = dens[0] + dens[n];
    for (j, d) in dens.iter().enumerate().take(n).skip(1) {
        simpson += if j % 2 == 1 { 4.0 * d } else { 2.0 * d };
    }
    simpson *= h / 3.0;
    // |φ|² ~ K y^{−3/2}: fit K on the last sixth of the range.
    let cut = y_max - (y_max - y) / 6.0;
    let ks: Vec<f64> = ys
        .iter()
        .zip(&dens)
        .filter(|(s, _)| **s >= cut && **s > 0.0)
        .map(|(s, d)| d * s.powf(1.5))
        .collect();
    let kfit = ks.iter().sum::<f64>() / ks.len().max(1) as f64;
    let tail = if y_max > 0.0 { 2.0 * kfit / y_max.sqrt() } else { 0.0 };
    let w0 = vals[0];
    // d/dy ψ(iy) = i ψ′(iy).
    let dphi = w0.dpsi * C64::new(0.0, 1.0);
    let lhs = ef.spec.kinetic().re * (w0.psi.conj() * dphi).im;
    let rhs = -ef.energy.im * (simpson + tail);
    Ok(FluxBalance { y, lhs, rhs, tail })
}

/// Zeros near the positive imaginary axis and the fit
/// `x(y)·(y² + ½) = a + b·ħ√y` of their real parts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LargeZeros {
    pub zeros: Vec<C64>,
    /// `x(y)·(y² + ½)` for each zero.
    pub scaled: Vec<f64>,
    /// Fitted intercept `a`, to be compared with `Im E`.
    pub intercept: f64,
    /// Fitted coefficient `b` of `ħ√y` (the imaginary part of the phase offset).
    pub im_theta: f64,
    /// Mean of `scaled` over the upper quarter of the window.
    pub tail_mean: f64,
}

/// Locates the zeros with `Im z ∈ [y_lo, y_hi]` that accompany the positive
/// imaginary axis of an `Hbar` eigenfunction.
///
/// `|ψ(iy)|` is sampled densely to find one local minimum per zero, and each
/// minimum seeds a Newton iteration evaluated by short hops off the axis.
pub fn large_zeros(ef: &Eigenfunction, y_lo: f64, y_hi: f64) -> Result<LargeZeros> {
    if ef.spec.family != Family::Hbar || ef.spec.hbar_im != 0.0 {
        return Err(Error::Config("large-zero fit needs the real-ħ Hbar family".into()));
    }
    if !(0.0 < y_lo && y_lo < y_hi) {
        return Err(Error::Config("need 0 < y_lo < y_hi".into()));
    }
    let h = ef.spec.hbar;
    let wavelength = 2.0 * std::f64::consts::PI * h / (y_hi.powi(3) + y_hi).sqrt();
    let dy = wavelength / 16.0;
    let (a, b) = (y_lo - 0.25, y_hi + 0.25);
    let n = ((b - a) / dy).ceil() as usize;
    let ys: Vec<f64> = (0..=n).map(|j| a + (b - a) * j as f64 / n as f64).collect();
    let axis = ef.imaginary_axis(&ys)?;
    let logs: Vec<f64> = axis.iter().map(|w| w.psi.norm().ln() + w.log_scale).collect();
    let minima: Vec<usize> = (1..logs.len() - 1)
        .filter(|&k| logs[k] < logs[k - 1] && logs[k] <= logs[k + 1])
        .collect();
    let sys = Schrodinger::new(&ef.spec, ef.energy);
    let opts = OdeOptions::new(ef.tol);
    let eval = |z: C64| -> Result<WaveState> {
        let k = (((z.im - a) / (b - a)) * n as f64).round().clamp(0.0, n as f64) as usize;
        let s = axis[k];
        let mut v = vec![s.z];
        let corner = C64::new(z.re, s.z.im);
        if (corner - s.z).norm() > 1e-12 && (z - corner).norm() > 1e-12 {
            v.push(corner);
        }
        if (z - *v.last().unwrap()).norm() > 0.0 {
            v.push(z);
        }
        if v.len() == 1 {
            return Ok(s);
        }
        let path = ComplexPath::chain(v);
        let run = integrate_linear(|t, y| sys.rhs2(t, y), &path, [s.psi, s.dpsi], s.log_scale, &opts)?;
        Ok(WaveState {
            z,
            psi: run.end.y[0],
            dpsi: run.end.y[1],
            log_scale: run.end.log_scale,
        })
    };
    let found: Vec<Option<C64>> = minima
        .par_iter()
        .map(|&k| {
            let y = ys[k];
            let mut z = C64::new(ef.energy.im / (y * y + 0.5), y);
            for _ in 0..30 {
                let w = eval(z).ok()?;
                let step = w.psi / w.dpsi;
                z -= step;
                if step.norm() < 1e-12 * (1.0 + z.norm()) {
                    break;
                }
            }
            let w = eval(z).ok()?;
            ((w.psi / w.dpsi).norm() < 1e-10 && (z.im - y).abs() < 2.0 * wavelength).then_some(z)
        })
        .collect();
    let mut zeros: Vec<C64> = found.into_iter().flatten().filter(|z| z.im >= y_lo && z.im <= y_hi).collect();
    zeros.sort_by(|p, q| p.im.partial_cmp(&q.im).unwrap());
    zeros.dedup_by(|p, q| (*p - *q).norm() < 1e-8);
    if zeros.len() < 3 {
        return Err(Error::NotFound(format!("only {} zeros near the axis in [{y_lo}, {y_hi}]", zeros.len())));
    }
    let scaled: Vec<f64> = zeros.iter().map(|z| z.re * (z.im * z.im + 0.5)).collect();
    // Least squares for scaled = a + b·ħ√y.
    let xs: Vec<f64> = zeros.iter().map(|z| h * z.im.sqrt()).collect();
    let m = xs.len() as f64;
    let (sx, sy) = (xs.iter().sum::<f64>(), scaled.iter().sum::<f64>());
    let sxx = xs.iter().map(|x| x * x).sum::<f64>();
    let sxy = xs.iter().zip(&scaled).map(|(x, y)| x * y).sum::<f64>();
    let slope = (m * sxy - sx * sy) / (m * sxx - sx * sx);
    let intercept = (sy - slope * sx) / m;
    let cut = y_hi - 0.25 * (y_hi - y_lo);
    let tail: Vec<f64> = zeros
        .iter()
        .zip(&scaled)
        .filter(|(z, _)| z.im >= cut)
        .map(|(_, s)| *s)
        .collect();
    let tail_mean = tail.iter().sum::<f64>() / tail.len().max(1) as f64;
    Ok(LargeZeros {
        zeros,
        scaled,
        intercept,
        im_theta: slope,
        tail_mean,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eigensolver::{solve_eigenvalue, SolveOptions};
    use crate::models::e0;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    #[test]
    fn hermite_zeros() {
        let spec = ModelSpec::beta(c(0.0, 0.0));
        let p = solve_eigenvalue(&spec, c(5.1, 0.0), &SolveOptions::fast()).unwrap();
        let ef = Eigenfunction::new(&p).unwrap();
        assert_eq!(count_zeros_in_rectangle(&ef, Rect::new(-2.0, 2.0, -0.5, 0.5)).unwrap(), 2);
        let zs = locate_zeros(&ef, Rect::new(-2.0, 2.0, -0.5, 0.5), 2).unwrap();
        let r = 1.0 / 2f64.sqrt();
        assert!((zs.zeros[0].z - c(-r, 0.0)).norm() < 1e-8 || (zs.zeros[0].z - c(r, 0.0)).norm() < 1e-8);
        for z in &zs.zeros {
            assert!((z.z.re.abs() - r).abs() < 1e-8 && z.z.im.abs() < 1e-8, "{}", z.z);
            assert!(z.residual < 1e-10);
        }
    }

    #[test]
    fn ground_state_has_no_local_node() {
        let h = 0.05;
        let spec = ModelSpec::hbar(h);
        let guess = e0() + Side::Plus.frequency() * h;
        let p = solve_eigenvalue(&spec, guess, &SolveOptions::default()).unwrap();
        assert_eq!(p.nodes.local, Some(0));
        assert_eq!(p.label, Some(0));
        let ef = Eigenfunction::new(&p).unwrap();
        let prof = imaginary_axis_profile(&ef, -5.0, 5.0, 400).unwrap();
        assert!(prof.min_relative > 0.0);
    }
}
