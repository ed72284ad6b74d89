//! Adaptive integration of `K ψ'' = (V − E) ψ` along polygonal paths in the
//! complex plane.
//!
//! Paths are parametrized by arc length; each straight piece `z = a + u t`
//! turns the complex ODE into a real-time system `dy/dt = u f(z, y)` that is
//! stepped with an embedded Dormand–Prince 8(5,3) pair.  Amplitudes are kept
//! in `(mantissa, log_scale)` form so exponentially growing stretches never
//! overflow.

mod tableau;

use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::ModelSpec;

const SAFETY: f64 = 0.9;
const MIN_FACTOR: f64 = 0.2;
const MAX_FACTOR: f64 = 10.0;
const RENORM_HIGH: f64 = 1e100;
const RENORM_LOW: f64 = 1e-100;

/// Result of one trial step of the embedded pair.
pub(crate) struct Trial<const N: usize> {
    pub y: [C64; N],
    pub k_end: [C64; N],
    pub err: f64,
}

fn axpy<const N: usize>(y: &[C64; N], h: f64, ks: &[[C64; N]], w: &[f64]) -> [C64; N] {
    let mut out = *y;
    for (k, &wj) in ks.iter().zip(w) {
        if wj != 0.0 {
            for i in 0..N {
                out[i] += k[i] * (h * wj);
            }
        }
    }
    out
}

/// One DOP853 step of size `h` from `(t, y)` with `k0 = f(t, y)`.
///
/// The error is the scaled norm with per-component scale
/// `tol · max(|y_i|, |y_new_i|, floor)`; the step is acceptable when `err ≤ 1`.
pub(crate) fn dop853_step<const N: usize, F>(
    f: &mut F,
    t: f64,
    y: &[C64; N],
    k0: &[C64; N],
    h: f64,
    tol: f64,
    floor: f64,
) -> Trial<N>
where
    F: FnMut(f64, &[C64; N]) -> [C64; N],
{
    let mut ks = [[C64::new(0.0, 0.0); N]; 12];
    ks[0] = *k0;
    for s in 1..12 {
        let ys = axpy(y, h, &ks[..s], &tableau::A[s][..s]);
        ks[s] = f(t + tableau::C[s] * h, &ys);
    }
    let y_new = axpy(y, h, &ks, &tableau::B);
    let k_end = f(t + h, &y_new);
    let mut e5 = 0.0;
    let mut e3 = 0.0;
    for i in 0..N {
        let mut s5 = C64::new(0.0, 0.0);
        let mut s3 = C64::new(0.0, 0.0);
        for j in 0..12 {
            s5 += ks[j][i] * tableau::E5[j];
            s3 += ks[j][i] * tableau::E3[j];
        }
        let sc = tol * y[i].norm().max(y_new[i].norm()).max(floor);
        e5 += (s5 / sc).norm_sqr();
        e3 += (s3 / sc).norm_sqr();
    }
    let denom = e5 + 0.01 * e3;
    let err = if denom == 0.0 {
        0.0
    } else {
        h.abs() * e5 / (denom * N as f64).sqrt()
    };
    let err = if y_new.iter().all(|v| v.re.is_finite() && v.im.is_finite()) {
        err
    } else {
        f64::INFINITY
    };
    Trial { y: y_new, k_end, err }
}

/// Step-size factor after a trial with error `err`.
pub(crate) fn step_factor(err: f64, accepted: bool) -> f64 {
    if err == 0.0 {
        return MAX_FACTOR;
    }
    let f = SAFETY * err.powf(-1.0 / 8.0);
    if accepted {
        f.min(MAX_FACTOR)
    } else {
        f.clamp(MIN_FACTOR, 1.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PathKind {
    SegmentChain,
    Ray,
    RectangleBoundary,
    ContourAroundCut,
}

/// Oriented polyline in the complex plane.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComplexPath {
    pub vertices: Vec<C64>,
    pub kind: PathKind,
}

impl ComplexPath {
    pub fn segment(a: C64, b: C64) -> Self {
        ComplexPath {
            vertices: vec![a, b],
            kind: PathKind::SegmentChain,
        }
    }

    pub fn chain(vertices: Vec<C64>) -> Self {
        ComplexPath {
            vertices,
            kind: PathKind::SegmentChain,
        }
    }

    /// Ray from `anchor` in the (normalized) `direction`.
    pub fn ray(anchor: C64, direction: C64, length: f64) -> Self {
        let u = direction / direction.norm();
        ComplexPath {
            vertices: vec![anchor, anchor + u * length],
            kind: PathKind::Ray,
        }
    }

    /// Counter-clockwise boundary of `[x0, x1] × [y0, y1]`, closed.
    pub fn rectangle(x0: f64, x1: f64, y0: f64, y1: f64) -> Self {
        ComplexPath {
            vertices: vec![
                C64::new(x0, y0),
                C64::new(x1, y0),
                C64::new(x1, y1),
                C64::new(x0, y1),
                C64::new(x0, y0),
            ],
            kind: PathKind::RectangleBoundary,
        }
    }

    /// Closed counter-clockwise polygon approximating an ellipse with foci `a`, `b`
    /// and semi-minor axis `width`.
    pub fn around_cut(a: C64, b: C64, width: f64, n: usize) -> Self {
        let mid = (a + b) * 0.5;
        let half = (b - a) * 0.5;
        let u = half / half.norm();
        let semi_major = (half.norm_sqr() + width * width).sqrt();
        let mut vertices: Vec<C64> = (0..n)
            .map(|j| {
                let th = 2.0 * std::f64::consts::PI * j as f64 / n as f64;
                mid + u * C64::new(semi_major * th.cos(), width * th.sin())
            })
            .collect();
        vertices.push(vertices[0]);
        ComplexPath {
            vertices,
            kind: PathKind::ContourAroundCut,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.vertices.len() < 2 {
            return Err(Error::Config("a path needs at least two vertices".into()));
        }
        if self
            .vertices
            .iter()
            .any(|z| !z.re.is_finite() || !z.im.is_finite())
        {
            return Err(Error::Config("non-finite path vertex".into()));
        }
        if self.vertices.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Config("consecutive path vertices coincide".into()));
        }
        let closed = matches!(
            self.kind,
            PathKind::RectangleBoundary | PathKind::ContourAroundCut
        );
        if closed && self.vertices.first() != self.vertices.last() {
            return Err(Error::Config("closed contour must end at its start".into()));
        }
        Ok(())
    }

    pub fn length(&self) -> f64 {
        self.vertices.windows(2).map(|w| (w[1] - w[0]).norm()).sum()
    }

    pub fn start(&self) -> C64 {
        self.vertices[0]
    }

    pub fn end(&self) -> C64 {
        *self.vertices.last().unwrap()
    }

    /// Point at arc length `s` from the start.
    pub fn point_at(&self, s: f64) -> C64 {
        let mut rem = s;
        for w in self.vertices.windows(2) {
            let l = (w[1] - w[0]).norm();
            if rem <= l {
                return w[0] + (w[1] - w[0]) * (rem / l);
            }
            rem -= l;
        }
        self.end()
    }

    pub fn reversed(&self) -> Self {
        let mut v = self.vertices.clone();
        v.reverse();
        ComplexPath {
            vertices: v,
            kind: self.kind,
        }
    }
}

#[derive(Clone, Debug)]
pub struct OdeOptions {
    /// Relative local error tolerance per step.
    pub tol: f64,
    pub max_steps: usize,
    /// Reject steps across which `arg(ψ)` changes by more than this.
    pub phase_cap: Option<f64>,
    /// Arc positions (absolute, in path length units) where samples are recorded.
    pub stops: Vec<f64>,
}

impl OdeOptions {
    pub fn new(tol: f64) -> Self {
        OdeOptions {
            tol,
            max_steps: 2_000_000,
            phase_cap: None,
            stops: Vec::new(),
        }
    }

    pub fn with_phase_cap(mut self, cap: f64) -> Self {
        self.phase_cap = Some(cap);
        self
    }

    pub fn with_stops(mut self, stops: Vec<f64>) -> Self {
        self.stops = stops;
        self
    }
}

/// State of a linear system with its logarithmic amplitude offset: the true
/// state is `y · exp(log_scale)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Scaled<const N: usize> {
    pub z: C64,
    pub y: [C64; N],
    pub log_scale: f64,
}

#[derive(Clone, Debug)]
pub struct Run<const N: usize> {
    pub end: Scaled<N>,
    /// `(arc position, state)` at each requested stop.
    pub samples: Vec<(f64, Scaled<N>)>,
    /// Continuous change of `log y[0]` over the path.
    pub dlog: C64,
    pub steps: usize,
    pub rejected: usize,
    pub renormalizations: usize,
}

impl<const N: usize> Run<N> {
    /// Net winding of `y[0]` around the origin in turns.
    pub fn winding(&self) -> f64 {
        self.dlog.im / (2.0 * std::f64::consts::PI)
    }
}

fn check_tol(tol: f64) -> Result<()> {
    if !(1e-13..=1e-6).contains(&tol) {
        return Err(Error::Config(format!(
            "tolerance {tol:e} outside [1e-13, 1e-6]"
        )));
    }
    Ok(())
}

/// Integrates the linear system `dy/dz = rhs(z, y)` along `path`.
pub fn integrate_linear<const N: usize, F>(
    rhs: F,
    path: &ComplexPath,
    y0: [C64; N],
    log_scale: f64,
    opts: &OdeOptions,
) -> Result<Run<N>>
where
    F: Fn(C64, &[C64; N]) -> [C64; N],
{
    path.validate()?;
    check_tol(opts.tol)?;
    if y0.iter().all(|v| v.norm() == 0.0) {
        return Err(Error::Domain("zero initial state".into()));
    }
    let mut stops: Vec<f64> = opts.stops.clone();
    stops.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut next_stop = 0;
    let mut samples = Vec::with_capacity(stops.len());

    let mut y = y0;
    let mut log_scale = log_scale;
    let mut dlog = C64::new(0.0, 0.0);
    let mut steps = 0usize;
    let mut rejected = 0usize;
    let mut renorms = 0usize;
    let mut h_prev: Option<f64> = None;
    let mut arc0 = 0.0;

    let record = |arc: f64, z: C64, y: &[C64; N], ls: f64, samples: &mut Vec<(f64, Scaled<N>)>| {
        samples.push((arc, Scaled { z, y: *y, log_scale: ls }));
    };

    while next_stop < stops.len() && stops[next_stop] <= 0.0 {
        record(stops[next_stop], path.start(), &y, log_scale, &mut samples);
        next_stop += 1;
    }

    for w in path.vertices.windows(2) {
        let a = w[0];
        let len = (w[1] - a).norm();
        let u = (w[1] - a) / len;
        let mut f = |t: f64, yy: &[C64; N]| -> [C64; N] {
            let d = rhs(a + u * t, yy);
            let mut out = d;
            for v in out.iter_mut() {
                *v *= u;
            }
            out
        };
        let mut t = 0.0;
        let mut k0 = f(0.0, &y);
        let mut h = match h_prev {
            Some(h) => h,
            None => {
                let scale = y.iter().map(|v| v.norm()).fold(0.0, f64::max);
                let rate = k0.iter().map(|v| v.norm()).fold(0.0, f64::max) / scale.max(1e-300);
                (0.5 * opts.tol.powf(1.0 / 8.0) / rate.max(1e-3)).min(len)
            }
        };
        while t < len {
            if steps + rejected >= opts.max_steps {
                return Err(Error::StepLimit { z: a + u * t });
            }
            let target = if next_stop < stops.len() && stops[next_stop] - arc0 < len {
                stops[next_stop] - arc0
            } else {
                len
            };
            let mut hh = h.min(target - t);
            let landing = hh >= target - t;
            if landing {
                hh = target - t;
            }
            if hh <= 1e-14 * (1.0 + t.abs() + a.norm()) && !landing {
                return Err(Error::Stiff { z: a + u * t });
            }
            let m = y.iter().map(|v| v.norm()).fold(0.0, f64::max);
            let trial = dop853_step(&mut f, t, &y, &k0, hh, opts.tol, 1e-3 * m);
            let mut ok = trial.err <= 1.0;
            let mut ratio = C64::new(1.0, 0.0);
            if ok && y[0].norm() > 0.0 {
                ratio = trial.y[0] / y[0];
                if !(ratio.re.is_finite() && ratio.im.is_finite()) || ratio.norm() == 0.0 {
                    ok = false;
                } else if let Some(cap) = opts.phase_cap {
                    if ratio.arg().abs() > cap {
                        ok = false;
                    }
                }
            }
            if !ok {
                rejected += 1;
                let fac = if trial.err <= 1.0 { 0.5 } else { step_factor(trial.err, false) };
                h = hh * fac;
                if h <= 1e-14 * (1.0 + t.abs() + a.norm()) {
                    return Err(Error::Stiff { z: a + u * t });
                }
                continue;
            }
            steps += 1;
            dlog += ratio.ln();
            t = if landing { target } else { t + hh };
            y = trial.y;
            k0 = trial.k_end;
            let grow = step_factor(trial.err, true);
            // A forced landing says nothing about the natural step size.
            if !landing {
                h = hh * grow;
            }
            let m = y.iter().map(|v| v.norm()).fold(0.0, f64::max);
            if !(RENORM_LOW..=RENORM_HIGH).contains(&m) {
                for v in y.iter_mut() {
                    *v /= m;
                }
                for v in k0.iter_mut() {
                    *v /= m;
                }
                log_scale += m.ln();
                renorms += 1;
            }
            while landing && next_stop < stops.len() && stops[next_stop] - arc0 <= t + 1e-15 * len {
                record(stops[next_stop], a + u * t, &y, log_scale, &mut samples);
                next_stop += 1;
            }
        }
        arc0 += len;
        h_prev = Some(h);
    }
    while next_stop < stops.len() {
        record(stops[next_stop], path.end(), &y, log_scale, &mut samples);
        next_stop += 1;
    }
    Ok(Run {
        end: Scaled {
            z: path.end(),
            y,
            log_scale,
        },
        samples,
        dlog,
        steps,
        rejected,
        renormalizations: renorms,
    })
}

/// Point on the solution curve: `ψ`, `dψ/dz` and the amplitude offset.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WaveState {
    pub z: C64,
    pub psi: C64,
    pub dpsi: C64,
    /// The true solution is `(psi, dpsi) · exp(log_scale)`.
    pub log_scale: f64,
}

impl WaveState {
    pub fn new(z: C64, psi: C64, dpsi: C64) -> Self {
        WaveState {
            z,
            psi,
            dpsi,
            log_scale: 0.0,
        }
    }

    pub fn scaled(&self, c: C64) -> Self {
        WaveState {
            psi: self.psi * c,
            dpsi: self.dpsi * c,
            ..*self
        }
    }

    /// `log ψ` with the amplitude offset included (principal argument).
    pub fn log_psi(&self) -> C64 {
        self.psi.ln() + self.log_scale
    }

    /// Wronskian `ψ₁ψ₂′ − ψ₁′ψ₂` as `(mantissa, log_scale)`.
    pub fn wronskian(&self, other: &WaveState) -> (C64, f64) {
        (
            self.psi * other.dpsi - self.dpsi * other.psi,
            self.log_scale + other.log_scale,
        )
    }

    fn from_scaled(s: &Scaled<2>) -> Self {
        WaveState {
            z: s.z,
            psi: s.y[0],
            dpsi: s.y[1],
            log_scale: s.log_scale,
        }
    }
}

/// Integration outcome for the Schrödinger equation.
#[derive(Clone, Debug)]
pub struct Trajectory {
    pub end: WaveState,
    /// Samples at the requested arc fractions.
    pub samples: Vec<(f64, WaveState)>,
    /// Continuous change of `log ψ` along the path.
    pub dlog: C64,
    pub steps: usize,
    pub renormalizations: usize,
}

impl Trajectory {
    /// Dense samples as CSV rows `arc_fraction,re z,im z,re psi,im psi,log_scale`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("arc_fraction,re_z,im_z,re_psi,im_psi,log_scale\n");
        for (f, w) in &self.samples {
            s.push_str(&format!(
                "{},{},{},{},{},{}\n",
                f, w.z.re, w.z.im, w.psi.re, w.psi.im, w.log_scale
            ));
        }
        s
    }
}

/// The right-hand side `g(z) = (V(z) − E)/K` of `ψ'' = g ψ`.
#[derive(Clone, Copy, Debug)]
pub struct Schrodinger {
    pub poly: crate::models::Cubic,
    pub energy: C64,
    pub inv_kinetic: C64,
}

impl Schrodinger {
    pub fn new(spec: &ModelSpec, energy: C64) -> Self {
        Schrodinger {
            poly: spec.poly(),
            energy,
            inv_kinetic: spec.kinetic().inv(),
        }
    }

    pub fn g(&self, z: C64) -> C64 {
        (self.poly.eval(z) - self.energy) * self.inv_kinetic
    }

    pub fn rhs2(&self, z: C64, y: &[C64; 2]) -> [C64; 2] {
        [y[1], self.g(z) * y[0]]
    }

    /// State `(ψ, ψ', ∂_Eψ, ∂_Eψ')`.
    pub fn rhs4(&self, z: C64, y: &[C64; 4]) -> [C64; 4] {
        let g = self.g(z);
        [y[1], g * y[0], y[3], g * y[2] - self.inv_kinetic * y[0]]
    }
}

/// Integrates `K ψ'' = (V − E) ψ` along `path` from `init` (placed at the path start).
pub fn integrate(
    spec: &ModelSpec,
    energy: C64,
    path: &ComplexPath,
    init: WaveState,
    tol: f64,
    arc_fractions: &[f64],
) -> Result<Trajectory> {
    spec.validate()?;
    if init.psi.norm() == 0.0 && init.dpsi.norm() == 0.0 {
        return Err(Error::Domain("zero initial state".into()));
    }
    let len = path.length();
    let opts = OdeOptions::new(tol).with_stops(arc_fractions.iter().map(|f| f * len).collect());
    let sys = Schrodinger::new(spec, energy);
    let run = integrate_linear(|z, y| sys.rhs2(z, y), path, [init.psi, init.dpsi], init.log_scale, &opts)?;
    Ok(Trajectory {
        end: WaveState::from_scaled(&run.end),
        samples: run
            .samples
            .iter()
            .map(|(s, st)| (s / len, WaveState::from_scaled(st)))
            .collect(),
        dlog: run.dlog,
        steps: run.steps,
        renormalizations: run.renormalizations,
    })
}

/// Leading WKB data of the recessive solution at an anchor.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AsymptoticFrame {
    pub energy: C64,
    pub anchor: C64,
    /// Unit vector pointing away from the origin along the ray.
    pub outward: C64,
    /// Local momentum `q = √((V − E)/K)` on the decaying branch, `Re(q·outward) > 0`.
    pub q: C64,
    /// Logarithmic derivative `ψ'/ψ` of the recessive solution.
    pub log_derivative: C64,
    /// Its energy derivative.
    pub log_derivative_e: C64,
}

/// Leading-order recessive data `ψ ∝ (V − E)^{−1/4} exp(−∫q)` at `anchor`, decaying along `outward`.
pub fn asymptotic_frame(spec: &ModelSpec, energy: C64, anchor: C64, outward: C64) -> Result<AsymptoticFrame> {
    spec.validate()?;
    let u = outward / outward.norm();
    let poly = spec.poly();
    let k = spec.kinetic();
    let w = poly.eval(anchor) - energy;
    if w.norm() < 100.0 * energy.norm().max(1e-300) || w.norm() == 0.0 {
        return Err(Error::Domain(format!(
            "|V(anchor)| too small relative to |E| at {anchor}"
        )));
    }
    let mut q = (w / k).sqrt();
    if (q * u).re < 0.0 {
        q = -q;
    }
    if (q * u).re < 0.1 * q.norm() {
        return Err(Error::Domain(format!(
            "direction {u} at {anchor} is not inside a decaying sector"
        )));
    }
    let dv = poly.deriv(anchor);
    let ld = -(q + dv / (w * 4.0));
    let dq = -(k * q * 2.0).inv();
    let lde = -(dq + dv / (w * w * 4.0));
    Ok(AsymptoticFrame {
        energy,
        anchor,
        outward: u,
        q,
        log_derivative: ld,
        log_derivative_e: lde,
    })
}

/// Recessive initial state at the anchor of `ray` (`|ψ| = 1`); the ray points outward.
pub fn recessive_init(spec: &ModelSpec, energy: C64, ray: &ComplexPath) -> Result<WaveState> {
    ray.validate()?;
    let anchor = ray.start();
    let dir = ray.vertices[1] - anchor;
    let fr = asymptotic_frame(spec, energy, anchor, dir)?;
    Ok(WaveState::new(anchor, C64::new(1.0, 0.0), fr.log_derivative))
}
