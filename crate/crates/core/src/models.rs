//! The cubic oscillator family, its parametrizations and the exact scaling
//! maps between them.
//!
//! Every member is `-K d²/dz² + V(z)` with `V` a polynomial of degree at most
//! three and `K` a (possibly complex) kinetic coefficient:
//!
//! | family      | potential                | kinetic |
//! |-------------|--------------------------|---------|
//! | `Hbar`      | `i(z³ − z)`              | `ħ²`    |
//! | `BetaTilde` | `z² + i√β z³`            | `1`     |
//! | `AlphaHat`  | `i(z³ + αz)`             | `1`     |
//! | `KDelta`    | `i(z³ − δz)`             | `k²`    |
//! | `RealCubic` | `z³ − z`                 | `ħ²`    |
//!
//! An optional complex translation replaces `V(z)` by `V(z + s)`.

use std::f64::consts::PI;

use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const I: C64 = C64 { re: 0.0, im: 1.0 };

/// `c = 2/(3√3)`, the modulus of the stationary values of `x³ − x`.
pub const C: f64 = 0.384_900_179_459_750_5;

/// Stationary points `x± = ±1/√3` of `x³ − x`.
pub const X_PLUS: f64 = 0.577_350_269_189_625_8;

/// `E₀ = −ic = V(x₊)` for the `Hbar` potential.
pub const fn e0() -> C64 {
    C64 { re: 0.0, im: -C }
}

/// Which of the two stationary points a quantity refers to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Plus,
    Minus,
}

impl Side {
    pub fn sign(self) -> f64 {
        match self {
            Side::Plus => 1.0,
            Side::Minus => -1.0,
        }
    }

    pub fn stationary_point(self) -> f64 {
        self.sign() * X_PLUS
    }

    /// Limit energy `±E₀` of the levels localized at `x±`.
    pub fn limit_energy(self) -> C64 {
        e0() * self.sign()
    }

    /// Local harmonic frequency `c± = 3^{1/4} e^{±iπ/4}` at `x±`.
    pub fn frequency(self) -> C64 {
        C64::from_polar(3f64.powf(0.25), self.sign() * PI / 4.0)
    }

    /// Dilation `λ± = 3^{−1/8} e^{∓iπ/8} √ħ` taking the local problem at `x±` to unit frequency.
    pub fn dilation(self, hbar: C64) -> C64 {
        C64::from_polar(3f64.powf(-0.125), -self.sign() * PI / 8.0) * hbar.sqrt()
    }

    pub fn mirror(self) -> Side {
        match self {
            Side::Plus => Side::Minus,
            Side::Minus => Side::Plus,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Family {
    #[serde(rename = "hbar")]
    Hbar,
    #[serde(rename = "beta")]
    BetaTilde,
    #[serde(rename = "alpha")]
    AlphaHat,
    #[serde(rename = "kdelta")]
    KDelta,
    #[serde(rename = "real")]
    RealCubic,
}

impl Family {
    pub fn name(self) -> &'static str {
        match self {
            Family::Hbar => "hbar",
            Family::BetaTilde => "beta",
            Family::AlphaHat => "alpha",
            Family::KDelta => "kdelta",
            Family::RealCubic => "real",
        }
    }
}

impl std::str::FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hbar" => Ok(Family::Hbar),
            "beta" => Ok(Family::BetaTilde),
            "alpha" => Ok(Family::AlphaHat),
            "kdelta" => Ok(Family::KDelta),
            "real" => Ok(Family::RealCubic),
            other => Err(Error::Config(format!(
                "unknown family '{other}' (expected hbar|beta|alpha|kdelta|real)"
            ))),
        }
    }
}

fn is_zero(x: &f64) -> bool {
    *x == 0.0
}

/// A member of the oscillator family.
///
/// The flat field layout is the serialized form; parameters that do not apply
/// to the family are ignored (and default to zero when deserializing).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub family: Family,
    #[serde(default)]
    pub hbar: f64,
    #[serde(default, skip_serializing_if = "is_zero")]
    pub hbar_im: f64,
    #[serde(default)]
    pub beta_re: f64,
    #[serde(default)]
    pub beta_im: f64,
    #[serde(default)]
    pub alpha_re: f64,
    #[serde(default)]
    pub alpha_im: f64,
    #[serde(default)]
    pub k: f64,
    #[serde(default)]
    pub delta: f64,
    #[serde(default, skip_serializing_if = "is_zero")]
    pub shift_re: f64,
    #[serde(default, skip_serializing_if = "is_zero")]
    pub shift_im: f64,
}

impl ModelSpec {
    fn blank(family: Family) -> Self {
        ModelSpec {
            family,
            hbar: 0.0,
            hbar_im: 0.0,
            beta_re: 0.0,
            beta_im: 0.0,
            alpha_re: 0.0,
            alpha_im: 0.0,
            k: 0.0,
            delta: 0.0,
            shift_re: 0.0,
            shift_im: 0.0,
        }
    }

    pub fn hbar(hbar: f64) -> Self {
        ModelSpec {
            hbar,
            ..Self::blank(Family::Hbar)
        }
    }

    /// `Hbar` family at complex `ħ`, used for continuation around branch points.
    pub fn hbar_complex(hbar: C64) -> Self {
        ModelSpec {
            hbar: hbar.re,
            hbar_im: hbar.im,
            ..Self::blank(Family::Hbar)
        }
    }

    pub fn beta(beta: C64) -> Self {
        ModelSpec {
            beta_re: beta.re,
            beta_im: beta.im,
            ..Self::blank(Family::BetaTilde)
        }
    }

    pub fn alpha(alpha: C64) -> Self {
        ModelSpec {
            alpha_re: alpha.re,
            alpha_im: alpha.im,
            ..Self::blank(Family::AlphaHat)
        }
    }

    pub fn kdelta(k: f64, delta: f64) -> Self {
        ModelSpec {
            k,
            delta,
            ..Self::blank(Family::KDelta)
        }
    }

    pub fn real_cubic(hbar: f64) -> Self {
        ModelSpec {
            hbar,
            ..Self::blank(Family::RealCubic)
        }
    }

    pub fn with_shift(mut self, shift: C64) -> Self {
        self.shift_re = shift.re;
        self.shift_im = shift.im;
        self
    }

    pub fn hbar_c(&self) -> C64 {
        C64::new(self.hbar, self.hbar_im)
    }

    pub fn beta_c(&self) -> C64 {
        C64::new(self.beta_re, self.beta_im)
    }

    pub fn alpha_c(&self) -> C64 {
        C64::new(self.alpha_re, self.alpha_im)
    }

    pub fn shift(&self) -> C64 {
        C64::new(self.shift_re, self.shift_im)
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [
            self.hbar,
            self.hbar_im,
            self.beta_re,
            self.beta_im,
            self.alpha_re,
            self.alpha_im,
            self.k,
            self.delta,
            self.shift_re,
            self.shift_im,
        ]
        .iter()
        .all(|x| x.is_finite());
        if !finite {
            return Err(Error::Config("non-finite parameter".into()));
        }
        match self.family {
            Family::Hbar => {
                let h = self.hbar_c();
                if h.norm() == 0.0 {
                    return Err(Error::Config("hbar must be nonzero".into()));
                }
                if self.hbar_im == 0.0 && self.hbar <= 0.0 {
                    return Err(Error::Config("hbar must be positive".into()));
                }
                if h.arg().abs() >= PI / 4.0 {
                    return Err(Error::Config(
                        "complex hbar must satisfy |arg hbar| < pi/4".into(),
                    ));
                }
            }
            Family::BetaTilde => {
                if self.beta_im == 0.0 && self.beta_re < 0.0 {
                    return Err(Error::Config(
                        "beta must lie in the plane cut along the negative axis".into(),
                    ));
                }
            }
            Family::AlphaHat => {}
            Family::KDelta => {
                if self.k <= 0.0 {
                    return Err(Error::Config("k must be positive".into()));
                }
            }
            Family::RealCubic => {
                if self.hbar <= 0.0 {
                    return Err(Error::Config("hbar must be positive".into()));
                }
            }
        }
        Ok(())
    }

    /// Coefficient `K` of `−K d²/dz²`.
    pub fn kinetic(&self) -> C64 {
        match self.family {
            Family::Hbar | Family::RealCubic => self.hbar_c() * self.hbar_c(),
            Family::BetaTilde | Family::AlphaHat => C64::new(1.0, 0.0),
            Family::KDelta => C64::new(self.k * self.k, 0.0),
        }
    }

    /// Effective Planck constant `√K`.
    pub fn hbar_eff(&self) -> C64 {
        self.kinetic().sqrt()
    }

    /// Unshifted potential as a polynomial.
    fn base_poly(&self) -> Cubic {
        let z = C64::new(0.0, 0.0);
        match self.family {
            Family::Hbar => Cubic::new([z, -I, z, I]),
            Family::BetaTilde => Cubic::new([z, z, C64::new(1.0, 0.0), I * self.beta_c().sqrt()]),
            Family::AlphaHat => Cubic::new([z, I * self.alpha_c(), z, I]),
            Family::KDelta => Cubic::new([z, -I * self.delta, z, I]),
            Family::RealCubic => Cubic::new([z, C64::new(-1.0, 0.0), z, C64::new(1.0, 0.0)]),
        }
    }

    pub fn poly(&self) -> Cubic {
        self.base_poly().shifted(self.shift())
    }

    pub fn potential(&self, z: C64) -> C64 {
        self.poly().eval(z)
    }

    /// The continuation parameter of the family (`ħ`, `β`, `α`, `k`).
    pub fn parameter(&self) -> C64 {
        match self.family {
            Family::Hbar | Family::RealCubic => self.hbar_c(),
            Family::BetaTilde => self.beta_c(),
            Family::AlphaHat => self.alpha_c(),
            Family::KDelta => C64::new(self.k, 0.0),
        }
    }

    pub fn with_parameter(&self, p: C64) -> ModelSpec {
        let mut s = *self;
        match self.family {
            Family::Hbar | Family::RealCubic => {
                s.hbar = p.re;
                s.hbar_im = p.im;
            }
            Family::BetaTilde => {
                s.beta_re = p.re;
                s.beta_im = p.im;
            }
            Family::AlphaHat => {
                s.alpha_re = p.re;
                s.alpha_im = p.im;
            }
            Family::KDelta => s.k = p.re,
        }
        s
    }

    /// Whether `conj V(−z̄) = V(z)` and the kinetic term is real, so that
    /// the spectrum is symmetric under complex conjugation.
    pub fn is_pt_symmetric(&self) -> bool {
        let p = self.poly();
        let scale = p.coeffs.iter().map(|c| c.norm()).fold(0.0, f64::max).max(1e-300);
        let sym = p.coeffs.iter().enumerate().all(|(n, c)| {
            let parity = if n % 2 == 0 { 1.0 } else { -1.0 };
            (c.conj() * parity - c).norm() <= 1e-14 * scale
        });
        sym && self.kinetic().im == 0.0 && self.kinetic().re > 0.0
    }

    /// Short human-readable parameter summary.
    pub fn describe(&self) -> String {
        let c = |z: C64| {
            if z.im == 0.0 {
                format!("{}", z.re)
            } else {
                format!("{}{:+}i", z.re, z.im)
            }
        };
        let base = match self.family {
            Family::Hbar => format!("hbar={}", c(self.hbar_c())),
            Family::BetaTilde => format!("beta={}", c(self.beta_c())),
            Family::AlphaHat => format!("alpha={}", c(self.alpha_c())),
            Family::KDelta => format!("k={},delta={}", self.k, self.delta),
            Family::RealCubic => format!("real,hbar={}", self.hbar),
        };
        if self.shift() != C64::new(0.0, 0.0) {
            format!("{base},shift={}", c(self.shift()))
        } else {
            base
        }
    }
}

/// Polynomial `c₀ + c₁z + c₂z² + c₃z³`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Cubic {
    pub coeffs: [C64; 4],
}

impl Cubic {
    pub fn new(coeffs: [C64; 4]) -> Self {
        Cubic { coeffs }
    }

    pub fn eval(&self, z: C64) -> C64 {
        let [c0, c1, c2, c3] = self.coeffs;
        ((c3 * z + c2) * z + c1) * z + c0
    }

    pub fn deriv(&self, z: C64) -> C64 {
        let [_, c1, c2, c3] = self.coeffs;
        (c3 * 3.0 * z + c2 * 2.0) * z + c1
    }

    pub fn deriv2(&self, z: C64) -> C64 {
        self.coeffs[3] * 6.0 * z + self.coeffs[2] * 2.0
    }

    pub fn degree(&self) -> usize {
        let scale = self.coeffs.iter().map(|c| c.norm()).fold(0.0, f64::max);
        (0..4)
            .rev()
            .find(|&n| self.coeffs[n].norm() > 1e-14 * scale)
            .unwrap_or(0)
    }

    /// Leading coefficient and its degree.
    pub fn leading(&self) -> (usize, C64) {
        let d = self.degree();
        (d, self.coeffs[d])
    }

    /// The polynomial `z ↦ p(z + s)`.
    pub fn shifted(&self, s: C64) -> Cubic {
        let [c0, c1, c2, c3] = self.coeffs;
        Cubic::new([
            c0 + c1 * s + c2 * s * s + c3 * s * s * s,
            c1 + c2 * s * 2.0 + c3 * s * s * 3.0,
            c2 + c3 * s * 3.0,
            c3,
        ])
    }

    /// All roots of `p(z) = e`.
    pub fn solve(&self, e: C64) -> Vec<C64> {
        let [c0, c1, c2, c3] = self.coeffs;
        let mut roots = solve_cubic(c3, c2, c1, c0 - e);
        for r in roots.iter_mut() {
            for _ in 0..3 {
                let d = self.deriv(*r);
                if d.norm() == 0.0 {
                    break;
                }
                let step = (self.eval(*r) - e) / d;
                if !step.re.is_finite() || !step.im.is_finite() {
                    break;
                }
                let next = *r - step;
                if (self.eval(next) - e).norm() <= (self.eval(*r) - e).norm() {
                    *r = next;
                } else {
                    break;
                }
            }
        }
        roots
    }

    /// Roots of `p′`.
    pub fn stationary(&self) -> Vec<C64> {
        let [_, c1, c2, c3] = self.coeffs;
        solve_quadratic(c3 * 3.0, c2 * 2.0, c1)
    }
}

fn solve_quadratic(a: C64, b: C64, c: C64) -> Vec<C64> {
    let scale = a.norm().max(b.norm()).max(c.norm());
    if scale == 0.0 {
        return vec![];
    }
    if a.norm() <= 1e-14 * scale {
        if b.norm() <= 1e-14 * scale {
            return vec![];
        }
        return vec![-c / b];
    }
    let disc = (b * b - a * c * 4.0).sqrt();
    let q1 = -(b + disc) * 0.5;
    let q2 = -(b - disc) * 0.5;
    let q = if q1.norm() >= q2.norm() { q1 } else { q2 };
    if q.norm() == 0.0 {
        return vec![C64::new(0.0, 0.0); 2];
    }
    vec![q / a, c / q]
}

/// Closed-form roots of `a z³ + b z² + c z + d` (falls back to lower degree).
pub fn solve_cubic(a: C64, b: C64, c: C64, d: C64) -> Vec<C64> {
    let scale = b.norm().max(c.norm()).max(d.norm());
    if a.norm() <= 1e-14 * scale {
        return solve_quadratic(b, c, d);
    }
    let d0 = b * b - a * c * 3.0;
    let d1 = b * b * b * 2.0 - a * b * c * 9.0 + a * a * d * 27.0;
    let root = (d1 * d1 - d0 * d0 * d0 * 4.0).sqrt();
    let s1 = (d1 + root) * 0.5;
    let s2 = (d1 - root) * 0.5;
    let s = if s1.norm() >= s2.norm() { s1 } else { s2 };
    if s.norm() == 0.0 {
        return vec![-b / (a * 3.0); 3];
    }
    let cc = s.powf(1.0 / 3.0);
    let xi = C64::from_polar(1.0, 2.0 * PI / 3.0);
    (0..3)
        .map(|k| {
            let ck = cc * xi.powu(k);
            -(b + ck + d0 / ck) / (a * 3.0)
        })
        .collect()
}

/// Stationary point of the potential together with its value.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StationaryPoint {
    pub z: C64,
    pub value: C64,
    pub multiplicity: u8,
}

/// Indices into [`TurningPointSet::roots`] for the named turning points.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TurningLabels {
    pub i0: usize,
    pub minus: usize,
    pub plus: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TurningPointSet {
    pub energy: C64,
    pub roots: Vec<C64>,
    pub multiplicity: Vec<u8>,
    pub labels: Option<TurningLabels>,
}

/// Root separation below which two turning points count as one double point.
pub const DOUBLE_ROOT_TOL: f64 = 1e-8;

impl TurningPointSet {
    pub fn i0(&self) -> Option<C64> {
        self.labels.map(|l| self.roots[l.i0])
    }

    pub fn plus(&self) -> Option<C64> {
        self.labels.map(|l| self.roots[l.plus])
    }

    pub fn minus(&self) -> Option<C64> {
        self.labels.map(|l| self.roots[l.minus])
    }

    pub fn has_multiple(&self) -> bool {
        self.multiplicity.iter().any(|&m| m > 1)
    }

    /// Relative residual of the elementary symmetric functions against the
    /// coefficients of `p(z) − E`.
    pub fn vieta_residual(&self, poly: &Cubic) -> f64 {
        let [c0, c1, c2, c3] = poly.coeffs;
        let c0 = c0 - self.energy;
        match self.roots.len() {
            3 => {
                let (r1, r2, r3) = (self.roots[0], self.roots[1], self.roots[2]);
                let e1 = r1 + r2 + r3;
                let e2 = r1 * r2 + r1 * r3 + r2 * r3;
                let e3 = r1 * r2 * r3;
                let res = [(e1 + c2 / c3), (e2 - c1 / c3), (e3 + c0 / c3)];
                let scale = [
                    1.0 + (c2 / c3).norm(),
                    1.0 + (c1 / c3).norm(),
                    1.0 + (c0 / c3).norm(),
                ];
                res.iter()
                    .zip(scale)
                    .map(|(r, s)| r.norm() / s)
                    .fold(0.0, f64::max)
            }
            2 => {
                let (r1, r2) = (self.roots[0], self.roots[1]);
                let res = [(r1 + r2 + c1 / c2), (r1 * r2 - c0 / c2)];
                let scale = [1.0 + (c1 / c2).norm(), 1.0 + (c0 / c2).norm()];
                res.iter()
                    .zip(scale)
                    .map(|(r, s)| r.norm() / s)
                    .fold(0.0, f64::max)
            }
            _ => 0.0,
        }
    }
}

/// `V(z)` for the spec.
pub fn potential(spec: &ModelSpec, z: C64) -> Result<C64> {
    spec.validate()?;
    Ok(spec.potential(z))
}

pub fn stationary_points(spec: &ModelSpec) -> Vec<StationaryPoint> {
    let p = spec.poly();
    let mut pts = p.stationary();
    let mult = if pts.len() == 2 && (pts[0] - pts[1]).norm() < DOUBLE_ROOT_TOL {
        pts.truncate(1);
        2
    } else {
        1
    };
    pts.into_iter()
        .map(|z| StationaryPoint {
            z,
            value: p.eval(z),
            multiplicity: mult,
        })
        .collect()
}

fn multiplicities(roots: &[C64]) -> Vec<u8> {
    roots
        .iter()
        .map(|r| {
            let tol = DOUBLE_ROOT_TOL * r.norm().max(1.0);
            roots.iter().filter(|s| (**s - *r).norm() < tol).count() as u8
        })
        .collect()
}

/// Roots of `V(z) = E`, with exact double points snapped onto the stationary point.
fn raw_turning_points(poly: &Cubic, e: C64) -> (Vec<C64>, Vec<u8>) {
    let mut roots = poly.solve(e);
    for s in poly.stationary() {
        let scale = e.norm().max(1.0);
        if (poly.eval(s) - e).norm() <= 1e-12 * scale && roots.len() >= 2 {
            let mut idx: Vec<usize> = (0..roots.len()).collect();
            idx.sort_by(|&a, &b| {
                (roots[a] - s)
                    .norm()
                    .partial_cmp(&(roots[b] - s).norm())
                    .unwrap()
            });
            roots[idx[0]] = s;
            roots[idx[1]] = s;
        }
    }
    let mult = multiplicities(&roots);
    (roots, mult)
}

fn is_real_energy(e: C64) -> bool {
    e.im.abs() <= 1e-12 * (1.0 + e.norm())
}

/// Labels fixed by symmetry alone (real energy, PT-symmetric or real form).
fn direct_labels(spec: &ModelSpec, e: C64, roots: &[C64]) -> Option<TurningLabels> {
    if roots.len() != 3 || !is_real_energy(e) {
        return None;
    }
    if spec.is_pt_symmetric() {
        let i0 = (0..3)
            .min_by(|&a, &b| roots[a].re.abs().partial_cmp(&roots[b].re.abs()).unwrap())
            .unwrap();
        let mut rest: Vec<usize> = (0..3).filter(|&j| j != i0).collect();
        rest.sort_by(|&a, &b| roots[a].re.partial_cmp(&roots[b].re).unwrap());
        return Some(TurningLabels {
            i0,
            minus: rest[0],
            plus: rest[1],
        });
    }
    if spec.family == Family::RealCubic && spec.shift() == C64::new(0.0, 0.0) {
        let scale = roots.iter().map(|r| r.norm()).fold(1.0, f64::max);
        if roots.iter().all(|r| r.im.abs() <= 1e-10 * scale) {
            let mut idx: Vec<usize> = (0..3).collect();
            idx.sort_by(|&a, &b| roots[a].re.partial_cmp(&roots[b].re).unwrap());
            return Some(TurningLabels {
                i0: idx[0],
                minus: idx[1],
                plus: idx[2],
            });
        }
    }
    None
}

const PERMS: [[usize; 3]; 6] = [
    [0, 1, 2],
    [0, 2, 1],
    [1, 0, 2],
    [1, 2, 0],
    [2, 0, 1],
    [2, 1, 0],
];

/// Turning points `V(z) = E`, labelled `I₀, I₋, I₊`.
///
/// For real `E` in a PT-symmetric family the labels follow from the
/// reflection `z ↦ −z̄`; otherwise they are transported continuously along
/// the straight segment from a real reference energy.
pub fn turning_points(spec: &ModelSpec, e: C64) -> TurningPointSet {
    let poly = spec.poly();
    let (roots, multiplicity) = raw_turning_points(&poly, e);
    let mut labels = direct_labels(spec, e, &roots);
    if labels.is_none() && roots.len() == 3 {
        labels = tracked_labels(spec, &poly, e);
    }
    TurningPointSet {
        energy: e,
        roots,
        multiplicity,
        labels,
    }
}

fn tracked_labels(spec: &ModelSpec, poly: &Cubic, e: C64) -> Option<TurningLabels> {
    let candidates = [C64::new(e.re, 0.0), C64::new(0.0, 0.0)];
    for e_ref in candidates {
        let (mut prev, _) = raw_turning_points(poly, e_ref);
        let Some(start) = direct_labels(spec, e_ref, &prev) else {
            continue;
        };
        // `order[k]` is the current index of the root that started as index k.
        let steps = 64;
        for j in 1..=steps {
            let ej = e_ref + (e - e_ref) * (j as f64 / steps as f64);
            let (cur, _) = raw_turning_points(poly, ej);
            if cur.len() != 3 || cur.iter().any(|z| !z.is_finite()) {
                return None;
            }
            let best = PERMS
                .iter()
                .min_by(|p, q| {
                    let cost = |perm: &[usize; 3]| -> f64 {
                        (0..3).map(|k| (cur[perm[k]] - prev[k]).norm()).sum()
                    };
                    cost(p).partial_cmp(&cost(q)).unwrap()
                })
                .unwrap();
            prev = [cur[best[0]], cur[best[1]], cur[best[2]]].to_vec();
        }
        let (fin, _) = raw_turning_points(poly, e);
        let find = |z: C64| -> usize {
            (0..3)
                .min_by(|&a, &b| (fin[a] - z).norm().partial_cmp(&(fin[b] - z).norm()).unwrap())
                .unwrap()
        };
        let lab = TurningLabels {
            i0: find(prev[start.i0]),
            minus: find(prev[start.minus]),
            plus: find(prev[start.plus]),
        };
        if lab.i0 != lab.minus && lab.i0 != lab.plus && lab.minus != lab.plus {
            return Some(lab);
        }
    }
    None
}

/// Target of a scaling map.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Target {
    Hbar,
    AlphaHat,
    BetaTilde,
    /// The harmonic picture localized at `x₊`.
    BetaPlus,
    /// The harmonic picture localized at `x₋`.
    BetaMinus,
    KDelta { delta: f64 },
}

/// Exact isospectral map between two members of the family.
///
/// Energies map as `E_target = scale·E + offset` and points as
/// `z_target = coord_scale·z + coord_offset`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScaleMap {
    pub source: ModelSpec,
    pub target: ModelSpec,
    pub scale: C64,
    pub offset: C64,
    pub coord_scale: C64,
    pub coord_offset: C64,
    /// Turns by which the continued argument of the target parameter differs
    /// from its principal value.
    pub winding: i32,
}

impl ScaleMap {
    pub fn energy(&self, e: C64) -> C64 {
        self.scale * e + self.offset
    }

    pub fn energy_inverse(&self, e: C64) -> C64 {
        (e - self.offset) / self.scale
    }

    pub fn point(&self, z: C64) -> C64 {
        self.coord_scale * z + self.coord_offset
    }

    pub fn point_inverse(&self, z: C64) -> C64 {
        (z - self.coord_offset) / self.coord_scale
    }

    pub fn inverse(&self) -> ScaleMap {
        ScaleMap {
            source: self.target,
            target: self.source,
            scale: self.scale.inv(),
            offset: -self.offset / self.scale,
            coord_scale: self.coord_scale.inv(),
            coord_offset: -self.coord_offset / self.coord_scale,
            winding: -self.winding,
        }
    }
}

fn one() -> C64 {
    C64::new(1.0, 0.0)
}

/// Exact scaling map from `source` to the `target` parametrization.
pub fn scale_map(source: &ModelSpec, target: Target) -> Result<ScaleMap> {
    source.validate()?;
    if source.shift() != C64::new(0.0, 0.0) {
        return Err(Error::Config(
            "scaling maps are defined for untranslated potentials".into(),
        ));
    }
    let zero = C64::new(0.0, 0.0);
    let unsupported = || {
        Err(Error::Config(format!(
            "no scaling map from {} to {:?}",
            source.family.name(),
            target
        )))
    };
    let map = match (source.family, target) {
        (Family::Hbar, Target::AlphaHat) => {
            let lam = source.hbar_c().powf(0.4);
            ScaleMap {
                source: *source,
                target: ModelSpec::alpha(-(lam * lam).inv()),
                scale: (lam * lam * lam).inv(),
                offset: zero,
                coord_scale: lam.inv(),
                coord_offset: zero,
                winding: 0,
            }
        }
        (Family::AlphaHat, Target::Hbar) => {
            let a = source.alpha_c();
            if a.norm() == 0.0 {
                return Err(Error::Config("alpha = 0 corresponds to hbar = infinity".into()));
            }
            let lam = (-a).sqrt().inv();
            let hbar = lam.powf(2.5);
            let tgt = if hbar.im.abs() <= 1e-15 * hbar.norm() {
                ModelSpec::hbar(hbar.re)
            } else {
                ModelSpec::hbar_complex(hbar)
            };
            tgt.validate()?;
            ScaleMap {
                source: *source,
                target: tgt,
                scale: lam * lam * lam,
                offset: zero,
                coord_scale: lam,
                coord_offset: zero,
                winding: 0,
            }
        }
        (Family::BetaTilde, Target::AlphaHat) => {
            let b = source.beta_c();
            if b.norm() == 0.0 {
                return Err(Error::Config("beta = 0 has no alpha picture".into()));
            }
            let b5 = b.powf(0.2);
            let b10 = b.powf(0.1);
            ScaleMap {
                source: *source,
                target: ModelSpec::alpha((b5.powu(4) * 3.0).inv()),
                scale: b5.inv(),
                offset: (b * 27.0 / 2.0 * b5).inv(),
                coord_scale: b10,
                coord_offset: -I / (b.sqrt() * 3.0) * b10,
                winding: 0,
            }
        }
        (Family::AlphaHat, Target::BetaTilde) => {
            let a = source.alpha_c();
            if a.norm() == 0.0 {
                return Err(Error::Config("alpha = 0 corresponds to beta = infinity".into()));
            }
            let b = (a * 3.0).powf(-1.25);
            let beta_spec = ModelSpec::beta(b);
            beta_spec.validate()?;
            let fwd = scale_map(&beta_spec, Target::AlphaHat)?;
            if (fwd.target.alpha_c() - a).norm() > 1e-10 * a.norm().max(1.0) {
                return Err(Error::Config(
                    "alpha lies outside the principal image of the beta picture".into(),
                ));
            }
            let inv = fwd.inverse();
            ScaleMap {
                source: *source,
                ..inv
            }
        }
        (Family::Hbar, Target::BetaPlus) | (Family::Hbar, Target::BetaMinus) => {
            let side = if target == Target::BetaPlus {
                Side::Plus
            } else {
                Side::Minus
            };
            let h = source.hbar_c();
            let cf = side.frequency();
            let lam = side.dilation(h);
            // β± = 3^{−5/4} e^{∓i5π/4} ħ, stored by its principal value.
            let continued_arg = -side.sign() * 5.0 * PI / 4.0 + h.arg();
            let beta = C64::from_polar(3f64.powf(-1.25) * h.norm(), continued_arg);
            let principal = beta.arg();
            let winding = ((continued_arg - principal) / (2.0 * PI)).round() as i32;
            // The principal √β may differ in sign from λ/c², which amounts to parity.
            let parity = if (beta.sqrt() - lam / (cf * cf)).norm() <= 1e-10 * beta.norm().sqrt().max(1e-300) {
                1.0
            } else {
                -1.0
            };
            ScaleMap {
                source: *source,
                target: ModelSpec::beta(beta),
                scale: (h * cf).inv(),
                offset: -side.limit_energy() / (h * cf),
                coord_scale: lam.inv() * parity,
                coord_offset: -lam.inv() * side.stationary_point() * parity,
                winding,
            }
        }
        (Family::Hbar, Target::KDelta { delta }) => {
            if source.hbar_im != 0.0 {
                return Err(Error::Config("the (k, delta) picture needs real hbar".into()));
            }
            if !(delta > 0.0) {
                return Err(Error::Config("delta must be positive".into()));
            }
            ScaleMap {
                source: *source,
                target: ModelSpec::kdelta(source.hbar * delta.powf(1.25), delta),
                scale: C64::new(delta.powf(1.5), 0.0),
                offset: zero,
                coord_scale: C64::new(delta.sqrt(), 0.0),
                coord_offset: zero,
                winding: 0,
            }
        }
        (Family::KDelta, Target::Hbar) => {
            let delta = source.delta;
            if !(delta > 0.0) {
                return Err(Error::Config("delta must be positive".into()));
            }
            ScaleMap {
                source: *source,
                target: ModelSpec::hbar(source.k * delta.powf(-1.25)),
                scale: C64::new(delta.powf(-1.5), 0.0),
                offset: zero,
                coord_scale: C64::new(delta.sqrt().recip(), 0.0),
                coord_offset: zero,
                winding: 0,
            }
        }
        _ => return unsupported(),
    };
    let _ = one;
    Ok(map)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: C64, b: C64, tol: f64) -> bool {
        (a - b).norm() <= tol * (1.0 + b.norm())
    }

    #[test]
    fn constants() {
        assert!((C - 2.0 / (3.0 * 3f64.sqrt())).abs() < 1e-16);
        assert!((X_PLUS - 1.0 / 3f64.sqrt()).abs() < 1e-16);
        let cp = Side::Plus.frequency();
        let cm = Side::Minus.frequency();
        // (c±)² = ±i√3, so (c±)⁴ = −3 = −9·(±i)²/3.
        assert!(close(cp * cp, I * 3f64.sqrt(), 1e-15));
        assert!(close(cm * cm, -I * 3f64.sqrt(), 1e-15));
        assert!(close(cp.powu(4), C64::new(-3.0, 0.0), 1e-14));
        assert!(close(e0(), -I * C, 0.0));
    }

    #[test]
    fn potential_examples() {
        let h = ModelSpec::hbar(1.0);
        assert!(potential(&h, C64::new(1.0, 0.0)).unwrap().norm() < 1e-15);
        assert!(close(h.potential(C64::new(X_PLUS, 0.0)), e0(), 1e-15));
        let a = ModelSpec::alpha(C64::new(0.0, 0.0));
        assert!(close(a.potential(C64::new(1.0, 0.0)), I, 1e-15));
        let bad = ModelSpec::hbar(-1.0);
        assert!(potential(&bad, C64::new(0.0, 0.0)).unwrap_err().is_config());
    }

    #[test]
    fn shifted_potential() {
        let s = C64::new(0.3, -0.2);
        let spec = ModelSpec::hbar(1.0).with_shift(s);
        let z = C64::new(0.7, 0.4);
        assert!(close(spec.potential(z), ModelSpec::hbar(1.0).potential(z + s), 1e-14));
    }

    #[test]
    fn stationary_examples() {
        let st = stationary_points(&ModelSpec::hbar(1.0));
        let mut xs: Vec<f64> = st.iter().map(|p| p.z.re).collect();
        xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert!((xs[0] + X_PLUS).abs() < 1e-15 && (xs[1] - X_PLUS).abs() < 1e-15);
        let a0 = stationary_points(&ModelSpec::alpha(C64::new(0.0, 0.0)));
        assert_eq!(a0.len(), 1);
        assert_eq!(a0[0].multiplicity, 2);
        assert!(a0[0].z.norm() < 1e-15);
        let r = stationary_points(&ModelSpec::real_cubic(1.0));
        let xm = r.iter().find(|p| p.z.re < 0.0).unwrap();
        assert!((xm.value.re - C).abs() < 1e-15);
    }

    #[test]
    fn turning_point_examples() {
        let h = ModelSpec::hbar(1.0);
        let tp = turning_points(&h, I * C);
        let simple = tp.roots.iter().zip(&tp.multiplicity).find(|(_, &m)| m == 1).unwrap().0;
        assert!(close(*simple, C64::new(2.0 / 3f64.sqrt(), 0.0), 1e-12));
        let doubles: Vec<_> = tp
            .roots
            .iter()
            .zip(&tp.multiplicity)
            .filter(|(_, &m)| m == 2)
            .collect();
        assert_eq!(doubles.len(), 2);
        assert!(close(*doubles[0].0, C64::new(-X_PLUS, 0.0), 1e-12));

        let tp0 = turning_points(&h, C64::new(0.0, 0.0));
        let mut xs: Vec<f64> = tp0.roots.iter().map(|z| z.re).collect();
        xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert!((xs[0] + 1.0).abs() < 1e-14 && xs[1].abs() < 1e-14 && (xs[2] - 1.0).abs() < 1e-14);

        let tpc = turning_points(&h, C64::new(0.352268, 0.0));
        assert!(tpc.vieta_residual(&h.poly()) < 1e-12);
        let l = tpc.labels.unwrap();
        assert!(tpc.roots[l.i0].re.abs() < 1e-10 && tpc.roots[l.i0].im > 0.0);
        let (m, p) = (tpc.roots[l.minus], tpc.roots[l.plus]);
        assert!((m + p.conj()).norm() < 1e-12);
    }

    #[test]
    fn labels_by_continuity() {
        let h = ModelSpec::hbar(1.0);
        // Near E₀ the coalescing pair is (I₀, I₊).
        let e = e0() + C64::new(0.05, 0.02);
        let tp = turning_points(&h, e);
        let l = tp.labels.unwrap();
        assert!((tp.roots[l.i0] - tp.roots[l.plus]).norm() < 0.6);
        assert!(tp.roots[l.minus].re < -1.0);
    }

    #[test]
    fn real_cubic_labels() {
        let r = ModelSpec::real_cubic(1.0);
        let tp = turning_points(&r, C64::new(0.1, 0.0));
        let l = tp.labels.unwrap();
        let (a, b, c) = (tp.roots[l.i0].re, tp.roots[l.minus].re, tp.roots[l.plus].re);
        assert!(a < -X_PLUS && -X_PLUS < b && b < c);
    }

    #[test]
    fn hbar_alpha_examples() {
        let m = scale_map(&ModelSpec::hbar(1.0), Target::AlphaHat).unwrap();
        assert!(close(m.target.alpha_c(), C64::new(-1.0, 0.0), 1e-15));
        assert!(close(m.scale, one(), 1e-15));
        let back = scale_map(&m.target, Target::Hbar).unwrap();
        let e = C64::new(2.0, 0.0);
        assert!(close(back.energy(m.energy(e)), e, 1e-12));
        assert!((back.target.hbar - 1.0).abs() < 1e-14);
    }

    #[test]
    fn beta_pm_examples() {
        let h = 0.37;
        let mp = scale_map(&ModelSpec::hbar(h), Target::BetaPlus).unwrap();
        let b = mp.target.beta_c();
        assert!((b.norm() - 3f64.powf(-1.25) * h).abs() < 1e-15);
        assert!((b.arg() - 3.0 * PI / 4.0).abs() < 1e-14);
        assert_eq!(mp.winding, -1);
        let mm = scale_map(&ModelSpec::hbar(h), Target::BetaMinus).unwrap();
        assert!((mm.target.beta_c().arg() + 3.0 * PI / 4.0).abs() < 1e-14);
        assert_eq!(mm.winding, 1);
        // The perturbative level ±E₀ + ħc±(2n+1) maps to the harmonic value 2n+1.
        for (map, side) in [(mp, Side::Plus), (mm, Side::Minus)] {
            let e = side.limit_energy() + side.frequency() * h * 5.0;
            assert!(close(map.energy(e), C64::new(5.0, 0.0), 1e-14));
            assert!(close(map.point(C64::new(side.stationary_point(), 0.0)), C64::new(0.0, 0.0), 1e-14));
        }
    }

    /// The potential pulled back through a map agrees with the source up to the energy scale.
    #[test]
    fn maps_intertwine_operators() {
        let cases: Vec<(ModelSpec, Target)> = vec![
            (ModelSpec::hbar(0.7), Target::AlphaHat),
            (ModelSpec::hbar_complex(C64::from_polar(0.5, 0.2)), Target::AlphaHat),
            (ModelSpec::beta(C64::new(0.3, 0.1)), Target::AlphaHat),
            (ModelSpec::hbar(0.4), Target::BetaPlus),
            (ModelSpec::hbar(0.4), Target::BetaMinus),
            (ModelSpec::hbar(0.9), Target::KDelta { delta: 2.0 }),
        ];
        for (src, tgt) in cases {
            let m = scale_map(&src, tgt).unwrap();
            // H_target(u) = scale·(H_source(x) + offset/scale) with u = coord_scale·x + coord_offset:
            // kinetic: K_t = scale·K_s/coord_scale², potential: V_t(u) = scale·V_s(x) + offset.
            let kin = m.scale * src.kinetic() * m.coord_scale * m.coord_scale;
            assert!(close(kin, m.target.kinetic(), 1e-12), "{src:?} {tgt:?}");
            for z in [C64::new(0.3, -0.2), C64::new(-1.1, 0.7), C64::new(2.0, 0.1)] {
                let lhs = m.target.potential(m.point(z));
                let rhs = m.scale * src.potential(z) + m.offset;
                assert!(close(lhs, rhs, 1e-11), "{src:?} {tgt:?} {lhs} {rhs}");
            }
        }
    }

    #[test]
    fn unsupported_pair_is_config_error() {
        let e = scale_map(&ModelSpec::real_cubic(1.0), Target::AlphaHat).unwrap_err();
        assert!(e.is_config());
        let e = scale_map(&ModelSpec::hbar(1.0), Target::BetaTilde).unwrap_err();
        assert!(e.is_config());
    }

    #[test]
    fn family_names_round_trip() {
        for f in [
            Family::Hbar,
            Family::BetaTilde,
            Family::AlphaHat,
            Family::KDelta,
            Family::RealCubic,
        ] {
            assert_eq!(f.name().parse::<Family>().unwrap(), f);
        }
        assert!("cubic".parse::<Family>().unwrap_err().is_config());
    }
}
