//! Numerical laboratory for the PT-symmetric cubic oscillator
//! `−ħ² d²/dx² + i(x³ − x)` and its rescaled forms.

pub mod continuation;
pub mod eigensolver;
pub mod error;
pub mod models;
pub mod ode;
pub mod semiclassics;
pub mod zeros;

pub use error::{Error, Result};
pub use models::{Family, ModelSpec, ScaleMap, Target, TurningPointSet};
pub use num_complex::Complex64 as C64;
