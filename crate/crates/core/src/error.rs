use num_complex::Complex64 as C64;
use thiserror::Error;

#[derive(Debug, Clone, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("step size underflow at z = {z}")]
    Stiff { z: C64 },
    #[error("step budget exhausted at z = {z}")]
    StepLimit { z: C64 },
    #[error("no convergence after {iterations} iterations (last iterate {last})")]
    Convergence {
        iterations: usize,
        last: C64,
        trace: Vec<C64>,
    },
    #[error("accuracy error: {0}")]
    Accuracy(String),
    #[error("geometry error: {0}")]
    Geometry(String),
    #[error("not found: {0}")]
    NotFound(String),
}

impl Error {
    pub fn is_config(&self) -> bool {
        matches!(self, Error::Config(_))
    }
}

pub type Result<T> = std::result::Result<T, Error>;
