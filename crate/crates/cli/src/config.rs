use std::path::PathBuf;
use std::str::FromStr;

use bwlab_core::models::Family;
use bwlab_core::{Error, ModelSpec, Result, C64};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Complex number given as `RE,IM` or `RE`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Complex(pub f64, pub f64);

impl Complex {
    pub fn c64(self) -> C64 {
        C64::new(self.0, self.1)
    }
}

impl FromStr for Complex {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let parts: Vec<&str> = s.split(',').map(str::trim).collect();
        let num = |t: &str| t.parse::<f64>().map_err(|e| format!("'{t}': {e}"));
        match parts.as_slice() {
            [re] => Ok(Complex(num(re)?, 0.0)),
            [re, im] => Ok(Complex(num(re)?, num(im)?)),
            _ => Err(format!("expected RE or RE,IM, got '{s}'")),
        }
    }
}

/// Energy window `RE0,RE1` or `RE0,RE1,IM0,IM1`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Window(pub [f64; 4]);

impl FromStr for Window {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let v: Vec<f64> = s
            .split(',')
            .map(|t| t.trim().parse::<f64>().map_err(|e| format!("'{t}': {e}")))
            .collect::<std::result::Result<_, _>>()?;
        match v.as_slice() {
            [a, b] if a < b => Ok(Window([*a, *b, -0.5, 0.5])),
            [a, b, c, d] if a < b && c < d => Ok(Window([*a, *b, *c, *d])),
            _ => Err(format!("expected RE0,RE1[,IM0,IM1] with increasing bounds, got '{s}'")),
        }
    }
}

fn parse_family(s: &str) -> std::result::Result<Family, String> {
    Family::from_str(s).map_err(|e| e.to_string())
}

#[derive(Parser, Debug, Serialize)]
#[command(name = "bwlab", version, about = "Levels, crossings and Stokes geometry of the PT-symmetric cubic oscillator")]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct Global {
    /// Family: hbar, beta, alpha, kdelta or real.
    #[arg(long, global = true, default_value = "hbar", value_parser = parse_family)]
    pub family: Family,
    #[arg(long, global = true, default_value_t = 1.0, allow_negative_numbers = true)]
    pub hbar: f64,
    /// β as RE,IM.
    #[arg(long, global = true, default_value = "0,0", allow_negative_numbers = true)]
    pub beta: Complex,
    /// α as RE,IM.
    #[arg(long, global = true, default_value = "0,0", allow_negative_numbers = true)]
    pub alpha: Complex,
    #[arg(long, global = true, default_value_t = 1.0)]
    pub k: f64,
    #[arg(long, global = true, default_value_t = 0.0, allow_negative_numbers = true)]
    pub delta: f64,
    /// Local integration tolerance.
    #[arg(long, global = true, default_value_t = 1e-10)]
    pub tol: f64,
    /// Directory for output files; nothing is written without it.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Seed for the scan jitter.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Print the JSON document on stdout instead of the summary.
    #[arg(long, global = true)]
    pub json: bool,
}

impl Global {
    pub fn spec(&self) -> Result<ModelSpec> {
        let spec = match self.family {
            Family::Hbar => ModelSpec::hbar(self.hbar),
            Family::BetaTilde => ModelSpec::beta(self.beta.c64()),
            Family::AlphaHat => ModelSpec::alpha(self.alpha.c64()),
            Family::KDelta => ModelSpec::kdelta(self.k, self.delta),
            Family::RealCubic => ModelSpec::real_cubic(self.hbar),
        };
        spec.validate()?;
        if !(self.tol > 0.0 && self.tol < 1e-2) {
            return Err(Error::Config(format!("--tol must lie in (0, 1e-2), got {}", self.tol)));
        }
        Ok(spec)
    }
}

#[derive(Subcommand, Debug, Clone, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    /// Levels inside an energy window.
    Spectrum {
        /// RE0,RE1[,IM0,IM1].
        #[arg(long, allow_negative_numbers = true)]
        window: Option<Window>,
        /// Maximum number of levels.
        #[arg(long, default_value_t = 8)]
        count: usize,
    },
    /// Crossing of the levels 2n and 2n+1 of the ħ family.
    Branchpoint {
        #[arg(long, default_value_t = 0)]
        n: usize,
        /// Continue the pair around the crossing.
        #[arg(long)]
        monodromy: bool,
        /// Loop radius as a fraction of ħ_n.
        #[arg(long, default_value_t = 0.1)]
        radius: f64,
        /// Compare the edges of the cut with the small-ħ levels at 0.8·ħ_n.
        #[arg(long)]
        edge: bool,
    },
    /// Stokes lines at an energy, or the critical energy.
    Stokes {
        /// Energy as RE,IM.
        #[arg(long = "E", default_value = "0.5,0", allow_negative_numbers = true)]
        energy: Complex,
        /// Compute the instability energy of the oscillatory range.
        #[arg(long = "E-critical")]
        e_critical: bool,
        /// Fit the escape-line asymptote as well.
        #[arg(long)]
        escape: bool,
    },
    /// Zeros of an eigenfunction.
    Zeros {
        /// Label of a real level (node count).
        #[arg(long, conflicts_with = "energy")]
        m: Option<usize>,
        /// Start the solve from this energy instead.
        #[arg(long = "E", allow_negative_numbers = true)]
        energy: Option<Complex>,
    },
    /// Semiclassical level from a quantization rule.
    Wkb {
        #[arg(long, default_value_t = 0)]
        n: usize,
        #[arg(long, value_enum, default_value_t = Rule::Cc1)]
        rule: Rule,
        #[arg(long, value_enum, default_value_t = SideArg::Plus)]
        side: SideArg,
        /// Also solve for the exact level and the exact quantization residual.
        #[arg(long)]
        exact: bool,
    },
    /// Table of crossings n = 0..=n_max with limit trends.
    Report {
        #[arg(long, default_value_t = 3)]
        n_max: usize,
    },
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Rule {
    Cc1,
    Cc3,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SideArg {
    Plus,
    Minus,
}

/// Everything needed to reproduce a run.
#[derive(Debug, Serialize)]
pub struct RunConfig {
    pub version: &'static str,
    pub command: Command,
    pub spec: ModelSpec,
    pub tol: f64,
    pub seed: u64,
}

impl RunConfig {
    pub fn new(cli: &Cli, spec: ModelSpec) -> Self {
        RunConfig {
            version: VERSION,
            command: cli.command.clone(),
            spec,
            tol: cli.global.tol,
            seed: cli.global.seed,
        }
    }
}
