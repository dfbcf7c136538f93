use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("mass ratio {0} is outside [0, 1]")]
    InvalidMassRatio(f64),

    #[error("position ({x}, {y}) coincides with a massive body")]
    AtBody { x: f64, y: f64 },

    #[error("{what} is singular here ({detail})")]
    Singular { what: &'static str, detail: String },

    #[error("step size underflow at t = {t} (h = {h:e})")]
    StepUnderflow { t: f64, h: f64 },

    #[error("invalid bracket: g({t0}) = {g0}, g({t1}) = {g1}")]
    InvalidBracket { t0: f64, t1: f64, g0: f64, g1: f64 },

    #[error("root finder did not converge: {0}")]
    NoConvergence(String),

    #[error("osculating orbit is not bound (K = {0})")]
    Unbound(f64),

    #[error("degenerate osculating orbit: {0}")]
    Degenerate(String),

    #[error("state is not on a symmetry plane (y = {y}, vx = {vx})")]
    NotOnSymmetryPlane { y: f64, vx: f64 },

    #[error("trajectory did not return to the section before t = {t_end} ({reason})")]
    NoReturn { t_end: f64, reason: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("config parse error: {0}")]
    ConfigParse(String),

    #[error("invalid configuration: {}", .0.join("; "))]
    ConfigInvalid(Vec<String>),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short machine-readable tag, used by the CLI error envelope.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidMassRatio(_) => "invalid_mass_ratio",
            Error::AtBody { .. } => "at_body",
            Error::Singular { .. } => "singular",
            Error::StepUnderflow { .. } => "step_underflow",
            Error::InvalidBracket { .. } => "invalid_bracket",
            Error::NoConvergence(_) => "no_convergence",
            Error::Unbound(_) => "unbound",
            Error::Degenerate(_) => "degenerate",
            Error::NotOnSymmetryPlane { .. } => "not_on_symmetry_plane",
            Error::NoReturn { .. } => "no_return",
            Error::InvalidArgument(_) => "invalid_argument",
            Error::ConfigParse(_) => "config_parse",
            Error::ConfigInvalid(_) => "config_invalid",
            Error::Io { .. } => "io",
        }
    }
}
