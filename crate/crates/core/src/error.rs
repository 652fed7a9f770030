use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the acquisition/tomography chain.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("temporal mode span too short: only {captured:.4} of the mode energy lies inside the grid (need 0.99)")]
    SpanTooShort { captured: f64 },

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("Fock cutoff too small: tail population rho[{index},{index}] = {population:.3e} >= 1e-3, increase the cutoff")]
    FockTail { index: usize, population: f64 },

    #[error("not a valid density matrix: {0}")]
    InvalidDensity(String),

    #[error("sample {index} (x = {x}, theta = {theta}) has probability {probability:e} below the underflow floor")]
    ProbabilityUnderflow {
        index: usize,
        x: f64,
        theta: f64,
        probability: f64,
    },

    #[error("eigen-solver did not converge after {iterations} iterations")]
    NoConvergence { iterations: usize },

    #[error("phase unidentifiable: {0}")]
    PhaseUnidentifiable(String),

    #[error("window [{start:e}, {end:e}] s lies outside the trace span [{span_start:e}, {span_end:e}] s")]
    WindowOutOfSpan {
        start: f64,
        end: f64,
        span_start: f64,
        span_end: f64,
    },

    #[error("calibration target {target} unreachable; achievable W(0,0) range is [{low:.4}, {high:.4}]")]
    Unreachable { target: f64, low: f64, high: f64 },

    #[error("malformed {what}: {reason}")]
    Format { what: &'static str, reason: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }

    pub(crate) fn format(what: &'static str, reason: impl Into<String>) -> Self {
        Error::Format {
            what,
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by bad user input (config, files, flags) rather
    /// than by a numerical failure.
    pub fn is_config_error(&self) -> bool {
        matches!(
            self,
            Error::InvalidParameter { .. }
                | Error::Config(_)
                | Error::Format { .. }
                | Error::Io { .. }
                | Error::WindowOutOfSpan { .. }
                | Error::SpanTooShort { .. }
                | Error::GridMismatch(_)
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
