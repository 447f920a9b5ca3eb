// SPDX-License-Identifier: Apache-2.0

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    Input(String),

    #[error("solver did not converge after {iterations} iterations (relative residual {residual:e})")]
    Convergence { iterations: usize, residual: f64 },

    #[error("calibration failed: {0}")]
    Calibration(String),

    /// The ring oscillator stopped: local supply at or below threshold.
    #[error("oscillation stalled at v_local = {v_local} V (threshold {v_threshold} V)")]
    Stalled { v_local: f64, v_threshold: f64 },

    #[error("scenario parse error: {0}")]
    Parse(String),

    #[error("scenario validation failed: {0}")]
    Validation(String),

    #[error("internal invariant violated: {0}")]
    Invariant(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn input(msg: impl Into<String>) -> Self {
        Error::Input(msg.into())
    }

    /// Process exit code for this error class.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Input(_) | Error::Parse(_) | Error::Validation(_) | Error::Io(_) => 2,
            Error::Convergence { .. } | Error::Calibration(_) | Error::Stalled { .. } => 3,
            Error::Invariant(_) => 4,
        }
    }
}
