// SPDX-License-Identifier: Apache-2.0

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// A position or time outside the region where a quantity is defined.
    #[error("domain error: {0}")]
    Domain(String),

    /// The wavefunction is (numerically) zero, so the guidance field is undefined.
    #[error("guidance field singular at t={t}, x=({}, {}): |psi| below floor", x[0], x[1])]
    Singular { t: f64, x: [f64; 2] },

    #[error("integration failed at t={t}, x=({}, {}): {reason}", x[0], x[1])]
    IntegrationFailure { t: f64, x: [f64; 2], reason: String },

    /// The trajectory left the box by more than the clamping tolerance.
    #[error("trajectory escaped the box at t={t}, x=({}, {})", x[0], x[1])]
    Integrity { t: f64, x: [f64; 2] },

    #[error("density ratio singular at initial point ({}, {}): |psi(t0)|^2 = {psi_sq:e}", x[0], x[1])]
    SingularRatio { x: [f64; 2], psi_sq: f64 },

    #[error("rejection envelope violated: density {value} exceeds bound {bound}")]
    Envelope { value: f64, bound: f64 },

    #[error("too many lattice failures: {failed} of {total} points")]
    LatticeFailures { failed: usize, total: usize },

    #[error("invalid configuration:\n  - {}", .0.join("\n  - "))]
    Config(Vec<String>),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(vec![msg.into()])
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Io(e.to_string())
    }
}
