//! Crate-wide error type.

use thiserror::Error;

/// Errors surfaced by the engine.
#[derive(Debug, Error)]
pub enum Error {
    /// Invalid input outside the mathematical domain of an operation
    /// (non-positive distance, NaN price, empty catalog, bad window, ...).
    #[error("domain error: {0}")]
    Domain(String),

    /// A reservation would drive a slot's availability below zero; nothing was
    /// mutated.
    #[error("reservation failed at slot {slot}: needs {needed}, only {available} available")]
    Reservation {
        slot: usize,
        needed: f64,
        available: f64,
    },

    /// A release did not match an outstanding reservation bit-for-bit; nothing
    /// was mutated.
    #[error("release of {amount} at slot {slot} matches no outstanding reservation")]
    ReleaseMismatch { slot: usize, amount: f64 },

    /// Malformed linear program (dimension mismatch, non-finite coefficient).
    #[error("linear program rejected: {0}")]
    Lp(String),

    /// An internal cross-check failed; indicates a defect, not bad input.
    #[error("internal invariant violated: {0}")]
    Internal(String),

    /// Reading or writing a scenario, trace, or summary file failed.
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    /// A file did not parse as the expected JSON shape.
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;
