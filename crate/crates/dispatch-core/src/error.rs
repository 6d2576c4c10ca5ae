//! Error types shared across the dispatch engine.

use thiserror::Error;

/// A case file or in-memory case that violates the model's structural rules.
#[derive(Debug, Error)]
pub enum ValidationError {
    #[error("unit {unit}: p_min {p_min} exceeds p_max {p_max}")]
    InvertedLimits { unit: u32, p_min: f64, p_max: f64 },

    #[error("unit {unit}: zone {index} is inverted or overlaps its neighbour")]
    OverlappingZones { unit: u32, index: usize },

    #[error("unit {unit}: zones do not span [p_min, p_max] (found [{lo}, {hi}])")]
    ZoneOutsideCapacity { unit: u32, lo: f64, hi: f64 },

    #[error("unit {unit}: ramp window [{lo}, {hi}] is empty")]
    EmptyRampWindow { unit: u32, lo: f64, hi: f64 },

    #[error("unit {unit}: {what} must be finite and non-negative")]
    BadCoefficient { unit: u32, what: &'static str },

    #[error("{what}: expected {expected} entries, found {found}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("total capacity {capacity} MW cannot meet demand {demand} MW")]
    InsufficientCapacity { demand: f64, capacity: f64 },

    #[error("cannot replicate a case with a loss model (B does not scale unit-wise)")]
    HasLossModel,

    #[error("demand must be positive, found {0}")]
    NonPositiveDemand(f64),

    #[error("case has no units")]
    NoUnits,
}

/// Failures raised while solving a dispatch problem.
#[derive(Debug, Error)]
pub enum SolveError {
    #[error("infeasible: {0}")]
    Infeasible(String),

    #[error(transparent)]
    Validation(#[from] ValidationError),
}

/// Failures raised while loading case or reported-dispatch files.
#[derive(Debug, Error)]
pub enum LoadError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}:{column}: {message}")]
    Parse {
        path: String,
        line: usize,
        column: usize,
        message: String,
    },

    #[error("{path}: unsupported schema_version {found} (this build reads version {expected})")]
    SchemaVersion {
        path: String,
        expected: u32,
        found: u32,
    },

    #[error(transparent)]
    Validation(#[from] ValidationError),
}
