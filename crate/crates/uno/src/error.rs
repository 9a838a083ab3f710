//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by any stage of the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("empty sequence")]
    EmptySequence,

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("no frames found in {0}")]
    NoFrames(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("bad file {path}: {reason}")]
    BadFile { path: String, reason: String },

    #[error("non-monotone timestamps at {0}")]
    NonMonotoneTimestamps(String),

    #[error("insufficient matches: got {got}, need {need}")]
    InsufficientMatches { got: usize, need: usize },

    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),

    #[error("no scale source")]
    NoScaleSource,

    #[error("insufficient overlap: {valid_fraction:.4} of pixels valid")]
    InsufficientOverlap { valid_fraction: f64 },

    #[error("rank deficient: {0}")]
    RankDeficient(String),

    #[error("no anchors")]
    NoAnchors,

    #[error("coverage gap: frame {0} not covered by any window")]
    CoverageGap(usize),

    #[error("non-finite residual on edge ({i}, {j})")]
    NonFiniteResidual { i: usize, j: usize },

    #[error("trajectory too short: {0}")]
    TooShort(String),

    #[error("no pose associations between trajectories")]
    NoAssociations,

    #[error("config error: {0}")]
    Config(String),

    #[error("pipeline stage {stage} failed on frames {frames}: {source}")]
    Stage {
        stage: &'static str,
        frames: String,
        #[source]
        source: Box<Error>,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Wrap an error with the pipeline stage and frame range it occurred in.
    pub fn in_stage(self, stage: &'static str, frames: String) -> Self {
        Error::Stage {
            stage,
            frames,
            source: Box::new(self),
        }
    }
}
