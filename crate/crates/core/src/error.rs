use thiserror::Error;

/// Errors produced by the engine.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid lattice: {0}")]
    InvalidLattice(String),

    #[error("degenerate lattice L={0}: nearest-neighbour bonds wrap onto themselves (need L >= 3)")]
    DegenerateLattice(usize),

    #[error("connectivity radius {radius} too large for L={len} (must be < L/2)")]
    RadiusTooLarge { radius: f64, len: usize },

    #[error("invalid graph: {0}")]
    InvalidGraph(String),

    #[error("improper coloring: nodes {0} and {1} share color {2}")]
    ImproperColoring(usize, usize, usize),

    #[error("size mismatch for {what}: expected {expected}, got {got}")]
    SizeMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("architecture mismatch: operation requires {0}")]
    ArchMismatch(&'static str),

    #[error("collapsed estimator at visible site {site}: p_flip = {value}")]
    CollapsedEstimator { site: usize, value: f64 },

    #[error("too few samples: need at least {needed}, got {got}")]
    TooFewSamples { needed: usize, got: usize },

    #[error("ill-conditioned linear system: non-finite value at CG iteration {0}")]
    IllConditioned(usize),

    #[error("numerical abort at iteration {iter}: {reason}")]
    NumericalAbort { iter: usize, reason: String },

    #[error("problem too large: {0}")]
    SizeLimit(String),

    #[error("infeasible partition: {0}")]
    InfeasiblePartition(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("checkpoint format error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
