//! Error type shared by every module of the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("grid size {0} is invalid (need a power of two, at least 8)")]
    InvalidGridSize(usize),

    #[error("grid sizes differ: {0} vs {1}")]
    GridMismatch(usize, usize),

    #[error("non-finite value at grid index {0}")]
    NonFinite(usize),

    #[error("not a density: min value {min:.3e} below -1e-10")]
    NegativeDensity { min: f64 },

    #[error("not a density: integral {integral:.12} deviates from 1 by more than {tol:.1e}")]
    NotNormalized { integral: f64, tol: f64 },

    #[error("density has zero or negative total mass after clipping")]
    ZeroMass,

    #[error("truncation order {k} must satisfy K < n/2 = {half_n}")]
    Aliasing { k: usize, half_n: usize },

    #[error("wrapped Cauchy scale must be positive, got {0}")]
    InvalidScale(f64),

    #[error("wrapped Cauchy harmonic must be >= 1, got {0}")]
    InvalidHarmonic(i64),

    #[error("time step {dt:.3e} exceeds the diffusion stability bound {bound:.3e}")]
    UnstableStep { dt: f64, bound: f64 },

    #[error("density undershoot {min:.3e} at t = {t:.6}; reduce dt / increase n")]
    PositivityLost { t: f64, min: f64 },

    #[error("drift must have zero mean for a periodic potential (mean = {0:.3e})")]
    NonZeroMeanDrift(f64),

    #[error("no periodic section crossing detected within the integration horizon")]
    NoCycleDetected,

    #[error("adjoint iteration did not converge after {0} periods")]
    AdjointNotConverged(usize),

    #[error("feedforward warmup did not reach tol {tol:.1e} after {periods} periods")]
    WarmupNotConverged { periods: usize, tol: f64 },

    #[error("target mode k = {k} is not covered: p_k != 0 but z_k = 0")]
    UncoveredMode { k: i64 },

    #[error("design index set K is empty")]
    EmptyDesignSet,

    #[error("density value below floor {floor:.1e} (min = {min:.3e})")]
    BelowFloor { min: f64, floor: f64 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
