//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, ScatterError>;

#[derive(Debug, Error)]
pub enum ScatterError {
    /// Argument outside the domain of a special function or kernel.
    #[error("domain error in {func}: argument {arg}")]
    Domain { func: &'static str, arg: f64 },

    /// Kernel evaluated at coincident points.
    #[error("singular kernel {func} evaluated at zero distance")]
    Singularity { func: &'static str },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("geometry error: {0}")]
    Geometry(String),

    /// Point lies (numerically) on a curve, so inside/outside is ambiguous.
    #[error("point ({x}, {y}) lies within {distance:e} of the curve")]
    BoundaryAmbiguity { x: f64, y: f64, distance: f64 },

    /// Potential evaluation requested too close to the source curve.
    #[error("evaluation point {index} is {distance:e} from the boundary (minimum {minimum:e})")]
    NearBoundary {
        index: usize,
        distance: f64,
        minimum: f64,
    },

    #[error("unsupported operator: {0}")]
    Unsupported(String),

    #[error("formulation error: {0}")]
    Formulation(String),

    /// Linear system is singular or too ill-conditioned to trust.
    #[error("ill-conditioned system ({context}): estimated condition {condition:e}")]
    Conditioning { context: String, condition: f64 },

    /// Plain sound-hard system near an interior Dirichlet eigenvalue.
    #[error("plain sound-hard system near a resonance at k = {k}: condition {condition:e}")]
    Resonance { k: f64, condition: f64 },

    #[error(
        "iterative solver did not converge: residual {residual:e} after {iterations} iterations"
    )]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("partial-wave series not converged at n_max = {n_max}: tail {tail:e}")]
    Truncation { n_max: usize, tail: f64 },

    /// The solvability condition of the maximum-principle bound fails.
    #[error("admissibility condition failed: L(A(1)) = {value} (|1 - L(A(1))| = {gap:e})")]
    Admissibility { value: f64, gap: f64 },

    #[error("tensor already carries noise (delta = {delta}, seed = {seed})")]
    DoubleNoise { delta: f64, seed: u64 },

    #[error("solve failed at (m = {m}, n = {n}): {source}")]
    AtSample {
        m: usize,
        n: usize,
        #[source]
        source: Box<ScatterError>,
    },

    #[error("archive format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
