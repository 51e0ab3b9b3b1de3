use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid dimension {0}: need n >= 3")]
    InvalidDimension(usize),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("radius {r} outside the domain (r must exceed {min})")]
    OutOfDomain { r: f64, min: f64 },

    #[error("grid error: {0}")]
    Grid(String),

    #[error("matrix is not positive definite at node {node}")]
    NotPositiveDefinite { node: usize },

    #[error("quadrature failed: {0}")]
    Quadrature(String),

    #[error("indicial roots are complex (discriminant {discriminant})")]
    ComplexRoots { discriminant: f64 },

    #[error("resonance: exponent {delta} coincides with indicial root {root}")]
    Resonance { delta: f64, root: f64 },

    #[error("singular linear system (zero pivot at row {row})")]
    Singular { row: usize },

    #[error("profile is not Einstein to tolerance: residual {residual:e} > {tolerance:e}")]
    NotEinstein { residual: f64, tolerance: f64 },

    #[error("solver diverged after {iterations} iterations (residual {residual:e})")]
    Diverged { iterations: usize, residual: f64 },

    #[error("solver hit the iteration limit {iterations} (residual {residual:e})")]
    MaxIterations { iterations: usize, residual: f64 },

    #[error("degenerate classification window: bound {bound} touches exponent {exponent}")]
    DegenerateWindow { bound: f64, exponent: f64 },

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
