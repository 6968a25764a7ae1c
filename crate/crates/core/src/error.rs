use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("range error: {0}")]
    Range(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("unsupported dimension: {0}")]
    UnsupportedDimension(String),

    #[error("invalid intensity q[{row}][{col}] = {value} (off-diagonal entries must be >= 0)")]
    InvalidIntensity { row: usize, col: usize, value: f64 },

    #[error("generator row {row} sums to {sum:e}, expected 0")]
    NotConservative { row: usize, sum: f64 },

    #[error("integration blew up at x = {x}")]
    Blowup { x: f64 },

    #[error("positivity violated: w~[{regime}] = {value:e} at x = {x}")]
    PositivityViolation { regime: usize, x: f64, value: f64 },

    #[error("diffusion matrix is not positive semidefinite at y = {y:?}, regime {regime} (min eigenvalue {min_eigenvalue:e})")]
    NotPositiveSemidefinite {
        y: Vec<f64>,
        regime: usize,
        min_eigenvalue: f64,
    },

    #[error("lambda term {index} is inconsistent with the solved curve (residual {residual:e} > {tolerance:e})")]
    LambdaInconsistent {
        index: usize,
        residual: f64,
        tolerance: f64,
    },

    #[error("simulation exploded on path {path} at t = {t}")]
    Explosion { path: usize, t: f64 },

    #[error("degenerate interval [{x1}, {x2}]")]
    DegenerateInterval { x1: f64, x2: f64 },

    #[error("invalid config: {0}")]
    Config(String),
}

impl Error {
    /// True for failures of the numerics (blowup, positivity, explosion) as opposed
    /// to malformed inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::Blowup { .. }
                | Error::PositivityViolation { .. }
                | Error::Explosion { .. }
                | Error::NotPositiveSemidefinite { .. }
        )
    }
}
