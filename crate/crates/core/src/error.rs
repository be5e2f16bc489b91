use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("kernel is undefined for t = {0} (requires t > 0)")]
    Domain(f64),

    #[error("numerical breakdown: {0}")]
    Breakdown(String),

    #[error("internal invariant violated: {0}")]
    Invariant(String),

    #[error("newton iteration did not converge after {iterations} steps (update ratio {ratio:e}){}", step.map(|k| format!(" at time step {k}")).unwrap_or_default())]
    NewtonDiverged {
        iterations: usize,
        ratio: f64,
        step: Option<usize>,
    },

    #[error("time budget exceeded")]
    TimeBudget,

    #[error("dense assembly refused: {0}")]
    TooLarge(String),

    #[error("strict diagonal dominance violated in row {row}: 1 - h/R = {value:e}")]
    NotDiagonallyDominant { row: usize, value: f64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub(crate) fn check_len(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, got })
    }
}
