use thiserror::Error;

/// Errors raised across the library.
///
/// The variants are grouped so a front end can map them onto distinct exit
/// codes: invalid inputs, informativity failures (the data cannot certify the
/// requested property) and numerical failures (a solver gave up).
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("degenerate interval [{t0}, {t1}]")]
    DegenerateInterval { t0: f64, t1: f64 },

    #[error("time {t} lies outside [{t0}, {t1}]")]
    OutOfInterval { t: f64, t0: f64, t1: f64 },

    #[error("not enough samples: need {needed}, got {got}")]
    TooFewSamples { needed: usize, got: usize },

    #[error("rank-deficient fit: {0}")]
    RankDeficient(String),

    #[error("graph violates assumptions: {0}")]
    InvalidGraph(String),

    #[error("data not informative: {0}")]
    NotInformative(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("simulation diverged at t = {t}: {detail}")]
    Diverged { t: f64, detail: String },

    #[error("invalid scenario: {0}")]
    Scenario(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::NotInformative(_) => 2,
            Error::Numerical(_) | Error::Diverged { .. } => 3,
            _ => 4,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
