use std::fmt;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Pipeline stage, attached to errors raised by [`crate::estimate_full`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    InitialBandwidth,
    InitialFit,
    Residuals,
    VarianceModel,
    Moments,
    Eigen,
    GmmBandwidth,
    GmmFit,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Stage::InitialBandwidth => "initial-bandwidth",
            Stage::InitialFit => "initial-fit",
            Stage::Residuals => "residuals",
            Stage::VarianceModel => "variance-model",
            Stage::Moments => "moments",
            Stage::Eigen => "eigen",
            Stage::GmmBandwidth => "gmm-bandwidth",
            Stage::GmmFit => "gmm-fit",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("invalid data: {0}")]
    Invalid(String),

    #[error("{path}:{line}: {msg}")]
    Parse { path: String, line: usize, msg: String },

    #[error("no positive kernel weight at s0 = {s0} with bandwidth {h}")]
    EmptyWindow { s0: f64, h: f64 },

    #[error("singular local system at s0 = {s0} (condition estimate {condition:.3e})")]
    Singular { s0: f64, condition: f64 },

    #[error("no feasible bandwidth among {candidates} candidates")]
    NoFeasibleBandwidth { candidates: usize },

    #[error("degenerate covariance: {0}")]
    DegenerateCovariance(String),

    #[error("stage {stage}: {source}")]
    Stage {
        stage: Stage,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn at(stage: Stage) -> impl FnOnce(Error) -> Error {
        move |e| Error::Stage { stage, source: Box::new(e) }
    }

    /// Stage tag, if the error came out of the full pipeline.
    pub fn stage(&self) -> Option<Stage> {
        match self {
            Error::Stage { stage, .. } => Some(*stage),
            _ => None,
        }
    }

    pub(crate) fn parse(path: &str, line: usize, msg: impl Into<String>) -> Error {
        Error::Parse { path: path.to_string(), line, msg: msg.into() }
    }
}
