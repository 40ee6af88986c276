use std::fmt;

use thiserror::Error;

/// Which stage of a two-stage estimator produced an error.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    First,
    Second,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Stage::First => f.write_str("first stage"),
            Stage::Second => f.write_str("second stage"),
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("non-finite linear predictor (inputs may need rescaling)")]
    NumericalOverflow,

    #[error("information matrix is singular")]
    SingularInformation,

    #[error("monotone likelihood: coefficient {index} diverges")]
    NonconvergenceMonotone { index: usize },

    #[error("design matrix is rank deficient")]
    SingularDesign,

    #[error("complete separation in logistic regression (coefficient {index})")]
    NonconvergenceSeparation { index: usize },

    #[error("failed to converge after {iterations} iterations")]
    Nonconvergence { iterations: usize },

    #[error("censoring calibration failed: {0}")]
    CalibrationFailure(String),

    #[error("column `{column}`: {message}")]
    Schema { column: String, message: String },

    #[error("scenario field `{field}`: {message}")]
    Scenario { field: String, message: String },

    #[error("{stage}: {source}")]
    Stage {
        stage: Stage,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn schema(column: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Schema {
            column: column.into(),
            message: message.into(),
        }
    }

    pub(crate) fn scenario(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Scenario {
            field: field.into(),
            message: message.into(),
        }
    }

    pub(crate) fn at_stage(self, stage: Stage) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }

    /// The innermost error, with stage annotations removed.
    pub fn root(&self) -> &Error {
        match self {
            Error::Stage { source, .. } => source.root(),
            other => other,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
