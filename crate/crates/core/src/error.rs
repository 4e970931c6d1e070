use thiserror::Error;

use crate::model::ConstraintViolation;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("cannot place {gateways} gateways with {spacing_m} m spacing after {attempts} draws")]
    PlacementInfeasible { gateways: usize, spacing_m: f64, attempts: usize },

    #[error("infeasible quota: {devices} devices cannot fit {channels} channels x {quota} slots")]
    InfeasibleQuota { devices: usize, channels: usize, quota: usize },

    #[error("distance {0} m is outside the coverage range")]
    OutOfCoverage(f64),

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("assignment violates constraints: {0}")]
    Constraint(#[from] ConstraintViolation),

    #[error("numerical divergence: {0}")]
    Divergence(String),

    #[error("malformed input: {0}")]
    Format(String),

    #[error("{stage} stage failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Stage { source, .. } => source.exit_code(),
            Error::Divergence(_) => 3,
            Error::PlacementInfeasible { .. }
            | Error::InfeasibleQuota { .. }
            | Error::OutOfCoverage(_)
            | Error::Constraint(_) => 2,
            Error::InvalidParameter(_) | Error::LengthMismatch { .. } | Error::Format(_) => 1,
            Error::Io(_) | Error::Csv(_) | Error::Json(_) => 1,
        }
    }
}

impl Error {
    /// Tags an error with the pipeline stage that raised it.
    pub fn in_stage(self, stage: &'static str) -> Self {
        Error::Stage { stage, source: Box::new(self) }
    }
}

impl From<toml::de::Error> for Error {
    fn from(e: toml::de::Error) -> Self {
        Error::Format(e.to_string())
    }
}

impl From<toml::ser::Error> for Error {
    fn from(e: toml::ser::Error) -> Self {
        Error::Format(e.to_string())
    }
}
