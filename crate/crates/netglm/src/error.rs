//! Crate-wide error type.

use thiserror::Error;

/// Errors surfaced by the library.
#[derive(Debug, Error)]
pub enum Error {
    /// A caller-supplied argument violates a precondition.
    #[error("invalid argument: {0}")]
    Argument(String),

    /// Not enough observations to carry out the operation.
    #[error("insufficient data: {0}")]
    InsufficientData(String),

    /// The request exceeds a hard resource limit (e.g. exact enumeration size).
    #[error("resource limit exceeded: {0}")]
    Resource(String),

    /// A computation produced NaN or otherwise lost numeric meaning.
    #[error("numeric failure: {0}")]
    Numeric(String),

    /// A matrix that must be symmetric positive definite is not.
    #[error("matrix is not symmetric positive definite: {0}")]
    NotSpd(String),

    /// Random graph generation exhausted its rejection budget.
    #[error("graph generation failed: {0}")]
    GenerationFailure(String),

    /// The projection program stayed infeasible after all constant inflations.
    #[error(
        "projection infeasible after {inflations} inflations \
         (residuals: inf {residual_inf:.3e}, scalar {residual_scalar:.3e}, max {residual_max:.3e})"
    )]
    Infeasible {
        inflations: usize,
        residual_inf: f64,
        residual_scalar: f64,
        residual_max: f64,
    },

    /// The plug-in variance collapsed to zero.
    #[error("degenerate variance: every projected covariate is zero")]
    DegenerateVariance,

    /// Every replicate of an experiment failed.
    #[error("experiment failed: {0}")]
    Experiment(String),

    /// An error from a lower pipeline stage, labelled with the stage name.
    #[error("stage `{stage}`: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Wrap an error with the pipeline stage it occurred in.
    pub fn in_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stage_labels_compose() {
        let e = Error::Argument("bad index".into()).in_stage("fit");
        assert_eq!(e.to_string(), "stage `fit`: invalid argument: bad index");
    }
}
