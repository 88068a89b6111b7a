use thiserror::Error;

use crate::model::{Dose, Subgroup};

#[derive(Debug, Error)]
pub enum Error {
    #[error("dose {dose} is not a candidate for the {subgroup} subgroup")]
    InvalidArm { subgroup: Subgroup, dose: Dose },

    #[error("observation time must be positive, got {0}")]
    NonPositiveTime(f64),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("parameters outside the support (shapes and rates must be positive)")]
    OutsideSupport,

    #[error("no posterior draws")]
    EmptyDraws,

    #[error("admissible set is empty")]
    EmptyAdmissibleSet,

    #[error("infeasible targets for arm {arm}: {reason}")]
    InfeasibleTargets { arm: String, reason: String },

    #[error("calibration did not converge (max residual {residual:.3e} after {iterations} iterations)")]
    Calibration { residual: f64, iterations: usize },

    #[error("scenario is not calibrated; run calibration first")]
    Uncalibrated,

    #[error("trial with seed {seed} failed: {source}")]
    Trial {
        seed: u64,
        #[source]
        source: Box<Error>,
    },
}

pub type Result<T> = std::result::Result<T, Error>;
