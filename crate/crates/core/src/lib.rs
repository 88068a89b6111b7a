//! Bayesian competing-risk adaptive dose-selection design with
//! biomarker-stratified dose sets, plus a Monte-Carlo simulator for its
//! operating characteristics.

pub mod decision;
pub mod error;
pub mod incidence;
pub mod model;
pub mod sampler;
pub mod scenario;
pub mod simulate;
pub mod trial;

pub use decision::{DesignConfig, ProbabilityModel, SubgroupPosterior, UtilityEstimate, UtilityWeights};
pub use error::{Error, Result};
pub use incidence::{EventProbabilities, LatentDistribution};
pub use model::{Arm, Cause, Dose, ModelParams, PatientRecord, PriorConfig, Subgroup};
pub use sampler::{McmcConfig, PosteriorDraws};
pub use scenario::{ArmGenerator, ArmTarget, GeneratorFamily, ScenarioSpec};
pub use simulate::{GridValue, OperatingCharacteristics, SweepAxis};
pub use trial::{Design, TrialResult};
