//! Trajectory-level uncertainty for multi-step LLM decision processes.
//!
//! Each step contributes an intrinsic term (sampled entropy of the step's
//! decisions) and an extrinsic term accumulated from kernel-estimated
//! pointwise mutual information of earlier steps. The crate also carries the
//! baseline estimators, evaluation metrics, environments, an exactly
//! enumerable oracle process and the run orchestrator.

pub mod baselines;
pub mod error;
pub mod env;
pub mod estimators;
pub mod metrics;
pub mod model;
pub mod oracle;
pub mod orchestrator;
pub mod prompt;
pub mod reporting;
pub mod sampling;
pub mod synthetic;
pub mod textdist;

pub use error::{Error, Result};
pub use model::{Decision, GenConfig, StepRecord, TaskRecord, TdpRecord};
