//! Synthetic tasks and the scenario presets behind every dynamics study.
//!
//! Tasks are modular-sum problems with decidable correctness: a prompt is a
//! list of operand tokens, and a rollout is correct when it emits the answer
//! marker followed by the token for the operand sum mod `modulus` before
//! stopping. "Thinking patterns" are operationalized as disjoint reasoning
//! dialects; "scale" as context order; "new knowledge" as extra training
//! data covering prompt regions the student never saw.

mod fit;
mod presets;
mod reference;
mod task;

pub use fit::{fit_policy_mle, FitParams};
pub use presets::{
    cold_start_sft, make_scenario, measure_accuracy, truncate_and_continue, ColdStartReport, OutcomeTag,
    ScenarioKind, ScenarioParams, ScenarioPreset,
};
pub use reference::{build_reference_policy, LengthProfile, ReferenceParams};
pub use task::{
    generate_task, mix_prompts, PromptOrigin, PromptSampler, PromptSet, StyleDialect, SyntheticTask, TaskParams,
};

use crate::objectives::ObjectiveError;
use crate::policy::PolicyError;

#[derive(Debug, thiserror::Error)]
pub enum ScenarioError {
    #[error("vocabulary of size {vocab_size} cannot host {required} structured tokens")]
    AlphabetTooSmall { vocab_size: u32, required: u32 },
    #[error("invalid scenario parameters: {0}")]
    BadParams(String),
    #[error("accuracy calibration failed: target {target}, achieved {achieved} after {retries} retries")]
    CalibrationFailed { target: f64, achieved: f64, retries: usize },
    #[error("dataset is empty")]
    EmptyData,
    #[error("prompt set is empty")]
    EmptyPromptSet,
    #[error("mixing weight must lie in [0,1], got {0}")]
    LambdaOutOfRange(f64),
    #[error("prefix length {prefix} must be shorter than the rollout ({len} tokens)")]
    PrefixTooLong { prefix: usize, len: usize },
    #[error("cold start needs at least one teacher rollout")]
    DegenerateColdStart,
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Objective(#[from] ObjectiveError),
}
