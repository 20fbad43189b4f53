//! Desk-scale on-policy distillation over exactly computable tabular
//! softmax policies.
//!
//! The crate provides the full objective family (full-vocabulary, sampled
//! token, and renormalized top-k subset reverse KL with overlap and
//! non-overlap supports), exact analytic gradients, the dynamic diagnostics
//! tracked during distillation, synthetic tasks with decidable correctness,
//! scenario presets that reproduce the qualitative training-dynamics
//! phenomena, and a deterministic training loop.

pub mod diagnostics;
pub mod objectives;
pub mod policy;
pub mod rng;
pub mod scenarios;
pub mod trainer;
pub mod verify;

pub use diagnostics::{MetricsSnapshot, PositionProfile, Side};
pub use objectives::{Aggregation, EstimatorMode, LossBreakdown, PolicyGradient, SupportRule};
pub use policy::{Context, ProbabilityVector, Rollout, StepRecord, TabularSoftmaxPolicy, TokenId, Vocabulary};
pub use scenarios::{ScenarioKind, ScenarioParams, ScenarioPreset, SyntheticTask};
pub use trainer::{EvalRecord, RunLog, TrainConfig, TrainError};
