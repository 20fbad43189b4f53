//! Experiment file parsing: strict TOML with all defaults materialized.

use serde::{Deserialize, Serialize};

use opdlab_core::objectives::{Aggregation, EstimatorMode, SupportRule};
use opdlab_core::scenarios::{make_scenario, ScenarioKind, ScenarioParams, ScenarioPreset};
use opdlab_core::trainer::TrainConfig;

use crate::CliError;

/// On-disk experiment document. Unknown keys anywhere are rejected.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentFile {
    pub seed: u64,
    pub scenario: ScenarioSection,
    pub train: TrainSection,
    pub outputs: OutputsSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ablate: Option<AblateSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub probes: Option<ProbesSection>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSection {
    pub kind: String,
    #[serde(default = "defaults::modulus")]
    pub modulus: usize,
    #[serde(default = "defaults::num_operands")]
    pub num_operands: usize,
    #[serde(default = "defaults::corpus_per_prompt")]
    pub corpus_per_prompt: usize,
    #[serde(default = "defaults::corpus_max_len")]
    pub corpus_max_len: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    #[serde(default = "defaults::rule")]
    pub rule: String,
    #[serde(default = "defaults::k")]
    pub k: usize,
    #[serde(default = "defaults::temperature")]
    pub temperature: f64,
    #[serde(default = "defaults::batch_prompts")]
    pub batch_prompts: usize,
    #[serde(default = "defaults::rollouts_per_prompt")]
    pub rollouts_per_prompt: usize,
    #[serde(default = "defaults::max_response_len")]
    pub max_response_len: usize,
    #[serde(default = "defaults::learning_rate")]
    pub learning_rate: f64,
    #[serde(default = "defaults::steps")]
    pub steps: usize,
    #[serde(default = "defaults::eval_interval")]
    pub eval_interval: usize,
    #[serde(default = "defaults::eval_samples_per_prompt")]
    pub eval_samples_per_prompt: usize,
    #[serde(default = "defaults::estimator_mode")]
    pub estimator_mode: String,
    #[serde(default = "defaults::aggregation")]
    pub aggregation: String,
    #[serde(default = "defaults::lambda")]
    pub lambda: f64,
    #[serde(default = "defaults::profile_bin_width")]
    pub profile_bin_width: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputsSection {
    pub dir: String,
    #[serde(default)]
    pub formats: Vec<String>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AblateSection {
    #[serde(default = "defaults::sweep_ks")]
    pub ks: Vec<usize>,
    #[serde(default = "defaults::include_sampled")]
    pub include_sampled: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbesSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reward_separation: Option<RewardProbeSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub depth: Option<DepthProbeSection>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RewardProbeSection {
    pub num_rollouts: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DepthProbeSection {
    pub depths: Vec<usize>,
    pub rollouts_per_depth: usize,
}

mod defaults {
    pub fn modulus() -> usize {
        5
    }
    pub fn num_operands() -> usize {
        2
    }
    pub fn corpus_per_prompt() -> usize {
        60
    }
    pub fn corpus_max_len() -> usize {
        40
    }
    pub fn rule() -> String {
        "student_topk".into()
    }
    pub fn k() -> usize {
        16
    }
    pub fn temperature() -> f64 {
        1.0
    }
    pub fn batch_prompts() -> usize {
        64
    }
    pub fn rollouts_per_prompt() -> usize {
        4
    }
    pub fn max_response_len() -> usize {
        32
    }
    pub fn learning_rate() -> f64 {
        0.5
    }
    pub fn steps() -> usize {
        200
    }
    pub fn eval_interval() -> usize {
        20
    }
    pub fn eval_samples_per_prompt() -> usize {
        16
    }
    pub fn estimator_mode() -> String {
        "fixed_token".into()
    }
    pub fn aggregation() -> String {
        "token_mean".into()
    }
    pub fn lambda() -> f64 {
        1.0
    }
    pub fn profile_bin_width() -> usize {
        4
    }
    pub fn sweep_ks() -> Vec<usize> {
        vec![1, 4, 16]
    }
    pub fn include_sampled() -> bool {
        true
    }
}

impl ExperimentFile {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(format!("experiment file: {e}")))
    }

    /// Echo with every default materialized, suitable for byte-stable
    /// round-tripping.
    pub fn echo_toml(&self) -> Result<String, CliError> {
        toml::to_string_pretty(self).map_err(|e| CliError::Config(format!("config echo: {e}")))
    }

    pub fn support_rule(&self) -> Result<SupportRule, CliError> {
        let k = self.train.k;
        Ok(match self.train.rule.as_str() {
            "full_vocab" => SupportRule::FullVocab,
            "sampled_token" => SupportRule::SampledToken,
            "student_topk" => SupportRule::StudentTopK(k),
            "overlap_topk" => SupportRule::OverlapTopK(k),
            "non_overlap_topk" => SupportRule::NonOverlapTopK(k),
            other => return Err(CliError::Config(format!("unknown support rule `{other}`"))),
        })
    }

    pub fn train_config(&self) -> Result<TrainConfig, CliError> {
        let estimator_mode = match self.train.estimator_mode.as_str() {
            "fixed_token" => EstimatorMode::FixedToken,
            "score_function" => EstimatorMode::ScoreFunction,
            other => return Err(CliError::Config(format!("unknown estimator mode `{other}`"))),
        };
        let aggregation = match self.train.aggregation.as_str() {
            "token_mean" => Aggregation::TokenMean,
            "trajectory_sum" => Aggregation::TrajectorySum,
            other => return Err(CliError::Config(format!("unknown aggregation `{other}`"))),
        };
        Ok(TrainConfig {
            rule: self.support_rule()?,
            k: self.train.k,
            temperature: self.train.temperature,
            batch_prompts: self.train.batch_prompts,
            rollouts_per_prompt: self.train.rollouts_per_prompt,
            max_response_len: self.train.max_response_len,
            learning_rate: self.train.learning_rate,
            steps: self.train.steps,
            eval_interval: self.train.eval_interval,
            eval_samples_per_prompt: self.train.eval_samples_per_prompt,
            estimator_mode,
            aggregation,
            lambda: self.train.lambda,
            profile_bin_width: self.train.profile_bin_width,
            master_seed: self.seed,
        })
    }

    pub fn build_preset(&self) -> Result<ScenarioPreset, CliError> {
        let kind = ScenarioKind::parse(&self.scenario.kind)
            .ok_or_else(|| CliError::Config(format!("unknown scenario kind `{}`", self.scenario.kind)))?;
        let params = ScenarioParams {
            seed: self.seed,
            modulus: self.scenario.modulus,
            num_operands: self.scenario.num_operands,
            corpus_per_prompt: self.scenario.corpus_per_prompt,
            corpus_max_len: self.scenario.corpus_max_len,
        };
        make_scenario(kind, &params).map_err(|e| CliError::Runtime(format!("scenario construction: {e}")))
    }
}
