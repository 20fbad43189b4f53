//! The on-policy distillation training loop and the preset experiment
//! runners built on top of it.
//!
//! Every step samples a fresh batch of prompts, rolls out from the current
//! student, scores both models on the student-visited prefixes, takes one
//! gradient step on the configured objective, and records a full metrics
//! snapshot. Rollout generation and scoring parallelize across the batch;
//! every stochastic unit draws from its own derived RNG stream and all
//! reductions run in fixed index order, so a (config, master seed) pair maps
//! to a bit-identical run log at any parallelism level.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diagnostics::{
    self, DiagnosticsError, MetricsSnapshot, PositionProfile, Side,
};
use crate::objectives::{
    batch_loss, loss_gradient, select_support, sgd_step, Aggregation, EstimatorMode, ObjectiveError, SupportRule,
};
use crate::policy::{score_rollout, PolicyError, Rollout, TabularSoftmaxPolicy, TokenId};
use crate::rng::{derive_rng, STREAM_EVAL, STREAM_PROBE, STREAM_PROMPT, STREAM_ROLLOUT};
use crate::scenarios::{
    measure_accuracy, mix_prompts, PromptSampler, ScenarioError, ScenarioPreset, SyntheticTask,
};

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("non-finite loss or gradient at step {step}")]
    NonFinite { step: usize },
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Objective(#[from] ObjectiveError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Diagnostics(#[from] DiagnosticsError),
}

/// Hyperparameters of one training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub rule: SupportRule,
    /// Top-k size recorded at scoring time; drives the overlap diagnostics
    /// and must match the rule's k for top-k rules.
    pub k: usize,
    /// Sampling and scoring temperature for both policies.
    pub temperature: f64,
    pub batch_prompts: usize,
    pub rollouts_per_prompt: usize,
    pub max_response_len: usize,
    pub learning_rate: f64,
    pub steps: usize,
    pub eval_interval: usize,
    pub eval_samples_per_prompt: usize,
    pub estimator_mode: EstimatorMode,
    pub aggregation: Aggregation,
    /// Probability of drawing a teacher-aligned prompt when the preset has
    /// an out-of-distribution prompt set.
    pub lambda: f64,
    pub profile_bin_width: usize,
    pub master_seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            rule: SupportRule::StudentTopK(16),
            k: 16,
            temperature: 1.0,
            batch_prompts: 64,
            rollouts_per_prompt: 4,
            max_response_len: 32,
            learning_rate: 0.5,
            steps: 200,
            eval_interval: 20,
            eval_samples_per_prompt: 16,
            estimator_mode: EstimatorMode::FixedToken,
            aggregation: Aggregation::TokenMean,
            lambda: 1.0,
            profile_bin_width: 4,
            master_seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, vocab_size: u32) -> Result<(), TrainError> {
        let positive = [
            ("batch_prompts", self.batch_prompts),
            ("rollouts_per_prompt", self.rollouts_per_prompt),
            ("max_response_len", self.max_response_len),
            ("steps", self.steps),
            ("eval_interval", self.eval_interval),
            ("eval_samples_per_prompt", self.eval_samples_per_prompt),
            ("profile_bin_width", self.profile_bin_width),
        ];
        for (name, value) in positive {
            if value == 0 {
                return Err(TrainError::Config(format!("{name} must be positive")));
            }
        }
        if self.k == 0 || self.k > vocab_size as usize {
            return Err(TrainError::Config(format!(
                "k={} out of range for vocab of size {vocab_size}",
                self.k
            )));
        }
        if let Some(rule_k) = self.rule.k() {
            if rule_k != self.k {
                return Err(TrainError::Config(format!(
                    "rule k={rule_k} differs from scoring k={}",
                    self.k
                )));
            }
        }
        if self.temperature <= 0.0 || self.temperature.is_nan() {
            return Err(TrainError::Config("temperature must be positive".into()));
        }
        if self.learning_rate <= 0.0 || self.learning_rate.is_nan() {
            return Err(TrainError::Config("learning rate must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(TrainError::Config("lambda must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

/// Accuracy measurement at one evaluation point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub step: usize,
    pub accuracy: f64,
    /// Fraction of the teacher-student gap closed so far; null when the
    /// teacher and starting accuracies coincide.
    pub gap_recovery_rate: Option<f64>,
}

/// Everything one training run produced.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunLog {
    pub config: TrainConfig,
    pub scenario: String,
    pub teacher_accuracy: f64,
    pub snapshots: Vec<MetricsSnapshot>,
    pub evals: Vec<EvalRecord>,
    pub profiles: Vec<(usize, PositionProfile)>,
    pub initial_policy: TabularSoftmaxPolicy,
    pub final_policy: TabularSoftmaxPolicy,
}

impl RunLog {
    pub fn final_accuracy(&self) -> f64 {
        self.evals.last().map(|e| e.accuracy).unwrap_or(0.0)
    }

    pub fn initial_accuracy(&self) -> f64 {
        self.evals.first().map(|e| e.accuracy).unwrap_or(0.0)
    }

    /// Moving average of a per-step metric over a trailing window.
    pub fn moving_average(&self, window: usize, metric: impl Fn(&MetricsSnapshot) -> f64) -> Vec<f64> {
        let values: Vec<f64> = self.snapshots.iter().map(metric).collect();
        values
            .iter()
            .enumerate()
            .map(|(i, _)| {
                let lo = i.saturating_sub(window - 1);
                let slice = &values[lo..=i];
                slice.iter().sum::<f64>() / slice.len() as f64
            })
            .collect()
    }
}

/// avg@k evaluation: mean over prompts of the fraction of correct samples.
pub fn evaluate(
    policy: &TabularSoftmaxPolicy,
    task: &SyntheticTask,
    prompts: &[Vec<TokenId>],
    samples_per_prompt: usize,
    max_len: usize,
    master_seed: u64,
    salt: u64,
) -> Result<f64, TrainError> {
    if prompts.is_empty() {
        return Err(TrainError::Config("evaluation prompt set is empty".into()));
    }
    if samples_per_prompt == 0 {
        return Err(TrainError::Config("samples_per_prompt must be positive".into()));
    }
    Ok(measure_accuracy(
        policy,
        task,
        prompts,
        samples_per_prompt,
        max_len,
        master_seed ^ (STREAM_EVAL << 56) ^ salt,
    ))
}

fn build_sampler(preset: &ScenarioPreset, lambda: f64) -> Result<PromptSampler, TrainError> {
    if preset.ood_prompts.is_empty() || lambda >= 1.0 {
        if lambda < 1.0 && preset.ood_prompts.is_empty() {
            return Err(TrainError::Config(
                "lambda < 1 requires an out-of-distribution prompt set".into(),
            ));
        }
        return Ok(PromptSampler::Single(preset.aligned_prompts.clone()));
    }
    if lambda <= 0.0 {
        return Ok(PromptSampler::Single(preset.ood_prompts.clone()));
    }
    Ok(mix_prompts(preset.aligned_prompts.clone(), preset.ood_prompts.clone(), lambda)?)
}

fn count_skipped(rollouts: &[Rollout], rule: SupportRule) -> Result<usize, TrainError> {
    if rule.k().is_none() {
        return Ok(0);
    }
    let mut skipped = 0usize;
    for rollout in rollouts {
        for step in rollout.scored_steps()? {
            if select_support(step, rule)?.is_empty() {
                skipped += 1;
            }
        }
    }
    Ok(skipped)
}

fn snapshot_from_batch(
    step: usize,
    rollouts: &[Rollout],
    rule: SupportRule,
    loss: f64,
    grad_norm: f64,
) -> Result<MetricsSnapshot, TrainError> {
    let mut pooled = Vec::new();
    for rollout in rollouts {
        pooled.extend(rollout.scored_steps()?.iter());
    }
    let overlap_ratio = diagnostics::overlap_ratio(&pooled)?;
    let overlap_advantage = match diagnostics::overlap_token_advantage(&pooled) {
        Ok(v) => Some(v),
        Err(DiagnosticsError::Undefined(_)) => None,
        Err(e) => return Err(e.into()),
    };
    let extreme_adv_prob_diff = match diagnostics::extreme_advantage_prob_diff(&pooled) {
        Ok(v) => Some(v),
        Err(DiagnosticsError::Undefined(_)) => None,
        Err(e) => return Err(e.into()),
    };
    let n = pooled.len() as f64;
    let mut entropy_student = 0.0;
    let mut entropy_teacher = 0.0;
    let mut entropy_gap = 0.0;
    for s in &pooled {
        let hs = diagnostics::entropy(&s.student_dist);
        let ht = diagnostics::entropy(&s.teacher_dist);
        entropy_student += hs;
        entropy_teacher += ht;
        entropy_gap += (ht - hs).abs();
    }
    Ok(MetricsSnapshot {
        step,
        overlap_ratio,
        overlap_advantage,
        entropy_student: entropy_student / n,
        entropy_teacher: entropy_teacher / n,
        entropy_gap: entropy_gap / n,
        overlap_mass_student: diagnostics::overlap_mass(&pooled, Side::Student)?,
        overlap_mass_teacher: diagnostics::overlap_mass(&pooled, Side::Teacher)?,
        loss,
        grad_norm,
        extreme_adv_prob_diff,
        skipped_steps: count_skipped(rollouts, rule)?,
    })
}

/// Samples and scores one on-policy batch; deterministic at any parallelism.
fn sample_batch(
    student: &TabularSoftmaxPolicy,
    teacher: &TabularSoftmaxPolicy,
    sampler: &PromptSampler,
    cfg: &TrainConfig,
    step: usize,
) -> Result<Vec<Rollout>, TrainError> {
    let prompts: Vec<Vec<TokenId>> = (0..cfg.batch_prompts)
        .map(|slot| {
            let mut rng = derive_rng(cfg.master_seed, &[STREAM_PROMPT, step as u64, slot as u64]);
            sampler.draw(&mut rng).to_vec()
        })
        .collect();
    let units: Vec<(usize, usize)> = (0..cfg.batch_prompts)
        .flat_map(|p| (0..cfg.rollouts_per_prompt).map(move |r| (p, r)))
        .collect();
    units
        .into_par_iter()
        .map(|(p_idx, r_idx)| {
            let mut rng = derive_rng(
                cfg.master_seed,
                &[STREAM_ROLLOUT, step as u64, p_idx as u64, r_idx as u64],
            );
            let rollout = student.sample_rollout(&prompts[p_idx], cfg.max_response_len, &mut rng)?;
            Ok(score_rollout(student, teacher, &rollout, cfg.k)?)
        })
        .collect::<Result<Vec<_>, TrainError>>()
}

/// Runs on-policy distillation on a scenario preset.
pub fn opd_train(preset: &ScenarioPreset, cfg: &TrainConfig) -> Result<RunLog, TrainError> {
    cfg.validate(preset.task.vocab().size())?;
    let sampler = build_sampler(preset, cfg.lambda)?;

    let mut student = preset.student.clone();
    student.set_temperature(cfg.temperature);
    let mut teacher = preset.teacher.clone();
    teacher.set_temperature(cfg.temperature);
    let initial_policy = student.clone();

    let eval = |policy: &TabularSoftmaxPolicy, salt: u64| -> Result<f64, TrainError> {
        evaluate(
            policy,
            &preset.task,
            &preset.eval_prompts,
            cfg.eval_samples_per_prompt,
            cfg.max_response_len,
            cfg.master_seed,
            salt,
        )
    };

    let teacher_accuracy = eval(&teacher, 0x7EAC_4E12)?;
    let initial_accuracy = eval(&student, 0)?;
    let mut evals = vec![EvalRecord {
        step: 0,
        accuracy: initial_accuracy,
        gap_recovery_rate: gap_recovery(initial_accuracy, initial_accuracy, teacher_accuracy),
    }];
    let mut snapshots = Vec::with_capacity(cfg.steps);
    let mut profiles = Vec::new();

    for step in 0..cfg.steps {
        let batch = sample_batch(&student, &teacher, &sampler, cfg, step)?;
        let loss = batch_loss(&batch, cfg.rule, cfg.aggregation)?;
        let gradient = loss_gradient(&student, &batch, cfg.rule, cfg.estimator_mode, cfg.aggregation)?;
        let grad_norm = gradient.norm();
        if !loss.is_finite() || !grad_norm.is_finite() {
            return Err(TrainError::NonFinite { step });
        }
        snapshots.push(snapshot_from_batch(step, &batch, cfg.rule, loss, grad_norm)?);
        sgd_step(&mut student, &gradient, cfg.learning_rate)?;

        let boundary = step + 1;
        if boundary % cfg.eval_interval == 0 || boundary == cfg.steps {
            let accuracy = eval(&student, boundary as u64)?;
            evals.push(EvalRecord {
                step: boundary,
                accuracy,
                gap_recovery_rate: gap_recovery(initial_accuracy, accuracy, teacher_accuracy),
            });
            profiles.push((boundary, diagnostics::entropy_by_position(&batch, cfg.profile_bin_width)?));
        }
    }

    Ok(RunLog {
        config: cfg.clone(),
        scenario: preset.name.clone(),
        teacher_accuracy,
        snapshots,
        evals,
        profiles,
        initial_policy,
        final_policy: student,
    })
}

fn gap_recovery(before: f64, after: f64, teacher: f64) -> Option<f64> {
    diagnostics::gap_recovery_rate(before, after, teacher).ok()
}

/// Three runs differing only in the support rule, seeds shared.
pub fn run_support_ablation(
    preset: &ScenarioPreset,
    base: &TrainConfig,
) -> Result<Vec<(SupportRule, RunLog)>, TrainError> {
    let rules = [
        SupportRule::StudentTopK(base.k),
        SupportRule::OverlapTopK(base.k),
        SupportRule::NonOverlapTopK(base.k),
    ];
    let mut logs = Vec::with_capacity(rules.len());
    for rule in rules {
        let cfg = TrainConfig { rule, ..base.clone() };
        logs.push((rule, opd_train(preset, &cfg)?));
    }
    Ok(logs)
}

/// One run per support size plus a sampled-token run, seeds shared.
pub fn run_k_sweep(
    preset: &ScenarioPreset,
    base: &TrainConfig,
    ks: &[usize],
) -> Result<Vec<(String, RunLog)>, TrainError> {
    let mut logs = Vec::with_capacity(ks.len() + 1);
    for &k in ks {
        let cfg = TrainConfig { rule: SupportRule::StudentTopK(k), k, ..base.clone() };
        logs.push((format!("top{k}"), opd_train(preset, &cfg)?));
    }
    let sampled = TrainConfig { rule: SupportRule::SampledToken, ..base.clone() };
    logs.push(("sampled".into(), opd_train(preset, &sampled)?));
    Ok(logs)
}

/// Reward histogram for one correctness class.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RewardHistogram {
    pub lo: f64,
    pub hi: f64,
    pub bin_count: usize,
    pub correct: Vec<usize>,
    pub incorrect: Vec<usize>,
}

/// Sequence-mean-reward separation between correct and incorrect rollouts.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RewardSeparation {
    /// Mann-Whitney AUROC of reward against correctness; null when all
    /// rollouts fall in one class.
    pub auroc: Option<f64>,
    pub rewards: Vec<(f64, bool)>,
    pub histogram: RewardHistogram,
}

/// Scores `num_rollouts` student rollouts and measures how well the
/// sequence mean reward separates correct from incorrect ones.
pub fn run_reward_separation(
    preset: &ScenarioPreset,
    cfg: &TrainConfig,
    num_rollouts: usize,
) -> Result<RewardSeparation, TrainError> {
    if num_rollouts == 0 {
        return Err(TrainError::Config("num_rollouts must be positive".into()));
    }
    let mut student = preset.student.clone();
    student.set_temperature(cfg.temperature);
    let mut teacher = preset.teacher.clone();
    teacher.set_temperature(cfg.temperature);
    let prompts = &preset.eval_prompts;
    let rewards: Vec<(f64, bool)> = (0..num_rollouts)
        .into_par_iter()
        .map(|i| {
            let prompt = &prompts[i % prompts.len()];
            let mut rng = derive_rng(cfg.master_seed, &[STREAM_PROBE, 0x4E, i as u64]);
            let rollout = student.sample_rollout(prompt, cfg.max_response_len, &mut rng)?;
            let scored = score_rollout(&student, &teacher, &rollout, cfg.k)?;
            let reward = diagnostics::sequence_mean_reward(&scored)?;
            let correct = preset.task.label_correctness(&scored);
            Ok((reward, correct))
        })
        .collect::<Result<Vec<_>, TrainError>>()?;

    let scores: Vec<f64> = rewards.iter().map(|(r, _)| *r).collect();
    let labels: Vec<bool> = rewards.iter().map(|(_, c)| *c).collect();
    let auroc = match diagnostics::auroc(&scores, &labels) {
        Ok(v) => Some(v),
        Err(DiagnosticsError::Undefined(_)) => None,
        Err(e) => return Err(e.into()),
    };

    let lo = scores.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let bin_count = 24;
    let width = ((hi - lo) / bin_count as f64).max(f64::MIN_POSITIVE);
    let mut correct = vec![0usize; bin_count];
    let mut incorrect = vec![0usize; bin_count];
    for (r, label) in &rewards {
        let bin = (((r - lo) / width) as usize).min(bin_count - 1);
        if *label {
            correct[bin] += 1;
        } else {
            incorrect[bin] += 1;
        }
    }
    Ok(RewardSeparation {
        auroc,
        rewards,
        histogram: RewardHistogram { lo, hi, bin_count, correct, incorrect },
    })
}

/// Continuation accuracies at one truncation depth.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DepthGain {
    pub depth: usize,
    pub teacher_accuracy: f64,
    pub student_accuracy: f64,
    pub gain: f64,
    /// Base rollouts long enough to truncate at this depth.
    pub used: usize,
    pub skipped: usize,
}

/// Output of the truncate-and-continue probe.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DepthProbe {
    pub gains: Vec<DepthGain>,
    pub profile: PositionProfile,
}

/// For each prefix depth, compares teacher- and student-continued accuracy
/// over matched student-generated prefixes, and reports the entropy-by-
/// position profile of the base rollouts.
pub fn run_depth_probe(
    preset: &ScenarioPreset,
    cfg: &TrainConfig,
    depths: &[usize],
    rollouts_per_depth: usize,
) -> Result<DepthProbe, TrainError> {
    if depths.is_empty() || rollouts_per_depth == 0 {
        return Err(TrainError::Config("depth probe needs depths and rollouts".into()));
    }
    if depths.windows(2).any(|w| w[0] >= w[1]) {
        return Err(TrainError::Config("depths must be strictly increasing".into()));
    }
    let mut student = preset.student.clone();
    student.set_temperature(cfg.temperature);
    let mut teacher = preset.teacher.clone();
    teacher.set_temperature(cfg.temperature);
    let prompts = &preset.eval_prompts;

    let base: Vec<Rollout> = (0..rollouts_per_depth)
        .into_par_iter()
        .map(|i| {
            let prompt = &prompts[i % prompts.len()];
            let mut rng = derive_rng(cfg.master_seed, &[STREAM_PROBE, 0xD0, i as u64]);
            let rollout = student.sample_rollout(prompt, cfg.max_response_len, &mut rng)?;
            Ok(score_rollout(&student, &teacher, &rollout, cfg.k)?)
        })
        .collect::<Result<Vec<_>, TrainError>>()?;

    let mut gains = Vec::with_capacity(depths.len());
    for (d_idx, &depth) in depths.iter().enumerate() {
        let outcomes: Vec<Option<(bool, bool)>> = base
            .par_iter()
            .enumerate()
            .map(|(i, rollout)| {
                if rollout.len() <= depth {
                    return Ok(None);
                }
                let mut teacher_rng = derive_rng(cfg.master_seed, &[STREAM_PROBE, 0xD1, d_idx as u64, i as u64]);
                let teacher_cont = crate::scenarios::truncate_and_continue(
                    rollout,
                    depth,
                    &teacher,
                    cfg.max_response_len,
                    &mut teacher_rng,
                )?;
                let mut student_rng = derive_rng(cfg.master_seed, &[STREAM_PROBE, 0xD2, d_idx as u64, i as u64]);
                let student_cont = crate::scenarios::truncate_and_continue(
                    rollout,
                    depth,
                    &student,
                    cfg.max_response_len,
                    &mut student_rng,
                )?;
                Ok(Some((
                    preset.task.label_correctness(&teacher_cont),
                    preset.task.label_correctness(&student_cont),
                )))
            })
            .collect::<Result<Vec<_>, TrainError>>()?;
        let used = outcomes.iter().flatten().count();
        let skipped = outcomes.len() - used;
        let teacher_correct = outcomes.iter().flatten().filter(|(t, _)| *t).count();
        let student_correct = outcomes.iter().flatten().filter(|(_, s)| *s).count();
        let teacher_accuracy = if used > 0 { teacher_correct as f64 / used as f64 } else { 0.0 };
        let student_accuracy = if used > 0 { student_correct as f64 / used as f64 } else { 0.0 };
        gains.push(DepthGain {
            depth,
            teacher_accuracy,
            student_accuracy,
            gain: teacher_accuracy - student_accuracy,
            used,
            skipped,
        });
    }

    let profile = diagnostics::entropy_by_position(&base, cfg.profile_bin_width)?;
    Ok(DepthProbe { gains, profile })
}
