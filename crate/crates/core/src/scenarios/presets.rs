//! Scenario presets realizing the phenomenological conditions, plus the
//! recipe interventions (cold-start SFT, prompt mixing) and depth probes.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::fit::{fit_policy_mle, FitParams};
use super::reference::{build_reference_policy, LengthProfile, ReferenceParams};
use super::task::{generate_task, PromptOrigin, PromptSet, SyntheticTask, TaskParams};
use super::ScenarioError;
use crate::objectives::{sft_loss_and_gradient, sgd_step};
use crate::policy::{Rollout, TabularSoftmaxPolicy, TokenId};
use crate::rng::{derive_rng, STREAM_SCENARIO};

/// The six study configurations.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    /// Same reasoning dialect, solution-rich teacher: distillation works.
    PatternMatch,
    /// Disjoint dialects, stronger teacher: distillation stalls.
    PatternMismatch,
    /// Teacher is a higher-order fit of the student's own corpus.
    SamePipeline,
    /// Teacher additionally fitted on prompt regions the student never saw.
    NewKnowledge,
    /// Teacher is the student's own weaker pre-training checkpoint.
    ReverseDistill,
    /// Teacher fitted only on short reasoning spans; rollouts run long.
    DepthDrift,
}

impl ScenarioKind {
    pub fn parse(name: &str) -> Option<Self> {
        Some(match name {
            "pattern_match" => Self::PatternMatch,
            "pattern_mismatch" => Self::PatternMismatch,
            "same_pipeline" => Self::SamePipeline,
            "new_knowledge" => Self::NewKnowledge,
            "reverse_distill" => Self::ReverseDistill,
            "depth_drift" => Self::DepthDrift,
            _ => return None,
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::PatternMatch => "pattern_match",
            Self::PatternMismatch => "pattern_mismatch",
            Self::SamePipeline => "same_pipeline",
            Self::NewKnowledge => "new_knowledge",
            Self::ReverseDistill => "reverse_distill",
            Self::DepthDrift => "depth_drift",
        }
    }
}

/// Qualitative outcome the preset is built to produce.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutcomeTag {
    Improve,
    Stagnate,
    Regress,
}

/// Construction knobs; the defaults reproduce the documented presets.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ScenarioParams {
    pub seed: u64,
    pub modulus: usize,
    pub num_operands: usize,
    /// Corpus rollouts generated per prompt per source process.
    pub corpus_per_prompt: usize,
    /// Length cap for corpus rollouts.
    pub corpus_max_len: usize,
}

impl Default for ScenarioParams {
    fn default() -> Self {
        Self {
            seed: 0,
            modulus: 5,
            num_operands: 2,
            corpus_per_prompt: 60,
            corpus_max_len: 40,
        }
    }
}

/// A fully constructed student/teacher pair with its prompt regions.
#[derive(Clone, Debug)]
pub struct ScenarioPreset {
    pub name: String,
    pub kind: ScenarioKind,
    pub task: SyntheticTask,
    pub student: TabularSoftmaxPolicy,
    pub teacher: TabularSoftmaxPolicy,
    /// Prompts inside the teacher's training distribution.
    pub aligned_prompts: PromptSet,
    /// Prompts outside it; empty when the teacher saw the whole space.
    pub ood_prompts: PromptSet,
    pub eval_prompts: Vec<Vec<TokenId>>,
    pub expected_outcome: OutcomeTag,
}

/// Mean-over-prompts fraction of correct rollouts; the avg@k evaluation.
/// Parallel over rollouts, deterministic under the derived-stream scheme.
pub fn measure_accuracy(
    policy: &TabularSoftmaxPolicy,
    task: &SyntheticTask,
    prompts: &[Vec<TokenId>],
    samples_per_prompt: usize,
    max_len: usize,
    master_seed: u64,
) -> f64 {
    if prompts.is_empty() || samples_per_prompt == 0 {
        return 0.0;
    }
    let per_prompt: Vec<f64> = prompts
        .par_iter()
        .enumerate()
        .map(|(p_idx, prompt)| {
            let correct = (0..samples_per_prompt)
                .filter(|&s_idx| {
                    let mut rng = derive_rng(master_seed, &[STREAM_SCENARIO, p_idx as u64, s_idx as u64]);
                    let rollout = policy
                        .sample_rollout(prompt, max_len, &mut rng)
                        .expect("max_len >= 1");
                    task.label_correctness(&rollout)
                })
                .count();
            correct as f64 / samples_per_prompt as f64
        })
        .collect();
    per_prompt.iter().sum::<f64>() / prompts.len() as f64
}

/// Samples a corpus of (prompt, sequence) pairs from a generating process.
fn generate_corpus(
    source: &TabularSoftmaxPolicy,
    prompts: &[Vec<TokenId>],
    per_prompt: usize,
    max_len: usize,
    master_seed: u64,
) -> Vec<(Vec<TokenId>, Vec<TokenId>)> {
    let mut corpus = Vec::with_capacity(prompts.len() * per_prompt);
    for (p_idx, prompt) in prompts.iter().enumerate() {
        for s_idx in 0..per_prompt {
            let mut rng = derive_rng(master_seed, &[STREAM_SCENARIO, 0xC0, p_idx as u64, s_idx as u64]);
            let rollout = source.sample_rollout(prompt, max_len, &mut rng).expect("max_len >= 1");
            corpus.push((prompt.clone(), rollout.generated));
        }
    }
    corpus
}

fn split_regions(task: &SyntheticTask, seed: u64) -> (Vec<Vec<TokenId>>, Vec<Vec<TokenId>>) {
    let mut prompts = task.all_prompts();
    let mut rng = derive_rng(seed, &[STREAM_SCENARIO, 0x5B17]);
    // Fisher-Yates with the derived stream.
    for i in (1..prompts.len()).rev() {
        let j = rand::Rng::random_range(&mut rng, 0..=i);
        prompts.swap(i, j);
    }
    let cut = prompts.len().div_ceil(2);
    let aligned = prompts[..cut].to_vec();
    let ood = prompts[cut..].to_vec();
    (aligned, ood)
}

/// Builds a named preset. `(seed, kind)` fully determines the result.
pub fn make_scenario(kind: ScenarioKind, params: &ScenarioParams) -> Result<ScenarioPreset, ScenarioError> {
    let seed = params.seed;
    // Variety 3 keeps k=4 top sets structural (three same-class carriers
    // plus the marker) instead of letting tie-noise occupy the last slot.
    let variety = 3;
    let base_task_params = |num_styles: usize, phases: usize| TaskParams {
        seed,
        vocab_size: (3 + 2 * params.modulus + num_styles * phases * params.modulus * variety) as u32,
        num_operands: params.num_operands,
        modulus: params.modulus,
        num_styles,
        phases,
        variety,
    };
    let clean = |style: usize, task_seed: u64| ReferenceParams {
        style,
        accuracy_target: 0.97,
        length: LengthProfile::geometric(5.0),
        value_scramble: 0.0,
        first_value_scramble: None,
        seed: task_seed,
    };
    let noisy = |style: usize, task_seed: u64| ReferenceParams {
        style,
        accuracy_target: 0.30,
        length: LengthProfile::geometric(5.0),
        value_scramble: 0.12,
        first_value_scramble: None,
        seed: task_seed,
    };

    let preset = match kind {
        ScenarioKind::PatternMatch | ScenarioKind::PatternMismatch => {
            let task = generate_task(&base_task_params(2, 2))?;
            let (aligned, ood) = split_regions(&task, seed);
            let teacher_style = if kind == ScenarioKind::PatternMatch { 0 } else { 1 };
            // The teacher sees mild value scrambling so its table covers the
            // noisy student's whole state space with structural rows; a
            // perfectly clean teacher would back off to the unigram on the
            // value-incoherent prefixes the student actually visits.
            let teacher_ref = build_reference_policy(
                &task,
                &ReferenceParams {
                    style: teacher_style,
                    accuracy_target: 0.5,
                    length: LengthProfile::geometric(5.0),
                    value_scramble: 0.12,
                    first_value_scramble: None,
                    seed: seed ^ 0xA1,
                },
            )?;
            // Value propagation near chance level: the student's top-k sets
            // start wrong at most states but stay rotatable toward the
            // teacher's structural tokens during distillation.
            let noisy_ref = build_reference_policy(
                &task,
                &ReferenceParams {
                    style: 0,
                    accuracy_target: 0.2,
                    length: LengthProfile::geometric(5.0),
                    value_scramble: 0.8,
                    first_value_scramble: None,
                    seed: seed ^ 0xA2,
                },
            )?;
            let teacher_corpus = generate_corpus(&teacher_ref, &aligned, params.corpus_per_prompt * 2, params.corpus_max_len, seed ^ 0xB1);
            let student_corpus = generate_corpus(&noisy_ref, &aligned, params.corpus_per_prompt, params.corpus_max_len, seed ^ 0xB2);
            let teacher = fit_policy_mle(&teacher_corpus, task.vocab(), &FitParams::new(2, 0.002, seed ^ 0xC1))?;
            let student = fit_policy_mle(&student_corpus, task.vocab(), &FitParams::new(2, 0.02, seed ^ 0xC2))?;
            ScenarioPreset {
                name: kind.name().into(),
                kind,
                eval_prompts: aligned.clone(),
                aligned_prompts: PromptSet::new(aligned, PromptOrigin::TeacherAligned),
                ood_prompts: PromptSet::new(ood, PromptOrigin::OutOfDistribution),
                expected_outcome: if kind == ScenarioKind::PatternMatch {
                    OutcomeTag::Improve
                } else {
                    OutcomeTag::Stagnate
                },
                task,
                student,
                teacher,
            }
        }
        ScenarioKind::SamePipeline => {
            let task = generate_task(&base_task_params(2, 2))?;
            let (aligned, ood) = split_regions(&task, seed);
            let source = build_reference_policy(
                &task,
                &ReferenceParams {
                    style: 0,
                    accuracy_target: 0.85,
                    length: LengthProfile::geometric(7.0),
                    value_scramble: 0.02,
                    first_value_scramble: None,
                    seed: seed ^ 0xA3,
                },
            )?;
            let corpus = generate_corpus(&source, &aligned, params.corpus_per_prompt, params.corpus_max_len, seed ^ 0xB3);
            // Same corpus, same recipe, different scale: scale is context order.
            let student = fit_policy_mle(&corpus, task.vocab(), &FitParams::new(1, 0.002, seed ^ 0xC3))?;
            let teacher = fit_policy_mle(&corpus, task.vocab(), &FitParams::new(2, 0.002, seed ^ 0xC4))?;
            ScenarioPreset {
                name: kind.name().into(),
                kind,
                eval_prompts: aligned.clone(),
                aligned_prompts: PromptSet::new(aligned, PromptOrigin::TeacherAligned),
                ood_prompts: PromptSet::new(ood, PromptOrigin::OutOfDistribution),
                expected_outcome: OutcomeTag::Stagnate,
                task,
                student,
                teacher,
            }
        }
        ScenarioKind::NewKnowledge => {
            let task = generate_task(&base_task_params(2, 2))?;
            let (region_seen, region_new) = split_regions(&task, seed);
            let source = build_reference_policy(&task, &clean(0, seed ^ 0xA4))?;
            let corpus_seen = generate_corpus(&source, &region_seen, params.corpus_per_prompt, params.corpus_max_len, seed ^ 0xB4);
            let corpus_new = generate_corpus(&source, &region_new, params.corpus_per_prompt, params.corpus_max_len, seed ^ 0xB5);
            let student = fit_policy_mle(&corpus_seen, task.vocab(), &FitParams::new(2, 0.002, seed ^ 0xC5))?;
            let mut full_corpus = corpus_seen;
            full_corpus.extend(corpus_new);
            let teacher = fit_policy_mle(&full_corpus, task.vocab(), &FitParams::new(2, 0.002, seed ^ 0xC6))?;
            let all = task.all_prompts();
            ScenarioPreset {
                name: kind.name().into(),
                kind,
                eval_prompts: all.clone(),
                aligned_prompts: PromptSet::new(all, PromptOrigin::TeacherAligned),
                ood_prompts: PromptSet::new(vec![], PromptOrigin::OutOfDistribution),
                expected_outcome: OutcomeTag::Improve,
                task,
                student,
                teacher,
            }
        }
        ScenarioKind::ReverseDistill => {
            let task = generate_task(&base_task_params(2, 2))?;
            let (aligned, ood) = split_regions(&task, seed);
            let weak_ref = build_reference_policy(&task, &noisy(0, seed ^ 0xA5))?;
            let strong_ref = build_reference_policy(&task, &clean(0, seed ^ 0xA6))?;
            let weak_corpus = generate_corpus(&weak_ref, &aligned, params.corpus_per_prompt, params.corpus_max_len, seed ^ 0xB6);
            let extra_corpus = generate_corpus(&strong_ref, &aligned, params.corpus_per_prompt * 3, params.corpus_max_len, seed ^ 0xB7);
            // Teacher is the checkpoint; the student is that checkpoint
            // trained further (count-additive MLE on the extra data).
            let teacher = fit_policy_mle(&weak_corpus, task.vocab(), &FitParams::new(2, 0.002, seed ^ 0xC7))?;
            let mut student_corpus = weak_corpus;
            student_corpus.extend(extra_corpus);
            let student = fit_policy_mle(&student_corpus, task.vocab(), &FitParams::new(2, 0.002, seed ^ 0xC8))?;
            ScenarioPreset {
                name: kind.name().into(),
                kind,
                eval_prompts: aligned.clone(),
                aligned_prompts: PromptSet::new(aligned, PromptOrigin::TeacherAligned),
                ood_prompts: PromptSet::new(ood, PromptOrigin::OutOfDistribution),
                expected_outcome: OutcomeTag::Regress,
                task,
                student,
                teacher,
            }
        }
        ScenarioKind::DepthDrift => {
            let task = generate_task(&base_task_params(1, 10))?;
            let all = task.all_prompts();
            // Geometric span lengths give the teacher smoothly thinning
            // coverage of deep phases, so continuation quality decays
            // gradually with prefix depth instead of falling off a cliff.
            // The hard span cap keeps phases beyond it entirely out of the
            // teacher's corpus: deep student prefixes are off-manifold, so
            // the fitted teacher backs off to its flat unigram row there.
            let short_ref = build_reference_policy(
                &task,
                &ReferenceParams {
                    style: 0,
                    accuracy_target: 0.97,
                    length: LengthProfile::capped(5.5, 8),
                    value_scramble: 0.0,
                    first_value_scramble: None,
                    seed: seed ^ 0xA7,
                },
            )?;
            let long_ref = build_reference_policy(
                &task,
                &ReferenceParams {
                    style: 0,
                    accuracy_target: 0.4,
                    length: LengthProfile::geometric(15.0),
                    value_scramble: 0.05,
                    first_value_scramble: None,
                    seed: seed ^ 0xA8,
                },
            )?;
            let teacher_corpus = generate_corpus(&short_ref, &all, params.corpus_per_prompt, params.corpus_max_len, seed ^ 0xB8);
            let student_corpus = generate_corpus(&long_ref, &all, params.corpus_per_prompt, params.corpus_max_len, seed ^ 0xB9);
            let teacher = fit_policy_mle(&teacher_corpus, task.vocab(), &FitParams::new(2, 0.002, seed ^ 0xC9))?;
            let student = fit_policy_mle(&student_corpus, task.vocab(), &FitParams::new(2, 0.002, seed ^ 0xCA))?;
            ScenarioPreset {
                name: kind.name().into(),
                kind,
                eval_prompts: all.clone(),
                aligned_prompts: PromptSet::new(all, PromptOrigin::TeacherAligned),
                ood_prompts: PromptSet::new(vec![], PromptOrigin::OutOfDistribution),
                expected_outcome: OutcomeTag::Stagnate,
                task,
                student,
                teacher,
            }
        }
    };
    Ok(preset)
}

/// Log-likelihood change from cold-start SFT, in nats per token.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct ColdStartReport {
    pub ll_before: f64,
    pub ll_after: f64,
}

/// Off-policy cold start: SFT the student on teacher-generated rollouts.
///
/// Returns the updated student and the held-out log-likelihood change.
#[allow(clippy::too_many_arguments)]
pub fn cold_start_sft(
    student: &TabularSoftmaxPolicy,
    teacher: &TabularSoftmaxPolicy,
    prompts: &PromptSet,
    num_rollouts: usize,
    sft_steps: usize,
    learning_rate: f64,
    max_len: usize,
    master_seed: u64,
) -> Result<(TabularSoftmaxPolicy, ColdStartReport), ScenarioError> {
    if num_rollouts == 0 || prompts.is_empty() {
        return Err(ScenarioError::DegenerateColdStart);
    }
    let heldout_count = num_rollouts.div_ceil(4).max(1);
    let mut train_data = Vec::with_capacity(num_rollouts);
    let mut heldout = Vec::with_capacity(heldout_count);
    for i in 0..num_rollouts + heldout_count {
        let prompt = &prompts.prompts[i % prompts.len()];
        let mut rng = derive_rng(master_seed, &[STREAM_SCENARIO, 0x5F7, i as u64]);
        let rollout = teacher.sample_rollout(prompt, max_len, &mut rng)?;
        if i < num_rollouts {
            train_data.push((prompt.clone(), rollout.generated));
        } else {
            heldout.push((prompt.clone(), rollout.generated));
        }
    }

    let mean_ll = |policy: &TabularSoftmaxPolicy| -> Result<f64, ScenarioError> {
        let (nll, _) = sft_loss_and_gradient(policy, &heldout)?;
        Ok(-nll)
    };

    let mut updated = student.clone();
    let ll_before = mean_ll(&updated)?;
    for _ in 0..sft_steps {
        let (_, grad) = sft_loss_and_gradient(&updated, &train_data)?;
        sgd_step(&mut updated, &grad, learning_rate)?;
    }
    let ll_after = mean_ll(&updated)?;
    Ok((updated, ColdStartReport { ll_before, ll_after }))
}

/// Copies the first `prefix_len` generated tokens and resamples the
/// remainder from `continuer`, up to `max_len` total generated tokens.
pub fn truncate_and_continue(
    rollout: &Rollout,
    prefix_len: usize,
    continuer: &TabularSoftmaxPolicy,
    max_len: usize,
    rng: &mut rand_chacha::ChaCha8Rng,
) -> Result<Rollout, ScenarioError> {
    if prefix_len >= rollout.len() {
        return Err(ScenarioError::PrefixTooLong { prefix: prefix_len, len: rollout.len() });
    }
    let stop = continuer.vocab().stop();
    let pad = continuer.vocab().pad();
    let mut generated: Vec<TokenId> = rollout.generated[..prefix_len].to_vec();
    let mut terminated = false;
    while generated.len() < max_len {
        let t = generated.len();
        let ctx = crate::policy::Context::from_prefix(&rollout.prompt, &generated, t, continuer.order(), pad);
        let token = continuer.sample_token(&ctx, rng)?;
        generated.push(token);
        if token == stop {
            terminated = true;
            break;
        }
    }
    Ok(Rollout {
        prompt: rollout.prompt.clone(),
        generated,
        terminated,
        steps: None,
        correct: None,
    })
}
