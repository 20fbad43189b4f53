//! Reference generating processes: ground-truth policies students and
//! teachers are fitted from.
//!
//! A reference rollout is `operands -> carrier chain -> marker -> answer ->
//! stop`. Carriers encode the running answer value and a position phase, so
//! an order-2 table can answer correctly, reasoning length is geometric, and
//! "familiarity with depth" is controlled by how far the phase progression
//! was allowed to run in the training data.

use serde::{Deserialize, Serialize};

use super::presets::measure_accuracy;
use super::task::SyntheticTask;
use super::ScenarioError;
use crate::policy::{Context, TabularSoftmaxPolicy, TokenId};

/// Distribution of reasoning-span lengths.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct LengthProfile {
    /// Mean reasoning-span length (geometric continuation).
    pub mean_len: f64,
    /// Hard cap: the span is forced to end once this many carriers were
    /// emitted. Bounds the phases the process ever visits.
    pub max_span: Option<usize>,
}

impl LengthProfile {
    pub fn geometric(mean_len: f64) -> Self {
        Self { mean_len, max_span: None }
    }

    pub fn capped(mean_len: f64, max_span: usize) -> Self {
        Self { mean_len, max_span: Some(max_span) }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ReferenceParams {
    pub style: usize,
    /// Target end-to-end rollout accuracy, verified empirically.
    pub accuracy_target: f64,
    pub length: LengthProfile,
    /// Probability mass a carrier step leaks to wrong value classes. This is
    /// the knob that makes a process "noisy" in its reasoning, not only in
    /// its final answer.
    pub value_scramble: f64,
    /// Wrong-value mass at the first carrier only; `None` follows
    /// `value_scramble`. A high value misplaces the head of the rollout
    /// while the chain itself stays coherent and on-manifold.
    pub first_value_scramble: Option<f64>,
    pub seed: u64,
}

const PROB_FLOOR: f64 = 1e-8;
const TIE_JITTER: f64 = 1e-6;
const CALIBRATION_ROLLOUTS: usize = 2_000;
const CALIBRATION_RETRIES: usize = 5;

/// Writes `ln(weights)` (floored, normalized) with a tiny seeded jitter.
/// The jitter leaves every distribution unchanged to ~1e-6 but keeps two
/// independently built policies from sharing bitwise-tied tails, which would
/// otherwise make their top-k sets coincide through the id tie-break.
fn set_prob_row(
    policy: &mut TabularSoftmaxPolicy,
    ctx: Context,
    weights: &[(TokenId, f64)],
    rng: &mut rand_chacha::ChaCha8Rng,
) -> Result<(), ScenarioError> {
    let m = policy.vocab().size() as usize;
    let mut row = vec![PROB_FLOOR; m];
    for &(token, w) in weights {
        row[token as usize] += w;
    }
    let total: f64 = row.iter().sum();
    let logits: Vec<f64> = row
        .iter()
        .map(|p| (p / total).ln() + TIE_JITTER * rand::Rng::random::<f64>(rng))
        .collect();
    policy.set_row(ctx, logits)?;
    Ok(())
}

/// Carrier-class weights at a given phase: `1 - scramble` on the target
/// value, the rest spread over the other value classes.
fn carrier_weights(task: &SyntheticTask, style: usize, phase: usize, value: usize, scramble: f64, total: f64) -> Vec<(TokenId, f64)> {
    let dialect = task.style(style);
    let m = task.modulus();
    let variety = dialect.variety();
    let mut weights = Vec::with_capacity(m * variety);
    for v in 0..m {
        let class_mass = if v == value {
            total * (1.0 - scramble)
        } else {
            total * scramble / (m - 1) as f64
        };
        for token in dialect.class(phase, v) {
            weights.push((token, class_mass / variety as f64));
        }
    }
    weights
}

/// Builds and calibrates a reference policy for one style.
///
/// The answer-head sharpness is adjusted until 2,000 measured rollouts land
/// within ±0.05 of the accuracy target; unreachable targets fail loudly.
pub fn build_reference_policy(task: &SyntheticTask, params: &ReferenceParams) -> Result<TabularSoftmaxPolicy, ScenarioError> {
    if params.style >= task.styles().len() {
        return Err(ScenarioError::BadParams(format!("style {} out of range", params.style)));
    }
    if !(params.accuracy_target > 0.0 && params.accuracy_target <= 1.0) {
        return Err(ScenarioError::BadParams("accuracy target must lie in (0, 1]".into()));
    }
    if params.length.mean_len < 1.0 {
        return Err(ScenarioError::BadParams("mean reasoning length must be >= 1".into()));
    }
    if !(0.0..1.0).contains(&params.value_scramble) {
        return Err(ScenarioError::BadParams("value scramble must lie in [0, 1)".into()));
    }
    if let Some(first) = params.first_value_scramble {
        if !(0.0..1.0).contains(&first) {
            return Err(ScenarioError::BadParams("first-value scramble must lie in [0, 1)".into()));
        }
    }
    if task.num_operands() > 2 {
        return Err(ScenarioError::BadParams(
            "reference construction supports at most 2 operands (order-2 windows)".into(),
        ));
    }

    let mut acc_head = params.accuracy_target.clamp(0.02, 0.995);
    let mut achieved = f64::NAN;
    for round in 0..=CALIBRATION_RETRIES {
        let policy = build_with_answer_head(task, params, acc_head)?;
        let max_len = (params.length.mean_len * 4.0).ceil() as usize + 8;
        let samples = CALIBRATION_ROLLOUTS.div_ceil(task.all_prompts().len());
        achieved = measure_accuracy(
            &policy,
            task,
            &task.all_prompts(),
            samples,
            max_len,
            params.seed ^ (0xCA11_0000 + round as u64),
        );
        if (achieved - params.accuracy_target).abs() <= 0.05 {
            return Ok(policy);
        }
        let correction = params.accuracy_target - achieved;
        acc_head = (acc_head + correction).clamp(0.02, 0.995);
    }
    Err(ScenarioError::CalibrationFailed {
        target: params.accuracy_target,
        achieved,
        retries: CALIBRATION_RETRIES,
    })
}

fn build_with_answer_head(
    task: &SyntheticTask,
    params: &ReferenceParams,
    acc_head: f64,
) -> Result<TabularSoftmaxPolicy, ScenarioError> {
    let order = 2;
    let mut policy = TabularSoftmaxPolicy::new(task.vocab().clone(), order, 1.0);
    let mut jitter_rng = crate::rng::derive_rng(params.seed, &[0x4EF]);
    let pad = task.vocab().pad();
    let marker = task.vocab().answer_marker();
    let stop = task.vocab().stop();
    let m = task.modulus();
    let dialect = task.style(params.style).clone();
    let phases = dialect.phases();
    let scramble = params.value_scramble;
    let continue_prob = 1.0 - 1.0 / params.length.mean_len;

    // Prompt rows: emit the first carrier, encoding the answer value.
    let first_scramble = params.first_value_scramble.unwrap_or(scramble);
    for prompt in task.all_prompts() {
        let ctx = Context::from_prefix(&prompt, &[], 0, order, pad);
        let answer = task.answer_fn(&prompt)?;
        let value = (answer - task.answer_token(0)) as usize;
        let weights = carrier_weights(task, params.style, 0, value, first_scramble, 1.0);
        set_prob_row(&mut policy, ctx, &weights, &mut jitter_rng)?;
    }

    // Reasoning rows: continue the carrier chain or emit the marker. The row
    // depends only on the trailing carrier; predecessors are enumerated so
    // every reachable window is parameterized.
    let mut predecessors: Vec<TokenId> = (0..m).map(|v| task.operand_token(v)).collect();
    predecessors.extend(dialect.tokens());
    for carrier in dialect.tokens() {
        let (phase, value, _) = dialect.decode(carrier).expect("dialect token");
        let span_len = phase + 1;
        let keep_going = match params.length.max_span {
            Some(cap) if span_len >= cap => 0.0,
            _ => continue_prob,
        };
        let next_phase = (phase + 1).min(phases - 1);
        let mut weights = carrier_weights(task, params.style, next_phase, value, scramble, keep_going);
        weights.push((marker, 1.0 - keep_going));
        for &prev in &predecessors {
            set_prob_row(&mut policy, Context::new(vec![prev, carrier]), &weights, &mut jitter_rng)?;
        }
    }

    // Answer rows: the marker is preceded by a value-bearing carrier.
    for carrier in dialect.tokens() {
        let (_, value, _) = dialect.decode(carrier).expect("dialect token");
        let mut weights = Vec::with_capacity(m);
        for v in 0..m {
            let w = if v == value { acc_head } else { (1.0 - acc_head) / (m - 1) as f64 };
            weights.push((task.answer_token(v), w));
        }
        set_prob_row(&mut policy, Context::new(vec![carrier, marker]), &weights, &mut jitter_rng)?;
    }

    // Stop rows.
    for v in 0..m {
        set_prob_row(
            &mut policy,
            Context::new(vec![marker, task.answer_token(v)]),
            &[(stop, 1.0)],
            &mut jitter_rng,
        )?;
    }

    // Jitter the fallback row as well; unseen states otherwise tie exactly.
    let default: Vec<f64> = (0..task.vocab().size())
        .map(|_| TIE_JITTER * rand::Rng::random::<f64>(&mut jitter_rng))
        .collect();
    policy.set_default_logits(default)?;

    Ok(policy)
}
