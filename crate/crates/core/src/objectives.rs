//! Distillation objectives and exact gradients for tabular policies.
//!
//! Per-step supervision comes in three granularities: the token-level reverse
//! KL over the full vocabulary, a single-sample estimate at the sampled token,
//! and the renormalized subset KL over a top-k support. The support family
//! also covers the overlap / non-overlap decomposition of the student and
//! teacher top-k sets. Because the policy class is an explicit softmax table,
//! every gradient is computed in closed form and checked against central
//! finite differences in the test suites.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::policy::{Context, PolicyError, ProbabilityVector, Rollout, StepRecord, TabularSoftmaxPolicy, TokenId};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ObjectiveError {
    #[error("probability vectors have different lengths ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("token id {token} out of range for vocab of size {size}")]
    TokenOutOfRange { token: TokenId, size: usize },
    #[error("support set is empty")]
    EmptySupport,
    #[error("support token {0} out of range")]
    SupportOutOfRange(TokenId),
    #[error("rollout is not scored (steps missing)")]
    Unscored,
    #[error("step has top-k sets of size {got}, rule expects {expected}")]
    TopKSizeMismatch { expected: usize, got: usize },
    #[error("learning rate must be positive, got {0}")]
    NonPositiveLearningRate(f64),
    #[error("dataset is empty")]
    EmptyDataset,
    #[error(transparent)]
    Policy(#[from] PolicyError),
}

/// Which token subset the per-step distillation loss covers.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SupportRule {
    FullVocab,
    SampledToken,
    StudentTopK(usize),
    OverlapTopK(usize),
    NonOverlapTopK(usize),
}

impl SupportRule {
    pub fn k(&self) -> Option<usize> {
        match self {
            SupportRule::StudentTopK(k) | SupportRule::OverlapTopK(k) | SupportRule::NonOverlapTopK(k) => Some(*k),
            _ => None,
        }
    }

    pub fn label(&self) -> String {
        match self {
            SupportRule::FullVocab => "full_vocab".into(),
            SupportRule::SampledToken => "sampled_token".into(),
            SupportRule::StudentTopK(k) => format!("student_top{k}"),
            SupportRule::OverlapTopK(k) => format!("overlap_top{k}"),
            SupportRule::NonOverlapTopK(k) => format!("non_overlap_top{k}"),
        }
    }
}

/// How per-step terms combine into a scalar loss.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum Aggregation {
    /// Sum of per-step terms divided by the number of supervised steps.
    #[default]
    TokenMean,
    /// Per-trajectory sums, averaged over the batch.
    TrajectorySum,
}

/// Gradient treatment of the sampled token's dependence on the policy.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum EstimatorMode {
    /// Differentiate the sampled-token loss with the token held fixed.
    #[default]
    FixedToken,
    /// Add the score-function correction so the gradient estimates the
    /// derivative of the expected per-step loss.
    ScoreFunction,
}

/// Loss of one trajectory, with per-step terms and coverage counts.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub per_step: Vec<f64>,
    /// Number of tokens the loss covered at each step; 0 marks a skipped step.
    pub tokens_covered: Vec<usize>,
}

impl LossBreakdown {
    pub fn supervised_steps(&self) -> usize {
        self.tokens_covered.iter().filter(|&&c| c > 0).count()
    }
}

/// Sparse gradient of a batch loss with respect to the student's logits.
///
/// Only contexts visited by the batch's rollouts appear. Row iteration is
/// ordered (BTreeMap), so reductions over rows are deterministic.
#[derive(Clone, Debug, Default)]
pub struct PolicyGradient {
    rows: BTreeMap<Context, Vec<f64>>,
}

impl PolicyGradient {
    pub fn rows(&self) -> impl Iterator<Item = (&Context, &Vec<f64>)> {
        self.rows.iter()
    }

    pub fn row(&self, ctx: &Context) -> Option<&Vec<f64>> {
        self.rows.get(ctx)
    }

    pub fn num_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    fn add_to_row(&mut self, ctx: &Context, m: usize, f: impl Fn(usize) -> f64) {
        let row = self.rows.entry(ctx.clone()).or_insert_with(|| vec![0.0; m]);
        for (j, slot) in row.iter_mut().enumerate() {
            *slot += f(j);
        }
    }

    /// Merges another gradient into this one by sparse addition.
    pub fn merge(&mut self, other: &PolicyGradient) {
        for (ctx, grad) in &other.rows {
            let row = self.rows.entry(ctx.clone()).or_insert_with(|| vec![0.0; grad.len()]);
            for (slot, g) in row.iter_mut().zip(grad) {
                *slot += g;
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for row in self.rows.values_mut() {
            for g in row.iter_mut() {
                *g *= factor;
            }
        }
    }

    /// L2 norm over all entries, accumulated in context order.
    pub fn norm(&self) -> f64 {
        let mut sumsq = 0.0;
        for row in self.rows.values() {
            for g in row {
                sumsq += g * g;
            }
        }
        sumsq.sqrt()
    }
}

fn check_pair(p: &ProbabilityVector, q: &ProbabilityVector) -> Result<(), ObjectiveError> {
    if p.len() != q.len() {
        return Err(ObjectiveError::LengthMismatch(p.len(), q.len()));
    }
    Ok(())
}

/// Token-level reverse KL `Σ_v p(v) (ln p(v) − ln q(v))`, in nats.
pub fn token_reverse_kl(p: &ProbabilityVector, q: &ProbabilityVector) -> Result<f64, ObjectiveError> {
    check_pair(p, q)?;
    let mut total = 0.0;
    for (&pv, &qv) in p.probs().iter().zip(q.probs()) {
        if pv > 0.0 {
            total += pv * (pv.ln() - qv.ln());
        }
    }
    Ok(total)
}

/// Single-sample loss `ln p(token) − ln q(token)`; may be negative.
pub fn sampled_token_loss(p: &ProbabilityVector, q: &ProbabilityVector, token: TokenId) -> Result<f64, ObjectiveError> {
    check_pair(p, q)?;
    if token as usize >= p.len() {
        return Err(ObjectiveError::TokenOutOfRange { token, size: p.len() });
    }
    Ok(p.get(token).ln() - q.get(token).ln())
}

/// Restriction of `dist` to `subset`, renormalized to sum to 1.
///
/// Returns the probabilities aligned with `subset`'s order.
pub fn renormalize_on_subset(dist: &ProbabilityVector, subset: &[TokenId]) -> Result<Vec<f64>, ObjectiveError> {
    if subset.is_empty() {
        return Err(ObjectiveError::EmptySupport);
    }
    let mut mass = 0.0;
    for &t in subset {
        if t as usize >= dist.len() {
            return Err(ObjectiveError::SupportOutOfRange(t));
        }
        mass += dist.get(t);
    }
    Ok(subset.iter().map(|&t| dist.get(t) / mass).collect())
}

/// KL divergence between `p` and `q` after renormalizing both on `subset`.
pub fn subset_kl(p: &ProbabilityVector, q: &ProbabilityVector, subset: &[TokenId]) -> Result<f64, ObjectiveError> {
    check_pair(p, q)?;
    let pbar = renormalize_on_subset(p, subset)?;
    let qbar = renormalize_on_subset(q, subset)?;
    let mut total = 0.0;
    for (pv, qv) in pbar.iter().zip(&qbar) {
        if *pv > 0.0 {
            total += pv * (pv.ln() - qv.ln());
        }
    }
    Ok(total)
}

/// Token set a rule selects at one step. An empty result means the step is
/// skipped (zero loss and gradient), which only happens for the overlap and
/// non-overlap rules.
pub fn select_support(step: &StepRecord, rule: SupportRule) -> Result<Vec<TokenId>, ObjectiveError> {
    if let Some(k) = rule.k() {
        if step.student_topk.len() != k || step.teacher_topk.len() != k {
            return Err(ObjectiveError::TopKSizeMismatch { expected: k, got: step.student_topk.len() });
        }
    }
    Ok(match rule {
        SupportRule::FullVocab => (0..step.student_dist.len() as TokenId).collect(),
        SupportRule::SampledToken => vec![step.sampled_token],
        SupportRule::StudentTopK(_) => step.student_topk.clone(),
        SupportRule::OverlapTopK(_) => step.overlap(),
        SupportRule::NonOverlapTopK(_) => step.symmetric_difference(),
    })
}

/// Per-step loss term under a rule; `None` marks a skipped step.
fn step_loss(step: &StepRecord, rule: SupportRule) -> Result<Option<(f64, usize)>, ObjectiveError> {
    match rule {
        SupportRule::FullVocab => {
            let kl = token_reverse_kl(&step.student_dist, &step.teacher_dist)?;
            Ok(Some((kl, step.student_dist.len())))
        }
        SupportRule::SampledToken => {
            let loss = sampled_token_loss(&step.student_dist, &step.teacher_dist, step.sampled_token)?;
            Ok(Some((loss, 1)))
        }
        _ => {
            let support = select_support(step, rule)?;
            if support.is_empty() {
                return Ok(None);
            }
            let kl = subset_kl(&step.student_dist, &step.teacher_dist, &support)?;
            Ok(Some((kl, support.len())))
        }
    }
}

/// Loss of one scored rollout under a rule and aggregation mode.
pub fn trajectory_loss(rollout: &Rollout, rule: SupportRule, aggregation: Aggregation) -> Result<LossBreakdown, ObjectiveError> {
    let steps = rollout.steps.as_deref().ok_or(ObjectiveError::Unscored)?;
    let mut per_step = Vec::with_capacity(steps.len());
    let mut tokens_covered = Vec::with_capacity(steps.len());
    for step in steps {
        match step_loss(step, rule)? {
            Some((loss, covered)) => {
                per_step.push(loss);
                tokens_covered.push(covered);
            }
            None => {
                per_step.push(0.0);
                tokens_covered.push(0);
            }
        }
    }
    let sum: f64 = per_step.iter().sum();
    let supervised = tokens_covered.iter().filter(|&&c| c > 0).count();
    let total = match aggregation {
        Aggregation::TokenMean => {
            if supervised == 0 {
                0.0
            } else {
                sum / supervised as f64
            }
        }
        Aggregation::TrajectorySum => sum,
    };
    Ok(LossBreakdown { total, per_step, tokens_covered })
}

/// Batch loss consistent with [`loss_gradient`]'s normalization.
pub fn batch_loss(rollouts: &[Rollout], rule: SupportRule, aggregation: Aggregation) -> Result<f64, ObjectiveError> {
    match aggregation {
        Aggregation::TokenMean => {
            let mut sum = 0.0;
            let mut supervised = 0usize;
            for rollout in rollouts {
                let breakdown = trajectory_loss(rollout, rule, Aggregation::TrajectorySum)?;
                sum += breakdown.per_step.iter().sum::<f64>();
                supervised += breakdown.supervised_steps();
            }
            Ok(if supervised == 0 { 0.0 } else { sum / supervised as f64 })
        }
        Aggregation::TrajectorySum => {
            let mut sum = 0.0;
            for rollout in rollouts {
                sum += trajectory_loss(rollout, rule, Aggregation::TrajectorySum)?.total;
            }
            Ok(if rollouts.is_empty() { 0.0 } else { sum / rollouts.len() as f64 })
        }
    }
}

/// Raw (unnormalized) gradient contribution of one step into `grad`.
///
/// All formulas differentiate through the softmax, so every context row sums
/// to zero; for subset rules the renormalization cancels the off-support
/// dependence exactly and the row is supported on the selected tokens only.
fn accumulate_step_gradient(
    grad: &mut PolicyGradient,
    ctx: &Context,
    step: &StepRecord,
    rule: SupportRule,
    estimator: EstimatorMode,
    inv_temp: f64,
) -> Result<bool, ObjectiveError> {
    let p = &step.student_dist;
    let q = &step.teacher_dist;
    let m = p.len();
    match rule {
        SupportRule::FullVocab => {
            let kl = token_reverse_kl(p, q)?;
            grad.add_to_row(ctx, m, |j| {
                let pj = p.get(j as TokenId);
                let rj = pj.ln() - q.get(j as TokenId).ln();
                inv_temp * pj * (rj - kl)
            });
            Ok(true)
        }
        SupportRule::SampledToken => {
            let sampled = step.sampled_token;
            let weight = match estimator {
                EstimatorMode::FixedToken => 1.0,
                EstimatorMode::ScoreFunction => {
                    1.0 + sampled_token_loss(p, q, sampled)?
                }
            };
            grad.add_to_row(ctx, m, |j| {
                let indicator = if j as TokenId == sampled { 1.0 } else { 0.0 };
                inv_temp * weight * (indicator - p.get(j as TokenId))
            });
            Ok(true)
        }
        _ => {
            let support = select_support(step, rule)?;
            if support.is_empty() {
                return Ok(false);
            }
            let pbar = renormalize_on_subset(p, &support)?;
            let qbar = renormalize_on_subset(q, &support)?;
            let log_ratios: Vec<f64> = pbar.iter().zip(&qbar).map(|(a, b)| a.ln() - b.ln()).collect();
            let kl: f64 = pbar.iter().zip(&log_ratios).map(|(a, r)| a * r).sum();
            let mut row = vec![0.0; m];
            for ((&token, &pb), &r) in support.iter().zip(&pbar).zip(&log_ratios) {
                row[token as usize] = inv_temp * pb * (r - kl);
            }
            grad.add_to_row(ctx, m, |j| row[j]);
            Ok(true)
        }
    }
}

fn rollout_raw_gradient(
    student: &TabularSoftmaxPolicy,
    rollout: &Rollout,
    rule: SupportRule,
    estimator: EstimatorMode,
) -> Result<(PolicyGradient, usize), ObjectiveError> {
    let steps = rollout.steps.as_deref().ok_or(ObjectiveError::Unscored)?;
    let inv_temp = 1.0 / student.temperature();
    let mut grad = PolicyGradient::default();
    let mut supervised = 0usize;
    for (t, step) in steps.iter().enumerate() {
        let ctx = Context::from_prefix(&rollout.prompt, &rollout.generated, t, student.order(), student.vocab().pad());
        if accumulate_step_gradient(&mut grad, &ctx, step, rule, estimator, inv_temp)? {
            supervised += 1;
        }
    }
    Ok((grad, supervised))
}

/// Exact gradient of the batch loss with respect to the student's logits.
///
/// The teacher is a constant: recorded teacher distributions enter the loss
/// values but contribute no rows. The batch must have been scored against the
/// current student parameters.
pub fn loss_gradient(
    student: &TabularSoftmaxPolicy,
    rollouts: &[Rollout],
    rule: SupportRule,
    estimator: EstimatorMode,
    aggregation: Aggregation,
) -> Result<PolicyGradient, ObjectiveError> {
    let mut merged = PolicyGradient::default();
    match aggregation {
        Aggregation::TokenMean => {
            let mut supervised = 0usize;
            for rollout in rollouts {
                let (grad, steps) = rollout_raw_gradient(student, rollout, rule, estimator)?;
                merged.merge(&grad);
                supervised += steps;
            }
            if supervised > 0 {
                merged.scale(1.0 / supervised as f64);
            }
        }
        Aggregation::TrajectorySum => {
            for rollout in rollouts {
                let (grad, _) = rollout_raw_gradient(student, rollout, rule, estimator)?;
                merged.merge(&grad);
            }
            if !rollouts.is_empty() {
                merged.scale(1.0 / rollouts.len() as f64);
            }
        }
    }
    Ok(merged)
}

/// One plain SGD step: `logits[ctx] -= lr * grad[ctx]` for touched contexts.
pub fn sgd_step(policy: &mut TabularSoftmaxPolicy, gradient: &PolicyGradient, learning_rate: f64) -> Result<(), ObjectiveError> {
    if learning_rate <= 0.0 {
        return Err(ObjectiveError::NonPositiveLearningRate(learning_rate));
    }
    for (ctx, row) in gradient.rows() {
        policy.nudge_row(ctx, row, -learning_rate);
    }
    Ok(())
}

/// Mean per-token negative log-likelihood of `data` under the student, with
/// its exact gradient (softmax cross-entropy per visited context).
pub fn sft_loss_and_gradient(
    student: &TabularSoftmaxPolicy,
    data: &[(Vec<TokenId>, Vec<TokenId>)],
) -> Result<(f64, PolicyGradient), ObjectiveError> {
    if data.is_empty() {
        return Err(ObjectiveError::EmptyDataset);
    }
    let inv_temp = 1.0 / student.temperature();
    let pad = student.vocab().pad();
    let order = student.order();
    let mut grad = PolicyGradient::default();
    let mut nll = 0.0;
    let mut tokens = 0usize;
    for (prompt, sequence) in data {
        for (t, &target) in sequence.iter().enumerate() {
            if target >= student.vocab().size() {
                return Err(ObjectiveError::TokenOutOfRange { token: target, size: student.vocab().size() as usize });
            }
            let ctx = Context::from_prefix(prompt, sequence, t, order, pad);
            let dist = student.next_token_distribution(&ctx)?;
            nll -= dist.get(target).ln();
            grad.add_to_row(&ctx, dist.len(), |j| {
                let indicator = if j as TokenId == target { 1.0 } else { 0.0 };
                inv_temp * (dist.get(j as TokenId) - indicator)
            });
            tokens += 1;
        }
    }
    if tokens == 0 {
        return Err(ObjectiveError::EmptyDataset);
    }
    grad.scale(1.0 / tokens as f64);
    Ok((nll / tokens as f64, grad))
}
