//! Dynamic metrics tracked during distillation.
//!
//! All metrics operate on scored step records pooled over a batch and are
//! pure functions: evaluation order never changes results (reductions run in
//! fixed index order). Everything is in nats.

use serde::{Deserialize, Serialize};

use crate::objectives::renormalize_on_subset;
use crate::policy::{ProbabilityVector, Rollout, StepRecord};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum DiagnosticsError {
    #[error("metric needs a non-empty batch")]
    EmptyBatch,
    #[error("step records carry different top-k sizes")]
    MixedTopK,
    #[error("metric is undefined on this input: {0}")]
    Undefined(&'static str),
    #[error("scores and labels have different lengths ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("rollout is not scored (steps missing)")]
    Unscored,
    #[error("bin width must be >= 1")]
    ZeroBinWidth,
}

/// Per-training-step metric snapshot; one of these is logged per step.
///
/// `overlap_advantage` and `extreme_adv_prob_diff` are undefined when every
/// step in the batch has an empty top-k intersection; such batches log null.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsSnapshot {
    pub step: usize,
    pub overlap_ratio: f64,
    pub overlap_advantage: Option<f64>,
    pub entropy_student: f64,
    pub entropy_teacher: f64,
    pub entropy_gap: f64,
    pub overlap_mass_student: f64,
    pub overlap_mass_teacher: f64,
    pub loss: f64,
    pub grad_norm: f64,
    pub extreme_adv_prob_diff: Option<f64>,
    pub skipped_steps: usize,
}

/// Mean per-step entropy grouped by output position.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PositionProfile {
    pub bin_width: usize,
    pub bins: Vec<PositionBin>,
}

/// Positions are 1-indexed; a bin covers `start..=end`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PositionBin {
    pub start: usize,
    pub end: usize,
    pub student_mean_entropy: f64,
    pub teacher_mean_entropy: f64,
    pub count: usize,
}

/// Which side's probability mass an overlap-mass query reads.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Side {
    Student,
    Teacher,
}

/// Shannon entropy `−Σ p ln p` in nats.
pub fn entropy(dist: &ProbabilityVector) -> f64 {
    let mut h = 0.0;
    for &p in dist.probs() {
        if p > 0.0 {
            h -= p * p.ln();
        }
    }
    h
}

/// Absolute per-step entropy gap `|H(q) − H(p)|`.
pub fn entropy_gap(p: &ProbabilityVector, q: &ProbabilityVector) -> f64 {
    (entropy(q) - entropy(p)).abs()
}

fn check_batch(steps: &[&StepRecord]) -> Result<usize, DiagnosticsError> {
    let first = steps.first().ok_or(DiagnosticsError::EmptyBatch)?;
    let k = first.student_topk.len();
    for step in steps {
        if step.student_topk.len() != k || step.teacher_topk.len() != k {
            return Err(DiagnosticsError::MixedTopK);
        }
    }
    Ok(k)
}

/// Mean fraction of tokens shared by the student and teacher top-k sets.
pub fn overlap_ratio(steps: &[&StepRecord]) -> Result<f64, DiagnosticsError> {
    let k = check_batch(steps)?;
    let total: f64 = steps.iter().map(|s| s.overlap().len() as f64 / k as f64).sum();
    Ok(total / steps.len() as f64)
}

/// Per-step advantage `A(v) = p̄(v) (ln q̄(v) − ln p̄(v))` averaged over the
/// overlap tokens, renormalizing both distributions on the intersection.
/// Steps with an empty intersection are excluded; a batch where every step is
/// empty yields a distinctly-signaled undefined result.
pub fn overlap_token_advantage(steps: &[&StepRecord]) -> Result<f64, DiagnosticsError> {
    check_batch(steps)?;
    let mut total = 0.0;
    let mut included = 0usize;
    for step in steps {
        let shared = step.overlap();
        if shared.is_empty() {
            continue;
        }
        let pbar = renormalize_on_subset(&step.student_dist, &shared).expect("non-empty overlap");
        let qbar = renormalize_on_subset(&step.teacher_dist, &shared).expect("non-empty overlap");
        let advantage_sum: f64 = pbar
            .iter()
            .zip(&qbar)
            .map(|(p, q)| p * (q.ln() - p.ln()))
            .sum();
        total += advantage_sum / shared.len() as f64;
        included += 1;
    }
    if included == 0 {
        return Err(DiagnosticsError::Undefined("every step has an empty top-k intersection"));
    }
    Ok(total / included as f64)
}

/// Mean probability mass one side assigns to the shared top-k tokens.
pub fn overlap_mass(steps: &[&StepRecord], side: Side) -> Result<f64, DiagnosticsError> {
    check_batch(steps)?;
    let mut total = 0.0;
    for step in steps {
        let dist = match side {
            Side::Student => &step.student_dist,
            Side::Teacher => &step.teacher_dist,
        };
        total += step.overlap().iter().map(|&t| dist.get(t)).sum::<f64>();
    }
    Ok(total / steps.len() as f64)
}

/// Trajectory-mean teacher-minus-student log-probability of the sampled
/// tokens: the dense reward on-policy distillation implicitly optimizes.
pub fn sequence_mean_reward(rollout: &Rollout) -> Result<f64, DiagnosticsError> {
    let steps = rollout.steps.as_deref().ok_or(DiagnosticsError::Unscored)?;
    if steps.is_empty() {
        return Err(DiagnosticsError::EmptyBatch);
    }
    let total: f64 = steps
        .iter()
        .map(|s| s.teacher_dist.get(s.sampled_token).ln() - s.student_dist.get(s.sampled_token).ln())
        .sum();
    Ok(total / steps.len() as f64)
}

/// Probability that a random positive outscores a random negative, ties
/// counted 0.5 (Mann–Whitney). Computed from midranks in O(n log n).
pub fn auroc(scores: &[f64], labels: &[bool]) -> Result<f64, DiagnosticsError> {
    if scores.len() != labels.len() {
        return Err(DiagnosticsError::LengthMismatch(scores.len(), labels.len()));
    }
    if scores.is_empty() {
        return Err(DiagnosticsError::EmptyBatch);
    }
    let positives = labels.iter().filter(|&&l| l).count();
    let negatives = labels.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(DiagnosticsError::Undefined("AUROC needs both classes"));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).expect("scores must not be NaN"));
    let mut ranks = vec![0.0; scores.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        let midrank = (i + 1 + j) as f64 / 2.0;
        for &idx in &order[i..j] {
            ranks[idx] = midrank;
        }
        i = j;
    }
    let positive_rank_sum: f64 = ranks
        .iter()
        .zip(labels)
        .filter(|(_, &l)| l)
        .map(|(r, _)| r)
        .sum();
    let u = positive_rank_sum - positives as f64 * (positives as f64 + 1.0) / 2.0;
    Ok(u / (positives as f64 * negatives as f64))
}

/// Mean per-step entropy of both models grouped into contiguous position
/// bins covering `1..=max_len` over the batch.
pub fn entropy_by_position(rollouts: &[Rollout], bin_width: usize) -> Result<PositionProfile, DiagnosticsError> {
    if bin_width == 0 {
        return Err(DiagnosticsError::ZeroBinWidth);
    }
    if rollouts.is_empty() {
        return Err(DiagnosticsError::EmptyBatch);
    }
    let max_len = rollouts.iter().map(Rollout::len).max().unwrap_or(0);
    if max_len == 0 {
        return Err(DiagnosticsError::EmptyBatch);
    }
    let num_bins = max_len.div_ceil(bin_width);
    let mut student_sums = vec![0.0; num_bins];
    let mut teacher_sums = vec![0.0; num_bins];
    let mut counts = vec![0usize; num_bins];
    for rollout in rollouts {
        let steps = rollout.steps.as_deref().ok_or(DiagnosticsError::Unscored)?;
        for (t, step) in steps.iter().enumerate() {
            let bin = t / bin_width;
            student_sums[bin] += entropy(&step.student_dist);
            teacher_sums[bin] += entropy(&step.teacher_dist);
            counts[bin] += 1;
        }
    }
    let bins = (0..num_bins)
        .map(|b| PositionBin {
            start: b * bin_width + 1,
            end: ((b + 1) * bin_width).min(max_len),
            student_mean_entropy: if counts[b] > 0 { student_sums[b] / counts[b] as f64 } else { 0.0 },
            teacher_mean_entropy: if counts[b] > 0 { teacher_sums[b] / counts[b] as f64 } else { 0.0 },
            count: counts[b],
        })
        .collect();
    Ok(PositionProfile { bin_width, bins })
}

/// Mean student-minus-teacher probability on the overlap token with the
/// largest absolute advantage (ties broken by lower id). Undefined when every
/// step's intersection is empty.
pub fn extreme_advantage_prob_diff(steps: &[&StepRecord]) -> Result<f64, DiagnosticsError> {
    check_batch(steps)?;
    let mut total = 0.0;
    let mut included = 0usize;
    for step in steps {
        let shared = step.overlap();
        if shared.is_empty() {
            continue;
        }
        let pbar = renormalize_on_subset(&step.student_dist, &shared).expect("non-empty overlap");
        let qbar = renormalize_on_subset(&step.teacher_dist, &shared).expect("non-empty overlap");
        let mut best_token = shared[0];
        let mut best_abs = f64::NEG_INFINITY;
        for ((&token, p), q) in shared.iter().zip(&pbar).zip(&qbar) {
            let advantage = p * (q.ln() - p.ln());
            // Strict comparison keeps the lowest id on ties: `shared` is
            // ascending by token id.
            if advantage.abs() > best_abs {
                best_abs = advantage.abs();
                best_token = token;
            }
        }
        total += step.student_dist.get(best_token) - step.teacher_dist.get(best_token);
        included += 1;
    }
    if included == 0 {
        return Err(DiagnosticsError::Undefined("every step has an empty top-k intersection"));
    }
    Ok(total / included as f64)
}

/// Fraction of the teacher-student accuracy gap closed by distillation.
/// May exceed 1 or be negative; undefined when teacher and starting accuracy
/// coincide.
pub fn gap_recovery_rate(acc_before: f64, acc_after: f64, acc_teacher: f64) -> Result<f64, DiagnosticsError> {
    let denom = acc_teacher - acc_before;
    if denom == 0.0 {
        return Err(DiagnosticsError::Undefined("teacher accuracy equals starting accuracy"));
    }
    Ok((acc_after - acc_before) / denom)
}
