//! Fast self-verification suite: oracle checks for every load-bearing
//! formula, runnable from the command line.
//!
//! Each check pits an implementation against an independent route to the
//! same quantity: brute-force summation for divergences, Monte Carlo for the
//! single-sample estimator, exhaustive pair counting for ranking, and
//! central finite differences of the loss for every analytic gradient.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::diagnostics;
use crate::objectives::{
    self, batch_loss, loss_gradient, sampled_token_loss, subset_kl, token_reverse_kl, Aggregation, EstimatorMode,
    PolicyGradient, SupportRule,
};
use crate::policy::{
    score_rollout, top_k_set, Context, ProbabilityVector, Rollout, StepRecord, TabularSoftmaxPolicy, TokenId,
    Vocabulary,
};
use crate::rng::derive_rng;

/// Outcome of one named property check.
#[derive(Clone, Debug)]
pub struct CheckOutcome {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Clone, Debug, Default)]
pub struct VerifyReport {
    pub checks: Vec<CheckOutcome>,
}

impl VerifyReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    fn push(&mut self, name: &str, passed: bool, detail: String) {
        self.checks.push(CheckOutcome { name: name.into(), passed, detail });
    }
}

/// Result of one finite-difference gradient comparison.
#[derive(Clone, Copy, Debug)]
pub struct FdCheck {
    pub analytic_norm: f64,
    pub fd_norm: f64,
    /// `‖analytic − fd‖ / max(‖fd‖, 1e-300)` over all visited entries.
    pub rel_error: f64,
}

fn random_dist(rng: &mut ChaCha8Rng, m: usize) -> ProbabilityVector {
    let logits: Vec<f64> = (0..m).map(|_| 3.0 * rng.random::<f64>() - 1.5).collect();
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    for e in &mut exps {
        *e /= total;
    }
    ProbabilityVector::new(exps).expect("normalized")
}

fn random_policy(vocab: &Vocabulary, order: usize, rng: &mut ChaCha8Rng) -> TabularSoftmaxPolicy {
    let m = vocab.size() as usize;
    let mut policy = TabularSoftmaxPolicy::new(vocab.clone(), order, 1.0);
    // Parameterize every order-1 context; keep the stop token improbable so
    // sampled instances retain their full length.
    for prev in 0..vocab.size() {
        let mut row: Vec<f64> = (0..m).map(|_| 2.0 * rng.random::<f64>() - 1.0).collect();
        row[vocab.stop() as usize] = -20.0;
        policy.set_row(Context::new(vec![prev]), row).expect("valid row");
    }
    policy
}

/// Builds a randomized scored batch over M=8, order 1, T=4.
pub fn random_instance(seed: u64, num_rollouts: usize, k: usize) -> (TabularSoftmaxPolicy, TabularSoftmaxPolicy, Vec<Rollout>) {
    let vocab = Vocabulary::with_reserved_prefix(8).expect("vocab");
    let mut rng = derive_rng(seed, &[0xF0]);
    let student = random_policy(&vocab, 1, &mut rng);
    let teacher = random_policy(&vocab, 1, &mut rng);
    let rollouts: Vec<Rollout> = (0..num_rollouts)
        .map(|i| {
            let mut r_rng = derive_rng(seed, &[0xF1, i as u64]);
            let prompt = vec![3 + (i as u32 % 5)];
            let rollout = student.sample_rollout(&prompt, 4, &mut r_rng).expect("rollout");
            score_rollout(&student, &teacher, &rollout, k).expect("scored")
        })
        .collect();
    (student, teacher, rollouts)
}

/// Replaces the student-side records of a scored rollout under new
/// parameters, keeping the teacher side fixed.
fn rescore_student(student: &TabularSoftmaxPolicy, rollout: &Rollout, k: usize) -> Rollout {
    let steps = rollout.steps.as_ref().expect("scored rollout");
    let mut out = rollout.clone();
    let new_steps: Vec<StepRecord> = steps
        .iter()
        .enumerate()
        .map(|(t, step)| {
            let ctx = Context::from_prefix(&rollout.prompt, &rollout.generated, t, student.order(), student.vocab().pad());
            let student_dist = student.next_token_distribution(&ctx).expect("context length");
            let student_topk = top_k_set(&student_dist, k).expect("k in range");
            StepRecord {
                student_dist,
                teacher_dist: step.teacher_dist.clone(),
                sampled_token: step.sampled_token,
                student_topk,
                teacher_topk: step.teacher_topk.clone(),
            }
        })
        .collect();
    out.steps = Some(new_steps);
    out
}

/// The differentiable objective a (rule, mode) pair defines on a fixed
/// batch. For the score-function estimator this is the standard frozen-
/// coefficient surrogate whose gradient at the expansion point equals the
/// estimator.
fn objective_value(
    student: &TabularSoftmaxPolicy,
    rollouts: &[Rollout],
    rule: SupportRule,
    mode: EstimatorMode,
    aggregation: Aggregation,
    frozen: Option<&[Vec<f64>]>,
    k: usize,
) -> f64 {
    let rescored: Vec<Rollout> = rollouts.iter().map(|r| rescore_student(student, r, k)).collect();
    match (rule, mode, frozen) {
        (SupportRule::SampledToken, EstimatorMode::ScoreFunction, Some(coefficients)) => {
            let mut total = 0.0;
            let mut supervised = 0usize;
            let mut per_rollout = Vec::with_capacity(rescored.len());
            for (rollout, c_row) in rescored.iter().zip(coefficients) {
                let mut sum = 0.0;
                for (step, &c) in rollout.scored_steps().expect("scored").iter().zip(c_row) {
                    let token = step.sampled_token;
                    let log_p = step.student_dist.get(token).ln();
                    let log_q = step.teacher_dist.get(token).ln();
                    sum += (log_p - log_q) + c * log_p;
                    supervised += 1;
                }
                per_rollout.push(sum);
                total += sum;
            }
            match aggregation {
                Aggregation::TokenMean => total / supervised as f64,
                Aggregation::TrajectorySum => per_rollout.iter().sum::<f64>() / per_rollout.len() as f64,
            }
        }
        _ => batch_loss(&rescored, rule, aggregation).expect("scored batch"),
    }
}

/// Central-difference check of `loss_gradient` against the defining
/// objective, over every context the batch visits.
#[allow(clippy::too_many_arguments)]
pub fn finite_difference_check(
    student: &TabularSoftmaxPolicy,
    rollouts: &[Rollout],
    rule: SupportRule,
    mode: EstimatorMode,
    aggregation: Aggregation,
    step_size: f64,
    k: usize,
    perturb_analytic: bool,
) -> FdCheck {
    let analytic = loss_gradient(student, rollouts, rule, mode, aggregation).expect("gradient");
    // Frozen score-function coefficients at the expansion point.
    let frozen: Option<Vec<Vec<f64>>> = match (rule, mode) {
        (SupportRule::SampledToken, EstimatorMode::ScoreFunction) => Some(
            rollouts
                .iter()
                .map(|r| {
                    r.scored_steps()
                        .expect("scored")
                        .iter()
                        .map(|s| sampled_token_loss(&s.student_dist, &s.teacher_dist, s.sampled_token).expect("token"))
                        .collect()
                })
                .collect(),
        ),
        _ => None,
    };

    let mut visited: std::collections::BTreeSet<Context> = std::collections::BTreeSet::new();
    for rollout in rollouts {
        for t in 0..rollout.len() {
            visited.insert(Context::from_prefix(
                &rollout.prompt,
                &rollout.generated,
                t,
                student.order(),
                student.vocab().pad(),
            ));
        }
    }

    let m = student.vocab().size() as usize;
    let mut diff_sq = 0.0;
    let mut fd_sq = 0.0;
    let mut analytic_sq = 0.0;
    let mut first = perturb_analytic;
    for ctx in &visited {
        let zero = vec![0.0; m];
        let analytic_row = analytic.row(ctx).unwrap_or(&zero);
        for j in 0..m {
            let mut delta = vec![0.0; m];
            delta[j] = 1.0;
            let mut plus = student.clone();
            plus.nudge_row(ctx, &delta, step_size);
            let mut minus = student.clone();
            minus.nudge_row(ctx, &delta, -step_size);
            let f_plus = objective_value(&plus, rollouts, rule, mode, aggregation, frozen.as_deref(), k);
            let f_minus = objective_value(&minus, rollouts, rule, mode, aggregation, frozen.as_deref(), k);
            let fd = (f_plus - f_minus) / (2.0 * step_size);
            let mut a = analytic_row[j];
            if first {
                // Test hook: corrupt a single entry to prove the check bites.
                a += 1e-3;
                first = false;
            }
            diff_sq += (a - fd) * (a - fd);
            fd_sq += fd * fd;
            analytic_sq += a * a;
        }
    }
    FdCheck {
        analytic_norm: analytic_sq.sqrt(),
        fd_norm: fd_sq.sqrt(),
        rel_error: diff_sq.sqrt() / fd_sq.sqrt().max(1e-300),
    }
}

/// Finite-difference check of the SFT loss gradient.
pub fn sft_finite_difference_check(
    student: &TabularSoftmaxPolicy,
    data: &[(Vec<TokenId>, Vec<TokenId>)],
    step_size: f64,
) -> FdCheck {
    let (_, analytic) = objectives::sft_loss_and_gradient(student, data).expect("sft gradient");
    let mut visited: std::collections::BTreeSet<Context> = std::collections::BTreeSet::new();
    for (prompt, seq) in data {
        for t in 0..seq.len() {
            visited.insert(Context::from_prefix(prompt, seq, t, student.order(), student.vocab().pad()));
        }
    }
    let m = student.vocab().size() as usize;
    let mut diff_sq = 0.0;
    let mut fd_sq = 0.0;
    let mut analytic_sq = 0.0;
    for ctx in &visited {
        let zero = vec![0.0; m];
        let analytic_row = analytic.row(ctx).unwrap_or(&zero);
        for j in 0..m {
            let mut delta = vec![0.0; m];
            delta[j] = 1.0;
            let mut plus = student.clone();
            plus.nudge_row(ctx, &delta, step_size);
            let mut minus = student.clone();
            minus.nudge_row(ctx, &delta, -step_size);
            let f_plus = objectives::sft_loss_and_gradient(&plus, data).expect("sft loss").0;
            let f_minus = objectives::sft_loss_and_gradient(&minus, data).expect("sft loss").0;
            let fd = (f_plus - f_minus) / (2.0 * step_size);
            diff_sq += (analytic_row[j] - fd) * (analytic_row[j] - fd);
            fd_sq += fd * fd;
            analytic_sq += analytic_row[j] * analytic_row[j];
        }
    }
    FdCheck {
        analytic_norm: analytic_sq.sqrt(),
        fd_norm: fd_sq.sqrt(),
        rel_error: diff_sq.sqrt() / fd_sq.sqrt().max(1e-300),
    }
}

/// Naive reverse KL by direct summation; the oracle side of the KL checks.
fn naive_reverse_kl(p: &[f64], q: &[f64]) -> f64 {
    let mut acc = 0.0;
    for i in 0..p.len() {
        if p[i] > 0.0 {
            acc += p[i] * (p[i] / q[i]).ln();
        }
    }
    acc
}

/// Exhaustive O(n^2) AUROC; the oracle side of the ranking check.
fn pair_counting_auroc(scores: &[f64], labels: &[bool]) -> f64 {
    let mut wins = 0.0;
    let mut pairs = 0.0;
    for i in 0..scores.len() {
        for j in 0..scores.len() {
            if labels[i] && !labels[j] {
                pairs += 1.0;
                if scores[i] > scores[j] {
                    wins += 1.0;
                } else if scores[i] == scores[j] {
                    wins += 0.5;
                }
            }
        }
    }
    wins / pairs
}

/// Runs the whole suite. `perturb_gradient` corrupts one analytic gradient
/// entry so callers can confirm a failure is detected and reported.
pub fn run_all(perturb_gradient: bool) -> VerifyReport {
    let mut report = VerifyReport::default();
    let mut rng = derive_rng(0x5EED, &[1]);

    // Softmax normalization and positivity.
    {
        let vocab = Vocabulary::with_reserved_prefix(16).expect("vocab");
        let mut worst: f64 = 0.0;
        let mut all_positive = true;
        for _ in 0..50 {
            let policy = random_policy(&vocab, 1, &mut rng);
            for prev in 0..16 {
                let dist = policy
                    .next_token_distribution(&Context::new(vec![prev]))
                    .expect("order 1");
                let total: f64 = dist.probs().iter().sum();
                worst = worst.max((total - 1.0).abs());
                all_positive &= dist.probs().iter().all(|&p| p > 0.0);
            }
        }
        report.push(
            "softmax_normalization",
            worst < 1e-12 && all_positive,
            format!("max |sum-1| = {worst:.2e}, strictly positive: {all_positive}"),
        );
    }

    // Top-k determinism under storage permutation is structural (sorting by
    // (probability, id)); check the tie-break directly.
    {
        let dist = ProbabilityVector::new(vec![0.25, 0.25, 0.25, 0.25]).expect("uniform");
        let set = top_k_set(&dist, 2).expect("k=2");
        report.push(
            "topk_tie_break",
            set == vec![0, 1],
            format!("uniform top-2 = {set:?}, expected [0, 1]"),
        );
    }

    // Reverse KL against direct summation, nonnegativity, identity zero.
    {
        let mut worst = 0.0f64;
        let mut nonneg = true;
        for _ in 0..200 {
            let p = random_dist(&mut rng, 12);
            let q = random_dist(&mut rng, 12);
            let fast = token_reverse_kl(&p, &q).expect("matched lengths");
            let slow = naive_reverse_kl(p.probs(), q.probs());
            worst = worst.max((fast - slow).abs());
            nonneg &= fast >= 0.0;
            let self_kl = token_reverse_kl(&p, &p).expect("matched lengths");
            worst = worst.max(self_kl.abs());
        }
        report.push(
            "reverse_kl_oracle",
            worst < 1e-12 && nonneg,
            format!("max deviation {worst:.2e}, nonnegative: {nonneg}"),
        );
    }

    // Single-sample estimator unbiasedness (3 sigma over 1e5 draws).
    {
        let mut ok = true;
        let mut detail = String::new();
        for trial in 0..4 {
            let p = random_dist(&mut rng, 16);
            let q = random_dist(&mut rng, 16);
            let kl = token_reverse_kl(&p, &q).expect("matched");
            let mut draw_rng = derive_rng(0xB1A5, &[trial]);
            let n = 100_000usize;
            let mut mean = 0.0;
            let mut m2 = 0.0;
            for i in 0..n {
                let mut u: f64 = draw_rng.random();
                let mut token = p.len() - 1;
                for (id, &prob) in p.probs().iter().enumerate() {
                    u -= prob;
                    if u < 0.0 {
                        token = id;
                        break;
                    }
                }
                let x = sampled_token_loss(&p, &q, token as TokenId).expect("token");
                let delta = x - mean;
                mean += delta / (i + 1) as f64;
                m2 += delta * (x - mean);
            }
            let se = (m2 / (n - 1) as f64).sqrt() / (n as f64).sqrt();
            let pass = (mean - kl).abs() <= 3.0 * se;
            ok &= pass;
            detail = format!("last trial: |mean-kl| = {:.2e}, 3se = {:.2e}", (mean - kl).abs(), 3.0 * se);
        }
        report.push("sampled_token_unbiasedness", ok, detail);
    }

    // Subset KL equals standalone KL of the renormalized distributions.
    {
        let mut worst = 0.0f64;
        for _ in 0..100 {
            let p = random_dist(&mut rng, 10);
            let q = random_dist(&mut rng, 10);
            let subset = [1u32, 4, 7];
            let direct = subset_kl(&p, &q, &subset).expect("subset");
            let pbar = ProbabilityVector::new(objectives::renormalize_on_subset(&p, &subset).expect("subset")).expect("dist");
            let qbar = ProbabilityVector::new(objectives::renormalize_on_subset(&q, &subset).expect("subset")).expect("dist");
            let standalone = token_reverse_kl(&pbar, &qbar).expect("matched");
            worst = worst.max((direct - standalone).abs());
        }
        report.push(
            "subset_kl_standalone_identity",
            worst == 0.0,
            format!("max deviation {worst:.2e} (exact equality required)"),
        );
    }

    // Advantage sum identity: sum_v A(v) == -KL(pbar || qbar) on the overlap.
    {
        let mut worst = 0.0f64;
        for _ in 0..100 {
            let p = random_dist(&mut rng, 10);
            let q = random_dist(&mut rng, 10);
            let s_top = top_k_set(&p, 4).expect("k");
            let t_top = top_k_set(&q, 4).expect("k");
            let mut shared: Vec<TokenId> = s_top.iter().filter(|t| t_top.contains(t)).cloned().collect();
            shared.sort_unstable();
            if shared.is_empty() {
                continue;
            }
            let pbar = objectives::renormalize_on_subset(&p, &shared).expect("subset");
            let qbar = objectives::renormalize_on_subset(&q, &shared).expect("subset");
            let advantage_sum: f64 = pbar.iter().zip(&qbar).map(|(a, b)| a * (b.ln() - a.ln())).sum();
            let kl = subset_kl(&p, &q, &shared).expect("subset");
            worst = worst.max((advantage_sum + kl).abs());
        }
        report.push(
            "advantage_sum_identity",
            worst < 1e-12,
            format!("max |sum A + KL| = {worst:.2e}"),
        );
    }

    // Sequence mean reward is the negated mean sampled-token loss, bitwise.
    {
        let (_, _, rollouts) = random_instance(0xAB, 4, 3);
        let mut exact = true;
        for rollout in &rollouts {
            let steps = rollout.scored_steps().expect("scored");
            let loss_sum: f64 = steps
                .iter()
                .map(|s| sampled_token_loss(&s.student_dist, &s.teacher_dist, s.sampled_token).expect("token"))
                .sum();
            let reward = diagnostics::sequence_mean_reward(rollout).expect("scored");
            exact &= reward == -loss_sum / steps.len() as f64;
        }
        report.push(
            "reward_scale_identity",
            exact,
            "rbar == -(sum of sampled losses)/T bitwise".into(),
        );
    }

    // AUROC against exhaustive pair counting.
    {
        let mut worst = 0.0f64;
        for trial in 0..20 {
            let n = 20 + trial * 9;
            let mut t_rng = derive_rng(0xA0C, &[trial as u64]);
            let scores: Vec<f64> = (0..n).map(|_| (t_rng.random_range(0..10) as f64) / 5.0).collect();
            let labels: Vec<bool> = (0..n).map(|_| t_rng.random_bool(0.5)).collect();
            if labels.iter().all(|&l| l) || labels.iter().all(|&l| !l) {
                continue;
            }
            let fast = diagnostics::auroc(&scores, &labels).expect("two classes");
            let slow = pair_counting_auroc(&scores, &labels);
            worst = worst.max((fast - slow).abs());
        }
        report.push("auroc_pair_oracle", worst < 1e-12, format!("max deviation {worst:.2e}"));
    }

    // Gradient finite-difference checks: every rule and estimator mode.
    {
        let k = 3;
        let (student, _, rollouts) = random_instance(0xFD, 3, k);
        let rules = [
            (SupportRule::FullVocab, 1e-5),
            (SupportRule::SampledToken, 1e-5),
            (SupportRule::StudentTopK(k), 1e-4),
            (SupportRule::OverlapTopK(k), 1e-4),
            (SupportRule::NonOverlapTopK(k), 1e-4),
        ];
        let mut first_check = perturb_gradient;
        for (rule, tolerance) in rules {
            for mode in [EstimatorMode::FixedToken, EstimatorMode::ScoreFunction] {
                let check = finite_difference_check(
                    &student,
                    &rollouts,
                    rule,
                    mode,
                    Aggregation::TokenMean,
                    1e-5,
                    k,
                    first_check,
                );
                first_check = false;
                let name = format!("gradient_fd_{}_{:?}", rule.label(), mode).to_lowercase();
                report.push(
                    &name,
                    check.rel_error < tolerance,
                    format!("rel error {:.2e} (tolerance {tolerance:.0e})", check.rel_error),
                );
            }
        }
    }

    // SFT gradient finite differences.
    {
        let vocab = Vocabulary::with_reserved_prefix(8).expect("vocab");
        let mut sft_rng = derive_rng(0x5F7, &[0]);
        let student = random_policy(&vocab, 1, &mut sft_rng);
        let data: Vec<(Vec<TokenId>, Vec<TokenId>)> = (0..3)
            .map(|i| {
                let prompt = vec![3 + i as u32];
                let seq: Vec<TokenId> = (0..5).map(|_| sft_rng.random_range(0..8)).collect();
                (prompt, seq)
            })
            .collect();
        let check = sft_finite_difference_check(&student, &data, 1e-5);
        report.push(
            "gradient_fd_sft",
            check.rel_error < 1e-5,
            format!("rel error {:.2e} (tolerance 1e-5)", check.rel_error),
        );
    }

    // Per-context gradient rows sum to zero (softmax shift invariance).
    {
        let k = 3;
        let (student, _, rollouts) = random_instance(0x0FF, 3, k);
        let mut worst = 0.0f64;
        for rule in [
            SupportRule::FullVocab,
            SupportRule::SampledToken,
            SupportRule::StudentTopK(k),
            SupportRule::OverlapTopK(k),
            SupportRule::NonOverlapTopK(k),
        ] {
            let grad: PolicyGradient =
                loss_gradient(&student, &rollouts, rule, EstimatorMode::FixedToken, Aggregation::TokenMean)
                    .expect("gradient");
            for (_, row) in grad.rows() {
                worst = worst.max(row.iter().sum::<f64>().abs());
            }
        }
        report.push("gradient_row_zero_sum", worst < 1e-9, format!("max |row sum| = {worst:.2e}"));
    }

    report
}
