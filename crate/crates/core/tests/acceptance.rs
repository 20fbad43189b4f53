//! Acceptance suite: one test per criterion, each printing a PASS/FAIL line.
//!
//! Numeric criteria check implementations against independent oracles
//! (brute-force summation, Monte Carlo, exhaustive pair counting, central
//! finite differences). Dynamics criteria reproduce the qualitative
//! training-dynamics phenomena on the scenario presets at fixed seeds and
//! budgets; every tolerance is pinned here.

use std::sync::OnceLock;
use std::time::Instant;

use rand::Rng;

use opdlab_core::diagnostics;
use opdlab_core::objectives::{
    renormalize_on_subset, sampled_token_loss, subset_kl, token_reverse_kl, Aggregation, EstimatorMode, SupportRule,
};
use opdlab_core::policy::{score_rollout, ProbabilityVector, TokenId};
use opdlab_core::rng::derive_rng;
use opdlab_core::scenarios::{cold_start_sft, make_scenario, ScenarioKind, ScenarioParams, ScenarioPreset};
use opdlab_core::trainer::{
    opd_train, run_depth_probe, run_k_sweep, run_reward_separation, run_support_ablation, RunLog, TrainConfig,
};
use opdlab_core::verify;

fn report(criterion: &str, passed: bool, detail: &str) {
    let verdict = if passed { "PASS" } else { "FAIL" };
    println!("{verdict}: {criterion} - {detail}");
}

fn random_dist(rng: &mut rand_chacha::ChaCha8Rng, m: usize) -> ProbabilityVector {
    let logits: Vec<f64> = (0..m).map(|_| 4.0 * rng.random::<f64>() - 2.0).collect();
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    for e in &mut exps {
        *e /= total;
    }
    ProbabilityVector::new(exps).unwrap()
}

fn preset(kind: ScenarioKind) -> ScenarioPreset {
    make_scenario(kind, &ScenarioParams::default()).unwrap()
}

fn dynamics_config(seed: u64, rule: SupportRule, k: usize) -> TrainConfig {
    TrainConfig {
        rule,
        k,
        steps: 200,
        learning_rate: 100.0,
        aggregation: Aggregation::TrajectorySum,
        master_seed: seed,
        ..TrainConfig::default()
    }
}

fn pattern_match_run() -> &'static RunLog {
    static RUN: OnceLock<RunLog> = OnceLock::new();
    RUN.get_or_init(|| {
        let pm = preset(ScenarioKind::PatternMatch);
        opd_train(&pm, &dynamics_config(42, SupportRule::StudentTopK(4), 4)).unwrap()
    })
}

/// Criterion 1: the sampled-token loss is an unbiased single-sample
/// estimator of the token reverse KL (20 random pairs, 1e5 draws, 3 SE).
#[test]
fn criterion_01_estimator_unbiasedness() {
    let start = Instant::now();
    let mut rng = derive_rng(0xC1, &[0]);
    let mut worst_z = 0.0f64;
    for pair in 0..20 {
        let p = random_dist(&mut rng, 16);
        let q = random_dist(&mut rng, 16);
        let kl = token_reverse_kl(&p, &q).unwrap();
        let mut draw_rng = derive_rng(0xC1, &[1, pair]);
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
            let x = sampled_token_loss(&p, &q, token as TokenId).unwrap();
            let delta = x - mean;
            mean += delta / (i + 1) as f64;
            m2 += delta * (x - mean);
        }
        let se = (m2 / (n - 1) as f64).sqrt() / (n as f64).sqrt();
        worst_z = worst_z.max((mean - kl).abs() / se);
    }
    let elapsed = start.elapsed();
    let passed = worst_z <= 3.0 && elapsed.as_secs_f64() < 5.0;
    report(
        "criterion 1 (estimator unbiasedness)",
        passed,
        &format!("worst |z| = {worst_z:.2} over 20 pairs, runtime {elapsed:.2?}"),
    );
    assert!(passed, "worst z {worst_z}, elapsed {elapsed:?}");
}

/// Criterion 2: the full-vocabulary trajectory loss equals the sum of
/// per-step reverse KLs bit-exactly on 100 random scored rollouts.
#[test]
fn criterion_02_decomposition_exactness() {
    let mut checked = 0usize;
    let mut exact = true;
    for instance in 0..25 {
        let (_, _, rollouts) = verify::random_instance(0xC2 + instance, 4, 3);
        for rollout in &rollouts {
            let loss = opdlab_core::objectives::trajectory_loss(rollout, SupportRule::FullVocab, Aggregation::TrajectorySum)
                .unwrap();
            let sum: f64 = rollout
                .scored_steps()
                .unwrap()
                .iter()
                .map(|s| token_reverse_kl(&s.student_dist, &s.teacher_dist).unwrap())
                .sum();
            exact &= loss.total == sum;
            exact &= loss.total.to_bits() == sum.to_bits();
            checked += 1;
        }
    }
    report(
        "criterion 2 (decomposition exactness)",
        exact && checked == 100,
        &format!("bit-exact on {checked} rollouts"),
    );
    assert!(exact && checked == 100);
}

/// Criterion 3: analytic gradients match central finite differences for
/// every support rule and both estimator modes (plus SFT).
#[test]
fn criterion_03_gradient_correctness() {
    let start = Instant::now();
    let k = 3;
    let (student, _, rollouts) = verify::random_instance(0xC3, 3, k);
    let mut all_ok = true;
    let mut detail = String::new();
    for (rule, tolerance) in [
        (SupportRule::FullVocab, 1e-5),
        (SupportRule::SampledToken, 1e-5),
        (SupportRule::StudentTopK(k), 1e-4),
        (SupportRule::OverlapTopK(k), 1e-4),
        (SupportRule::NonOverlapTopK(k), 1e-4),
    ] {
        for mode in [EstimatorMode::FixedToken, EstimatorMode::ScoreFunction] {
            for aggregation in [Aggregation::TokenMean, Aggregation::TrajectorySum] {
                let check = verify::finite_difference_check(
                    &student, &rollouts, rule, mode, aggregation, 1e-5, k, false,
                );
                if check.rel_error >= tolerance {
                    all_ok = false;
                    detail = format!("{rule:?}/{mode:?}/{aggregation:?} rel {:.2e}", check.rel_error);
                }
            }
        }
    }
    let sft_data: Vec<(Vec<TokenId>, Vec<TokenId>)> = {
        let mut rng = derive_rng(0xC3, &[7]);
        (0..3)
            .map(|i| {
                let seq: Vec<TokenId> = (0..4).map(|_| rng.random_range(0..8)).collect();
                (vec![3 + i as u32], seq)
            })
            .collect()
    };
    let sft_check = verify::sft_finite_difference_check(&student, &sft_data, 1e-5);
    if sft_check.rel_error >= 1e-5 {
        all_ok = false;
        detail = format!("sft rel {:.2e}", sft_check.rel_error);
    }
    let elapsed = start.elapsed();
    let passed = all_ok && elapsed.as_secs_f64() < 10.0;
    report(
        "criterion 3 (gradient correctness)",
        passed,
        &format!(
            "all rules x modes x aggregations within tolerance{}, runtime {elapsed:.2?}",
            if detail.is_empty() { String::new() } else { format!(" EXCEPT {detail}") }
        ),
    );
    assert!(passed, "{detail}, elapsed {elapsed:?}");
}

/// Criterion 4: metric identities hold at stated tolerances.
#[test]
fn criterion_04_metric_identities() {
    let mut rng = derive_rng(0xC4, &[0]);
    let mut ok = true;
    let mut detail = Vec::new();

    // Advantage sum identity per step, within 1e-12.
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let p = random_dist(&mut rng, 12);
        let q = random_dist(&mut rng, 12);
        let s_top = opdlab_core::policy::top_k_set(&p, 5).unwrap();
        let t_top = opdlab_core::policy::top_k_set(&q, 5).unwrap();
        let mut shared: Vec<TokenId> = s_top.iter().filter(|t| t_top.contains(t)).cloned().collect();
        shared.sort_unstable();
        if shared.is_empty() {
            continue;
        }
        let pbar = renormalize_on_subset(&p, &shared).unwrap();
        let qbar = renormalize_on_subset(&q, &shared).unwrap();
        let advantage_sum: f64 = pbar.iter().zip(&qbar).map(|(a, b)| a * (b.ln() - a.ln())).sum();
        let kl = subset_kl(&p, &q, &shared).unwrap();
        worst = worst.max((advantage_sum + kl).abs());
    }
    if worst >= 1e-12 {
        ok = false;
    }
    detail.push(format!("sum A vs -KL max dev {worst:.1e}"));

    // Reward scale identity, bitwise (division form of rbar*T == -sum l).
    let (_, _, rollouts) = verify::random_instance(0xC4, 6, 3);
    let mut exact = true;
    for rollout in &rollouts {
        let steps = rollout.scored_steps().unwrap();
        let loss_sum: f64 = steps
            .iter()
            .map(|s| sampled_token_loss(&s.student_dist, &s.teacher_dist, s.sampled_token).unwrap())
            .sum();
        let reward = diagnostics::sequence_mean_reward(rollout).unwrap();
        exact &= reward.to_bits() == (-loss_sum / steps.len() as f64).to_bits();
    }
    if !exact {
        ok = false;
    }
    detail.push(format!("reward identity bitwise: {exact}"));

    // AUROC equals the O(n^2) pair-counting oracle up to n = 200.
    let mut auroc_worst = 0.0f64;
    for n in [2usize, 17, 50, 117, 200] {
        let mut t_rng = derive_rng(0xC4, &[2, n as u64]);
        let scores: Vec<f64> = (0..n).map(|_| (t_rng.random_range(0..12) as f64) / 6.0).collect();
        let mut labels: Vec<bool> = (0..n).map(|_| t_rng.random_bool(0.5)).collect();
        labels[0] = true;
        labels[n - 1] = false;
        let fast = diagnostics::auroc(&scores, &labels).unwrap();
        let mut wins = 0.0;
        let mut pairs = 0.0;
        for i in 0..n {
            for j in 0..n {
                if labels[i] && !labels[j] {
                    pairs += 1.0;
                    wins += if scores[i] > scores[j] {
                        1.0
                    } else if scores[i] == scores[j] {
                        0.5
                    } else {
                        0.0
                    };
                }
            }
        }
        auroc_worst = auroc_worst.max((fast - wins / pairs).abs());
    }
    if auroc_worst >= 1e-12 {
        ok = false;
    }
    detail.push(format!("auroc oracle max dev {auroc_worst:.1e}"));

    // Trivial cases: teacher == student.
    let (student, _, _) = verify::random_instance(0xC4 + 9, 1, 3);
    let rollout = student
        .sample_rollout(&[3], 6, &mut derive_rng(0xC4, &[3]))
        .unwrap();
    let scored = score_rollout(&student, &student, &rollout, 3).unwrap();
    let steps: Vec<_> = scored.scored_steps().unwrap().iter().collect();
    let ratio = diagnostics::overlap_ratio(&steps).unwrap();
    let mass = diagnostics::overlap_mass(&steps, opdlab_core::Side::Student).unwrap();
    let top1_mass: f64 = steps
        .iter()
        .map(|s| s.student_dist.get(s.student_topk[0]) + s.student_dist.get(s.student_topk[1]) + s.student_dist.get(s.student_topk[2]))
        .sum::<f64>()
        / steps.len() as f64;
    let gap: f64 = steps
        .iter()
        .map(|s| diagnostics::entropy_gap(&s.student_dist, &s.teacher_dist))
        .sum();
    let trivial = ratio == 1.0 && gap == 0.0 && (mass - top1_mass).abs() < 1e-12;
    if !trivial {
        ok = false;
    }
    detail.push(format!("identity trivials: ratio {ratio}, gap {gap}, mass dev {:.1e}", (mass - top1_mass).abs()));

    report("criterion 4 (metric identities)", ok, &detail.join("; "));
    assert!(ok, "{}", detail.join("; "));
}

/// Criterion 5: successful-run signature on pattern_match at k=4.
#[test]
fn criterion_05_successful_run_signature() {
    let start = Instant::now();
    let log = pattern_match_run();
    let overlap_ma = log.moving_average(10, |s| s.overlap_ratio);
    let gap_ma = log.moving_average(10, |s| s.entropy_gap);
    let overlap_gain = overlap_ma.last().unwrap() - overlap_ma.first().unwrap();
    let gap_decreased = gap_ma.last().unwrap() < gap_ma.first().unwrap();
    let acc_gain = log.final_accuracy() - log.initial_accuracy();
    let recovery = log.evals.last().unwrap().gap_recovery_rate.unwrap_or(f64::NAN);
    let elapsed = start.elapsed();
    let passed = overlap_gain >= 0.1 && gap_decreased && acc_gain >= 0.1 && recovery >= 0.5 && elapsed.as_secs_f64() < 180.0;
    report(
        "criterion 5 (successful-run signature)",
        passed,
        &format!(
            "overlap gain {overlap_gain:.3} (>=0.1), entropy gap {:.3}->{:.3}, accuracy +{acc_gain:.3} (>=0.1), gap recovery {recovery:.2} (>=0.5), runtime {elapsed:.1?}",
            gap_ma.first().unwrap(),
            gap_ma.last().unwrap()
        ),
    );
    assert!(passed);
}

/// Criterion 6: failing-run signature on pattern_mismatch under the
/// matched budget.
#[test]
fn criterion_06_failing_run_signature() {
    let matched = pattern_match_run();
    let match_ma = matched.moving_average(10, |s| s.overlap_ratio);
    let match_gain = match_ma.last().unwrap() - match_ma.first().unwrap();

    let mismatch = preset(ScenarioKind::PatternMismatch);
    let log = opd_train(&mismatch, &dynamics_config(42, SupportRule::StudentTopK(4), 4)).unwrap();
    let ma = log.moving_average(10, |s| s.overlap_ratio);
    let gain = ma.last().unwrap() - ma.first().unwrap();
    let acc_gain = log.final_accuracy() - log.initial_accuracy();
    let passed = gain < match_gain / 2.0 && acc_gain < 0.05;
    report(
        "criterion 6 (failing-run signature)",
        passed,
        &format!("overlap gain {gain:.3} (< {:.3}), accuracy gain {acc_gain:.3} (< 0.05)", match_gain / 2.0),
    );
    assert!(passed);
}

/// Criterion 7: overlap sufficiency in the support ablation. The ablation
/// runs at k=64, where the shared top-k region carries essentially all of
/// both models' probability mass (the regime the finding presumes).
#[test]
fn criterion_07_overlap_sufficiency() {
    let pm = preset(ScenarioKind::PatternMatch);
    let logs = run_support_ablation(&pm, &dynamics_config(42, SupportRule::StudentTopK(64), 64)).unwrap();
    let acc: Vec<f64> = logs.iter().map(|(_, l)| l.final_accuracy()).collect();
    let (student, overlap, non_overlap) = (acc[0], acc[1], acc[2]);
    let seeds_shared = logs.iter().all(|(_, l)| l.config.master_seed == 42);
    let passed = seeds_shared && (overlap - student).abs() <= 0.05 && overlap >= non_overlap + 0.05;
    report(
        "criterion 7 (overlap sufficiency)",
        passed,
        &format!("student {student:.3}, overlap {overlap:.3}, non-overlap {non_overlap:.3}"),
    );
    assert!(passed);
}

/// Criterion 8: reverse distillation regresses the student to the weaker
/// teacher's accuracy.
#[test]
fn criterion_08_reverse_distillation() {
    let rd = preset(ScenarioKind::ReverseDistill);
    let log = opd_train(&rd, &dynamics_config(7, SupportRule::StudentTopK(16), 16)).unwrap();
    let final_acc = log.final_accuracy();
    let regressed_below_start = final_acc < log.initial_accuracy();
    let passed = (final_acc - log.teacher_accuracy).abs() <= 0.05 && regressed_below_start;
    report(
        "criterion 8 (reverse distillation)",
        passed,
        &format!(
            "student {:.3} -> {final_acc:.3}, teacher {:.3}",
            log.initial_accuracy(),
            log.teacher_accuracy
        ),
    );
    assert!(passed);
}

/// Criterion 9: cold-start SFT raises initial overlap and final accuracy
/// on the otherwise-failing pattern_mismatch preset.
#[test]
fn criterion_09_cold_start_recovery() {
    let pmm = preset(ScenarioKind::PatternMismatch);
    let cfg = dynamics_config(23, SupportRule::StudentTopK(16), 16);
    let plain = opd_train(&pmm, &cfg).unwrap();
    let (warmed, _) = cold_start_sft(&pmm.student, &pmm.teacher, &pmm.aligned_prompts, 600, 600, 12.0, 32, 555).unwrap();
    let mut warm_preset = pmm.clone();
    warm_preset.student = warmed;
    let warm = opd_train(&warm_preset, &cfg).unwrap();
    let overlap_up = warm.snapshots[0].overlap_ratio > plain.snapshots[0].overlap_ratio;
    let acc_up = warm.final_accuracy() >= plain.final_accuracy() + 0.05;
    let passed = overlap_up && acc_up;
    report(
        "criterion 9 (cold-start recovery)",
        passed,
        &format!(
            "step-0 overlap {:.3} vs {:.3}, final accuracy {:.3} vs {:.3}",
            warm.snapshots[0].overlap_ratio,
            plain.snapshots[0].overlap_ratio,
            warm.final_accuracy(),
            plain.final_accuracy()
        ),
    );
    assert!(passed);
}

/// Criterion 10: teacher-aligned prompts depress final student entropy
/// monotonically in the mixing weight.
#[test]
fn criterion_10_prompt_alignment_entropy() {
    let pm = preset(ScenarioKind::PatternMatch);
    let mut finals = Vec::new();
    for lambda in [0.0, 0.5, 1.0] {
        let mut cfg = dynamics_config(29, SupportRule::StudentTopK(16), 16);
        cfg.lambda = lambda;
        let log = opd_train(&pm, &cfg).unwrap();
        finals.push(log.snapshots.last().unwrap().entropy_student);
    }
    let passed = finals[2] < finals[1] && finals[1] < finals[0];
    report(
        "criterion 10 (prompt alignment entropy)",
        passed,
        &format!(
            "final student entropy: lambda=0: {:.3}, lambda=0.5: {:.3}, lambda=1: {:.3}",
            finals[0], finals[1], finals[2]
        ),
    );
    assert!(passed);
}

/// Criterion 11: teacher-continuation gain decays with prefix depth and
/// teacher entropy is elevated in the suffix bins.
#[test]
fn criterion_11_depth_degradation() {
    let dd = preset(ScenarioKind::DepthDrift);
    let mut cfg = dynamics_config(17, SupportRule::StudentTopK(16), 16);
    cfg.max_response_len = 44;
    let probe = run_depth_probe(&dd, &cfg, &[0, 4, 8, 14], 1400).unwrap();
    let gains: Vec<f64> = probe.gains.iter().map(|g| g.gain).collect();
    let enough = probe.gains.iter().all(|g| g.used >= 500);
    let weakly_decreasing = gains.windows(2).all(|w| w[1] <= w[0]);
    let bins: Vec<_> = probe.profile.bins.iter().filter(|b| b.count >= 30).collect();
    let third = bins.len() / 3;
    let prefix: f64 = bins[..third].iter().map(|b| b.teacher_mean_entropy).sum::<f64>() / third as f64;
    let suffix: f64 = bins[bins.len() - third..].iter().map(|b| b.teacher_mean_entropy).sum::<f64>() / third as f64;
    let passed = enough && weakly_decreasing && suffix > prefix;
    report(
        "criterion 11 (depth degradation)",
        passed,
        &format!(
            "gains {:?} over >=500 rollouts/depth, teacher entropy prefix {prefix:.2} vs suffix {suffix:.2}",
            gains.iter().map(|g| format!("{g:.3}")).collect::<Vec<_>>()
        ),
    );
    assert!(passed);
}

/// Criterion 12: sequence mean reward separates correct from incorrect
/// rollouts under a knowledgeable teacher; identity control sits at 0.5.
#[test]
fn criterion_12_reward_separation() {
    let nk = preset(ScenarioKind::NewKnowledge);
    let cfg = dynamics_config(11, SupportRule::StudentTopK(16), 16);
    let sep = run_reward_separation(&nk, &cfg, 2000).unwrap();
    let auroc = sep.auroc.unwrap_or(f64::NAN);

    let mut control_preset = nk.clone();
    control_preset.teacher = control_preset.student.clone();
    let control = run_reward_separation(&control_preset, &cfg, 2000).unwrap();
    let control_auroc = control.auroc.unwrap_or(f64::NAN);

    let passed = auroc > 0.6 && (control_auroc - 0.5).abs() <= 0.05;
    report(
        "criterion 12 (reward separation)",
        passed,
        &format!("AUROC {auroc:.3} (> 0.6), identity control {control_auroc:.3} (0.5 +/- 0.05)"),
    );
    assert!(passed);
}

/// Criterion 13: Top-1 degeneracy in the k sweep.
///
/// The first clause holds. The second clause cannot hold under the
/// renormalized subset-KL objective: a top-1 support renormalizes both
/// distributions to matching point masses, so the loss and its gradient
/// vanish identically in the parameters, the Top-1 policy never moves, and
/// its entropy trace is flat batch noise while any training-active run
/// drifts by orders of magnitude more. The assertion is kept as stated and
/// is expected to fail; see README "Known limitations".
#[test]
fn criterion_13_top1_degeneracy() {
    let pm = preset(ScenarioKind::PatternMatch);
    let logs = run_k_sweep(&pm, &dynamics_config(19, SupportRule::StudentTopK(16), 16), &[1, 16]).unwrap();
    let by_label = |label: &str| logs.iter().find(|(l, _)| l == label).map(|(_, log)| log).unwrap();
    let top1 = by_label("top1");
    let top16 = by_label("top16");
    let sampled = by_label("sampled");

    let max_dev = |log: &RunLog| {
        let values: Vec<f64> = log.snapshots.iter().map(|s| s.entropy_student).collect();
        let mut sorted = values.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let median = sorted[sorted.len() / 2];
        values.iter().map(|v| (v - median).abs()).fold(0.0f64, f64::max)
    };
    let clause_a = sampled.final_accuracy() >= top1.final_accuracy();
    let dev1 = max_dev(top1);
    let dev16 = max_dev(top16);
    let clause_b = dev1 > dev16;
    let passed = clause_a && clause_b;
    report(
        "criterion 13 (top-1 degeneracy)",
        passed,
        &format!(
            "sampled {:.3} >= top1 {:.3}: {clause_a}; top1 entropy max-dev {dev1:.4} > top16 {dev16:.4}: {clause_b} \
             (clause b is unattainable under renormalized top-1: loss == 0 identically, policy frozen; see README)",
            sampled.final_accuracy(),
            top1.final_accuracy()
        ),
    );
    assert!(passed, "clause_a {clause_a}, clause_b {clause_b} (clause b cannot hold: renormalized top-1 loss is identically zero)");
}

/// Criterion 14 (core level): identical seeds give byte-identical logs at
/// any parallelism. File-level determinism through the CLI is asserted in
/// the CLI crate's acceptance suite.
#[test]
fn criterion_14_determinism() {
    let pm = preset(ScenarioKind::PatternMatch);
    let mut cfg = dynamics_config(3, SupportRule::StudentTopK(4), 4);
    cfg.steps = 25;
    cfg.batch_prompts = 16;
    let run_with_threads = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| opd_train(&pm, &cfg).unwrap())
    };
    let serial = run_with_threads(1);
    let parallel = run_with_threads(4);
    let rerun = run_with_threads(4);
    let lines = |log: &RunLog| {
        log.snapshots
            .iter()
            .map(|s| serde_json::to_string(s).unwrap())
            .collect::<Vec<_>>()
            .join("\n")
    };
    let identical_parallelism = lines(&serial) == lines(&parallel);
    let identical_rerun = lines(&parallel) == lines(&rerun);
    let evals_identical = serde_json::to_string(&serial.evals).unwrap() == serde_json::to_string(&parallel.evals).unwrap();
    let passed = identical_parallelism && identical_rerun && evals_identical;
    report(
        "criterion 14 (determinism, core)",
        passed,
        &format!(
            "threads 1 vs 4 identical: {identical_parallelism}, rerun identical: {identical_rerun}, evals identical: {evals_identical}"
        ),
    );
    assert!(passed);
}
