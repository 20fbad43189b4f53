use criterion::{criterion_group, criterion_main, Criterion};
use std::hint::black_box;

use opdlab_bench::{fixture, scored_batch};
use opdlab_core::objectives::{batch_loss, loss_gradient, trajectory_loss, Aggregation, EstimatorMode, SupportRule};
use opdlab_core::rng::derive_rng;
use opdlab_core::trainer::{opd_train, TrainConfig};

fn bench_rollout_and_scoring(c: &mut Criterion) {
    let (preset, _) = fixture();
    let prompt = preset.eval_prompts[0].clone();
    c.bench_function("sample_rollout_len32", |b| {
        b.iter(|| {
            let mut rng = derive_rng(1, &[0]);
            black_box(preset.student.sample_rollout(&prompt, 32, &mut rng).unwrap())
        })
    });
    c.bench_function("score_batch_64x16", |b| {
        b.iter(|| black_box(scored_batch(&preset.student, &preset.teacher, &preset, 64, 16)))
    });
}

fn bench_losses(c: &mut Criterion) {
    let (_, batch) = fixture();
    for rule in [SupportRule::FullVocab, SupportRule::SampledToken, SupportRule::StudentTopK(16)] {
        c.bench_function(&format!("batch_loss_{}", rule.label()), |b| {
            b.iter(|| black_box(batch_loss(&batch, rule, Aggregation::TokenMean).unwrap()))
        });
    }
    c.bench_function("trajectory_loss_full_vocab", |b| {
        b.iter(|| black_box(trajectory_loss(&batch[0], SupportRule::FullVocab, Aggregation::TokenMean).unwrap()))
    });
}

fn bench_gradients(c: &mut Criterion) {
    let (preset, batch) = fixture();
    for rule in [SupportRule::FullVocab, SupportRule::SampledToken, SupportRule::StudentTopK(16)] {
        c.bench_function(&format!("loss_gradient_{}", rule.label()), |b| {
            b.iter(|| {
                black_box(
                    loss_gradient(&preset.student, &batch, rule, EstimatorMode::FixedToken, Aggregation::TokenMean)
                        .unwrap(),
                )
            })
        });
    }
}

fn bench_training_step(c: &mut Criterion) {
    let (preset, _) = fixture();
    let cfg = TrainConfig {
        rule: SupportRule::StudentTopK(16),
        k: 16,
        steps: 1,
        batch_prompts: 64,
        rollouts_per_prompt: 4,
        eval_samples_per_prompt: 1,
        master_seed: 9,
        ..TrainConfig::default()
    };
    c.bench_function("opd_train_single_step", |b| b.iter(|| black_box(opd_train(&preset, &cfg).unwrap())));
}

criterion_group!(benches, bench_rollout_and_scoring, bench_losses, bench_gradients, bench_training_step);
criterion_main!(benches);
