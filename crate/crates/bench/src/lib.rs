//! Shared fixtures for the benchmark targets.

use opdlab_core::policy::{score_rollout, Rollout, TabularSoftmaxPolicy};
use opdlab_core::rng::derive_rng;
use opdlab_core::scenarios::{make_scenario, ScenarioKind, ScenarioParams, ScenarioPreset};

/// A pattern_match preset with a reduced corpus, plus a scored batch.
pub fn fixture() -> (ScenarioPreset, Vec<Rollout>) {
    let params = ScenarioParams { corpus_per_prompt: 25, ..ScenarioParams::default() };
    let preset = make_scenario(ScenarioKind::PatternMatch, &params).expect("preset");
    let batch = scored_batch(&preset.student, &preset.teacher, &preset, 64, 16);
    (preset, batch)
}

pub fn scored_batch(
    student: &TabularSoftmaxPolicy,
    teacher: &TabularSoftmaxPolicy,
    preset: &ScenarioPreset,
    count: usize,
    k: usize,
) -> Vec<Rollout> {
    (0..count)
        .map(|i| {
            let prompt = &preset.eval_prompts[i % preset.eval_prompts.len()];
            let mut rng = derive_rng(77, &[i as u64]);
            let rollout = student.sample_rollout(prompt, 32, &mut rng).expect("rollout");
            score_rollout(student, teacher, &rollout, k).expect("scored")
        })
        .collect()
}
