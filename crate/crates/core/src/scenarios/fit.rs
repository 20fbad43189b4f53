//! Maximum-likelihood fitting of tabular policies from corpora.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::ScenarioError;
use crate::policy::{Context, TabularSoftmaxPolicy, TokenId, Vocabulary};
use crate::rng::derive_rng;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FitParams {
    pub order: usize,
    /// Additive smoothing on next-token counts. Must be positive so every
    /// logit stays finite.
    pub smoothing: f64,
    /// Scale of the deterministic per-entry logit jitter. Independently
    /// fitted policies would otherwise share bitwise-equal flat tails, and
    /// the id tie-break would make their top-k sets coincide spuriously.
    pub jitter: f64,
    pub seed: u64,
}

impl FitParams {
    pub fn new(order: usize, smoothing: f64, seed: u64) -> Self {
        Self { order, smoothing, jitter: 1e-4, seed }
    }
}

/// Fits `logits = ln(counts + smoothing)` per visited context, with a small
/// seeded jitter. Unseen contexts back off to the corpus unigram row.
pub fn fit_policy_mle(
    data: &[(Vec<TokenId>, Vec<TokenId>)],
    vocab: &Vocabulary,
    params: &FitParams,
) -> Result<TabularSoftmaxPolicy, ScenarioError> {
    if data.is_empty() || data.iter().all(|(_, seq)| seq.is_empty()) {
        return Err(ScenarioError::EmptyData);
    }
    if params.smoothing <= 0.0 {
        return Err(ScenarioError::BadParams("smoothing must be positive".into()));
    }
    if params.order == 0 {
        return Err(ScenarioError::BadParams("order must be positive".into()));
    }
    let m = vocab.size() as usize;
    let pad = vocab.pad();
    let mut counts: std::collections::BTreeMap<Context, Vec<f64>> = std::collections::BTreeMap::new();
    let mut unigram = vec![0.0f64; m];
    for (prompt, sequence) in data {
        for (t, &target) in sequence.iter().enumerate() {
            if target as usize >= m {
                return Err(ScenarioError::BadParams(format!("token {target} outside vocabulary")));
            }
            let ctx = Context::from_prefix(prompt, sequence, t, params.order, pad);
            counts.entry(ctx).or_insert_with(|| vec![0.0; m])[target as usize] += 1.0;
            unigram[target as usize] += 1.0;
        }
    }

    let mut rng = derive_rng(params.seed, &[0x0F17]);
    let mut policy = TabularSoftmaxPolicy::new(vocab.clone(), params.order, 1.0);
    for (ctx, row_counts) in counts {
        let logits: Vec<f64> = row_counts
            .iter()
            .map(|c| (c + params.smoothing).ln() + params.jitter * standard_normal(&mut rng))
            .collect();
        policy.set_row(ctx, logits)?;
    }
    let default: Vec<f64> = unigram
        .iter()
        .map(|c| (c + params.smoothing).ln() + params.jitter * standard_normal(&mut rng))
        .collect();
    policy.set_default_logits(default)?;
    Ok(policy)
}

fn standard_normal(rng: &mut rand_chacha::ChaCha8Rng) -> f64 {
    // Box-Muller; one value per call keeps derivation order obvious.
    let u1: f64 = rng.random::<f64>().max(f64::MIN_POSITIVE);
    let u2: f64 = rng.random();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}
