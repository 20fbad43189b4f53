//! Modular-sum tasks with verifiable answers and style dialects.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ScenarioError;
use crate::policy::{Rollout, TokenId, Vocabulary};

/// Parameters of [`generate_task`].
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TaskParams {
    pub seed: u64,
    pub vocab_size: u32,
    pub num_operands: usize,
    pub modulus: usize,
    pub num_styles: usize,
    /// Carrier phase stages per style; deep positions saturate at the last
    /// phase, which is what makes position-dependent familiarity expressible.
    pub phases: usize,
    /// Interchangeable carrier tokens per (phase, value) class.
    pub variety: usize,
}

impl Default for TaskParams {
    fn default() -> Self {
        Self {
            seed: 0,
            vocab_size: 53,
            num_operands: 2,
            modulus: 5,
            num_styles: 2,
            phases: 2,
            variety: 2,
        }
    }
}

/// One reasoning dialect: a contiguous block of carrier tokens laid out as
/// `phases x modulus x variety`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StyleDialect {
    base: TokenId,
    phases: usize,
    modulus: usize,
    variety: usize,
}

impl StyleDialect {
    pub fn carrier(&self, phase: usize, value: usize, variant: usize) -> TokenId {
        debug_assert!(phase < self.phases && value < self.modulus && variant < self.variety);
        self.base + ((phase * self.modulus + value) * self.variety + variant) as TokenId
    }

    /// All carriers of one (phase, value) class.
    pub fn class(&self, phase: usize, value: usize) -> Vec<TokenId> {
        (0..self.variety).map(|j| self.carrier(phase, value, j)).collect()
    }

    pub fn tokens(&self) -> Vec<TokenId> {
        let len = (self.phases * self.modulus * self.variety) as TokenId;
        (self.base..self.base + len).collect()
    }

    /// Decodes a token into (phase, value, variant) if it belongs here.
    pub fn decode(&self, token: TokenId) -> Option<(usize, usize, usize)> {
        let len = (self.phases * self.modulus * self.variety) as TokenId;
        if token < self.base || token >= self.base + len {
            return None;
        }
        let offset = (token - self.base) as usize;
        let variant = offset % self.variety;
        let class = offset / self.variety;
        Some((class / self.modulus, class % self.modulus, variant))
    }

    pub fn phases(&self) -> usize {
        self.phases
    }

    pub fn variety(&self) -> usize {
        self.variety
    }
}

/// A synthetic task: vocabulary layout plus the deterministic answer map.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SyntheticTask {
    vocab: Vocabulary,
    seed: u64,
    num_operands: usize,
    modulus: usize,
    styles: Vec<StyleDialect>,
    answer_base: TokenId,
    operand_base: TokenId,
}

/// Lays out the vocabulary as reserved ids, answer alphabet, operand
/// alphabet, then one disjoint carrier block per style.
pub fn generate_task(params: &TaskParams) -> Result<SyntheticTask, ScenarioError> {
    let m = params.modulus;
    if m == 0 || params.num_styles == 0 || params.phases == 0 || params.variety == 0 || params.num_operands == 0 {
        return Err(ScenarioError::BadParams("all task counts must be positive".into()));
    }
    let per_style = params.phases * m * params.variety;
    let required = 3 + 2 * m + params.num_styles * per_style;
    if (params.vocab_size as usize) < required {
        return Err(ScenarioError::AlphabetTooSmall {
            vocab_size: params.vocab_size,
            required: required as u32,
        });
    }
    let vocab = Vocabulary::with_reserved_prefix(params.vocab_size)?;
    let answer_base = vocab.content_base();
    let operand_base = answer_base + m as TokenId;
    let mut styles = Vec::with_capacity(params.num_styles);
    let mut base = operand_base + m as TokenId;
    for _ in 0..params.num_styles {
        styles.push(StyleDialect {
            base,
            phases: params.phases,
            modulus: m,
            variety: params.variety,
        });
        base += per_style as TokenId;
    }
    Ok(SyntheticTask {
        vocab,
        seed: params.seed,
        num_operands: params.num_operands,
        modulus: m,
        styles,
        answer_base,
        operand_base,
    })
}

impl SyntheticTask {
    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn modulus(&self) -> usize {
        self.modulus
    }

    pub fn num_operands(&self) -> usize {
        self.num_operands
    }

    pub fn styles(&self) -> &[StyleDialect] {
        &self.styles
    }

    pub fn style(&self, id: usize) -> &StyleDialect {
        &self.styles[id]
    }

    pub fn operand_token(&self, value: usize) -> TokenId {
        debug_assert!(value < self.modulus);
        self.operand_base + value as TokenId
    }

    pub fn operand_value(&self, token: TokenId) -> Option<usize> {
        if token >= self.operand_base && token < self.operand_base + self.modulus as TokenId {
            Some((token - self.operand_base) as usize)
        } else {
            None
        }
    }

    pub fn answer_token(&self, value: usize) -> TokenId {
        debug_assert!(value < self.modulus);
        self.answer_base + value as TokenId
    }

    /// Sum of the prompt's operand values mod `modulus`, mapped into the
    /// answer alphabet. Total over valid prompts.
    pub fn answer_fn(&self, prompt: &[TokenId]) -> Result<TokenId, ScenarioError> {
        let mut total = 0usize;
        let mut operands = 0usize;
        for &tok in prompt {
            if let Some(v) = self.operand_value(tok) {
                total += v;
                operands += 1;
            }
        }
        if operands != self.num_operands {
            return Err(ScenarioError::BadParams(format!(
                "prompt has {operands} operand tokens, task expects {}",
                self.num_operands
            )));
        }
        Ok(self.answer_token(total % self.modulus))
    }

    /// Every prompt, in lexicographic operand order.
    pub fn all_prompts(&self) -> Vec<Vec<TokenId>> {
        let m = self.modulus;
        let n = self.num_operands;
        let count = m.pow(n as u32);
        let mut prompts = Vec::with_capacity(count);
        for idx in 0..count {
            let mut prompt = Vec::with_capacity(n);
            let mut rest = idx;
            for _ in 0..n {
                prompt.push(self.operand_token(rest % m));
                rest /= m;
            }
            prompt.reverse();
            prompts.push(prompt);
        }
        prompts
    }

    /// True iff the rollout emits the answer marker immediately followed by
    /// the correct answer token, before any stop token.
    pub fn label_correctness(&self, rollout: &Rollout) -> bool {
        let answer = match self.answer_fn(&rollout.prompt) {
            Ok(a) => a,
            Err(_) => return false,
        };
        let marker = self.vocab.answer_marker();
        let stop = self.vocab.stop();
        let generated = &rollout.generated;
        for (i, &tok) in generated.iter().enumerate() {
            if tok == stop {
                return false;
            }
            if tok == marker {
                if let Some(&next) = generated.get(i + 1) {
                    if next == answer {
                        return true;
                    }
                }
            }
        }
        false
    }
}

/// Where a prompt set came from, relative to the teacher's training data.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum PromptOrigin {
    TeacherAligned,
    OutOfDistribution,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PromptSet {
    pub prompts: Vec<Vec<TokenId>>,
    pub origin: PromptOrigin,
}

impl PromptSet {
    pub fn new(prompts: Vec<Vec<TokenId>>, origin: PromptOrigin) -> Self {
        Self { prompts, origin }
    }

    pub fn len(&self) -> usize {
        self.prompts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prompts.is_empty()
    }
}

/// Prompt source for training: a single set or a Bernoulli mixture.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub enum PromptSampler {
    Single(PromptSet),
    Mixed {
        aligned: PromptSet,
        ood: PromptSet,
        lambda: f64,
    },
}

impl PromptSampler {
    pub fn draw<'a>(&'a self, rng: &mut ChaCha8Rng) -> &'a [TokenId] {
        match self {
            PromptSampler::Single(set) => {
                let idx = rng.random_range(0..set.prompts.len());
                &set.prompts[idx]
            }
            PromptSampler::Mixed { aligned, ood, lambda } => {
                let use_aligned = rng.random::<f64>() < *lambda;
                let set = if use_aligned { aligned } else { ood };
                let idx = rng.random_range(0..set.prompts.len());
                &set.prompts[idx]
            }
        }
    }
}

/// Mixture drawing aligned prompts with probability `lambda`.
pub fn mix_prompts(aligned: PromptSet, ood: PromptSet, lambda: f64) -> Result<PromptSampler, ScenarioError> {
    if !(0.0..=1.0).contains(&lambda) || lambda.is_nan() {
        return Err(ScenarioError::LambdaOutOfRange(lambda));
    }
    if lambda > 0.0 && aligned.is_empty() {
        return Err(ScenarioError::EmptyPromptSet);
    }
    if lambda < 1.0 && ood.is_empty() {
        return Err(ScenarioError::EmptyPromptSet);
    }
    Ok(PromptSampler::Mixed { aligned, ood, lambda })
}
