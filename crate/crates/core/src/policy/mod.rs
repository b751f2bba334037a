//! The actor: a small autoregressive model over a [`Vocab`] with
//! teacher-forced log-probabilities, temperature sampling, exact per-position
//! KL against a snapshot, and checkpointing.

pub mod checkpoint;
mod model;
mod params;
#[cfg(test)]
mod tests;

use std::path::PathBuf;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

pub use model::{next_token_logprobs, weighted_logprob_grad};
pub use params::{ParamGrads, ParamTensor, PolicyHyper, PolicyParams};

use crate::corpus::{direction_token, CorpusError, TokenId, Vocab, SEP};
use crate::grad::GradError;
use crate::grad::kernels::log_softmax_in_place;
use model::{check_tokens, Decoder};

/// Temperatures at or below this are decoded greedily.
pub const GREEDY_TEMPERATURE: f64 = 1e-6;

#[derive(Debug, thiserror::Error)]
pub enum PolicyError {
    #[error(transparent)]
    Grad(#[from] GradError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error("empty prompt")]
    EmptyPrompt,
    #[error("empty target")]
    EmptyTarget,
    #[error("sequence of length {len} exceeds context length {context}")]
    ContextOverflow { len: usize, context: usize },
    #[error("token id {id} outside vocabulary of size {vocab}")]
    TokenOutOfVocab { id: TokenId, vocab: usize },
    #[error("{weights} weights for a target of length {target}")]
    WeightLength { weights: usize, target: usize },
    #[error("temperature must be finite and non-negative, got {0}")]
    BadTemperature(f64),
    #[error("at least one sample is required")]
    NoSamples,
    #[error("invalid checkpoint: {0}")]
    Checkpoint(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

/// A rendered prompt `<2dir> src... <sep>`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Prompt {
    pub id: String,
    pub tokens: Vec<TokenId>,
}

impl Prompt {
    pub fn render(id: impl Into<String>, vocab: &Vocab, direction: &str, source: &[String]) -> Result<Self, CorpusError> {
        let mut symbols = Vec::with_capacity(source.len() + 2);
        symbols.push(direction_token(direction));
        symbols.extend(source.iter().cloned());
        symbols.push(SEP.to_string());
        Ok(Self { id: id.into(), tokens: vocab.encode(&symbols)? })
    }

    pub fn source_len(&self) -> usize {
        self.tokens.len().saturating_sub(2)
    }

    /// Decode cap `2·|source| + 8`, clipped to the room left in the context.
    pub fn max_response_len(&self, context_len: usize) -> usize {
        (2 * self.source_len() + 8).min(context_len.saturating_sub(self.tokens.len()))
    }
}

/// One drafted response together with its log-probabilities under the
/// policy that sampled it.
#[derive(Debug, Clone, PartialEq)]
pub struct Hypothesis {
    pub prompt_id: String,
    /// Sampled tokens, including the terminating end-of-sequence if emitted.
    pub tokens: Vec<TokenId>,
    /// `log π_old(token_t | ·)` at temperature 1, one per token.
    pub old_logprobs: Vec<f64>,
    /// 1-based index among the k samples of this prompt.
    pub sample_index: usize,
}

impl Hypothesis {
    /// Tokens without the trailing end-of-sequence.
    pub fn content(&self) -> &[TokenId] {
        strip_eos(&self.tokens)
    }

    pub fn ended(&self) -> bool {
        self.tokens.last() == Some(&Vocab::EOS_ID)
    }
}

pub fn strip_eos(tokens: &[TokenId]) -> &[TokenId] {
    match tokens.split_last() {
        Some((&Vocab::EOS_ID, rest)) => rest,
        _ => tokens,
    }
}

/// Frozen parameters used as the old policy of a rollout.
#[derive(Debug, Clone)]
pub struct PolicySnapshot {
    params: Arc<PolicyParams>,
    version: u64,
}

impl PolicySnapshot {
    pub fn take(params: &PolicyParams, version: u64) -> Self {
        Self { params: Arc::new(params.clone()), version }
    }

    pub fn params(&self) -> &PolicyParams {
        &self.params
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn restore(&self) -> PolicyParams {
        (*self.params).clone()
    }
}

fn decoder_after_prompt<'a>(params: &'a PolicyParams, prompt: &Prompt) -> Result<(Decoder<'a>, Vec<f64>), PolicyError> {
    if prompt.tokens.is_empty() {
        return Err(PolicyError::EmptyPrompt);
    }
    check_tokens(params, &prompt.tokens)?;
    let context = params.hyper().context_len;
    if prompt.tokens.len() >= context {
        return Err(PolicyError::ContextOverflow { len: prompt.tokens.len() + 1, context });
    }
    let mut dec = Decoder::new(params);
    let mut logits = Vec::new();
    for (row, &tok) in prompt.tokens.iter().enumerate() {
        logits = dec.feed(tok, row);
    }
    Ok((dec, logits))
}

fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in xs.iter().enumerate() {
        if *x > xs[best] {
            best = i;
        }
    }
    best
}

fn draw(logits: &[f64], temperature: f64, rng: &mut ChaCha8Rng) -> usize {
    if temperature <= GREEDY_TEMPERATURE {
        return argmax(logits);
    }
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = logits.iter().map(|l| ((l - max) / temperature).exp()).collect();
    let total: f64 = weights.iter().sum();
    let mut u = rng.gen::<f64>() * total;
    for (i, w) in weights.iter().enumerate() {
        u -= w;
        if u < 0.0 {
            return i;
        }
    }
    weights.iter().rposition(|w| *w > 0.0).unwrap_or(0)
}

/// Draws `k` hypotheses for `prompt`. Sampling uses `logits / temperature`;
/// the recorded log-probabilities are always those at temperature 1.
pub fn sample_k(
    params: &PolicyParams,
    prompt: &Prompt,
    k: usize,
    temperature: f64,
    seed: u64,
) -> Result<Vec<Hypothesis>, PolicyError> {
    if k == 0 {
        return Err(PolicyError::NoSamples);
    }
    if !temperature.is_finite() || temperature < 0.0 {
        return Err(PolicyError::BadTemperature(temperature));
    }
    let context = params.hyper().context_len;
    let cap = prompt.max_response_len(context);
    let (base, first) = decoder_after_prompt(params, prompt)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(k);
    for index in 1..=k {
        let mut dec = base.clone();
        let mut logits = first.clone();
        let mut tokens = Vec::new();
        let mut logprobs = Vec::new();
        loop {
            let tok = draw(&logits, temperature, &mut rng);
            log_softmax_in_place(&mut logits);
            tokens.push(tok);
            logprobs.push(logits[tok]);
            if tok == Vocab::EOS_ID || tokens.len() >= cap {
                break;
            }
            logits = dec.feed(tok, context + tokens.len());
        }
        out.push(Hypothesis { prompt_id: prompt.id.clone(), tokens, old_logprobs: logprobs, sample_index: index });
    }
    Ok(out)
}

/// Argmax decode; the result includes the end-of-sequence token if emitted.
pub fn greedy_decode(params: &PolicyParams, prompt: &Prompt) -> Result<Vec<TokenId>, PolicyError> {
    let mut h = sample_k(params, prompt, 1, 0.0, 0)?;
    Ok(h.pop().expect("one sample").tokens)
}

/// Teacher-forced `log π(target_t | prompt, target_<t)`.
pub fn logprob_seq(params: &PolicyParams, prompt: &[TokenId], target: &[TokenId]) -> Result<Vec<f64>, PolicyError> {
    let dists = next_token_logprobs(params, prompt, target)?;
    Ok(dists.iter().zip(target).map(|(d, &t)| d[t]).collect())
}

/// Exact `KL(π_params ‖ π_snapshot)` over the vocabulary at every target
/// position.
pub fn kl_per_position(
    params: &PolicyParams,
    snapshot: &PolicyParams,
    prompt: &[TokenId],
    target: &[TokenId],
) -> Result<Vec<f64>, PolicyError> {
    let p = next_token_logprobs(params, prompt, target)?;
    let q = next_token_logprobs(snapshot, prompt, target)?;
    Ok(p.iter().zip(&q).map(|(lp, lq)| categorical_kl(lp, lq)).collect())
}

/// `Σ_v p_v (ln p_v − ln q_v)` for log-distributions `lp`, `lq`; clamped at 0
/// against rounding.
pub fn categorical_kl(lp: &[f64], lq: &[f64]) -> f64 {
    let kl: f64 = lp
        .iter()
        .zip(lq)
        .map(|(a, b)| {
            let p = a.exp();
            if p == 0.0 {
                0.0
            } else {
                p * (a - b)
            }
        })
        .sum();
    kl.max(0.0)
}

/// One `(prompt, target, per-token weights)` term of a weighted objective.
pub struct WeightedSequence<'a> {
    pub prompt: &'a [TokenId],
    pub target: &'a [TokenId],
    pub weights: Vec<f64>,
}

/// `∇ Σ_i Σ_t w_{i,t} log π(target_{i,t} | ·)`, computed in parallel and
/// reduced in input order so the result is independent of thread count.
/// Also returns the per-token log-probabilities of every sequence.
pub fn batch_weighted_grad(
    params: &PolicyParams,
    items: &[WeightedSequence<'_>],
) -> Result<(ParamGrads, Vec<Vec<f64>>), PolicyError> {
    let parts: Vec<(ParamGrads, Vec<f64>)> = items
        .par_iter()
        .map(|it| weighted_logprob_grad(params, it.prompt, it.target, &it.weights))
        .collect::<Result<_, _>>()?;
    let mut total = ParamGrads::zeros_like(params);
    let mut logprobs = Vec::with_capacity(parts.len());
    for (g, lp) in parts {
        total.add_assign(&g);
        logprobs.push(lp);
    }
    Ok((total, logprobs))
}
