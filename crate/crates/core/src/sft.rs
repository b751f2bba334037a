//! Supervised initialization: token-level cross-entropy on parallel data,
//! with early stopping on held-out exact match.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{CorpusError, ParallelExample, TokenId, Vocab};
use crate::eval::{evaluate, EvalError};
use crate::grad::Sgd;
use crate::policy::{batch_weighted_grad, logprob_seq, PolicyError, PolicyParams, Prompt, WeightedSequence};
use crate::reward::ChrF;

#[derive(Debug, thiserror::Error)]
pub enum SftError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SftConfig {
    /// Upper bound on passes over the training set.
    pub max_epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub max_grad_norm: Option<f64>,
    /// Epochs without held-out improvement before stopping. An epoch
    /// improves when its exact match is higher, or equal with a lower
    /// held-out loss.
    pub patience: usize,
    pub seed: u64,
}

impl Default for SftConfig {
    fn default() -> Self {
        Self { max_epochs: 100, batch_size: 16, learning_rate: 0.5, max_grad_norm: Some(1.0), patience: 5, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Mean training cross-entropy in nats per predicted token.
    pub train_loss: f64,
    pub heldout_exact_match: Option<f64>,
    pub heldout_loss: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct SftOutcome {
    /// Parameters of the best held-out epoch (the last epoch without a
    /// held-out set).
    pub params: PolicyParams,
    pub log: Vec<EpochLog>,
    pub best_epoch: usize,
}

/// A training pair as token ids: rendered prompt and gold plus
/// end-of-sequence.
pub struct EncodedPair {
    pub prompt: Vec<TokenId>,
    pub target: Vec<TokenId>,
}

pub fn encode_pairs(vocab: &Vocab, examples: &[ParallelExample]) -> Result<Vec<EncodedPair>, SftError> {
    examples
        .iter()
        .map(|ex| {
            let prompt = Prompt::render(ex.id.clone(), vocab, &ex.direction, &ex.source)?.tokens;
            let mut target = vocab.encode(ex.gold()?)?;
            target.push(Vocab::EOS_ID);
            Ok(EncodedPair { prompt, target })
        })
        .collect()
}

/// Mean cross-entropy in nats per token over `pairs`.
pub fn token_loss(params: &PolicyParams, pairs: &[EncodedPair]) -> Result<f64, SftError> {
    let (mut total, mut n) = (0.0, 0usize);
    for p in pairs {
        let lp = logprob_seq(params, &p.prompt, &p.target)?;
        total -= lp.iter().sum::<f64>();
        n += lp.len();
    }
    Ok(if n == 0 { 0.0 } else { total / n as f64 })
}

/// One optimizer step on `−(1/N) Σ log π(gold)` over the batch, with `N`
/// the number of predicted tokens in the batch. Returns the batch loss.
pub fn sft_step(params: &mut PolicyParams, batch: &[&EncodedPair], opt: &Sgd) -> Result<f64, SftError> {
    let n: usize = batch.iter().map(|p| p.target.len()).sum();
    let w = -1.0 / n as f64;
    let items: Vec<WeightedSequence<'_>> = batch
        .iter()
        .map(|p| WeightedSequence { prompt: &p.prompt, target: &p.target, weights: vec![w; p.target.len()] })
        .collect();
    let (grads, logprobs) = batch_weighted_grad(params, &items)?;
    params.apply(&grads, opt)?;
    Ok(-logprobs.iter().flatten().sum::<f64>() / n as f64)
}

pub fn train_sft(
    init: PolicyParams,
    vocab: &Vocab,
    train: &[ParallelExample],
    heldout: &[ParallelExample],
    config: &SftConfig,
) -> Result<SftOutcome, SftError> {
    if config.batch_size == 0 {
        return Err(SftError::Config("batch size must be at least 1".into()));
    }
    if train.is_empty() {
        return Err(SftError::Config("training corpus is empty".into()));
    }
    let pairs = encode_pairs(vocab, train)?;
    let heldout_pairs = encode_pairs(vocab, heldout)?;
    let opt = Sgd { lr: config.learning_rate, max_grad_norm: config.max_grad_norm };
    let scorer = ChrF::default();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..pairs.len()).collect();

    let mut params = init;
    let mut best = (params.clone(), 0usize, (f64::NEG_INFINITY, f64::INFINITY));
    let mut log = Vec::new();
    let mut stale = 0;
    for epoch in 1..=config.max_epochs {
        order.shuffle(&mut rng);
        let (mut loss_sum, mut tokens) = (0.0, 0usize);
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<&EncodedPair> = chunk.iter().map(|&i| &pairs[i]).collect();
            let n: usize = batch.iter().map(|p| p.target.len()).sum();
            loss_sum += sft_step(&mut params, &batch, &opt)? * n as f64;
            tokens += n;
        }
        let train_loss = loss_sum / tokens as f64;
        let (heldout_exact_match, heldout_loss) = if heldout.is_empty() {
            (None, None)
        } else {
            (
                Some(evaluate(&params, vocab, heldout, &scorer)?.exact_match),
                Some(token_loss(&params, &heldout_pairs)?),
            )
        };
        log::info!("sft epoch {epoch}: loss {train_loss:.4} heldout exact match {heldout_exact_match:?} loss {heldout_loss:?}");
        log.push(EpochLog { epoch, train_loss, heldout_exact_match, heldout_loss });
        match heldout_exact_match.zip(heldout_loss) {
            Some((em, loss)) if em > best.2 .0 || (em == best.2 .0 && loss < best.2 .1) => {
                best = (params.clone(), epoch, (em, loss));
                stale = 0;
            }
            Some(_) => {
                stale += 1;
                if stale >= config.patience {
                    break;
                }
            }
            None => best = (params.clone(), epoch, (f64::NEG_INFINITY, f64::INFINITY)),
        }
    }
    let (params, best_epoch, _) = best;
    Ok(SftOutcome { params, log, best_epoch })
}
