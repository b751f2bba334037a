//! Reinforcement learning from teacher refinements: sample drafts, have a
//! teacher refine them, reward each draft by its closeness to the
//! refinement, and take clipped policy-gradient steps with a KL penalty
//! towards the sampling policy.

mod advantage;
mod metrics;

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use advantage::{clipped_terms, compute_raw_advantages, importance_ratios, normalize_advantages, NormalizedAdvantages};
pub use metrics::{write_metrics_csv, write_plot_csv, MetricsRecord};

use crate::corpus::{contains_span, CorpusError, ParallelExample, Vocab};
use crate::eval::{evaluate, EvalError};
use crate::grad::Sgd;
use crate::policy::{
    batch_weighted_grad, kl_per_position, logprob_seq, sample_k, Hypothesis, ParamGrads, PolicyError, PolicyParams,
    PolicySnapshot, Prompt, WeightedSequence,
};
use crate::refine::{RefineError, RefineRequest, Teacher, TeacherKind};
use crate::reward::{composite_reward, fit_scale_stats, scale_z, semantic_score, BatchScaleStats, EditUnit, RewardError, SemanticScorer};

#[derive(Debug, thiserror::Error)]
pub enum RlError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Reward(#[from] RewardError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Refine(#[from] RefineError),
    #[error("iteration {iteration}: {failed} of {total} refinements failed (limit {limit:.2}); first error: {first}")]
    TeacherFailures { iteration: usize, failed: usize, total: usize, limit: f64, first: String },
    #[error("iteration {iteration}: fewer than two usable rollouts")]
    TooFewRollouts { iteration: usize },
    #[error("rollouts were sampled from snapshot {batch} but the update uses snapshot {snapshot}")]
    SnapshotMismatch { batch: u64, snapshot: u64 },
    #[error("stopped by callback: {0}")]
    Callback(String),
}

/// Where refined targets come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TrainMode {
    /// Refinements of the current drafts (oracle or remote teacher).
    Rlfr,
    /// Static references that ignore the draft.
    FixedRef,
}

impl TrainMode {
    pub fn name(self) -> &'static str {
        match self {
            TrainMode::Rlfr => "rlfr",
            TrainMode::FixedRef => "fixed-ref",
        }
    }

    /// Rejects teacher/mode pairs that would silently change the
    /// experiment.
    pub fn check_teacher(self, teacher: TeacherKind) -> Result<(), RlError> {
        match (self, teacher) {
            (TrainMode::FixedRef, TeacherKind::Fixed) | (TrainMode::Rlfr, TeacherKind::Oracle | TeacherKind::Remote) => {
                Ok(())
            }
            (mode, teacher) => Err(RlError::Config(format!(
                "mode {} cannot use the {} teacher ({})",
                mode.name(),
                teacher.name(),
                match mode {
                    TrainMode::FixedRef => "fixed-ref needs static references",
                    TrainMode::Rlfr => "use mode fixed-ref for static references",
                }
            ))),
        }
    }
}

impl fmt::Display for TrainMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TrainMode {
    type Err = RlError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "rlfr" => Ok(TrainMode::Rlfr),
            "fixed-ref" => Ok(TrainMode::FixedRef),
            other => Err(RlError::Config(format!("unknown mode {other:?} (expected rlfr or fixed-ref)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Samples per prompt.
    pub k: usize,
    /// Prompts per iteration.
    pub batch_size: usize,
    pub iterations: usize,
    /// Weight of the edit reward against the semantic reward.
    pub alpha: f64,
    pub kl_beta: f64,
    pub eps_clip: f64,
    pub eps_stat: f64,
    pub learning_rate: f64,
    pub max_grad_norm: Option<f64>,
    pub inner_epochs: usize,
    pub temperature: f64,
    pub edit_unit: EditUnit,
    pub mode: TrainMode,
    /// Largest tolerated fraction of failed refinements in one iteration.
    pub max_failure_rate: f64,
    /// Held-out evaluation period in iterations; 0 disables it.
    pub eval_every: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            k: 4,
            batch_size: 32,
            iterations: 300,
            alpha: 0.5,
            kl_beta: 0.02,
            eps_clip: 0.2,
            eps_stat: 1e-6,
            learning_rate: 0.05,
            max_grad_norm: Some(1.0),
            inner_epochs: 1,
            temperature: 1.0,
            edit_unit: EditUnit::Token,
            mode: TrainMode::Rlfr,
            max_failure_rate: 0.5,
            eval_every: 0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), RlError> {
        let bad = |m: String| Err(RlError::Config(m));
        if self.k == 0 || self.batch_size == 0 {
            return bad("k and batch size must be at least 1".into());
        }
        if self.k * self.batch_size < 2 {
            return bad("k · batch size must be at least 2 for batch statistics".into());
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(RewardError::Alpha(self.alpha).into());
        }
        if !(self.kl_beta.is_finite() && self.kl_beta >= 0.0) {
            return bad(format!("KL coefficient must be non-negative, got {}", self.kl_beta));
        }
        if !(self.eps_clip.is_finite() && self.eps_clip > 0.0 && self.eps_clip < 1.0) {
            return bad(format!("clip range must lie in (0, 1), got {}", self.eps_clip));
        }
        if !(self.eps_stat.is_finite() && self.eps_stat > 0.0) {
            return bad(format!("normalization epsilon must be positive, got {}", self.eps_stat));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return bad(format!("learning rate must be positive, got {}", self.learning_rate));
        }
        if self.inner_epochs == 0 {
            return bad("inner epochs must be at least 1".into());
        }
        if !(self.temperature.is_finite() && self.temperature >= 0.0) {
            return bad(format!("temperature must be non-negative, got {}", self.temperature));
        }
        if !(0.0..=1.0).contains(&self.max_failure_rate) {
            return bad(format!("failure rate limit must lie in [0, 1], got {}", self.max_failure_rate));
        }
        Ok(())
    }
}

/// One scored rollout.
#[derive(Debug, Clone)]
pub struct Rollout {
    pub prompt_index: usize,
    pub hypothesis: Hypothesis,
    pub refined: Vec<String>,
    pub z: f64,
    pub r_edit: f64,
    pub r_sem: f64,
    pub reward: f64,
}

/// Rollouts of one iteration plus what was dropped on the way.
#[derive(Debug, Clone)]
pub struct RolloutBatch {
    pub rollouts: Vec<Rollout>,
    /// Version of the snapshot every hypothesis was sampled from.
    pub snapshot_version: u64,
    pub stats: BatchScaleStats,
    pub sampled: usize,
    pub dropped: usize,
}

/// Diagnostics of one optimizer step.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StepStats {
    pub objective: f64,
    pub clip_fraction: f64,
    pub mean_ratio: f64,
    pub mean_kl: f64,
    pub grad_norm: f64,
    pub tokens: usize,
    /// Sequences skipped because their ratio was not finite.
    pub skipped: usize,
    /// Whether parameters were left untouched (non-finite gradient).
    pub rejected: bool,
}

/// A prompt of the RL pool, encoded once.
pub struct PoolItem<'a> {
    pub example: &'a ParallelExample,
    pub prompt: Prompt,
}

pub fn encode_pool<'a>(vocab: &Vocab, pool: &'a [ParallelExample]) -> Result<Vec<PoolItem<'a>>, RlError> {
    pool.iter()
        .map(|ex| {
            let prompt = Prompt::render(ex.id.clone(), vocab, &ex.direction, &ex.source)?;
            Ok(PoolItem { example: ex, prompt })
        })
        .collect()
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Sampling seed of one prompt slot; a pure function of its coordinates.
pub fn rollout_seed(seed: u64, iteration: usize, slot: usize) -> u64 {
    splitmix64(splitmix64(splitmix64(seed) ^ iteration as u64) ^ slot as u64)
}

/// Prompt indices of an iteration: consecutive windows of a seeded
/// permutation of the pool, reshuffled after every full pass.
pub fn batch_indices(pool_len: usize, batch_size: usize, seed: u64, iteration: usize) -> Vec<usize> {
    use rand::seq::SliceRandom;
    use rand::SeedableRng;
    let start = iteration * batch_size;
    (start..start + batch_size)
        .map(|pos| {
            let pass = pos / pool_len;
            let mut order: Vec<usize> = (0..pool_len).collect();
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(splitmix64(seed ^ 0xba7c_4000) ^ pass as u64);
            order.shuffle(&mut rng);
            order[pos % pool_len]
        })
        .collect()
}

/// Samples, refines and scores one batch of prompts under `snapshot`.
#[allow(clippy::too_many_arguments)]
pub fn collect_rollouts(
    snapshot: &PolicySnapshot,
    vocab: &Vocab,
    pool: &[PoolItem<'_>],
    indices: &[usize],
    teacher: &dyn Teacher,
    scorer: &dyn SemanticScorer,
    config: &TrainConfig,
    iteration: usize,
) -> Result<RolloutBatch, RlError> {
    let samples: Vec<Vec<Hypothesis>> = indices
        .par_iter()
        .enumerate()
        .map(|(slot, &i)| {
            sample_k(snapshot.params(), &pool[i].prompt, config.k, config.temperature, rollout_seed(config.seed, iteration, slot))
        })
        .collect::<Result<_, _>>()?;
    let flat: Vec<(usize, Hypothesis)> =
        indices.iter().zip(samples).flat_map(|(&i, hs)| hs.into_iter().map(move |h| (i, h))).collect();
    let requests: Vec<RefineRequest> = flat
        .iter()
        .map(|(i, h)| RefineRequest { source: pool[*i].example.source.clone(), draft: vocab.decode(h.content()) })
        .collect();
    let refined = teacher.refine_batch(&requests);

    let sampled = flat.len();
    let mut first_error = None;
    let mut kept = Vec::new();
    for (((i, h), req), res) in flat.into_iter().zip(&requests).zip(refined) {
        match res.map_err(RlError::from).and_then(|r| {
            let s = semantic_score(scorer, &req.source, &req.draft, &r.refined)?;
            Ok((r.refined, s))
        }) {
            Ok((y, r_sem)) => kept.push((i, h, req.draft.clone(), y, r_sem)),
            Err(e) => {
                log::warn!("iteration {iteration}: dropping sample of {}: {e}", pool[i].example.id);
                first_error.get_or_insert_with(|| e.to_string());
            }
        }
    }
    let dropped = sampled - kept.len();
    if dropped as f64 > config.max_failure_rate * sampled as f64 {
        return Err(RlError::TeacherFailures {
            iteration,
            failed: dropped,
            total: sampled,
            limit: config.max_failure_rate,
            first: first_error.unwrap_or_default(),
        });
    }
    if kept.len() < 2 {
        return Err(RlError::TooFewRollouts { iteration });
    }
    let zs: Vec<f64> = kept.iter().map(|(_, _, d, y, _)| config.edit_unit.similarity(d, y)).collect();
    let stats = fit_scale_stats(&zs)?;
    let rollouts = kept
        .into_iter()
        .zip(zs)
        .map(|((prompt_index, hypothesis, _, refined, r_sem), z)| {
            let b = composite_reward(z, scale_z(z, &stats), r_sem, config.alpha)?;
            Ok(Rollout { prompt_index, hypothesis, refined, z, r_edit: b.r_edit, r_sem, reward: b.r })
        })
        .collect::<Result<_, RlError>>()?;
    Ok(RolloutBatch { rollouts, snapshot_version: snapshot.version(), stats, sampled, dropped })
}

/// Ascent direction of `J(θ) = (1/N) Σ_{i,t} z_{i,t} log π_θ(ŷ_{i,t})`
/// with the terms `z` held fixed.
pub fn surrogate_gradient(
    params: &PolicyParams,
    prompts: &[&[usize]],
    targets: &[&[usize]],
    z: &[Vec<f64>],
) -> Result<(ParamGrads, f64), RlError> {
    let n: usize = z.iter().map(Vec::len).sum();
    if n == 0 {
        return Ok((ParamGrads::zeros_like(params), 0.0));
    }
    let items: Vec<WeightedSequence<'_>> = prompts
        .iter()
        .zip(targets)
        .zip(z)
        .map(|((p, t), z)| WeightedSequence { prompt: p, target: t, weights: z.iter().map(|v| v / n as f64).collect() })
        .collect();
    let (grads, logprobs) = batch_weighted_grad(params, &items)?;
    let objective = logprobs.iter().zip(z).flat_map(|(l, z)| l.iter().zip(z).map(|(l, z)| l * z)).sum::<f64>() / n as f64;
    Ok((grads, objective))
}

/// Inner epochs of clipped policy-gradient updates on one rollout batch.
pub fn policy_update(
    params: &mut PolicyParams,
    snapshot: &PolicySnapshot,
    pool: &[PoolItem<'_>],
    batch: &RolloutBatch,
    config: &TrainConfig,
) -> Result<StepStats, RlError> {
    if batch.snapshot_version != snapshot.version() {
        return Err(RlError::SnapshotMismatch { batch: batch.snapshot_version, snapshot: snapshot.version() });
    }
    let opt = Sgd { lr: config.learning_rate, max_grad_norm: config.max_grad_norm };
    let prompts: Vec<&[usize]> = batch.rollouts.iter().map(|r| pool[r.prompt_index].prompt.tokens.as_slice()).collect();
    let targets: Vec<&[usize]> = batch.rollouts.iter().map(|r| r.hypothesis.tokens.as_slice()).collect();
    let rewards: Vec<f64> = batch.rollouts.iter().map(|r| r.reward).collect();
    let old: Vec<Vec<f64>> = batch.rollouts.iter().map(|r| r.hypothesis.old_logprobs.clone()).collect();

    let mut stats = StepStats::default();
    for _ in 0..config.inner_epochs {
        let current = &*params;
        let (kl, lp): (Vec<Vec<f64>>, Vec<Vec<f64>>) = prompts
            .par_iter()
            .zip(&targets)
            .map(|(p, t)| {
                Ok((kl_per_position(current, snapshot.params(), p, t)?, logprob_seq(current, p, t)?))
            })
            .collect::<Result<Vec<_>, PolicyError>>()?
            .into_iter()
            .unzip();
        let raw = compute_raw_advantages(&rewards, &kl, config.kl_beta);
        let norm = normalize_advantages(&raw, config.eps_stat)?;
        let ratios = importance_ratios(&lp, &old);

        let mut keep = Vec::new();
        for (i, r) in ratios.iter().enumerate() {
            match r {
                Some(_) => keep.push(i),
                None => log::warn!("dropping rollout {i}: non-finite importance ratio"),
            }
        }
        let kept_ratios: Vec<Vec<f64>> = keep.iter().map(|&i| ratios[i].clone().expect("finite")).collect();
        let kept_adv: Vec<Vec<f64>> = keep.iter().map(|&i| norm.values[i].clone()).collect();
        let (z, clip_fraction) = clipped_terms(&kept_ratios, &kept_adv, config.eps_clip);
        let kp: Vec<&[usize]> = keep.iter().map(|&i| prompts[i]).collect();
        let kt: Vec<&[usize]> = keep.iter().map(|&i| targets[i]).collect();
        let (mut grads, objective) = surrogate_gradient(params, &kp, &kt, &z)?;
        for g in grads.0.iter_mut().flatten() {
            *g = -*g;
        }
        let tokens: usize = kl.iter().map(Vec::len).sum();
        let kept_tokens: usize = kept_ratios.iter().map(Vec::len).sum();
        let mean_ratio = kept_ratios.iter().flatten().sum::<f64>() / kept_tokens.max(1) as f64;
        let mean_kl = kl.iter().flatten().sum::<f64>() / tokens.max(1) as f64;
        stats = StepStats {
            objective,
            clip_fraction,
            mean_ratio,
            mean_kl,
            grad_norm: grads.norm(),
            tokens,
            skipped: ratios.len() - keep.len(),
            rejected: false,
        };
        match params.apply(&grads, &opt) {
            Ok(step) => stats.grad_norm = step.grad_norm,
            Err(PolicyError::Grad(e)) => {
                log::warn!("skipping update: {e}");
                stats.rejected = true;
            }
            Err(e) => return Err(e.into()),
        }
    }
    Ok(stats)
}

/// Final state of a training run.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: PolicyParams,
    pub metrics: Vec<MetricsRecord>,
}

/// Everything `train_rl` needs besides the configuration.
pub struct TrainContext<'a> {
    pub vocab: &'a Vocab,
    pub pool: &'a [ParallelExample],
    pub heldout: &'a [ParallelExample],
    pub teacher: &'a dyn Teacher,
    pub scorer: &'a dyn SemanticScorer,
}

fn rollout_entity_acc(pool: &[PoolItem<'_>], vocab: &Vocab, batch: &RolloutBatch) -> Option<f64> {
    let (mut hit, mut total) = (0usize, 0usize);
    for r in &batch.rollouts {
        let ex = pool[r.prompt_index].example;
        if ex.entities.is_empty() {
            continue;
        }
        let draft = vocab.decode(r.hypothesis.content());
        for ann in &ex.entities {
            total += 1;
            hit += usize::from(contains_span(&draft, &ann.target));
        }
    }
    (total > 0).then(|| hit as f64 / total as f64)
}

/// Runs `config.iterations` iterations from `init`. `on_iteration` sees
/// every metrics record with the parameters after that iteration's update
/// and may stop the run by returning an error.
pub fn train_rl(
    init: PolicyParams,
    ctx: &TrainContext<'_>,
    config: &TrainConfig,
    on_iteration: &mut dyn FnMut(&MetricsRecord, &PolicyParams) -> Result<(), String>,
) -> Result<TrainOutcome, RlError> {
    config.validate()?;
    config.mode.check_teacher(ctx.teacher.kind())?;
    if ctx.pool.is_empty() {
        return Err(RlError::Config("prompt pool is empty".into()));
    }
    let pool = encode_pool(ctx.vocab, ctx.pool)?;
    let mut params = init;
    let mut metrics = Vec::with_capacity(config.iterations);
    for iteration in 1..=config.iterations {
        let snapshot = PolicySnapshot::take(&params, iteration as u64);
        let indices = batch_indices(pool.len(), config.batch_size, config.seed, iteration - 1);
        let batch = collect_rollouts(&snapshot, ctx.vocab, &pool, &indices, ctx.teacher, ctx.scorer, config, iteration)?;
        let step = policy_update(&mut params, &snapshot, &pool, &batch, config)?;

        let n = batch.rollouts.len() as f64;
        let eval = if config.eval_every > 0 && iteration % config.eval_every == 0 && !ctx.heldout.is_empty() {
            Some(evaluate(&params, ctx.vocab, ctx.heldout, ctx.scorer)?)
        } else {
            None
        };
        let record = MetricsRecord {
            iteration,
            mean_reward: batch.rollouts.iter().map(|r| r.reward).sum::<f64>() / n,
            mean_response_len: batch.rollouts.iter().map(|r| r.hypothesis.content().len() as f64).sum::<f64>() / n,
            adequacy: batch.rollouts.iter().map(|r| (r.r_sem + 1.0) / 2.0).sum::<f64>() / n,
            entity_acc: rollout_entity_acc(&pool, ctx.vocab, &batch),
            mean_z: batch.rollouts.iter().map(|r| r.z).sum::<f64>() / n,
            clip_fraction: step.clip_fraction,
            mean_ratio: step.mean_ratio,
            mean_kl: step.mean_kl,
            grad_norm: step.grad_norm,
            objective: step.objective,
            rollouts: batch.rollouts.len(),
            dropped: batch.dropped + step.skipped,
            eval_adequacy: eval.map(|m| m.adequacy),
            eval_exact_match: eval.map(|m| m.exact_match),
            eval_entity_acc: eval.and_then(|m| m.entity_acc),
        };
        log::info!(
            "iteration {iteration}: reward {:.4} len {:.2} adequacy {:.4} kl {:.2e}",
            record.mean_reward,
            record.mean_response_len,
            record.adequacy,
            record.mean_kl
        );
        on_iteration(&record, &params).map_err(RlError::Callback)?;
        metrics.push(record);
    }
    Ok(TrainOutcome { params, metrics })
}
