//! Forward passes of the actor: a differentiable full-sequence pass on a
//! [`Tape`] and an incremental, tape-free decoder. Both perform the same
//! floating-point operations in the same order.

use super::params::{ParamGrads, PolicyParams, Slot};
use super::PolicyError;
use crate::corpus::TokenId;
use crate::grad::kernels::{log_softmax_in_place, softmax_in_place};
use crate::grad::{Tape, Var};

const MASKED: f64 = -1e9;

/// Input tokens and positional rows for `prompt ++ target[..m-1]`.
///
/// Prompt tokens use source-side rows `0..P`; the target token `y_t`
/// (1-based) uses target-side row `context_len + t`.
fn layout(
    params: &PolicyParams,
    prompt: &[TokenId],
    target: &[TokenId],
) -> Result<(Vec<TokenId>, Vec<usize>), PolicyError> {
    let h = params.hyper();
    check_tokens(params, prompt)?;
    check_tokens(params, target)?;
    if prompt.is_empty() {
        return Err(PolicyError::EmptyPrompt);
    }
    if target.is_empty() {
        return Err(PolicyError::EmptyTarget);
    }
    if prompt.len() + target.len() > h.context_len {
        return Err(PolicyError::ContextOverflow { len: prompt.len() + target.len(), context: h.context_len });
    }
    let mut tokens = prompt.to_vec();
    tokens.extend_from_slice(&target[..target.len() - 1]);
    let mut rows: Vec<usize> = (0..prompt.len()).collect();
    rows.extend((1..target.len()).map(|t| h.context_len + t));
    Ok((tokens, rows))
}

pub(crate) fn check_tokens(params: &PolicyParams, tokens: &[TokenId]) -> Result<(), PolicyError> {
    let v = params.hyper().vocab_size;
    match tokens.iter().find(|&&t| t >= v) {
        Some(&id) => Err(PolicyError::TokenOutOfVocab { id, vocab: v }),
        None => Ok(()),
    }
}

/// Records the parameters as leaves of `tape`.
pub(crate) fn param_leaves(tape: &mut Tape, params: &PolicyParams, requires_grad: bool) -> Vec<Var> {
    params
        .tensors()
        .iter()
        .map(|t| tape.leaf(&t.shape, t.values.clone(), requires_grad).expect("parameter shapes are valid"))
        .collect()
}

/// Differentiable per-token `log π(target_t | prompt, target_<t)`; returns a
/// vector of length `|target|`.
pub(crate) fn target_logprobs_on_tape(
    tape: &mut Tape,
    leaves: &[Var],
    params: &PolicyParams,
    prompt: &[TokenId],
    target: &[TokenId],
) -> Result<Var, PolicyError> {
    let (tokens, rows) = layout(params, prompt, target)?;
    let d = params.hyper().d_model;
    let leaf = |s: Slot| leaves[s as usize];
    let n = tokens.len();

    let tok = tape.embed(&tokens, leaf(Slot::TokEmbed))?;
    let pos = tape.embed(&rows, leaf(Slot::PosEmbed))?;
    let h = tape.add(tok, pos)?;
    let q = tape.matmul(h, leaf(Slot::Query))?;
    let k = tape.matmul(h, leaf(Slot::Key))?;
    let v = tape.matmul(h, leaf(Slot::Value))?;
    let scores = tape.matmul_bt(q, k)?;
    let scores = tape.scale(scores, 1.0 / (d as f64).sqrt())?;
    let mask: Vec<f64> = (0..n * n)
        .map(|i| if i % n > i / n { MASKED } else { 0.0 })
        .collect();
    let scores = tape.add_const(scores, &mask)?;
    let attn = tape.softmax_rows(scores)?;
    let ctx = tape.matmul(attn, v)?;
    let o = tape.add(h, ctx)?;
    let pre = tape.affine(o, leaf(Slot::Hidden), Some(leaf(Slot::HiddenBias)))?;
    let f = tape.tanh(pre)?;
    let f = tape.slice_rows(f, prompt.len() - 1, n)?;
    let logits = tape.affine(f, leaf(Slot::Out), Some(leaf(Slot::OutBias)))?;
    let lp = tape.log_softmax_rows(logits)?;
    Ok(tape.gather_rows(lp, target)?)
}

/// Gradient of `Σ_t weights[t] · log π(target_t | ·)` with respect to every
/// parameter, plus the per-token log-probabilities.
pub fn weighted_logprob_grad(
    params: &PolicyParams,
    prompt: &[TokenId],
    target: &[TokenId],
    weights: &[f64],
) -> Result<(ParamGrads, Vec<f64>), PolicyError> {
    if weights.len() != target.len() {
        return Err(PolicyError::WeightLength { weights: weights.len(), target: target.len() });
    }
    let mut tape = Tape::new();
    let leaves = param_leaves(&mut tape, params, true);
    let lp = target_logprobs_on_tape(&mut tape, &leaves, params, prompt, target)?;
    let logprobs = tape.value(lp).to_vec();
    let objective = tape.weighted_sum(lp, weights)?;
    tape.backward(objective)?;
    let grads = leaves.iter().map(|&l| tape.grad(l).expect("leaf requires grad").to_vec()).collect();
    Ok((ParamGrads(grads), logprobs))
}

/// Incremental decoder holding keys and values of every token fed so far.
#[derive(Clone)]
pub(crate) struct Decoder<'a> {
    params: &'a PolicyParams,
    keys: Vec<f64>,
    values: Vec<f64>,
}

impl<'a> Decoder<'a> {
    pub(crate) fn new(params: &'a PolicyParams) -> Self {
        Self { params, keys: Vec::new(), values: Vec::new() }
    }

    /// Feeds one token at positional row `row`; returns next-token logits.
    pub(crate) fn feed(&mut self, token: TokenId, row: usize) -> Vec<f64> {
        let p = self.params;
        let hyp = p.hyper();
        let (d, vsz) = (hyp.d_model, hyp.vocab_size);
        let tok = &p.get(Slot::TokEmbed)[token * d..(token + 1) * d];
        let pos = &p.get(Slot::PosEmbed)[row * d..(row + 1) * d];
        let h: Vec<f64> = tok.iter().zip(pos).map(|(a, b)| a + b).collect();
        let q = vec_mat(&h, p.get(Slot::Query), d);
        let k = vec_mat(&h, p.get(Slot::Key), d);
        let v = vec_mat(&h, p.get(Slot::Value), d);
        self.keys.extend_from_slice(&k);
        self.values.extend_from_slice(&v);

        let inv = 1.0 / (d as f64).sqrt();
        let mut scores: Vec<f64> = self
            .keys
            .chunks_exact(d)
            .map(|kj| q.iter().zip(kj).map(|(a, b)| a * b).sum::<f64>() * inv)
            .collect();
        softmax_in_place(&mut scores);
        let mut o = h;
        let mut ctx = vec![0.0; d];
        for (a, vj) in scores.iter().zip(self.values.chunks_exact(d)) {
            if *a == 0.0 {
                continue;
            }
            ctx.iter_mut().zip(vj).for_each(|(c, v)| *c += a * v);
        }
        o.iter_mut().zip(&ctx).for_each(|(o, c)| *o += c);
        let mut f = p.get(Slot::HiddenBias).to_vec();
        vec_mat_acc(&o, p.get(Slot::Hidden), &mut f, d);
        f.iter_mut().for_each(|x| *x = x.tanh());
        let mut logits = p.get(Slot::OutBias).to_vec();
        debug_assert_eq!(logits.len(), vsz);
        vec_mat_acc(&f, p.get(Slot::Out), &mut logits, vsz);
        logits
    }
}

fn vec_mat(x: &[f64], w: &[f64], m: usize) -> Vec<f64> {
    let mut out = vec![0.0; m];
    vec_mat_acc(x, w, &mut out, m);
    out
}

fn vec_mat_acc(x: &[f64], w: &[f64], out: &mut [f64], m: usize) {
    for (p, &xp) in x.iter().enumerate() {
        if xp == 0.0 {
            continue;
        }
        for (o, &wv) in out.iter_mut().zip(&w[p * m..(p + 1) * m]) {
            *o += xp * wv;
        }
    }
}

/// Full next-token log-distributions at every target position.
pub fn next_token_logprobs(
    params: &PolicyParams,
    prompt: &[TokenId],
    target: &[TokenId],
) -> Result<Vec<Vec<f64>>, PolicyError> {
    let (tokens, rows) = layout(params, prompt, target)?;
    let mut dec = Decoder::new(params);
    let mut out = Vec::with_capacity(target.len());
    for (i, (&tok, &row)) in tokens.iter().zip(&rows).enumerate() {
        let mut logits = dec.feed(tok, row);
        if i + 1 >= prompt.len() {
            log_softmax_in_place(&mut logits);
            out.push(logits);
        }
    }
    Ok(out)
}
