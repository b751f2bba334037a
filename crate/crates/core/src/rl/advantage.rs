use serde::{Deserialize, Serialize};

use super::RlError;

/// `A_{i,t} = R_i − β · Σ_{j≥t} KL_{i,j}` for every token of every sequence.
pub fn compute_raw_advantages(rewards: &[f64], kl: &[Vec<f64>], beta: f64) -> Vec<Vec<f64>> {
    rewards
        .iter()
        .zip(kl)
        .map(|(&r, kl)| {
            let mut tail = 0.0;
            let mut out = vec![0.0; kl.len()];
            for t in (0..kl.len()).rev() {
                tail += kl[t];
                out[t] = r - beta * tail;
            }
            out
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizedAdvantages {
    pub values: Vec<Vec<f64>>,
    pub mean: f64,
    /// `sqrt(variance + eps_stat)`.
    pub std: f64,
    pub count: usize,
}

/// Batch normalization over all `N` tokens: `Â = (A − μ) / sqrt(σ² + ε)`.
pub fn normalize_advantages(a: &[Vec<f64>], eps_stat: f64) -> Result<NormalizedAdvantages, RlError> {
    let count: usize = a.iter().map(Vec::len).sum();
    if count < 2 {
        return Err(RlError::Config(format!("advantage normalization needs at least 2 tokens, got {count}")));
    }
    let n = count as f64;
    let mean = a.iter().flatten().sum::<f64>() / n;
    let var = a.iter().flatten().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    let std = (var + eps_stat).sqrt();
    let values = a.iter().map(|row| row.iter().map(|x| (x - mean) / std).collect()).collect();
    Ok(NormalizedAdvantages { values, mean, std, count })
}

/// `ρ = exp(log π − log π_old)` per token; `None` for a sequence whose ratio
/// is not finite.
pub fn importance_ratios(current: &[Vec<f64>], old: &[Vec<f64>]) -> Vec<Option<Vec<f64>>> {
    current
        .iter()
        .zip(old)
        .map(|(c, o)| {
            let r: Vec<f64> = c.iter().zip(o).map(|(c, o)| (c - o).exp()).collect();
            r.iter().all(|x| x.is_finite() && *x > 0.0).then_some(r)
        })
        .collect()
}

/// `z = clip(ρ, 1 − ε, 1 + ε) · Â`; also returns the fraction of tokens
/// whose ratio was clipped.
pub fn clipped_terms(ratios: &[Vec<f64>], adv: &[Vec<f64>], eps_clip: f64) -> (Vec<Vec<f64>>, f64) {
    let (mut clipped, mut total) = (0usize, 0usize);
    let z = ratios
        .iter()
        .zip(adv)
        .map(|(r, a)| {
            r.iter()
                .zip(a)
                .map(|(&rho, &adv)| {
                    let c = rho.clamp(1.0 - eps_clip, 1.0 + eps_clip);
                    clipped += usize::from(c != rho);
                    total += 1;
                    c * adv
                })
                .collect()
        })
        .collect();
    (z, if total == 0 { 0.0 } else { clipped as f64 / total as f64 })
}
