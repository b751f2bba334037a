//! Composite reward: quantile-scaled lexical similarity blended with a
//! semantic adequacy score.

mod chrf;
mod remote;

use serde::{Deserialize, Serialize};

pub use chrf::ChrF;
pub use remote::RemoteScorer;

#[derive(Debug, thiserror::Error)]
pub enum RewardError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("alpha must lie in [0, 1], got {0}")]
    Alpha(f64),
    #[error("scorer failure: {0}")]
    Scorer(String),
}

/// Unit-cost insert/delete/substitute distance, two-row dynamic programme.
pub fn levenshtein<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    if a.is_empty() {
        return b.len();
    }
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, x) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, y) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(x != y);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// `1 − ED(draft, refined) / max(|draft|, |refined|)`; two empty sequences
/// are identical and score 1.
pub fn lexical_similarity<T: PartialEq>(draft: &[T], refined: &[T]) -> f64 {
    let longest = draft.len().max(refined.len());
    if longest == 0 {
        log::debug!("lexical similarity of two empty sequences taken as 1");
        return 1.0;
    }
    1.0 - levenshtein(draft, refined) as f64 / longest as f64
}

/// Granularity at which edit distance is measured.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EditUnit {
    #[default]
    Token,
    /// Characters of the space-joined token string.
    Char,
}

impl EditUnit {
    pub fn similarity(self, draft: &[String], refined: &[String]) -> f64 {
        match self {
            EditUnit::Token => lexical_similarity(draft, refined),
            EditUnit::Char => {
                let a: Vec<char> = draft.join(" ").chars().collect();
                let b: Vec<char> = refined.join(" ").chars().collect();
                lexical_similarity(&a, &b)
            }
        }
    }
}

/// Mean and 90th percentile of the z values of one rollout batch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BatchScaleStats {
    pub mean: f64,
    pub q90: f64,
    pub count: usize,
}

/// Gap below which `q90 − mean` is treated as zero.
pub const DEGENERATE_GAP: f64 = 1e-9;

/// Linear-interpolation percentile on an ascending sample: position
/// `h = (n − 1)·q`, value `x[⌊h⌋] + (h − ⌊h⌋)·(x[⌊h⌋+1] − x[⌊h⌋])`.
pub fn percentile_sorted(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn fit_scale_stats(zs: &[f64]) -> Result<BatchScaleStats, RewardError> {
    if zs.len() < 2 {
        return Err(RewardError::Config(format!("scale statistics need at least 2 values, got {}", zs.len())));
    }
    if zs.iter().any(|z| !z.is_finite()) {
        return Err(RewardError::Config("non-finite similarity value".into()));
    }
    let mut sorted = zs.to_vec();
    sorted.sort_by(f64::total_cmp);
    // Summing in sorted order makes the mean independent of input order.
    let mean = sorted.iter().sum::<f64>() / sorted.len() as f64;
    let q90 = percentile_sorted(&sorted, 0.9);
    Ok(BatchScaleStats { mean, q90, count: zs.len() })
}

/// Piecewise scaling to [−1, 1]: −1 below the mean, linear up to Q90, 1 at
/// or above Q90.
pub fn scale_z(z: f64, stats: &BatchScaleStats) -> f64 {
    let (mean, q90) = (stats.mean, stats.q90);
    if q90 - mean < DEGENERATE_GAP {
        return if z < mean { -1.0 } else { 1.0 };
    }
    if z < mean {
        -1.0
    } else if z < q90 {
        (z - mean) / (q90 - mean)
    } else {
        1.0
    }
}

/// Adequacy scorer returning a value in [0, 1].
pub trait SemanticScorer: Send + Sync {
    fn score(&self, source: &[String], draft: &[String], refined: &[String]) -> Result<f64, RewardError>;
}

/// Score mapped linearly to [−1, 1].
pub fn semantic_score(
    scorer: &dyn SemanticScorer,
    source: &[String],
    draft: &[String],
    refined: &[String],
) -> Result<f64, RewardError> {
    let s = scorer.score(source, draft, refined)?;
    if !(0.0..=1.0).contains(&s) {
        return Err(RewardError::Scorer(format!("score {s} outside [0, 1]")));
    }
    Ok(2.0 * s - 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AlphaPreset {
    Lexical,
    Semantic,
    Balanced,
}

impl AlphaPreset {
    pub fn alpha(self) -> f64 {
        match self {
            AlphaPreset::Lexical => 1.0,
            AlphaPreset::Semantic => 0.0,
            AlphaPreset::Balanced => 0.5,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            AlphaPreset::Lexical => "lexical",
            AlphaPreset::Semantic => "semantic",
            AlphaPreset::Balanced => "balanced",
        }
    }
}

impl std::str::FromStr for AlphaPreset {
    type Err = RewardError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "lexical" => Ok(AlphaPreset::Lexical),
            "semantic" => Ok(AlphaPreset::Semantic),
            "balanced" => Ok(AlphaPreset::Balanced),
            other => Err(RewardError::Config(format!(
                "unknown alpha preset {other:?} (expected lexical, semantic or balanced)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub z: f64,
    pub r_edit: f64,
    pub r_sem: f64,
    pub alpha: f64,
    pub r: f64,
}

pub fn composite_reward(z: f64, r_edit: f64, r_sem: f64, alpha: f64) -> Result<RewardBreakdown, RewardError> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(RewardError::Alpha(alpha));
    }
    let r = (1.0 - alpha) * r_sem + alpha * r_edit;
    Ok(RewardBreakdown { z, r_edit, r_sem, alpha, r })
}
