use std::collections::HashMap;

use super::{RewardError, SemanticScorer};

/// Character n-gram F-score of the draft against the refinement.
///
/// Characters are taken from the concatenated tokens with whitespace removed.
/// Precision and recall are averaged uniformly over the orders `1..=max_order`
/// that occur in either string, then combined as an F-β score.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChrF {
    pub max_order: usize,
    pub beta: f64,
}

impl Default for ChrF {
    fn default() -> Self {
        Self { max_order: 4, beta: 2.0 }
    }
}

fn ngram_counts(chars: &[char], n: usize) -> HashMap<&[char], usize> {
    let mut counts = HashMap::new();
    if chars.len() >= n {
        for w in chars.windows(n) {
            *counts.entry(w).or_insert(0) += 1;
        }
    }
    counts
}

fn chars(tokens: &[String]) -> Vec<char> {
    tokens.iter().flat_map(|t| t.chars()).filter(|c| !c.is_whitespace()).collect()
}

impl ChrF {
    pub fn sentence_score(&self, hypothesis: &[String], reference: &[String]) -> f64 {
        let hyp = chars(hypothesis);
        let reference = chars(reference);
        if hyp == reference {
            return 1.0;
        }
        let (mut p_sum, mut r_sum, mut orders) = (0.0, 0.0, 0usize);
        for n in 1..=self.max_order {
            let h = ngram_counts(&hyp, n);
            let r = ngram_counts(&reference, n);
            let h_total: usize = h.values().sum();
            let r_total: usize = r.values().sum();
            if h_total == 0 && r_total == 0 {
                continue;
            }
            let matched: usize = h.iter().map(|(g, c)| (*c).min(r.get(g).copied().unwrap_or(0))).sum();
            if h_total > 0 {
                p_sum += matched as f64 / h_total as f64;
            }
            if r_total > 0 {
                r_sum += matched as f64 / r_total as f64;
            }
            orders += 1;
        }
        let (p, r) = (p_sum / orders as f64, r_sum / orders as f64);
        let b2 = self.beta * self.beta;
        let denom = b2 * p + r;
        if denom == 0.0 {
            0.0
        } else {
            (1.0 + b2) * p * r / denom
        }
    }
}

impl SemanticScorer for ChrF {
    fn score(&self, _source: &[String], draft: &[String], refined: &[String]) -> Result<f64, RewardError> {
        Ok(self.sentence_score(draft, refined))
    }
}
