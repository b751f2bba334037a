//! Held-out evaluation: adequacy, exact match and entity accuracy under
//! greedy decoding, plus side-by-side comparison of checkpoints.

use std::fmt::Write as _;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{contains_span, CorpusError, ParallelExample, Vocab};
use crate::policy::{greedy_decode, strip_eos, PolicyError, PolicyParams, Prompt};
use crate::reward::{RewardError, SemanticScorer};

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("evaluation corpus is empty")]
    EmptyCorpus,
    #[error("comparison needs at least two checkpoints, got {0}")]
    TooFewCheckpoints(usize),
    #[error("checkpoint {name:?} is incompatible with the corpus: {source}")]
    Incompatible { name: String, source: CorpusError },
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Reward(#[from] RewardError),
    #[error("CSV output: {0}")]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalMetrics {
    /// Mean scorer value of output against gold, in [0, 1].
    pub adequacy: f64,
    pub exact_match: f64,
    /// `None` when the corpus has no entity annotations.
    pub entity_acc: Option<f64>,
    pub entity_correct: usize,
    pub entity_total: usize,
    pub n_examples: usize,
}

/// Greedy outputs for every example, without the end-of-sequence token.
pub fn decode_all(
    params: &PolicyParams,
    vocab: &Vocab,
    examples: &[ParallelExample],
) -> Result<Vec<Vec<String>>, EvalError> {
    examples
        .par_iter()
        .map(|ex| {
            let prompt = Prompt::render(ex.id.clone(), vocab, &ex.direction, &ex.source)?;
            let out = greedy_decode(params, &prompt)?;
            Ok(vocab.decode(strip_eos(&out)))
        })
        .collect()
}

/// Scores given outputs against each example's gold and entity annotations.
pub fn score_outputs(
    outputs: &[Vec<String>],
    examples: &[ParallelExample],
    scorer: &dyn SemanticScorer,
) -> Result<EvalMetrics, EvalError> {
    if examples.is_empty() {
        return Err(EvalError::EmptyCorpus);
    }
    let (mut adequacy, mut exact) = (0.0, 0usize);
    let (mut entity_correct, mut entity_total) = (0usize, 0usize);
    for (out, ex) in outputs.iter().zip(examples) {
        let gold = ex.gold()?;
        adequacy += scorer.score(&ex.source, out, gold)?;
        exact += usize::from(out.as_slice() == gold);
        for ann in &ex.entities {
            entity_total += 1;
            entity_correct += usize::from(contains_span(out, &ann.target));
        }
    }
    let n = examples.len() as f64;
    Ok(EvalMetrics {
        adequacy: adequacy / n,
        exact_match: exact as f64 / n,
        entity_acc: (entity_total > 0).then(|| entity_correct as f64 / entity_total as f64),
        entity_correct,
        entity_total,
        n_examples: examples.len(),
    })
}

pub fn evaluate(
    params: &PolicyParams,
    vocab: &Vocab,
    examples: &[ParallelExample],
    scorer: &dyn SemanticScorer,
) -> Result<EvalMetrics, EvalError> {
    if examples.is_empty() {
        return Err(EvalError::EmptyCorpus);
    }
    let outputs = decode_all(params, vocab, examples)?;
    score_outputs(&outputs, examples, scorer)
}

/// A named checkpoint for [`compare`].
pub struct NamedCheckpoint {
    pub name: String,
    pub params: PolicyParams,
    pub vocab: Vocab,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub checkpoint: String,
    pub metrics: EvalMetrics,
}

/// Evaluates every checkpoint on the same corpus, in the given order.
pub fn compare(
    checkpoints: &[NamedCheckpoint],
    examples: &[ParallelExample],
    scorer: &dyn SemanticScorer,
) -> Result<Vec<ComparisonRow>, EvalError> {
    if checkpoints.len() < 2 {
        return Err(EvalError::TooFewCheckpoints(checkpoints.len()));
    }
    if examples.is_empty() {
        return Err(EvalError::EmptyCorpus);
    }
    checkpoints
        .iter()
        .map(|c| {
            for ex in examples {
                c.vocab
                    .encode(&ex.source)
                    .and_then(|_| c.vocab.encode(ex.gold()?))
                    .map_err(|source| EvalError::Incompatible { name: c.name.clone(), source })?;
            }
            let metrics = evaluate(&c.params, &c.vocab, examples, scorer)?;
            Ok(ComparisonRow { checkpoint: c.name.clone(), metrics })
        })
        .collect()
}

fn fmt_rate(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.4}")).unwrap_or_else(|| "n/a".into())
}

/// CSV with columns `checkpoint, adequacy, exact_match, entity_acc, n_examples`.
pub fn write_comparison_csv<W: Write>(rows: &[ComparisonRow], out: W) -> Result<(), EvalError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["checkpoint", "adequacy", "exact_match", "entity_acc", "n_examples"])?;
    for r in rows {
        w.write_record([
            r.checkpoint.clone(),
            format!("{:.4}", r.metrics.adequacy),
            format!("{:.4}", r.metrics.exact_match),
            fmt_rate(r.metrics.entity_acc),
            r.metrics.n_examples.to_string(),
        ])?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

/// The same table as aligned plain text.
pub fn format_table(rows: &[ComparisonRow]) -> String {
    let header = ["checkpoint", "adequacy", "exact_match", "entity_acc", "n_examples"];
    let cells: Vec<[String; 5]> = rows
        .iter()
        .map(|r| {
            [
                r.checkpoint.clone(),
                format!("{:.4}", r.metrics.adequacy),
                format!("{:.4}", r.metrics.exact_match),
                fmt_rate(r.metrics.entity_acc),
                r.metrics.n_examples.to_string(),
            ]
        })
        .collect();
    let width: Vec<usize> = (0..5)
        .map(|i| cells.iter().map(|c| c[i].len()).chain([header[i].len()]).max().unwrap_or(0))
        .collect();
    let mut s = String::new();
    let line = |s: &mut String, cols: &[&str]| {
        for (i, c) in cols.iter().enumerate() {
            if i == 0 {
                let _ = write!(s, "{c:<w$}", w = width[0]);
            } else {
                let _ = write!(s, "  {c:>w$}", w = width[i]);
            }
        }
        s.push('\n');
    };
    line(&mut s, &header);
    for c in &cells {
        line(&mut s, &c.iter().map(String::as_str).collect::<Vec<_>>());
    }
    s
}
