//! Data model, corpus files and deterministic synthetic translation tasks.

mod io;
mod synthetic;
mod vocab;

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

pub use io::{load_corpus, save_corpus};
pub use synthetic::{
    default_entity_table, generate_corpus, CipherMapping, EntityEntry, SyntheticTask, SyntheticTaskSpec, TaskKind,
    ENTITY_MARKER,
};
pub use vocab::{direction_token, TokenId, Vocab, BOS, EOS, PAD, SEP, UNK};

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("unknown token {0:?}")]
    UnknownToken(String),
    #[error("invalid example {id}: {message}")]
    Invalid { id: String, message: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: malformed record: {message}")]
    Malformed { line: usize, message: String },
    #[error("line {line}: duplicate id {id:?}")]
    DuplicateId { line: usize, id: String },
}

/// A named entity occurrence: a span of the source and its canonical
/// target-side rendering.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntityAnnotation {
    pub start: usize,
    pub len: usize,
    pub target: Vec<String>,
}

impl EntityAnnotation {
    pub fn end(&self) -> usize {
        self.start + self.len
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParallelExample {
    pub id: String,
    pub source: Vec<String>,
    pub gold: Option<Vec<String>>,
    pub entities: Vec<EntityAnnotation>,
    pub direction: String,
}

impl ParallelExample {
    /// Checks the structural invariants: non-empty source, entity spans
    /// inside the source and pairwise disjoint.
    pub fn validate(&self) -> Result<(), CorpusError> {
        let invalid = |message: String| CorpusError::Invalid {
            id: self.id.clone(),
            message,
        };
        if self.source.is_empty() {
            return Err(invalid("empty source".into()));
        }
        let mut spans: Vec<&EntityAnnotation> = self.entities.iter().collect();
        spans.sort_by_key(|e| e.start);
        let mut last_end = 0;
        for (i, e) in spans.iter().enumerate() {
            if e.len == 0 || e.target.is_empty() {
                return Err(invalid(format!("entity at {} is empty", e.start)));
            }
            if e.end() > self.source.len() {
                return Err(invalid(format!(
                    "entity span {}..{} exceeds source length {}",
                    e.start,
                    e.end(),
                    self.source.len()
                )));
            }
            if i > 0 && e.start < last_end {
                return Err(invalid(format!("entity span at {} overlaps", e.start)));
            }
            last_end = e.end();
        }
        Ok(())
    }

    pub fn gold(&self) -> Result<&[String], CorpusError> {
        self.gold.as_deref().ok_or_else(|| CorpusError::Invalid {
            id: self.id.clone(),
            message: "missing gold target".into(),
        })
    }
}

/// Returns true when `needle` occurs contiguously inside `haystack`.
pub fn contains_span<T: PartialEq>(haystack: &[T], needle: &[T]) -> bool {
    !needle.is_empty()
        && needle.len() <= haystack.len()
        && haystack.windows(needle.len()).any(|w| w == needle)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn example(entities: Vec<EntityAnnotation>) -> ParallelExample {
        ParallelExample {
            id: "x".into(),
            source: vec!["a".into(), "b".into(), "c".into()],
            gold: None,
            entities,
            direction: "t".into(),
        }
    }

    #[test]
    fn entity_spans_are_checked() {
        let ok = EntityAnnotation { start: 1, len: 2, target: vec!["z".into()] };
        assert!(example(vec![ok.clone()]).validate().is_ok());
        let out = EntityAnnotation { start: 2, len: 2, target: vec!["z".into()] };
        assert!(example(vec![out]).validate().is_err());
        let overlap = EntityAnnotation { start: 0, len: 2, target: vec!["z".into()] };
        assert!(example(vec![ok, overlap]).validate().is_err());
    }

    #[test]
    fn span_search() {
        assert!(contains_span(&[1, 2, 3], &[2, 3]));
        assert!(!contains_span(&[1, 2, 3], &[3, 2]));
        assert!(!contains_span::<i32>(&[1], &[]));
    }
}
