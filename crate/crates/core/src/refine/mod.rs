//! Teachers that turn an actor draft into a refined target: an exact oracle
//! for synthetic tasks, static references for the fixed-reference baseline,
//! and a remote chat-completions client with a persistent cache.

pub mod cache;
mod fixed;
mod oracle;
mod remote;

use std::path::PathBuf;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use cache::{cache_key, CacheEntry, RefinementCache};
pub use fixed::{perturb_references, FixedPerturbation, FixedTeacher};
pub use oracle::{apply_script, edit_script, EditOp, OracleTeacher};
pub use remote::{build_request, parse_response, RemoteConfig, RemoteTeacher, SYSTEM_PROMPT};

use crate::corpus::CorpusError;
use crate::http::TransportError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TeacherKind {
    Oracle,
    Remote,
    Fixed,
}

impl TeacherKind {
    pub fn name(self) -> &'static str {
        match self {
            TeacherKind::Oracle => "oracle",
            TeacherKind::Remote => "remote",
            TeacherKind::Fixed => "fixed",
        }
    }
}

impl std::str::FromStr for TeacherKind {
    type Err = RefineError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "oracle" => Ok(TeacherKind::Oracle),
            "remote" => Ok(TeacherKind::Remote),
            "fixed" => Ok(TeacherKind::Fixed),
            other => Err(RefineError::Config(format!("unknown teacher {other:?} (expected oracle, remote or fixed)"))),
        }
    }
}

/// One failed remote attempt.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Attempt {
    pub attempt: u32,
    pub elapsed_ms: u64,
    pub error: String,
}

#[derive(Debug, thiserror::Error)]
pub enum RefineError {
    #[error("teacher configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error("no fixed reference for source {0:?}")]
    MissingReference(String),
    #[error("remote refinement failed after {} attempts: {}", attempts.len(), attempts.last().map(|a| a.error.as_str()).unwrap_or("no attempts"))]
    Remote { attempts: Vec<Attempt> },
    #[error("teacher returned an unusable refinement: {0}")]
    Invalid(String),
    #[error(transparent)]
    Transport(#[from] TransportError),
    #[error("refinement cache {path}: {message}")]
    Cache { path: PathBuf, message: String },
}

/// A refined target `y*` for one draft.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefinedPair {
    pub refined: Vec<String>,
    pub kind: TeacherKind,
    /// Edit operations turning the draft into `refined` (oracle only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub script: Option<Vec<EditOp>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub latency_ms: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt_tokens: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub completion_tokens: Option<u64>,
    #[serde(default)]
    pub cached: bool,
}

impl RefinedPair {
    pub(crate) fn plain(refined: Vec<String>, kind: TeacherKind) -> Self {
        Self { refined, kind, script: None, latency_ms: None, prompt_tokens: None, completion_tokens: None, cached: false }
    }
}

/// A `(source, draft)` pair submitted for refinement.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct RefineRequest {
    pub source: Vec<String>,
    pub draft: Vec<String>,
}

pub trait Teacher: Send + Sync {
    fn kind(&self) -> TeacherKind;

    fn refine(&self, source: &[String], draft: &[String]) -> Result<RefinedPair, RefineError>;

    /// Refines every pair; the output order matches the input and each entry
    /// succeeds or fails independently.
    fn refine_batch(&self, pairs: &[RefineRequest]) -> Vec<Result<RefinedPair, RefineError>> {
        pairs.par_iter().map(|p| self.refine(&p.source, &p.draft)).collect()
    }
}

/// Which teacher to build, and the remote settings when it is remote.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TeacherConfig {
    pub kind: TeacherKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub remote: Option<RemoteConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cache_path: Option<PathBuf>,
}

impl TeacherConfig {
    pub fn oracle() -> Self {
        Self { kind: TeacherKind::Oracle, remote: None, cache_path: None }
    }

    pub fn fixed() -> Self {
        Self { kind: TeacherKind::Fixed, remote: None, cache_path: None }
    }

    pub fn validate(&self) -> Result<(), RefineError> {
        match (self.kind, &self.remote) {
            (TeacherKind::Remote, None) => Err(RefineError::Config("remote teacher needs endpoint settings".into())),
            (TeacherKind::Remote, Some(r)) => r.validate(),
            (k, Some(_)) => Err(RefineError::Config(format!("remote settings given for the {} teacher", k.name()))),
            (_, None) => Ok(()),
        }
    }
}
