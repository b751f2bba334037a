use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{RefineError, RefinedPair, Teacher, TeacherKind};
use crate::corpus::SyntheticTask;

/// One edit against the draft; positions index the original draft.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "op")]
pub enum EditOp {
    Substitute { pos: usize, token: String },
    Delete { pos: usize },
    /// Insert before draft position `pos` (`pos == len` appends).
    Insert { pos: usize, token: String },
}

/// Minimum-cost script turning `draft` into `gold`.
///
/// Walks the suffix edit-distance table from the front, so edits are placed
/// as early as possible; at each cell a match is kept when optimal, otherwise
/// substitution is preferred over deletion, and deletion over insertion.
pub fn edit_script(draft: &[String], gold: &[String]) -> Vec<EditOp> {
    let (n, m) = (draft.len(), gold.len());
    let w = m + 1;
    // d[i * w + j] = distance between draft[i..] and gold[j..].
    let mut d = vec![0usize; (n + 1) * w];
    for i in (0..=n).rev() {
        for j in (0..=m).rev() {
            d[i * w + j] = if i == n {
                m - j
            } else if j == m {
                n - i
            } else {
                let sub = d[(i + 1) * w + j + 1] + usize::from(draft[i] != gold[j]);
                sub.min(d[(i + 1) * w + j] + 1).min(d[i * w + j + 1] + 1)
            };
        }
    }
    let mut script = Vec::with_capacity(d[0]);
    let (mut i, mut j) = (0, 0);
    while i < n || j < m {
        let here = d[i * w + j];
        if i < n && j < m && draft[i] == gold[j] && here == d[(i + 1) * w + j + 1] {
            i += 1;
            j += 1;
        } else if i < n && j < m && here == d[(i + 1) * w + j + 1] + 1 {
            script.push(EditOp::Substitute { pos: i, token: gold[j].clone() });
            i += 1;
            j += 1;
        } else if i < n && here == d[(i + 1) * w + j] + 1 {
            script.push(EditOp::Delete { pos: i });
            i += 1;
        } else {
            script.push(EditOp::Insert { pos: i, token: gold[j].clone() });
            j += 1;
        }
    }
    script
}

/// Applies a script produced by [`edit_script`] (ordered by position).
pub fn apply_script(draft: &[String], script: &[EditOp]) -> Vec<String> {
    let mut out = Vec::with_capacity(draft.len() + script.len());
    let mut ops = script.iter().peekable();
    for pos in 0..=draft.len() {
        let mut replaced = false;
        while let Some(op) = ops.peek() {
            match op {
                EditOp::Insert { pos: p, token } if *p == pos => out.push(token.clone()),
                EditOp::Substitute { pos: p, token } if *p == pos => {
                    out.push(token.clone());
                    replaced = true;
                }
                EditOp::Delete { pos: p } if *p == pos => replaced = true,
                _ => break,
            }
            ops.next();
        }
        if pos < draft.len() && !replaced {
            out.push(draft[pos].clone());
        }
    }
    out
}

/// Deterministic teacher for synthetic tasks: corrects the draft to the exact
/// transduction with a minimal edit script.
#[derive(Clone)]
pub struct OracleTeacher {
    task: Arc<SyntheticTask>,
}

impl OracleTeacher {
    pub fn new(task: Arc<SyntheticTask>) -> Self {
        Self { task }
    }
}

impl Teacher for OracleTeacher {
    fn kind(&self) -> TeacherKind {
        TeacherKind::Oracle
    }

    fn refine(&self, source: &[String], draft: &[String]) -> Result<RefinedPair, RefineError> {
        let gold = self.task.transduce(source)?;
        let script = edit_script(draft, &gold);
        let refined = apply_script(draft, &script);
        debug_assert_eq!(refined, gold);
        Ok(RefinedPair { script: Some(script), ..RefinedPair::plain(refined, TeacherKind::Oracle) })
    }
}
