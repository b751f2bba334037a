use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{RefineError, RefinedPair, Teacher, TeacherKind};
use crate::corpus::{ParallelExample, SyntheticTask};

/// Static references: `y*` depends only on the source, never on the draft.
#[derive(Debug, Clone, Default)]
pub struct FixedTeacher {
    references: HashMap<Vec<String>, Vec<String>>,
}

impl FixedTeacher {
    /// Uses each example's gold as its reference; the first occurrence of a
    /// repeated source wins.
    pub fn from_examples(examples: &[ParallelExample]) -> Result<Self, RefineError> {
        let mut references = HashMap::new();
        for ex in examples {
            let gold = ex.gold()?.to_vec();
            references.entry(ex.source.clone()).or_insert(gold);
        }
        Ok(Self { references })
    }

    pub fn len(&self) -> usize {
        self.references.len()
    }

    pub fn is_empty(&self) -> bool {
        self.references.is_empty()
    }
}

impl Teacher for FixedTeacher {
    fn kind(&self) -> TeacherKind {
        TeacherKind::Fixed
    }

    fn refine(&self, source: &[String], _draft: &[String]) -> Result<RefinedPair, RefineError> {
        self.references
            .get(source)
            .map(|r| RefinedPair::plain(r.clone(), TeacherKind::Fixed))
            .ok_or_else(|| RefineError::MissingReference(source.join(" ")))
    }
}

/// How static references deviate from the exact transduction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FixedPerturbation {
    /// Fraction of entity names that the references never localize: they
    /// keep the source-side rendering wherever they occur.
    pub unlocalized_fraction: f64,
    /// Probability of swapping each adjacent pair of non-entity tokens.
    pub swap_rate: f64,
}

impl Default for FixedPerturbation {
    fn default() -> Self {
        Self { unlocalized_fraction: 0.5, swap_rate: 0.1 }
    }
}

/// Rewrites each example's gold into a paraphrase-perturbed reference.
pub fn perturb_references(
    task: &SyntheticTask,
    examples: &[ParallelExample],
    perturbation: FixedPerturbation,
    seed: u64,
) -> Result<Vec<ParallelExample>, RefineError> {
    for (name, v) in [("unlocalized_fraction", perturbation.unlocalized_fraction), ("swap_rate", perturbation.swap_rate)] {
        if !(0.0..=1.0).contains(&v) {
            return Err(RefineError::Config(format!("{name} must lie in [0, 1], got {v}")));
        }
    }
    let entries = &task.spec().entities;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xf1fe_d5ef);
    let rigid = ((entries.len() as f64) * perturbation.unlocalized_fraction).round() as usize;
    let mut order: Vec<usize> = (0..entries.len()).collect();
    rand::seq::SliceRandom::shuffle(order.as_mut_slice(), &mut rng);
    let mut is_rigid = vec![false; entries.len()];
    for &i in order.iter().take(rigid) {
        is_rigid[i] = true;
    }

    examples
        .iter()
        .map(|ex| {
            let mut reference = task.transduce(&ex.source)?;
            // Replace rigid entities right to left so earlier offsets hold.
            let mut protected = vec![false; reference.len()];
            let mut spans: Vec<(usize, usize, Vec<String>)> = Vec::new();
            for ann in &ex.entities {
                let Some(entry) = entries.iter().position(|e| e.target == ann.target) else { continue };
                let Some(at) = find(&reference, &ann.target) else { continue };
                let replacement =
                    if is_rigid[entry] { entries[entry].source.clone() } else { ann.target.clone() };
                spans.push((at, ann.target.len(), replacement));
            }
            spans.sort_by_key(|s| std::cmp::Reverse(s.0));
            for (at, len, replacement) in spans {
                protected.splice(at..at + len, std::iter::repeat(true).take(replacement.len()));
                reference.splice(at..at + len, replacement);
            }
            let mut i = 0;
            while i + 1 < reference.len() {
                if !protected[i] && !protected[i + 1] && rng.gen_bool(perturbation.swap_rate) {
                    reference.swap(i, i + 1);
                    i += 2;
                } else {
                    i += 1;
                }
            }
            Ok(ParallelExample { gold: Some(reference), ..ex.clone() })
        })
        .collect()
}

fn find(haystack: &[String], needle: &[String]) -> Option<usize> {
    if needle.is_empty() || needle.len() > haystack.len() {
        return None;
    }
    haystack.windows(needle.len()).position(|w| w == needle)
}
