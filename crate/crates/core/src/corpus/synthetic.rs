use std::collections::{HashMap, HashSet};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::vocab::{direction_token, SEP};
use super::{CorpusError, EntityAnnotation, ParallelExample, Vocab};

/// Reserved first token of every entity name, on both sides.
pub const ENTITY_MARKER: &str = "@";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TaskKind {
    /// Symbol-by-symbol substitution; entities rendered through the table.
    SubstitutionCipher,
    /// Substitution followed by reversing the order of units (an entity
    /// name is one unit).
    WordMappingWithReorder,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CipherMapping {
    /// Uniformly random permutation drawn from the seed.
    Seeded(u64),
    /// `mapping[i]` is the image of alphabet symbol `i`.
    Explicit(Vec<usize>),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntityEntry {
    pub source: Vec<String>,
    pub target: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticTaskSpec {
    pub kind: TaskKind,
    pub alphabet_size: usize,
    pub mapping: CipherMapping,
    pub entities: Vec<EntityEntry>,
    pub min_len: usize,
    pub max_len: usize,
    /// Probability that an example carries one entity.
    pub entity_rate: f64,
    /// Fraction of gold tokens replaced in the SFT corpus.
    pub corruption_rate: f64,
    pub direction: String,
}

impl SyntheticTaskSpec {
    /// A cipher task with no entities.
    pub fn cipher(alphabet_size: usize, mapping: CipherMapping) -> Self {
        Self {
            kind: TaskKind::SubstitutionCipher,
            alphabet_size,
            mapping,
            entities: Vec::new(),
            min_len: 3,
            max_len: 8,
            entity_rate: 0.0,
            corruption_rate: 0.0,
            direction: "tgt".into(),
        }
    }

    /// The default desk-scale task: a seeded cipher with an entity table.
    pub fn cipher_with_entities(seed: u64) -> Self {
        Self {
            entities: default_entity_table(12, 8, seed),
            entity_rate: 0.6,
            corruption_rate: 0.2,
            min_len: 3,
            max_len: 7,
            ..Self::cipher(10, CipherMapping::Seeded(seed))
        }
    }
}

/// Entity names are `@` plus two syllables. Source syllables and target
/// syllables come from disjoint inventories; a seeded bijection between the
/// inventories gives each name a canonical rendering.
pub fn default_entity_table(count: usize, syllables: usize, seed: u64) -> Vec<EntityEntry> {
    let syllable = |consonants: &[u8], i: usize| {
        let vowels = b"aeiou";
        let c = consonants[i / vowels.len() % consonants.len()] as char;
        let v = vowels[i % vowels.len()] as char;
        format!("{}{}", c.to_ascii_uppercase(), v)
    };
    let src: Vec<String> = (0..syllables).map(|i| syllable(b"klmnprst", i)).collect();
    let tgt: Vec<String> = (0..syllables).map(|i| syllable(b"bdfghjvz", i)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_e471);
    let mut perm: Vec<usize> = (0..syllables).collect();
    perm.shuffle(&mut rng);
    let mut pairs: Vec<(usize, usize)> = (0..syllables)
        .flat_map(|a| (0..syllables).filter(move |&b| b != a).map(move |b| (a, b)))
        .collect();
    pairs.shuffle(&mut rng);
    pairs
        .into_iter()
        .take(count)
        .map(|(a, b)| EntityEntry {
            source: vec![ENTITY_MARKER.into(), src[a].clone(), src[b].clone()],
            target: vec![ENTITY_MARKER.into(), tgt[perm[a]].clone(), tgt[perm[b]].clone()],
        })
        .collect()
}

fn alphabet_symbol(i: usize) -> String {
    if i < 26 {
        ((b'a' + i as u8) as char).to_string()
    } else {
        format!("s{i}")
    }
}

/// A validated task: resolved mapping, entity lookup and vocabulary.
#[derive(Debug, Clone)]
pub struct SyntheticTask {
    spec: SyntheticTaskSpec,
    alphabet: Vec<String>,
    mapping: Vec<usize>,
    alphabet_index: HashMap<String, usize>,
    target_pool: Vec<String>,
    vocab: Vocab,
}

impl SyntheticTask {
    pub fn new(spec: SyntheticTaskSpec) -> Result<Self, CorpusError> {
        let cfg = |m: String| CorpusError::Config(m);
        if spec.alphabet_size == 0 {
            return Err(cfg("empty alphabet".into()));
        }
        if spec.min_len == 0 || spec.min_len > spec.max_len {
            return Err(cfg(format!("bad length range {}..={}", spec.min_len, spec.max_len)));
        }
        if !(0.0..1.0).contains(&spec.corruption_rate) {
            return Err(cfg(format!("corruption rate {} outside [0,1)", spec.corruption_rate)));
        }
        if !(0.0..=1.0).contains(&spec.entity_rate) {
            return Err(cfg(format!("entity rate {} outside [0,1]", spec.entity_rate)));
        }
        if spec.direction.is_empty() || spec.direction.chars().any(char::is_whitespace) {
            return Err(cfg(format!("bad direction tag {:?}", spec.direction)));
        }
        let n = spec.alphabet_size;
        let mapping = match &spec.mapping {
            CipherMapping::Seeded(seed) => {
                let mut perm: Vec<usize> = (0..n).collect();
                perm.shuffle(&mut ChaCha8Rng::seed_from_u64(*seed));
                perm
            }
            CipherMapping::Explicit(m) => {
                let mut seen = vec![false; n];
                if m.len() != n || m.iter().any(|&j| j >= n || std::mem::replace(&mut seen[j], true)) {
                    return Err(cfg("cipher mapping is not a bijection on the alphabet".into()));
                }
                m.clone()
            }
        };
        let alphabet: Vec<String> = (0..n).map(alphabet_symbol).collect();
        let alphabet_index: HashMap<String, usize> =
            alphabet.iter().cloned().enumerate().map(|(i, s)| (s, i)).collect();

        let mut entity_keys = HashSet::new();
        let mut entity_source_syms = Vec::new();
        let mut entity_target_syms = Vec::new();
        for (i, e) in spec.entities.iter().enumerate() {
            for name in [&e.source, &e.target] {
                if name.len() < 2 || name[0] != ENTITY_MARKER {
                    return Err(cfg(format!("entity {i} must be {ENTITY_MARKER} plus a name")));
                }
                if let Some(t) = name[1..]
                    .iter()
                    .find(|t| alphabet_index.contains_key(*t) || t.starts_with('<') || *t == ENTITY_MARKER)
                {
                    return Err(cfg(format!("entity token {t:?} collides with reserved or ordinary vocabulary")));
                }
            }
            if !entity_keys.insert(e.source.clone()) {
                return Err(cfg(format!("duplicate entity key {:?}", e.source.join(" "))));
            }
            entity_source_syms.extend(e.source[1..].iter().cloned());
            entity_target_syms.extend(e.target[1..].iter().cloned());
        }
        let dedup = |v: Vec<String>| {
            let mut seen = HashSet::new();
            v.into_iter().filter(|s| seen.insert(s.clone())).collect::<Vec<_>>()
        };
        let entity_source_syms = dedup(entity_source_syms);
        let entity_target_syms = dedup(entity_target_syms);

        let mut symbols = vec![SEP.to_string(), direction_token(&spec.direction)];
        if !spec.entities.is_empty() {
            symbols.push(ENTITY_MARKER.into());
        }
        symbols.extend(alphabet.iter().cloned());
        let mut extra = entity_source_syms;
        extra.extend(entity_target_syms.iter().cloned());
        symbols.extend(dedup(extra));
        let vocab = Vocab::new(symbols)?;

        let mut target_pool = alphabet.clone();
        target_pool.extend(entity_target_syms);

        Ok(Self {
            spec,
            alphabet,
            mapping,
            alphabet_index,
            target_pool,
            vocab,
        })
    }

    pub fn spec(&self) -> &SyntheticTaskSpec {
        &self.spec
    }

    pub fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    pub fn alphabet(&self) -> &[String] {
        &self.alphabet
    }

    /// Locates entity names in a source sequence.
    pub fn entity_spans(&self, source: &[String]) -> Result<Vec<EntityAnnotation>, CorpusError> {
        Ok(self.units(source)?.into_iter().filter_map(|u| match u {
            Unit::Entity { start, entry } => Some(EntityAnnotation {
                start,
                len: self.spec.entities[entry].source.len(),
                target: self.spec.entities[entry].target.clone(),
            }),
            Unit::Symbol(_) => None,
        }).collect())
    }

    /// The exact transduction of `source`.
    pub fn transduce(&self, source: &[String]) -> Result<Vec<String>, CorpusError> {
        let mut rendered: Vec<Vec<String>> = self
            .units(source)?
            .into_iter()
            .map(|u| match u {
                Unit::Symbol(i) => vec![self.alphabet[self.mapping[i]].clone()],
                Unit::Entity { entry, .. } => self.spec.entities[entry].target.clone(),
            })
            .collect();
        if self.spec.kind == TaskKind::WordMappingWithReorder {
            rendered.reverse();
        }
        Ok(rendered.concat())
    }

    fn units(&self, source: &[String]) -> Result<Vec<Unit>, CorpusError> {
        let mut units = Vec::new();
        let mut i = 0;
        while i < source.len() {
            let tok = &source[i];
            if let Some(&sym) = self.alphabet_index.get(tok) {
                units.push(Unit::Symbol(sym));
                i += 1;
            } else if tok == ENTITY_MARKER {
                let entry = self
                    .spec
                    .entities
                    .iter()
                    .enumerate()
                    .filter(|(_, e)| source[i..].starts_with(&e.source))
                    .max_by_key(|(_, e)| e.source.len())
                    .map(|(j, _)| j)
                    .ok_or_else(|| CorpusError::UnknownToken(source[i..].join(" ")))?;
                units.push(Unit::Entity { start: i, entry });
                i += self.spec.entities[entry].source.len();
            } else {
                return Err(CorpusError::UnknownToken(tok.clone()));
            }
        }
        Ok(units)
    }

    /// Draws `n` examples; a pure function of the task and `seed`.
    pub fn generate(&self, n: usize, seed: u64) -> Vec<ParallelExample> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|i| {
                let len = rng.gen_range(self.spec.min_len..=self.spec.max_len);
                let mut source: Vec<String> = (0..len)
                    .map(|_| self.alphabet[rng.gen_range(0..self.alphabet.len())].clone())
                    .collect();
                if !self.spec.entities.is_empty() && rng.gen_bool(self.spec.entity_rate) {
                    let entry = &self.spec.entities[rng.gen_range(0..self.spec.entities.len())];
                    let at = rng.gen_range(0..=len);
                    source.splice(at..at, entry.source.iter().cloned());
                }
                let gold = self.transduce(&source).expect("generated source is in the task language");
                let entities = self.entity_spans(&source).expect("generated source is in the task language");
                ParallelExample {
                    id: format!("s{seed}-{i:06}"),
                    source,
                    gold: Some(gold),
                    entities,
                    direction: self.spec.direction.clone(),
                }
            })
            .collect()
    }

    /// Copies `examples` with each gold token independently replaced, with
    /// probability `corruption_rate`, by a different target-side symbol
    /// drawn uniformly.
    pub fn corrupt(&self, examples: &[ParallelExample], seed: u64) -> Vec<ParallelExample> {
        let rate = self.spec.corruption_rate;
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xc0ff_ee00);
        examples
            .iter()
            .map(|ex| {
                let mut ex = ex.clone();
                if let Some(gold) = ex.gold.as_mut() {
                    for tok in gold.iter_mut() {
                        if rate > 0.0 && rng.gen_bool(rate) && self.target_pool.len() > 1 {
                            let choices: Vec<&String> = self.target_pool.iter().filter(|s| *s != tok).collect();
                            *tok = choices[rng.gen_range(0..choices.len())].clone();
                        }
                    }
                }
                ex
            })
            .collect()
    }
}

enum Unit {
    Symbol(usize),
    Entity { start: usize, entry: usize },
}

/// Builds the task for `spec` and draws `n` examples from `seed`.
pub fn generate_corpus(
    spec: &SyntheticTaskSpec,
    n: usize,
    seed: u64,
) -> Result<Vec<ParallelExample>, CorpusError> {
    if n == 0 {
        return Err(CorpusError::Config("corpus size must be at least 1".into()));
    }
    Ok(SyntheticTask::new(spec.clone())?.generate(n, seed))
}
