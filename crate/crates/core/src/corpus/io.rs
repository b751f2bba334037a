use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{CorpusError, EntityAnnotation, ParallelExample};

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EntityRecord {
    start: usize,
    len: usize,
    target: String,
}

/// One line of a corpus file. Token sequences are whitespace-joined.
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Record {
    id: String,
    source: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    gold: Option<String>,
    #[serde(default)]
    entities: Vec<EntityRecord>,
    direction: String,
}

fn split(s: &str) -> Vec<String> {
    s.split_whitespace().map(String::from).collect()
}

impl From<&ParallelExample> for Record {
    fn from(ex: &ParallelExample) -> Self {
        Record {
            id: ex.id.clone(),
            source: ex.source.join(" "),
            gold: ex.gold.as_ref().map(|g| g.join(" ")),
            entities: ex
                .entities
                .iter()
                .map(|e| EntityRecord { start: e.start, len: e.len, target: e.target.join(" ") })
                .collect(),
            direction: ex.direction.clone(),
        }
    }
}

impl From<Record> for ParallelExample {
    fn from(r: Record) -> Self {
        ParallelExample {
            id: r.id,
            source: split(&r.source),
            gold: r.gold.as_deref().map(split),
            entities: r
                .entities
                .into_iter()
                .map(|e| EntityAnnotation { start: e.start, len: e.len, target: split(&e.target) })
                .collect(),
            direction: r.direction,
        }
    }
}

/// Reads a line-oriented corpus. Blank lines are skipped; errors carry the
/// 1-based line number.
pub fn load_corpus(path: impl AsRef<Path>) -> Result<Vec<ParallelExample>, CorpusError> {
    let path = path.as_ref();
    let io_err = |source| CorpusError::Io { path: path.to_path_buf(), source };
    let reader = BufReader::new(File::open(path).map_err(io_err)?);
    let mut examples = Vec::new();
    let mut ids = HashSet::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(io_err)?;
        if line.trim().is_empty() {
            continue;
        }
        let record: Record = serde_json::from_str(&line)
            .map_err(|e| CorpusError::Malformed { line: line_no, message: e.to_string() })?;
        let example = ParallelExample::from(record);
        example
            .validate()
            .map_err(|e| CorpusError::Malformed { line: line_no, message: e.to_string() })?;
        if !ids.insert(example.id.clone()) {
            return Err(CorpusError::DuplicateId { line: line_no, id: example.id });
        }
        examples.push(example);
    }
    Ok(examples)
}

pub fn save_corpus(path: impl AsRef<Path>, examples: &[ParallelExample]) -> Result<(), CorpusError> {
    let path = path.as_ref();
    let io_err = |source| CorpusError::Io { path: path.to_path_buf(), source };
    let mut w = BufWriter::new(File::create(path).map_err(io_err)?);
    for ex in examples {
        let line = serde_json::to_string(&Record::from(ex)).expect("corpus record serializes");
        writeln!(w, "{line}").map_err(io_err)?;
    }
    w.flush().map_err(io_err)
}
