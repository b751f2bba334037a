//! Flat `key = value` configuration: defaults, then an optional TOML file,
//! then command-line flags. Every resolved configuration is written back
//! into the run directory as `config.toml`.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use toml::Table;

use crate::corpus::TaskKind;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusSettings {
    pub task_kind: TaskKind,
    /// Seeds the cipher mapping and the entity table.
    pub task_seed: u64,
    pub alphabet_size: usize,
    pub entity_count: usize,
    pub entity_syllables: usize,
    pub min_len: usize,
    pub max_len: usize,
    pub entity_rate: f64,
    pub corruption_rate: f64,
    pub train_size: usize,
    pub dev_size: usize,
    pub test_size: usize,
    pub pool_size: usize,
    /// Seeds example sampling and corruption.
    pub seed: u64,
    pub unlocalized_fraction: f64,
    pub swap_rate: f64,
}

impl Default for CorpusSettings {
    fn default() -> Self {
        Self {
            task_kind: TaskKind::SubstitutionCipher,
            task_seed: 0,
            alphabet_size: 10,
            entity_count: 12,
            entity_syllables: 8,
            min_len: 3,
            max_len: 7,
            entity_rate: 0.6,
            corruption_rate: 0.2,
            train_size: 150,
            dev_size: 100,
            test_size: 300,
            pool_size: 3000,
            seed: 0,
            unlocalized_fraction: 0.5,
            swap_rate: 0.1,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SftSettings {
    /// Directory written by `gen-corpus`.
    pub corpus: String,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    /// 0 disables clipping.
    pub max_grad_norm: f64,
    pub seed: u64,
}

impl Default for SftSettings {
    fn default() -> Self {
        let d = crate::sft::SftConfig::default();
        Self {
            corpus: String::new(),
            learning_rate: d.learning_rate,
            batch_size: d.batch_size,
            max_epochs: d.max_epochs,
            patience: d.patience,
            max_grad_norm: d.max_grad_norm.unwrap_or(0.0),
            seed: d.seed,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RlSettings {
    pub corpus: String,
    /// SFT run directory or checkpoint file.
    pub init: String,
    pub mode: String,
    pub teacher: String,
    pub alpha_preset: String,
    pub k: usize,
    pub batch_size: usize,
    pub iterations: usize,
    pub kl_beta: f64,
    pub eps_clip: f64,
    pub eps_stat: f64,
    pub learning_rate: f64,
    pub max_grad_norm: f64,
    pub inner_epochs: usize,
    pub temperature: f64,
    pub edit_unit: String,
    pub max_failure_rate: f64,
    pub eval_every: usize,
    /// 0 writes only the final checkpoint.
    pub checkpoint_every: usize,
    pub seed: u64,
    pub endpoint: String,
    pub model: String,
    pub api_key_env: String,
    pub timeout_secs: f64,
    pub max_retries: u32,
    pub max_concurrency: usize,
    pub backoff_ms: u64,
    pub teacher_temperature: f64,
    /// Refinement cache file; empty means `refine_cache.jsonl` in the run
    /// directory.
    pub cache: String,
    /// Remote semantic scorer URL; empty selects the built-in chrF.
    pub scorer_url: String,
    pub scorer_reference_free: bool,
}

impl Default for RlSettings {
    fn default() -> Self {
        let d = crate::rl::TrainConfig::default();
        let r = crate::refine::RemoteConfig::new("", "");
        Self {
            corpus: String::new(),
            init: String::new(),
            mode: d.mode.name().into(),
            teacher: "oracle".into(),
            alpha_preset: "balanced".into(),
            k: d.k,
            batch_size: d.batch_size,
            iterations: d.iterations,
            kl_beta: d.kl_beta,
            eps_clip: d.eps_clip,
            eps_stat: d.eps_stat,
            learning_rate: d.learning_rate,
            max_grad_norm: d.max_grad_norm.unwrap_or(0.0),
            inner_epochs: d.inner_epochs,
            temperature: d.temperature,
            edit_unit: "token".into(),
            max_failure_rate: d.max_failure_rate,
            eval_every: d.eval_every,
            checkpoint_every: 50,
            seed: d.seed,
            endpoint: String::new(),
            model: String::new(),
            api_key_env: r.api_key_env,
            timeout_secs: r.timeout_secs,
            max_retries: r.max_retries,
            max_concurrency: r.max_concurrency,
            backoff_ms: r.backoff_ms,
            teacher_temperature: r.temperature,
            cache: String::new(),
            scorer_url: String::new(),
            scorer_reference_free: false,
        }
    }
}

/// Flags given on the command line, as a table of the set ones.
fn flag_table(flags: &impl Serialize) -> Result<Table> {
    let serde_json::Value::Object(map) = serde_json::to_value(flags)? else {
        bail!("flags must serialize to a map");
    };
    let set: serde_json::Map<String, serde_json::Value> = map.into_iter().filter(|(_, v)| !v.is_null()).collect();
    Ok(Table::try_from(set)?)
}

fn overlay(base: &mut Table, layer: Table, origin: &str) -> Result<()> {
    for (key, value) in layer {
        if value.is_table() || value.is_array() {
            bail!("{origin}: {key:?} is not a scalar (the config format is flat key = value)");
        }
        if !base.contains_key(&key) {
            bail!("{origin}: unknown key {key:?}");
        }
        base.insert(key, value);
    }
    Ok(())
}

/// Resolves `T` with precedence flags > file > defaults; also returns the
/// resolved table for the run directory snapshot.
pub fn resolve<T>(file: Option<&Path>, flags: &impl Serialize) -> Result<(T, Table)>
where
    T: Serialize + DeserializeOwned + Default,
{
    let mut table = Table::try_from(T::default())?;
    if let Some(path) = file {
        let text = fs::read_to_string(path).with_context(|| format!("config file {}", path.display()))?;
        let layer: Table = toml::from_str(&text).with_context(|| format!("config file {}", path.display()))?;
        overlay(&mut table, layer, &format!("config file {}", path.display()))?;
    }
    overlay(&mut table, flag_table(flags)?, "flags")?;
    let resolved = table.clone().try_into().context("invalid configuration")?;
    Ok((resolved, table))
}

/// Creates a fresh run directory; an existing one is never reused.
pub fn create_run_dir(path: &Path) -> Result<PathBuf> {
    if path.exists() {
        bail!("run directory {} already exists", path.display());
    }
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    fs::create_dir(path).with_context(|| format!("creating run directory {}", path.display()))?;
    Ok(path.to_path_buf())
}

pub fn write_snapshot(dir: &Path, table: &Table) -> Result<()> {
    fs::write(dir.join("config.toml"), toml::to_string(table)?).context("writing config snapshot")
}
