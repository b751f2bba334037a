use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use anyhow::{anyhow, bail, Context, Result};
use serde_json::json;

use super::settings::{create_run_dir, resolve, write_snapshot, CorpusSettings, RlSettings, SftSettings};
use super::{CompareArgs, EvalArgs, GenCorpusArgs, PlotArgs, RlArgs, SftArgs};
use crate::corpus::{
    default_entity_table, load_corpus, save_corpus, CipherMapping, ParallelExample, SyntheticTask, SyntheticTaskSpec, Vocab,
};
use crate::eval::{compare as compare_checkpoints, evaluate, format_table, write_comparison_csv, NamedCheckpoint};
use crate::policy::{checkpoint, PolicyHyper, PolicyParams};
use crate::refine::{
    perturb_references, FixedPerturbation, FixedTeacher, OracleTeacher, RefinementCache, RemoteConfig, RemoteTeacher,
    Teacher, TeacherKind,
};
use crate::reward::{AlphaPreset, ChrF, EditUnit, RemoteScorer, SemanticScorer};
use crate::rl::{train_rl, write_metrics_csv, write_plot_csv, MetricsRecord, TrainConfig, TrainContext, TrainMode};
use crate::sft::{train_sft, SftConfig};

const TASK: &str = "task.json";
const TRAIN: &str = "train.jsonl";
const DEV: &str = "dev.jsonl";
const TEST: &str = "test.jsonl";
const POOL: &str = "pool.jsonl";
const FIXED_REFS: &str = "fixed_refs.jsonl";
pub const EVAL_CORPUS: &str = "eval_corpus.jsonl";
pub const SFT_CHECKPOINT: &str = "checkpoint.json";
pub const FINAL_CHECKPOINT: &str = "final.json";
pub const METRICS_JSONL: &str = "metrics.jsonl";
pub const METRICS_CSV: &str = "metrics.csv";

fn split_seed(seed: u64, split: u64) -> u64 {
    seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ split.wrapping_mul(0xd1b5_4a32_d192_ed03)
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)? + "\n").with_context(|| format!("writing {}", path.display()))
}

fn load_task(corpus: &Path) -> Result<SyntheticTask> {
    let path = corpus.join(TASK);
    let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    let spec: SyntheticTaskSpec = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    Ok(SyntheticTask::new(spec)?)
}

fn load_split(corpus: &Path, name: &str) -> Result<Vec<ParallelExample>> {
    let path = corpus.join(name);
    load_corpus(&path).with_context(|| format!("loading {}", path.display()))
}

fn corpus_dir(corpus: &str) -> Result<PathBuf> {
    if corpus.is_empty() {
        bail!("missing corpus directory (set --corpus or corpus in the config file)");
    }
    Ok(PathBuf::from(corpus))
}

/// A run directory resolves to its final RL checkpoint, else its SFT
/// checkpoint; a file is taken as is.
pub fn resolve_checkpoint(path: &Path) -> Result<PathBuf> {
    if !path.is_dir() {
        return Ok(path.to_path_buf());
    }
    [FINAL_CHECKPOINT, SFT_CHECKPOINT]
        .iter()
        .map(|f| path.join(f))
        .find(|p| p.is_file())
        .ok_or_else(|| anyhow!("{} holds no checkpoint", path.display()))
}

fn load_checkpoint(path: &Path) -> Result<(PolicyParams, Vocab)> {
    let file = resolve_checkpoint(path)?;
    checkpoint::load(&file).with_context(|| format!("loading checkpoint {}", file.display()))
}

pub fn gen_corpus(a: GenCorpusArgs) -> Result<()> {
    let (s, table) = resolve::<CorpusSettings>(a.config.as_deref(), &a)?;
    let max_entities = s.entity_syllables * s.entity_syllables.saturating_sub(1);
    if s.entity_count > max_entities {
        bail!("{} syllables allow at most {max_entities} entities, asked for {}", s.entity_syllables, s.entity_count);
    }
    if s.train_size == 0 || s.test_size == 0 || s.pool_size == 0 {
        bail!("train, test and pool sizes must be at least 1");
    }
    let spec = SyntheticTaskSpec {
        kind: s.task_kind,
        alphabet_size: s.alphabet_size,
        mapping: CipherMapping::Seeded(s.task_seed),
        entities: default_entity_table(s.entity_count, s.entity_syllables, s.task_seed),
        min_len: s.min_len,
        max_len: s.max_len,
        entity_rate: s.entity_rate,
        corruption_rate: s.corruption_rate,
        direction: "tgt".into(),
    };
    let task = SyntheticTask::new(spec.clone())?;
    let train = task.corrupt(&task.generate(s.train_size, split_seed(s.seed, 1)), s.seed);
    let dev = task.generate(s.dev_size, split_seed(s.seed, 2));
    let test = task.generate(s.test_size, split_seed(s.seed, 3));
    let pool = task.generate(s.pool_size, split_seed(s.seed, 4));
    let perturbation = FixedPerturbation { unlocalized_fraction: s.unlocalized_fraction, swap_rate: s.swap_rate };
    let fixed = perturb_references(&task, &pool, perturbation, s.seed)?;

    let dir = create_run_dir(&a.out)?;
    write_snapshot(&dir, &table)?;
    write_json(&dir.join(TASK), &serde_json::to_value(&spec)?)?;
    for (name, examples) in [(TRAIN, &train), (DEV, &dev), (TEST, &test), (POOL, &pool), (FIXED_REFS, &fixed)] {
        save_corpus(dir.join(name), examples)?;
    }
    println!(
        "corpus {}: vocab {}, train {}, dev {}, test {}, pool {}",
        dir.display(),
        task.vocab().len(),
        train.len(),
        dev.len(),
        test.len(),
        pool.len()
    );
    Ok(())
}

pub fn sft(a: SftArgs) -> Result<()> {
    let (s, table) = resolve::<SftSettings>(a.config.as_deref(), &a)?;
    let corpus = corpus_dir(&s.corpus)?;
    let task = load_task(&corpus)?;
    let vocab = task.vocab().clone();
    let train = load_split(&corpus, TRAIN)?;
    let dev = load_split(&corpus, DEV)?;
    let test = load_split(&corpus, TEST)?;
    let config = SftConfig {
        max_epochs: s.max_epochs,
        batch_size: s.batch_size,
        learning_rate: s.learning_rate,
        max_grad_norm: (s.max_grad_norm > 0.0).then_some(s.max_grad_norm),
        patience: s.patience,
        seed: s.seed,
    };

    let dir = create_run_dir(&a.out)?;
    write_snapshot(&dir, &table)?;
    let start = Instant::now();
    let init = PolicyParams::init(PolicyHyper::new(vocab.len()), s.seed);
    let out = train_sft(init, &vocab, &train, &dev, &config)?;
    checkpoint::save(dir.join(SFT_CHECKPOINT), &out.params, &vocab)?;

    let mut log = csv::Writer::from_path(dir.join("sft_log.csv"))?;
    log.write_record(["epoch", "train_loss", "heldout_exact_match", "heldout_loss"])?;
    for e in &out.log {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        log.write_record([e.epoch.to_string(), e.train_loss.to_string(), opt(e.heldout_exact_match), opt(e.heldout_loss)])?;
    }
    log.flush()?;

    let metrics = evaluate(&out.params, &vocab, &test, &ChrF::default())?;
    save_corpus(dir.join(EVAL_CORPUS), &test)?;
    write_json(&dir.join("eval.json"), &json!({ "best_epoch": out.best_epoch, "final": metrics }))?;
    println!(
        "sft {}: best epoch {}, exact match {:.4}, entity accuracy {}, {:.1}s",
        dir.display(),
        out.best_epoch,
        metrics.exact_match,
        metrics.entity_acc.map(|x| format!("{x:.4}")).unwrap_or_else(|| "n/a".into()),
        start.elapsed().as_secs_f64()
    );
    Ok(())
}

fn build_teacher(s: &RlSettings, kind: TeacherKind, task: &SyntheticTask, corpus: &Path, dir: &Path) -> Result<Box<dyn Teacher>> {
    Ok(match kind {
        TeacherKind::Oracle => Box::new(OracleTeacher::new(Arc::new(task.clone()))),
        TeacherKind::Fixed => Box::new(FixedTeacher::from_examples(&load_split(corpus, FIXED_REFS)?)?),
        TeacherKind::Remote => {
            let config = remote_config(s);
            let cache_path = if s.cache.is_empty() { dir.join("refine_cache.jsonl") } else { PathBuf::from(&s.cache) };
            let cache = RefinementCache::open(&cache_path)?;
            Box::new(RemoteTeacher::new(config, Some(Arc::new(cache)))?)
        }
    })
}

fn remote_config(s: &RlSettings) -> RemoteConfig {
    RemoteConfig {
        endpoint: s.endpoint.clone(),
        model: s.model.clone(),
        api_key_env: s.api_key_env.clone(),
        timeout_secs: s.timeout_secs,
        max_retries: s.max_retries,
        max_concurrency: s.max_concurrency,
        backoff_ms: s.backoff_ms,
        temperature: s.teacher_temperature,
    }
}

pub fn rl(a: RlArgs) -> Result<()> {
    let (s, table) = resolve::<RlSettings>(a.config.as_deref(), &a)?;
    let mode: TrainMode = s.mode.parse()?;
    let kind: TeacherKind = s.teacher.parse()?;
    mode.check_teacher(kind)?;
    if kind == TeacherKind::Remote {
        remote_config(&s).validate()?;
    }
    let alpha: AlphaPreset = s.alpha_preset.parse()?;
    let edit_unit = match s.edit_unit.as_str() {
        "token" => EditUnit::Token,
        "char" => EditUnit::Char,
        other => bail!("unknown edit unit {other:?} (expected token or char)"),
    };
    let config = TrainConfig {
        k: s.k,
        batch_size: s.batch_size,
        iterations: s.iterations,
        alpha: alpha.alpha(),
        kl_beta: s.kl_beta,
        eps_clip: s.eps_clip,
        eps_stat: s.eps_stat,
        learning_rate: s.learning_rate,
        max_grad_norm: (s.max_grad_norm > 0.0).then_some(s.max_grad_norm),
        inner_epochs: s.inner_epochs,
        temperature: s.temperature,
        edit_unit,
        mode,
        max_failure_rate: s.max_failure_rate,
        eval_every: s.eval_every,
        seed: s.seed,
    };
    config.validate()?;

    let corpus = corpus_dir(&s.corpus)?;
    if s.init.is_empty() {
        bail!("missing initial checkpoint (set --init or init in the config file)");
    }
    let task = load_task(&corpus)?;
    let pool = load_split(&corpus, POOL)?;
    let test = load_split(&corpus, TEST)?;
    let (init, vocab) = load_checkpoint(Path::new(&s.init))?;
    if vocab.symbols() != task.vocab().symbols() {
        bail!("checkpoint vocabulary does not match the corpus task");
    }
    let scorer: Box<dyn SemanticScorer> = if s.scorer_url.is_empty() {
        Box::new(ChrF::default())
    } else {
        Box::new(RemoteScorer::new(s.scorer_url.clone(), s.scorer_reference_free))
    };

    let dir = create_run_dir(&a.out)?;
    write_snapshot(&dir, &table)?;
    let teacher = build_teacher(&s, kind, &task, &corpus, &dir)?;
    let ckpt_dir = dir.join("checkpoints");
    fs::create_dir(&ckpt_dir)?;
    let mut jsonl = BufWriter::new(File::create(dir.join(METRICS_JSONL))?);
    let ctx = TrainContext { vocab: &vocab, pool: &pool, heldout: &test, teacher: teacher.as_ref(), scorer: scorer.as_ref() };
    let start = Instant::now();
    let out = train_rl(init.clone(), &ctx, &config, &mut |record, params| {
        let line = serde_json::to_string(record).map_err(|e| e.to_string())?;
        writeln!(jsonl, "{line}").and_then(|_| jsonl.flush()).map_err(|e| format!("writing metrics: {e}"))?;
        if s.checkpoint_every > 0 && record.iteration % s.checkpoint_every == 0 {
            let path = ckpt_dir.join(format!("iter_{:06}.json", record.iteration));
            checkpoint::save(&path, params, &vocab).map_err(|e| e.to_string())?;
        }
        Ok(())
    })?;
    drop(jsonl);

    write_metrics_csv(&out.metrics, File::create(dir.join(METRICS_CSV))?)?;
    checkpoint::save(dir.join(FINAL_CHECKPOINT), &out.params, &vocab)?;
    let before = evaluate(&init, &vocab, &test, scorer.as_ref())?;
    let after = evaluate(&out.params, &vocab, &test, scorer.as_ref())?;
    save_corpus(dir.join(EVAL_CORPUS), &test)?;
    write_json(&dir.join("eval.json"), &json!({ "init": before, "final": after }))?;
    println!(
        "rl {} ({mode}, {} teacher): exact match {:.4} -> {:.4}, {:.1}s",
        dir.display(),
        kind.name(),
        before.exact_match,
        after.exact_match,
        start.elapsed().as_secs_f64()
    );
    Ok(())
}

pub fn eval(a: EvalArgs) -> Result<()> {
    let (ckpt, corpus) = match (&a.run, &a.checkpoint, &a.corpus) {
        (Some(run), _, _) => (resolve_checkpoint(run)?, run.join(EVAL_CORPUS)),
        (None, Some(c), Some(p)) => (resolve_checkpoint(c)?, p.clone()),
        _ => bail!("give --run, or --checkpoint with --corpus"),
    };
    let (params, vocab) = load_checkpoint(&ckpt)?;
    let examples = load_corpus(&corpus).with_context(|| format!("loading {}", corpus.display()))?;
    let metrics = evaluate(&params, &vocab, &examples, &ChrF::default())?;
    let report = json!({
        "checkpoint": ckpt.display().to_string(),
        "corpus": corpus.display().to_string(),
        "metrics": metrics,
    });
    if let Some(out) = &a.out {
        let dir = create_run_dir(out)?;
        write_json(&dir.join("eval.json"), &report)?;
    }
    println!("{}", serde_json::to_string_pretty(&metrics)?);
    Ok(())
}

pub fn compare(a: CompareArgs) -> Result<()> {
    let checkpoints = a
        .checkpoints
        .iter()
        .map(|spec| {
            let (name, path) = spec.split_once('=').ok_or_else(|| anyhow!("expected NAME=PATH, got {spec:?}"))?;
            let (params, vocab) = load_checkpoint(Path::new(path))?;
            Ok(NamedCheckpoint { name: name.to_string(), params, vocab })
        })
        .collect::<Result<Vec<_>>>()?;
    let examples = load_corpus(&a.corpus).with_context(|| format!("loading {}", a.corpus.display()))?;
    let rows = compare_checkpoints(&checkpoints, &examples, &ChrF::default())?;
    if let Some(out) = &a.out {
        let dir = create_run_dir(out)?;
        write_comparison_csv(&rows, File::create(dir.join("comparison.csv"))?)?;
    }
    print!("{}", format_table(&rows));
    Ok(())
}

pub fn plot_data(a: PlotArgs) -> Result<()> {
    let path = a.run.join(METRICS_JSONL);
    let file = File::open(&path).with_context(|| format!("opening {}", path.display()))?;
    let records = BufReader::new(file)
        .lines()
        .enumerate()
        .filter(|(_, l)| l.as_ref().map(|l| !l.trim().is_empty()).unwrap_or(true))
        .map(|(i, line)| {
            let line = line?;
            serde_json::from_str::<MetricsRecord>(&line).with_context(|| format!("{} line {}", path.display(), i + 1))
        })
        .collect::<Result<Vec<_>>>()?;
    match &a.out {
        Some(out) => {
            let dir = create_run_dir(out)?;
            write_plot_csv(&records, File::create(dir.join("plot.csv"))?)?;
        }
        None => write_plot_csv(&records, std::io::stdout().lock())?,
    }
    Ok(())
}
