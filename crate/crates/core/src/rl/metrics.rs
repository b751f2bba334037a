use std::io::Write;

use serde::{Deserialize, Serialize};

/// Per-iteration training record; one JSON line and one CSV row each.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub iteration: usize,
    pub mean_reward: f64,
    /// Mean draft length in tokens, end-of-sequence excluded.
    pub mean_response_len: f64,
    /// Mean semantic score of drafts against their refinements, in [0, 1].
    pub adequacy: f64,
    /// Share of source entities rendered correctly in the drafts.
    pub entity_acc: Option<f64>,
    pub mean_z: f64,
    pub clip_fraction: f64,
    pub mean_ratio: f64,
    pub mean_kl: f64,
    pub grad_norm: f64,
    pub objective: f64,
    pub rollouts: usize,
    pub dropped: usize,
    pub eval_adequacy: Option<f64>,
    pub eval_exact_match: Option<f64>,
    pub eval_entity_acc: Option<f64>,
}

/// Every field of every record, missing values as empty cells.
pub fn write_metrics_csv<W: Write>(records: &[MetricsRecord], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in records {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Columns `step, reward, resp_len, adequacy` for training-curve plots.
pub fn write_plot_csv<W: Write>(records: &[MetricsRecord], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["step", "reward", "resp_len", "adequacy"])?;
    for r in records {
        w.write_record([
            r.iteration.to_string(),
            r.mean_reward.to_string(),
            r.mean_response_len.to_string(),
            r.adequacy.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
