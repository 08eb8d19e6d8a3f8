//! Report serialization: JSON for machines, CSV for plotting.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use textpde_core::harness::{MetricsReport, SeedOutcome};

use crate::{Error, Result};

pub fn metrics_csv<W: Write>(w: W, report: &MetricsReport) -> Result<()> {
    let mut c = csv::Writer::from_writer(w);
    let mut head = vec!["dataset".to_string(), "label".into(), "mean".into(), "std".into()];
    head.extend(report.seeds.iter().map(|s| format!("seed_{s}")));
    c.write_record(&head)?;
    for r in &report.rows {
        let mut rec = vec![
            r.dataset.clone(),
            r.label.clone(),
            r.rel_l2.mean.to_string(),
            r.rel_l2.std.to_string(),
        ];
        rec.extend(r.rel_l2.per_seed.iter().map(|v| v.to_string()));
        c.write_record(&rec)?;
    }
    c.flush().map_err(|e| Error::io("<csv>", e))
}

/// One line per rollout step: mean curve and each seed's curve.
pub fn rollout_csv<W: Write>(w: W, report: &MetricsReport) -> Result<()> {
    let mut c = csv::Writer::from_writer(w);
    let mut head = vec!["dataset".to_string(), "label".into(), "step".into(), "mean_mse".into()];
    head.extend(report.seeds.iter().map(|s| format!("seed_{s}")));
    c.write_record(&head)?;
    for r in &report.rollouts {
        for (k, m) in r.mean_curve.per_step.iter().enumerate() {
            let mut rec = vec![r.dataset.clone(), r.label.clone(), (k + 1).to_string(), m.to_string()];
            rec.extend(r.curves.iter().map(|cv| cv.per_step[k].to_string()));
            c.write_record(&rec)?;
        }
    }
    c.flush().map_err(|e| Error::io("<csv>", e))
}

pub fn history_csv<W: Write>(w: W, outcomes: &[SeedOutcome]) -> Result<()> {
    let mut c = csv::Writer::from_writer(w);
    c.write_record(["seed", "epoch", "train_loss", "val_loss"])?;
    for o in outcomes {
        c.write_record([o.seed.to_string(), "0".into(), String::new(), o.initial_val.to_string()])?;
        for h in &o.history {
            c.write_record([
                o.seed.to_string(),
                h.epoch.to_string(),
                h.train_loss.to_string(),
                h.val_loss.to_string(),
            ])?;
        }
    }
    c.flush().map_err(|e| Error::io("<csv>", e))
}

fn file(dir: &Path, name: &str) -> Result<fs::File> {
    let p = dir.join(name);
    fs::File::create(&p).map_err(|e| Error::io(p, e))
}

/// Writes `report.json`, `report.csv` and, when present, `rollout.csv`
/// under `dir`. Returns the paths written.
pub fn write_report(dir: &Path, report: &MetricsReport) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();
    let json = serde_json::to_vec_pretty(report).map_err(|e| Error::json("report", e))?;
    file(dir, "report.json")?
        .write_all(&json)
        .map_err(|e| Error::io(dir.join("report.json"), e))?;
    written.push(dir.join("report.json"));
    metrics_csv(file(dir, "report.csv")?, report)?;
    written.push(dir.join("report.csv"));
    if !report.rollouts.is_empty() {
        rollout_csv(file(dir, "rollout.csv")?, report)?;
        written.push(dir.join("rollout.csv"));
    }
    Ok(written)
}

pub fn write_history(dir: &Path, outcomes: &[SeedOutcome]) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    history_csv(file(dir, "history.csv")?, outcomes)?;
    Ok(dir.join("history.csv"))
}
