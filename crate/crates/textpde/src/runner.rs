//! Experiment execution with seeds fanned out over worker threads.

use std::path::Path;

use textpde_core::embed::EmbeddingStore;
use textpde_core::harness::{
    ablate, run_seed, run_transfer_seed, Dataset, ExperimentConfig, MetricsReport, SeedOutcome,
};

use crate::formats::dataset::read_dataset;
use crate::{Error, Result};

pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let raw = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let cfg: ExperimentConfig = serde_json::from_slice(&raw).map_err(|e| Error::json(path.display().to_string(), e))?;
    cfg.validate()?;
    Ok(cfg)
}

/// Parses `name=path`, or a bare path named after its file stem.
pub fn parse_data_arg(arg: &str) -> (String, &Path) {
    match arg.split_once('=') {
        Some((name, path)) if !name.is_empty() => (name.to_string(), Path::new(path)),
        _ => {
            let p = Path::new(arg);
            let stem = p.file_stem().and_then(|s| s.to_str()).unwrap_or(arg);
            (stem.to_string(), p)
        }
    }
}

pub fn load_datasets(args: &[String]) -> Result<Vec<Dataset>> {
    args.iter()
        .map(|a| {
            let (name, path) = parse_data_arg(a);
            Ok(Dataset {
                name,
                trajectories: read_dataset(path)?,
            })
        })
        .collect()
}

/// One outcome per configured seed, in seed order.
pub fn run_seeds(
    cfg: &ExperimentConfig,
    datasets: &[Dataset],
    store: Option<&EmbeddingStore>,
    threads: usize,
) -> Result<Vec<SeedOutcome>> {
    cfg.validate()?;
    crate::pool::parallel_map(&cfg.seeds, threads, |&s| {
        if cfg.transfer.is_some() {
            run_transfer_seed(cfg, datasets, store, s)
        } else {
            run_seed(cfg, datasets, store, s)
        }
    })
    .into_iter()
    .map(|r| r.map_err(Error::from))
    .collect()
}

pub fn experiment(
    cfg: &ExperimentConfig,
    datasets: &[Dataset],
    store: Option<&EmbeddingStore>,
    threads: usize,
) -> Result<(MetricsReport, Vec<SeedOutcome>)> {
    let outcomes = run_seeds(cfg, datasets, store, threads)?;
    let label = cfg.text.map_or_else(|| "baseline".to_string(), |t| t.flags.label());
    Ok((MetricsReport::aggregate(cfg.task, &label, &outcomes)?, outcomes))
}

pub fn ablation(
    cfg: &ExperimentConfig,
    datasets: &[Dataset],
    store: Option<&EmbeddingStore>,
    threads: usize,
) -> Result<MetricsReport> {
    let mut failure = None;
    let r = ablate(cfg, |c| {
        run_seeds(c, datasets, store, threads).map_err(|e| {
            let msg = e.to_string();
            failure = Some(e);
            textpde_core::Error::Config(msg)
        })
    });
    match (r, failure) {
        (Ok(rep), _) => Ok(rep),
        (Err(_), Some(e)) => Err(e),
        (Err(e), None) => Err(e.into()),
    }
}
