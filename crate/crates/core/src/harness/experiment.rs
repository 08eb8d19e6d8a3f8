use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::embed::EmbeddingStore;
use crate::model::SurrogateModel;
use crate::sim::Equation;
use crate::tensor::AdamConfig;
use crate::text::DescriptionFlags;
use crate::{Error, Result};

use super::config::{ExperimentConfig, Task};
use super::data::{build_pairs, spaced, Corpus, Dataset, Pair};
use super::metrics::MetricsReport;
use super::rollout::{rollout_model, RolloutCurve};
use super::split::{split_dataset, Split};
use super::train::{evaluate, train, EpochRecord, TrainOptions, TrainOutcome};

/// Everything one seed produced.
#[derive(Clone, Debug)]
pub struct SeedOutcome {
    pub seed: u64,
    /// `(dataset, stage label, test relative L²)`; the stage label is empty
    /// outside transfer runs.
    pub test: Vec<(String, String, f64)>,
    pub rollouts: Vec<(String, RolloutCurve)>,
    /// Epoch history of the final training stage.
    pub history: Vec<EpochRecord>,
    pub initial_val: f64,
    pub best_epoch: usize,
    pub splits: Vec<(String, Split)>,
    pub lineage: Vec<String>,
    pub model: SurrogateModel<f32>,
}

/// Row label of a configuration: `"baseline"` or the description flags.
pub(crate) fn setting_label(cfg: &ExperimentConfig) -> String {
    cfg.text.map_or_else(|| "baseline".into(), |t| t.flags.label())
}

struct Stage<'a> {
    corpus: Corpus<'a>,
    splits: Vec<Split>,
    train: Vec<Pair>,
    val: Vec<Pair>,
}

fn select<'a>(datasets: &'a [Dataset], names: &[String]) -> Result<Vec<&'a Dataset>> {
    names
        .iter()
        .map(|n| {
            datasets
                .iter()
                .find(|d| &d.name == n)
                .ok_or_else(|| Error::Config(format!("dataset {n} was not provided")))
        })
        .collect()
}

fn prepare<'a>(
    cfg: &ExperimentConfig,
    chosen: Vec<&'a Dataset>,
    store: Option<&EmbeddingStore>,
    seed: u64,
) -> Result<Stage<'a>> {
    let arch = cfg.arch();
    let mut corpus = Corpus::new(chosen, cfg.text, &arch, store)?;
    let task = if cfg.task == Task::FixedFuture {
        Task::FixedFuture
    } else {
        Task::NextStep
    };
    let mut splits = Vec::new();
    let (mut train_pairs, mut val_pairs) = (Vec::new(), Vec::new());
    for (d, ds) in corpus.datasets.iter().enumerate() {
        let s = split_dataset(ds.trajectories.len(), cfg.split, seed, &ds.name);
        let frames = ds.trajectories[0].frame_count();
        train_pairs.extend(build_pairs(task, d, &s.train, frames));
        val_pairs.extend(build_pairs(task, d, &s.val, frames));
        splits.push(s);
    }
    if cfg.normalize {
        corpus.normalize_by(&splits.iter().map(|s| s.train.clone()).collect::<Vec<_>>());
    }
    Ok(Stage {
        corpus,
        splits,
        train: train_pairs,
        val: spaced(&val_pairs, cfg.val_pairs),
    })
}

fn fit(
    cfg: &ExperimentConfig,
    stage: &Stage<'_>,
    model: SurrogateModel<f32>,
    epochs: usize,
    seed: u64,
) -> Result<TrainOutcome> {
    let opts = TrainOptions {
        epochs,
        batch_size: cfg.batch_size,
        adam: AdamConfig {
            lr: cfg.lr,
            weight_decay: cfg.weight_decay,
            ..AdamConfig::default()
        },
        pairs_per_epoch: cfg.pairs_per_epoch,
        seed,
    };
    train(model, &stage.corpus, &stage.train, &stage.val, &opts, &mut |_| {})
}

fn test_error(cfg: &ExperimentConfig, stage: &Stage<'_>, model: &SurrogateModel<f32>, d: usize) -> Result<f64> {
    let ds = stage.corpus.datasets[d];
    let task = if cfg.task == Task::FixedFuture {
        Task::FixedFuture
    } else {
        Task::NextStep
    };
    let pairs = build_pairs(task, d, &stage.splits[d].test, ds.trajectories[0].frame_count());
    evaluate(model, &stage.corpus, &spaced(&pairs, cfg.test_pairs), cfg.batch_size)
}

fn rollout_curve(
    cfg: &ExperimentConfig,
    stage: &Stage<'_>,
    model: &SurrogateModel<f32>,
    d: usize,
) -> Result<RolloutCurve> {
    let curves = stage.splits[d]
        .test
        .iter()
        .map(|&t| rollout_model(model, &stage.corpus, d, t, cfg.rollout_steps))
        .collect::<Result<Vec<_>>>()?;
    RolloutCurve::mean(&curves)
}

fn describe_stage(seed: u64, verb: &str, names: &[&str], epochs: usize, out: &TrainOutcome) -> String {
    format!(
        "seed {seed}: {verb} on {} for {epochs} epochs, kept epoch {} (val rel-L2 {:e})",
        names.join("+"),
        out.best_epoch,
        out.best_val
    )
}

type Scores = (Vec<(String, String, f64)>, Vec<(String, RolloutCurve)>);

fn score(cfg: &ExperimentConfig, stage: &Stage<'_>, model: &SurrogateModel<f32>, rollouts: bool) -> Result<Scores> {
    let mut test = Vec::new();
    let mut curves = Vec::new();
    for (d, ds) in stage.corpus.datasets.iter().enumerate() {
        test.push((ds.name.clone(), String::new(), test_error(cfg, stage, model, d)?));
        if rollouts {
            curves.push((ds.name.clone(), rollout_curve(cfg, stage, model, d)?));
        }
    }
    Ok((test, curves))
}

fn split_list(stage: &Stage<'_>) -> Vec<(String, Split)> {
    stage
        .corpus
        .datasets
        .iter()
        .map(|d| d.name.clone())
        .zip(stage.splits.iter().cloned())
        .collect()
}

/// Trains and evaluates one seed of a plain (non-transfer) experiment.
pub fn run_seed(
    cfg: &ExperimentConfig,
    datasets: &[Dataset],
    store: Option<&EmbeddingStore>,
    seed: u64,
) -> Result<SeedOutcome> {
    cfg.validate()?;
    let stage = prepare(cfg, select(datasets, &cfg.datasets)?, store, seed)?;
    let model = SurrogateModel::new(cfg.arch(), seed)?;
    let out = fit(cfg, &stage, model, cfg.epochs, seed)?;
    let names: Vec<&str> = stage.corpus.datasets.iter().map(|d| d.name.as_str()).collect();
    let (test, rollouts) = score(cfg, &stage, &out.model, cfg.task == Task::Rollout)?;
    Ok(SeedOutcome {
        seed,
        test,
        rollouts,
        lineage: alloc::vec![
            format!("seed {seed}: initialized {} from seed {seed}", setting_label(cfg)),
            describe_stage(seed, "trained", &names, cfg.epochs, &out),
        ],
        splits: split_list(&stage),
        history: out.history,
        initial_val: out.initial_val,
        best_epoch: out.best_epoch,
        model: out.model,
    })
}

/// Scores an already trained model on the test split that `seed` selects,
/// with rollouts when `rollouts` is set. No training happens.
pub fn assess(
    cfg: &ExperimentConfig,
    datasets: &[Dataset],
    store: Option<&EmbeddingStore>,
    model: SurrogateModel<f32>,
    seed: u64,
    rollouts: bool,
) -> Result<SeedOutcome> {
    if model.config() != &cfg.arch() {
        return Err(Error::Config(
            "model architecture differs from the configuration".into(),
        ));
    }
    let stage = prepare(cfg, select(datasets, &cfg.datasets)?, store, seed)?;
    let (test, curves) = score(cfg, &stage, &model, rollouts)?;
    Ok(SeedOutcome {
        seed,
        test,
        rollouts: curves,
        history: Vec::new(),
        initial_val: f64::NAN,
        best_epoch: 0,
        splits: split_list(&stage),
        lineage: alloc::vec![format!("seed {seed}: evaluated a loaded checkpoint")],
        model,
    })
}

fn is_shallow_water(d: &Dataset) -> bool {
    Equation::from_name(&d.name) == Some(Equation::ShallowWater)
        || d.trajectories
            .iter()
            .any(|t| t.params.equation == Equation::ShallowWater)
}

/// Pretrains on the combined sets, then finetunes on one. Test errors on the
/// finetune dataset are reported for both stages.
pub fn run_transfer_seed(
    cfg: &ExperimentConfig,
    datasets: &[Dataset],
    store: Option<&EmbeddingStore>,
    seed: u64,
) -> Result<SeedOutcome> {
    cfg.validate()?;
    let spec = cfg
        .transfer
        .as_ref()
        .ok_or_else(|| Error::Config("no transfer section".into()))?;
    let pre_sets = select(datasets, &spec.pretrain)?;
    if let Some(d) = pre_sets.iter().find(|d| is_shallow_water(d)) {
        return Err(Error::Config(format!(
            "{} is finetune-only and cannot be pretrained on",
            d.name
        )));
    }
    let pre = prepare(cfg, pre_sets, store, seed)?;
    let pre_names: Vec<&str> = pre.corpus.datasets.iter().map(|d| d.name.as_str()).collect();
    let pre_out = fit(
        cfg,
        &pre,
        SurrogateModel::new(cfg.arch(), seed)?,
        spec.pretrain_epochs,
        seed,
    )?;

    let fine = prepare(
        cfg,
        select(datasets, core::slice::from_ref(&spec.finetune))?,
        store,
        seed,
    )?;
    let pre_err = test_error(cfg, &fine, &pre_out.model, 0)?;
    let fine_out = fit(cfg, &fine, pre_out.model.clone(), cfg.epochs, seed)?;
    let fine_err = test_error(cfg, &fine, &fine_out.model, 0)?;
    let mut rollouts = Vec::new();
    if cfg.task == Task::Rollout {
        rollouts.push((spec.finetune.clone(), rollout_curve(cfg, &fine, &fine_out.model, 0)?));
    }
    Ok(SeedOutcome {
        seed,
        test: alloc::vec![
            (spec.finetune.clone(), "pretrain".into(), pre_err),
            (spec.finetune.clone(), "finetune".into(), fine_err),
        ],
        rollouts,
        lineage: alloc::vec![
            format!("seed {seed}: initialized {} from seed {seed}", setting_label(cfg)),
            describe_stage(seed, "pretrained", &pre_names, spec.pretrain_epochs, &pre_out),
            describe_stage(
                seed,
                "finetuned from the pretrained checkpoint",
                &[spec.finetune.as_str()],
                cfg.epochs,
                &fine_out
            ),
        ],
        splits: alloc::vec![(spec.finetune.clone(), fine.splits[0].clone())],
        history: fine_out.history,
        initial_val: fine_out.initial_val,
        best_epoch: fine_out.best_epoch,
        model: fine_out.model,
    })
}

/// Runs every seed in order and folds the results.
pub fn run_experiment(
    cfg: &ExperimentConfig,
    datasets: &[Dataset],
    store: Option<&EmbeddingStore>,
) -> Result<(MetricsReport, Vec<SeedOutcome>)> {
    let outcomes = cfg
        .seeds
        .iter()
        .map(|&s| {
            if cfg.transfer.is_some() {
                run_transfer_seed(cfg, datasets, store, s)
            } else {
                run_seed(cfg, datasets, store, s)
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((
        MetricsReport::aggregate(cfg.task, &setting_label(cfg), &outcomes)?,
        outcomes,
    ))
}

/// Same as [`run_experiment`] without the outcomes, for the transfer case.
pub fn transfer(cfg: &ExperimentConfig, datasets: &[Dataset], store: Option<&EmbeddingStore>) -> Result<MetricsReport> {
    if cfg.transfer.is_none() {
        return Err(Error::Config("no transfer section".into()));
    }
    run_experiment(cfg, datasets, store).map(|r| r.0)
}

/// Eight-row description ablation. `run` maps a configuration to one
/// outcome per seed, in seed order; every row reuses the base seeds, so
/// splits, initial weights and batch order match across rows.
pub fn ablate(
    base: &ExperimentConfig,
    mut run: impl FnMut(&ExperimentConfig) -> Result<Vec<SeedOutcome>>,
) -> Result<MetricsReport> {
    let mut report: Option<MetricsReport> = None;
    for flags in DescriptionFlags::ablation_rows() {
        let cfg = base.with_flags(flags)?;
        let outcomes = run(&cfg)?;
        let r = MetricsReport::aggregate(cfg.task, &flags.label(), &outcomes)?;
        match &mut report {
            Some(acc) => acc.merge(r)?,
            None => report = Some(r),
        }
    }
    report.ok_or_else(|| Error::Config("no ablation rows".into()))
}
