use std::cell::RefCell;
use std::collections::BTreeSet;

use proptest::prelude::*;
use textpde_core::embed::Provider;
use textpde_core::harness::{
    ablate, build_pairs, rollout, run_experiment, run_seed, split_counts, split_dataset, train, Corpus, Dataset,
    ExperimentConfig, MetricsReport, Stat, Task, TextSpec, TrainOptions, TransferSpec,
};
use textpde_core::model::{ArchConfig, SurrogateModel};
use textpde_core::sim::{sample_system, solve_burgers, solve_heat, DiffusionSetup, Equation, Trajectory};
use textpde_core::tensor::AdamConfig;
use textpde_core::text::DescriptionFlags;
use textpde_core::Error;

const GRID: usize = 16;

fn generate(eq: Equation, count: usize, offset: u64) -> Vec<Trajectory> {
    let setup = DiffusionSetup {
        grid: GRID,
        ..DiffusionSetup::default()
    };
    (0..count as u64)
        .map(|i| {
            let p = sample_system(eq, offset + i).unwrap();
            match eq {
                Equation::Heat => solve_heat(&p, &setup).unwrap(),
                _ => solve_burgers(&p, &setup).unwrap(),
            }
        })
        .collect()
}

thread_local! {
    static SETS: RefCell<Option<Vec<Dataset>>> = const { RefCell::new(None) };
}

fn datasets() -> Vec<Dataset> {
    SETS.with(|s| {
        s.borrow_mut()
            .get_or_insert_with(|| {
                vec![
                    Dataset {
                        name: "heat".into(),
                        trajectories: generate(Equation::Heat, 50, 0),
                    },
                    Dataset {
                        name: "burgers".into(),
                        trajectories: generate(Equation::Burgers, 20, 1000),
                    },
                ]
            })
            .clone()
    })
}

fn tiny_arch() -> ArchConfig {
    ArchConfig {
        grid: GRID,
        hidden: 8,
        head_dim: 2,
        heads: 2,
        recombine_width: 16,
        token_vocab: 256,
        input_residual: true,
        ..ArchConfig::next_step_baseline()
    }
}

fn config(text: Option<TextSpec>) -> ExperimentConfig {
    ExperimentConfig {
        datasets: vec!["heat".into()],
        text,
        seeds: vec![0, 1],
        epochs: 2,
        batch_size: 16,
        pairs_per_epoch: Some(160),
        val_pairs: Some(40),
        test_pairs: Some(40),
        arch: Some(tiny_arch()),
        ..ExperimentConfig::default()
    }
}

fn tokens(flags: DescriptionFlags) -> Option<TextSpec> {
    Some(TextSpec {
        flags,
        provider: Provider::Tokenizer,
    })
}

proptest! {
    #[test]
    fn split_is_a_partition(n in 0usize..400, seed in any::<u64>()) {
        let s = split_dataset(n, [0.8, 0.1, 0.1], seed, "x");
        let all: BTreeSet<usize> = s.train.iter().chain(&s.val).chain(&s.test).copied().collect();
        prop_assert_eq!(all.len(), n);
        prop_assert_eq!(s.train.len() + s.val.len() + s.test.len(), n);
        prop_assert!(all.iter().all(|&i| i < n));
        let (a, b, c) = split_counts(n, [0.8, 0.1, 0.1]);
        prop_assert_eq!((a, b, c), (s.train.len(), s.val.len(), s.test.len()));
        prop_assert_eq!(s, split_dataset(n, [0.8, 0.1, 0.1], seed, "x"));
    }

    #[test]
    fn stat_matches_direct_formula(v in prop::collection::vec(-1e3f64..1e3, 2..8)) {
        let s = Stat::from_values(v.clone());
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        prop_assert!((s.mean - mean).abs() <= 1e-9 * mean.abs().max(1.0));
        prop_assert!((s.std - var.sqrt()).abs() <= 1e-9 * var.sqrt().max(1.0));
    }
}

#[test]
fn thousand_trajectories_split_800_100_100() {
    let s = split_dataset(1000, [0.8, 0.1, 0.1], 0, "heat");
    assert_eq!((s.train.len(), s.val.len(), s.test.len()), (800, 100, 100));
}

#[test]
fn config_validation() {
    let mut c = config(None);
    c.validate().unwrap();
    c.split = [0.8, 0.1, 0.2];
    assert!(matches!(c.validate(), Err(Error::Config(_))));
    let mut c = config(None);
    c.seeds.clear();
    assert!(matches!(c.validate(), Err(Error::Config(_))));
    let c: ExperimentConfig = serde_json::from_str(r#"{"task":"fixed_future","datasets":["heat"]}"#).unwrap();
    assert_eq!(c.seeds.len(), 3);
    assert_eq!(c.split, [0.8, 0.1, 0.1]);
    assert_eq!(c.arch(), ArchConfig::fixed_future_baseline());
}

#[test]
fn training_improves_and_never_sees_held_out_trajectories() {
    let sets = datasets();
    let cfg = ExperimentConfig {
        epochs: 4,
        pairs_per_epoch: Some(400),
        ..config(None)
    };
    let arch = cfg.arch();
    let corpus = Corpus::new(vec![&sets[0]], None, &arch, None).unwrap();
    let split = split_dataset(50, cfg.split, 0, "heat");
    let tr = build_pairs(Task::NextStep, 0, &split.train, 101);
    let va = build_pairs(Task::NextStep, 0, &split.val, 101);
    let opts = TrainOptions {
        epochs: cfg.epochs,
        batch_size: cfg.batch_size,
        adam: AdamConfig::default(),
        pairs_per_epoch: cfg.pairs_per_epoch,
        seed: 0,
    };
    let mut seen = BTreeSet::new();
    let out = train(
        SurrogateModel::new(arch, 0).unwrap(),
        &corpus,
        &tr,
        &va[..200],
        &opts,
        &mut |b| seen.extend(b.iter().map(|p| p.traj)),
    )
    .unwrap();
    assert!(seen.iter().all(|t| split.train.contains(t)));
    assert!(seen.iter().all(|t| !split.test.contains(t) && !split.val.contains(t)));
    assert_eq!(out.history.len(), 4);
    assert!(out.best_epoch > 1, "history {:?}", out.history);
    assert!(out.history[0].val_loss > out.best_val);
    assert!(out.history[0].train_loss > out.history[3].train_loss);
}

#[test]
fn zero_epochs_returns_the_initial_model() {
    let sets = datasets();
    let cfg = ExperimentConfig {
        epochs: 0,
        seeds: vec![5],
        ..config(None)
    };
    let out = run_seed(&cfg, &sets, None, 5).unwrap();
    let fresh = SurrogateModel::<f32>::new(cfg.arch(), 5).unwrap();
    assert_eq!(out.model.params().flat(), fresh.params().flat());
    assert_eq!(out.best_epoch, 0);
    assert!(out.history.is_empty());
    assert!(out.test[0].2.is_finite() && out.test[0].2 > 0.0);
}

#[test]
fn nan_loss_aborts_with_diagnostics() {
    let sets = datasets();
    let arch = tiny_arch();
    let mut model = SurrogateModel::<f32>::new(arch, 0).unwrap();
    let id = model.params().find("lift.field").unwrap();
    model.params_mut().get_mut(id).data_mut().fill(f32::MAX);
    let corpus = Corpus::new(vec![&sets[0]], None, &arch, None).unwrap();
    let pairs = build_pairs(Task::NextStep, 0, &[0, 1], 101);
    let opts = TrainOptions {
        epochs: 1,
        batch_size: 4,
        adam: AdamConfig::default(),
        pairs_per_epoch: None,
        seed: 0,
    };
    // validation on the initial model already overflows
    let r = train(model.clone(), &corpus, &pairs, &pairs[..4], &opts, &mut |_| {});
    assert!(r.is_err());
    let healthy = SurrogateModel::<f32>::new(arch, 0).unwrap();
    let opts = TrainOptions {
        adam: AdamConfig {
            lr: 1e30,
            ..AdamConfig::default()
        },
        epochs: 3,
        ..opts
    };
    let r = train(healthy, &corpus, &pairs, &pairs[..4], &opts, &mut |_| {});
    assert!(matches!(r, Err(Error::Training { .. })), "{r:?}");
}

#[test]
fn oracle_rollout_is_zero() {
    let sets = datasets();
    let traj = &sets[0].trajectories[3];
    let mut k = 0;
    let mut oracle = |_: &[f32]| {
        k += 1;
        Ok(traj.frame(k).to_vec())
    };
    let c = rollout(&mut oracle, traj, 40).unwrap();
    assert_eq!(c.per_step.len(), 40);
    assert!(c.per_step.iter().all(|&v| v == 0.0));
    assert_eq!(c.accumulated, 0.0);

    let mut frozen = |f: &[f32]| Ok(f.to_vec());
    let c = rollout(&mut frozen, traj, 40).unwrap();
    assert!(c.per_step[39] > c.per_step[0]);
    assert!((c.accumulated - c.per_step.iter().sum::<f64>()).abs() <= 1e-7);
    assert!(rollout(&mut frozen, traj, 101).is_err());
}

#[test]
fn rollout_experiment_report() {
    let sets = datasets();
    let cfg = ExperimentConfig {
        task: Task::Rollout,
        epochs: 1,
        ..config(tokens(DescriptionFlags::ALL))
    };
    let (report, outcomes) = run_experiment(&cfg, &sets, None).unwrap();
    report.validate().unwrap();
    assert_eq!(report.rollouts.len(), 1);
    let r = &report.rollouts[0];
    assert_eq!(r.mean_curve.per_step.len(), 40);
    for c in &r.curves {
        assert!(c.per_step.iter().all(|v| v.is_finite()));
        assert!((c.accumulated - c.per_step.iter().sum::<f64>()).abs() <= 1e-7);
    }
    assert_eq!(outcomes.len(), 2);
    assert_eq!(report.lineage.len(), 4);
}

#[test]
fn identical_configs_give_identical_reports() {
    let sets = datasets();
    let cfg = ExperimentConfig {
        epochs: 1,
        datasets: vec!["heat".into(), "burgers".into()],
        ..config(tokens(DescriptionFlags::ALL))
    };
    let a = run_experiment(&cfg, &sets, None).unwrap().0;
    let b = run_experiment(&cfg, &sets, None).unwrap().0;
    assert_eq!(a, b);
    assert_eq!(a.rows.len(), 2);
    assert_eq!(a.rows[0].label, "BCQ");
    for r in &a.rows {
        let again = Stat::from_values(r.rel_l2.per_seed.clone());
        assert_eq!(again, r.rel_l2);
    }
}

#[test]
fn transfer_with_zero_finetune_epochs_is_identity() {
    let sets = datasets();
    let cfg = ExperimentConfig {
        epochs: 0,
        seeds: vec![3],
        datasets: vec![],
        transfer: Some(TransferSpec {
            pretrain: vec!["heat".into(), "burgers".into()],
            finetune: "burgers".into(),
            pretrain_epochs: 1,
        }),
        ..config(None)
    };
    let (report, _) = run_experiment(&cfg, &sets, None).unwrap();
    let pre = report.row("burgers", "baseline/pretrain").unwrap();
    let fine = report.row("burgers", "baseline/finetune").unwrap();
    assert_eq!(pre.rel_l2, fine.rel_l2);
    assert_eq!(report.lineage.len(), 3);
    assert!(report.lineage[1].contains("heat+burgers"));
    assert!(report.lineage[2].contains("finetuned"));
}

#[test]
fn shallow_water_is_refused_for_pretraining() {
    let mut sets = datasets();
    let mut sw = sets[0].clone();
    sw.name = "sw".into();
    sets.push(sw);
    let cfg = ExperimentConfig {
        seeds: vec![0],
        transfer: Some(TransferSpec {
            pretrain: vec!["heat".into(), "sw".into()],
            finetune: "heat".into(),
            pretrain_epochs: 0,
        }),
        ..config(None)
    };
    let r = run_experiment(&cfg, &sets, None);
    assert!(matches!(r, Err(Error::Config(m)) if m.contains("finetune-only")));
}

#[test]
fn ablation_emits_eight_rows_on_shared_seeds() {
    let sets = datasets();
    let cfg = ExperimentConfig {
        epochs: 1,
        seeds: vec![0],
        pairs_per_epoch: Some(32),
        val_pairs: Some(16),
        test_pairs: Some(16),
        ..config(tokens(DescriptionFlags::ALL))
    };
    let mut inits = Vec::new();
    let report: MetricsReport = ablate(&cfg, |c| {
        let outs: Vec<_> = c
            .seeds
            .iter()
            .map(|&s| run_seed(c, &sets, None, s))
            .collect::<Result<_, _>>()?;
        inits.push(outs[0].splits.clone());
        Ok(outs)
    })
    .unwrap();
    let labels: Vec<&str> = report.rows.iter().map(|r| r.label.as_str()).collect();
    assert_eq!(labels, ["Equation", "B", "C", "Q", "BC", "BQ", "CQ", "BCQ"]);
    assert!(report.rows.iter().all(|r| r.rel_l2.per_seed.len() == 1));
    assert!(inits.windows(2).all(|w| w[0] == w[1]));
    assert!(ablate(&config(None), |_| Ok(vec![])).is_err());
}

#[test]
fn store_provider_without_store_is_a_config_error() {
    let sets = datasets();
    let cfg = config(Some(TextSpec {
        flags: DescriptionFlags::ALL,
        provider: Provider::SentenceStore,
    }));
    assert!(matches!(run_seed(&cfg, &sets, None, 0), Err(Error::Config(_))));
}
