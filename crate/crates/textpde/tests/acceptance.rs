//! Acceptance run: one PASS/FAIL line per primary criterion.
//!
//! Contract criteria (solvers, gradients, architecture, rollout) gate the
//! test. The two statistical criteria train small models at desk scale and
//! are reported without gating: their outcome depends on training noise and
//! a red line there is a measurement, not a broken build.
//!
//! Lines go straight to the stderr handle so they survive output capture.
//! Expect roughly half an hour on one core.

use std::f64::consts::PI;
use std::io::Write;
use std::time::{Duration, Instant};

use textpde::formats::checkpoint::{read_checkpoint_from, write_checkpoint_to, Checkpoint};
use textpde::generate::{generate, GenerateSpec};
use textpde_core::embed::{Provider, SENTENCE_DIM};
use textpde_core::harness::{
    rollout, run_experiment, Dataset, ExperimentConfig, MetricsReport, SeedOutcome, Task, TextSpec,
};
use textpde_core::model::{ArchConfig, SurrogateModel, TextInput};
use textpde_core::sim::{
    diffusion_initial_condition, gaussian_random_field, sample_system, simulate_diffusion, simulate_navier_stokes,
    BoundaryKind, DiffusionSetup, Equation, GrfSpectrum, NsSetup, SystemParams,
};
use textpde_core::tensor::gradcheck::{model_gradcheck, op_suite, tiny_config};
use textpde_core::tensor::{Graph, Tensor};
use textpde_core::text::DescriptionFlags;

struct Verdicts {
    gating_failures: Vec<&'static str>,
}

impl Verdicts {
    fn record(&mut self, name: &'static str, pass: bool, gating: bool, detail: String) {
        let mark = if pass { "PASS" } else { "FAIL" };
        let kind = if gating { "" } else { " (reported)" };
        let _ = writeln!(std::io::stderr(), "acceptance {mark}{kind} {name}: {detail}");
        if gating && !pass {
            self.gating_failures.push(name);
        }
    }
}

fn rel_l2(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    let den: f64 = b.iter().map(|y| y * y).sum();
    (num / den).sqrt()
}

fn solvers() -> (bool, String) {
    let mut pass = true;
    let mut notes = Vec::new();

    // periodic sinusoid against e^{-β(2π)²t}
    let started = Instant::now();
    let setup = DiffusionSetup::default();
    let n = setup.grid;
    let beta = 0.005;
    let mut p = sample_system(Equation::Heat, 0).unwrap();
    p.beta = beta;
    p.bc_type = BoundaryKind::Periodic;
    let ic: Vec<f64> = (0..n * n)
        .map(|k| (2.0 * PI * setup.coord(k / n)).sin() * (2.0 * PI * setup.coord(k % n)).sin())
        .collect();
    let frames = simulate_diffusion(&p, &setup, &ic).unwrap();
    let t1 = (1.0 / setup.dt_out()).round() as usize;
    let decay = (-beta * 4.0 * PI * PI * 2.0 * t1 as f64 * setup.dt_out()).exp();
    let exact: Vec<f64> = ic.iter().map(|v| v * decay).collect();
    let err = rel_l2(&frames[t1], &exact);
    let secs = started.elapsed().as_secs_f64();
    pass &= err < 1e-3 && secs < 10.0;
    notes.push(format!("heat rel {err:.2e} in {secs:.1}s"));

    // Burgers without advection against the heat solver
    let mut worst = 0.0f64;
    for bc in [BoundaryKind::Periodic, BoundaryKind::Neumann, BoundaryKind::Dirichlet] {
        let mut h = sample_system(Equation::Heat, 3).unwrap();
        h.bc_type = bc;
        let b = SystemParams {
            equation: Equation::Burgers,
            alpha_x: 0.0,
            alpha_y: 0.0,
            ..h
        };
        let small = DiffusionSetup {
            grid: 32,
            frames: 21,
            ..DiffusionSetup::default()
        };
        let ic = diffusion_initial_condition(&h, &small);
        let th = simulate_diffusion(&h, &small, &ic).unwrap();
        let tb = simulate_diffusion(&b, &small, &ic).unwrap();
        for (x, y) in th.iter().flatten().zip(tb.iter().flatten()) {
            worst = worst.max((x - y).abs());
        }
    }
    pass &= worst <= 1e-10;
    notes.push(format!("burgers(α=0)-heat {worst:.1e}"));

    // unforced Taylor–Green vortex decays as e^{-2ν(2π)²t}
    let n = 64;
    let nu = 1e-3;
    let tg_setup = NsSetup {
        grid: n,
        out_grid: n,
        t_final: 1.0,
        frames: 2,
        ..NsSetup::default()
    };
    let w0: Vec<f64> = (0..n * n)
        .map(|k| (2.0 * PI * (k / n) as f64 / n as f64).sin() * (2.0 * PI * (k % n) as f64 / n as f64).sin())
        .collect();
    let mut ns = sample_system(Equation::NavierStokes, 0).unwrap();
    ns.nu = nu;
    ns.amplitude = 0.0;
    let out = simulate_navier_stokes(&ns, &tg_setup, &w0).unwrap();
    let decay = (-2.0 * nu * 4.0 * PI * PI).exp();
    let exact: Vec<f64> = w0.iter().map(|v| v * decay).collect();
    let err = rel_l2(&out[1], &exact);
    pass &= err < 1e-2;
    notes.push(format!("taylor-green rel {err:.2e}"));

    // forced runs keep the spatial mean of vorticity
    let forced = NsSetup {
        grid: 64,
        out_grid: 64,
        ..NsSetup::default()
    };
    let mut drift = 0.0f64;
    for seed in 0..3 {
        let p = sample_system(Equation::NavierStokes, seed).unwrap();
        let w0 = gaussian_random_field(64, &GrfSpectrum::default(), seed).unwrap();
        let m0 = w0.iter().sum::<f64>() / w0.len() as f64;
        for f in simulate_navier_stokes(&p, &forced, &w0).unwrap() {
            drift = drift.max((f.iter().sum::<f64>() / f.len() as f64 - m0).abs());
        }
    }
    pass &= drift < 1e-5;
    notes.push(format!("forced mean drift {drift:.1e} over 10s"));
    (pass, notes.join(", "))
}

fn autodiff() -> (bool, String) {
    let started = Instant::now();
    let ops = op_suite(10).unwrap();
    let op_worst = ops.iter().map(|o| o.1).fold(0.0, f64::max);
    let mut model_worst = 0.0f64;
    for (mm, provider) in [
        (false, Provider::SentenceStore),
        (true, Provider::SentenceStore),
        (true, Provider::Tokenizer),
    ] {
        for (_, e) in model_gradcheck(tiny_config(mm, provider), 5).unwrap() {
            model_worst = model_worst.max(e);
        }
    }
    let secs = started.elapsed().as_secs_f64();
    let pass = op_worst < 1e-4 && model_worst < 1e-4 && secs < 60.0;
    (
        pass,
        format!(
            "{} ops worst {op_worst:.1e}, tiny models worst {model_worst:.1e}, {secs:.1}s",
            ops.len()
        ),
    )
}

fn architecture(trained: &SurrogateModel<f32>) -> (bool, String) {
    let arch = ArchConfig::next_step_multimodal(Provider::SentenceStore);
    let patches = arch.patches();
    let small = ArchConfig {
        hidden: 8,
        head_dim: 2,
        heads: 2,
        recombine_width: 16,
        ..arch
    };
    let field = Tensor::<f64>::from_fn([2, 64, 64], |i| ((i as f64) * 0.013).sin());
    let text = Tensor::<f64>::from_fn([2, SENTENCE_DIM], |i| ((i as f64) * 0.37).cos());

    let m = SurrogateModel::<f64>::new(small, 3).unwrap();
    let (before, _) = m.multimodal_blocks().unwrap();
    let mut g = Graph::with_params(m.params());
    let x = g.input(field.clone()).unwrap();
    let feats = m.lift(&mut g, x).unwrap();
    let z = m.patch_embed(&mut g, feats).unwrap();
    let embedded = g.shape(z)[1];
    let s = m.project_sentence(&mut g, TextInput::Vectors(&text)).unwrap();
    let (_, attn) = m.cross_attention(&mut g, before, z, s).unwrap();
    let row_dev = g
        .value(attn)
        .chunks(patches)
        .map(|r| (r.iter().sum::<f64>() - 1.0).abs())
        .fold(0.0, f64::max);

    // zeroed output projections: text-conditioned model equals the baseline
    let mut mm = SurrogateModel::<f32>::new(small, 6).unwrap();
    for name in ["mm_before.o", "mm_after.o"] {
        let id = mm.params().find(name).unwrap();
        mm.params_mut().get_mut(id).data_mut().fill(0.0);
    }
    let base = SurrogateModel::<f32>::new(
        ArchConfig {
            multimodal: false,
            ..small
        },
        6,
    )
    .unwrap();
    let f32_field = field.cast::<f32>();
    let with_text = mm
        .predict(&f32_field, Some(TextInput::Vectors(&text.cast::<f32>())))
        .unwrap();
    let identity = with_text == base.predict(&f32_field, None).unwrap();

    // checkpoint roundtrip of a trained model
    let ckpt = Checkpoint::new(trained.clone(), 0, vec!["acceptance".into()]);
    let mut bytes = Vec::new();
    write_checkpoint_to(&mut bytes, &ckpt).unwrap();
    let back = read_checkpoint_from(bytes.as_slice()).unwrap();
    let bits = |m: &SurrogateModel<f32>| m.params().flat().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    let roundtrip = back.meta == ckpt.meta && bits(&back.model) == bits(trained);

    let pass = patches == 225 && embedded == 225 && row_dev <= 1e-6 && identity && roundtrip;
    (
        pass,
        format!("{embedded} patches, attention row deviation {row_dev:.1e}, zero-output identity {identity}, checkpoint bit-exact {roundtrip}"),
    )
}

fn desk_arch() -> ArchConfig {
    ArchConfig {
        hidden: 8,
        head_dim: 2,
        heads: 2,
        recombine_width: 16,
        token_vocab: 256,
        input_residual: true,
        ..ArchConfig::next_step_baseline()
    }
}

fn desk_config(datasets: &[&str], text: Option<DescriptionFlags>, epochs: usize, pairs: usize) -> ExperimentConfig {
    ExperimentConfig {
        task: Task::Rollout,
        datasets: datasets.iter().map(|s| s.to_string()).collect(),
        text: text.map(|flags| TextSpec {
            flags,
            provider: Provider::Tokenizer,
        }),
        seeds: vec![0, 1, 2],
        epochs,
        batch_size: 16,
        lr: 3e-3,
        pairs_per_epoch: Some(pairs),
        val_pairs: Some(200),
        test_pairs: Some(400),
        arch: Some(desk_arch()),
        ..ExperimentConfig::default()
    }
}

/// Seed-averaged mean over every dataset row.
fn pooled_mean(report: &MetricsReport) -> f64 {
    report.rows.iter().map(|r| r.rel_l2.mean).sum::<f64>() / report.rows.len() as f64
}

fn rollouts(trained: &[&[SeedOutcome]], oracle_on: &Dataset) -> (bool, String) {
    let mut curves = 0;
    let mut finite = true;
    let mut sum_gap = 0.0f64;
    for outcomes in trained {
        for o in outcomes.iter() {
            for (_, c) in &o.rollouts {
                curves += 1;
                finite &= c.per_step.len() == 40 && c.per_step.iter().all(|v| v.is_finite());
                sum_gap = sum_gap.max((c.accumulated - c.per_step.iter().sum::<f64>()).abs());
            }
        }
    }
    let traj = &oracle_on.trajectories[0];
    let mut k = 0;
    let mut oracle = |_: &[f32]| {
        k += 1;
        Ok(traj.frame(k).to_vec())
    };
    let zero = rollout(&mut oracle, traj, 40).unwrap();
    let oracle_zero = zero.per_step.iter().all(|&v| v == 0.0) && zero.accumulated == 0.0;
    let pass = curves > 0 && finite && sum_gap <= 1e-7 && oracle_zero;
    (
        pass,
        format!("{curves} trained curves finite {finite}, max |accumulated - sum| {sum_gap:.1e}, oracle curve zero {oracle_zero}"),
    )
}

fn minutes(d: Duration) -> String {
    format!("{:.1} min", d.as_secs_f64() / 60.0)
}

#[test]
fn acceptance() {
    let mut v = Verdicts {
        gating_failures: Vec::new(),
    };

    let (ok, detail) = solvers();
    v.record("solver correctness", ok, true, detail);
    let (ok, detail) = autodiff();
    v.record("autodiff gradient checks", ok, true, detail);

    let started = Instant::now();
    let heat = Dataset {
        name: "heat".into(),
        trajectories: generate(&GenerateSpec::new(Equation::Heat, 100), 1).unwrap(),
    };
    let burgers = Dataset {
        name: "burgers".into(),
        trajectories: generate(
            &GenerateSpec {
                first_seed: 1000,
                ..GenerateSpec::new(Equation::Burgers, 100)
            },
            1,
        )
        .unwrap(),
    };
    let mixed = [heat.clone(), burgers];
    let (base, base_runs) = run_experiment(&desk_config(&["heat", "burgers"], None, 10, 800), &mixed, None).unwrap();
    let (text, text_runs) = run_experiment(
        &desk_config(&["heat", "burgers"], Some(DescriptionFlags::ALL), 10, 800),
        &mixed,
        None,
    )
    .unwrap();
    let (b, t) = (pooled_mean(&base), pooled_mean(&text));
    let reduction = 1.0 - t / b;
    let per_dataset: Vec<String> = base
        .rows
        .iter()
        .zip(&text.rows)
        .map(|(x, y)| format!("{} {:.4}->{:.4}", x.dataset, x.rel_l2.mean, y.rel_l2.mean))
        .collect();
    v.record(
        "mixed heat+burgers text vs baseline",
        reduction >= 0.15,
        false,
        format!(
            "baseline {b:.4}, BCQ tokens {t:.4}, reduction {:.1}% (need 15%); {}; {}",
            100.0 * reduction,
            per_dataset.join(", "),
            minutes(started.elapsed())
        ),
    );

    let (ok, detail) = architecture(&text_runs[0].model);
    v.record("architecture contracts", ok, true, detail);

    let started = Instant::now();
    let heat_only = [heat.clone()];
    let (eq_heat, eq_heat_runs) = run_experiment(
        &desk_config(&["heat"], Some(DescriptionFlags::NONE), 5, 400),
        &heat_only,
        None,
    )
    .unwrap();
    let (bcq_heat, bcq_heat_runs) = run_experiment(
        &desk_config(&["heat"], Some(DescriptionFlags::ALL), 5, 400),
        &heat_only,
        None,
    )
    .unwrap();
    let (e, full) = (&eq_heat.rows[0].rel_l2, &bcq_heat.rows[0].rel_l2);
    let heat_ok = full.mean <= e.mean;

    let ns = [Dataset {
        name: "ns".into(),
        trajectories: generate(
            &GenerateSpec {
                ns_sim_grid: 64,
                ..GenerateSpec::new(Equation::NavierStokes, 40)
            },
            1,
        )
        .unwrap(),
    }];
    let (eq_ns, eq_ns_runs) =
        run_experiment(&desk_config(&["ns"], Some(DescriptionFlags::NONE), 5, 400), &ns, None).unwrap();
    let b_flags = DescriptionFlags::new(true, false, false);
    let (b_ns, b_ns_runs) = run_experiment(&desk_config(&["ns"], Some(b_flags), 5, 400), &ns, None).unwrap();
    let (ne, nb) = (&eq_ns.rows[0].rel_l2, &b_ns.rows[0].rel_l2);
    let pooled_std = ((ne.std * ne.std + nb.std * nb.std) / 2.0).sqrt();
    let ns_ok = (nb.mean - ne.mean).abs() <= pooled_std;
    v.record(
        "ablation shape",
        heat_ok && ns_ok,
        false,
        format!(
            "heat BCQ {:.4} vs equation-only {:.4} ({}); ns B {:.4} vs equation-only {:.4}, gap {:.1e} vs pooled std {pooled_std:.1e} ({}); {}",
            full.mean,
            e.mean,
            if heat_ok { "ok" } else { "worse" },
            nb.mean,
            ne.mean,
            (nb.mean - ne.mean).abs(),
            if ns_ok { "ok" } else { "outside" },
            minutes(started.elapsed())
        ),
    );

    let trained: [&[SeedOutcome]; 6] = [
        &base_runs,
        &text_runs,
        &eq_heat_runs,
        &bcq_heat_runs,
        &eq_ns_runs,
        &b_ns_runs,
    ];
    let (ok, detail) = rollouts(&trained, &heat);
    v.record("rollout", ok, true, detail);

    assert!(v.gating_failures.is_empty(), "failed: {:?}", v.gating_failures);
}
