use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};
use textpde::describe::DescribeRecord;
use textpde::formats::checkpoint::read_checkpoint;
use textpde::formats::dataset::read_dataset;
use textpde::formats::store::{read_store, write_store};
use textpde_core::embed::{hex, parse_hex32, EmbeddingStore, SENTENCE_DIM};

fn textpde(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_textpde")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let o = textpde(args);
    assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout).unwrap()
}

fn p(dir: &Path, name: &str) -> String {
    dir.join(name).to_str().unwrap().to_string()
}

fn tiny_arch() -> Value {
    json!({ "grid": 16, "hidden": 4, "head_dim": 2, "heads": 2, "recombine_width": 8, "token_vocab": 64, "input_residual": true })
}

fn write_json(path: &Path, v: &Value) -> String {
    std::fs::write(path, v.to_string()).unwrap();
    path.to_str().unwrap().to_string()
}

/// Fake tooling: deterministic vectors derived from each sentence's hash.
fn fake_store(records: &[DescribeRecord]) -> EmbeddingStore {
    let mut s = EmbeddingStore::new(SENTENCE_DIM);
    for r in records {
        let h = textpde_core::embed::sentence_hash(&r.text);
        if s.get(&h).is_none() {
            s.insert(
                h,
                (0..SENTENCE_DIM).map(|i| (h[i % 32] as f32 - 128.0) / 128.0).collect(),
            )
            .unwrap();
        }
    }
    s
}

#[test]
fn end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let heat = p(d, "heat.pdet");
    let burgers = p(d, "burgers.pdet");
    ok(&[
        "generate",
        "--equation",
        "heat",
        "--count",
        "10",
        "--grid",
        "16",
        "--out",
        &heat,
    ]);
    ok(&[
        "generate",
        "--equation",
        "burgers",
        "--count",
        "10",
        "--first-seed",
        "100",
        "--grid",
        "16",
        "--out",
        &burgers,
    ]);
    let trajs = read_dataset(Path::new(&heat)).unwrap();
    assert_eq!(trajs.len(), 10);

    // describe: 8 records per trajectory, exactly three keys each
    let lines = ok(&["describe", "--data", &heat]);
    let records: Vec<DescribeRecord> = lines.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(records.len(), 80);
    for l in lines.lines() {
        let v: Value = serde_json::from_str(l).unwrap();
        assert_eq!(v.as_object().unwrap().len(), 3);
    }
    assert_eq!(records[0].params_digest, hex(&trajs[0].params.digest()));
    assert_eq!(records[0].flags, "Equation");
    assert_eq!(records[7].flags, "BCQ");
    assert!(parse_hex32(&records[9].params_digest).is_some());
    let one = ok(&["describe", "--data", &heat, "--flags", "BC"]);
    assert_eq!(one.lines().count(), 10);

    // tokenizer and store tooling
    let tok: Value = serde_json::from_str(&ok(&[
        "embed",
        "tokenize",
        "--text",
        "Heat, diffuses.",
        "--vocab",
        "64",
    ]))
    .unwrap();
    assert_eq!(tok["tokens"], json!(["heat", ",", "diffuses", "."]));
    assert!(tok["ids"].as_array().unwrap().iter().all(|i| i.as_u64().unwrap() < 64));

    let burgers_lines = ok(&["describe", "--data", &burgers]);
    let mut all = records.clone();
    all.extend(
        burgers_lines
            .lines()
            .map(|l| serde_json::from_str::<DescribeRecord>(l).unwrap()),
    );
    let store = p(d, "sent.emb1");
    write_store(Path::new(&store), &fake_store(&all)).unwrap();
    let info: Value = serde_json::from_str(&ok(&["embed", "info", "--store", &store])).unwrap();
    assert_eq!(info["dim"], 384);
    ok(&["embed", "check", "--store", &store, "--data", &heat, "--data", &burgers]);
    let partial = p(d, "partial.emb1");
    write_store(Path::new(&partial), &fake_store(&records)).unwrap();
    assert!(!textpde(&["embed", "check", "--store", &partial, "--data", &burgers])
        .status
        .success());
    let hit: Value =
        serde_json::from_str(&ok(&["embed", "lookup", "--store", &store, "--text", &records[3].text])).unwrap();
    assert_eq!(hit["values"].as_array().unwrap().len(), 384);
    assert!(!textpde(&["embed", "lookup", "--store", &store, "--text", "unseen"])
        .status
        .success());

    // train with rollout evaluation on the tokenizer provider
    let cfg = write_json(
        &d.join("train.json"),
        &json!({
            "task": "rollout", "datasets": ["heat", "burgers"],
            "text": { "flags": { "boundary": true, "coefficients": true, "qualitative": true }, "provider": "Tokenizer" },
            "seeds": [0, 1], "epochs": 1, "batch_size": 8, "pairs_per_epoch": 24,
            "val_pairs": 8, "test_pairs": 8, "rollout_steps": 5, "arch": tiny_arch()
        }),
    );
    let out = p(d, "run");
    let heat_arg = format!("heat={heat}");
    let burgers_arg = format!("burgers={burgers}");
    let listing = ok(&[
        "train",
        "--config",
        &cfg,
        "--data",
        &heat_arg,
        "--data",
        &burgers_arg,
        "--out",
        &out,
    ]);
    for f in [
        "report.json",
        "report.csv",
        "rollout.csv",
        "history.csv",
        "seed_0.ckpt",
        "seed_1.ckpt",
    ] {
        assert!(listing.contains(f), "{listing}");
        assert!(Path::new(&out).join(f).exists());
    }
    let report: Value =
        serde_json::from_str(&std::fs::read_to_string(Path::new(&out).join("report.json")).unwrap()).unwrap();
    assert_eq!(report["rows"].as_array().unwrap().len(), 2);
    let rollout_rows = std::fs::read_to_string(Path::new(&out).join("rollout.csv")).unwrap();
    assert_eq!(rollout_rows.lines().count(), 1 + 2 * 5);
    let ckpt_path: PathBuf = Path::new(&out).join("seed_1.ckpt");
    let ckpt = read_checkpoint(&ckpt_path).unwrap();
    assert_eq!(ckpt.meta.seed, 1);
    assert_eq!(ckpt.meta.lineage.len(), 2);

    // eval reproduces the training report for that seed
    let ck = ckpt_path.to_str().unwrap();
    let eval: Value = serde_json::from_str(&ok(&[
        "eval",
        "--checkpoint",
        ck,
        "--config",
        &cfg,
        "--data",
        &heat_arg,
        "--data",
        &burgers_arg,
    ]))
    .unwrap();
    for (i, row) in eval["rows"].as_array().unwrap().iter().enumerate() {
        assert_eq!(row["rel_l2"]["per_seed"][0], report["rows"][i]["rel_l2"]["per_seed"][1]);
    }
    let curve = p(d, "curve.csv");
    ok(&[
        "rollout",
        "--checkpoint",
        ck,
        "--config",
        &cfg,
        "--data",
        &heat_arg,
        "--data",
        &burgers_arg,
        "--out",
        &curve,
    ]);
    let curve_rows: Vec<String> = std::fs::read_to_string(&curve)
        .unwrap()
        .lines()
        .map(String::from)
        .collect();
    assert_eq!(curve_rows.len(), 11);
    let trained: Vec<&str> = rollout_rows
        .lines()
        .skip(1)
        .map(|l| l.rsplit(',').next().unwrap())
        .collect();
    let replayed: Vec<&str> = curve_rows
        .iter()
        .skip(1)
        .map(|l| l.rsplit(',').next().unwrap())
        .collect();
    assert_eq!(trained, replayed);

    let dump = p(d, "dump.emb1");
    ok(&[
        "dump-embeddings",
        "--checkpoint",
        ck,
        "--config",
        &cfg,
        "--data",
        &heat_arg,
        "--out",
        &dump,
    ]);
    let dumped = read_store(Path::new(&dump)).unwrap();
    assert_eq!(dumped.dim(), 384);
    assert_eq!(dumped.len(), 10);

    // ablation over a sentence store
    let ab = write_json(
        &d.join("ablate.json"),
        &json!({
            "datasets": ["heat"], "text": { "flags": { "boundary": true, "coefficients": true, "qualitative": true }, "provider": "SentenceStore" },
            "seeds": [4], "epochs": 1, "batch_size": 8, "pairs_per_epoch": 8, "val_pairs": 4, "test_pairs": 4, "arch": tiny_arch()
        }),
    );
    let ab_out = p(d, "ablate");
    ok(&[
        "ablate", "--config", &ab, "--data", &heat_arg, "--store", &store, "--out", &ab_out,
    ]);
    let csv = std::fs::read_to_string(Path::new(&ab_out).join("report.csv")).unwrap();
    let labels: Vec<&str> = csv.lines().skip(1).map(|l| l.split(',').nth(1).unwrap()).collect();
    assert_eq!(labels, ["Equation", "B", "C", "Q", "BC", "BQ", "CQ", "BCQ"]);

    // transfer: the train subcommand refuses it, the transfer subcommand runs it
    let tr = write_json(
        &d.join("transfer.json"),
        &json!({
            "seeds": [2], "epochs": 0, "batch_size": 8, "val_pairs": 4, "test_pairs": 4, "pairs_per_epoch": 8, "arch": tiny_arch(),
            "transfer": { "pretrain": ["heat", "burgers"], "finetune": "burgers", "pretrain_epochs": 1 }
        }),
    );
    let tr_out = p(d, "transfer");
    assert!(!textpde(&[
        "train",
        "--config",
        &tr,
        "--data",
        &heat_arg,
        "--data",
        &burgers_arg,
        "--out",
        &tr_out
    ])
    .status
    .success());
    ok(&[
        "transfer",
        "--config",
        &tr,
        "--data",
        &heat_arg,
        "--data",
        &burgers_arg,
        "--out",
        &tr_out,
    ]);
    let rep: Value =
        serde_json::from_str(&std::fs::read_to_string(Path::new(&tr_out).join("report.json")).unwrap()).unwrap();
    assert_eq!(rep["rows"][0]["rel_l2"], rep["rows"][1]["rel_l2"]);
    assert_eq!(rep["lineage"].as_array().unwrap().len(), 3);
}

#[test]
fn errors_exit_nonzero() {
    assert!(!textpde(&[
        "generate",
        "--equation",
        "sw",
        "--count",
        "1",
        "--out",
        "/nonexistent/x"
    ])
    .status
    .success());
    assert!(!textpde(&["describe", "--data", "/nonexistent.pdet"]).status.success());
    assert!(!textpde(&["frobnicate"]).status.success());
    let o = textpde(&["describe", "--data", "/nonexistent.pdet"]);
    assert!(String::from_utf8_lossy(&o.stderr).starts_with("error:"));
    assert!(textpde(&["--help"]).status.success());
}
