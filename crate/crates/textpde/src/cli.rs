//! `textpde` subcommands.

use std::ffi::OsString;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use textpde_core::embed::{hex, sentence_hash, tokenize_with_vocab, EmbeddingStore, TOKEN_VOCAB};
use textpde_core::harness::{assess, Corpus, ExperimentConfig, MetricsReport, TextBank};
use textpde_core::model::TextInput;
use textpde_core::sim::Equation;
use textpde_core::tensor::Tensor;
use textpde_core::text::{render_description, DescriptionFlags};

use crate::describe::{describe_records, write_jsonl};
use crate::formats::checkpoint::{read_checkpoint, write_checkpoint, Checkpoint};
use crate::formats::dataset::{read_dataset, write_dataset};
use crate::formats::store::{read_store, write_store};
use crate::generate::{generate, GenerateSpec};
use crate::pool::{run_threads, sim_threads};
use crate::report::{rollout_csv, write_history, write_report};
use crate::runner::{ablation, experiment, load_config, load_datasets};
use crate::{Error, Result};

#[derive(Parser, Debug)]
#[command(name = "textpde", version, about = "Text-conditioned PDE surrogate toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Simulate trajectories and write a PDET dataset.
    Generate(GenerateArgs),
    /// Emit system descriptions as JSON lines.
    Describe(DescribeArgs),
    /// Inspect, query or check embedding stores.
    #[command(subcommand)]
    Embed(EmbedCommand),
    /// Train every configured seed and write reports and checkpoints.
    Train(RunArgs),
    /// Score a checkpoint on its seed's test split.
    Eval(CheckpointArgs),
    /// Autoregressive rollout of a checkpoint over its seed's test split.
    Rollout(CheckpointArgs),
    /// Pretrain on combined datasets, then finetune on one.
    Transfer(RunArgs),
    /// Sweep all eight description flag combinations.
    Ablate(RunArgs),
    /// Write the text vectors a checkpoint sees as an EMB1 store.
    DumpEmbeddings(DumpArgs),
}

#[derive(Args, Debug)]
pub struct GenerateArgs {
    /// heat, burgers or navier_stokes (ns).
    #[arg(long)]
    pub equation: String,
    #[arg(long)]
    pub count: usize,
    #[arg(long, default_value_t = 0)]
    pub first_seed: u64,
    #[arg(long, default_value_t = 64)]
    pub grid: usize,
    /// Navier–Stokes simulation grid, downsampled to `--grid`.
    #[arg(long, default_value_t = 256)]
    pub ns_sim_grid: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct DescribeArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Flag label such as BCQ or Equation, or `all` for every combination.
    #[arg(long, default_value = "all")]
    pub flags: String,
    /// Output file; standard output when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
pub enum EmbedCommand {
    /// Print width and record count.
    Info {
        #[arg(long)]
        store: PathBuf,
    },
    /// Print the stored vector for a sentence.
    Lookup {
        #[arg(long)]
        store: PathBuf,
        #[arg(long)]
        text: String,
    },
    /// Print the token strings and ids of a sentence.
    Tokenize {
        #[arg(long)]
        text: String,
        #[arg(long, default_value_t = TOKEN_VOCAB)]
        vocab: usize,
    },
    /// Verify that every description of a dataset has a stored vector.
    Check {
        #[arg(long)]
        store: PathBuf,
        #[arg(long)]
        data: Vec<PathBuf>,
        #[arg(long, default_value = "all")]
        flags: String,
    },
}

#[derive(Args, Debug)]
pub struct RunArgs {
    /// JSON experiment configuration.
    #[arg(long)]
    pub config: PathBuf,
    /// Datasets as `name=path` or a path named after its stem.
    #[arg(long, required = true)]
    pub data: Vec<String>,
    /// EMB1 store for sentence or word providers.
    #[arg(long)]
    pub store: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Concurrent seed runs; defaults to the available parallelism.
    #[arg(long)]
    pub threads: Option<usize>,
}

#[derive(Args, Debug)]
pub struct CheckpointArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long, required = true)]
    pub data: Vec<String>,
    #[arg(long)]
    pub store: Option<PathBuf>,
    /// CSV (rollout) or JSON (eval) output; standard output when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct DumpArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Supplies the text flags and provider.
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long, required = true)]
    pub data: Vec<String>,
    #[arg(long)]
    pub store: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

pub fn run<I, T>(args: I) -> Result<()>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            print!("{e}");
            return Ok(());
        }
        Err(e) => return Err(Error::Usage(e.to_string())),
    };
    dispatch(cli.command, &mut io::stdout().lock())
}

pub fn dispatch(command: Command, out: &mut dyn Write) -> Result<()> {
    let stdout_err = |e| Error::io("<stdout>", e);
    match command {
        Command::Generate(a) => {
            let equation = Equation::from_name(&a.equation)
                .ok_or_else(|| Error::Usage(format!("unknown equation {}", a.equation)))?;
            let spec = GenerateSpec {
                equation,
                count: a.count,
                first_seed: a.first_seed,
                grid: a.grid,
                ns_sim_grid: a.ns_sim_grid,
            };
            let trajs = generate(&spec, sim_threads())?;
            write_dataset(&a.out, &trajs)?;
            writeln!(
                out,
                "wrote {} {} trajectories to {}",
                trajs.len(),
                equation.name(),
                a.out.display()
            )
            .map_err(stdout_err)
        }
        Command::Describe(a) => {
            let flags = parse_flags(&a.flags)?;
            let records = describe_records(&read_dataset(&a.data)?, &flags);
            match a.out {
                Some(p) => crate::formats::create(&p, |w| write_jsonl(w, &records)),
                None => write_jsonl(out, &records).map_err(stdout_err),
            }
        }
        Command::Embed(e) => embed(e, out),
        Command::Train(a) => train_like(&a, false, out),
        Command::Transfer(a) => train_like(&a, true, out),
        Command::Ablate(a) => {
            let cfg = load_config(&a.config)?;
            let datasets = load_datasets(&a.data)?;
            let store = load_store(a.store.as_deref())?;
            let report = ablation(&cfg, &datasets, store.as_ref(), a.threads.unwrap_or_else(run_threads))?;
            print_written(out, &write_report(&a.out, &report)?)
        }
        Command::Eval(a) => {
            let report = score_checkpoint(&a, false)?;
            let json = serde_json::to_string_pretty(&report).map_err(|e| Error::json("report", e))?;
            emit(a.out.as_deref(), out, json.as_bytes())
        }
        Command::Rollout(a) => {
            let report = score_checkpoint(&a, true)?;
            let mut buf = Vec::new();
            rollout_csv(&mut buf, &report)?;
            emit(a.out.as_deref(), out, &buf)
        }
        Command::DumpEmbeddings(a) => dump_embeddings(&a, out),
    }
}

fn emit(path: Option<&Path>, out: &mut dyn Write, bytes: &[u8]) -> Result<()> {
    match path {
        Some(p) => std::fs::write(p, bytes).map_err(|e| Error::io(p, e)),
        None => out.write_all(bytes).map_err(|e| Error::io("<stdout>", e)),
    }
}

fn print_written(out: &mut dyn Write, paths: &[PathBuf]) -> Result<()> {
    for p in paths {
        writeln!(out, "wrote {}", p.display()).map_err(|e| Error::io("<stdout>", e))?;
    }
    Ok(())
}

pub fn parse_flags(s: &str) -> Result<Vec<DescriptionFlags>> {
    if s.eq_ignore_ascii_case("all") {
        return Ok(DescriptionFlags::ablation_rows().to_vec());
    }
    s.split(',')
        .map(|l| DescriptionFlags::from_label(l.trim()).ok_or_else(|| Error::Usage(format!("bad flag label {l:?}"))))
        .collect()
}

fn load_store(path: Option<&Path>) -> Result<Option<EmbeddingStore>> {
    path.map(read_store).transpose()
}

fn embed(cmd: EmbedCommand, out: &mut dyn Write) -> Result<()> {
    let io_err = |e| Error::io("<stdout>", e);
    match cmd {
        EmbedCommand::Info { store } => {
            let s = read_store(&store)?;
            writeln!(out, "{{\"dim\":{},\"count\":{}}}", s.dim(), s.len()).map_err(io_err)
        }
        EmbedCommand::Lookup { store, text } => {
            let s = read_store(&store)?;
            let h = sentence_hash(&text);
            let v = s
                .get(&h)
                .ok_or_else(|| textpde_core::Error::EmbeddingMiss { hash: hex(&h) })?;
            let line = serde_json::json!({ "hash": hex(&h), "values": v });
            writeln!(out, "{line}").map_err(io_err)
        }
        EmbedCommand::Tokenize { text, vocab } => {
            if vocab == 0 {
                return Err(Error::Usage("vocab must be positive".into()));
            }
            let line = serde_json::json!({
                "tokens": textpde_core::embed::token_strings(&text),
                "ids": tokenize_with_vocab(&text, vocab).ids,
            });
            writeln!(out, "{line}").map_err(io_err)
        }
        EmbedCommand::Check { store, data, flags } => {
            let s = read_store(&store)?;
            let flags = parse_flags(&flags)?;
            let (mut total, mut misses) = (0usize, Vec::new());
            for p in &data {
                for t in read_dataset(p)? {
                    for &f in &flags {
                        let d = render_description(&t.params, f);
                        total += 1;
                        if s.get(&sentence_hash(&d.text)).is_none() {
                            misses.push(hex(&sentence_hash(&d.text)));
                        }
                    }
                }
            }
            misses.sort();
            misses.dedup();
            writeln!(out, "{{\"sentences\":{total},\"distinct_misses\":{}}}", misses.len()).map_err(io_err)?;
            match misses.first() {
                Some(h) => Err(textpde_core::Error::EmbeddingMiss { hash: h.clone() }.into()),
                None => Ok(()),
            }
        }
    }
}

fn train_like(a: &RunArgs, transfer: bool, out: &mut dyn Write) -> Result<()> {
    let cfg = load_config(&a.config)?;
    if transfer != cfg.transfer.is_some() {
        return Err(Error::Usage(if transfer {
            "transfer needs a `transfer` section in the config".into()
        } else {
            "config has a `transfer` section; use the transfer subcommand".into()
        }));
    }
    let datasets = load_datasets(&a.data)?;
    let store = load_store(a.store.as_deref())?;
    let (report, outcomes) = experiment(&cfg, &datasets, store.as_ref(), a.threads.unwrap_or_else(run_threads))?;
    let mut written = write_report(&a.out, &report)?;
    written.push(write_history(&a.out, &outcomes)?);
    for o in outcomes {
        let p = a.out.join(format!("seed_{}.ckpt", o.seed));
        write_checkpoint(&p, &Checkpoint::new(o.model, o.seed, o.lineage))?;
        written.push(p);
    }
    print_written(out, &written)
}

fn score_checkpoint(a: &CheckpointArgs, rollouts: bool) -> Result<MetricsReport> {
    let ckpt = read_checkpoint(&a.checkpoint)?;
    let mut cfg: ExperimentConfig = load_config(&a.config)?;
    cfg.seeds = vec![ckpt.meta.seed];
    cfg.arch = Some(ckpt.meta.arch);
    let datasets = load_datasets(&a.data)?;
    let store = load_store(a.store.as_deref())?;
    let o = assess(&cfg, &datasets, store.as_ref(), ckpt.model, ckpt.meta.seed, rollouts)?;
    let label = cfg.text.map_or_else(|| "baseline".to_string(), |t| t.flags.label());
    let task = if rollouts {
        textpde_core::harness::Task::Rollout
    } else {
        cfg.task
    };
    Ok(MetricsReport::aggregate(task, &label, &[o])?)
}

fn dump_embeddings(a: &DumpArgs, out: &mut dyn Write) -> Result<()> {
    let ckpt = read_checkpoint(&a.checkpoint)?;
    let mut cfg = load_config(&a.config)?;
    cfg.arch = Some(ckpt.meta.arch);
    let arch = cfg.arch();
    let datasets = load_datasets(&a.data)?;
    let store = load_store(a.store.as_deref())?;
    let corpus = Corpus::new(datasets.iter().collect(), cfg.text, &arch, store.as_ref())?;
    let flags = cfg
        .text
        .ok_or_else(|| Error::Usage("config has no text section".into()))?
        .flags;
    let mut dump = EmbeddingStore::new(arch.llm_dim());
    for (d, ds) in datasets.iter().enumerate() {
        for (i, t) in ds.trajectories.iter().enumerate() {
            let text = render_description(&t.params, flags).text;
            let v = match &corpus.text {
                TextBank::Tokens(ids) => {
                    let seqs = [ids[d][i].clone()];
                    ckpt.model.text_vectors(TextInput::Tokens(&seqs))?.into_data()
                }
                TextBank::Vectors { dim, rows } => {
                    let x = Tensor::new([1, *dim], rows[d][i].clone())?;
                    ckpt.model.text_vectors(TextInput::Vectors(&x))?.into_data()
                }
                TextBank::None => return Err(Error::Usage("checkpoint has no text path".into())),
            };
            if dump.get(&sentence_hash(&text)).is_none() {
                dump.insert_sentence(&text, v)?;
            }
        }
    }
    write_store(&a.out, &dump)?;
    writeln!(out, "wrote {} vectors to {}", dump.len(), a.out.display()).map_err(|e| Error::io("<stdout>", e))
}
