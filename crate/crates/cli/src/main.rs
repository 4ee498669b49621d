use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use xgoal_core::config::RunConfig;
use xgoal_core::evalkit::{self, Task};
use xgoal_core::gradcheck::{self, Term};
use xgoal_core::graphdata::{generate_synthetic, load_bundle, save_bundle, AttrFormat, MultiplexGraph, SynthSpec};
use xgoal_core::numkit::{read_dense, write_dense, Precision, Rng};
use xgoal_core::trainer::{self, embed, load_checkpoint, save_checkpoint, Checkpoint, EmbeddingSet};
use xgoal_core::Error;

const EXIT_VERIFY: u8 = 1;
const EXIT_INPUT: u8 = 2;
const EXIT_DIVERGED: u8 = 3;

#[derive(Parser)]
#[command(name = "xgoal", version, about = "Multiplex graph prototypical contrastive learning")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
#[allow(clippy::large_enum_variant)]
enum Command {
    /// Warm up and train encoders on a bundle, writing a run directory
    Train(TrainArgs),
    /// Score embeddings on classification, clustering and similarity search
    Eval(EvalArgs),
    /// Certify every analytic gradient against finite differences
    Gradcheck(GradcheckArgs),
    /// Write a planted-partition multiplex bundle
    Synth(SynthArgs),
    /// Forward pass from a checkpoint
    Embed(EmbedArgs),
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Flat dotted-key JSON; flags override it
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    lr: Option<f64>,
    /// Per-layer cluster count, repeatable: --k PSP=30
    #[arg(long = "k", value_name = "LAYER=K")]
    k: Vec<String>,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Maximum training epochs after warm-up
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    warmup: Option<usize>,
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    cluster_every: Option<usize>,
    /// Embedding dimension
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    p_drop: Option<f64>,
    #[arg(long)]
    lambda_n: Option<f64>,
    #[arg(long)]
    lambda_c: Option<f64>,
    #[arg(long)]
    mu_n: Option<f64>,
    #[arg(long)]
    mu_c: Option<f64>,
    /// Single-threaded, bitwise-reproducible run
    #[arg(long)]
    deterministic: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum TaskArg {
    Classify,
    Cluster,
    Simsearch,
    All,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    embeddings: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_enum, default_value = "all")]
    task: TaskArg,
    /// Cluster count for the clustering task; defaults to the number of classes
    #[arg(long)]
    k: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Report path; defaults to eval.json next to the embeddings
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Check this many consecutive seeds starting at --seed
    #[arg(long, default_value_t = 1)]
    seeds: u64,
    #[arg(long, hide = true)]
    inject_fault: Option<String>,
}

#[derive(Clone, Copy, ValueEnum)]
enum AttrFormatArg {
    Tsv,
    Bin,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 200)]
    n: usize,
    #[arg(long, default_value_t = 2)]
    layers: usize,
    #[arg(long, default_value_t = 3)]
    communities: usize,
    #[arg(long, default_value_t = 0.1)]
    p_in: f64,
    #[arg(long, default_value_t = 0.01)]
    p_out: f64,
    #[arg(long, default_value_t = 32)]
    attr_dim: usize,
    #[arg(long, default_value_t = 0.1)]
    noise: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value = "tsv")]
    attr_format: AttrFormatArg,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EmbedArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Gradcheck(a) => cmd_gradcheck(a),
        Command::Synth(a) => cmd_synth(a),
        Command::Embed(a) => cmd_embed(a),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(err) => {
            eprintln!("error: {err:#}");
            let code = match err.downcast_ref::<Error>() {
                Some(Error::Divergence { .. }) => EXIT_DIVERGED,
                _ => EXIT_INPUT,
            };
            ExitCode::from(code)
        }
    }
}

fn resolve_train_config(a: &TrainArgs) -> anyhow::Result<RunConfig> {
    let mut cfg = match &a.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    let path_str = |p: &Path| Value::String(p.to_string_lossy().into_owned());
    let mut overrides: Vec<(String, Value)> = Vec::new();
    if let Some(p) = &a.data {
        overrides.push(("data".into(), path_str(p)));
    }
    if let Some(p) = &a.out {
        overrides.push(("out".into(), path_str(p)));
    }
    let numeric = [
        ("learning_rate", a.lr.map(|v| json!(v))),
        ("tau", a.tau.map(|v| json!(v))),
        ("seed", a.seed.map(|v| json!(v))),
        ("max_epochs", a.epochs.map(|v| json!(v))),
        ("warmup_epochs", a.warmup.map(|v| json!(v))),
        ("patience", a.patience.map(|v| json!(v))),
        ("cluster_every", a.cluster_every.map(|v| json!(v))),
        ("d", a.dim.map(|v| json!(v))),
        ("p_drop", a.p_drop.map(|v| json!(v))),
        ("weights.lambda_n", a.lambda_n.map(|v| json!(v))),
        ("weights.lambda_c", a.lambda_c.map(|v| json!(v))),
        ("weights.mu_n", a.mu_n.map(|v| json!(v))),
        ("weights.mu_c", a.mu_c.map(|v| json!(v))),
    ];
    overrides.extend(numeric.into_iter().filter_map(|(k, v)| v.map(|v| (k.to_string(), v))));
    if a.deterministic {
        overrides.push(("deterministic".into(), json!(true)));
    }
    for spec in &a.k {
        let (layer, k) = spec
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("--k expects LAYER=K, got {spec:?}")))?;
        let k: usize = k
            .trim()
            .parse()
            .map_err(|_| Error::Config(format!("--k {spec:?}: {k:?} is not a count")))?;
        overrides.push((format!("k.{layer}"), json!(k)));
    }
    for (key, value) in overrides {
        cfg.set(&key, value)?;
    }
    Ok(cfg)
}

fn write_embeddings(dir: &Path, set: &EmbeddingSet) -> anyhow::Result<()> {
    for (name, h) in set.names.iter().zip(&set.layers) {
        write_dense(&dir.join(format!("embeddings-{name}.bin")), h, Precision::F32)?;
    }
    write_dense(&dir.join("embeddings-fused.bin"), &set.fused, Precision::F32)?;
    Ok(())
}

fn create_dir(dir: &Path) -> anyhow::Result<()> {
    fs::create_dir_all(dir).map_err(|source| Error::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    Ok(())
}

fn cmd_train(a: TrainArgs) -> anyhow::Result<u8> {
    let mut cfg = resolve_train_config(&a)?;
    let data = cfg
        .data
        .clone()
        .ok_or_else(|| Error::Config("--data is required".into()))?;
    let out = PathBuf::from(
        cfg.out
            .clone()
            .ok_or_else(|| Error::Config("--out is required".into()))?,
    );
    let graph = load_bundle(Path::new(&data))?;
    // echo the per-layer K actually used, not only the overrides
    let ks = cfg.train.resolve_k(&graph)?;
    for (layer, k) in graph.layers().iter().zip(ks) {
        cfg.train.k.insert(layer.name().to_string(), k);
    }
    create_dir(&out)?;
    let config_path = out.join("config.json");
    fs::write(&config_path, cfg.to_json() + "\n").with_context(|| config_path.display().to_string())?;

    let metrics_path = out.join("metrics.jsonl");
    let mut metrics = BufWriter::new(File::create(&metrics_path).with_context(|| metrics_path.display().to_string())?);
    let mut write_err = None;
    let outcome = trainer::run(&graph, &cfg.train, &mut |log| {
        if write_err.is_none() {
            if let Err(e) = writeln!(metrics, "{}", log.report.to_json_line(log.epoch, log.phase.as_str())) {
                write_err = Some(e);
            }
        }
    });
    metrics.flush()?;
    if let Some(e) = write_err {
        return Err(anyhow!(e).context(metrics_path.display().to_string()));
    }
    let outcome = outcome?;

    let checkpoint = Checkpoint {
        seed: cfg.train.seed,
        epoch: outcome.state.epoch,
        layers: outcome
            .embeddings
            .names
            .iter()
            .cloned()
            .zip(outcome.state.params.iter().cloned())
            .collect(),
    };
    save_checkpoint(&out.join("checkpoint.bin"), &checkpoint)?;
    write_embeddings(&out, &outcome.embeddings)?;
    println!(
        "trained {} epochs after {} warm-up epochs{}; best total loss {:.6}; wrote {}",
        outcome.epochs_run,
        cfg.train.warmup_epochs,
        if outcome.stopped_early { " (early stop)" } else { "" },
        outcome.state.best_total,
        out.display()
    );
    Ok(0)
}

fn cmd_eval(a: EvalArgs) -> anyhow::Result<u8> {
    let graph = load_bundle(&a.data)?;
    let h = read_dense(&a.embeddings)?;
    if h.rows() != graph.n_nodes() {
        return Err(Error::Eval(format!("{} embedding rows for {} nodes", h.rows(), graph.n_nodes())).into());
    }
    let labels = graph
        .labels()
        .ok_or_else(|| Error::Eval(format!("bundle {} has no labels", a.data.display())))?;
    let task = match a.task {
        TaskArg::Classify => Task::Classify,
        TaskArg::Cluster => Task::Cluster,
        TaskArg::Simsearch => Task::Simsearch,
        TaskArg::All => Task::All,
    };
    let report = evalkit::evaluate(&h, labels, graph.split(), task, a.k, a.seed)?;
    let out = a.out.unwrap_or_else(|| {
        a.embeddings
            .parent()
            .filter(|p| !p.as_os_str().is_empty())
            .unwrap_or(Path::new("."))
            .join("eval.json")
    });
    fs::write(&out, serde_json::to_string_pretty(&report)? + "\n").with_context(|| out.display().to_string())?;
    print!("{}", report.table());
    Ok(0)
}

fn cmd_gradcheck(a: GradcheckArgs) -> anyhow::Result<u8> {
    let fault = a.inject_fault.as_deref().map(str::parse::<Term>).transpose()?;
    let mut failed = false;
    println!("{:<6}{:<10}{:>12}  worst entry", "seed", "term", "max rel err");
    for seed in a.seed..a.seed + a.seeds.max(1) {
        let report = gradcheck::run_with_fault(seed, fault)?;
        for r in &report.results {
            let mark = if r.passed() { "" } else { "  FAIL" };
            println!(
                "{seed:<6}{:<10}{:>12.3e}  {}{mark}",
                r.term.name(),
                r.max_rel_error,
                r.worst
            );
        }
        for r in report.failures() {
            failed = true;
            eprintln!(
                "gradient check failed: seed {seed}, term {}, relative error {:.3e} >= {:.0e} at {}",
                r.term,
                r.max_rel_error,
                gradcheck::THRESHOLD,
                r.worst
            );
        }
    }
    Ok(if failed { EXIT_VERIFY } else { 0 })
}

fn cmd_synth(a: SynthArgs) -> anyhow::Result<u8> {
    let spec = SynthSpec {
        n_nodes: a.n,
        n_layers: a.layers,
        n_communities: a.communities,
        p_in: a.p_in,
        p_out: a.p_out,
        attr_dim: a.attr_dim,
        noise: a.noise,
    };
    let graph: MultiplexGraph = generate_synthetic(&spec, &mut Rng::new(a.seed))?;
    let format = match a.attr_format {
        AttrFormatArg::Tsv => AttrFormat::Tsv,
        AttrFormatArg::Bin => AttrFormat::Bin,
    };
    save_bundle(&graph, &a.out, format)?;
    println!(
        "wrote {} nodes, {} layers, {} communities to {}",
        graph.n_nodes(),
        graph.n_layers(),
        spec.n_communities,
        a.out.display()
    );
    Ok(0)
}

fn cmd_embed(a: EmbedArgs) -> anyhow::Result<u8> {
    let graph = load_bundle(&a.data)?;
    let ck = load_checkpoint(&a.checkpoint)?;
    let names: Vec<String> = graph.layers().iter().map(|l| l.name().to_string()).collect();
    let ck_names: Vec<&String> = ck.layers.iter().map(|(n, _)| n).collect();
    if ck_names.iter().map(|s| s.as_str()).ne(names.iter().map(|s| s.as_str())) {
        return Err(Error::Config(format!(
            "checkpoint layers {ck_names:?} do not match bundle layers {names:?}"
        ))
        .into());
    }
    if let Some((name, p)) = ck.layers.iter().find(|(_, p)| p.attr_dim() != graph.attr_dim()) {
        return Err(Error::Config(format!(
            "layer {name}: checkpoint expects {} attributes, bundle has {}",
            p.attr_dim(),
            graph.attr_dim()
        ))
        .into());
    }
    let params: Vec<_> = ck.layers.into_iter().map(|(_, p)| p).collect();
    let set = embed(&graph, &params, &names)?;
    create_dir(&a.out)?;
    write_embeddings(&a.out, &set)?;
    println!("wrote {} embeddings to {}", names.len() + 1, a.out.display());
    Ok(0)
}
