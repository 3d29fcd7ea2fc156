use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use lznet::bench;
use lznet::gradcheck::{composite_suite, primitive_suite, CheckResult};
use lznet::harness::checkpoint::load_checkpoint;
use lznet::harness::train::{evaluate, network_from_checkpoint};
use lznet::harness::{train, TrainConfig};
use lznet::lz::{knn_with_digests, lz_digest, lzjd};
use lznet::memory::BackendKind;
use lznet::Error;

#[derive(Parser)]
#[command(name = "lznet", version, about = "Lempel-Ziv networks and LZ digest tools")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and write a metrics CSV
    Train(TrainArgs),
    /// Evaluate a checkpoint on its held-out split
    Eval(EvalArgs),
    /// Print the LZ digest of a file, one entry per line
    Digest {
        file: PathBuf,
    },
    /// Print the LZ Jaccard distance between two files
    Lzjd {
        a: PathBuf,
        b: PathBuf,
    },
    /// Classify files by LZJD nearest neighbours
    Knn(KnnArgs),
    /// Bind/unbind round trips and memory separability
    VsaBench(BenchArgs),
    /// Finite-difference check of every differentiable operation
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

/// Every option maps onto the config key of the same name and overrides the
/// `--config` file.
#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    task: Option<String>,
    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    backend: Option<String>,
    #[arg(long)]
    mode: Option<String>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    reset_cell: Option<String>,
    #[arg(long)]
    readout: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    bias_init: Option<String>,
    #[arg(long)]
    seq_len: Option<String>,
    #[arg(long)]
    copy_n: Option<String>,
    #[arg(long)]
    copy_m: Option<String>,
    #[arg(long)]
    hidden: Option<String>,
    #[arg(long)]
    batch: Option<String>,
    #[arg(long)]
    batches_per_epoch: Option<String>,
    #[arg(long)]
    eval_batches: Option<String>,
    #[arg(long)]
    epochs: Option<String>,
    #[arg(long)]
    optimizer: Option<String>,
    #[arg(long)]
    lr: Option<String>,
    #[arg(long)]
    decay: Option<String>,
    #[arg(long)]
    beta1: Option<String>,
    #[arg(long)]
    beta2: Option<String>,
    #[arg(long)]
    clip: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    #[arg(long)]
    memory_seed: Option<String>,
    #[arg(long)]
    ucr_train: Option<String>,
    #[arg(long)]
    ucr_test: Option<String>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    znormalize: Option<String>,
    #[arg(long)]
    metrics: Option<String>,
    #[arg(long)]
    checkpoint: Option<String>,
    #[arg(long)]
    resume: Option<String>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    wallclock: Option<String>,
}

impl TrainArgs {
    fn overrides(&self) -> Vec<(&'static str, &Option<String>)> {
        vec![
            ("task", &self.task),
            ("model", &self.model),
            ("backend", &self.backend),
            ("mode", &self.mode),
            ("reset-cell", &self.reset_cell),
            ("readout", &self.readout),
            ("bias-init", &self.bias_init),
            ("seq-len", &self.seq_len),
            ("copy-n", &self.copy_n),
            ("copy-m", &self.copy_m),
            ("hidden", &self.hidden),
            ("batch", &self.batch),
            ("batches-per-epoch", &self.batches_per_epoch),
            ("eval-batches", &self.eval_batches),
            ("epochs", &self.epochs),
            ("optimizer", &self.optimizer),
            ("lr", &self.lr),
            ("decay", &self.decay),
            ("beta1", &self.beta1),
            ("beta2", &self.beta2),
            ("clip", &self.clip),
            ("seed", &self.seed),
            ("memory-seed", &self.memory_seed),
            ("ucr-train", &self.ucr_train),
            ("ucr-test", &self.ucr_test),
            ("znormalize", &self.znormalize),
            ("metrics", &self.metrics),
            ("checkpoint", &self.checkpoint),
            ("resume", &self.resume),
            ("wallclock", &self.wallclock),
        ]
    }

    /// Defaults, then `LZNET_SEED`, then the config file, then flags.
    fn resolve(&self) -> lznet::Result<TrainConfig> {
        let mut cfg = TrainConfig::default();
        if let Ok(seed) = std::env::var("LZNET_SEED") {
            cfg.set("seed", &seed)?;
        }
        if let Some(path) = &self.config {
            cfg.apply_text(&std::fs::read_to_string(path)?)?;
        }
        for (key, value) in self.overrides() {
            if let Some(v) = value {
                cfg.set(key, v)?;
            }
        }
        Ok(cfg)
    }
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    eval_batches: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct KnnArgs {
    /// File of `label path` lines; paths are relative to this file
    #[arg(long)]
    train: PathBuf,
    #[arg(short, long, default_value_t = 1)]
    k: usize,
    /// Files to classify
    #[arg(required = true)]
    queries: Vec<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long, value_delimiter = ',', default_values_t = [64usize, 256, 1024])]
    dims: Vec<usize>,
    #[arg(long, default_value_t = 100)]
    trials: usize,
    #[arg(long, value_delimiter = ',', default_values_t = [5usize, 10, 20, 50])]
    items: Vec<usize>,
    #[arg(long, default_value_t = 1000)]
    fresh: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn read(path: &Path) -> lznet::Result<Vec<u8>> {
    Ok(std::fs::read(path)?)
}

fn render_entry(entry: &[u8]) -> String {
    entry.iter().map(|b| format!("{b:02x}")).collect()
}

fn load_train_list(list: &Path) -> lznet::Result<Vec<(Vec<u8>, String)>> {
    let base = list.parent().unwrap_or(Path::new("."));
    let text = std::fs::read_to_string(list)?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (label, path) = line.split_once(char::is_whitespace).ok_or_else(|| Error::Parse {
            path: list.display().to_string(),
            line: i + 1,
            msg: "expected `label path`".into(),
        })?;
        out.push((read(&base.join(path.trim()))?, label.to_string()));
    }
    if out.is_empty() {
        return Err(Error::EmptyTrainingSet);
    }
    Ok(out)
}

fn stats(xs: &[f64]) -> (f64, f64) {
    let mean = xs.iter().sum::<f64>() / xs.len() as f64;
    (mean, xs.iter().cloned().fold(f64::INFINITY, f64::min))
}

fn print_checks(title: &str, rows: &[CheckResult]) -> bool {
    println!("{title}");
    for r in rows {
        let verdict = if r.passed() { "PASS" } else { "FAIL" };
        println!("  {:<24} {:>10.3e}  (tol {:.0e})  {verdict}", r.name, r.rel_err, r.tolerance);
    }
    rows.iter().all(CheckResult::passed)
}

fn run(command: Command) -> lznet::Result<bool> {
    match command {
        Command::Train(args) => {
            let cfg = args.resolve()?;
            let summary = train(&cfg)?;
            for split in ["train", "valid", "test"] {
                if let Some(row) = summary.last(split) {
                    println!("epoch {} {split} loss {}", row.epoch, row.loss);
                }
            }
            println!("metrics written to {}", cfg.metrics.display());
        }
        Command::Eval(args) => {
            let ck = load_checkpoint(&args.checkpoint)?;
            let (cfg, data, net) = network_from_checkpoint(&ck)?;
            let r = evaluate(
                &net,
                &data,
                args.batch.unwrap_or(cfg.batch),
                args.eval_batches.unwrap_or(cfg.eval_batches),
                args.seed.unwrap_or(cfg.seed),
            )?;
            print!("split={} loss={}", data.eval_split(), r.loss);
            if let Some(a) = r.accuracy {
                print!(" accuracy={a}");
            }
            if let Some(p) = r.mean_p {
                print!(" mean_p={p}");
            }
            println!();
        }
        Command::Digest { file } => {
            for entry in lz_digest(&read(&file)?).entries() {
                println!("{}", render_entry(entry));
            }
        }
        Command::Lzjd { a, b } => {
            println!("{:.6}", lzjd(&read(&a)?, &read(&b)?));
        }
        Command::Knn(args) => {
            let train = load_train_list(&args.train)?;
            let digests: Vec<_> = train.iter().map(|(s, _)| lz_digest(s)).collect();
            let labels: Vec<String> = train.into_iter().map(|(_, l)| l).collect();
            for q in &args.queries {
                let label = knn_with_digests(&digests, &labels, &lz_digest(&read(q)?), args.k)?;
                println!("{}\t{label}", q.display());
            }
        }
        Command::VsaBench(args) => {
            println!("round trip (cosine over {} trials)", args.trials);
            println!("  {:<8} {:>6} {:>10} {:>10}", "backend", "d", "mean", "min");
            for &d in &args.dims {
                for kind in [BackendKind::Hrr, BackendKind::Vtb] {
                    if kind.validate_dim(d).is_err() {
                        continue;
                    }
                    let (mean, min) = stats(&bench::round_trip(kind, d, args.trials, args.seed)?);
                    println!("  {:<8} {d:>6} {mean:>10.4} {min:>10.4}", kind.to_string());
                }
            }
            println!("hrr memory separability ({} fresh queries)", args.fresh);
            println!("  {:>6} {:>6} {:>10} {:>10} {:>10}", "d", "items", "threshold", "accuracy", "balanced");
            for &d in &args.dims {
                for &n in &args.items {
                    let s = bench::separability(BackendKind::Hrr, d, n, args.fresh, args.seed)?;
                    println!(
                        "  {d:>6} {n:>6} {:>10.4} {:>10.4} {:>10.4}",
                        s.threshold, s.accuracy, s.balanced_accuracy
                    );
                }
            }
        }
        Command::Gradcheck { seed } => {
            let a = print_checks("primitives", &primitive_suite(seed)?);
            let b = print_checks("composites", &composite_suite(seed)?);
            return Ok(a && b);
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    match run(cli.command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e @ Error::Config(_)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
