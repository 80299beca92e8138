use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use gpnet::harness::{self, AblationOptions, Axis, RunConfig, CHECKPOINT_FILE};
use gpnet::GpnetError;

#[derive(Parser)]
#[command(
    name = "gpnet",
    version,
    about = "Multi-granularity graph pooling: data, training, evaluation, ablation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON run configuration; defaults are used when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides both the data seed and the model seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; defaults to the configured `output_dir`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic dataset as GPFM files plus manifests.
    GenData(Common),
    /// Train and write a checkpoint plus history CSV.
    Train {
        #[command(flatten)]
        common: Common,
        /// Dataset directory with manifests (overrides `data_dir`).
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Evaluate a checkpoint and write a metric CSV and table.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: Option<PathBuf>,
        /// Defaults to `<out>/checkpoint.gpn`.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Write per-node pooling scores of the first training sequence.
    PoolDemo {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: Option<PathBuf>,
        /// Untrained parameters are used when omitted.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Sweep one axis (pool, gc, granularity, keep_ratio, adjacency) or `all`.
    Ablate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        axis: String,
        #[arg(long, default_value_t = 1)]
        workers: usize,
    },
}

fn resolve(common: &Common, data: Option<&Path>) -> gpnet::Result<(RunConfig, PathBuf)> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = common.seed {
        cfg = cfg.with_seed(s);
    }
    if let Some(d) = data {
        cfg.data_dir = Some(d.to_path_buf());
    }
    cfg.validate()?;
    let out = common.out.clone().unwrap_or_else(|| cfg.output_dir.clone());
    Ok((cfg, out))
}

fn run(cli: Cli) -> gpnet::Result<()> {
    match cli.command {
        Command::GenData(common) => {
            let (cfg, out) = resolve(&common, None)?;
            let d = harness::gen_data(&cfg, &out)?;
            println!(
                "wrote {} train, {} query, {} gallery sequences to {}",
                d.train.len(),
                d.query.len(),
                d.gallery.len(),
                out.display()
            );
        }
        Command::Train { common, data } => {
            let (cfg, out) = resolve(&common, data.as_deref())?;
            let outcome = harness::run_train(&cfg, &out)?;
            if let Some(last) = outcome.history.last() {
                println!(
                    "epoch {}: total loss {:.4}, train rank-1 {}",
                    last.epoch,
                    last.total_loss,
                    last.train_rank1
                        .map(|r| format!("{:.3}", r))
                        .unwrap_or_default()
                );
            }
            println!(
                "checkpoint written to {}",
                out.join(CHECKPOINT_FILE).display()
            );
        }
        Command::Eval {
            common,
            data,
            checkpoint,
        } => {
            let (cfg, out) = resolve(&common, data.as_deref())?;
            let ckpt = checkpoint.unwrap_or_else(|| out.join(CHECKPOINT_FILE));
            harness::run_eval(&cfg, &ckpt, &out)?;
            print!("{}", std::fs::read_to_string(out.join("metrics.txt"))?);
        }
        Command::PoolDemo {
            common,
            data,
            checkpoint,
        } => {
            let (cfg, out) = resolve(&common, data.as_deref())?;
            for p in harness::pool_demo(&cfg, checkpoint.as_deref(), &out)? {
                println!("{}", p.display());
            }
        }
        Command::Ablate {
            common,
            axis,
            workers,
        } => {
            let axes = if axis == "all" {
                Axis::ALL.to_vec()
            } else {
                vec![Axis::parse(&axis)
                    .ok_or_else(|| GpnetError::Config(format!("unknown axis `{axis}`")))?]
            };
            let (cfg, out) = resolve(&common, None)?;
            let opts = AblationOptions {
                workers,
                ..Default::default()
            };
            for a in axes {
                harness::ablate(&cfg, a, opts, &out)?;
                print!(
                    "{}",
                    std::fs::read_to_string(out.join(format!("{}.txt", a.name())))?
                );
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("GPNET_LOG", "warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e {
                GpnetError::Config(_) => 2,
                GpnetError::MissingFile(_) => 3,
                _ => 1,
            })
        }
    }
}
