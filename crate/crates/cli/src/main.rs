use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use dccl_core::checkpoint::Checkpoint;
use dccl_core::config::ExperimentConfig;
use dccl_core::connectivity::{connectivity_report, EmbeddingDump, Mode};
use dccl_core::harness::{self, ResultTable};
use dccl_core::nets::build_anchor;
use dccl_core::synthdata::{gen_toy, toy_accuracy, Dataset, ToyMapKind};
use dccl_core::{Error, Result};

/// Domain-connecting contrastive learning experiments on synthetic domains.
#[derive(Parser)]
#[command(name = "dccl", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Two-domain separating example: accuracy of a sign classifier after
    /// the weak or the aggressive closed-form map.
    Toy {
        #[arg(long)]
        variant: ToyMapKind,
        /// Samples per class in each domain.
        #[arg(long, default_value_t = 100)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train holding out `protocol.held_out`, once per seed.
    Train(RunArgs),
    /// Leave-one-domain-out over every domain and seed.
    Loo(RunArgs),
    /// The ablation grid of `ablation.rows`, each under leave-one-domain-out.
    Ablate(RunArgs),
    /// Per-class connectivity scores of an embedding dump.
    Connectivity {
        dump: PathBuf,
        #[arg(long, default_value = "pooled")]
        mode: Mode,
        /// Also write the report as CSV.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Encoder features of a checkpoint on a dataset, in the dump format.
    DumpEmbeddings {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Generate the dataset described by this experiment config.
        #[arg(long, conflicts_with = "data", required_unless_present = "data")]
        config: Option<PathBuf>,
        /// Read a dataset written by `gen-data`.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Leave this domain out of the dump.
        #[arg(long)]
        exclude_domain: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write the dataset of an experiment config.
    GenData {
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Build the frozen anchor of an experiment config and save it.
    Anchor {
        config: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct RunArgs {
    config: PathBuf,
    /// Output root; overrides `out_dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Parallel runs; overrides `workers`.
    #[arg(long)]
    workers: Option<usize>,
}

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let cfg = ExperimentConfig::load(path)?;
    cfg.validate()?;
    Ok(cfg)
}

fn run_table(args: &RunArgs, build: fn(&ExperimentConfig, &Dataset, Option<&Path>) -> Result<ResultTable>) -> Result<()> {
    let mut cfg = load_config(&args.config)?;
    if let Some(w) = args.workers {
        cfg.workers = w;
    }
    cfg.validate()?;
    let root = args.out.clone().unwrap_or_else(|| PathBuf::from(&cfg.out_dir));
    let data = cfg.dataset.generate()?;
    let table = build(&cfg, &data, Some(&root))?;
    let (text, csv) = (table.to_text(), table.to_csv());
    let dir = root.join(&cfg.name);
    write(&dir.join("table.txt"), &text)?;
    write(&dir.join("table.csv"), &csv)?;
    print!("{text}\n{csv}");
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Toy { variant, n, seed } => {
            if n == 0 {
                return Err(Error::InvalidArgument("--n must be at least 1".into()));
            }
            println!("variant: {variant}");
            for domain in [1, 2] {
                let data = gen_toy(n, domain, seed)?;
                println!("d{domain} accuracy: {:.2}%", 100.0 * toy_accuracy(variant, &data));
            }
            Ok(())
        }
        Command::Train(a) => run_table(&a, harness::train_table),
        Command::Loo(a) => run_table(&a, harness::loo_table),
        Command::Ablate(a) => run_table(&a, harness::ablation_grid),
        Command::Connectivity { dump, mode, out } => {
            let dump = EmbeddingDump::parse(&read(&dump)?)?;
            let report = connectivity_report(&dump.records, mode)?;
            print!("{}", report.to_table());
            if let Some(out) = out {
                write(&out, &report.to_csv())?;
            }
            Ok(())
        }
        Command::DumpEmbeddings {
            checkpoint,
            config,
            data,
            exclude_domain,
            out,
        } => {
            let ckpt = Checkpoint::load(&checkpoint)?;
            let data = match (config, data) {
                (Some(c), _) => load_config(&c)?.dataset.generate()?,
                (None, Some(d)) => Dataset::from_dump(&read(&d)?)?,
                (None, None) => unreachable!("clap requires one of --config and --data"),
            };
            if ckpt.input_dim() != data.dim {
                return Err(Error::InvalidArgument(format!(
                    "checkpoint expects input dimension {}, dataset has dimension {}",
                    ckpt.input_dim(),
                    data.dim
                )));
            }
            let dump = harness::collect_embeddings(&ckpt.encoder, &data, exclude_domain)?;
            write(&out, &dump.to_text())?;
            eprintln!("wrote {} records to {}", dump.records.len(), out.display());
            Ok(())
        }
        Command::GenData { config, out } => {
            let data = load_config(&config)?.dataset.generate()?;
            write(&out, &data.to_dump())?;
            eprintln!("wrote {} samples to {}", data.len(), out.display());
            Ok(())
        }
        Command::Anchor { config, seed, out } => {
            let cfg = load_config(&config)?;
            let data = cfg.dataset.generate()?;
            let anchor = build_anchor(&data, &cfg.model_config(), &cfg.anchor_config(), seed)?;
            Checkpoint::from_anchor(&anchor).save(&out)?;
            println!("validation_accuracy = {:.4}", anchor.provenance().validation_accuracy);
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_user_error() { 1 } else { 2 })
        }
    }
}
