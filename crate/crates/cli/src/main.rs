use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use if2net::harness::{self, ExperimentConfig, Variant, DEFAULT_BLOCK_GRID, INIT_ABLATION_EPOCHS};

#[derive(Parser)]
#[command(name = "if2net", version, about = "Class-incremental benchmarks with frozen random layers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train and score one variant over seeded runs.
    Run(Common),
    /// Compare first-layer node-block layouts.
    AblateBlocks {
        #[command(flatten)]
        common: Common,
        /// Layouts as N:S pairs; defaults to the 100-unit grid.
        #[arg(long = "block", value_parser = parse_block)]
        blocks: Vec<(usize, usize)>,
    },
    /// Compare random and analytic task-1 initialization.
    AblateInit(Common),
    /// Accumulated Rademacher estimate per training session.
    Rademacher(Common),
}

#[derive(Args)]
struct Common {
    /// TOML experiment configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Directory holding the dataset files.
    #[arg(long)]
    dataset_dir: Option<PathBuf>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Sets the weight, ordering, shuffle and label seeds at once.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    runs: Option<usize>,
    #[arg(long)]
    variant: Option<Variant>,
}

fn parse_block(s: &str) -> std::result::Result<(usize, usize), String> {
    let (n, b) = s.split_once(':').ok_or_else(|| format!("expected N:S, got {s:?}"))?;
    let n = n.trim().parse().map_err(|e| format!("{n:?}: {e}"))?;
    let b = b.trim().parse().map_err(|e| format!("{b:?}: {e}"))?;
    Ok((n, b))
}

impl Common {
    fn config(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::from_file(p).with_context(|| format!("loading {}", p.display()))?,
            None => ExperimentConfig::default(),
        };
        if let Some(d) = &self.dataset_dir {
            cfg.dataset.dir = d.clone();
        }
        if let Some(s) = self.seed {
            cfg.seeds.weight_seed = s;
            cfg.seeds.ordering_seed = s;
            cfg.seeds.shuffle_seed = s;
            cfg.seeds.label_seed = s;
        }
        if let Some(r) = self.runs {
            cfg.runs = r;
        }
        if let Some(v) = self.variant {
            cfg.variant = v;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn report(paths: &[PathBuf]) {
    for p in paths {
        eprintln!("wrote {}", p.display());
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run(common) => {
            let cfg = common.config()?;
            let results = harness::run_experiment(&cfg)?;
            for r in &results {
                println!(
                    "{} run {}: ACC {:.4} BWT {} FWT {}",
                    r.variant,
                    r.run_index,
                    r.acc,
                    r.bwt.map_or("-".into(), |v| format!("{v:.4}")),
                    r.fwt.map_or("-".into(), |v| format!("{v:.4}")),
                );
            }
            report(&harness::emit_results(&results, &common.out)?);
        }
        Command::AblateBlocks { common, blocks } => {
            let cfg = common.config()?;
            let grid = if blocks.is_empty() { DEFAULT_BLOCK_GRID.to_vec() } else { blocks };
            let rows = harness::run_ablation_node_blocks(&cfg, &grid)?;
            for r in &rows {
                println!(
                    "({}, {}): ACC {:.4} ± {:.4}  BWT {:.4}  FWT {:.4}",
                    r.n_blocks, r.block_size, r.acc.mean, r.acc.std, r.bwt.mean, r.fwt.mean
                );
            }
            report(&harness::emit_block_ablation(&rows, &common.out)?);
        }
        Command::AblateInit(common) => {
            let cfg = common.config()?;
            let rows = harness::run_ablation_init(&cfg, &harness::default_init_settings(), &INIT_ABLATION_EPOCHS)?;
            for r in &rows {
                println!(
                    "{:>14} eta {:<7} epochs {:>2}: loss {:.4}  task-1 {:.4}  all {:.4}",
                    r.setting, r.eta, r.epochs, r.task1_loss.mean, r.task1_acc.mean, r.acc_all.mean
                );
            }
            report(&harness::emit_init_ablation(&rows, &common.out)?);
        }
        Command::Rademacher(common) => {
            let cfg = common.config()?;
            let curves = harness::run_rademacher_curve(&cfg)?;
            for c in &curves {
                println!("run {}: {}", c.run_index, serde_json::to_string(&c.accumulated)?);
            }
            report(&harness::emit_rademacher(&curves, &common.out)?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
