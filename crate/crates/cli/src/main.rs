use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use stackcast_cli::{cmd_backtest, cmd_fit, cmd_fit_multilayer, cmd_ingest, cmd_report, RunConfig, StoreLayout};

#[derive(Parser)]
#[command(name = "stackcast", version, about = "Forecast combination and multi-layer stacking")]
struct Cli {
    /// Run configuration file (`key = value` lines).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; defaults to the number of CPUs.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Run directory.
    #[arg(long, global = true, default_value = ".")]
    out_dir: PathBuf,
    /// Reference method of the leaderboard.
    #[arg(long, global = true, default_value = "Median")]
    baseline: String,
    /// Keep the interim L2 stackers instead of refitting them on all windows.
    #[arg(long, global = true)]
    no_l2_retrain: bool,
    /// Number of validation windows.
    #[arg(long, global = true)]
    k_folds: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Validate and store a panel from an item_id,timestamp,target CSV.
    Ingest { input: PathBuf },
    /// Backtest the base learners and store out-of-fold forecasts.
    Backtest,
    /// Fit the configured stackers and score them on the holdout window.
    Fit,
    /// Fit multi-layer ensembles for the configured L3 aggregators.
    FitMultilayer,
    /// Aggregate record files into a leaderboard.
    Report {
        /// Record files; defaults to the run directory's records.csv.
        records: Vec<PathBuf>,
    },
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(path) => {
            RunConfig::parse(&std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?)?
        }
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(k) = cli.k_folds {
        cfg.folds = k;
    }
    if cli.no_l2_retrain {
        cfg.l2_retrain = false;
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    if let Some(jobs) = cli.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs.max(1))
            .build_global()?;
    }
    let cfg = load_config(&cli)?;
    let layout = StoreLayout::new(&cli.out_dir);
    match &cli.command {
        Command::Ingest { input } => {
            let s = cmd_ingest(input, &cfg, &layout)?;
            println!("kept {}, dropped {}", s.kept, s.dropped);
        }
        Command::Backtest => {
            let store = cmd_backtest(&cfg, &layout)?;
            println!(
                "backtested {} models on {} items over {} windows",
                store.n_models(),
                store.items.len(),
                store.windows.len()
            );
        }
        Command::Fit | Command::FitMultilayer => {
            let out = if matches!(cli.command, Command::Fit) {
                cmd_fit(&cfg, &layout)?
            } else {
                cmd_fit_multilayer(&cfg, &layout)?
            };
            for r in &out.records {
                println!("{:<28} {} {:.6}  ({:.3}s)", r.method, r.metric, r.value, r.fit_time_s);
            }
        }
        Command::Report { records } => {
            let inputs = if records.is_empty() {
                vec![layout.records()]
            } else {
                records.clone()
            };
            let board = cmd_report(&inputs, &cli.baseline, &layout)?;
            print!("{}", board.to_markdown());
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
