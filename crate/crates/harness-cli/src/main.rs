use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use dtd_core::config::load_config;
use dtd_core::harness::{self, Algo, HeatmapRequest, RunManifest};

#[derive(Parser)]
#[command(name = "dtd", version, about = "Hierarchical goal-conditioned RL experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one algorithm over several seeds.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_parser = parse_algo)]
        algo: Algo,
        /// Number of seeds, starting at the config's `seed`.
        #[arg(long, default_value_t = 1)]
        seeds: usize,
        #[arg(long)]
        out: PathBuf,
        /// Run seeds on parallel threads.
        #[arg(long)]
        parallel: bool,
    },
    /// Evaluate a checkpoint deterministically.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 30)]
        episodes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Per-episode CSV destination.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Export the high-level value landscape over candidate sub-goals.
    Heatmap {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value = "diag")]
        scenario: String,
        #[arg(long, default_value_t = 20)]
        resolution: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

fn parse_algo(s: &str) -> Result<Algo, String> {
    s.parse().map_err(|e: dtd_core::Error| e.to_string())
}

fn run(cli: Cli) -> dtd_core::Result<()> {
    match cli.command {
        Command::Train { config, algo, seeds, out, parallel } => {
            let config = load_config(&config)?;
            let mut manifest = RunManifest::new(&config, algo, seeds, out)?;
            manifest.parallel = parallel;
            let summary = harness::run_train(&manifest)?;
            for run in &summary.runs {
                println!("seed {}: final success {:.3}", run.seed, run.final_success());
            }
            if let Some(last) = summary.aggregate.last() {
                println!(
                    "median final success {:.3} (p25 {:.3}, p75 {:.3})",
                    last.median, last.p25, last.p75
                );
            }
            println!("results in {}", manifest.algo_dir().display());
        }
        Command::Eval { checkpoint, episodes, seed, out } => {
            let report = harness::run_eval(&checkpoint, episodes, seed)?;
            print!("{}", harness::eval_report_text(&report));
            if let Some(out) = out {
                std::fs::write(out, harness::eval_csv(&report))?;
            }
        }
        Command::Heatmap { checkpoint, scenario, resolution, out } => {
            let map = harness::export_heatmap(&HeatmapRequest { checkpoint, scenario, resolution, out })?;
            println!("{}", map.summary_line().trim_start_matches("# "));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
