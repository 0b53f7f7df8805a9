use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use latent_convexity::convexity_score::PairBudget;
use latent_convexity::knn_graph::DEFAULT_K;
use latent_convexity::prune_rule::{PruneMode, DEFAULT_EPSILON};
use latent_convexity::report::{
    cmd_plot, cmd_prune_point, cmd_score, cmd_synth, decision_json, prune_summary, Aggregate, CliError,
    ExecOptions, RunConfig,
};
use latent_convexity::synth_bench::{ClusterSpec, LayerStackSpec};

#[derive(Debug, Parser)]
#[command(name = "cvx", version, about = "Graph convexity of latent class regions and layer pruning")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Score every layer of a dataset; writes a JSON report and a CSV beside it.
    Score {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, default_value_t = DEFAULT_K, value_parser = parse_k)]
        k: usize,
        /// Sample at most this many pairs per class (default: all pairs).
        #[arg(long)]
        max_pairs: Option<u64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Aggregate recorded for later prune decisions.
        #[arg(long, value_enum, default_value_t = Aggregate::Macro)]
        aggregate: Aggregate,
        #[arg(long, value_enum, default_value_t = PruneMode::Plateau)]
        mode: PruneMode,
        #[arg(long, default_value_t = DEFAULT_EPSILON)]
        epsilon: f64,
        /// Worker threads (0 = all cores). Does not affect results.
        #[arg(long, default_value_t = 0)]
        threads: usize,
        /// Report path; the CSV is written with the same stem. Prints JSON if omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Pick the layer after which to prune from a score report.
    PrunePoint {
        report: PathBuf,
        #[arg(long, value_enum, default_value_t = PruneMode::Plateau)]
        mode: PruneMode,
        #[arg(long, default_value_t = DEFAULT_EPSILON)]
        epsilon: f64,
        #[arg(long, value_enum)]
        aggregate: Aggregate,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Render a score report as an SVG line chart.
    Plot {
        report: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate a synthetic Gaussian-cluster layer stack.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 5)]
        classes: usize,
        #[arg(long, default_value_t = 100)]
        n_per_class: usize,
        #[arg(long, default_value_t = 16)]
        dim: usize,
        #[arg(long, default_value_t = 1.0)]
        std: f64,
        /// Per-layer center separation in units of std.
        #[arg(long, value_delimiter = ',', default_values_t = vec![1.0, 2.0, 4.0, 8.0, 8.0, 8.0])]
        schedule: Vec<f64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn parse_k(s: &str) -> Result<usize, String> {
    match s.parse::<usize>() {
        Ok(0) => Err("k must be at least 1".into()),
        Ok(k) => Ok(k),
        Err(e) => Err(e.to_string()),
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Score {
            manifest,
            k,
            max_pairs,
            seed,
            aggregate,
            mode,
            epsilon,
            threads,
            out,
        } => {
            let config = RunConfig {
                manifest: manifest.display().to_string(),
                k,
                pair_budget: match max_pairs {
                    Some(max_pairs) => PairBudget::Sampled { max_pairs, seed },
                    None => PairBudget::All,
                },
                aggregate,
                mode,
                epsilon,
            };
            let print = out.is_none();
            let report = cmd_score(&config, &ExecOptions { threads, out })?;
            if print {
                print!("{}", report.to_json());
            }
        }
        Command::PrunePoint {
            report,
            mode,
            epsilon,
            aggregate,
            out,
        } => {
            let decision = cmd_prune_point(&report, mode, epsilon, aggregate)?;
            let json = decision_json(&decision);
            match out {
                Some(path) => std::fs::write(&path, json).map_err(|source| CliError::Io { path, source })?,
                None => print!("{json}"),
            }
            eprintln!("{}", prune_summary(&decision));
        }
        Command::Plot { report, out } => cmd_plot(report, out)?,
        Command::Synth {
            out,
            classes,
            n_per_class,
            dim,
            std,
            schedule,
            seed,
        } => {
            let spec = LayerStackSpec {
                num_layers: schedule.len(),
                schedule,
                base: ClusterSpec {
                    n_per_class,
                    d: dim,
                    classes,
                    std,
                    separation: 0.0,
                    seed,
                },
            };
            let manifest = cmd_synth(&spec, &out)?;
            println!("{}", manifest.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
