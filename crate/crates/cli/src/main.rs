//! `cgcut`: design, evaluate and benchmark cluster-randomized spatial
//! experiments from config files.
//!
//! Exit codes: 0 success, 2 config error, 1 runtime error. Every run
//! writes a manifest with the fully resolved configuration next to its
//! outputs; re-running from that manifest reproduces the outputs
//! byte-for-byte.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

mod commands;
mod config;
mod svg;

use config::Config;

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Runtime(String),
}

impl CliError {
    fn config(msg: String) -> Self {
        CliError::Config(msg)
    }

    fn runtime(msg: String) -> Self {
        CliError::Runtime(msg)
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "config error: {m}"),
            CliError::Runtime(m) => write!(f, "runtime error: {m}"),
        }
    }
}

#[derive(Parser)]
#[command(
    name = "cgcut",
    version,
    about = "Cluster-randomized spatial experiment design via causal graph cuts"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Override the config's base seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads (0 = all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Output directory for artifacts and the manifest.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Sweep cluster counts on a graph + covariance and emit the best design.
    Design {
        #[arg(long)]
        config: PathBuf,
    },
    /// Exact MSE breakdown for a graph, clustering and covariance.
    Mse {
        #[arg(long)]
        config: PathBuf,
    },
    /// IS / DR / DR-CF estimates from a recorded batch.
    Estimate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Run the iterative causal-graph-cut loop on a synthetic environment.
    Cgc {
        #[arg(long)]
        config: PathBuf,
    },
    /// Sample batches from a synthetic environment.
    Simulate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Replication benchmark across methods and a parameter sweep.
    Benchmark {
        #[arg(long)]
        config: PathBuf,
        /// Also draw an SVG line chart of the report.
        #[arg(long)]
        svg: bool,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    let (name, config_path, svg_flag) = match &cli.command {
        Command::Design { config } => ("design", config, false),
        Command::Mse { config } => ("mse", config, false),
        Command::Estimate { config } => ("estimate", config, false),
        Command::Cgc { config } => ("cgc", config, false),
        Command::Simulate { config } => ("simulate", config, false),
        Command::Benchmark { config, svg } => ("benchmark", config, *svg),
    };
    let mut cfg = Config::load(config_path)?;
    if let Some(seed) = cli.seed {
        cfg.set("seed", seed);
    }
    if let Some(out) = &cli.out {
        cfg.set("out", out.display());
    }
    cfg.default_key("threads", 0usize);
    if let Some(threads) = cli.threads {
        cfg.set("threads", threads);
    }
    cfg.default_key("out", ".");
    let threads: usize = cfg.parse_value("threads")?;
    if threads > 0 {
        // ignore the error when a pool already exists (tests call run twice)
        let _ = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global();
    }
    if svg_flag {
        cfg.set("svg", true);
    }
    match name {
        "design" => commands::cmd_design(cfg),
        "mse" => commands::cmd_mse(cfg),
        "estimate" => commands::cmd_estimate(cfg),
        "cgc" => commands::cmd_cgc(cfg),
        "simulate" => commands::cmd_simulate(cfg),
        "benchmark" => commands::cmd_benchmark(cfg),
        _ => unreachable!(),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e @ CliError::Config(_)) => {
            eprintln!("{e}");
            ExitCode::from(2)
        }
        Err(e @ CliError::Runtime(_)) => {
            eprintln!("{e}");
            ExitCode::from(1)
        }
    }
}
