use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use overlaysim::experiment::{run_cell, run_matrix, ExperimentCell, Matrix};
use overlaysim::{Config, ConfigError, SimError, Strategy};

#[derive(Parser)]
#[command(name = "overlaysim", version, about = "Bitcoin-like P2P overlay simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the strategy x P x λ matrix with replications and write summary.csv.
    Run(RunArgs),
    /// Run a single replication of the configured cell.
    RunOne(RunOneArgs),
    /// Print the overlay edges (src,dst) a run would use.
    DumpTopology(DumpArgs),
}

#[derive(Args)]
struct ConfigArgs {
    /// TOML file with config keys; flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override any config key, e.g. --set drain_window=600. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
    #[arg(long)]
    nodes: Option<usize>,
    #[arg(long)]
    peers: Option<usize>,
    #[arg(long)]
    strategy: Option<Strategy>,
    #[arg(long)]
    tx_rate_per_min: Option<f64>,
    #[arg(long)]
    block_interval_sec: Option<f64>,
    #[arg(long)]
    mean_link_delay_ms: Option<f64>,
    #[arg(long)]
    bandwidth_mbps: Option<f64>,
    /// Validation delay for both transactions and blocks.
    #[arg(long)]
    validation_ms: Option<f64>,
    #[arg(long)]
    duration_sec: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    replications: Option<usize>,
    /// Zero link delay, unlimited bandwidth and instant validation.
    #[arg(long)]
    oracle_mode: bool,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Comma-separated strategies; defaults to all three.
    #[arg(long, value_delimiter = ',')]
    strategies: Vec<Strategy>,
    /// Comma-separated peer counts; defaults to 4,8.
    #[arg(long, value_delimiter = ',')]
    peer_counts: Vec<usize>,
    /// Comma-separated tx rates per minute; defaults to 3,6.
    #[arg(long, value_delimiter = ',')]
    tx_rates: Vec<f64>,
    /// Simultaneous runs.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
    /// Also write every message send/receive to trace.csv per run.
    #[arg(long)]
    trace: bool,
}

#[derive(Args)]
struct RunOneArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Replication index, 1-based.
    #[arg(long, default_value_t = 1)]
    replication: usize,
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
    #[arg(long)]
    trace: bool,
}

#[derive(Args)]
struct DumpArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long, default_value_t = 1)]
    replication: usize,
    /// Output file; stdout if omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl ConfigArgs {
    fn build(&self) -> Result<Config, ConfigError> {
        let mut config = match &self.config {
            Some(path) => Config::from_file(path)?,
            None => Config::default(),
        };
        for kv in &self.sets {
            let (key, value) = kv.split_once('=').ok_or_else(|| ConfigError::BadValue {
                key: kv.clone(),
                message: "expected KEY=VALUE".into(),
            })?;
            config.set(key.trim(), value.trim())?;
        }
        if let Some(v) = self.nodes {
            config.node_count = v;
        }
        if let Some(v) = self.peers {
            config.peer_count = v;
        }
        if let Some(v) = self.strategy {
            config.strategy = v;
        }
        if let Some(v) = self.tx_rate_per_min {
            config.tx_rate = v;
        }
        if let Some(v) = self.block_interval_sec {
            config.block_interval = v;
        }
        if let Some(v) = self.mean_link_delay_ms {
            config.mean_link_delay = v / 1000.0;
        }
        if let Some(v) = self.bandwidth_mbps {
            config.bandwidth = v * 1e6;
        }
        if let Some(v) = self.validation_ms {
            config.tx_validation_delay = v / 1000.0;
            config.block_validation_delay = v / 1000.0;
        }
        if let Some(v) = self.duration_sec {
            config.duration = v;
        }
        if let Some(v) = self.seed {
            config.master_seed = v;
        }
        if let Some(v) = self.replications {
            config.replications = v;
        }
        if self.oracle_mode {
            config.make_degenerate();
        }
        config.validate()?;
        Ok(config)
    }
}

fn run(args: RunArgs) -> Result<(), SimError> {
    let base = args.config.build()?;
    let standard = Matrix::standard(base.replications);
    let matrix = Matrix {
        strategies: if args.strategies.is_empty() {
            standard.strategies
        } else {
            args.strategies
        },
        peer_counts: if args.peer_counts.is_empty() {
            standard.peer_counts
        } else {
            args.peer_counts
        },
        tx_rates: if args.tx_rates.is_empty() {
            standard.tx_rates
        } else {
            args.tx_rates
        },
        replications: base.replications,
    };
    let summaries = run_matrix(&matrix, &base, &args.out_dir, args.jobs, args.trace)?;
    let fmt = |v: Option<(f64, f64)>| match v {
        Some((m, h)) => format!("{m:.3} ± {h:.3}"),
        None => "n/a".into(),
    };
    for s in &summaries {
        println!(
            "{:<6} P={:<2} lam={:<4} propagation {} s, confirmation {} s, forks {}",
            s.strategy,
            s.peers,
            s.tx_rate,
            fmt(s.propagation),
            fmt(s.confirmation),
            fmt(s.forks)
        );
    }
    println!("summary: {}", args.out_dir.join("summary.csv").display());
    Ok(())
}

fn run_one(args: RunOneArgs) -> Result<(), SimError> {
    let base = args.config.build()?;
    let cell = ExperimentCell::from_config(&base, args.replication);
    let outcome = run_cell(&cell, &base, &args.out_dir, args.trace)?;
    let s = &outcome.summary;
    let opt = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_else(|| "n/a".into());
    println!("dir: {}", outcome.dir.display());
    println!("generated_txs: {}", s.generated_txs);
    println!("confirmed_txs: {}", s.confirmed_txs);
    println!("pending_txs: {}", s.pending_txs);
    println!("lost_txs: {}", s.lost_txs);
    println!("propagation_mean: {}", opt(s.propagation_mean));
    println!("confirmation_mean: {}", opt(s.confirmation_mean));
    println!("blocks_mined: {}", s.blocks_mined);
    println!("main_height: {}", s.main_height);
    println!("fork_count: {}", s.fork_count);
    println!("events: {}", s.events);
    println!("wall_secs: {:.2}", outcome.wall_secs);
    Ok(())
}

fn dump_topology(args: DumpArgs) -> Result<(), SimError> {
    let base = args.config.build()?;
    let graph = ExperimentCell::from_config(&base, args.replication).topology(&base)?;
    match &args.out {
        Some(path) => write_edges(&graph, path),
        None => {
            graph.write_edge_csv(io::stdout().lock())?;
            Ok(())
        }
    }
}

fn write_edges(graph: &overlaysim::OverlayGraph, path: &Path) -> Result<(), SimError> {
    let io_err = |source| SimError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut out = BufWriter::new(File::create(path).map_err(io_err)?);
    graph.write_edge_csv(&mut out)?;
    out.flush().map_err(io_err)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(args) => run(args),
        Command::RunOne(args) => run_one(args),
        Command::DumpTopology(args) => dump_topology(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e}");
            if e.is_config_error() {
                ExitCode::from(2)
            } else {
                ExitCode::from(3)
            }
        }
    }
}
