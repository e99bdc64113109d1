//! The experiment matrix: cells, seeds, run directories and the summary table.

use std::collections::HashSet;
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};

use rayon::prelude::*;

use crate::config::{Config, Strategy};
use crate::error::{ConfigError, SimError};
use crate::measure::{collect, stats, RunSummary};
use crate::rng::RngStream;
use crate::topology::{build_overlay, OverlayGraph};
use crate::world::World;

/// One (strategy, P, λ, replication) coordinate of the matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentCell {
    pub strategy: Strategy,
    pub peers: usize,
    /// Transactions per minute per generating node.
    pub tx_rate: f64,
    /// 1-based.
    pub replication: usize,
}

fn fmix64(mut h: u64) -> u64 {
    h ^= h >> 33;
    h = h.wrapping_mul(0xff51_afd7_ed55_8ccd);
    h ^= h >> 33;
    h = h.wrapping_mul(0xc4ce_b9fe_1a85_ec53);
    h ^= h >> 33;
    h
}

impl ExperimentCell {
    /// Packs the coordinates into one word. Injective while P < 2^14,
    /// r < 2^16 and λ is a multiple of 0.001 below ~4.29e6.
    fn key(&self) -> u64 {
        let strategy = match self.strategy {
            Strategy::Normal => 0u64,
            Strategy::Random => 1,
            Strategy::Mixed => 2,
        };
        let milli = (self.tx_rate * 1000.0).round() as u64;
        strategy | (self.peers as u64 & 0x3fff) << 2 | (self.replication as u64 & 0xffff) << 16 | milli << 32
    }

    /// Seed of this run. For a fixed master seed, distinct cells get distinct seeds:
    /// every step of the mix is a bijection on u64.
    pub fn seed(&self, master_seed: u64) -> u64 {
        fmix64(fmix64(self.key()) ^ master_seed)
    }

    /// `<strategy>/P<P>/lam<λ>/run<r>`
    pub fn relative_dir(&self) -> PathBuf {
        PathBuf::from(self.strategy.as_str())
            .join(format!("P{}", self.peers))
            .join(format!("lam{}", self.tx_rate))
            .join(format!("run{}", self.replication))
    }

    /// Cell `replication` of the single configuration in `config`.
    pub fn from_config(config: &Config, replication: usize) -> Self {
        Self {
            strategy: config.strategy,
            peers: config.peer_count,
            tx_rate: config.tx_rate,
            replication,
        }
    }

    /// The overlay this cell's run will use.
    pub fn topology(&self, base: &Config) -> Result<OverlayGraph, SimError> {
        self.check()?;
        let config = self.config(base);
        config.validate()?;
        let mut rng = RngStream::new(self.seed(base.master_seed), "topology");
        Ok(build_overlay(&config, &mut rng)?)
    }

    pub fn config(&self, base: &Config) -> Config {
        Config {
            strategy: self.strategy,
            peer_count: self.peers,
            tx_rate: self.tx_rate,
            ..base.clone()
        }
    }

    fn check(&self) -> Result<(), ConfigError> {
        let milli = self.tx_rate * 1000.0;
        if self.peers >= 1 << 14 || self.replication == 0 || self.replication >= 1 << 16 {
            return Err(ConfigError::Invalid(format!(
                "cell {self:?} outside the seedable range"
            )));
        }
        if (milli - milli.round()).abs() > 1e-6 || milli.round() >= u32::MAX as f64 {
            return Err(ConfigError::Invalid(format!(
                "tx rate {} must be a multiple of 0.001 for seed derivation",
                self.tx_rate
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Matrix {
    pub strategies: Vec<Strategy>,
    pub peer_counts: Vec<usize>,
    pub tx_rates: Vec<f64>,
    pub replications: usize,
}

impl Matrix {
    /// All three strategies, P in {4, 8}, λ in {3, 6}.
    pub fn standard(replications: usize) -> Self {
        Self {
            strategies: Strategy::ALL.to_vec(),
            peer_counts: vec![4, 8],
            tx_rates: vec![3.0, 6.0],
            replications,
        }
    }

    /// Cells ordered by strategy, P, λ, replication.
    pub fn cells(&self) -> Vec<ExperimentCell> {
        let mut out = Vec::new();
        for &strategy in &self.strategies {
            for &peers in &self.peer_counts {
                for &tx_rate in &self.tx_rates {
                    for replication in 1..=self.replications {
                        out.push(ExperimentCell {
                            strategy,
                            peers,
                            tx_rate,
                            replication,
                        });
                    }
                }
            }
        }
        out
    }
}

#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub cell: ExperimentCell,
    pub dir: PathBuf,
    pub summary: RunSummary,
    /// Per-fork overlap fractions, pooled later across replications.
    pub overlaps: Vec<f64>,
    pub wall_secs: f64,
}

/// Runs one replication and writes its datasets to `out_dir/<cell dir>`.
/// Files appear all at once: they are written to a sibling directory that is
/// renamed into place at the end.
pub fn run_cell(cell: &ExperimentCell, base: &Config, out_dir: &Path, trace: bool) -> Result<RunOutcome, SimError> {
    cell.check()?;
    let config = cell.config(base);
    config.validate()?;
    let seed = cell.seed(base.master_seed);
    let started = std::time::Instant::now();

    let dir = out_dir.join(cell.relative_dir());
    let parent = dir.parent().expect("cell dirs are nested");
    fs::create_dir_all(parent).map_err(|e| SimError::io(parent, e))?;
    let tmp = parent.join(format!(".run{}.partial", cell.replication));
    if tmp.exists() {
        fs::remove_dir_all(&tmp).map_err(|e| SimError::io(&tmp, e))?;
    }
    fs::create_dir(&tmp).map_err(|e| SimError::io(&tmp, e))?;

    let mut world = World::new(config.clone(), seed)?;
    if trace {
        let path = tmp.join("trace.csv");
        let file = File::create(&path).map_err(|e| SimError::io(&path, e))?;
        world.set_trace(Box::new(BufWriter::new(file)))?;
    }
    world.run();
    world.flush_trace()?;
    let data = collect(&world);
    drop(world);
    data.write_to(&tmp)?;

    let path = tmp.join("config.toml");
    let text = format!("# run seed {seed}\n{}", config.to_toml_string());
    fs::write(&path, text).map_err(|e| SimError::io(&path, e))?;

    if dir.exists() {
        fs::remove_dir_all(&dir).map_err(|e| SimError::io(&dir, e))?;
    }
    fs::rename(&tmp, &dir).map_err(|e| SimError::io(&dir, e))?;

    let wall_secs = started.elapsed().as_secs_f64();
    log::info!(
        "{} done in {wall_secs:.1}s: {} events, {} blocks, {} forks",
        cell.relative_dir().display(),
        data.summary.events,
        data.summary.blocks_mined,
        data.summary.fork_count
    );
    Ok(RunOutcome {
        cell: cell.clone(),
        dir,
        overlaps: data.forks.iter().filter_map(|f| f.overlap).collect(),
        summary: data.summary,
        wall_secs,
    })
}

/// Aggregate of all replications of one (strategy, P, λ).
#[derive(Clone, Debug, PartialEq)]
pub struct CellSummary {
    pub strategy: Strategy,
    pub peers: usize,
    pub tx_rate: f64,
    pub replications: usize,
    pub propagation: Option<(f64, f64)>,
    pub confirmation: Option<(f64, f64)>,
    pub forks: Option<(f64, f64)>,
    pub fork_total: usize,
    pub overlap_mean: Option<f64>,
    pub overlap_std: Option<f64>,
}

/// Mean and 95% half-width; a single replication gets a zero-width interval.
fn across(values: &[f64]) -> Option<(f64, f64)> {
    match values.len() {
        0 => None,
        1 => Some((values[0], 0.0)),
        _ => stats::mean_ci(values, 0.95).ok(),
    }
}

impl CellSummary {
    pub fn from_runs(runs: &[RunOutcome]) -> Self {
        let first = &runs[0].cell;
        let prop: Vec<f64> = runs.iter().filter_map(|r| r.summary.propagation_mean).collect();
        let conf: Vec<f64> = runs.iter().filter_map(|r| r.summary.confirmation_mean).collect();
        let forks: Vec<f64> = runs.iter().map(|r| r.summary.fork_count as f64).collect();
        let overlaps: Vec<f64> = runs.iter().flat_map(|r| r.overlaps.iter().copied()).collect();
        Self {
            strategy: first.strategy,
            peers: first.peers,
            tx_rate: first.tx_rate,
            replications: runs.len(),
            propagation: across(&prop),
            confirmation: across(&conf),
            forks: across(&forks),
            fork_total: runs.iter().map(|r| r.summary.fork_count).sum(),
            overlap_mean: stats::mean(&overlaps),
            overlap_std: stats::sample_std(&overlaps),
        }
    }

    pub const HEADER: [&'static str; 14] = [
        "strategy",
        "P",
        "lambda",
        "replications",
        "propagation_mean",
        "propagation_ci",
        "confirmation_mean",
        "confirmation_ci",
        "fork_mean",
        "fork_ci",
        "fork_total",
        "overlap_mean",
        "overlap_std",
        "overlap_forks",
    ];

    fn record(&self, overlap_forks: usize) -> Vec<String> {
        let pair = |v: Option<(f64, f64)>| match v {
            Some((m, h)) => [m.to_string(), h.to_string()],
            None => [String::new(), String::new()],
        };
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        let mut row = vec![
            self.strategy.to_string(),
            self.peers.to_string(),
            self.tx_rate.to_string(),
            self.replications.to_string(),
        ];
        row.extend(pair(self.propagation));
        row.extend(pair(self.confirmation));
        row.extend(pair(self.forks));
        row.push(self.fork_total.to_string());
        row.push(opt(self.overlap_mean));
        row.push(opt(self.overlap_std));
        row.push(overlap_forks.to_string());
        row
    }
}

/// Writes `summary.csv` (one row per cell) via a temporary file and rename.
pub fn write_summary(path: &Path, cells: &[(CellSummary, usize)]) -> Result<(), SimError> {
    let tmp = path.with_extension("csv.partial");
    {
        let file = File::create(&tmp).map_err(|e| SimError::io(&tmp, e))?;
        let mut w = csv::Writer::from_writer(BufWriter::new(file));
        w.write_record(CellSummary::HEADER)?;
        for (cell, overlap_forks) in cells {
            w.write_record(cell.record(*overlap_forks))?;
        }
        w.flush().map_err(|e| SimError::io(&tmp, e))?;
    }
    fs::rename(&tmp, path).map_err(|e| SimError::io(path, e))
}

/// Runs every cell of `matrix` on at most `jobs` threads, then writes `summary.csv`.
/// The first failure stops new runs from starting and is reported together
/// with the number of runs that completed.
pub fn run_matrix(
    matrix: &Matrix,
    base: &Config,
    out_dir: &Path,
    jobs: usize,
    trace: bool,
) -> Result<Vec<CellSummary>, SimError> {
    let cells = matrix.cells();
    for cell in &cells {
        cell.check()?;
        cell.config(base).validate()?;
    }
    let seeds: HashSet<u64> = cells.iter().map(|c| c.seed(base.master_seed)).collect();
    if seeds.len() != cells.len() {
        return Err(ConfigError::Invalid("matrix cells map to colliding seeds".into()).into());
    }
    fs::create_dir_all(out_dir).map_err(|e| SimError::io(out_dir, e))?;

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .expect("thread pool");
    let failed = AtomicBool::new(false);
    let results: Vec<Option<Result<RunOutcome, SimError>>> = pool.install(|| {
        cells
            .par_iter()
            .map(|cell| {
                if failed.load(Ordering::SeqCst) {
                    return None;
                }
                let r = run_cell(cell, base, out_dir, trace);
                if r.is_err() {
                    failed.store(true, Ordering::SeqCst);
                }
                Some(r)
            })
            .collect()
    });

    let mut runs = Vec::new();
    let mut first_error = None;
    for r in results.into_iter().flatten() {
        match r {
            Ok(run) => runs.push(run),
            Err(e) => {
                first_error.get_or_insert(e);
            }
        }
    }
    if let Some(cause) = first_error {
        return Err(SimError::MatrixAborted {
            completed: runs.len(),
            cause: Box::new(cause),
        });
    }

    let summaries: Vec<(CellSummary, usize)> = runs
        .chunks(matrix.replications)
        .map(|group| {
            let n = group.iter().map(|r| r.overlaps.len()).sum();
            (CellSummary::from_runs(group), n)
        })
        .collect();
    write_summary(&out_dir.join("summary.csv"), &summaries)?;
    Ok(summaries.into_iter().map(|(s, _)| s).collect())
}
