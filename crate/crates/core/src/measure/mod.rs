//! Observation datasets gathered at node 1 and the metrics derived from them.

pub mod stats;

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use crate::config::CONFIRMATION_DEPTH;
use crate::error::SimError;
use crate::net::Item;
use crate::protocol::{BlockId, Ledger, Node, TxId};
use crate::time::SimTime;
use crate::topology::NodeId;
use crate::workload::GenKind;
use crate::world::World;

#[derive(Clone, Debug, PartialEq)]
pub struct GenerationLogRow {
    pub node: NodeId,
    pub kind: GenKind,
    pub id: Item,
    pub t_g: SimTime,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MempoolLogRow {
    pub txid: TxId,
    pub t_a: SimTime,
    pub t_size: u32,
    pub t_fee: u32,
    /// Height of the main-chain block holding the transaction, if any.
    pub b_height: Option<u64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ChainLogRow {
    pub hash: BlockId,
    pub b_size: u64,
    pub b_t: SimTime,
    pub b_height: u64,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum BranchStatus {
    Active,
    ValidFork,
    /// Part of the schema; every block in this model is valid, so it is never produced.
    Invalid,
}

impl BranchStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            BranchStatus::Active => "active",
            BranchStatus::ValidFork => "valid-fork",
            BranchStatus::Invalid => "invalid",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BlockTreeRow {
    pub hash: BlockId,
    pub b_height: u64,
    /// Blocks between this tip and the main chain; zero for main-chain rows.
    pub branchlen: u64,
    pub status: BranchStatus,
}

/// Where a generated transaction stands at the end of the run, as seen by node 1.
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum TxFate {
    /// In the main chain with at least `CONFIRMATION_DEPTH` blocks on top.
    Confirmed,
    /// Still in node 1's mempool.
    Pending,
    /// In the main chain but not yet buried deep enough.
    Shallow,
    /// Known to node 1 only through blocks that lost the race.
    StaleOnly,
    /// Never reached node 1.
    NotArrived,
}

impl TxFate {
    pub fn as_str(self) -> &'static str {
        match self {
            TxFate::Confirmed => "confirmed",
            TxFate::Pending => "pending",
            TxFate::Shallow => "shallow",
            TxFate::StaleOnly => "stale-only",
            TxFate::NotArrived => "not-arrived",
        }
    }

    pub fn is_loss(self) -> bool {
        !matches!(self, TxFate::Confirmed | TxFate::Pending)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TxMetric {
    pub txid: TxId,
    pub origin: NodeId,
    pub t_g: SimTime,
    /// Arrival in node 1's mempool.
    pub t_a: Option<SimTime>,
    pub propagation: Option<SimTime>,
    pub b_height: Option<u64>,
    pub confirmation: Option<SimTime>,
    pub fate: TxFate,
}

/// One side branch in node 1's block tree.
#[derive(Clone, Debug, PartialEq)]
pub struct ForkRecord {
    pub tip: BlockId,
    /// First block of the branch; its parent is on the main chain.
    pub root: BlockId,
    pub height: u64,
    pub branchlen: u64,
    /// Main-chain block at the root's height.
    pub rival: BlockId,
    /// Absolute difference between the generation times of `root` and `rival`.
    pub gap: SimTime,
    /// Share of the branch's transactions also found in the main chain over the
    /// same heights; `None` when the branch holds no transactions.
    pub overlap: Option<f64>,
    pub fork_txs: usize,
}

/// How long one block took to reach the rest of the network.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockPropRow {
    pub hash: BlockId,
    pub height: u64,
    pub miner: NodeId,
    pub b_g: SimTime,
    pub main_chain: bool,
    /// Nodes other than the miner that connected the block.
    pub reached: usize,
    pub p50: Option<SimTime>,
    pub p95: Option<SimTime>,
    pub max: Option<SimTime>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunSummary {
    pub generated_txs: usize,
    pub confirmed_txs: usize,
    pub pending_txs: usize,
    pub lost_txs: usize,
    pub propagation_mean: Option<f64>,
    pub confirmation_mean: Option<f64>,
    pub blocks_mined: usize,
    pub main_height: u64,
    pub fork_count: usize,
    pub overlap_mean: Option<f64>,
    pub overlap_std: Option<f64>,
    pub events: u64,
}

/// Everything one replication writes to its run directory.
#[derive(Clone, Debug, Default)]
pub struct RunData {
    pub generation: Vec<GenerationLogRow>,
    pub mempool: Vec<MempoolLogRow>,
    pub chain: Vec<ChainLogRow>,
    pub tree: Vec<BlockTreeRow>,
    pub metrics: Vec<TxMetric>,
    pub forks: Vec<ForkRecord>,
    pub blocks: Vec<BlockPropRow>,
    pub summary: RunSummary,
}

/// Propagation time: arrival at the measurement node minus generation.
pub fn propagation_time(t_g: SimTime, t_a: SimTime) -> SimTime {
    t_a - t_g
}

/// Confirmation time: generation of the block `CONFIRMATION_DEPTH` above the
/// including one, minus transaction generation.
pub fn confirmation_time(t_g: SimTime, confirming_b_g: SimTime) -> SimTime {
    confirming_b_g - t_g
}

/// `|fork ∩ valid| / |fork|`, or `None` for an empty fork.
pub fn overlap_fraction(fork: &[TxId], valid: &[TxId]) -> Option<f64> {
    if fork.is_empty() {
        return None;
    }
    let mut valid = valid.to_vec();
    valid.sort_unstable();
    let shared = fork.iter().filter(|t| valid.binary_search(t).is_ok()).count();
    Some(shared as f64 / fork.len() as f64)
}

/// Splits node 1's block tree into the main chain (genesis first) and one
/// record per side-branch tip.
pub fn fork_census(node: &Node, ledger: &Ledger) -> (Vec<BlockId>, Vec<ForkRecord>) {
    let mut main = node.tree().main_chain(ledger);
    main.reverse();
    let connected = node.tree().connected();
    let n = ledger.blocks().len();
    let mut on_main = vec![false; n];
    for &b in &main {
        on_main[b.index()] = true;
    }
    let mut has_child = vec![false; n];
    for &b in &connected {
        if let Some(p) = ledger.block(b).prev {
            has_child[p.index()] = true;
        }
    }
    let mut forks = Vec::new();
    for &leaf in &connected {
        if on_main[leaf.index()] || has_child[leaf.index()] {
            continue;
        }
        let mut branch = vec![leaf];
        let mut cur = leaf;
        while let Some(p) = ledger.block(cur).prev {
            if on_main[p.index()] {
                break;
            }
            branch.push(p);
            cur = p;
        }
        let root = cur;
        let height = ledger.block(root).height;
        let rival = main[height as usize];
        let (a, b) = (ledger.block(root).b_g, ledger.block(rival).b_g);
        let gap = if a > b { a - b } else { b - a };
        let fork_txs: Vec<TxId> = branch
            .iter()
            .flat_map(|&x| ledger.block(x).txs.iter().copied())
            .collect();
        let top = ledger.block(leaf).height.min(main.len() as u64 - 1);
        let valid_txs: Vec<TxId> = (height..=top)
            .flat_map(|h| ledger.block(main[h as usize]).txs.iter().copied())
            .collect();
        forks.push(ForkRecord {
            tip: leaf,
            root,
            height,
            branchlen: branch.len() as u64,
            rival,
            gap,
            overlap: overlap_fraction(&fork_txs, &valid_txs),
            fork_txs: fork_txs.len(),
        });
    }
    forks.sort_by_key(|f| (f.height, f.tip));
    (main, forks)
}

/// Derives every dataset from a finished world.
pub fn collect(world: &World) -> RunData {
    let ledger = world.ledger();
    let observer = world.node(NodeId::MEASUREMENT);
    let (main, forks) = fork_census(observer, ledger);
    let tip_height = main.len() as u64 - 1;

    let mut tx_height: Vec<Option<u64>> = vec![None; ledger.txs().len()];
    for (h, &b) in main.iter().enumerate() {
        for &tx in &ledger.block(b).txs {
            tx_height[tx.index()] = Some(h as u64);
        }
    }
    let mut stale = vec![false; ledger.txs().len()];
    for f in &forks {
        let mut cur = f.tip;
        loop {
            for &tx in &ledger.block(cur).txs {
                stale[tx.index()] = true;
            }
            if cur == f.root {
                break;
            }
            cur = ledger.block(cur).prev.expect("branch blocks have parents");
        }
    }

    let metrics: Vec<TxMetric> = ledger
        .txs()
        .iter()
        .map(|tx| {
            let t_a = observer.arrival(tx.id);
            let b_height = tx_height[tx.id.index()];
            let confirmation = b_height
                .map(|h| h + CONFIRMATION_DEPTH)
                .filter(|&h| h <= tip_height)
                .map(|h| confirmation_time(tx.t_g, ledger.block(main[h as usize]).b_g));
            let fate = if confirmation.is_some() {
                TxFate::Confirmed
            } else if b_height.is_some() {
                TxFate::Shallow
            } else if observer.mempool().contains(tx.id) {
                TxFate::Pending
            } else if stale[tx.id.index()] {
                TxFate::StaleOnly
            } else {
                TxFate::NotArrived
            };
            TxMetric {
                txid: tx.id,
                origin: tx.origin,
                t_g: tx.t_g,
                t_a,
                propagation: t_a.map(|t| propagation_time(tx.t_g, t)),
                b_height,
                confirmation,
                fate,
            }
        })
        .collect();

    let mut mempool: Vec<MempoolLogRow> = metrics
        .iter()
        .filter_map(|m| {
            let tx = ledger.tx(m.txid);
            Some(MempoolLogRow {
                txid: m.txid,
                t_a: m.t_a?,
                t_size: tx.size,
                t_fee: tx.fee,
                b_height: m.b_height,
            })
        })
        .collect();
    mempool.sort_by_key(|r| (r.t_a, r.txid));

    let chain: Vec<ChainLogRow> = main
        .iter()
        .map(|&b| {
            let blk = ledger.block(b);
            ChainLogRow {
                hash: b,
                b_size: blk.size,
                b_t: blk.b_g,
                b_height: blk.height,
            }
        })
        .collect();

    let mut tree: Vec<BlockTreeRow> = main
        .iter()
        .map(|&b| BlockTreeRow {
            hash: b,
            b_height: ledger.block(b).height,
            branchlen: 0,
            status: BranchStatus::Active,
        })
        .collect();
    tree.extend(forks.iter().map(|f| BlockTreeRow {
        hash: f.tip,
        b_height: ledger.block(f.tip).height,
        branchlen: f.branchlen,
        status: BranchStatus::ValidFork,
    }));

    let mut on_main = vec![false; ledger.blocks().len()];
    for &b in &main {
        on_main[b.index()] = true;
    }
    let blocks: Vec<BlockPropRow> = ledger
        .blocks()
        .iter()
        .filter_map(|blk| {
            let miner = blk.miner?;
            let mut delays: Vec<SimTime> = world
                .block_arrivals(blk.id)
                .into_iter()
                .enumerate()
                .filter(|&(i, _)| i != miner.index())
                .filter_map(|(_, t)| t.map(|t| t - blk.b_g))
                .collect();
            delays.sort_unstable();
            let rank = |q: f64| {
                let r = (q * delays.len() as f64).ceil() as usize;
                delays.get(r.clamp(1, delays.len().max(1)) - 1).copied()
            };
            Some(BlockPropRow {
                hash: blk.id,
                height: blk.height,
                miner,
                b_g: blk.b_g,
                main_chain: on_main[blk.id.index()],
                reached: delays.len(),
                p50: rank(0.5),
                p95: rank(0.95),
                max: delays.last().copied(),
            })
        })
        .collect();

    let propagation: Vec<f64> = metrics
        .iter()
        .filter_map(|m| m.propagation)
        .map(SimTime::as_secs_f64)
        .collect();
    let confirmation: Vec<f64> = metrics
        .iter()
        .filter_map(|m| m.confirmation)
        .map(SimTime::as_secs_f64)
        .collect();
    let overlaps: Vec<f64> = forks.iter().filter_map(|f| f.overlap).collect();
    let count = |fate: TxFate| metrics.iter().filter(|m| m.fate == fate).count();
    let summary = RunSummary {
        generated_txs: metrics.len(),
        confirmed_txs: count(TxFate::Confirmed),
        pending_txs: count(TxFate::Pending),
        lost_txs: metrics.iter().filter(|m| m.fate.is_loss()).count(),
        propagation_mean: stats::mean(&propagation),
        confirmation_mean: stats::mean(&confirmation),
        blocks_mined: ledger.blocks().len() - 1,
        main_height: tip_height,
        fork_count: forks.len(),
        overlap_mean: stats::mean(&overlaps),
        overlap_std: stats::sample_std(&overlaps),
        events: world.events_processed(),
    };

    RunData {
        generation: world.generation_log().to_vec(),
        mempool,
        chain,
        tree,
        metrics,
        forks,
        blocks,
        summary,
    }
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn write_csv<I>(path: &Path, header: &[&str], rows: I) -> Result<(), SimError>
where
    I: IntoIterator<Item = Vec<String>>,
{
    let file = File::create(path).map_err(|e| SimError::io(path, e))?;
    let mut w = csv::Writer::from_writer(BufWriter::new(file));
    w.write_record(header)?;
    for row in rows {
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| SimError::io(path, e))?;
    Ok(())
}

impl RunSummary {
    pub const HEADER: [&'static str; 12] = [
        "generated_txs",
        "confirmed_txs",
        "pending_txs",
        "lost_txs",
        "propagation_mean",
        "confirmation_mean",
        "blocks_mined",
        "main_height",
        "fork_count",
        "overlap_mean",
        "overlap_std",
        "events",
    ];

    pub fn record(&self) -> Vec<String> {
        vec![
            self.generated_txs.to_string(),
            self.confirmed_txs.to_string(),
            self.pending_txs.to_string(),
            self.lost_txs.to_string(),
            opt(self.propagation_mean),
            opt(self.confirmation_mean),
            self.blocks_mined.to_string(),
            self.main_height.to_string(),
            self.fork_count.to_string(),
            opt(self.overlap_mean),
            opt(self.overlap_std),
            self.events.to_string(),
        ]
    }
}

impl RunData {
    /// Writes every dataset as CSV into `dir`, which must exist.
    pub fn write_to(&self, dir: &Path) -> Result<(), SimError> {
        write_csv(
            &dir.join("generation.csv"),
            &["node", "kind", "id", "t_g"],
            self.generation.iter().map(|r| {
                vec![
                    r.node.to_string(),
                    r.kind.as_str().into(),
                    r.id.to_string(),
                    r.t_g.to_string(),
                ]
            }),
        )?;
        write_csv(
            &dir.join("mempool.csv"),
            &["txid", "t_a", "t_size", "t_fee", "B_height"],
            self.mempool.iter().map(|r| {
                vec![
                    r.txid.to_string(),
                    r.t_a.to_string(),
                    r.t_size.to_string(),
                    r.t_fee.to_string(),
                    opt(r.b_height),
                ]
            }),
        )?;
        write_csv(
            &dir.join("chain.csv"),
            &["hash", "b_size", "b_t", "B_height"],
            self.chain.iter().map(|r| {
                vec![
                    r.hash.to_string(),
                    r.b_size.to_string(),
                    r.b_t.to_string(),
                    r.b_height.to_string(),
                ]
            }),
        )?;
        write_csv(
            &dir.join("blocktree.csv"),
            &["hash", "B_height", "branchlen", "status"],
            self.tree.iter().map(|r| {
                vec![
                    r.hash.to_string(),
                    r.b_height.to_string(),
                    r.branchlen.to_string(),
                    r.status.as_str().into(),
                ]
            }),
        )?;
        write_csv(
            &dir.join("metrics.csv"),
            &[
                "txid",
                "origin",
                "t_g",
                "t_a",
                "propagation",
                "B_height",
                "confirmation",
                "fate",
            ],
            self.metrics.iter().map(|m| {
                vec![
                    m.txid.to_string(),
                    m.origin.to_string(),
                    m.t_g.to_string(),
                    opt(m.t_a),
                    opt(m.propagation),
                    opt(m.b_height),
                    opt(m.confirmation),
                    m.fate.as_str().into(),
                ]
            }),
        )?;
        write_csv(
            &dir.join("losses.csv"),
            &["txid", "t_g", "reason"],
            self.metrics
                .iter()
                .filter(|m| m.fate.is_loss())
                .map(|m| vec![m.txid.to_string(), m.t_g.to_string(), m.fate.as_str().into()]),
        )?;
        write_csv(
            &dir.join("forks.csv"),
            &[
                "tip",
                "root",
                "height",
                "branchlen",
                "rival",
                "gap",
                "overlap",
                "fork_txs",
            ],
            self.forks.iter().map(|f| {
                vec![
                    f.tip.to_string(),
                    f.root.to_string(),
                    f.height.to_string(),
                    f.branchlen.to_string(),
                    f.rival.to_string(),
                    f.gap.to_string(),
                    opt(f.overlap),
                    f.fork_txs.to_string(),
                ]
            }),
        )?;
        write_csv(
            &dir.join("blocks.csv"),
            &[
                "hash",
                "height",
                "miner",
                "b_g",
                "main_chain",
                "reached",
                "p50",
                "p95",
                "max",
            ],
            self.blocks.iter().map(|b| {
                vec![
                    b.hash.to_string(),
                    b.height.to_string(),
                    b.miner.to_string(),
                    b.b_g.to_string(),
                    b.main_chain.to_string(),
                    b.reached.to_string(),
                    opt(b.p50),
                    opt(b.p95),
                    opt(b.max),
                ]
            }),
        )?;
        write_csv(
            &dir.join("run_summary.csv"),
            &RunSummary::HEADER,
            [self.summary.record()],
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overlap_is_relative_to_the_fork() {
        let fork = [TxId(1), TxId(2), TxId(3), TxId(4)];
        let valid = [TxId(2), TxId(3), TxId(4), TxId(9), TxId(10)];
        assert_eq!(overlap_fraction(&fork, &valid), Some(0.75));
        assert_eq!(overlap_fraction(&[], &valid), None);
        assert_eq!(overlap_fraction(&fork, &[]), Some(0.0));
    }

    #[test]
    fn fates_that_count_as_losses() {
        assert!(!TxFate::Confirmed.is_loss());
        assert!(!TxFate::Pending.is_loss());
        assert!(TxFate::Shallow.is_loss());
        assert!(TxFate::StaleOnly.is_loss());
        assert!(TxFate::NotArrived.is_loss());
    }
}
