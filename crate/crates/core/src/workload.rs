//! Poisson transaction and block generators for nodes 2..C.

use crate::config::Config;
use crate::rng::{sample_exp, RngStream};
use crate::time::SimTime;
use crate::topology::NodeId;

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum GenKind {
    Tx,
    Block,
}

impl GenKind {
    pub fn as_str(self) -> &'static str {
        match self {
            GenKind::Tx => "tx",
            GenKind::Block => "block",
        }
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum Next {
    At(SimTime),
    Done,
}

/// One node's generator of one kind.
#[derive(Clone, Debug)]
pub struct Generator {
    pub node: NodeId,
    pub kind: GenKind,
    /// Mean seconds between generations.
    pub mean_interval: f64,
    /// No generation happens at or after this instant.
    pub horizon: SimTime,
    rng: RngStream,
}

impl Generator {
    /// Panics for the measurement node, which never generates.
    pub fn new(node: NodeId, kind: GenKind, mean_interval: f64, horizon: SimTime, rng: RngStream) -> Self {
        assert!(!node.is_measurement(), "the measurement node does not generate");
        assert!(mean_interval > 0.0);
        Self {
            node,
            kind,
            mean_interval,
            horizon,
            rng,
        }
    }

    /// Draws the next wait; returns the generation instant if it falls before the horizon.
    pub fn next_generation(&mut self, now: SimTime) -> Next {
        let wait = SimTime::from_secs_f64(sample_exp(&mut self.rng, self.mean_interval));
        let at = now + wait;
        if at < self.horizon {
            Next::At(at)
        } else {
            Next::Done
        }
    }
}

/// Per-node mean block interval such that `C - 1` independent generators
/// together produce one block every `block_interval` seconds.
pub fn network_block_rate(config: &Config) -> f64 {
    (config.node_count - 1) as f64 * config.block_interval
}

/// Transaction and block generators for every generating node, each with its own stream.
pub fn generators(config: &Config, seed: u64, horizon: SimTime) -> Vec<Generator> {
    let block_mean = network_block_rate(config);
    (2..=config.node_count as u32)
        .map(NodeId)
        .flat_map(|node| {
            [
                Generator::new(
                    node,
                    GenKind::Tx,
                    config.tx_interval(),
                    horizon,
                    RngStream::new(seed, format!("node-{node}-txgen")),
                ),
                Generator::new(
                    node,
                    GenKind::Block,
                    block_mean,
                    horizon,
                    RngStream::new(seed, format!("node-{node}-blockgen")),
                ),
            ]
        })
        .collect()
}
