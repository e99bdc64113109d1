//! Per-link message transfer: bandwidth-limited FIFO serialization followed by
//! a per-message propagation delay.

use smallvec::SmallVec;

use crate::config::Config;
use crate::protocol::{BlockId, TxId};
use crate::rng::{sample_exp, RngStream};
use crate::time::SimTime;
use crate::topology::{NodeId, OverlayGraph};

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash)]
pub enum MessageKind {
    Inv,
    GetData,
    TxPayload,
    BlockPayload,
}

impl MessageKind {
    pub fn as_str(self) -> &'static str {
        match self {
            MessageKind::Inv => "inv",
            MessageKind::GetData => "getdata",
            MessageKind::TxPayload => "tx",
            MessageKind::BlockPayload => "block",
        }
    }

    /// Inventory chatter, as opposed to messages carrying a transaction or block.
    pub fn is_control(self) -> bool {
        matches!(self, MessageKind::Inv | MessageKind::GetData)
    }
}

/// An inventory entry.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash)]
pub enum Item {
    Tx(TxId),
    Block(BlockId),
}

impl std::fmt::Display for Item {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Item::Tx(t) => t.fmt(f),
            Item::Block(b) => b.fmt(f),
        }
    }
}

pub type Items = SmallVec<[Item; 2]>;

#[derive(Clone, Debug, PartialEq)]
pub struct Message {
    pub kind: MessageKind,
    /// Announced or requested entries for inv/getdata; the single carried object for payloads.
    pub items: Items,
    pub body_size: u64,
    pub src: NodeId,
    pub dst: NodeId,
    pub send_time: SimTime,
}

/// Seconds needed to push `size` bytes onto a link of `bandwidth` bits per second.
pub fn serialization_delay(size: u64, bandwidth: f64) -> f64 {
    if bandwidth.is_infinite() {
        0.0
    } else {
        8.0 * size as f64 / bandwidth
    }
}

/// One direction of a peer connection. Messages leave the serializer in send order.
#[derive(Clone, Debug)]
pub struct Link {
    pub src: NodeId,
    pub dst: NodeId,
    pub next_free: SimTime,
}

impl Link {
    pub fn new(src: NodeId, dst: NodeId) -> Self {
        Self {
            src,
            dst,
            next_free: SimTime::ZERO,
        }
    }

    /// Queues a transfer taking `serialization` and returns when it finishes serializing.
    pub fn enqueue(&mut self, now: SimTime, serialization: SimTime) -> SimTime {
        let start = now.max(self.next_free);
        self.next_free = start + serialization;
        self.next_free
    }
}

#[derive(Copy, Clone, Debug, PartialEq)]
pub enum LinkDelay {
    /// Exponential propagation delay drawn per message.
    Exponential { mean: f64 },
    /// Data messages take exactly `delay`; inv/getdata are instantaneous.
    PerHop { delay: SimTime },
}

/// Wire sizes of the message types.
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub struct SizeModel {
    pub header: u64,
    pub inv_item: u64,
    pub tx: u64,
    pub block_header: u64,
}

impl SizeModel {
    pub fn from_config(config: &Config) -> Self {
        Self {
            header: config.message_header_size as u64,
            inv_item: config.inv_item_size as u64,
            tx: config.tx_size as u64,
            block_header: config.block_header_size as u64,
        }
    }

    pub fn inventory(&self, items: usize) -> u64 {
        self.header + self.inv_item * items as u64
    }
}

/// All directed links of one run.
pub struct Network {
    neighbors: Vec<Vec<NodeId>>,
    links: Vec<Vec<Link>>,
    bandwidth: f64,
    delay: LinkDelay,
    sizes: SizeModel,
}

impl Network {
    pub fn new(graph: &OverlayGraph, bandwidth: f64, delay: LinkDelay, sizes: SizeModel) -> Self {
        let neighbors: Vec<Vec<NodeId>> = graph.nodes().map(|k| graph.neighbors(k).to_vec()).collect();
        let links = graph
            .nodes()
            .map(|k| graph.neighbors(k).iter().map(|&l| Link::new(k, l)).collect())
            .collect();
        Self {
            neighbors,
            links,
            bandwidth,
            delay,
            sizes,
        }
    }

    pub fn from_config(graph: &OverlayGraph, config: &Config) -> Self {
        let delay = match config.oracle_hop_delay {
            Some(d) => LinkDelay::PerHop {
                delay: SimTime::from_secs_f64(d),
            },
            None => LinkDelay::Exponential {
                mean: config.mean_link_delay,
            },
        };
        Self::new(graph, config.bandwidth, delay, SizeModel::from_config(config))
    }

    pub fn sizes(&self) -> &SizeModel {
        &self.sizes
    }

    pub fn link(&self, src: NodeId, dst: NodeId) -> &Link {
        let pos = self.position(src, dst);
        &self.links[src.index()][pos]
    }

    fn position(&self, src: NodeId, dst: NodeId) -> usize {
        self.neighbors[src.index()]
            .binary_search(&dst)
            .unwrap_or_else(|_| panic!("no link {src} -> {dst}"))
    }

    /// Puts `msg` on its link at `now` and returns its arrival time at `msg.dst`.
    pub fn deliver(&mut self, msg: &Message, now: SimTime, rng: &mut RngStream) -> SimTime {
        let serialization = SimTime::from_secs_f64(serialization_delay(msg.body_size, self.bandwidth));
        let pos = self.position(msg.src, msg.dst);
        let link = &mut self.links[msg.src.index()][pos];
        let serialized = link.enqueue(now, serialization);
        let propagation = match self.delay {
            LinkDelay::Exponential { mean } if mean > 0.0 => SimTime::from_secs_f64(sample_exp(rng, mean)),
            LinkDelay::Exponential { .. } => SimTime::ZERO,
            LinkDelay::PerHop { delay } => {
                if msg.kind.is_control() {
                    SimTime::ZERO
                } else {
                    delay
                }
            }
        };
        serialized + propagation
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use smallvec::smallvec;

    fn pair() -> OverlayGraph {
        OverlayGraph::from_out_peers(vec![vec![NodeId(2)], vec![]])
    }

    fn msg(kind: MessageKind, size: u64) -> Message {
        Message {
            kind,
            items: smallvec![Item::Tx(TxId(0))],
            body_size: size,
            src: NodeId(1),
            dst: NodeId(2),
            send_time: SimTime::ZERO,
        }
    }

    fn sizes() -> SizeModel {
        SizeModel::from_config(&Config::default())
    }

    #[test]
    fn serialization_arithmetic() {
        assert_eq!(serialization_delay(1_250_000, 10e6), 1.0);
        assert!((serialization_delay(500, 10e6) - 0.0004).abs() < 1e-15);
        assert_eq!(serialization_delay(777, 20e6) * 2.0, serialization_delay(777, 10e6));
        assert_eq!(serialization_delay(1_000_000, f64::INFINITY), 0.0);
    }

    #[test]
    fn idle_link_adds_serialization_and_drawn_delay() {
        let mut net = Network::new(&pair(), 10e6, LinkDelay::Exponential { mean: 0.011 }, sizes());
        let now = SimTime::from_secs_f64(3.0);
        let mut rng = RngStream::new(17, "node-1-net");
        let mut oracle = rng.clone();
        let arrival = net.deliver(&msg(MessageKind::TxPayload, 500), now, &mut rng);
        let expected = now + SimTime::from_secs_f64(0.0004) + SimTime::from_secs_f64(sample_exp(&mut oracle, 0.011));
        assert_eq!(arrival, expected);
    }

    #[test]
    fn back_to_back_messages_queue_fifo() {
        let mut net = Network::new(&pair(), 10e6, LinkDelay::Exponential { mean: 0.0 }, sizes());
        let mut rng = RngStream::new(1, "x");
        let now = SimTime::from_secs_f64(1.0);
        let s = SimTime::from_secs_f64(0.1);
        let a = net.deliver(&msg(MessageKind::BlockPayload, 125_000), now, &mut rng);
        let b = net.deliver(&msg(MessageKind::BlockPayload, 125_000), now, &mut rng);
        assert_eq!(a, now + s);
        assert_eq!(b, now + s + s);
        assert_eq!(net.link(NodeId(1), NodeId(2)).next_free, now + s + s);
    }

    #[test]
    fn degenerate_mode_is_instant() {
        let mut net = Network::new(&pair(), f64::INFINITY, LinkDelay::Exponential { mean: 0.0 }, sizes());
        let mut rng = RngStream::new(1, "x");
        let now = SimTime::from_secs_f64(5.0);
        assert_eq!(
            net.deliver(&msg(MessageKind::BlockPayload, 1 << 20), now, &mut rng),
            now
        );
    }

    #[test]
    fn per_hop_mode_charges_only_data() {
        let delay = SimTime::from_secs_f64(1.0);
        let mut net = Network::new(&pair(), f64::INFINITY, LinkDelay::PerHop { delay }, sizes());
        let mut rng = RngStream::new(1, "x");
        assert_eq!(
            net.deliver(&msg(MessageKind::Inv, 85), SimTime::ZERO, &mut rng),
            SimTime::ZERO
        );
        assert_eq!(
            net.deliver(&msg(MessageKind::TxPayload, 500), SimTime::ZERO, &mut rng),
            delay
        );
    }

    #[test]
    fn mean_propagation_matches_config() {
        let mut net = Network::new(&pair(), f64::INFINITY, LinkDelay::Exponential { mean: 0.011 }, sizes());
        let mut rng = RngStream::new(23, "node-1-net");
        let n = 10_000;
        let total: f64 = (0..n)
            .map(|_| {
                net.deliver(&msg(MessageKind::Inv, 85), SimTime::ZERO, &mut rng)
                    .as_secs_f64()
            })
            .sum();
        let mean = total / n as f64;
        assert!((mean - 0.011).abs() / 0.011 < 0.03, "mean {mean}");
    }

    #[test]
    fn serialization_completions_never_overtake() {
        let mut net = Network::new(&pair(), 1e6, LinkDelay::Exponential { mean: 0.011 }, sizes());
        let mut rng = RngStream::new(2, "x");
        let mut last = SimTime::ZERO;
        let mut now = SimTime::ZERO;
        for i in 0..500u64 {
            now += SimTime::from_nanos(i * 37 % 1_000_000);
            net.deliver(&msg(MessageKind::TxPayload, 100 + i), now, &mut rng);
            let done = net.link(NodeId(1), NodeId(2)).next_free;
            assert!(done > last);
            last = done;
        }
        assert_eq!(sizes().inventory(1), 85);
    }
}
