//! Overlay construction from the three peer-selection strategies, plus graph queries.

use std::collections::VecDeque;
use std::fmt;
use std::io::Write;

use log::info;

use crate::config::{Config, Strategy};
use crate::error::TopologyError;
use crate::rng::RngStream;

/// 1-based node identifier. Node 1 is the measurement node.
#[derive(Copy, Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(pub u32);

impl NodeId {
    pub const MEASUREMENT: NodeId = NodeId(1);

    pub fn index(self) -> usize {
        self.0 as usize - 1
    }

    pub fn from_index(i: usize) -> Self {
        NodeId(i as u32 + 1)
    }

    pub fn is_measurement(self) -> bool {
        self == NodeId::MEASUREMENT
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

fn check(peers: usize, k: NodeId, nodes: usize) -> Result<(), TopologyError> {
    if k.0 == 0 || k.0 as usize > nodes {
        return Err(TopologyError::BadNode { node: k.0, nodes });
    }
    if peers >= nodes {
        return Err(TopologyError::TooManyPeers { peers, nodes });
    }
    Ok(())
}

/// The `peers` nodes following `k` on the id ring, wrapping from `nodes` back to 1.
pub fn distance_peers(peers: usize, k: NodeId, nodes: usize) -> Result<Vec<NodeId>, TopologyError> {
    check(peers, k, nodes)?;
    let c = nodes as u64;
    Ok((1..=peers as u64)
        .map(|i| NodeId(((k.0 as u64 + i - 1) % c + 1) as u32))
        .collect())
}

/// `peers` distinct nodes drawn uniformly without replacement from every node except `k`.
pub fn random_peers(peers: usize, k: NodeId, nodes: usize, rng: &mut RngStream) -> Result<Vec<NodeId>, TopologyError> {
    check(peers, k, nodes)?;
    let mut candidates: Vec<NodeId> = (1..=nodes as u32).map(NodeId).filter(|&n| n != k).collect();
    // Partial Fisher-Yates: step i picks uniformly among the candidates not chosen yet.
    for i in 0..peers {
        let j = i + rng.index(candidates.len() - i);
        candidates.swap(i, j);
    }
    candidates.truncate(peers);
    Ok(candidates)
}

/// `peers - 1` distance peers followed by one uniform pick among the remaining nodes.
pub fn mixed_peers(peers: usize, k: NodeId, nodes: usize, rng: &mut RngStream) -> Result<Vec<NodeId>, TopologyError> {
    if peers < 2 {
        return Err(TopologyError::MixedNeedsTwo(peers));
    }
    let mut list = distance_peers(peers - 1, k, nodes)?;
    check(peers, k, nodes)?;
    let remaining: Vec<NodeId> = (1..=nodes as u32)
        .map(NodeId)
        .filter(|n| *n != k && !list.contains(n))
        .collect();
    list.push(remaining[rng.index(remaining.len())]);
    Ok(list)
}

pub fn select_peers(
    strategy: Strategy,
    peers: usize,
    k: NodeId,
    nodes: usize,
    rng: &mut RngStream,
) -> Result<Vec<NodeId>, TopologyError> {
    match strategy {
        Strategy::Normal => distance_peers(peers, k, nodes),
        Strategy::Random => random_peers(peers, k, nodes, rng),
        Strategy::Mixed => mixed_peers(peers, k, nodes, rng),
    }
}

/// Per-node outgoing peer lists and the undirected edge union that gossip runs over.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct OverlayGraph {
    out_peers: Vec<Vec<NodeId>>,
    neighbors: Vec<Vec<NodeId>>,
}

impl OverlayGraph {
    /// Builds the graph from outgoing lists; `out_peers[i]` belongs to node `i + 1`.
    pub fn from_out_peers(out_peers: Vec<Vec<NodeId>>) -> Self {
        let n = out_peers.len();
        let mut neighbors = vec![Vec::new(); n];
        for (i, list) in out_peers.iter().enumerate() {
            let k = NodeId::from_index(i);
            for &l in list {
                assert!(l != k, "self loop at node {k}");
                assert!(l.index() < n, "peer {l} outside graph");
                neighbors[i].push(l);
                neighbors[l.index()].push(k);
            }
        }
        for adj in &mut neighbors {
            adj.sort_unstable();
            adj.dedup();
        }
        Self { out_peers, neighbors }
    }

    pub fn node_count(&self) -> usize {
        self.out_peers.len()
    }

    pub fn nodes(&self) -> impl Iterator<Item = NodeId> {
        (0..self.node_count()).map(NodeId::from_index)
    }

    pub fn out_peers(&self, k: NodeId) -> &[NodeId] {
        &self.out_peers[k.index()]
    }

    /// Sorted undirected neighbours of `k`.
    pub fn neighbors(&self, k: NodeId) -> &[NodeId] {
        &self.neighbors[k.index()]
    }

    pub fn degree(&self, k: NodeId) -> usize {
        self.neighbors[k.index()].len()
    }

    /// Directed `(src, dst)` outgoing edges in node order.
    pub fn directed_edges(&self) -> impl Iterator<Item = (NodeId, NodeId)> + '_ {
        self.out_peers
            .iter()
            .enumerate()
            .flat_map(|(i, list)| list.iter().map(move |&l| (NodeId::from_index(i), l)))
    }

    /// BFS hop counts from `from` over the undirected union; `None` marks unreachable nodes.
    pub fn bfs_distances(&self, from: NodeId) -> Vec<Option<u32>> {
        let mut dist = vec![None; self.node_count()];
        dist[from.index()] = Some(0);
        let mut queue = VecDeque::from([from]);
        while let Some(u) = queue.pop_front() {
            let d = dist[u.index()].unwrap();
            for &v in self.neighbors(u) {
                if dist[v.index()].is_none() {
                    dist[v.index()] = Some(d + 1);
                    queue.push_back(v);
                }
            }
        }
        dist
    }

    /// Shortest-path length between `a` and `b`, or `None` if they are disconnected.
    pub fn hop_distance(&self, a: NodeId, b: NodeId) -> Option<u32> {
        self.bfs_distances(a)[b.index()]
    }

    pub fn is_connected(&self) -> bool {
        self.node_count() == 0 || self.bfs_distances(NodeId(1)).iter().all(Option::is_some)
    }

    /// Writes the `src,dst` edge list, one row per directed outgoing edge.
    pub fn write_edge_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["src", "dst"])?;
        for (src, dst) in self.directed_edges() {
            w.write_record([src.to_string(), dst.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

const MAX_DRAWS: usize = 10_000;

/// Applies the configured strategy to every node. Random and mixed draws that
/// leave the undirected graph disconnected are discarded and redrawn.
pub fn build_overlay(config: &Config, rng: &mut RngStream) -> Result<OverlayGraph, TopologyError> {
    let nodes = config.node_count;
    for attempt in 0..MAX_DRAWS {
        let out_peers = (1..=nodes as u32)
            .map(|k| select_peers(config.strategy, config.peer_count, NodeId(k), nodes, rng))
            .collect::<Result<Vec<_>, _>>()?;
        let graph = OverlayGraph::from_out_peers(out_peers);
        if graph.is_connected() {
            return Ok(graph);
        }
        info!(
            "rejected disconnected {} overlay (draw {})",
            config.strategy,
            attempt + 1
        );
    }
    Err(TopologyError::NeverConnected(MAX_DRAWS))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::Strategy;
    use proptest::prelude::*;

    fn ids(v: &[u32]) -> Vec<NodeId> {
        v.iter().copied().map(NodeId).collect()
    }

    #[test]
    fn distance_examples() {
        assert_eq!(distance_peers(3, NodeId(5), 104).unwrap(), ids(&[6, 7, 8]));
        assert_eq!(distance_peers(3, NodeId(103), 104).unwrap(), ids(&[104, 1, 2]));
        assert_eq!(
            distance_peers(8, NodeId(100), 104).unwrap(),
            ids(&[101, 102, 103, 104, 1, 2, 3, 4])
        );
        assert!(matches!(
            distance_peers(104, NodeId(1), 104),
            Err(TopologyError::TooManyPeers { .. })
        ));
    }

    #[test]
    fn random_seeded_draw_is_valid() {
        let mut rng = RngStream::new(42, "topology");
        let peers = random_peers(8, NodeId(1), 104, &mut rng).unwrap();
        assert_eq!(peers.len(), 8);
        let mut sorted = peers.clone();
        sorted.sort();
        sorted.dedup();
        assert_eq!(sorted.len(), 8);
        assert!(peers.iter().all(|p| (2..=104).contains(&p.0)));
    }

    #[test]
    fn random_exhaustion_returns_everyone_else() {
        let mut rng = RngStream::new(1, "topology");
        let mut peers = random_peers(103, NodeId(1), 104, &mut rng).unwrap();
        peers.sort();
        assert_eq!(peers, (2..=104).map(NodeId).collect::<Vec<_>>());
        assert!(random_peers(104, NodeId(1), 104, &mut rng).is_err());
    }

    #[test]
    fn random_single_pick_is_uniform() {
        // Each of the 103 candidates should appear 10000/103 times, within 3 binomial sigmas.
        let mut rng = RngStream::new(5, "uniformity");
        let mut counts = [0u32; 105];
        let trials = 10_000;
        for _ in 0..trials {
            let p = random_peers(1, NodeId(1), 104, &mut rng).unwrap()[0];
            counts[p.0 as usize] += 1;
        }
        let p = 1.0 / 103.0;
        let mean = trials as f64 * p;
        let sigma = (trials as f64 * p * (1.0 - p)).sqrt();
        assert_eq!(counts[0] + counts[1], 0);
        let mut chi2 = 0.0;
        for (id, &c) in counts.iter().enumerate().skip(2) {
            let c = c as f64;
            assert!((c - mean).abs() <= 3.0 * sigma, "id {id}: {c} vs {mean} +- {sigma}");
            chi2 += (c - mean).powi(2) / mean;
        }
        // 1% critical value of chi-square with 102 degrees of freedom.
        use statrs::distribution::{ChiSquared, ContinuousCDF};
        let critical = ChiSquared::new(102.0).unwrap().inverse_cdf(0.99);
        assert!(chi2 < critical, "chi2 {chi2} >= {critical}");
    }

    #[test]
    fn mixed_examples() {
        let mut rng = RngStream::new(3, "mixed");
        let p = mixed_peers(8, NodeId(5), 104, &mut rng).unwrap();
        assert_eq!(&p[..7], &ids(&[6, 7, 8, 9, 10, 11, 12])[..]);
        assert!(!(5..=12).contains(&p[7].0));

        let p = mixed_peers(2, NodeId(1), 104, &mut rng).unwrap();
        assert_eq!(p[0], NodeId(2));
        assert!((3..=104).contains(&p[1].0));
        assert!(matches!(
            mixed_peers(1, NodeId(1), 104, &mut rng),
            Err(TopologyError::MixedNeedsTwo(1))
        ));
    }

    #[test]
    fn mixed_random_member_never_duplicates() {
        let mut rng = RngStream::new(9, "mixed-dup");
        for trial in 0..10_000u32 {
            let k = NodeId(trial % 104 + 1);
            let p = mixed_peers(8, k, 104, &mut rng).unwrap();
            let last = p[7];
            assert!(last != k && !p[..7].contains(&last));
        }
    }

    #[test]
    fn normal_overlay_is_circulant() {
        let config = Config::default();
        let g = build_overlay(&config, &mut RngStream::new(0, "topology")).unwrap();
        for k in g.nodes() {
            assert_eq!(g.degree(k), 16);
        }
        assert!(g.is_connected());
        let g2 = build_overlay(&config, &mut RngStream::new(99, "topology")).unwrap();
        assert_eq!(g, g2, "normal strategy must not consume randomness");
        assert_eq!(g.hop_distance(NodeId(1), NodeId(1)), Some(0));
        assert_eq!(g.hop_distance(NodeId(1), NodeId(2)), Some(1));
        // Ring distance 52 with reach 8 each way.
        assert_eq!(g.hop_distance(NodeId(1), NodeId(53)), Some(7));
    }

    #[test]
    fn disconnected_pair_is_unreachable() {
        let g = OverlayGraph::from_out_peers(vec![ids(&[2]), ids(&[1]), ids(&[4]), ids(&[3])]);
        assert_eq!(g.hop_distance(NodeId(1), NodeId(3)), None);
        assert!(!g.is_connected());
    }

    #[test]
    fn edge_csv_lists_outgoing_edges() {
        let config = Config {
            node_count: 4,
            peer_count: 1,
            ..Config::default()
        };
        let g = build_overlay(&config, &mut RngStream::new(0, "t")).unwrap();
        let mut buf = Vec::new();
        g.write_edge_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "src,dst\n1,2\n2,3\n3,4\n4,1\n");
    }

    proptest! {
        #[test]
        fn peer_lists_are_well_formed(
            seed in any::<u64>(),
            nodes in 4usize..60,
            peers_frac in 0.0f64..1.0,
            strategy in prop_oneof![Just(Strategy::Normal), Just(Strategy::Random), Just(Strategy::Mixed)],
        ) {
            let peers = 2 + ((nodes - 4) as f64 * peers_frac) as usize;
            let mut rng = RngStream::new(seed, "prop");
            for k in 1..=nodes as u32 {
                let list = select_peers(strategy, peers, NodeId(k), nodes, &mut rng).unwrap();
                prop_assert_eq!(list.len(), peers);
                prop_assert!(!list.contains(&NodeId(k)));
                let mut s = list.clone();
                s.sort();
                s.dedup();
                prop_assert_eq!(s.len(), peers);
                if strategy == Strategy::Mixed {
                    let d = distance_peers(peers - 1, NodeId(k), nodes).unwrap();
                    prop_assert_eq!(&list[..peers - 1], &d[..]);
                }
            }
        }
    }
}
