use smallvec::smallvec;

use crate::config::Config;
use crate::net::{Item, Items, MessageKind};
use crate::protocol::tree::chain_from;
use crate::protocol::{BlockId, BlockState, BlockTree, Ledger, Mempool, TxId};
use crate::time::SimTime;
use crate::topology::NodeId;

const REQUESTED: u8 = 1;
const VALIDATING: u8 = 1 << 1;
/// Member of at least one block this node has connected.
const IN_TREE: u8 = 1 << 2;
/// Member of a block on this node's current main chain.
const IN_CHAIN: u8 = 1 << 3;

const NO_ARRIVAL: SimTime = SimTime::MAX;

#[derive(Copy, Clone, Debug, PartialEq)]
pub struct NodeParams {
    pub tx_validation: SimTime,
    pub block_validation: SimTime,
    pub block_capacity: usize,
}

impl NodeParams {
    pub fn from_config(config: &Config) -> Self {
        Self {
            tx_validation: SimTime::from_secs_f64(config.tx_validation_delay),
            block_validation: SimTime::from_secs_f64(config.block_validation_delay),
            block_capacity: config.block_capacity,
        }
    }
}

/// Side effects requested by a handler, carried out by the caller.
#[derive(Clone, Debug, PartialEq)]
pub enum Output {
    Send {
        to: NodeId,
        kind: MessageKind,
        items: Items,
    },
    /// Deliver a `ValidationDone` for `item` to this node at `at`.
    ValidationDone {
        at: SimTime,
        item: Item,
        from: Option<NodeId>,
    },
    /// `tx` entered the mempool with local arrival time `t_a`.
    MempoolAdded {
        tx: TxId,
        t_a: SimTime,
    },
    BlockConnected {
        block: BlockId,
    },
    TipChanged {
        old: BlockId,
        new: BlockId,
    },
}

/// One full node.
#[derive(Clone, Debug)]
pub struct Node {
    id: NodeId,
    peers: Vec<NodeId>,
    params: NodeParams,
    tx_flags: Vec<u8>,
    /// First local mempool arrival per transaction.
    tx_arrival: Vec<SimTime>,
    mempool: Mempool,
    tree: BlockTree,
    /// When the single validation server becomes idle.
    validation_free: SimTime,
}

impl Node {
    pub fn new(id: NodeId, peers: Vec<NodeId>, params: NodeParams) -> Self {
        Self {
            id,
            peers,
            params,
            tx_flags: Vec::new(),
            tx_arrival: Vec::new(),
            mempool: Mempool::new(),
            tree: BlockTree::new(),
            validation_free: SimTime::ZERO,
        }
    }

    pub fn id(&self) -> NodeId {
        self.id
    }

    pub fn peers(&self) -> &[NodeId] {
        &self.peers
    }

    pub fn mempool(&self) -> &Mempool {
        &self.mempool
    }

    pub fn tree(&self) -> &BlockTree {
        &self.tree
    }

    pub fn tip(&self) -> BlockId {
        self.tree.tip()
    }

    /// Local mempool arrival time of `tx`, if it ever entered this node's mempool.
    pub fn arrival(&self, tx: TxId) -> Option<SimTime> {
        self.tx_arrival.get(tx.index()).copied().filter(|&t| t != NO_ARRIVAL)
    }

    pub fn in_main_chain(&self, tx: TxId) -> bool {
        self.flags(tx) & IN_CHAIN != 0
    }

    /// True while a getdata for `item` is unanswered.
    pub fn is_requested(&self, item: Item) -> bool {
        match item {
            Item::Tx(tx) => self.flags(tx) & REQUESTED != 0,
            Item::Block(b) => self.tree.state(b) == BlockState::Requested,
        }
    }

    fn flags(&self, tx: TxId) -> u8 {
        self.tx_flags.get(tx.index()).copied().unwrap_or(0)
    }

    fn flags_mut(&mut self, tx: TxId) -> &mut u8 {
        if self.tx_flags.len() <= tx.index() {
            self.tx_flags.resize(tx.index() + 1, 0);
        }
        &mut self.tx_flags[tx.index()]
    }

    fn set_arrival(&mut self, tx: TxId, t_a: SimTime) {
        if self.tx_arrival.len() <= tx.index() {
            self.tx_arrival.resize(tx.index() + 1, NO_ARRIVAL);
        }
        if self.tx_arrival[tx.index()] == NO_ARRIVAL {
            self.tx_arrival[tx.index()] = t_a;
        }
    }

    /// Queues `item` on the validation server and returns when it completes.
    fn validate(&mut self, item: Item, from: Option<NodeId>, now: SimTime, out: &mut Vec<Output>) {
        let cost = match item {
            Item::Tx(_) => self.params.tx_validation,
            Item::Block(_) => self.params.block_validation,
        };
        let done = now.max(self.validation_free) + cost;
        self.validation_free = done;
        out.push(Output::ValidationDone { at: done, item, from });
    }

    fn announce(&self, item: Item, except: Option<NodeId>, out: &mut Vec<Output>) {
        for &peer in &self.peers {
            if Some(peer) != except {
                out.push(Output::Send {
                    to: peer,
                    kind: MessageKind::Inv,
                    items: smallvec![item],
                });
            }
        }
    }

    fn tx_is_held(&self, tx: TxId) -> bool {
        self.flags(tx) & (VALIDATING | IN_CHAIN) != 0 || self.mempool.contains(tx)
    }

    /// A transaction created at this node enters validation; duplicates are ignored.
    pub fn on_local_tx(&mut self, tx: TxId, now: SimTime, out: &mut Vec<Output>) {
        if self.tx_is_held(tx) {
            return;
        }
        *self.flags_mut(tx) |= VALIDATING;
        self.validate(Item::Tx(tx), None, now, out);
    }

    /// Requests every announced item that is neither held, in the block tree, nor already requested.
    pub fn on_inv(&mut self, from: NodeId, items: &[Item], out: &mut Vec<Output>) {
        let mut wanted = Items::new();
        for &item in items {
            match item {
                Item::Tx(tx) => {
                    if self.flags(tx) & (REQUESTED | VALIDATING | IN_TREE) == 0 && !self.mempool.contains(tx) {
                        *self.flags_mut(tx) |= REQUESTED;
                        wanted.push(item);
                    }
                }
                Item::Block(b) => {
                    if self.tree.state(b) == BlockState::Unknown {
                        self.tree.set_state(b, BlockState::Requested);
                        wanted.push(item);
                    }
                }
            }
        }
        if !wanted.is_empty() {
            out.push(Output::Send {
                to: from,
                kind: MessageKind::GetData,
                items: wanted,
            });
        }
    }

    /// Sends one payload per requested item still held; anything else is dropped.
    pub fn on_getdata(&mut self, from: NodeId, items: &[Item], out: &mut Vec<Output>) {
        for &item in items {
            let kind = match item {
                Item::Tx(tx) if self.mempool.contains(tx) => MessageKind::TxPayload,
                Item::Block(b) if self.tree.contains(b) => MessageKind::BlockPayload,
                _ => continue,
            };
            out.push(Output::Send {
                to: from,
                kind,
                items: smallvec![item],
            });
        }
    }

    pub fn on_tx(&mut self, from: NodeId, tx: TxId, now: SimTime, out: &mut Vec<Output>) {
        *self.flags_mut(tx) &= !REQUESTED;
        if self.tx_is_held(tx) {
            return;
        }
        *self.flags_mut(tx) |= VALIDATING;
        self.validate(Item::Tx(tx), Some(from), now, out);
    }

    pub fn on_block(&mut self, from: NodeId, block: BlockId, now: SimTime, out: &mut Vec<Output>) {
        match self.tree.state(block) {
            BlockState::Unknown | BlockState::Requested => {
                self.tree.set_state(block, BlockState::Validating);
                self.validate(Item::Block(block), Some(from), now, out);
            }
            _ => {}
        }
    }

    pub fn on_validation_done(
        &mut self,
        item: Item,
        from: Option<NodeId>,
        now: SimTime,
        ledger: &Ledger,
        out: &mut Vec<Output>,
    ) {
        match item {
            Item::Tx(tx) => {
                *self.flags_mut(tx) &= !VALIDATING;
                if self.flags(tx) & IN_CHAIN != 0 || self.mempool.contains(tx) {
                    return;
                }
                self.mempool.insert(tx, now);
                self.set_arrival(tx, now);
                out.push(Output::MempoolAdded { tx, t_a: now });
                self.announce(item, from, out);
            }
            Item::Block(block) => self.accept_block(block, from, now, ledger, out),
        }
    }

    /// Builds a block on the current tip from the oldest mempool entries, applies
    /// it locally without validation delay and announces it.
    pub fn assemble_block(&mut self, now: SimTime, ledger: &mut Ledger, out: &mut Vec<Output>) -> BlockId {
        let txs = self.mempool.oldest(self.params.block_capacity);
        let block = ledger.add_block(self.tree.tip(), self.id, now, txs);
        self.accept_block(block, None, now, ledger, out);
        block
    }

    fn accept_block(
        &mut self,
        block: BlockId,
        from: Option<NodeId>,
        now: SimTime,
        ledger: &Ledger,
        out: &mut Vec<Output>,
    ) {
        let connected = self.tree.insert(block, from, now, ledger);
        if connected.is_empty() {
            return;
        }
        let old_tip = self.tree.tip();
        let mut best = old_tip;
        for &(b, sender) in &connected {
            for &tx in &ledger.block(b).txs {
                *self.flags_mut(tx) |= IN_TREE;
            }
            if ledger.block(b).height > ledger.block(best).height {
                best = b;
            }
            out.push(Output::BlockConnected { block: b });
            self.announce(Item::Block(b), sender, out);
        }
        if best != old_tip {
            self.on_reorg(old_tip, best, now, ledger, out);
        }
    }

    /// Moves the main chain from `old_tip` to `new_tip`. Transactions only in the
    /// abandoned blocks go back to the mempool with their original arrival time;
    /// transactions in the adopted blocks leave it.
    pub fn on_reorg(
        &mut self,
        old_tip: BlockId,
        new_tip: BlockId,
        now: SimTime,
        ledger: &Ledger,
        out: &mut Vec<Output>,
    ) {
        let (abandoned, adopted) = branch_diff(old_tip, new_tip, ledger);
        for &b in &abandoned {
            for &tx in &ledger.block(b).txs {
                *self.flags_mut(tx) &= !IN_CHAIN;
            }
        }
        for &b in adopted.iter().rev() {
            for &tx in &ledger.block(b).txs {
                *self.flags_mut(tx) |= IN_CHAIN;
                self.mempool.remove(tx);
            }
        }
        for &b in &abandoned {
            for &tx in &ledger.block(b).txs {
                if self.flags(tx) & IN_CHAIN == 0 {
                    let t_a = self.arrival(tx).unwrap_or(now);
                    if self.mempool.insert(tx, t_a) {
                        self.set_arrival(tx, t_a);
                        out.push(Output::MempoolAdded { tx, t_a });
                    }
                }
            }
        }
        self.tree.set_tip(new_tip);
        out.push(Output::TipChanged {
            old: old_tip,
            new: new_tip,
        });
    }
}

/// Blocks on `old`'s branch and on `new`'s branch above their common ancestor, tips first.
fn branch_diff(old: BlockId, new: BlockId, ledger: &Ledger) -> (Vec<BlockId>, Vec<BlockId>) {
    let old_chain = chain_from(old, ledger);
    let new_chain = chain_from(new, ledger);
    // Chains are tip-first; align them from the genesis end.
    let common = old_chain
        .iter()
        .rev()
        .zip(new_chain.iter().rev())
        .take_while(|(a, b)| a == b)
        .count();
    (
        old_chain[..old_chain.len() - common].to_vec(),
        new_chain[..new_chain.len() - common].to_vec(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn secs(s: f64) -> SimTime {
        SimTime::from_secs_f64(s)
    }

    fn params(validation: f64) -> NodeParams {
        NodeParams {
            tx_validation: secs(validation),
            block_validation: secs(validation),
            block_capacity: 3,
        }
    }

    fn node(validation: f64) -> Node {
        Node::new(NodeId(1), vec![NodeId(2), NodeId(3), NodeId(4)], params(validation))
    }

    fn sends(out: &[Output]) -> Vec<(NodeId, MessageKind, Vec<Item>)> {
        out.iter()
            .filter_map(|o| match o {
                Output::Send { to, kind, items } => Some((*to, *kind, items.to_vec())),
                _ => None,
            })
            .collect()
    }

    /// Runs every pending validation to completion, in order, removing the
    /// `ValidationDone` requests from `out`.
    fn settle(n: &mut Node, ledger: &Ledger, out: &mut Vec<Output>) {
        let mut i = 0;
        while i < out.len() {
            if let Output::ValidationDone { at, item, from } = out[i].clone() {
                out.remove(i);
                n.on_validation_done(item, from, at, ledger, out);
            } else {
                i += 1;
            }
        }
    }

    fn ledger_with_txs(n: u32) -> Ledger {
        let mut l = Ledger::new(80);
        for _ in 0..n {
            l.add_tx(NodeId(2), SimTime::ZERO, 500, 1);
        }
        l
    }

    #[test]
    fn local_tx_validates_then_announces_to_all() {
        let ledger = ledger_with_txs(1);
        let mut n = node(0.080);
        let mut out = Vec::new();
        n.on_local_tx(TxId(0), SimTime::ZERO, &mut out);
        assert_eq!(
            out,
            vec![Output::ValidationDone {
                at: secs(0.080),
                item: Item::Tx(TxId(0)),
                from: None
            }]
        );
        settle(&mut n, &ledger, &mut out);
        assert_eq!(n.arrival(TxId(0)), Some(secs(0.080)));
        assert_eq!(sends(&out).len(), 3);

        let mut again = Vec::new();
        n.on_local_tx(TxId(0), secs(1.0), &mut again);
        assert!(again.is_empty());
    }

    #[test]
    fn zero_validation_keeps_generation_time() {
        let ledger = ledger_with_txs(1);
        let mut n = node(0.0);
        let mut out = Vec::new();
        n.on_local_tx(TxId(0), secs(4.5), &mut out);
        settle(&mut n, &ledger, &mut out);
        assert_eq!(n.arrival(TxId(0)), Some(secs(4.5)));
    }

    #[test]
    fn validation_server_is_fifo() {
        let mut n = node(0.080);
        let mut out = Vec::new();
        n.on_tx(NodeId(2), TxId(0), SimTime::ZERO, &mut out);
        n.on_tx(NodeId(2), TxId(1), SimTime::ZERO, &mut out);
        n.on_tx(NodeId(2), TxId(2), secs(1.0), &mut out);
        let times: Vec<_> = out
            .iter()
            .map(|o| match o {
                Output::ValidationDone { at, .. } => *at,
                _ => unreachable!(),
            })
            .collect();
        assert_eq!(times, vec![secs(0.080), secs(0.160), secs(1.080)]);
    }

    #[test]
    fn inv_requests_only_unknown_items_once() {
        let ledger = ledger_with_txs(3);
        let mut n = node(0.0);
        let mut out = Vec::new();
        n.on_local_tx(TxId(0), SimTime::ZERO, &mut out);
        settle(&mut n, &ledger, &mut out);

        let mut out = Vec::new();
        n.on_inv(NodeId(2), &[Item::Tx(TxId(0)), Item::Tx(TxId(1))], &mut out);
        assert_eq!(
            sends(&out),
            vec![(NodeId(2), MessageKind::GetData, vec![Item::Tx(TxId(1))])]
        );

        let mut out = Vec::new();
        n.on_inv(NodeId(3), &[Item::Tx(TxId(1))], &mut out);
        n.on_inv(NodeId(3), &[Item::Tx(TxId(0))], &mut out);
        assert!(out.is_empty(), "in-flight and held items are not requested");

        let mut out = Vec::new();
        n.on_inv(NodeId(3), &[Item::Tx(TxId(2)), Item::Block(BlockId(5))], &mut out);
        assert_eq!(
            sends(&out),
            vec![(
                NodeId(3),
                MessageKind::GetData,
                vec![Item::Tx(TxId(2)), Item::Block(BlockId(5))]
            )]
        );
    }

    #[test]
    fn getdata_serves_held_items_only() {
        let ledger = ledger_with_txs(4);
        let mut n = node(0.0);
        let mut out = Vec::new();
        for t in 0..3 {
            n.on_local_tx(TxId(t), SimTime::ZERO, &mut out);
        }
        settle(&mut n, &ledger, &mut out);

        let mut out = Vec::new();
        n.on_getdata(NodeId(4), &[Item::Tx(TxId(0))], &mut out);
        assert_eq!(
            sends(&out),
            vec![(NodeId(4), MessageKind::TxPayload, vec![Item::Tx(TxId(0))])]
        );

        let mut out = Vec::new();
        n.on_getdata(NodeId(4), &[Item::Tx(TxId(3)), Item::Block(BlockId(9))], &mut out);
        assert!(out.is_empty());

        let mut out = Vec::new();
        n.on_getdata(
            NodeId(4),
            &[Item::Tx(TxId(0)), Item::Tx(TxId(1)), Item::Tx(TxId(2))],
            &mut out,
        );
        let kinds: Vec<_> = sends(&out).into_iter().map(|s| s.2[0]).collect();
        assert_eq!(kinds, vec![Item::Tx(TxId(0)), Item::Tx(TxId(1)), Item::Tx(TxId(2))]);
    }

    #[test]
    fn relayed_tx_fans_out_to_all_but_sender() {
        let ledger = ledger_with_txs(1);
        let mut n = node(0.080);
        let mut out = Vec::new();
        n.on_inv(NodeId(3), &[Item::Tx(TxId(0))], &mut out);
        n.on_tx(NodeId(3), TxId(0), secs(1.0), &mut out);
        settle(&mut n, &ledger, &mut out);
        assert_eq!(n.mempool().len(), 1);
        let invs: Vec<_> = sends(&out)
            .into_iter()
            .filter(|s| s.1 == MessageKind::Inv)
            .map(|s| s.0)
            .collect();
        assert_eq!(invs, vec![NodeId(2), NodeId(4)]);

        let mut out = Vec::new();
        n.on_tx(NodeId(2), TxId(0), secs(2.0), &mut out);
        assert!(out.is_empty(), "seen transaction is dropped");
    }

    #[test]
    fn confirmed_tx_is_not_readmitted() {
        let mut ledger = ledger_with_txs(1);
        let mut miner = node(0.0);
        let mut out = Vec::new();
        miner.on_local_tx(TxId(0), SimTime::ZERO, &mut out);
        settle(&mut miner, &ledger, &mut out);
        miner.assemble_block(secs(1.0), &mut ledger, &mut out);
        assert!(miner.in_main_chain(TxId(0)));
        assert!(miner.mempool().is_empty());

        let mut out = Vec::new();
        miner.on_tx(NodeId(2), TxId(0), secs(2.0), &mut out);
        assert!(out.is_empty());
        assert!(miner.mempool().is_empty());
    }

    #[test]
    fn assembly_takes_oldest_and_handles_empty() {
        let mut ledger = ledger_with_txs(5);
        let mut n = node(0.0);
        let mut out = Vec::new();
        let empty = n.assemble_block(SimTime::ZERO, &mut ledger, &mut out);
        assert!(ledger.block(empty).txs.is_empty());
        assert_eq!(ledger.block(empty).size, 80);

        for (i, t) in [3, 1, 4, 0, 2].into_iter().enumerate() {
            n.on_local_tx(TxId(t), secs(i as f64 + 1.0), &mut out);
        }
        settle(&mut n, &ledger, &mut out);
        let b = n.assemble_block(secs(10.0), &mut ledger, &mut out);
        assert_eq!(ledger.block(b).txs, vec![TxId(3), TxId(1), TxId(4)]);
        assert_eq!(ledger.block(b).height, 2);
        assert_eq!(ledger.block(b).size, 80 + 3 * 500);
        assert_eq!(n.mempool().oldest(10), vec![TxId(0), TxId(2)]);
    }

    #[test]
    fn competing_block_keeps_first_received_then_switches_on_longer() {
        let mut ledger = ledger_with_txs(5);
        let parent = BlockId::GENESIS;
        let ids = |v: &[u32]| v.iter().copied().map(TxId).collect::<Vec<_>>();
        let winner = ledger.add_block(parent, NodeId(2), secs(100.0), ids(&[0, 1, 2, 3]));
        let loser = ledger.add_block(parent, NodeId(3), secs(101.0), ids(&[0, 1, 2, 4]));

        let mut n = node(0.0);
        let mut out = Vec::new();
        for t in 0..5 {
            n.on_local_tx(TxId(t), SimTime::ZERO, &mut out);
        }
        settle(&mut n, &ledger, &mut out);

        n.on_block(NodeId(2), winner, secs(100.0), &mut out);
        settle(&mut n, &ledger, &mut out);
        assert_eq!(n.tip(), winner);
        assert_eq!(n.mempool().oldest(10), ids(&[4]));

        n.on_block(NodeId(3), loser, secs(112.0), &mut out);
        settle(&mut n, &ledger, &mut out);
        assert_eq!(n.tip(), winner, "first-received wins the tie");
        assert_eq!(n.mempool().oldest(10), ids(&[4]));

        let extension = ledger.add_block(loser, NodeId(3), secs(200.0), vec![]);
        n.on_block(NodeId(3), extension, secs(200.0), &mut out);
        settle(&mut n, &ledger, &mut out);
        assert_eq!(n.tip(), extension);
        // tx3 was only in the abandoned block and returns with its original arrival.
        assert_eq!(n.mempool().oldest(10), ids(&[3]));
        assert_eq!(n.mempool().iter().next().unwrap().0, SimTime::ZERO);
        assert!(!n.mempool().contains(TxId(4)));
    }

    #[test]
    fn identical_competitor_leaves_mempool_unchanged() {
        let mut ledger = ledger_with_txs(2);
        let ids = vec![TxId(0), TxId(1)];
        let a = ledger.add_block(BlockId::GENESIS, NodeId(2), secs(1.0), ids.clone());
        let b = ledger.add_block(BlockId::GENESIS, NodeId(3), secs(1.0), ids);
        let b2 = ledger.add_block(b, NodeId(3), secs(2.0), vec![]);
        let mut n = node(0.0);
        let mut out = Vec::new();
        for blk in [a, b, b2] {
            n.on_block(NodeId(2), blk, secs(3.0), &mut out);
        }
        settle(&mut n, &ledger, &mut out);
        assert_eq!(n.tip(), b2);
        assert!(n.mempool().is_empty());
        assert!(n.in_main_chain(TxId(0)) && n.in_main_chain(TxId(1)));
    }

    #[test]
    fn abandoning_two_blocks_returns_both_sets() {
        let mut ledger = ledger_with_txs(4);
        let a1 = ledger.add_block(BlockId::GENESIS, NodeId(2), secs(1.0), vec![TxId(0)]);
        let a2 = ledger.add_block(a1, NodeId(2), secs(2.0), vec![TxId(1)]);
        let b1 = ledger.add_block(BlockId::GENESIS, NodeId(3), secs(1.0), vec![TxId(2)]);
        let b2 = ledger.add_block(b1, NodeId(3), secs(2.0), vec![]);
        let b3 = ledger.add_block(b2, NodeId(3), secs(3.0), vec![TxId(3)]);
        let mut n = node(0.0);
        let mut out = Vec::new();
        for blk in [a1, a2, b1, b2, b3] {
            n.on_block(NodeId(2), blk, secs(5.0), &mut out);
        }
        settle(&mut n, &ledger, &mut out);
        assert_eq!(n.tip(), b3);
        let mut back = n.mempool().oldest(10);
        back.sort();
        assert_eq!(back, vec![TxId(0), TxId(1)]);
    }

    #[test]
    fn incremental_tip_matches_select_tip() {
        let mut ledger = ledger_with_txs(0);
        let mut n = node(0.0);
        let mut out = Vec::new();
        let mut blocks = vec![BlockId::GENESIS];
        // A bushy tree delivered in a scrambled order.
        let parents = [0usize, 0, 1, 2, 1, 3, 5, 4, 6, 6];
        for (i, &p) in parents.iter().enumerate() {
            let b = ledger.add_block(blocks[p], NodeId(2), secs(i as f64), vec![]);
            blocks.push(b);
        }
        for &i in &[2usize, 1, 4, 3, 7, 5, 6, 10, 9, 8] {
            n.on_block(NodeId(2), blocks[i], secs(i as f64), &mut out);
            settle(&mut n, &ledger, &mut out);
            assert_eq!(n.tip(), n.tree().select_tip(&ledger));
        }
    }
}
