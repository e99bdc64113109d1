use crate::protocol::{BlockId, Ledger};
use crate::time::SimTime;
use crate::topology::NodeId;

/// What one node knows about a block.
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum BlockState {
    Unknown,
    /// getdata sent, payload not yet received.
    Requested,
    Validating,
    /// Validated but its parent is not connected yet.
    Orphan,
    Connected,
}

/// One node's view of the block tree, rooted at genesis.
#[derive(Clone, Debug)]
pub struct BlockTree {
    state: Vec<BlockState>,
    /// Local connection order; the first-received rule compares these.
    order: Vec<u64>,
    connected_at: Vec<SimTime>,
    next_order: u64,
    tip: BlockId,
    orphans: Vec<(BlockId, Option<NodeId>)>,
}

impl Default for BlockTree {
    fn default() -> Self {
        Self::new()
    }
}

impl BlockTree {
    pub fn new() -> Self {
        Self {
            state: vec![BlockState::Connected],
            order: vec![0],
            connected_at: vec![SimTime::ZERO],
            next_order: 1,
            tip: BlockId::GENESIS,
            orphans: Vec::new(),
        }
    }

    pub fn state(&self, id: BlockId) -> BlockState {
        self.state.get(id.index()).copied().unwrap_or(BlockState::Unknown)
    }

    pub fn set_state(&mut self, id: BlockId, state: BlockState) {
        if self.state.len() <= id.index() {
            self.state.resize(id.index() + 1, BlockState::Unknown);
            self.order.resize(id.index() + 1, u64::MAX);
            self.connected_at.resize(id.index() + 1, SimTime::MAX);
        }
        self.state[id.index()] = state;
    }

    pub fn contains(&self, id: BlockId) -> bool {
        self.state(id) == BlockState::Connected
    }

    pub fn tip(&self) -> BlockId {
        self.tip
    }

    pub(crate) fn set_tip(&mut self, tip: BlockId) {
        debug_assert!(self.contains(tip));
        self.tip = tip;
    }

    pub fn connected_at(&self, id: BlockId) -> Option<SimTime> {
        self.contains(id).then(|| self.connected_at[id.index()])
    }

    /// Connected blocks in local connection order.
    pub fn connected(&self) -> Vec<BlockId> {
        let mut ids: Vec<BlockId> = (0..self.state.len())
            .map(|i| BlockId(i as u32))
            .filter(|&b| self.contains(b))
            .collect();
        ids.sort_by_key(|b| self.order[b.index()]);
        ids
    }

    pub fn orphan_count(&self) -> usize {
        self.orphans.len()
    }

    /// Adds a validated block. If its parent is connected, the block and any
    /// buffered descendants connect; the newly connected blocks are returned
    /// in connection order along with the peer each came from.
    pub fn insert(
        &mut self,
        block: BlockId,
        from: Option<NodeId>,
        now: SimTime,
        ledger: &Ledger,
    ) -> Vec<(BlockId, Option<NodeId>)> {
        if matches!(self.state(block), BlockState::Connected | BlockState::Orphan) {
            return Vec::new();
        }
        let parent = ledger.block(block).prev.expect("genesis is never inserted");
        if !self.contains(parent) {
            self.set_state(block, BlockState::Orphan);
            self.orphans.push((block, from));
            return Vec::new();
        }
        let mut connected = Vec::new();
        let mut frontier = vec![(block, from)];
        while let Some((b, f)) = frontier.pop() {
            self.set_state(b, BlockState::Connected);
            self.order[b.index()] = self.next_order;
            self.next_order += 1;
            self.connected_at[b.index()] = now;
            connected.push((b, f));
            // Buffered children in arrival order; pushed reversed so the earliest connects first.
            let (ready, waiting): (Vec<_>, Vec<_>) =
                self.orphans.iter().partition(|(o, _)| ledger.block(*o).prev == Some(b));
            self.orphans = waiting;
            frontier.extend(ready.into_iter().rev());
        }
        connected
    }

    /// Tip by the chain-selection rule, computed from scratch: the connected
    /// block of greatest height, ties going to the one connected first.
    pub fn select_tip(&self, ledger: &Ledger) -> BlockId {
        self.connected()
            .into_iter()
            .min_by_key(|b| (std::cmp::Reverse(ledger.block(*b).height), self.order[b.index()]))
            .expect("genesis is always connected")
    }

    /// Blocks from the current tip back to genesis.
    pub fn main_chain(&self, ledger: &Ledger) -> Vec<BlockId> {
        chain_from(self.tip, ledger)
    }
}

/// Walks `prev` links from `tip` to genesis (inclusive), returning tip first.
pub(crate) fn chain_from(tip: BlockId, ledger: &Ledger) -> Vec<BlockId> {
    let mut out = Vec::new();
    let mut cur = Some(tip);
    while let Some(b) = cur {
        out.push(b);
        cur = ledger.block(b).prev;
    }
    out
}
