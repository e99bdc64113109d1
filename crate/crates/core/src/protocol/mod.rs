//! Per-node protocol state: mempool, block tree, validation server and legacy
//! inv/getdata relaying.

mod mempool;
mod node;
mod tree;

use std::fmt;

pub use mempool::Mempool;
pub use node::{Node, NodeParams, Output};
pub use tree::{BlockState, BlockTree};

use crate::time::SimTime;
use crate::topology::NodeId;

/// Opaque transaction identifier.
#[derive(Copy, Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TxId(pub u32);

impl TxId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for TxId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "tx{}", self.0)
    }
}

/// Opaque block hash. Id 0 is the genesis block.
#[derive(Copy, Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct BlockId(pub u32);

impl BlockId {
    pub const GENESIS: BlockId = BlockId(0);

    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for BlockId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if *self == BlockId::GENESIS {
            f.write_str("genesis")
        } else {
            write!(f, "blk{}", self.0)
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Transaction {
    pub id: TxId,
    pub origin: NodeId,
    /// Generation time.
    pub t_g: SimTime,
    pub size: u32,
    pub fee: u32,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Block {
    pub id: BlockId,
    /// `None` only for genesis.
    pub prev: Option<BlockId>,
    pub height: u64,
    /// `None` only for genesis.
    pub miner: Option<NodeId>,
    /// Generation time.
    pub b_g: SimTime,
    pub txs: Vec<TxId>,
    /// Header plus the sizes of all member transactions.
    pub size: u64,
}

/// Every transaction and block created during a run, shared read-only by all nodes.
#[derive(Clone, Debug)]
pub struct Ledger {
    txs: Vec<Transaction>,
    blocks: Vec<Block>,
    block_header_size: u64,
}

impl Ledger {
    pub fn new(block_header_size: u64) -> Self {
        let genesis = Block {
            id: BlockId::GENESIS,
            prev: None,
            height: 0,
            miner: None,
            b_g: SimTime::ZERO,
            txs: Vec::new(),
            size: block_header_size,
        };
        Self {
            txs: Vec::new(),
            blocks: vec![genesis],
            block_header_size,
        }
    }

    pub fn add_tx(&mut self, origin: NodeId, t_g: SimTime, size: u32, fee: u32) -> TxId {
        let id = TxId(self.txs.len() as u32);
        self.txs.push(Transaction {
            id,
            origin,
            t_g,
            size,
            fee,
        });
        id
    }

    pub fn add_block(&mut self, prev: BlockId, miner: NodeId, b_g: SimTime, txs: Vec<TxId>) -> BlockId {
        let id = BlockId(self.blocks.len() as u32);
        let height = self.block(prev).height + 1;
        let size = self.block_header_size + txs.iter().map(|&t| self.tx(t).size as u64).sum::<u64>();
        self.blocks.push(Block {
            id,
            prev: Some(prev),
            height,
            miner: Some(miner),
            b_g,
            txs,
            size,
        });
        id
    }

    pub fn tx(&self, id: TxId) -> &Transaction {
        &self.txs[id.index()]
    }

    pub fn block(&self, id: BlockId) -> &Block {
        &self.blocks[id.index()]
    }

    pub fn txs(&self) -> &[Transaction] {
        &self.txs
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }
}
