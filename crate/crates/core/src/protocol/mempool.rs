use crate::protocol::TxId;
use crate::time::SimTime;

/// Validated, unconfirmed transactions of one node, kept in arrival order.
///
/// Removal is lazy: entries stay in `order` until they reach the front or a
/// compaction pass drops them. Each insertion gets a fresh stamp so a stale
/// entry never revives when the same transaction is inserted again.
#[derive(Clone, Debug, Default)]
pub struct Mempool {
    order: Vec<Entry>,
    head: usize,
    /// Current stamp per transaction, 0 when absent.
    stamp: Vec<u32>,
    next_stamp: u32,
    len: usize,
}

#[derive(Copy, Clone, Debug)]
struct Entry {
    t_a: SimTime,
    tx: TxId,
    stamp: u32,
}

impl Mempool {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn contains(&self, tx: TxId) -> bool {
        self.stamp.get(tx.index()).is_some_and(|&s| s != 0)
    }

    /// Adds `tx` with local arrival time `t_a`. Returns false if it was already present.
    pub fn insert(&mut self, tx: TxId, t_a: SimTime) -> bool {
        if self.contains(tx) {
            return false;
        }
        if self.stamp.len() <= tx.index() {
            self.stamp.resize(tx.index() + 1, 0);
        }
        self.next_stamp += 1;
        let entry = Entry {
            t_a,
            tx,
            stamp: self.next_stamp,
        };
        self.stamp[tx.index()] = entry.stamp;
        self.len += 1;
        match self.order.last() {
            Some(last) if last.t_a > t_a => {
                // Returned from an abandoned block: slot it back by its original arrival.
                let pos = self.head + self.order[self.head..].partition_point(|e| e.t_a <= t_a);
                self.order.insert(pos, entry);
            }
            _ => self.order.push(entry),
        }
        true
    }

    pub fn remove(&mut self, tx: TxId) -> bool {
        if !self.contains(tx) {
            return false;
        }
        self.stamp[tx.index()] = 0;
        self.len -= 1;
        self.prune_front();
        if self.order.len() > 4 * self.len + 1024 {
            self.compact();
        }
        true
    }

    fn is_live(&self, e: &Entry) -> bool {
        self.stamp[e.tx.index()] == e.stamp
    }

    /// Live `(t_a, txid)` entries in ascending arrival order.
    pub fn iter(&self) -> impl Iterator<Item = (SimTime, TxId)> + '_ {
        self.order[self.head..]
            .iter()
            .filter(move |e| self.is_live(e))
            .map(|e| (e.t_a, e.tx))
    }

    /// Up to `n` transactions with the earliest arrival times.
    pub fn oldest(&self, n: usize) -> Vec<TxId> {
        self.iter().take(n).map(|(_, tx)| tx).collect()
    }

    fn prune_front(&mut self) {
        while self.head < self.order.len() && !self.is_live(&self.order[self.head]) {
            self.head += 1;
        }
    }

    fn compact(&mut self) {
        let live: Vec<Entry> = self.order[self.head..]
            .iter()
            .copied()
            .filter(|e| self.is_live(e))
            .collect();
        self.order = live;
        self.head = 0;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(s: u64) -> SimTime {
        SimTime::from_nanos(s)
    }

    #[test]
    fn oldest_first_selection() {
        let mut m = Mempool::new();
        for i in 0..5 {
            m.insert(TxId(i), t(i as u64 * 10));
        }
        assert_eq!(m.oldest(3), vec![TxId(0), TxId(1), TxId(2)]);
        assert!(!m.insert(TxId(2), t(99)));
        assert_eq!(m.len(), 5);
    }

    #[test]
    fn removal_and_reinsertion_keep_arrival_order() {
        let mut m = Mempool::new();
        for i in 0..5 {
            m.insert(TxId(i), t(i as u64 * 10));
        }
        m.remove(TxId(0));
        m.remove(TxId(2));
        assert_eq!(m.oldest(10), vec![TxId(1), TxId(3), TxId(4)]);
        m.insert(TxId(7), t(50));
        m.remove(TxId(7));
        m.insert(TxId(7), t(50));
        // Back from a stale block with its original arrival time 20.
        m.insert(TxId(2), t(20));
        assert_eq!(m.oldest(10), vec![TxId(1), TxId(2), TxId(3), TxId(4), TxId(7)]);
        assert_eq!(m.len(), 5);
    }

    #[test]
    fn compaction_preserves_contents() {
        let mut m = Mempool::new();
        for i in 0..5000u32 {
            m.insert(TxId(i), t(i as u64));
        }
        for i in (1..5000u32).step_by(2) {
            m.remove(TxId(i));
        }
        for i in (0..4000u32).step_by(2) {
            m.remove(TxId(i));
        }
        let rest: Vec<_> = (4000..5000u32).step_by(2).map(TxId).collect();
        assert_eq!(m.oldest(10_000), rest);
        assert_eq!(m.len(), rest.len());
        assert!(m.order.len() < 2000);
    }
}
