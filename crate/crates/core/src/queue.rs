//! Event queue with a virtual clock.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::time::SimTime;

/// A timestamped simulation occurrence. Events are ordered by `(time, seq)`.
#[derive(Clone, Debug)]
pub struct Event<E> {
    pub time: SimTime,
    pub seq: u64,
    pub payload: E,
}

impl<E> PartialEq for Event<E> {
    fn eq(&self, other: &Self) -> bool {
        self.time == other.time && self.seq == other.seq
    }
}

impl<E> Eq for Event<E> {}

impl<E> PartialOrd for Event<E> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<E> Ord for Event<E> {
    // Reversed so that `BinaryHeap` pops the earliest event first.
    fn cmp(&self, other: &Self) -> Ordering {
        other.time.cmp(&self.time).then_with(|| other.seq.cmp(&self.seq))
    }
}

/// Min-queue of events plus the current simulated time.
pub struct EventQueue<E> {
    heap: BinaryHeap<Event<E>>,
    now: SimTime,
    next_seq: u64,
    processed: u64,
}

impl<E> Default for EventQueue<E> {
    fn default() -> Self {
        Self::new()
    }
}

impl<E> EventQueue<E> {
    pub fn new() -> Self {
        Self {
            heap: BinaryHeap::new(),
            now: SimTime::ZERO,
            next_seq: 0,
            processed: 0,
        }
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }

    /// Number of events popped so far.
    pub fn processed(&self) -> u64 {
        self.processed
    }

    /// Schedules `payload` at `time` with the next sequence number and returns that number.
    ///
    /// Panics if `time` lies before the current clock.
    pub fn schedule(&mut self, time: SimTime, payload: E) -> u64 {
        let seq = self.next_seq;
        self.push(Event { time, seq, payload });
        seq
    }

    /// Inserts an event carrying an explicit sequence number.
    ///
    /// Panics if the event lies before the current clock.
    pub fn push(&mut self, event: Event<E>) {
        assert!(
            event.time >= self.now,
            "event scheduled in the past: {} < {}",
            event.time,
            self.now
        );
        self.next_seq = self.next_seq.max(event.seq + 1);
        self.heap.push(event);
    }

    pub fn peek_time(&self) -> Option<SimTime> {
        self.heap.peek().map(|e| e.time)
    }

    /// Pops the earliest event and advances the clock to its time.
    pub fn pop(&mut self) -> Option<Event<E>> {
        let event = self.heap.pop()?;
        debug_assert!(event.time >= self.now);
        self.now = event.time;
        self.processed += 1;
        Some(event)
    }

    /// Pops the earliest event only if its time is at most `horizon`.
    pub fn pop_until(&mut self, horizon: SimTime) -> Option<Event<E>> {
        match self.peek_time() {
            Some(t) if t <= horizon => self.pop(),
            _ => None,
        }
    }

    /// Moves the clock forward without processing anything. Never moves it backwards.
    pub fn advance_to(&mut self, time: SimTime) {
        if time > self.now {
            if let Some(next) = self.peek_time() {
                assert!(next >= time, "advancing past a pending event");
            }
            self.now = time;
        }
    }
}
