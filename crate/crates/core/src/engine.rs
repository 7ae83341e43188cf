//! Discrete-event kernel: a virtual clock and a priority queue of actions
//! ordered by firing time, ties broken by scheduling order.

use alloc::collections::{BTreeSet, BinaryHeap};
use core::cmp::Ordering;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct EventHandle(u64);

struct Entry<A> {
    fire_at: f64,
    sequence: u64,
    action: A,
}

impl<A> PartialEq for Entry<A> {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl<A> Eq for Entry<A> {}

impl<A> PartialOrd for Entry<A> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<A> Ord for Entry<A> {
    // Reversed: BinaryHeap is a max-heap and we want the earliest event on top.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .fire_at
            .total_cmp(&self.fire_at)
            .then_with(|| other.sequence.cmp(&self.sequence))
    }
}

pub struct EventQueue<A> {
    heap: BinaryHeap<Entry<A>>,
    live: BTreeSet<u64>,
    now: f64,
    next_sequence: u64,
    executed: u64,
}

impl<A> Default for EventQueue<A> {
    fn default() -> Self {
        Self::new()
    }
}

impl<A> EventQueue<A> {
    pub fn new() -> Self {
        EventQueue {
            heap: BinaryHeap::new(),
            live: BTreeSet::new(),
            now: 0.0,
            next_sequence: 0,
            executed: 0,
        }
    }

    pub fn now(&self) -> f64 {
        self.now
    }

    /// Events fired so far.
    pub fn executed(&self) -> u64 {
        self.executed
    }

    /// Live (scheduled, not cancelled, not fired) events.
    pub fn pending(&self) -> usize {
        self.live.len()
    }

    /// Panics if `fire_at` lies in the past.
    pub fn schedule(&mut self, fire_at: f64, action: A) -> EventHandle {
        assert!(
            fire_at >= self.now && !fire_at.is_nan(),
            "event scheduled in the past: {fire_at} < {}",
            self.now
        );
        let sequence = self.next_sequence;
        self.next_sequence += 1;
        self.live.insert(sequence);
        self.heap.push(Entry {
            fire_at,
            sequence,
            action,
        });
        EventHandle(sequence)
    }

    /// Cancelling an event that already fired or was cancelled is a no-op.
    pub fn cancel(&mut self, handle: EventHandle) {
        self.live.remove(&handle.0);
    }

    /// Pops the next live event with `fire_at <= horizon`, advancing the clock.
    pub fn pop_until(&mut self, horizon: f64) -> Option<(f64, A)> {
        loop {
            let top = self.heap.peek()?;
            if top.fire_at > horizon {
                return None;
            }
            let entry = self.heap.pop().expect("peeked");
            if !self.live.remove(&entry.sequence) {
                continue;
            }
            debug_assert!(entry.fire_at >= self.now);
            self.now = entry.fire_at;
            self.executed += 1;
            return Some((entry.fire_at, entry.action));
        }
    }

    /// Fires every event up to `horizon` in order, then parks the clock at the
    /// horizon. Handlers may schedule further events. Returns the number fired.
    pub fn run_until<F>(&mut self, horizon: f64, mut handler: F) -> u64
    where
        F: FnMut(&mut Self, f64, A),
    {
        let start = self.executed;
        while let Some((at, action)) = self.pop_until(horizon) {
            handler(self, at, action);
        }
        if horizon > self.now {
            self.now = horizon;
        }
        self.executed - start
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec::Vec;

    #[test]
    fn orders_by_time_then_sequence() {
        let mut q = EventQueue::new();
        q.schedule(5.0, "t5");
        q.schedule(3.0, "t3a");
        q.schedule(3.0, "t3b");
        let mut fired = Vec::new();
        let n = q.run_until(10.0, |_, _, a| fired.push(a));
        assert_eq!(fired, ["t3a", "t3b", "t5"]);
        assert_eq!(n, 3);
        assert_eq!(q.now(), 10.0);
    }

    #[test]
    fn cancelled_events_never_fire() {
        let mut q = EventQueue::new();
        let h = q.schedule(1.0, 1);
        q.schedule(2.0, 2);
        q.cancel(h);
        q.cancel(h);
        assert_eq!(q.pending(), 1);
        let mut fired = Vec::new();
        q.run_until(10.0, |_, _, a| fired.push(a));
        assert_eq!(fired, [2]);
    }

    #[test]
    fn handlers_can_schedule() {
        let mut q = EventQueue::new();
        q.schedule(0.0, 0u32);
        let mut fired = Vec::new();
        q.run_until(5.0, |q, at, n| {
            fired.push((at, n));
            if n < 10 {
                q.schedule(at + 1.0, n + 1);
            }
        });
        assert_eq!(fired.len(), 6);
        assert_eq!(fired.last(), Some(&(5.0, 5)));
        assert_eq!(q.pending(), 1);
    }

    #[test]
    #[should_panic(expected = "in the past")]
    fn scheduling_in_the_past_panics() {
        let mut q = EventQueue::new();
        q.schedule(2.0, ());
        q.run_until(3.0, |_, _, _| {});
        q.schedule(1.0, ());
    }
}
