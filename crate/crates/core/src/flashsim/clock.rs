use std::cmp::Ordering;
use std::collections::BinaryHeap;

use thiserror::Error;

/// Simulated time in nanoseconds.
pub type Nanos = u64;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SimError {
    #[error("event ceiling of {0} events reached (livelock?)")]
    EventCeiling(u64),
}

struct Pending<E> {
    at: Nanos,
    seq: u64,
    event: E,
}

impl<E> PartialEq for Pending<E> {
    fn eq(&self, other: &Self) -> bool {
        self.at == other.at && self.seq == other.seq
    }
}

impl<E> Eq for Pending<E> {}

impl<E> PartialOrd for Pending<E> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<E> Ord for Pending<E> {
    // BinaryHeap is a max-heap: invert so the earliest (then first-inserted) pops first.
    fn cmp(&self, other: &Self) -> Ordering {
        other.at.cmp(&self.at).then(other.seq.cmp(&self.seq))
    }
}

/// Discrete-event clock. Events at equal timestamps fire in insertion order.
pub struct SimClock<E> {
    now: Nanos,
    seq: u64,
    fired: u64,
    ceiling: u64,
    queue: BinaryHeap<Pending<E>>,
}

impl<E> Default for SimClock<E> {
    fn default() -> Self {
        Self::new()
    }
}

impl<E> SimClock<E> {
    pub fn new() -> Self {
        SimClock {
            now: 0,
            seq: 0,
            fired: 0,
            ceiling: u64::MAX,
            queue: BinaryHeap::new(),
        }
    }

    /// Abort [`run_until_idle`](Self::run_until_idle) after this many events.
    pub fn with_ceiling(mut self, ceiling: u64) -> Self {
        self.ceiling = ceiling;
        self
    }

    pub fn now(&self) -> Nanos {
        self.now
    }

    pub fn fired(&self) -> u64 {
        self.fired
    }

    pub fn pending(&self) -> usize {
        self.queue.len()
    }

    /// Schedule `event` at absolute time `at` (clamped to now).
    pub fn schedule(&mut self, at: Nanos, event: E) {
        let at = at.max(self.now);
        self.queue.push(Pending {
            at,
            seq: self.seq,
            event,
        });
        self.seq += 1;
    }

    pub fn schedule_in(&mut self, delay: Nanos, event: E) {
        self.schedule(self.now + delay, event);
    }

    /// Pop the next event and advance time to it.
    pub fn next_event(&mut self) -> Option<(Nanos, E)> {
        let p = self.queue.pop()?;
        debug_assert!(p.at >= self.now);
        self.now = p.at;
        self.fired += 1;
        Some((p.at, p.event))
    }

    /// Fire events until the queue is empty; returns the final time.
    pub fn run_until_idle<F>(&mut self, mut handler: F) -> Result<Nanos, SimError>
    where
        F: FnMut(&mut Self, E),
    {
        let start = self.fired;
        while let Some((_, ev)) = self.next_event() {
            handler(self, ev);
            if self.fired - start >= self.ceiling {
                return Err(SimError::EventCeiling(self.ceiling));
            }
        }
        Ok(self.now)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_queue_is_idle() {
        let mut c: SimClock<u32> = SimClock::new();
        let mut seen = Vec::new();
        assert_eq!(c.run_until_idle(|_, e| seen.push(e)), Ok(0));
        assert!(seen.is_empty());
    }

    #[test]
    fn time_order_then_fifo() {
        let mut c = SimClock::new();
        c.schedule(30, 'a');
        c.schedule(10, 'b');
        c.schedule(10, 'c');
        c.schedule(20, 'd');
        c.schedule(10, 'e');
        let mut log = Vec::new();
        let end = c.run_until_idle(|c, e| log.push((c.now(), e))).unwrap();
        assert_eq!(end, 30);
        assert_eq!(
            log,
            vec![(10, 'b'), (10, 'c'), (10, 'e'), (20, 'd'), (30, 'a')]
        );
    }

    #[test]
    fn handler_can_schedule() {
        let mut c = SimClock::new();
        c.schedule(0, 3u32);
        let mut log = Vec::new();
        c.run_until_idle(|c, n| {
            log.push(c.now());
            if n > 0 {
                c.schedule_in(5, n - 1);
            }
        })
        .unwrap();
        assert_eq!(log, vec![0, 5, 10, 15]);
    }

    #[test]
    fn ceiling_detects_livelock() {
        let mut c = SimClock::new().with_ceiling(100);
        c.schedule(0, ());
        let r = c.run_until_idle(|c, _| c.schedule_in(0, ()));
        assert_eq!(r, Err(SimError::EventCeiling(100)));
    }
}
