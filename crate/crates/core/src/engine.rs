//! Deterministic discrete-event kernel.
//!
//! Time is kept as integer picoseconds. Events with equal timestamps are
//! dispatched in insertion order. The random source is xoshiro256**
//! seeded through splitmix64, and ranged draws use rejection sampling so
//! the stream is fully specified by the seed.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::fmt;
use std::ops::{Add, AddAssign, Mul, Sub};

use rand_core::{RngCore, SeedableRng};
use rand_xoshiro::Xoshiro256StarStar;

/// Simulation timestamp in picoseconds since start.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SimTime(pub u64);

impl SimTime {
    pub const ZERO: SimTime = SimTime(0);
    pub const MAX: SimTime = SimTime(u64::MAX);

    pub const fn ps(ps: u64) -> Self {
        SimTime(ps)
    }

    pub const fn ns(ns: u64) -> Self {
        SimTime(ns * 1_000)
    }

    pub const fn us(us: u64) -> Self {
        SimTime(us * 1_000_000)
    }

    pub const fn ms(ms: u64) -> Self {
        SimTime(ms * 1_000_000_000)
    }

    pub const fn as_ps(self) -> u64 {
        self.0
    }

    pub fn as_secs_f64(self) -> f64 {
        self.0 as f64 * 1e-12
    }

    pub fn saturating_sub(self, rhs: SimTime) -> SimTime {
        SimTime(self.0.saturating_sub(rhs.0))
    }
}

impl Add for SimTime {
    type Output = SimTime;
    fn add(self, rhs: SimTime) -> SimTime {
        SimTime(self.0 + rhs.0)
    }
}

impl AddAssign for SimTime {
    fn add_assign(&mut self, rhs: SimTime) {
        self.0 += rhs.0;
    }
}

impl Sub for SimTime {
    type Output = SimTime;
    fn sub(self, rhs: SimTime) -> SimTime {
        SimTime(self.0.checked_sub(rhs.0).expect("negative time difference"))
    }
}

impl Mul<u64> for SimTime {
    type Output = SimTime;
    fn mul(self, rhs: u64) -> SimTime {
        SimTime(self.0 * rhs)
    }
}

impl fmt::Display for SimTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}ps", self.0)
    }
}

struct Entry<E> {
    fire_at: SimTime,
    seq: u64,
    event: E,
}

impl<E> PartialEq for Entry<E> {
    fn eq(&self, other: &Self) -> bool {
        self.fire_at == other.fire_at && self.seq == other.seq
    }
}

impl<E> Eq for Entry<E> {}

impl<E> PartialOrd for Entry<E> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<E> Ord for Entry<E> {
    // BinaryHeap is a max-heap; reverse so the earliest (time, seq) pops first.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .fire_at
            .cmp(&self.fire_at)
            .then_with(|| other.seq.cmp(&self.seq))
    }
}

/// Ordered event queue plus the global clock.
pub struct EventQueue<E> {
    now: SimTime,
    next_seq: u64,
    heap: BinaryHeap<Entry<E>>,
}

impl<E> Default for EventQueue<E> {
    fn default() -> Self {
        Self::new()
    }
}

impl<E> EventQueue<E> {
    pub fn new() -> Self {
        EventQueue {
            now: SimTime::ZERO,
            next_seq: 0,
            heap: BinaryHeap::new(),
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

    pub fn peek_time(&self) -> Option<SimTime> {
        self.heap.peek().map(|e| e.fire_at)
    }

    /// Queue `event` at `fire_at`.
    ///
    /// Scheduling before the current clock is a logic error in the model and
    /// aborts the simulation.
    pub fn schedule(&mut self, fire_at: SimTime, event: E) {
        assert!(
            fire_at >= self.now,
            "event scheduled in the past: fire_at={} now={}",
            fire_at,
            self.now
        );
        let seq = self.next_seq;
        self.next_seq += 1;
        self.heap.push(Entry {
            fire_at,
            seq,
            event,
        });
    }

    /// Pop the next event if it fires at or before `limit`, advancing the clock.
    pub fn pop_until(&mut self, limit: SimTime) -> Option<(SimTime, E)> {
        if self.heap.peek()?.fire_at > limit {
            return None;
        }
        let entry = self.heap.pop()?;
        self.now = entry.fire_at;
        Some((entry.fire_at, entry.event))
    }

    /// Dispatch every event with `fire_at <= limit`, then move the clock to
    /// `limit`. Handlers may schedule further events, including at `now`.
    pub fn run_until<F>(&mut self, limit: SimTime, mut handler: F) -> SimTime
    where
        F: FnMut(&mut Self, SimTime, E),
    {
        while let Some((at, ev)) = self.pop_until(limit) {
            handler(self, at, ev);
        }
        self.advance_to(limit);
        self.now
    }

    /// Move the clock forward to `at` without firing anything. All events
    /// before `at` must already have been popped.
    pub fn advance_to(&mut self, at: SimTime) {
        debug_assert!(self.peek_time().is_none_or(|t| t >= at), "advancing past a pending event");
        if at > self.now {
            self.now = at;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("empty range: lo {lo} > hi {hi}")]
pub struct RangeError {
    pub lo: u64,
    pub hi: u64,
}

/// Seeded generator: xoshiro256** whose 256-bit state is filled by splitmix64
/// from the 64-bit seed.
#[derive(Clone, Debug)]
pub struct Rng {
    inner: Xoshiro256StarStar,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Rng {
            inner: Xoshiro256StarStar::seed_from_u64(seed),
        }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Unbiased integer in `[0, n)`; `n` must be non-zero.
    ///
    /// Draws are rejected from the top partial bucket of the 64-bit range.
    pub fn below(&mut self, n: u64) -> u64 {
        assert!(n > 0, "below(0)");
        let zone = u64::MAX - (u64::MAX % n + 1) % n;
        loop {
            let x = self.next_u64();
            if x <= zone {
                return x % n;
            }
        }
    }

    /// Unbiased integer in `[lo, hi]`, both ends inclusive.
    pub fn range_inclusive(&mut self, lo: u64, hi: u64) -> Result<u64, RangeError> {
        if lo > hi {
            return Err(RangeError { lo, hi });
        }
        let span = hi - lo;
        if span == u64::MAX {
            return Ok(self.next_u64());
        }
        Ok(lo + self.below(span + 1))
    }

    /// Uniform time in `[lo, hi]` on the integer picosecond grid.
    pub fn uniform(&mut self, lo: SimTime, hi: SimTime) -> Result<SimTime, RangeError> {
        self.range_inclusive(lo.0, hi.0).map(SimTime)
    }

    pub fn choose<'a, T>(&mut self, items: &'a [T]) -> Option<&'a T> {
        if items.is_empty() {
            None
        } else {
            Some(&items[self.below(items.len() as u64) as usize])
        }
    }
}
