//! Virtual-time discrete-event scheduler.
//!
//! Events are ordered by `(at, id)`. Ids are issued in scheduling order, so
//! two events at the same instant fire in the order they were scheduled.
//! Wall-clock time is never consulted.

use alloc::collections::BinaryHeap;
use alloc::string::String;
use alloc::vec::Vec;
use core::cmp::Ordering;
use core::fmt;
use core::ops::{Add, Sub};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest as _, Sha256};
use thiserror::Error;

/// Simulated time in integer nanoseconds. Also used for durations.
#[derive(
    Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct VirtualTime(pub u64);

impl VirtualTime {
    pub const ZERO: VirtualTime = VirtualTime(0);
    pub const MAX: VirtualTime = VirtualTime(u64::MAX);

    pub const fn from_nanos(ns: u64) -> Self {
        VirtualTime(ns)
    }

    pub const fn from_micros(us: u64) -> Self {
        VirtualTime(us * 1_000)
    }

    pub const fn from_millis(ms: u64) -> Self {
        VirtualTime(ms * 1_000_000)
    }

    pub const fn from_secs(s: u64) -> Self {
        VirtualTime(s * 1_000_000_000)
    }

    pub const fn as_nanos(self) -> u64 {
        self.0
    }

    pub fn saturating_sub(self, rhs: VirtualTime) -> VirtualTime {
        VirtualTime(self.0.saturating_sub(rhs.0))
    }

    pub fn checked_mul(self, k: u64) -> Option<VirtualTime> {
        self.0.checked_mul(k).map(VirtualTime)
    }
}

impl Add for VirtualTime {
    type Output = VirtualTime;

    fn add(self, rhs: VirtualTime) -> VirtualTime {
        VirtualTime(self.0.saturating_add(rhs.0))
    }
}

impl Sub for VirtualTime {
    type Output = VirtualTime;

    fn sub(self, rhs: VirtualTime) -> VirtualTime {
        VirtualTime(self.0 - rhs.0)
    }
}

impl fmt::Display for VirtualTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}ns", self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EventId(pub u64);

/// Whatever the event is addressed to: a link, a node, a window timer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EntityId(pub u64);

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum KernelError {
    #[error("causality violation: cannot schedule at {at} when the clock is already at {now}")]
    CausalityViolation { at: VirtualTime, now: VirtualTime },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EventRecord<P> {
    pub id: EventId,
    pub at: VirtualTime,
    pub target: EntityId,
    pub kind: &'static str,
    pub payload: P,
}

/// One line of an exported trace. Field order is fixed: id, at, target, kind,
/// then an optional free-form detail.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TraceEntry {
    pub id: u64,
    pub at: u64,
    pub target: u64,
    pub kind: &'static str,
    #[serde(skip_serializing_if = "String::is_empty")]
    pub detail: String,
}

struct Pending<P>(EventRecord<P>);

impl<P> PartialEq for Pending<P> {
    fn eq(&self, other: &Self) -> bool {
        self.0.id == other.0.id
    }
}

impl<P> Eq for Pending<P> {}

impl<P> PartialOrd for Pending<P> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<P> Ord for Pending<P> {
    // BinaryHeap is a max-heap; invert so the earliest (at, id) pops first.
    fn cmp(&self, other: &Self) -> Ordering {
        (other.0.at, other.0.id).cmp(&(self.0.at, self.0.id))
    }
}

pub struct Scheduler<P> {
    now: VirtualTime,
    next_id: u64,
    queue: BinaryHeap<Pending<P>>,
    trace: Option<Vec<TraceEntry>>,
    fired: u64,
}

impl<P> Default for Scheduler<P> {
    fn default() -> Self {
        Self::new()
    }
}

impl<P> Scheduler<P> {
    pub fn new() -> Self {
        Scheduler {
            now: VirtualTime::ZERO,
            next_id: 1,
            queue: BinaryHeap::new(),
            trace: None,
            fired: 0,
        }
    }

    /// A scheduler that records every fired event and note.
    pub fn traced() -> Self {
        let mut s = Self::new();
        s.trace = Some(Vec::new());
        s
    }

    pub fn now(&self) -> VirtualTime {
        self.now
    }

    pub fn pending(&self) -> usize {
        self.queue.len()
    }

    pub fn fired(&self) -> u64 {
        self.fired
    }

    pub fn schedule(
        &mut self,
        at: VirtualTime,
        target: EntityId,
        kind: &'static str,
        payload: P,
    ) -> Result<EventId, KernelError> {
        if at < self.now {
            return Err(KernelError::CausalityViolation { at, now: self.now });
        }
        let id = self.issue_id();
        self.queue.push(Pending(EventRecord {
            id,
            at,
            target,
            kind,
            payload,
        }));
        Ok(id)
    }

    /// Schedule relative to the current clock. Cannot violate causality.
    pub fn schedule_in(
        &mut self,
        delay: VirtualTime,
        target: EntityId,
        kind: &'static str,
        payload: P,
    ) -> EventId {
        let at = self.now + delay;
        self.schedule(at, target, kind, payload)
            .expect("relative schedule is never in the past")
    }

    /// Record an annotation (recovery transcript, detection record...) in the
    /// trace at the current instant. It consumes an id so trace ids stay unique.
    pub fn note(&mut self, target: EntityId, kind: &'static str, detail: String) {
        let id = self.issue_id();
        if let Some(trace) = self.trace.as_mut() {
            trace.push(TraceEntry {
                id: id.0,
                at: self.now.0,
                target: target.0,
                kind,
                detail,
            });
        }
    }

    pub fn is_tracing(&self) -> bool {
        self.trace.is_some()
    }

    /// Pop and fire the next event if it is due at or before `limit`.
    pub fn pop_due(&mut self, limit: VirtualTime) -> Option<EventRecord<P>> {
        if self.queue.peek()?.0.at > limit {
            return None;
        }
        let Pending(ev) = self.queue.pop()?;
        debug_assert!(ev.at >= self.now);
        self.now = ev.at;
        self.fired += 1;
        if let Some(trace) = self.trace.as_mut() {
            trace.push(TraceEntry {
                id: ev.id.0,
                at: ev.at.0,
                target: ev.target.0,
                kind: ev.kind,
                detail: String::new(),
            });
        }
        Some(ev)
    }

    /// Fire every event with `at <= t` in `(at, id)` order; handlers may
    /// schedule more. Leaves the clock at `max(last fired, t)`.
    pub fn run_until<F>(&mut self, t: VirtualTime, mut handler: F) -> u64
    where
        F: FnMut(&mut Self, EventRecord<P>),
    {
        let mut count = 0;
        while let Some(ev) = self.pop_due(t) {
            handler(self, ev);
            count += 1;
        }
        if t > self.now {
            self.now = t;
        }
        count
    }

    /// Run until the queue is empty.
    pub fn drain<F>(&mut self, mut handler: F) -> u64
    where
        F: FnMut(&mut Self, EventRecord<P>),
    {
        let mut count = 0;
        while let Some(ev) = self.pop_due(VirtualTime::MAX) {
            handler(self, ev);
            count += 1;
        }
        count
    }

    pub fn trace(&self) -> &[TraceEntry] {
        self.trace.as_deref().unwrap_or(&[])
    }

    pub fn take_trace(&mut self) -> Vec<TraceEntry> {
        self.trace.as_mut().map(core::mem::take).unwrap_or_default()
    }

    fn issue_id(&mut self) -> EventId {
        let id = EventId(self.next_id);
        self.next_id += 1;
        id
    }
}

pub type SimRng = ChaCha8Rng;

/// A deterministic random stream keyed by `(seed, label)`. Different labels
/// give unrelated streams; the same pair always gives the same stream.
pub fn rng_stream(seed: u64, label: &str) -> SimRng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(label.as_bytes());
    ChaCha8Rng::from_seed(h.finalize().into())
}

/// Seed for sweep point `index` of a run with base seed `base`.
pub fn derive_seed(base: u64, index: u64) -> u64 {
    let mut h = Sha256::new();
    h.update(b"sweep");
    h.update(base.to_le_bytes());
    h.update(index.to_le_bytes());
    let out: [u8; 32] = h.finalize().into();
    u64::from_le_bytes(out[..8].try_into().unwrap())
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use rand::Rng;

    #[test]
    fn first_event_gets_id_one() {
        let mut s: Scheduler<u32> = Scheduler::new();
        let id = s.schedule(VirtualTime(0), EntityId(1), "deliver", 1).unwrap();
        assert_eq!(id, EventId(1));
    }

    #[test]
    fn equal_times_fire_in_id_order() {
        let mut s: Scheduler<&str> = Scheduler::new();
        let a = s.schedule(VirtualTime(5), EntityId(1), "flap", "link-1").unwrap();
        let b = s.schedule(VirtualTime(5), EntityId(2), "flap", "link-2").unwrap();
        let mut order = vec![];
        s.run_until(VirtualTime(10), |_, ev| order.push(ev.id));
        assert_eq!(order, vec![a, b]);
    }

    #[test]
    fn scheduling_in_the_past_is_rejected() {
        let mut s: Scheduler<()> = Scheduler::new();
        s.run_until(VirtualTime(4), |_, _| {});
        let err = s.schedule(VirtualTime(3), EntityId(0), "x", ()).unwrap_err();
        assert_eq!(
            err,
            KernelError::CausalityViolation {
                at: VirtualTime(3),
                now: VirtualTime(4)
            }
        );
    }

    #[test]
    fn run_until_on_empty_queue() {
        let mut s: Scheduler<()> = Scheduler::new();
        assert_eq!(s.run_until(VirtualTime(100), |_, _| {}), 0);
        assert_eq!(s.now(), VirtualTime(100));
    }

    #[test]
    fn run_until_fires_inclusive_in_order() {
        let mut s: Scheduler<u8> = Scheduler::new();
        s.schedule(VirtualTime(2), EntityId(0), "b", 1).unwrap();
        s.schedule(VirtualTime(1), EntityId(0), "a", 0).unwrap();
        s.schedule(VirtualTime(2), EntityId(0), "c", 2).unwrap();
        s.schedule(VirtualTime(3), EntityId(0), "d", 3).unwrap();
        let mut seen = vec![];
        let n = s.run_until(VirtualTime(2), |_, ev| seen.push(ev.payload));
        assert_eq!(n, 3);
        assert_eq!(seen, vec![0, 1, 2]);
        assert_eq!(s.pending(), 1);
    }

    #[test]
    fn handlers_can_schedule_at_now() {
        let mut s: Scheduler<u8> = Scheduler::traced();
        s.schedule(VirtualTime(1), EntityId(0), "a", 0).unwrap();
        let n = s.drain(|s, ev| {
            if ev.payload < 3 {
                s.schedule_in(VirtualTime(0), EntityId(0), "a", ev.payload + 1);
            }
        });
        assert_eq!(n, 4);
        let ats: Vec<u64> = s.trace().iter().map(|t| t.at).collect();
        assert_eq!(ats, vec![1, 1, 1, 1]);
    }

    #[test]
    fn same_seed_and_label_repeat() {
        let mut a = rng_stream(42, "flaps");
        let mut b = rng_stream(42, "flaps");
        let xs: Vec<u64> = (0..100).map(|_| a.random()).collect();
        let ys: Vec<u64> = (0..100).map(|_| b.random()).collect();
        assert_eq!(xs, ys);
    }

    #[test]
    fn labels_separate_streams() {
        let mut a = rng_stream(42, "flaps");
        let mut b = rng_stream(42, "workload");
        let xs: Vec<u64> = (0..100).map(|_| a.random()).collect();
        let ys: Vec<u64> = (0..100).map(|_| b.random()).collect();
        assert_ne!(xs, ys);
    }

    #[test]
    fn uniform_mean_is_centered() {
        let mut r = rng_stream(42, "uniform");
        let n = 100_000;
        let mean: f64 = (0..n).map(|_| r.random::<f64>()).sum::<f64>() / n as f64;
        assert!((0.495..=0.505).contains(&mean), "mean {mean}");
    }

    #[test]
    fn derived_seeds_differ_by_index() {
        assert_ne!(derive_seed(7, 0), derive_seed(7, 1));
        assert_eq!(derive_seed(7, 3), derive_seed(7, 3));
    }
}
