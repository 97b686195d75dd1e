//! Forward-in-time-only baseline: unilateral send, timeout, retry, reset.
//!
//! The link is driven by its owner through effects: every call returns what
//! should be put on the medium and which timers to arm. Ground truth is
//! recorded from the simulator's omniscient view each time the sender forms
//! a belief (ack arrival or timeout); the protocol logic never reads it.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::vec;
use alloc::vec::Vec;

use serde::ser::SerializeStruct;
use serde::{Deserialize, Serialize, Serializer};
use thiserror::Error;

use crate::ae::Side;
use crate::kernel::{EntityId, Scheduler, VirtualTime};
use crate::ledger::{Ledger, LedgerError, Lifecycle};
use crate::{LinkId, TokenId};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitoConfig {
    pub timeout: VirtualTime,
    pub max_retries: u32,
    pub backoff_factor: f64,
    /// Consecutive timeouts on the link that force a reset.
    pub reset_threshold: u32,
    /// Per-retry increase in per-transfer disturbance probability.
    pub amplification_coefficient: f64,
}

impl Default for FitoConfig {
    fn default() -> Self {
        FitoConfig {
            timeout: VirtualTime::from_micros(40),
            max_retries: 5,
            backoff_factor: 2.0,
            reset_threshold: 8,
            amplification_coefficient: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FitoError {
    #[error("timeout must be positive")]
    ZeroTimeout,
    #[error("backoff factor must be at least 1, got {0}")]
    Backoff(f64),
    #[error("amplification coefficient must be finite and non-negative, got {0}")]
    Coefficient(f64),
    #[error("{0:?} already has a send outstanding")]
    Busy(Side),
    #[error(transparent)]
    Ledger(#[from] LedgerError),
}

impl FitoConfig {
    pub fn validate(&self) -> Result<(), FitoError> {
        if self.timeout == VirtualTime::ZERO {
            return Err(FitoError::ZeroTimeout);
        }
        if !(self.backoff_factor >= 1.0) || !self.backoff_factor.is_finite() {
            return Err(FitoError::Backoff(self.backoff_factor));
        }
        if !(self.amplification_coefficient >= 0.0) || !self.amplification_coefficient.is_finite()
        {
            return Err(FitoError::Coefficient(self.amplification_coefficient));
        }
        Ok(())
    }

    /// Timer for the given attempt: `timeout * backoff^attempt`.
    pub fn timer_for(&self, attempt: u32) -> VirtualTime {
        let scaled = self.timeout.as_nanos() as f64 * libm::pow(self.backoff_factor, attempt as f64);
        VirtualTime(scaled.min(u64::MAX as f64 / 2.0) as u64)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Truth {
    Delivered,
    NotDelivered,
    Unknowable,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Belief {
    Ok,
    Error,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundTruthRecord {
    pub token: TokenId,
    pub at: VirtualTime,
    pub truth: Truth,
    pub belief: Belief,
}

/// Counts of (truth, belief) pairs; rows are truth, columns belief.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub struct Census {
    pub cells: [[u64; 2]; 3],
}

impl Census {
    fn row(t: Truth) -> usize {
        match t {
            Truth::Delivered => 0,
            Truth::NotDelivered => 1,
            Truth::Unknowable => 2,
        }
    }

    fn col(b: Belief) -> usize {
        match b {
            Belief::Ok => 0,
            Belief::Error => 1,
        }
    }

    pub fn record(&mut self, truth: Truth, belief: Belief) {
        self.cells[Self::row(truth)][Self::col(belief)] += 1;
    }

    pub fn get(&self, truth: Truth, belief: Belief) -> u64 {
        self.cells[Self::row(truth)][Self::col(belief)]
    }

    pub fn total(&self) -> u64 {
        self.cells.iter().flatten().sum()
    }

    /// Uncertainty reported as failure: delivered-but-error plus
    /// unknowable-but-error.
    pub fn collapse(&self) -> u64 {
        self.get(Truth::Delivered, Belief::Error) + self.get(Truth::Unknowable, Belief::Error)
    }

    /// Everything other than (delivered, ok) and (not-delivered, error).
    pub fn off_diagonal(&self) -> u64 {
        self.total()
            - self.get(Truth::Delivered, Belief::Ok)
            - self.get(Truth::NotDelivered, Belief::Error)
    }

    pub fn merge(&mut self, other: &Census) {
        for r in 0..3 {
            for c in 0..2 {
                self.cells[r][c] += other.cells[r][c];
            }
        }
    }
}

impl Serialize for Census {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let mut st = s.serialize_struct("Census", 3)?;
        st.serialize_field("truth", &["delivered", "not-delivered", "unknowable"])?;
        st.serialize_field("belief", &["ok", "error"])?;
        st.serialize_field("counts", &self.cells)?;
        st.end()
    }
}

pub fn fito_collapse_census(records: &[GroundTruthRecord]) -> Census {
    let mut c = Census::default();
    for r in records {
        c.record(r.truth, r.belief);
    }
    c
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
pub enum FitoFrame {
    Data(TokenId),
    Ack(TokenId),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Effect {
    /// A frame left `from`. `seq` is `None` when it was lost on a severed medium.
    Transmit {
        seq: Option<u64>,
        from: Side,
        frame: FitoFrame,
        attempt: u32,
    },
    ArmTimer {
        side: Side,
        generation: u64,
        after: VirtualTime,
    },
    Retry {
        side: Side,
        token: TokenId,
        attempt: u32,
    },
    Duplicate {
        token: TokenId,
    },
    Reset {
        orphaned: Vec<TokenId>,
    },
    /// The sender on `side` is free for its next token.
    Settled {
        side: Side,
    },
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct FitoStats {
    pub sends: u64,
    pub retries: u64,
    pub timeouts: u64,
    pub duplicates: u64,
    pub resets: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct Attempt {
    token: TokenId,
    attempt: u32,
    generation: u64,
}

#[derive(Clone, Debug)]
pub struct FitoLink {
    pub id: LinkId,
    config: FitoConfig,
    severed: bool,
    next_seq: u64,
    next_generation: u64,
    in_flight: BTreeMap<u64, (Side, FitoFrame)>,
    current: [Option<Attempt>; 2],
    /// Tokens that have reached the receiver on each side.
    received: [BTreeSet<TokenId>; 2],
    consecutive_timeouts: u32,
    stats: FitoStats,
    truth: Vec<GroundTruthRecord>,
}

impl FitoLink {
    pub fn new(id: LinkId, config: FitoConfig) -> Self {
        FitoLink {
            id,
            config,
            severed: false,
            next_seq: 1,
            next_generation: 1,
            in_flight: BTreeMap::new(),
            current: [None, None],
            received: [BTreeSet::new(), BTreeSet::new()],
            consecutive_timeouts: 0,
            stats: FitoStats::default(),
            truth: Vec::new(),
        }
    }

    pub fn config(&self) -> &FitoConfig {
        &self.config
    }

    pub fn stats(&self) -> FitoStats {
        self.stats
    }

    pub fn ground_truth(&self) -> &[GroundTruthRecord] {
        &self.truth
    }

    pub fn is_idle(&self, side: Side) -> bool {
        self.current[side.index()].is_none()
    }

    pub fn is_severed(&self) -> bool {
        self.severed
    }

    pub fn sever(&mut self) {
        self.severed = true;
        self.in_flight.clear();
    }

    pub fn restore(&mut self) {
        self.severed = false;
    }

    fn transmit(&mut self, from: Side, frame: FitoFrame, attempt: u32) -> Effect {
        let seq = if self.severed {
            None
        } else {
            let s = self.next_seq;
            self.next_seq += 1;
            self.in_flight.insert(s, (from, frame));
            Some(s)
        };
        Effect::Transmit {
            seq,
            from,
            frame,
            attempt,
        }
    }

    fn arm(&mut self, side: Side, attempt: u32) -> (u64, Effect) {
        let generation = self.next_generation;
        self.next_generation += 1;
        (
            generation,
            Effect::ArmTimer {
                side,
                generation,
                after: self.config.timer_for(attempt),
            },
        )
    }

    /// Send `token` from `side`. FITO has no precondition on the medium.
    pub fn send(
        &mut self,
        side: Side,
        token: TokenId,
        ledger: &mut Ledger,
    ) -> Result<Vec<Effect>, FitoError> {
        if self.current[side.index()].is_some() {
            return Err(FitoError::Busy(side));
        }
        ledger.transition(token, Lifecycle::InTransit)?;
        self.stats.sends += 1;
        let tx = self.transmit(side, FitoFrame::Data(token), 0);
        let (generation, timer) = self.arm(side, 0);
        self.current[side.index()] = Some(Attempt {
            token,
            attempt: 0,
            generation,
        });
        Ok(vec![tx, timer])
    }

    /// A frame with sequence `seq` reaches the far end. Lost frames are ignored.
    pub fn on_arrival(
        &mut self,
        seq: u64,
        now: VirtualTime,
        ledger: &mut Ledger,
    ) -> Result<Vec<Effect>, FitoError> {
        let Some((from, frame)) = self.in_flight.remove(&seq) else {
            return Ok(Vec::new());
        };
        let to = from.other();
        let mut out = Vec::new();
        match frame {
            FitoFrame::Data(t) => {
                if self.received[to.index()].insert(t) {
                    ledger.transition(t, Lifecycle::Delivered)?;
                } else {
                    self.stats.duplicates += 1;
                    out.push(Effect::Duplicate { token: t });
                }
                out.push(self.transmit(to, FitoFrame::Ack(t), 0));
            }
            FitoFrame::Ack(t) => {
                if let Some(cur) = self.current[to.index()] {
                    if cur.token == t {
                        self.truth.push(GroundTruthRecord {
                            token: t,
                            at: now,
                            truth: Truth::Delivered,
                            belief: Belief::Ok,
                        });
                        self.current[to.index()] = None;
                        self.consecutive_timeouts = 0;
                        out.push(Effect::Settled { side: to });
                    }
                }
            }
        }
        Ok(out)
    }

    fn truth_of(&self, token: TokenId, receiver: Side) -> Truth {
        if self.received[receiver.index()].contains(&token) {
            Truth::Delivered
        } else if self
            .in_flight
            .values()
            .any(|(_, f)| *f == FitoFrame::Data(token))
        {
            Truth::Unknowable
        } else {
            Truth::NotDelivered
        }
    }

    pub fn on_timeout(
        &mut self,
        side: Side,
        generation: u64,
        now: VirtualTime,
        ledger: &mut Ledger,
    ) -> Result<Vec<Effect>, FitoError> {
        let Some(cur) = self.current[side.index()] else {
            return Ok(Vec::new());
        };
        if cur.generation != generation {
            return Ok(Vec::new());
        }
        let truth = self.truth_of(cur.token, side.other());
        self.truth.push(GroundTruthRecord {
            token: cur.token,
            at: now,
            truth,
            belief: Belief::Error,
        });
        self.stats.timeouts += 1;
        self.consecutive_timeouts += 1;
        if cur.attempt >= self.config.max_retries
            || self.consecutive_timeouts >= self.config.reset_threshold
        {
            return self.reset(ledger);
        }
        let attempt = cur.attempt + 1;
        self.stats.retries += 1;
        let mut out = vec![Effect::Retry {
            side,
            token: cur.token,
            attempt,
        }];
        out.push(self.transmit(side, FitoFrame::Data(cur.token), attempt));
        let (generation, timer) = self.arm(side, attempt);
        out.push(timer);
        self.current[side.index()] = Some(Attempt {
            token: cur.token,
            attempt,
            generation,
        });
        Ok(out)
    }

    /// Smash and restart: drop link state. Tokens the far end never received
    /// are orphaned in the ledger.
    fn reset(&mut self, ledger: &mut Ledger) -> Result<Vec<Effect>, FitoError> {
        self.stats.resets += 1;
        self.in_flight.clear();
        self.consecutive_timeouts = 0;
        let mut orphaned = Vec::new();
        let mut settled = Vec::new();
        for side in Side::BOTH {
            if let Some(cur) = self.current[side.index()].take() {
                if !self.received[side.other().index()].contains(&cur.token) {
                    ledger.orphan(cur.token)?;
                    orphaned.push(cur.token);
                }
                settled.push(Effect::Settled { side });
            }
        }
        let mut out = vec![Effect::Reset { orphaned }];
        out.extend(settled);
        Ok(out)
    }
}

/// Outcome of a single isolated send.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SendOutcome {
    pub truth: Truth,
    pub belief: Belief,
    pub retries: u64,
    pub duplicates: u64,
    pub reset: bool,
    pub records: Vec<GroundTruthRecord>,
}

enum OneShot {
    Arrive(u64),
    Timeout(Side, u64),
    Sever,
    Restore,
}

/// Send one token from A to B over a link with one-way `latency`, with the
/// medium severed during each `(start, duration)` window, and run to
/// completion.
pub fn fito_send(
    config: FitoConfig,
    latency: VirtualTime,
    severs: &[(VirtualTime, VirtualTime)],
    token: TokenId,
    ledger: &mut Ledger,
) -> Result<SendOutcome, FitoError> {
    let mut link = FitoLink::new(LinkId(0), config);
    let mut sim: Scheduler<OneShot> = Scheduler::new();
    for &(start, dur) in severs {
        sim.schedule_in(start, EntityId(0), "flap.sever", OneShot::Sever);
        sim.schedule_in(start + dur, EntityId(0), "flap.restore", OneShot::Restore);
    }
    let mut pending = link.send(Side::A, token, ledger)?;
    let mut reset = false;
    let mut err = None;
    loop {
        for e in pending.drain(..) {
            match e {
                Effect::Transmit { seq: Some(s), .. } => {
                    sim.schedule_in(latency, EntityId(0), "fito.arrive", OneShot::Arrive(s));
                }
                Effect::ArmTimer {
                    side,
                    generation,
                    after,
                } => {
                    sim.schedule_in(after, EntityId(0), "fito.timeout", OneShot::Timeout(side, generation));
                }
                Effect::Reset { .. } => reset = true,
                _ => {}
            }
        }
        let Some(ev) = sim.pop_due(VirtualTime::MAX) else {
            break;
        };
        let now = sim.now();
        let res = match ev.payload {
            OneShot::Arrive(s) => link.on_arrival(s, now, ledger),
            OneShot::Timeout(side, g) => link.on_timeout(side, g, now, ledger),
            OneShot::Sever => {
                link.sever();
                Ok(Vec::new())
            }
            OneShot::Restore => {
                link.restore();
                Ok(Vec::new())
            }
        };
        match res {
            Ok(v) => pending = v,
            Err(e) => {
                err = Some(e);
                break;
            }
        }
    }
    if let Some(e) = err {
        return Err(e);
    }
    let records = link.truth.clone();
    let last = records.last().copied();
    let delivered = link.received[Side::B.index()].contains(&token);
    Ok(SendOutcome {
        truth: if delivered {
            Truth::Delivered
        } else {
            Truth::NotDelivered
        },
        belief: last.map(|r| r.belief).unwrap_or(Belief::Error),
        retries: link.stats.retries,
        duplicates: link.stats.duplicates,
        reset,
        records,
    })
}

/// Per-link per-transfer disturbance probabilities with linear feedback from
/// retry traffic.
#[derive(Clone, Debug, PartialEq)]
pub struct Amplifier {
    pub base: f64,
    pub coefficient: f64,
    rates: Vec<f64>,
}

impl Amplifier {
    pub fn new(links: usize, base: f64, coefficient: f64) -> Self {
        Amplifier {
            base,
            coefficient,
            rates: vec![base.clamp(0.0, 1.0); links],
        }
    }

    pub fn rates(&self) -> &[f64] {
        &self.rates
    }

    pub fn rate(&self, link: usize) -> f64 {
        self.rates[link]
    }
}

/// Close one window of the amplification loop: each link's disturbance
/// probability becomes `base + coefficient * retries in the window`.
pub fn fito_amplification_step<'a>(amp: &'a mut Amplifier, window_retries: &[u64]) -> &'a [f64] {
    for (rate, &r) in amp.rates.iter_mut().zip(window_retries) {
        *rate = (amp.base + amp.coefficient * r as f64).clamp(0.0, 1.0);
    }
    &amp.rates
}
