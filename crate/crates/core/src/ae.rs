//! The bilateral link.
//!
//! Both peers run the same state machine. A transfer is a three-hop exchange
//! over the medium:
//!
//! 1. `Propose(t)` reaches the responder, which moves to `Reflected` and
//!    echoes `Reflect(t)`.
//! 2. `Reflect(t)` reaches the initiator, which moves to `Committed`; only now
//!    is the token delivered in the ledger. It sends `Confirm(t)`.
//! 3. `Confirm(t)` reaches the responder and both sides return to idle.
//!
//! Either side may initiate; each side has one outgoing and one incoming
//! role, so one transfer may be outstanding per direction. Anything short of
//! a commit can be reversed, restoring both peers' digests exactly. A
//! disturbance drops whatever is on the medium and puts both peers into
//! recovery, where every in-flight token is resolved with one rule:
//! delivered iff the initiator observed the reflection (or rejected, if the
//! responder refused it), otherwise reversed.

use alloc::collections::{BTreeMap, BTreeSet, VecDeque};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use sha2::{Digest as _, Sha256};
use thiserror::Error;

use crate::kernel::VirtualTime;
use crate::ledger::{Ledger, LedgerError, Lifecycle};
use crate::{Digest, LinkId, NodeId, TokenId};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Side {
    A,
    B,
}

impl Side {
    pub fn other(self) -> Side {
        match self {
            Side::A => Side::B,
            Side::B => Side::A,
        }
    }

    pub fn index(self) -> usize {
        match self {
            Side::A => 0,
            Side::B => 1,
        }
    }

    pub const BOTH: [Side; 2] = [Side::A, Side::B];
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Phase {
    Idle,
    Proposed,
    Reflected,
    Committed,
    Reversing,
    Recovering,
    Disconnected,
}

impl Phase {
    fn code(self) -> u8 {
        self as u8
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Frame {
    Propose(TokenId),
    Reflect(TokenId),
    Confirm(TokenId),
    Refuse(TokenId),
}

impl Frame {
    pub fn token(self) -> TokenId {
        match self {
            Frame::Propose(t) | Frame::Reflect(t) | Frame::Confirm(t) | Frame::Refuse(t) => t,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
struct InFlight {
    seq: u64,
    frame: Frame,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Fate {
    Delivered,
    Rejected,
}

/// One direction of a peer's participation: the outgoing transfer it
/// initiated, or the incoming one it is responding to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Role {
    pub phase: Phase,
    pub held: Option<TokenId>,
}

impl Role {
    const IDLE: Role = Role {
        phase: Phase::Idle,
        held: None,
    };

    fn holding(phase: Phase, token: TokenId) -> Role {
        Role {
            phase,
            held: Some(token),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct PeerState {
    pub node: NodeId,
    /// `Idle` while operational, else `Recovering` or `Disconnected`.
    pub condition: Phase,
    pub sending: Role,
    pub receiving: Role,
    /// Token this peer committed as initiator, until the confirm lands.
    pub committed: Option<TokenId>,
    pub expected_deadline: Option<VirtualTime>,
    pub last_heard: VirtualTime,
    pub quiescent_snapshot: Digest,
    fates: BTreeMap<TokenId, Fate>,
    /// Order-independent sum of per-entry hashes of `fates`, so the digest
    /// does not rehash the whole table.
    fates_sum: [u64; 4],
    /// Latest token proposed to this peer; the only one a peer can still
    /// hold in flight toward it.
    last_incoming: Option<TokenId>,
    refuse: BTreeSet<TokenId>,
}

fn fate_entry_hash(t: TokenId, f: Fate) -> [u64; 4] {
    let mut h = Sha256::new();
    h.update(t.0.to_le_bytes());
    h.update([f as u8]);
    let b: [u8; 32] = h.finalize().into();
    core::array::from_fn(|i| u64::from_le_bytes(b[i * 8..i * 8 + 8].try_into().unwrap()))
}

impl PeerState {
    fn new(node: NodeId) -> Self {
        let mut p = PeerState {
            node,
            condition: Phase::Idle,
            sending: Role::IDLE,
            receiving: Role::IDLE,
            committed: None,
            expected_deadline: None,
            last_heard: VirtualTime::ZERO,
            quiescent_snapshot: Digest::ZERO,
            fates: BTreeMap::new(),
            fates_sum: [0; 4],
            last_incoming: None,
            refuse: BTreeSet::new(),
        };
        p.quiescent_snapshot = p.digest();
        p
    }

    /// Hash over both roles and the fate table.
    pub fn digest(&self) -> Digest {
        let mut h = Sha256::new();
        for role in [self.sending, self.receiving] {
            h.update([role.phase.code()]);
            match role.held {
                Some(t) => {
                    h.update([1]);
                    h.update(t.0.to_le_bytes());
                }
                None => h.update([0]),
            }
        }
        for w in self.fates_sum {
            h.update(w.to_le_bytes());
        }
        Digest(h.finalize().into())
    }

    fn set_fate(&mut self, t: TokenId, f: Fate) {
        if let Some(old) = self.fates.insert(t, f) {
            let o = fate_entry_hash(t, old);
            for (s, x) in self.fates_sum.iter_mut().zip(o) {
                *s = s.wrapping_sub(x);
            }
        }
        let n = fate_entry_hash(t, f);
        for (s, x) in self.fates_sum.iter_mut().zip(n) {
            *s = s.wrapping_add(x);
        }
    }

    pub fn fate(&self, token: TokenId) -> Option<Fate> {
        self.fates.get(&token).copied()
    }

    pub fn fates(&self) -> &BTreeMap<TokenId, Fate> {
        &self.fates
    }

    pub fn roles_idle(&self) -> bool {
        self.sending == Role::IDLE && self.receiving == Role::IDLE
    }

    fn settle_if_quiescent(&mut self) {
        if self.roles_idle() {
            self.quiescent_snapshot = self.digest();
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TransferId(pub u64);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Transfer {
    pub id: TransferId,
    pub token: TokenId,
    pub initiator: Side,
    /// Peer digests `[a, b]` just before the transfer started.
    pub pre_digests: [Digest; 2],
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AeConfig {
    /// Liveness token cadence on an otherwise idle link.
    pub cadence: VirtualTime,
    /// Disconnection is declared after this many silent cadences.
    pub deadline_multiplier: u32,
}

impl Default for AeConfig {
    fn default() -> Self {
        AeConfig {
            cadence: VirtualTime::from_millis(1),
            deadline_multiplier: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AeError {
    #[error("{side:?} already has an outstanding transfer")]
    Busy { side: Side },
    #[error("{side:?} is not operational ({condition:?})")]
    NotOperational { side: Side, condition: Phase },
    #[error("no frame pending toward {0:?}")]
    NoPendingFrame(Side),
    #[error("protocol violation: {frame:?} arrived at {receiver:?} in {phase:?}")]
    ProtocolViolation {
        frame: Frame,
        receiver: Side,
        phase: Phase,
    },
    #[error("transfer {0:?} is not outstanding")]
    UnknownTransfer(TransferId),
    #[error("transfer {0:?} has committed and cannot be reversed")]
    IllegalReversal(TransferId),
    #[error(transparent)]
    Ledger(#[from] LedgerError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Hop {
    Propose,
    Reflect,
    Confirm,
    Refuse,
}

/// What one `ae_step` did.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct StepRecord {
    pub hop: Hop,
    pub token: TokenId,
    pub receiver: Side,
    pub before: Phase,
    pub after: Phase,
    /// Frame placed on the medium in response: `(sender side, sequence)`.
    pub emitted: Option<(Side, u64)>,
    /// The transfer finished; both peers are back to idle on this lane.
    pub completed: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Resolution {
    Delivered,
    Reversed,
    Rejected,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ReversalRecord {
    pub transfer: TransferId,
    pub token: TokenId,
    pub pre_digests: [Digest; 2],
    pub post_digests: [Digest; 2],
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct RecoveryTranscript {
    pub link: LinkId,
    pub at: VirtualTime,
    pub dropped_frames: usize,
    pub resolved: Vec<(TokenId, Resolution)>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct DetectionRecord {
    pub link: LinkId,
    pub at: VirtualTime,
    pub nodes: [NodeId; 2],
    pub deadlines: [VirtualTime; 2],
}

/// One endpoint's view of its in-flight roles, plus the fate it recorded for
/// the latest token proposed to it, as sent to whoever coordinates recovery.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Vote {
    pub side: Side,
    pub node: NodeId,
    pub sending: Role,
    pub committed: Option<TokenId>,
    pub receiving: Role,
    pub fates: BTreeMap<TokenId, Fate>,
}

/// A token in flight as reconstructed from both endpoints' votes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct InFlightView {
    pub token: TokenId,
    pub initiator: Side,
    pub initiator_phase: Phase,
    pub responder_phase: Phase,
    pub responder_fate: Option<Fate>,
}

/// The single resolution rule shared by link-local and triangle recovery.
pub fn resolution_rule(v: &InFlightView) -> Resolution {
    if v.responder_fate == Some(Fate::Rejected) {
        Resolution::Rejected
    } else if v.initiator_phase == Phase::Committed {
        Resolution::Delivered
    } else {
        Resolution::Reversed
    }
}

/// Reconstruct the in-flight set from the two votes, ordered by token id.
pub fn combine_votes(a: &Vote, b: &Vote) -> Vec<InFlightView> {
    let mut out = Vec::new();
    for (init, resp) in [(a, b), (b, a)] {
        let token = match init.sending.phase {
            Phase::Committed => init.committed,
            _ => init.sending.held,
        };
        if let Some(token) = token {
            let responder_phase = if resp.receiving.held == Some(token) {
                resp.receiving.phase
            } else {
                Phase::Idle
            };
            out.push(InFlightView {
                token,
                initiator: init.side,
                initiator_phase: init.sending.phase,
                responder_phase,
                responder_fate: resp.fates.get(&token).copied(),
            });
        }
    }
    out.sort_by_key(|v| v.token);
    out
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct AeLink {
    pub id: LinkId,
    peers: [PeerState; 2],
    medium: [VecDeque<InFlight>; 2],
    severed: bool,
    config: AeConfig,
    next_seq: u64,
    next_transfer: u64,
    outstanding: BTreeMap<TransferId, Transfer>,
    dropped: u64,
}

impl AeLink {
    pub fn new(id: LinkId, a: NodeId, b: NodeId, config: AeConfig) -> Self {
        AeLink {
            id,
            peers: [PeerState::new(a), PeerState::new(b)],
            medium: [VecDeque::new(), VecDeque::new()],
            severed: false,
            config,
            next_seq: 1,
            next_transfer: 1,
            outstanding: BTreeMap::new(),
            dropped: 0,
        }
    }

    pub fn config(&self) -> AeConfig {
        self.config
    }

    pub fn peer(&self, side: Side) -> &PeerState {
        &self.peers[side.index()]
    }

    pub fn side_of(&self, node: NodeId) -> Option<Side> {
        Side::BOTH.into_iter().find(|s| self.peer(*s).node == node)
    }

    pub fn digests(&self) -> [Digest; 2] {
        [self.peers[0].digest(), self.peers[1].digest()]
    }

    pub fn is_severed(&self) -> bool {
        self.severed
    }

    pub fn frames_in_flight(&self) -> usize {
        self.medium[0].len() + self.medium[1].len()
    }

    pub fn dropped_frames(&self) -> u64 {
        self.dropped
    }

    /// Sequence number of the next frame to arrive from `sender`.
    pub fn front_seq(&self, sender: Side) -> Option<u64> {
        self.medium[sender.index()].front().map(|f| f.seq)
    }

    pub fn outstanding(&self) -> impl Iterator<Item = &Transfer> {
        self.outstanding.values()
    }

    pub fn transfer_for(&self, token: TokenId) -> Option<&Transfer> {
        self.outstanding.values().find(|t| t.token == token)
    }

    /// Admission control hook: `side` will refuse `token` when proposed.
    pub fn refuse(&mut self, side: Side, token: TokenId) {
        self.peers[side.index()].refuse.insert(token);
    }

    pub fn can_initiate(&self, side: Side) -> bool {
        let p = self.peer(side);
        p.condition == Phase::Idle && p.sending == Role::IDLE
    }

    pub fn is_quiescent(&self) -> bool {
        self.frames_in_flight() == 0
            && self.outstanding.is_empty()
            && self
                .peers
                .iter()
                .all(|p| p.roles_idle() && p.condition == Phase::Idle)
    }

    /// Both peers record the same fate for every token.
    pub fn fates_agree(&self) -> bool {
        self.peers[0].fates == self.peers[1].fates
    }

    pub fn is_disconnected(&self) -> bool {
        self.peers.iter().all(|p| p.condition == Phase::Disconnected)
    }

    /// Note an arrival (data or liveness) at `side`.
    pub fn observe(&mut self, side: Side, now: VirtualTime) {
        let p = &mut self.peers[side.index()];
        if now > p.last_heard {
            p.last_heard = now;
        }
    }

    /// Physical disturbance begins: everything on the medium is lost. Returns
    /// the instant by which both peers will have missed their expected token.
    pub fn sever(&mut self, now: VirtualTime) -> VirtualTime {
        self.severed = true;
        let lost = self.frames_in_flight();
        self.dropped += lost as u64;
        self.medium[0].clear();
        self.medium[1].clear();
        let c = self.config.cadence.as_nanos().max(1);
        let last_tick = VirtualTime(now.as_nanos() / c * c);
        let window = VirtualTime(c * self.config.deadline_multiplier as u64);
        let mut latest = VirtualTime::ZERO;
        for p in &mut self.peers {
            let heard = p.last_heard.max(last_tick);
            let deadline = heard + window;
            p.expected_deadline = Some(deadline);
            latest = latest.max(deadline);
        }
        latest
    }

    pub fn restore(&mut self, _now: VirtualTime) {
        self.severed = false;
        for p in &mut self.peers {
            p.expected_deadline = None;
        }
    }

    fn push(&mut self, sender: Side, frame: Frame) -> Option<(Side, u64)> {
        if self.severed {
            self.dropped += 1;
            return None;
        }
        let seq = self.next_seq;
        self.next_seq += 1;
        self.medium[sender.index()].push_back(InFlight { seq, frame });
        Some((sender, seq))
    }

    /// Resolve the given in-flight tokens and return both roles to idle.
    /// Used by link-local recovery and by the triangle coordinator alike.
    pub fn apply_resolution(
        &mut self,
        views: &[InFlightView],
        ledger: &mut Ledger,
    ) -> Result<Vec<(TokenId, Resolution)>, AeError> {
        let mut resolved = Vec::with_capacity(views.len());
        for v in views {
            let r = resolution_rule(v);
            let init = v.initiator.index();
            let resp = v.initiator.other().index();
            match r {
                Resolution::Delivered => {
                    self.peers[resp].set_fate(v.token, Fate::Delivered);
                    self.peers[init].set_fate(v.token, Fate::Delivered);
                }
                Resolution::Rejected => {
                    ledger.transition(v.token, Lifecycle::Rejected)?;
                    self.peers[init].set_fate(v.token, Fate::Rejected);
                }
                Resolution::Reversed => {
                    ledger.transition(v.token, Lifecycle::Reversed)?;
                }
            }
            if self.peers[init].sending.held == Some(v.token)
                || self.peers[init].sending.phase == Phase::Committed
            {
                self.peers[init].sending = Role::IDLE;
            }
            if self.peers[resp].receiving.held == Some(v.token) {
                self.peers[resp].receiving = Role::IDLE;
            }
            if self.peers[init].committed == Some(v.token) {
                self.peers[init].committed = None;
            }
            self.outstanding.retain(|_, t| t.token != v.token);
            self.purge_token(v.token);
            resolved.push((v.token, r));
        }
        for p in &mut self.peers {
            p.settle_if_quiescent();
        }
        Ok(resolved)
    }

    /// What `side` would report to a recovery coordinator.
    pub fn vote(&self, side: Side) -> Vote {
        let p = self.peer(side);
        Vote {
            side,
            node: p.node,
            sending: p.sending,
            committed: p.committed,
            receiving: p.receiving,
            fates: p
                .last_incoming
                .and_then(|t| p.fate(t).map(|f| (t, f)))
                .into_iter()
                .collect(),
        }
    }

    fn purge_token(&mut self, token: TokenId) {
        for m in &mut self.medium {
            m.retain(|f| f.frame.token() != token);
        }
    }

    pub fn set_condition(&mut self, condition: Phase) {
        for p in &mut self.peers {
            p.condition = condition;
        }
    }
}

/// Start a transfer of `token` from `from`.
pub fn ae_initiate(
    link: &mut AeLink,
    ledger: &mut Ledger,
    from: Side,
    token: TokenId,
) -> Result<(TransferId, Option<(Side, u64)>), AeError> {
    let p = link.peer(from);
    if p.condition != Phase::Idle {
        return Err(AeError::NotOperational {
            side: from,
            condition: p.condition,
        });
    }
    if p.sending != Role::IDLE {
        return Err(AeError::Busy { side: from });
    }
    ledger.transition(token, Lifecycle::InTransit)?;
    let pre_digests = link.digests();
    let id = TransferId(link.next_transfer);
    link.next_transfer += 1;
    link.outstanding.insert(
        id,
        Transfer {
            id,
            token,
            initiator: from,
            pre_digests,
        },
    );
    link.peers[from.index()].sending = Role::holding(Phase::Proposed, token);
    let emitted = link.push(from, Frame::Propose(token));
    Ok((id, emitted))
}

/// Deliver the next frame travelling from `sender` and advance the exchange
/// by one hop.
pub fn ae_step(link: &mut AeLink, ledger: &mut Ledger, sender: Side) -> Result<StepRecord, AeError> {
    let receiver = sender.other();
    let InFlight { frame, .. } = link.medium[sender.index()]
        .pop_front()
        .ok_or(AeError::NoPendingFrame(receiver))?;
    let r = receiver.index();
    let violation = |phase| AeError::ProtocolViolation {
        frame,
        receiver,
        phase,
    };
    match frame {
        Frame::Propose(t) => {
            let before = link.peers[r].receiving.phase;
            if link.peers[r].receiving != Role::IDLE {
                return Err(violation(before));
            }
            link.peers[r].last_incoming = Some(t);
            if link.peers[r].refuse.contains(&t) {
                link.peers[r].set_fate(t, Fate::Rejected);
                link.peers[r].settle_if_quiescent();
                let emitted = link.push(receiver, Frame::Refuse(t));
                return Ok(StepRecord {
                    hop: Hop::Propose,
                    token: t,
                    receiver,
                    before,
                    after: Phase::Idle,
                    emitted,
                    completed: false,
                });
            }
            link.peers[r].receiving = Role::holding(Phase::Reflected, t);
            let emitted = link.push(receiver, Frame::Reflect(t));
            Ok(StepRecord {
                hop: Hop::Propose,
                token: t,
                receiver,
                before,
                after: Phase::Reflected,
                emitted,
                completed: false,
            })
        }
        Frame::Reflect(t) => {
            let before = link.peers[r].sending.phase;
            if link.peers[r].sending != Role::holding(Phase::Proposed, t) {
                return Err(violation(before));
            }
            ledger.transition(t, Lifecycle::Delivered)?;
            link.peers[r].sending = Role {
                phase: Phase::Committed,
                held: None,
            };
            link.peers[r].committed = Some(t);
            link.peers[r].set_fate(t, Fate::Delivered);
            let emitted = link.push(receiver, Frame::Confirm(t));
            Ok(StepRecord {
                hop: Hop::Reflect,
                token: t,
                receiver,
                before,
                after: Phase::Committed,
                emitted,
                completed: false,
            })
        }
        Frame::Confirm(t) => {
            let before = link.peers[r].receiving.phase;
            let s = sender.index();
            if link.peers[r].receiving != Role::holding(Phase::Reflected, t)
                || link.peers[s].sending.phase != Phase::Committed
            {
                return Err(violation(before));
            }
            link.peers[r].receiving = Role::IDLE;
            link.peers[r].set_fate(t, Fate::Delivered);
            link.peers[s].sending = Role::IDLE;
            link.peers[s].committed = None;
            link.outstanding.retain(|_, x| x.token != t);
            link.peers[r].settle_if_quiescent();
            link.peers[s].settle_if_quiescent();
            Ok(StepRecord {
                hop: Hop::Confirm,
                token: t,
                receiver,
                before,
                after: Phase::Idle,
                emitted: None,
                completed: true,
            })
        }
        Frame::Refuse(t) => {
            let before = link.peers[r].sending.phase;
            if link.peers[r].sending != Role::holding(Phase::Proposed, t) {
                return Err(violation(before));
            }
            ledger.transition(t, Lifecycle::Rejected)?;
            link.peers[r].sending = Role::IDLE;
            link.peers[r].set_fate(t, Fate::Rejected);
            link.outstanding.retain(|_, x| x.token != t);
            link.peers[r].settle_if_quiescent();
            Ok(StepRecord {
                hop: Hop::Refuse,
                token: t,
                receiver,
                before,
                after: Phase::Idle,
                emitted: None,
                completed: true,
            })
        }
    }
}

/// Abort an uncommitted transfer, restoring both peers to their state before
/// it began.
pub fn ae_reverse(
    link: &mut AeLink,
    ledger: &mut Ledger,
    transfer: TransferId,
) -> Result<ReversalRecord, AeError> {
    let t = *link
        .outstanding
        .get(&transfer)
        .ok_or(AeError::UnknownTransfer(transfer))?;
    let init = t.initiator.index();
    let resp = t.initiator.other().index();
    if link.peers[init].sending.phase != Phase::Proposed {
        return Err(AeError::IllegalReversal(transfer));
    }
    if link.peers[resp].fate(t.token) == Some(Fate::Rejected) {
        // Already refused; the refusal is a fate, not a partial state.
        return Err(AeError::IllegalReversal(transfer));
    }
    link.peers[init].sending = Role::holding(Phase::Reversing, t.token);
    if link.peers[resp].receiving.held == Some(t.token) {
        link.peers[resp].receiving = Role::holding(Phase::Reversing, t.token);
    }
    link.purge_token(t.token);
    ledger.transition(t.token, Lifecycle::Reversed)?;
    link.peers[init].sending = Role::IDLE;
    if link.peers[resp].receiving.held == Some(t.token) {
        link.peers[resp].receiving = Role::IDLE;
    }
    link.outstanding.remove(&transfer);
    for p in &mut link.peers {
        p.settle_if_quiescent();
    }
    Ok(ReversalRecord {
        transfer,
        token: t.token,
        pre_digests: t.pre_digests,
        post_digests: link.digests(),
    })
}

/// Recover from a disturbance: drop the medium, determine the in-flight set
/// from both peers, resolve every token and resume from a known state.
pub fn ae_on_disturbance(
    link: &mut AeLink,
    ledger: &mut Ledger,
    at: VirtualTime,
) -> Result<RecoveryTranscript, AeError> {
    link.set_condition(Phase::Recovering);
    let dropped_frames = link.frames_in_flight();
    link.dropped += dropped_frames as u64;
    link.medium[0].clear();
    link.medium[1].clear();
    let (a, b) = (link.vote(Side::A), link.vote(Side::B));
    let views = combine_votes(&a, &b);
    let resolved = link.apply_resolution(&views, ledger)?;
    link.set_condition(Phase::Idle);
    Ok(RecoveryTranscript {
        link: link.id,
        at,
        dropped_frames,
        resolved,
    })
}

/// Declare disconnection if the medium is severed and both peers have passed
/// their expected-token deadline.
pub fn ae_detect_disconnection(link: &mut AeLink, now: VirtualTime) -> Option<DetectionRecord> {
    if !link.severed {
        return None;
    }
    let mut deadlines = [VirtualTime::ZERO; 2];
    for (i, p) in link.peers.iter().enumerate() {
        match p.expected_deadline {
            Some(d) if d <= now => deadlines[i] = d,
            _ => return None,
        }
    }
    link.set_condition(Phase::Disconnected);
    Some(DetectionRecord {
        link: link.id,
        at: now,
        nodes: [link.peers[0].node, link.peers[1].node],
        deadlines,
    })
}
