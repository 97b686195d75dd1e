//! The network driver: links on a topology, a transfer workload, flaps and
//! per-attempt disturbances, all on one event queue.

use alloc::collections::{BTreeMap, BTreeSet, VecDeque};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use super::{HarnessError, MetricsRow, RunKind, Scenario, TopologySpec};
use crate::ae::{
    ae_detect_disconnection, ae_initiate, ae_on_disturbance, ae_step, AeLink, DetectionRecord,
    Hop, Phase, RecoveryTranscript, Resolution, Side,
};
use crate::fito::{fito_amplification_step, Amplifier, Belief, Census, Effect, FitoFrame, FitoLink, Truth};
use crate::flap::{inject, DisturbancePayload, FlapSchedule};
use crate::kernel::{derive_seed, rng_stream, EntityId, Scheduler, TraceEntry, VirtualTime};
use crate::ledger::{ConservationReport, Ledger, Token};
use crate::sync::{generate_workload, measure_information_loss, ProjectionKind};
use crate::topology::{
    build_grid, recover_link, select_tm, Edge, OctavalentGrid, Triangle, TwoPcOutcome,
    TwoPcTranscript,
};
use crate::{LinkId, NodeId, TokenId};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Ev {
    Create,
    AeArrive { link: u32, sender: Side, seq: u64 },
    FitoArrive { link: u32, seq: u64 },
    FitoTimeout { link: u32, side: Side, generation: u64 },
    Sever { link: u32 },
    Restore { link: u32 },
    Liveness { link: u32 },
    Window,
}

impl DisturbancePayload for Ev {
    fn sever(link: u32) -> Self {
        Ev::Sever { link }
    }
    fn restore(link: u32) -> Self {
        Ev::Restore { link }
    }
}

#[derive(Clone, Debug)]
enum Proto {
    Ae(AeLink),
    Fito(FitoLink),
}

#[derive(Clone, Debug)]
struct NetLink {
    proto: Proto,
    edge: Edge,
    queue: [VecDeque<TokenId>; 2],
    down: u32,
}

enum Shape {
    Ensemble,
    Triangle(Triangle),
    Grid(OctavalentGrid),
}

#[derive(Clone, Debug, Default)]
pub struct RunReport {
    pub kind: Option<RunKind>,
    pub row: MetricsRow,
    pub trace: Vec<TraceEntry>,
    pub transcripts: Vec<TwoPcTranscript>,
    pub recoveries: Vec<RecoveryTranscript>,
    pub detections: Vec<DetectionRecord>,
    pub ledger: ConservationReport,
    pub census: Census,
    /// Invariant assertions that failed during the run.
    pub violations: Vec<String>,
}

struct Net<'a> {
    s: &'a Scenario,
    kind: RunKind,
    sim: Scheduler<Ev>,
    ledger: Ledger,
    links: Vec<NetLink>,
    by_edge: BTreeMap<Edge, u32>,
    shape: Shape,
    amp: Amplifier,
    window_retries: Vec<u64>,
    windows: u64,
    windowed_retries: u64,
    created: u64,
    workload_rng: crate::kernel::SimRng,
    census: Census,
    retries: u64,
    escalations: u64,
    /// How many times each bilateral token has been initiated.
    starts: BTreeMap<TokenId, u32>,
    transcripts: Vec<TwoPcTranscript>,
    recoveries: Vec<RecoveryTranscript>,
    detections: Vec<DetectionRecord>,
    violations: Vec<String>,
}

const NET: EntityId = EntityId(0);

fn entity(link: u32) -> EntityId {
    EntityId(link as u64 + 1)
}

impl<'a> Net<'a> {
    fn new(s: &'a Scenario, kind: RunKind) -> Result<Self, HarnessError> {
        let (shape, edges): (Shape, Vec<Edge>) = match s.topology {
            TopologySpec::SingleLink => {
                let n = s.link_count()?;
                let edges = (0..n)
                    .map(|i| Edge::new(NodeId(2 * i), NodeId(2 * i + 1)))
                    .collect();
                (Shape::Ensemble, edges)
            }
            TopologySpec::Triangle => {
                let t = Triangle {
                    nodes: [NodeId(0), NodeId(1), NodeId(2)],
                };
                (Shape::Triangle(t), t.edges().to_vec())
            }
            TopologySpec::Grid { rows, cols } => {
                let g = build_grid(rows, cols)?;
                let e = g.links().to_vec();
                (Shape::Grid(g), e)
            }
        };
        let links: Vec<NetLink> = edges
            .iter()
            .enumerate()
            .map(|(i, e)| NetLink {
                proto: match kind {
                    RunKind::Ae => Proto::Ae(AeLink::new(LinkId(i as u32), e.0, e.1, s.ae)),
                    RunKind::Fito => Proto::Fito(FitoLink::new(LinkId(i as u32), s.fito)),
                },
                edge: *e,
                queue: [VecDeque::new(), VecDeque::new()],
                down: 0,
            })
            .collect();
        let by_edge = edges
            .iter()
            .enumerate()
            .map(|(i, e)| (*e, i as u32))
            .collect();
        let n = links.len();
        let coefficient = match kind {
            RunKind::Ae => 0.0,
            RunKind::Fito => s.fito.amplification_coefficient,
        };
        Ok(Net {
            s,
            kind,
            sim: if s.trace {
                Scheduler::traced()
            } else {
                Scheduler::new()
            },
            ledger: Ledger::new(),
            links,
            by_edge,
            shape,
            amp: Amplifier::new(n, s.workload.disturbance_probability, coefficient),
            window_retries: vec![0; n],
            windows: 0,
            windowed_retries: 0,
            created: 0,
            workload_rng: rng_stream(s.seed, "workload"),
            census: Census::default(),
            retries: 0,
            escalations: 0,
            starts: BTreeMap::new(),
            transcripts: Vec::new(),
            recoveries: Vec::new(),
            detections: Vec::new(),
            violations: Vec::new(),
        })
    }

    fn latency(&self) -> VirtualTime {
        self.s.workload.latency
    }

    fn note(&mut self, link: u32, kind: &'static str, detail: impl FnOnce() -> String) {
        if self.sim.is_tracing() {
            let d = detail();
            self.sim.note(entity(link), kind, d);
        }
    }

    fn sched(&mut self, delay: VirtualTime, target: EntityId, kind: &'static str, ev: Ev) {
        self.sim.schedule_in(delay, target, kind, ev);
    }

    fn run(mut self, schedule: &FlapSchedule) -> Result<RunReport, HarnessError> {
        inject(schedule, &mut self.sim, self.links.len() as u32, entity)?;
        if self.s.workload.transfers > 0 {
            self.sched(VirtualTime::ZERO, NET, "workload.create", Ev::Create);
        }
        let w = self.s.workload.window;
        if w <= self.s.horizon {
            self.sched(w, NET, "amp.window", Ev::Window);
        }
        while let Some(ev) = self.sim.pop_due(VirtualTime::MAX) {
            self.handle(ev.payload)?;
        }
        self.finish(schedule)
    }

    fn handle(&mut self, ev: Ev) -> Result<(), HarnessError> {
        match ev {
            Ev::Create => self.create(),
            Ev::AeArrive { link, sender, seq } => self.ae_arrive(link, sender, seq),
            Ev::FitoArrive { link, seq } => {
                let now = self.sim.now();
                let l = &mut self.links[link as usize];
                let Proto::Fito(f) = &mut l.proto else {
                    unreachable!()
                };
                let effects = f.on_arrival(seq, now, &mut self.ledger)?;
                self.fito_effects(link, effects);
            }
            Ev::FitoTimeout {
                link,
                side,
                generation,
            } => {
                let now = self.sim.now();
                let l = &mut self.links[link as usize];
                let Proto::Fito(f) = &mut l.proto else {
                    unreachable!()
                };
                let effects = f.on_timeout(side, generation, now, &mut self.ledger)?;
                self.fito_effects(link, effects);
            }
            Ev::Sever { link } => self.sever(link),
            Ev::Restore { link } => self.restore(link),
            Ev::Liveness { link } => self.liveness(link),
            Ev::Window => self.window(),
        }
        Ok(())
    }

    fn create(&mut self) {
        self.created += 1;
        let id = TokenId(self.created);
        let link = self.workload_rng.random_range(0..self.links.len() as u32);
        let side = if self.workload_rng.random::<bool>() {
            Side::B
        } else {
            Side::A
        };
        let l = &mut self.links[link as usize];
        let origin = match side {
            Side::A => l.edge.0,
            Side::B => l.edge.1,
        };
        self.ledger
            .insert(Token::new(id, origin, &id.0.to_le_bytes()))
            .expect("fresh token ids");
        l.queue[side.index()].push_back(id);
        if self.created < self.s.workload.transfers {
            self.sched(self.s.workload.interval, NET, "workload.create", Ev::Create);
        }
        self.try_start(link, side);
    }

    /// Per-attempt disturbance draw, keyed by token and attempt so both
    /// protocols see the same draw for the same first attempt.
    fn noise(&mut self, link: u32, token: TokenId, attempt: u32) {
        let p = self.amp.rate(link as usize);
        if p <= 0.0 {
            return;
        }
        let mut r = rng_stream(derive_seed(self.s.seed, (token.0 << 8) | attempt.min(255) as u64), "noise");
        let u: f64 = r.random();
        if u >= p {
            return;
        }
        let span = 2 * self.latency().as_nanos();
        let offset = VirtualTime(r.random_range(0..span.max(1)));
        let e = entity(link);
        self.sched(offset, e, "noise.sever", Ev::Sever { link });
        self.sched(offset + self.s.workload.noise_duration, e, "noise.restore", Ev::Restore { link });
    }

    fn try_start(&mut self, link: u32, side: Side) {
        let l = &mut self.links[link as usize];
        match &mut l.proto {
            Proto::Ae(a) => {
                if !a.can_initiate(side) {
                    return;
                }
                let Some(t) = l.queue[side.index()].pop_front() else {
                    return;
                };
                match ae_initiate(a, &mut self.ledger, side, t) {
                    Ok((_, emitted)) => {
                        if let Some((sender, seq)) = emitted {
                            let lat = self.latency();
                            self.sched(lat, entity(link), "ae.frame", Ev::AeArrive { link, sender, seq });
                        }
                        let n = self.starts.entry(t).or_insert(0);
                        let attempt = *n;
                        *n += 1;
                        self.noise(link, t, attempt);
                    }
                    Err(e) => {
                        l.queue[side.index()].push_front(t);
                        self.violations.push(format!("link {link}: initiate failed: {e}"));
                    }
                }
            }
            Proto::Fito(f) => {
                if !f.is_idle(side) {
                    return;
                }
                let Some(t) = l.queue[side.index()].pop_front() else {
                    return;
                };
                match f.send(side, t, &mut self.ledger) {
                    Ok(effects) => self.fito_effects(link, effects),
                    Err(e) => {
                        l.queue[side.index()].push_front(t);
                        self.violations.push(format!("link {link}: send failed: {e}"));
                    }
                }
            }
        }
    }

    fn ae_mut(&mut self, link: u32) -> &mut AeLink {
        match &mut self.links[link as usize].proto {
            Proto::Ae(a) => a,
            Proto::Fito(_) => unreachable!("ae event on a fito link"),
        }
    }

    fn ae_arrive(&mut self, link: u32, sender: Side, seq: u64) {
        let now = self.sim.now();
        let Proto::Ae(a) = &mut self.links[link as usize].proto else {
            unreachable!("ae event on a fito link")
        };
        if a.front_seq(sender) != Some(seq) {
            // lost to a disturbance, or purged by recovery
            return;
        }
        a.observe(sender.other(), now);
        let step = match ae_step(a, &mut self.ledger, sender) {
            Ok(s) => s,
            Err(e) => {
                self.violations.push(format!("link {link}: {e}"));
                return;
            }
        };
        if let Some((from, seq)) = step.emitted {
            let lat = self.latency();
            self.sched(lat, entity(link), "ae.frame", Ev::AeArrive { link, sender: from, seq });
        }
        match step.hop {
            Hop::Reflect => self.census.record(Truth::Delivered, Belief::Ok),
            Hop::Refuse => self.census.record(Truth::NotDelivered, Belief::Error),
            _ => {}
        }
        if step.completed {
            self.try_start(link, Side::A);
            self.try_start(link, Side::B);
        }
    }

    fn fito_effects(&mut self, link: u32, effects: Vec<Effect>) {
        let lat = self.latency();
        for e in effects {
            match e {
                Effect::Transmit {
                    seq,
                    frame,
                    attempt,
                    ..
                } => {
                    if let Some(seq) = seq {
                        self.sched(lat, entity(link), "fito.frame", Ev::FitoArrive { link, seq });
                    }
                    if let FitoFrame::Data(t) = frame {
                        self.noise(link, t, attempt);
                    }
                }
                Effect::ArmTimer {
                    side,
                    generation,
                    after,
                } => self.sched(after, entity(link), "fito.timer", Ev::FitoTimeout {
                    link,
                    side,
                    generation,
                }),
                Effect::Retry { token, attempt, .. } => {
                    self.retries += 1;
                    self.window_retries[link as usize] += 1;
                    self.note(link, "fito.retry", || format!("token={token} attempt={attempt}"));
                }
                Effect::Duplicate { token } => {
                    self.note(link, "fito.duplicate", || format!("token={token}"));
                }
                Effect::Reset { orphaned } => {
                    self.note(link, "fito.reset", || format!("orphaned={}", orphaned.len()));
                }
                Effect::Settled { side } => self.try_start(link, side),
            }
        }
    }

    fn sever(&mut self, link: u32) {
        let now = self.sim.now();
        let l = &mut self.links[link as usize];
        l.down += 1;
        if l.down > 1 {
            return;
        }
        match &mut l.proto {
            Proto::Ae(a) => {
                let deadline = a.sever(now);
                let wait = deadline.saturating_sub(now);
                self.sched(wait, entity(link), "ae.liveness", Ev::Liveness { link });
            }
            Proto::Fito(f) => f.sever(),
        }
    }

    fn restore(&mut self, link: u32) {
        let now = self.sim.now();
        let l = &mut self.links[link as usize];
        l.down -= 1;
        if l.down > 0 {
            return;
        }
        match &mut l.proto {
            Proto::Ae(a) => {
                a.restore(now);
                let initiators = initiators(a);
                match ae_on_disturbance(a, &mut self.ledger, now) {
                    Ok(t) => {
                        if t.dropped_frames > 0 || !t.resolved.is_empty() {
                            self.note(link, "ae.recover", || {
                                format!("dropped={} resolved={}", t.dropped_frames, t.resolved.len())
                            });
                            self.requeue(link, &initiators, &t.resolved);
                            self.recoveries.push(t);
                        }
                    }
                    Err(e) => self.violations.push(format!("link {link}: recovery: {e}")),
                }
                self.try_start(link, Side::A);
                self.try_start(link, Side::B);
            }
            Proto::Fito(f) => f.restore(),
        }
    }

    /// Reversed tokens return to the front of their sender's queue.
    fn requeue(
        &mut self,
        link: u32,
        initiators: &BTreeMap<TokenId, Side>,
        resolved: &[(TokenId, Resolution)],
    ) {
        for &(t, r) in resolved.iter().rev() {
            match r {
                Resolution::Reversed => {
                    self.census.record(Truth::NotDelivered, Belief::Error);
                    let side = initiators.get(&t).copied().unwrap_or(Side::A);
                    self.links[link as usize].queue[side.index()].push_front(t);
                }
                Resolution::Rejected => self.census.record(Truth::NotDelivered, Belief::Error),
                Resolution::Delivered => {}
            }
        }
    }

    fn is_up(&self, e: Edge) -> bool {
        self.by_edge
            .get(&e)
            .is_some_and(|&i| self.links[i as usize].down == 0)
    }

    fn liveness(&mut self, link: u32) {
        let now = self.sim.now();
        let Some(rec) = ae_detect_disconnection(self.ae_mut(link), now) else {
            return;
        };
        self.note(link, "ae.disconnect", || format!("deadlines={:?}", rec.deadlines));
        self.detections.push(rec);
        let edge = self.links[link as usize].edge;
        let tri = match &self.shape {
            Shape::Ensemble => return,
            Shape::Triangle(t) => {
                let ok = t
                    .survivors(edge)
                    .is_some_and(|s| s.iter().all(|e| self.is_up(*e)));
                ok.then_some(*t)
            }
            Shape::Grid(g) => select_tm(g, edge, |e| self.is_up(e)),
        };
        let Some(tri) = tri else {
            self.escalate(link, edge);
            return;
        };
        let up: BTreeSet<Edge> = self
            .links
            .iter()
            .filter(|l| l.down == 0)
            .map(|l| l.edge)
            .collect();
        let Proto::Ae(a) = &mut self.links[link as usize].proto else {
            unreachable!("ae event on a fito link")
        };
        let initiators = initiators(a);
        match recover_link(&tri, edge, a, &mut self.ledger, |e, _| up.contains(&e)) {
            Ok(t) if t.outcome == TwoPcOutcome::Committed => {
                // Resolved but still physically down: no new transfers until
                // the medium returns.
                self.ae_mut(link).set_condition(Phase::Disconnected);
                if t.failed.touches(t.coordinator) {
                    self.violations
                        .push(format!("link {link}: coordinator {} is an endpoint", t.coordinator));
                }
                self.note(link, "tri.2pc", || {
                    format!(
                        "coordinator={} participants={},{} resolved={}",
                        t.coordinator,
                        t.participants.0,
                        t.participants.1,
                        t.resolved.len()
                    )
                });
                self.requeue(link, &initiators, &t.resolved);
                self.transcripts.push(t);
            }
            Ok(_) => self.escalate(link, edge),
            Err(e) => self.violations.push(format!("link {link}: 2pc: {e}")),
        }
    }

    fn escalate(&mut self, link: u32, edge: Edge) {
        self.escalations += 1;
        self.note(link, "tri.escalate", || format!("failed={}-{}", edge.0, edge.1));
    }

    fn window(&mut self) {
        self.windows += 1;
        self.windowed_retries += self.window_retries.iter().sum::<u64>();
        fito_amplification_step(&mut self.amp, &self.window_retries);
        self.window_retries.iter_mut().for_each(|r| *r = 0);
        let w = self.s.workload.window;
        if self.sim.now() + w <= self.s.horizon {
            self.sched(w, NET, "amp.window", Ev::Window);
        }
    }

    fn finish(mut self, schedule: &FlapSchedule) -> Result<RunReport, HarnessError> {
        let report = self.ledger.report();
        let mut census = self.census;
        let (mut duplicates, mut resets) = (0, 0);
        for (i, l) in self.links.iter().enumerate() {
            match &l.proto {
                Proto::Ae(a) => {
                    if !a.is_quiescent() {
                        self.violations.push(format!("link {i}: not quiescent after drain"));
                    }
                    if !a.fates_agree() {
                        self.violations.push(format!("link {i}: peers disagree on fates"));
                    }
                }
                Proto::Fito(f) => {
                    let st = f.stats();
                    duplicates += st.duplicates;
                    resets += st.resets;
                    for r in f.ground_truth() {
                        census.record(r.truth, r.belief);
                    }
                }
            }
        }
        if self.kind == RunKind::Ae {
            if let Err(e) = self.ledger.audit(true) {
                self.violations.push(e.to_string());
            }
            if self.retries != 0 {
                self.violations.push("bilateral link retried".into());
            }
            if census.off_diagonal() != 0 {
                self.violations.push("bilateral census has off-diagonal entries".into());
            }
        }
        let destroyed = match self.s.sync_params() {
            Some(params) => {
                let dag = generate_workload(&params)?;
                let kind = match self.kind {
                    RunKind::Ae => ProjectionKind::Bilateral,
                    RunKind::Fito => ProjectionKind::Lww,
                };
                measure_information_loss(&dag, kind, params.horizon()).destroyed
            }
            None => 0,
        };
        let mut row = MetricsRow {
            scenario: self.s.name.clone(),
            link_kind: self.kind.as_str().into(),
            flap_rate: self.s.flap_rate(),
            flaps: schedule.len() as u64,
            mean_inter_flap_ns: schedule.mean_inter_flap(),
            transfers: report.inserted,
            delivered: report.delivered,
            retries: self.retries,
            window_retries: if self.windows == 0 {
                0.0
            } else {
                self.windowed_retries as f64 / self.windows as f64
            },
            duplicates,
            resets,
            recoveries: (self.recoveries.len() + self.transcripts.len()) as u64,
            escalations: self.escalations,
            unaccounted_tokens: report.unaccounted,
            in_transit_tokens: report.in_transit,
            destroyed_versions: destroyed,
            violations: self.violations.len() as u64,
            ..MetricsRow::default()
        };
        row.set_census(&census);
        Ok(RunReport {
            kind: Some(self.kind),
            row,
            trace: self.sim.take_trace(),
            transcripts: self.transcripts,
            recoveries: self.recoveries,
            detections: self.detections,
            ledger: report,
            census,
            violations: self.violations,
        })
    }
}

fn initiators(a: &AeLink) -> BTreeMap<TokenId, Side> {
    a.outstanding().map(|t| (t.token, t.initiator)).collect()
}

/// One run of `kind` over the given flap schedule.
pub fn run_with_schedule(
    s: &Scenario,
    kind: RunKind,
    schedule: &FlapSchedule,
) -> Result<RunReport, HarnessError> {
    s.validate()?;
    Net::new(s, kind)?.run(schedule)
}
