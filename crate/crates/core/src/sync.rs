//! Sync histories as causal DAGs and what snapshot projections do to them.
//!
//! Concurrency is reachability only: two versions of a path are concurrent
//! when neither event reaches the other. Wallclock stamps are skewed per
//! device and are consulted only by last-writer-wins.

mod store;

pub use store::*;

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kernel::{rng_stream, VirtualTime};
use crate::Digest;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SyncEventId(pub u64);

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SyncOp {
    Create,
    Modify,
    Delete,
    /// The source side of a rename; the destination is a separate create
    /// whose parents include this event.
    Rename,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SyncEvent {
    pub id: SyncEventId,
    pub device: u32,
    pub op: SyncOp,
    pub path: String,
    /// `None` for tombstones (delete and rename source).
    pub content: Option<Digest>,
    pub parents: Vec<SyncEventId>,
    pub true_time: VirtualTime,
    /// True time plus the device's skew, in signed nanoseconds.
    pub wallclock: i64,
}

impl SyncEvent {
    pub fn is_tombstone(&self) -> bool {
        self.content.is_none()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SyncError {
    #[error("event ids must run 1..=n in order; position {pos} holds {found:?}")]
    BadId { pos: usize, found: SyncEventId },
    #[error("{event:?} names parent {parent:?} that is not earlier")]
    BadParent {
        event: SyncEventId,
        parent: SyncEventId,
    },
    #[error("{event:?} happens before its parent {parent:?}")]
    ParentLater {
        event: SyncEventId,
        parent: SyncEventId,
    },
    #[error("{0:?} content does not match its op")]
    ContentMismatch(SyncEventId),
    #[error("workload needs at least one device and one path")]
    EmptyWorkload,
}

/// A validated event DAG. Events are stored in id order and every parent
/// precedes its child, so the graph is acyclic by construction.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<SyncEvent>", into = "Vec<SyncEvent>")]
pub struct EventDag {
    events: Vec<SyncEvent>,
}

impl TryFrom<Vec<SyncEvent>> for EventDag {
    type Error = SyncError;

    fn try_from(events: Vec<SyncEvent>) -> Result<Self, SyncError> {
        EventDag::from_events(events)
    }
}

impl From<EventDag> for Vec<SyncEvent> {
    fn from(d: EventDag) -> Self {
        d.events
    }
}

impl EventDag {
    pub fn from_events(events: Vec<SyncEvent>) -> Result<Self, SyncError> {
        for (pos, e) in events.iter().enumerate() {
            if e.id != SyncEventId(pos as u64 + 1) {
                return Err(SyncError::BadId { pos, found: e.id });
            }
            let tomb = matches!(e.op, SyncOp::Delete | SyncOp::Rename);
            if tomb != e.content.is_none() {
                return Err(SyncError::ContentMismatch(e.id));
            }
            for &p in &e.parents {
                if p.0 == 0 || p >= e.id {
                    return Err(SyncError::BadParent {
                        event: e.id,
                        parent: p,
                    });
                }
                if events[p.0 as usize - 1].true_time > e.true_time {
                    return Err(SyncError::ParentLater {
                        event: e.id,
                        parent: p,
                    });
                }
            }
        }
        Ok(EventDag { events })
    }

    pub fn events(&self) -> &[SyncEvent] {
        &self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn get(&self, id: SyncEventId) -> Option<&SyncEvent> {
        self.events.get((id.0 as usize).checked_sub(1)?)
    }

    /// Events visible at `at`. Parents never happen after children, so this
    /// prefix is causally closed.
    pub fn visible(&self, at: VirtualTime) -> impl Iterator<Item = &SyncEvent> {
        self.events.iter().filter(move |e| e.true_time <= at)
    }

    pub fn reachability(&self) -> Reach {
        let mut r = Reach::with_capacity(self.events.len());
        for e in &self.events {
            r.push(&e.parents);
        }
        r
    }
}

/// Strict-ancestor bitsets, one per event.
#[derive(Clone, Debug, Default)]
pub struct Reach {
    anc: Vec<Vec<u64>>,
}

impl Reach {
    fn with_capacity(n: usize) -> Self {
        Reach {
            anc: Vec::with_capacity(n),
        }
    }

    fn push(&mut self, parents: &[SyncEventId]) {
        let idx = self.anc.len();
        let mut bits = vec![0u64; idx / 64 + 1];
        for p in parents {
            let pi = p.0 as usize - 1;
            for (w, src) in bits.iter_mut().zip(&self.anc[pi]) {
                *w |= *src;
            }
            bits[pi / 64] |= 1 << (pi % 64);
        }
        self.anc.push(bits);
    }

    /// `a` happens before `b`.
    pub fn precedes(&self, a: SyncEventId, b: SyncEventId) -> bool {
        let (ai, bi) = (a.0 as usize - 1, b.0 as usize - 1);
        self.anc[bi]
            .get(ai / 64)
            .is_some_and(|w| w & (1 << (ai % 64)) != 0)
    }

    pub fn concurrent(&self, a: SyncEventId, b: SyncEventId) -> bool {
        a != b && !self.precedes(a, b) && !self.precedes(b, a)
    }
}

/// Versions of each path, and those not dominated by another version.
pub fn maximal_versions(dag: &EventDag, at: VirtualTime) -> BTreeMap<String, Vec<SyncEventId>> {
    let reach = dag.reachability();
    let mut by_path: BTreeMap<String, Vec<SyncEventId>> = BTreeMap::new();
    for e in dag.visible(at) {
        by_path.entry(e.path.clone()).or_default().push(e.id);
    }
    for versions in by_path.values_mut() {
        let all = versions.clone();
        versions.retain(|&v| !all.iter().any(|&w| reach.precedes(v, w)));
    }
    by_path
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SnapshotEntry {
    pub content: Digest,
    pub provenance: SyncEventId,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TreeSnapshot {
    pub entries: BTreeMap<String, SnapshotEntry>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LwwProjection {
    pub snapshot: TreeSnapshot,
    /// Maximal versions that did not win, in id order.
    pub lost: Vec<SyncEventId>,
    pub winners: BTreeMap<String, SyncEventId>,
}

fn lww_key(e: &SyncEvent) -> (i64, u32, SyncEventId) {
    (e.wallclock, e.device, e.id)
}

/// Per path, the version with the latest skewed stamp wins (ties by device,
/// then id). A causally earlier version can win if its clock runs ahead.
pub fn project_lww(dag: &EventDag, at: VirtualTime) -> LwwProjection {
    let maxima = maximal_versions(dag, at);
    let mut best: BTreeMap<&str, &SyncEvent> = BTreeMap::new();
    for e in dag.visible(at) {
        match best.get(e.path.as_str()) {
            Some(b) if lww_key(b) >= lww_key(e) => {}
            _ => {
                best.insert(e.path.as_str(), e);
            }
        }
    }
    let mut out = LwwProjection::default();
    for (path, w) in best {
        out.winners.insert(path.into(), w.id);
        if let Some(c) = w.content {
            out.snapshot.entries.insert(
                path.into(),
                SnapshotEntry {
                    content: c,
                    provenance: w.id,
                },
            );
        }
        out.lost
            .extend(maxima[path].iter().copied().filter(|&v| v != w.id));
    }
    out.lost.sort();
    out
}

/// Name for the `rank`-th (0-based) concurrent copy of `path`.
pub fn suffixed(path: &str, rank: usize) -> String {
    if rank == 0 {
        path.into()
    } else {
        format!("{path} {}", rank + 1)
    }
}

/// Every live maximal version materializes; the lowest event id keeps the
/// plain name and the rest get " 2", " 3", ...
pub fn project_suffix(dag: &EventDag, at: VirtualTime) -> TreeSnapshot {
    let mut snap = TreeSnapshot::default();
    for (path, versions) in maximal_versions(dag, at) {
        let live = versions
            .iter()
            .filter_map(|&v| dag.get(v).and_then(|e| e.content.map(|c| (v, c))));
        for (rank, (v, c)) in live.enumerate() {
            snap.entries.insert(
                suffixed(&path, rank),
                SnapshotEntry {
                    content: c,
                    provenance: v,
                },
            );
        }
    }
    snap
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Divergence {
    pub path: String,
    pub versions: Vec<(SyncEventId, Option<Digest>)>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DivergenceSet {
    pub entries: Vec<Divergence>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Reconciliation {
    pub snapshot: TreeSnapshot,
    pub divergence: DivergenceSet,
    /// Paths whose single maximal version is a tombstone.
    pub retired: Vec<SyncEventId>,
}

impl Reconciliation {
    /// Every maximal version the reconciliation kept track of.
    pub fn accounted(&self) -> Vec<SyncEventId> {
        let mut v: Vec<_> = self
            .snapshot
            .entries
            .values()
            .map(|e| e.provenance)
            .chain(
                self.divergence
                    .entries
                    .iter()
                    .flat_map(|d| d.versions.iter().map(|x| x.0)),
            )
            .chain(self.retired.iter().copied())
            .collect();
        v.sort();
        v
    }
}

/// Dominated versions fold into their dominators; concurrent maxima are
/// surfaced, never chosen between.
pub fn reconcile_bilateral(dag: &EventDag, at: VirtualTime) -> Reconciliation {
    let mut out = Reconciliation::default();
    for (path, versions) in maximal_versions(dag, at) {
        let ev = |v: SyncEventId| dag.get(v).expect("visible id");
        if let [only] = versions[..] {
            match ev(only).content {
                Some(c) => {
                    out.snapshot.entries.insert(
                        path,
                        SnapshotEntry {
                            content: c,
                            provenance: only,
                        },
                    );
                }
                None => out.retired.push(only),
            }
        } else {
            out.divergence.entries.push(Divergence {
                path,
                versions: versions.iter().map(|&v| (v, ev(v).content)).collect(),
            });
        }
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProjectionKind {
    Lww,
    Suffix,
    Bilateral,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LossReport {
    /// Maximal versions absent from the output.
    pub destroyed: u64,
    /// Output entries that came from a concurrent path but no longer say so.
    pub erased_provenance: u64,
    /// Concurrent pairs of maximal versions flattened into a linear result.
    pub collapsed_pairs: u64,
}

pub fn measure_information_loss(dag: &EventDag, kind: ProjectionKind, at: VirtualTime) -> LossReport {
    let maxima = maximal_versions(dag, at);
    let concurrent: Vec<(&String, usize)> = maxima
        .iter()
        .filter(|(_, v)| v.len() >= 2)
        .map(|(p, v)| (p, v.len()))
        .collect();
    let pairs: u64 = concurrent
        .iter()
        .map(|(_, n)| (n * (n - 1) / 2) as u64)
        .sum();
    match kind {
        ProjectionKind::Bilateral => {
            let r = reconcile_bilateral(dag, at);
            let total: usize = maxima.values().map(Vec::len).sum();
            LossReport {
                destroyed: (total - r.accounted().len()) as u64,
                ..LossReport::default()
            }
        }
        ProjectionKind::Lww => {
            let p = project_lww(dag, at);
            let erased = concurrent
                .iter()
                .filter(|(path, _)| p.snapshot.entries.contains_key(path.as_str()))
                .count();
            LossReport {
                destroyed: p.lost.len() as u64,
                erased_provenance: erased as u64,
                collapsed_pairs: pairs,
            }
        }
        ProjectionKind::Suffix => {
            let s = project_suffix(dag, at);
            let kept = s.entries.len();
            let live: usize = maxima
                .values()
                .flatten()
                .filter(|&&v| dag.get(v).is_some_and(|e| !e.is_tombstone()))
                .count();
            let erased: usize = s
                .entries
                .values()
                .filter(|e| {
                    dag.get(e.provenance)
                        .is_some_and(|ev| maxima[&ev.path].len() >= 2)
                })
                .count();
            LossReport {
                destroyed: (live - kept) as u64,
                erased_provenance: erased as u64,
                collapsed_pairs: pairs,
            }
        }
    }
}

/// During `[start, end)` devices see only their own group; devices not
/// listed in any group are isolated.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartitionWindow {
    pub start: VirtualTime,
    pub end: VirtualTime,
    #[serde(default)]
    pub groups: Vec<Vec<u32>>,
}

impl PartitionWindow {
    fn group_of(&self, device: u32) -> u32 {
        self.groups
            .iter()
            .position(|g| g.contains(&device))
            .map(|i| i as u32)
            .unwrap_or(u32::MAX - device)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorkloadParams {
    pub devices: u32,
    pub ops: u32,
    pub paths: u32,
    pub skew_spread: VirtualTime,
    pub interval: VirtualTime,
    #[serde(default)]
    pub partitions: Vec<PartitionWindow>,
    pub seed: u64,
}

impl WorkloadParams {
    pub fn horizon(&self) -> VirtualTime {
        VirtualTime(self.interval.as_nanos() * self.ops as u64)
    }
}

struct Builder {
    events: Vec<SyncEvent>,
    reach: Reach,
    by_path: BTreeMap<String, Vec<usize>>,
}

impl Builder {
    fn add(&mut self, mut e: SyncEvent) -> usize {
        let idx = self.events.len();
        e.id = SyncEventId(idx as u64 + 1);
        e.parents.sort();
        e.parents.dedup();
        self.reach.push(&e.parents);
        self.by_path.entry(e.path.clone()).or_default().push(idx);
        self.events.push(e);
        idx
    }

    /// Versions of `path` known to a device that no other known version of
    /// the path descends from.
    fn heads(&self, path: &str, known: &[u64]) -> Vec<usize> {
        let Some(all) = self.by_path.get(path) else {
            return Vec::new();
        };
        let mine: Vec<usize> = all
            .iter()
            .copied()
            .filter(|&i| known.get(i / 64).is_some_and(|w| w & (1 << (i % 64)) != 0))
            .collect();
        mine.iter()
            .copied()
            .filter(|&i| {
                !mine
                    .iter()
                    .any(|&j| self.reach.precedes(SyncEventId(i as u64 + 1), SyncEventId(j as u64 + 1)))
            })
            .collect()
    }
}

fn mark(known: &mut Vec<u64>, i: usize) {
    if known.len() <= i / 64 {
        known.resize(i / 64 + 1, 0);
    }
    known[i / 64] |= 1 << (i % 64);
}

/// Devices edit a small set of paths. Connected devices share everything
/// they know before each op; only partition windows create concurrency.
pub fn generate_workload(params: &WorkloadParams) -> Result<EventDag, SyncError> {
    if params.devices == 0 || params.paths == 0 {
        return Err(SyncError::EmptyWorkload);
    }
    let mut rng = rng_stream(params.seed, "sync.workload");
    let spread = params.skew_spread.as_nanos() as i64;
    let skew: Vec<i64> = (0..params.devices)
        .map(|_| {
            if spread == 0 {
                0
            } else {
                rng.random_range(-spread..=spread)
            }
        })
        .collect();
    let mut known: Vec<Vec<u64>> = vec![Vec::new(); params.devices as usize];
    let mut last: Vec<Option<usize>> = vec![None; params.devices as usize];
    let mut b = Builder {
        events: Vec::new(),
        reach: Reach::default(),
        by_path: BTreeMap::new(),
    };
    let paths: Vec<String> = (0..params.paths).map(|p| format!("f{p}")).collect();

    for k in 0..params.ops {
        let t = VirtualTime(params.interval.as_nanos() * (k as u64 + 1));
        // share knowledge within each connectivity group
        let window = params.partitions.iter().find(|w| w.start <= t && t < w.end);
        let group = |d: u32| window.map(|w| w.group_of(d)).unwrap_or(0);
        let mut merged: BTreeMap<u32, Vec<u64>> = BTreeMap::new();
        for d in 0..params.devices {
            let m = merged.entry(group(d)).or_default();
            if m.len() < known[d as usize].len() {
                m.resize(known[d as usize].len(), 0);
            }
            for (w, s) in m.iter_mut().zip(&known[d as usize]) {
                *w |= *s;
            }
        }
        for d in 0..params.devices {
            known[d as usize] = merged[&group(d)].clone();
        }

        let d = rng.random_range(0..params.devices);
        let di = d as usize;
        let path = &paths[rng.random_range(0..paths.len())];
        let heads = b.heads(path, &known[di]);
        let live = heads
            .iter()
            .copied()
            .filter(|&i| !b.events[i].is_tombstone())
            .max();
        let roll: f64 = rng.random();
        let wallclock = t.as_nanos() as i64 + skew[di];
        let prev = last[di];
        let base_parents = |heads: &[usize], prev: Option<usize>| -> Vec<SyncEventId> {
            heads
                .iter()
                .chain(prev.iter())
                .map(|&i| SyncEventId(i as u64 + 1))
                .collect()
        };
        let content_for = |id: usize| Digest::of(&[&(d as u64).to_le_bytes()[..], &(id as u64 + 1).to_le_bytes()].concat());

        let rename_to = if live.is_some() && roll >= 0.9 {
            paths
                .iter()
                .find(|q| {
                    *q != path
                        && b.heads(q, &known[di])
                            .iter()
                            .all(|&i| b.events[i].is_tombstone())
                })
                .cloned()
        } else {
            None
        };

        let op = match (live, rename_to.is_some()) {
            (None, _) => SyncOp::Create,
            (Some(_), true) => SyncOp::Rename,
            (Some(_), false) if (0.8..0.9).contains(&roll) => SyncOp::Delete,
            (Some(_), false) => SyncOp::Modify,
        };
        let idx = b.events.len();
        let content = match op {
            SyncOp::Create | SyncOp::Modify => Some(content_for(idx)),
            _ => None,
        };
        let parents = base_parents(&heads, prev);
        let i = b.add(SyncEvent {
            id: SyncEventId(0),
            device: d,
            op,
            path: path.clone(),
            content,
            parents,
            true_time: t,
            wallclock,
        });
        mark(&mut known[di], i);
        last[di] = Some(i);

        if let (Some(q), Some(src)) = (rename_to, live) {
            let moved = b.events[src].content;
            let mut parents = base_parents(&b.heads(&q, &known[di]), Some(i));
            parents.push(SyncEventId(i as u64 + 1));
            let j = b.add(SyncEvent {
                id: SyncEventId(0),
                device: d,
                op: SyncOp::Create,
                path: q,
                content: moved,
                parents,
                true_time: t,
                wallclock,
            });
            mark(&mut known[di], j);
            last[di] = Some(j);
        }
    }
    Ok(EventDag { events: b.events })
}
