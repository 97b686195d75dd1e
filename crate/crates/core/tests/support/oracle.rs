//! Independent oracles for sync projections: a DAG builder over loosely
//! specified events, and brute-force maximal versions by graph search.
#![allow(dead_code)]

use std::collections::BTreeMap;

use oae_core::kernel::derive_seed;
use oae_core::sync::*;
use oae_core::{Digest, VirtualTime};

#[derive(Clone, Debug)]
pub struct RawEvent {
    pub device: u32,
    pub path: u8,
    pub op: u8,
    pub parents: Vec<usize>,
    pub skew: i64,
}

/// `n` events drawn from `seed`, in the same shape the property tests use.
pub fn seeded_raw(seed: u64, n: usize) -> Vec<RawEvent> {
    (0..n)
        .map(|i| {
            let mut k = 0u64;
            let mut draw = |m: u64| {
                k += 1;
                derive_seed(seed, (i as u64) << 8 | k) % m
            };
            let device = draw(3) as u32;
            let path = draw(3) as u8;
            let op = draw(4) as u8;
            let parents = (0..draw(3)).map(|_| draw(1 << 20) as usize).collect();
            let skew = draw(100) as i64 - 50;
            RawEvent {
                device,
                path,
                op,
                parents,
                skew,
            }
        })
        .collect()
}

pub fn build_dag(raw: &[RawEvent]) -> EventDag {
    let mut events = Vec::new();
    for (i, r) in raw.iter().enumerate() {
        let id = i as u64 + 1;
        let op = [SyncOp::Create, SyncOp::Modify, SyncOp::Delete, SyncOp::Rename][r.op as usize];
        let content = match op {
            SyncOp::Create | SyncOp::Modify => Some(Digest::of(&[r.path, (id % 3) as u8])),
            _ => None,
        };
        let mut parents: Vec<SyncEventId> = if i == 0 {
            Vec::new()
        } else {
            r.parents.iter().map(|p| SyncEventId((p % i) as u64 + 1)).collect()
        };
        parents.sort();
        parents.dedup();
        let true_time = VirtualTime(id * 10);
        events.push(SyncEvent {
            id: SyncEventId(id),
            device: r.device,
            op,
            path: format!("/p{}", r.path),
            content,
            parents,
            true_time,
            wallclock: true_time.as_nanos() as i64 + r.skew * 7,
        });
    }
    EventDag::from_events(events).unwrap()
}

/// Ancestor test by plain graph search, independent of the library's bitsets.
pub fn is_ancestor(dag: &EventDag, a: SyncEventId, b: SyncEventId) -> bool {
    let mut seen = std::collections::BTreeSet::new();
    let mut stack = dag.get(b).unwrap().parents.clone();
    while let Some(x) = stack.pop() {
        if x == a {
            return true;
        }
        if seen.insert(x) {
            stack.extend(dag.get(x).unwrap().parents.iter().copied());
        }
    }
    false
}

pub fn brute_maxima(dag: &EventDag) -> BTreeMap<String, Vec<SyncEventId>> {
    let mut by_path: BTreeMap<String, Vec<SyncEventId>> = BTreeMap::new();
    for e in dag.events() {
        by_path.entry(e.path.clone()).or_default().push(e.id);
    }
    for vs in by_path.values_mut() {
        let all = vs.clone();
        vs.retain(|&v| !all.iter().any(|&w| w != v && is_ancestor(dag, v, w)));
    }
    by_path
}

/// LWW discards every maximal version except the stamp winner, and all of
/// them when the winner is itself causally dominated.
pub fn lww_loss_oracle(dag: &EventDag) -> u64 {
    let mut lost = 0;
    for (path, maxima) in brute_maxima(dag) {
        let winner = dag
            .events()
            .iter()
            .filter(|e| e.path == path)
            .max_by_key(|e| (e.wallclock, e.device, e.id))
            .unwrap()
            .id;
        lost += maxima.len() as u64 - u64::from(maxima.contains(&winner));
    }
    lost
}

