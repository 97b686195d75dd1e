//! Brute-force exploration of one bilateral link carrying up to three tokens,
//! with one disruption (a sever/recover pair or an explicit reversal) allowed
//! at any reachable point.
#![allow(dead_code)]

use std::collections::{HashSet, VecDeque};

use oae_core::ae::*;
use oae_core::ledger::{Ledger, Lifecycle, Token};
use oae_core::{LinkId, NodeId, TokenId, VirtualTime};

#[derive(Clone, PartialEq, Eq, Hash)]
struct State {
    link: AeLink,
    ledger: Ledger,
    queue: [VecDeque<TokenId>; 2],
    initiator: Vec<(TokenId, Side)>,
    disruption_left: bool,
    now: u64,
}

#[derive(Default, Debug)]
pub struct Summary {
    pub configs: usize,
    pub states: usize,
    pub terminals: usize,
    pub violations: Vec<String>,
}

fn initiator_of(s: &State, t: TokenId) -> Side {
    s.initiator.iter().find(|(x, _)| *x == t).unwrap().1
}

fn check(s: &State) -> Result<(), String> {
    for &(t, init) in &s.initiator {
        let life = s.ledger.lifecycle(t).unwrap();
        let fi = s.link.peer(init).fate(t);
        let fr = s.link.peer(init.other()).fate(t);
        if let (Some(a), Some(b)) = (fi, fr) {
            if a != b {
                return Err(format!("{t:?}: peers disagree {a:?} vs {b:?}"));
            }
        }
        // Delivery is real only once the initiator has seen the reflection.
        if life == Lifecycle::Delivered && fi != Some(Fate::Delivered) {
            return Err(format!("{t:?}: delivered before the initiator observed reflection"));
        }
        if fr == Some(Fate::Delivered) && life != Lifecycle::Delivered {
            return Err(format!("{t:?}: responder holds a delivery the ledger lacks"));
        }
        let contradicts = |f: Option<Fate>| {
            matches!(
                (life, f),
                (Lifecycle::Delivered, Some(Fate::Rejected)) | (Lifecycle::Rejected, Some(Fate::Delivered))
            )
        };
        if contradicts(fi) || contradicts(fr) {
            return Err(format!("{t:?}: fate contradicts ledger state {life:?}"));
        }
    }
    if s.link.is_quiescent() {
        if !s.link.fates_agree() {
            return Err("quiescent with disagreeing fate tables".into());
        }
        for side in Side::BOTH {
            if s.link.peer(side).digest() != s.link.peer(side).quiescent_snapshot {
                return Err(format!("{side:?}: quiescent snapshot is stale"));
            }
        }
        for &(t, _) in &s.initiator {
            let life = s.ledger.lifecycle(t).unwrap();
            let want = match life {
                Lifecycle::Delivered => Some(Fate::Delivered),
                Lifecycle::Rejected => Some(Fate::Rejected),
                _ => None,
            };
            for side in Side::BOTH {
                let f = s.link.peer(side).fate(t);
                if want.is_some() && f != want {
                    return Err(format!("{t:?}: {side:?} fate {f:?} at quiescence, ledger {life:?}"));
                }
            }
        }
    }
    Ok(())
}

fn successors(s: &State) -> Result<Vec<State>, String> {
    let mut out = Vec::new();
    for side in Side::BOTH {
        if let Some(&t) = s.queue[side.index()].front() {
            if s.link.can_initiate(side) {
                let mut n = s.clone();
                n.queue[side.index()].pop_front();
                ae_initiate(&mut n.link, &mut n.ledger, side, t).map_err(|e| format!("initiate: {e}"))?;
                out.push(n);
            }
        }
        if s.link.front_seq(side).is_some() {
            let mut n = s.clone();
            ae_step(&mut n.link, &mut n.ledger, side).map_err(|e| format!("step: {e}"))?;
            out.push(n);
        }
    }
    if s.link.is_severed() {
        let mut n = s.clone();
        n.now += 1;
        n.link.restore(VirtualTime(n.now));
        let rec = ae_on_disturbance(&mut n.link, &mut n.ledger, VirtualTime(n.now))
            .map_err(|e| format!("recover: {e}"))?;
        requeue_reversed(&mut n, rec.resolved.iter().filter(|r| r.1 == Resolution::Reversed).map(|r| r.0));
        out.push(n);
    } else if s.disruption_left {
        let mut n = s.clone();
        n.disruption_left = false;
        n.now += 1;
        n.link.sever(VirtualTime(n.now));
        out.push(n);
        let ids: Vec<TransferId> = s.link.outstanding().map(|t| t.id).collect();
        for id in ids {
            let mut n = s.clone();
            n.disruption_left = false;
            match ae_reverse(&mut n.link, &mut n.ledger, id) {
                Ok(rec) => {
                    requeue_reversed(&mut n, [rec.token]);
                    out.push(n);
                }
                Err(AeError::IllegalReversal(_)) => {}
                Err(e) => return Err(format!("reverse: {e}")),
            }
        }
    }
    Ok(out)
}

fn requeue_reversed(s: &mut State, tokens: impl IntoIterator<Item = TokenId>) {
    for t in tokens {
        let side = initiator_of(s, t);
        s.queue[side.index()].push_front(t);
    }
}

fn explore_config(sides: &[Side], refused: &[bool], summary: &mut Summary) {
    let mut link = AeLink::new(LinkId(0), NodeId(0), NodeId(1), AeConfig::default());
    let mut ledger = Ledger::new();
    let mut queue = [VecDeque::new(), VecDeque::new()];
    let mut initiator = Vec::new();
    for (i, (&side, &refuse)) in sides.iter().zip(refused).enumerate() {
        let t = TokenId(i as u64 + 1);
        ledger.insert(Token::new(t, NodeId(side.index() as u32), &[i as u8])).unwrap();
        if refuse {
            link.refuse(side.other(), t);
        }
        queue[side.index()].push_back(t);
        initiator.push((t, side));
    }
    let start = State {
        link,
        ledger,
        queue,
        initiator,
        disruption_left: true,
        now: 0,
    };
    let mut seen = HashSet::new();
    let mut stack = vec![start];
    while let Some(s) = stack.pop() {
        if !seen.insert(s.clone()) {
            continue;
        }
        summary.states += 1;
        if let Err(e) = check(&s) {
            summary.violations.push(format!("{sides:?}/{refused:?}: {e}"));
            continue;
        }
        match successors(&s) {
            Err(e) => summary.violations.push(format!("{sides:?}/{refused:?}: {e}")),
            Ok(next) if next.is_empty() => {
                summary.terminals += 1;
                if !s.link.is_quiescent() {
                    summary.violations.push(format!("{sides:?}/{refused:?}: stuck before quiescence"));
                } else if let Err(e) = s.ledger.audit(true) {
                    summary.violations.push(format!("{sides:?}/{refused:?}: {e}"));
                }
            }
            Ok(next) => stack.extend(next),
        }
    }
}

pub fn explore_all(max_tokens: usize) -> Summary {
    let mut summary = Summary::default();
    for n in 1..=max_tokens {
        for mask in 0..(1u32 << n) {
            for refuse_mask in 0..(1u32 << n) {
                let sides: Vec<Side> = (0..n).map(|i| if mask >> i & 1 == 1 { Side::B } else { Side::A }).collect();
                let refused: Vec<bool> = (0..n).map(|i| refuse_mask >> i & 1 == 1).collect();
                summary.configs += 1;
                explore_config(&sides, &refused, &mut summary);
            }
        }
    }
    summary
}
