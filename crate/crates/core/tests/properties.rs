use oae_core::ae::*;
use oae_core::fito::{fito_amplification_step, Amplifier};
use oae_core::ledger::{Ledger, Lifecycle, Token};
use oae_core::sync::*;
use oae_core::{Digest, LinkId, NodeId, TokenId, VirtualTime};
use proptest::prelude::*;

#[path = "support/oracle.rs"]
mod oracle;
use oracle::*;

const LIFECYCLES: [Lifecycle; 5] = [
    Lifecycle::Created,
    Lifecycle::InTransit,
    Lifecycle::Delivered,
    Lifecycle::Rejected,
    Lifecycle::Reversed,
];

#[derive(Clone, Debug)]
enum LedgerOp {
    Insert,
    Move(usize, usize),
    Orphan(usize),
}

fn ledger_op() -> impl Strategy<Value = LedgerOp> {
    prop_oneof![
        1 => Just(LedgerOp::Insert),
        4 => (any::<usize>(), 0..5usize).prop_map(|(t, l)| LedgerOp::Move(t, l)),
        1 => any::<usize>().prop_map(LedgerOp::Orphan),
    ]
}

proptest! {
    #[test]
    fn ledger_conserves_and_terminals_stick(ops in prop::collection::vec(ledger_op(), 1..200)) {
        let mut l = Ledger::new();
        let mut n = 0u64;
        let mut orphans = 0u64;
        for op in ops {
            match op {
                LedgerOp::Insert => {
                    n += 1;
                    l.insert(Token::new(TokenId(n), NodeId(0), &n.to_le_bytes())).unwrap();
                }
                LedgerOp::Move(t, to) if n > 0 => {
                    let id = TokenId(t as u64 % n + 1);
                    let before = l.lifecycle(id).unwrap();
                    let to = LIFECYCLES[to];
                    let ok = l.transition(id, to).is_ok();
                    prop_assert_eq!(ok, before.can_become(to) && !l.is_orphaned(id));
                    if before.is_terminal() {
                        prop_assert_eq!(l.lifecycle(id).unwrap(), before);
                    }
                }
                LedgerOp::Orphan(t) if n > 0 => {
                    let id = TokenId(t as u64 % n + 1);
                    if l.orphan(id).is_ok() {
                        orphans += 1;
                    }
                }
                _ => {}
            }
            let r = l.report();
            prop_assert_eq!(r.inserted, r.delivered + r.rejected + r.in_transit + r.unaccounted);
            prop_assert_eq!(r.unaccounted, orphans);
        }
        for t in l.tokens() {
            let h = l.history(t.id).unwrap();
            if let Some(i) = h.iter().position(|s| s.is_terminal()) {
                prop_assert_eq!(i, h.len() - 1);
            }
        }
    }
}

fn link_with(tokens: u64) -> (AeLink, Ledger) {
    let link = AeLink::new(LinkId(0), NodeId(0), NodeId(1), AeConfig::default());
    let mut ledger = Ledger::new();
    for t in 1..=tokens {
        ledger.insert(Token::new(TokenId(t), NodeId(0), &t.to_le_bytes())).unwrap();
    }
    (link, ledger)
}

fn drain(link: &mut AeLink, ledger: &mut Ledger) {
    loop {
        let next = Side::BOTH.into_iter().find(|s| link.front_seq(*s).is_some());
        match next {
            Some(s) => {
                ae_step(link, ledger, s).unwrap();
            }
            None => break,
        }
    }
}

fn side(b: bool) -> Side {
    if b {
        Side::B
    } else {
        Side::A
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(10_000))]

    #[test]
    fn reversal_restores_pre_transfer_digests(
        prefix in prop::collection::vec((any::<bool>(), any::<bool>()), 0..8),
        from in any::<bool>(),
        hops in 0..2usize,
    ) {
        let n = prefix.len() as u64 + 1;
        let (mut link, mut ledger) = link_with(n);
        for (i, &(dir, refuse)) in prefix.iter().enumerate() {
            let t = TokenId(i as u64 + 1);
            if refuse {
                link.refuse(side(dir).other(), t);
            }
            ae_initiate(&mut link, &mut ledger, side(dir), t).unwrap();
            drain(&mut link, &mut ledger);
        }
        prop_assert!(link.is_quiescent());
        let pre = link.digests();
        let t = TokenId(n);
        let (id, _) = ae_initiate(&mut link, &mut ledger, side(from), t).unwrap();
        for _ in 0..hops {
            ae_step(&mut link, &mut ledger, side(from)).unwrap();
        }
        let rec = ae_reverse(&mut link, &mut ledger, id).unwrap();
        prop_assert_eq!(rec.pre_digests, pre);
        prop_assert_eq!(rec.post_digests, pre);
        prop_assert_eq!(link.digests(), pre);
        prop_assert!(link.is_quiescent());
        prop_assert_eq!(ledger.lifecycle(t), Some(Lifecycle::Reversed));
        // A reversed token is not lost; it can be sent again.
        ae_initiate(&mut link, &mut ledger, side(from), t).unwrap();
        drain(&mut link, &mut ledger);
        prop_assert!(ledger.audit(true).is_ok());
        prop_assert!(link.fates_agree());
    }
}

proptest! {
    #[test]
    fn amplification_is_monotone(
        base in 0.0f64..1.0,
        coeff in 0.0f64..0.5,
        a in 0u64..1000,
        b in 0u64..1000,
    ) {
        let mut amp = Amplifier::new(2, base, coeff);
        let (lo, hi) = (a.min(b), a.max(b));
        let rates = fito_amplification_step(&mut amp, &[lo, hi]).to_vec();
        prop_assert!(rates[0] <= rates[1]);
        prop_assert!(rates[0] >= base.clamp(0.0, 1.0));
        prop_assert!(rates.iter().all(|r| (0.0..=1.0).contains(r)));
    }
}

fn raw_event() -> impl Strategy<Value = RawEvent> {
    (0..3u32, 0..3u8, 0..4u8, prop::collection::vec(any::<usize>(), 0..3), -50i64..50).prop_map(
        |(device, path, op, parents, skew)| RawEvent {
            device,
            path,
            op,
            parents,
            skew,
        },
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2000))]

    #[test]
    fn lww_loss_matches_antichain_oracle(raw in prop::collection::vec(raw_event(), 1..=12)) {
        let dag = build_dag(&raw);
        let end = VirtualTime(u64::MAX);
        let r = measure_information_loss(&dag, ProjectionKind::Lww, end);
        prop_assert_eq!(r.destroyed, lww_loss_oracle(&dag));
        prop_assert_eq!(maximal_versions(&dag, end), brute_maxima(&dag));
    }

    #[test]
    fn bilateral_accounts_for_every_maximal_version(raw in prop::collection::vec(raw_event(), 1..=12)) {
        let dag = build_dag(&raw);
        let end = VirtualTime(u64::MAX);
        let r = reconcile_bilateral(&dag, end);
        let mut all: Vec<_> = brute_maxima(&dag).into_values().flatten().collect();
        all.sort();
        prop_assert_eq!(r.accounted(), all);
        prop_assert_eq!(measure_information_loss(&dag, ProjectionKind::Bilateral, end).destroyed, 0);
    }

    #[test]
    fn suffix_keeps_live_content_multiset(raw in prop::collection::vec(raw_event(), 1..=12)) {
        let dag = build_dag(&raw);
        let end = VirtualTime(u64::MAX);
        let snap = project_suffix(&dag, end);
        let mut got: Vec<Digest> = snap.entries.values().map(|e| e.content).collect();
        let mut want: Vec<Digest> = brute_maxima(&dag)
            .into_values()
            .flatten()
            .filter_map(|v| dag.get(v).unwrap().content)
            .collect();
        got.sort();
        want.sort();
        prop_assert_eq!(got, want);
        prop_assert_eq!(measure_information_loss(&dag, ProjectionKind::Suffix, end).destroyed, 0);
    }
}
