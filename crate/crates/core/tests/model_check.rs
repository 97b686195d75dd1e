#[path = "support/model.rs"]
mod model;

#[test]
fn no_reachable_state_breaks_agreement_or_atomicity() {
    let s = model::explore_all(3);
    assert!(s.violations.is_empty(), "{:#?}", &s.violations[..s.violations.len().min(10)]);
    assert!(s.terminals > 0);
    assert!(s.states > 1000, "{} states", s.states);
}
