use std::path::PathBuf;

use oae_core::harness::SweepParam;
use oae_sim::{audit, load_scenario_file, run_rows, sweep};

fn scenario(name: &str) -> oae_core::harness::Scenario {
    load_scenario_file(PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(name)).unwrap()
}

#[test]
fn empty_values_give_no_rows() {
    assert!(sweep(&scenario("triangle.toml"), SweepParam::FlapRate, &[]).unwrap().is_empty());
}

#[test]
fn sweep_is_reproducible_and_ordered() {
    let s = scenario("triangle.toml");
    let values = [50.0, 5.0, 20.0, 10.0];
    let a = sweep(&s, SweepParam::FlapRate, &values).unwrap();
    let b = sweep(&s, SweepParam::FlapRate, &values).unwrap();
    assert_eq!(a, b);
    let got: Vec<f64> = a.iter().map(|r| r.sweep_value.unwrap()).collect();
    assert_eq!(got, values);
    assert!(a.iter().all(|r| r.sweep_param == "flap-rate" && r.unaccounted_tokens == 0));
}

#[test]
fn baseline_retries_do_not_fall_as_flap_rate_rises() {
    let s = scenario("amplification.toml");
    let rows = sweep(&s, SweepParam::FlapRate, &[1.0, 4.0, 16.0]).unwrap();
    let fito: Vec<f64> = rows.iter().filter(|r| r.link_kind == "fito").map(|r| r.window_retries).collect();
    assert!(fito.windows(2).all(|w| w[0] <= w[1]), "{fito:?}");
    assert!(rows.iter().filter(|r| r.link_kind == "ae").all(|r| r.retries == 0));
}

#[test]
fn ensemble_size_sweep_tracks_cluster_mttf() {
    let mut s = scenario("triangle.toml");
    s.topology = oae_core::harness::TopologySpec::SingleLink;
    s.link_kind = oae_core::harness::LinkKind::Fito;
    s.workload.transfers = 0;
    s.horizon = oae_core::VirtualTime::from_secs(20);
    let rows = sweep(&s, SweepParam::Links, &[1.0, 10.0]).unwrap();
    let mttf = 1e9 / rows[0].flap_rate;
    for r in &rows {
        let n = r.sweep_value.unwrap();
        let mean = r.mean_inter_flap_ns.unwrap();
        assert!((mean - mttf / n).abs() / (mttf / n) < 0.1, "N={n}: {mean}");
    }
}

#[test]
fn paired_rows_contrast_ledgers() {
    let mut s = scenario("amplification.toml");
    s.horizon = oae_core::VirtualTime::from_secs(1);
    s.workload.transfers = 2000;
    let rows = run_rows(&s).unwrap();
    let (ae, fito) = (&rows[0], &rows[1]);
    assert_eq!((ae.link_kind.as_str(), fito.link_kind.as_str()), ("ae", "fito"));
    assert_eq!(ae.flaps, fito.flaps);
    assert_eq!(ae.unaccounted_tokens, 0);
    assert!(fito.resets > 0 && fito.unaccounted_tokens > 0);
    let out = audit(&s).unwrap();
    assert!(out.failures().is_empty(), "{:?}", out.failures());
    assert!(!out.links[1].closed);
}
