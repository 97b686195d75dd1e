//! Scenario files, parallel sweeps, audits and artifact export on top of
//! `oae-core`. The `oae-sim` binary is a thin front end over this crate.

pub mod output;
pub mod scenario;

use oae_core::harness::{run_scenario, sweep_point, HarnessError, MetricsRow, Scenario, SweepParam};
use oae_core::ledger::ConservationReport;
use oae_core::sync::{audit_property_l, run_store_workload, run_three_step_audit, AuditReport};
use rayon::prelude::*;
use serde::Serialize;

pub use scenario::{load_scenario, load_scenario_file, ScenarioError};

/// One run per value, in parallel. Rows come back in input order whatever
/// the completion order.
pub fn sweep(base: &Scenario, param: SweepParam, values: &[f64]) -> Result<Vec<MetricsRow>, HarnessError> {
    let per_point: Vec<Vec<MetricsRow>> = values
        .par_iter()
        .enumerate()
        .map(|(i, &v)| {
            let s = sweep_point(base, param, i, v)?;
            let mut rows: Vec<MetricsRow> = run_scenario(&s)?.into_iter().map(|r| r.row).collect();
            for r in &mut rows {
                r.sweep_param = param.as_str().into();
                r.sweep_value = Some(v);
            }
            Ok(rows)
        })
        .collect::<Result<_, HarnessError>>()?;
    Ok(per_point.into_iter().flatten().collect())
}

pub fn run_rows(s: &Scenario) -> Result<Vec<MetricsRow>, HarnessError> {
    Ok(run_scenario(s)?.into_iter().map(|r| r.row).collect())
}

#[derive(Clone, Debug, Serialize)]
pub struct LinkAudit {
    pub link_kind: String,
    pub ledger: ConservationReport,
    /// Whether the ledger closes with nothing in transit or unaccounted.
    pub closed: bool,
    pub violations: Vec<String>,
}

#[derive(Clone, Debug, Serialize)]
pub struct StoreAudit {
    pub eviction: bool,
    pub property_l_violations: usize,
    pub three_step: AuditReport,
}

#[derive(Clone, Debug, Serialize)]
pub struct AuditOutcome {
    pub scenario: String,
    pub links: Vec<LinkAudit>,
    pub store: Option<StoreAudit>,
}

impl AuditOutcome {
    /// Invariant failures. A baseline ledger that does not close is the
    /// expected finding, not a failure; a bilateral one is. Listing
    /// instability is only a failure for a store that never evicts.
    pub fn failures(&self) -> Vec<String> {
        let mut out = Vec::new();
        for l in &self.links {
            out.extend(l.violations.iter().map(|v| format!("{}: {v}", l.link_kind)));
            if l.link_kind == "ae" && !l.closed {
                out.push(format!("ae: ledger does not close: {:?}", l.ledger));
            }
        }
        if let Some(s) = &self.store {
            if !s.eviction && s.property_l_violations > 0 {
                out.push(format!("store: {} listing-stability violations without eviction", s.property_l_violations));
            }
        }
        out
    }
}

/// Ledger audit for each link kind, plus the store audits when the scenario
/// has a store section.
pub fn audit(s: &Scenario) -> Result<AuditOutcome, HarnessError> {
    let links = run_scenario(s)?
        .into_iter()
        .map(|r| LinkAudit {
            link_kind: r.row.link_kind.clone(),
            closed: r.ledger.in_transit == 0 && r.ledger.unaccounted == 0,
            ledger: r.ledger,
            violations: r.violations,
        })
        .collect();
    let store = s.store.as_ref().map(|st| {
        let mut store = run_store_workload(st.config, &st.workload, s.seed);
        let property_l_violations = audit_property_l(store.trace()).len();
        let three_step = run_three_step_audit(&mut store, st.audit_delay);
        StoreAudit {
            eviction: st.config.eviction,
            property_l_violations,
            three_step,
        }
    });
    Ok(AuditOutcome {
        scenario: s.name.clone(),
        links,
        store,
    })
}
