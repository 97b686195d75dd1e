//! Scenarios, paired runs, sweep points and metrics rows.
//!
//! A scenario names a topology, which link protocol runs on it, a flap model
//! and a transfer workload. `both-paired` runs the bilateral link and the
//! timeout-and-retry baseline against the same flap schedule.

mod net;

pub use net::{run_with_schedule, RunReport};

use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ae::AeConfig;
use crate::fito::{Census, FitoConfig, FitoError};
use crate::flap::{generate_flap_schedule, DurationDist, FlapError, FlapParams, FlapSchedule};
use crate::kernel::{derive_seed, VirtualTime};
use crate::sync::{PartitionWindow, StoreConfig, StoreWorkload, SyncError, WorkloadParams};
use crate::topology::{build_grid, TopologyError};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", try_from = "RawTopology")]
pub enum TopologySpec {
    /// Independent two-node links; the ensemble size is `flap.links`.
    SingleLink,
    Triangle,
    Grid { rows: u32, cols: u32 },
}

#[derive(Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
enum RawTopology {
    SingleLink,
    Triangle,
    Grid { rows: u32, cols: u32 },
}

impl TryFrom<RawTopology> for TopologySpec {
    type Error = TopologyError;

    fn try_from(r: RawTopology) -> Result<Self, TopologyError> {
        Ok(match r {
            RawTopology::SingleLink => TopologySpec::SingleLink,
            RawTopology::Triangle => TopologySpec::Triangle,
            RawTopology::Grid { rows, cols } => {
                build_grid(rows, cols)?;
                TopologySpec::Grid { rows, cols }
            }
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LinkKind {
    Ae,
    Fito,
    BothPaired,
}

/// The protocol of one run.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RunKind {
    Ae,
    Fito,
}

impl RunKind {
    pub fn as_str(self) -> &'static str {
        match self {
            RunKind::Ae => "ae",
            RunKind::Fito => "fito",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlapSection {
    /// Per-link mean time to flap.
    pub mttf: VirtualTime,
    /// Ensemble size for `single-link`; for other topologies it must be
    /// omitted or equal the link count.
    pub links: Option<u32>,
    #[serde(default)]
    pub duration: DurationDist,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransferWorkload {
    pub transfers: u64,
    pub interval: VirtualTime,
    #[serde(default = "default_latency")]
    pub latency: VirtualTime,
    /// Chance that a given send attempt is hit by a short disturbance.
    #[serde(default)]
    pub disturbance_probability: f64,
    #[serde(default = "default_noise_duration")]
    pub noise_duration: VirtualTime,
    /// Retry-counting window for the amplification loop.
    #[serde(default = "default_window")]
    pub window: VirtualTime,
}

fn default_latency() -> VirtualTime {
    VirtualTime::from_micros(10)
}

fn default_noise_duration() -> VirtualTime {
    VirtualTime::from_micros(50)
}

fn default_window() -> VirtualTime {
    VirtualTime::from_millis(1)
}

impl Default for TransferWorkload {
    fn default() -> Self {
        TransferWorkload {
            transfers: 0,
            interval: VirtualTime::from_micros(100),
            latency: default_latency(),
            disturbance_probability: 0.0,
            noise_duration: default_noise_duration(),
            window: default_window(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyncSection {
    pub devices: u32,
    pub ops: u32,
    #[serde(default = "default_paths")]
    pub paths: u32,
    pub skew_spread: VirtualTime,
    #[serde(default = "default_window")]
    pub interval: VirtualTime,
    #[serde(default)]
    pub partitions: Vec<PartitionWindow>,
}

fn default_paths() -> u32 {
    3
}

impl SyncSection {
    pub fn params(&self, seed: u64) -> WorkloadParams {
        WorkloadParams {
            devices: self.devices,
            ops: self.ops,
            paths: self.paths,
            skew_spread: self.skew_spread,
            interval: self.interval,
            partitions: self.partitions.clone(),
            seed,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StoreSection {
    #[serde(default)]
    pub config: StoreConfig,
    #[serde(default)]
    pub workload: StoreWorkload,
    #[serde(default = "default_audit_delay")]
    pub audit_delay: VirtualTime,
}

fn default_audit_delay() -> VirtualTime {
    VirtualTime::from_millis(50)
}

/// Times are integer nanoseconds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    pub seed: u64,
    pub horizon: VirtualTime,
    pub topology: TopologySpec,
    pub link_kind: LinkKind,
    #[serde(default)]
    pub flap: Option<FlapSection>,
    #[serde(default)]
    pub ae: AeConfig,
    #[serde(default)]
    pub fito: FitoConfig,
    #[serde(default)]
    pub workload: TransferWorkload,
    #[serde(default)]
    pub sync: Option<SyncSection>,
    #[serde(default)]
    pub store: Option<StoreSection>,
    #[serde(default)]
    pub trace: bool,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum HarnessError {
    #[error("{field}: {reason}")]
    Invalid { field: &'static str, reason: String },
    #[error("topology: {0}")]
    Topology(#[from] TopologyError),
    #[error("flap: {0}")]
    Flap(#[from] FlapError),
    #[error("fito: {0}")]
    Fito(#[from] FitoError),
    #[error("sync: {0}")]
    Sync(#[from] SyncError),
    #[error("parameter {0:?} is not sweepable (flap-rate, N, skew-spread, amplification-coefficient, disturbance-probability)")]
    NotSweepable(String),
}

fn invalid(field: &'static str, reason: impl ToString) -> HarnessError {
    HarnessError::Invalid {
        field,
        reason: reason.to_string(),
    }
}

fn probability(field: &'static str, p: f64) -> Result<(), HarnessError> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(invalid(field, alloc::format!("must lie in [0, 1], got {p}")))
    }
}

impl Scenario {
    /// Number of links the topology carries.
    pub fn link_count(&self) -> Result<u32, HarnessError> {
        Ok(match self.topology {
            TopologySpec::SingleLink => self.flap.and_then(|f| f.links).unwrap_or(1),
            TopologySpec::Triangle => 3,
            TopologySpec::Grid { rows, cols } => build_grid(rows, cols)?.links().len() as u32,
        })
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.horizon == VirtualTime::ZERO {
            return Err(invalid("horizon", "must be positive"));
        }
        let links = self.link_count()?;
        if links == 0 {
            return Err(invalid("flap.links", "must be at least 1"));
        }
        if let Some(f) = &self.flap {
            if f.mttf == VirtualTime::ZERO {
                return Err(invalid("flap.mttf", "must be positive"));
            }
            if let (Some(n), false) = (f.links, self.topology == TopologySpec::SingleLink) {
                if n != links {
                    return Err(invalid(
                        "flap.links",
                        alloc::format!("topology has {links} links, got {n}"),
                    ));
                }
            }
        }
        self.fito.validate()?;
        if self.ae.cadence == VirtualTime::ZERO {
            return Err(invalid("ae.cadence", "must be positive"));
        }
        if self.ae.deadline_multiplier == 0 {
            return Err(invalid("ae.deadline_multiplier", "must be at least 1"));
        }
        let w = &self.workload;
        if w.transfers > 0 && w.interval == VirtualTime::ZERO {
            return Err(invalid("workload.interval", "must be positive"));
        }
        if w.latency == VirtualTime::ZERO {
            return Err(invalid("workload.latency", "must be positive"));
        }
        if w.window == VirtualTime::ZERO {
            return Err(invalid("workload.window", "must be positive"));
        }
        probability("workload.disturbance_probability", w.disturbance_probability)?;
        if let Some(s) = &self.sync {
            if s.devices == 0 {
                return Err(invalid("sync.devices", "must be at least 1"));
            }
            if s.paths == 0 {
                return Err(invalid("sync.paths", "must be at least 1"));
            }
        }
        if let Some(s) = &self.store {
            probability("store.config.hydration_failure", s.config.hydration_failure)?;
            probability("store.config.eviction_probability", s.config.eviction_probability)?;
        }
        Ok(())
    }

    pub fn kinds(&self) -> &'static [RunKind] {
        match self.link_kind {
            LinkKind::Ae => &[RunKind::Ae],
            LinkKind::Fito => &[RunKind::Fito],
            LinkKind::BothPaired => &[RunKind::Ae, RunKind::Fito],
        }
    }

    /// The flap schedule every run of this scenario consumes.
    pub fn flap_schedule(&self) -> Result<FlapSchedule, HarnessError> {
        let Some(f) = &self.flap else {
            return Ok(FlapSchedule::default());
        };
        let params = FlapParams {
            mttf: f.mttf,
            links: self.link_count()?,
            duration: f.duration,
            seed: self.seed,
        };
        params.validate()?;
        Ok(generate_flap_schedule(&params, self.horizon))
    }

    /// Parameters of the sync workload attached to this scenario, if any.
    pub fn sync_params(&self) -> Option<WorkloadParams> {
        self.sync
            .as_ref()
            .map(|sync| sync.params(derive_seed(self.seed, u64::MAX)))
    }

    /// Per-link flaps per second.
    pub fn flap_rate(&self) -> f64 {
        match &self.flap {
            Some(f) => 1e9 / f.mttf.as_nanos() as f64,
            None => 0.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SweepParam {
    FlapRate,
    Links,
    SkewSpread,
    AmplificationCoefficient,
    DisturbanceProbability,
}

impl SweepParam {
    pub fn as_str(self) -> &'static str {
        match self {
            SweepParam::FlapRate => "flap-rate",
            SweepParam::Links => "N",
            SweepParam::SkewSpread => "skew-spread",
            SweepParam::AmplificationCoefficient => "amplification-coefficient",
            SweepParam::DisturbanceProbability => "disturbance-probability",
        }
    }
}

impl fmt::Display for SweepParam {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SweepParam {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self, HarnessError> {
        Ok(match s {
            "flap-rate" => SweepParam::FlapRate,
            "N" | "n" | "links" => SweepParam::Links,
            "skew-spread" => SweepParam::SkewSpread,
            "amplification-coefficient" => SweepParam::AmplificationCoefficient,
            "disturbance-probability" => SweepParam::DisturbanceProbability,
            other => return Err(HarnessError::NotSweepable(other.into())),
        })
    }
}

/// The scenario for sweep point `index` with `param` set to `value`. The
/// seed is derived from the base seed and the index.
pub fn sweep_point(
    base: &Scenario,
    param: SweepParam,
    index: usize,
    value: f64,
) -> Result<Scenario, HarnessError> {
    let mut s = base.clone();
    s.seed = derive_seed(base.seed, index as u64);
    let positive = |v: f64| -> Result<f64, HarnessError> {
        if v.is_finite() && v > 0.0 {
            Ok(v)
        } else {
            Err(invalid("sweep value", alloc::format!("must be positive, got {v}")))
        }
    };
    match param {
        SweepParam::FlapRate => {
            let mttf = VirtualTime((1e9 / positive(value)?) as u64);
            let f = s.flap.get_or_insert(FlapSection {
                mttf,
                links: None,
                duration: DurationDist::default(),
            });
            f.mttf = mttf;
        }
        SweepParam::Links => {
            if s.topology != TopologySpec::SingleLink {
                return Err(invalid("sweep N", "only a single-link ensemble can be resized"));
            }
            let f = s
                .flap
                .as_mut()
                .ok_or_else(|| invalid("flap", "sweeping N needs a flap section"))?;
            f.links = Some(positive(value)? as u32);
        }
        SweepParam::SkewSpread => {
            let sync = s
                .sync
                .as_mut()
                .ok_or_else(|| invalid("sync", "sweeping skew-spread needs a sync section"))?;
            if !(value >= 0.0) {
                return Err(invalid("sweep value", "skew spread must be non-negative"));
            }
            sync.skew_spread = VirtualTime(value as u64);
        }
        SweepParam::AmplificationCoefficient => {
            s.fito.amplification_coefficient = value;
        }
        SweepParam::DisturbanceProbability => {
            s.workload.disturbance_probability = value;
        }
    }
    s.validate()?;
    Ok(s)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub scenario: String,
    pub link_kind: String,
    pub sweep_param: String,
    pub sweep_value: Option<f64>,
    pub flap_rate: f64,
    pub flaps: u64,
    pub mean_inter_flap_ns: Option<f64>,
    pub transfers: u64,
    pub delivered: u64,
    pub retries: u64,
    /// Mean retries per amplification window up to the horizon.
    pub window_retries: f64,
    pub duplicates: u64,
    pub resets: u64,
    pub recoveries: u64,
    pub escalations: u64,
    pub unaccounted_tokens: u64,
    pub in_transit_tokens: u64,
    pub destroyed_versions: u64,
    pub delivered_ok: u64,
    pub delivered_error: u64,
    pub not_delivered_ok: u64,
    pub not_delivered_error: u64,
    pub unknowable_ok: u64,
    pub unknowable_error: u64,
    pub violations: u64,
}

impl MetricsRow {
    pub fn set_census(&mut self, c: &Census) {
        let [[a, b], [x, y], [u, v]] = c.cells;
        self.delivered_ok = a;
        self.delivered_error = b;
        self.not_delivered_ok = x;
        self.not_delivered_error = y;
        self.unknowable_ok = u;
        self.unknowable_error = v;
    }

    pub fn census(&self) -> Census {
        Census {
            cells: [
                [self.delivered_ok, self.delivered_error],
                [self.not_delivered_ok, self.not_delivered_error],
                [self.unknowable_ok, self.unknowable_error],
            ],
        }
    }
}

/// Run every protocol the scenario asks for, each against the scenario's
/// one flap schedule.
pub fn run_scenario(s: &Scenario) -> Result<Vec<RunReport>, HarnessError> {
    s.validate()?;
    let schedule = s.flap_schedule()?;
    s.kinds()
        .iter()
        .map(|&k| run_with_schedule(s, k, &schedule))
        .collect()
}

/// Bilateral and baseline runs over the identical flap schedule.
pub fn run_paired(s: &Scenario) -> Result<(RunReport, RunReport), HarnessError> {
    s.validate()?;
    let schedule = s.flap_schedule()?;
    Ok((
        run_with_schedule(s, RunKind::Ae, &schedule)?,
        run_with_schedule(s, RunKind::Fito, &schedule)?,
    ))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LogLogFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
}

/// Least squares of `ln y` on `ln x`. Points with a non-positive coordinate
/// are skipped; `None` with fewer than two usable points.
pub fn loglog_fit(xs: &[f64], ys: &[f64]) -> Option<LogLogFit> {
    let pts: Vec<(f64, f64)> = xs
        .iter()
        .zip(ys)
        .filter(|(x, y)| **x > 0.0 && **y > 0.0)
        .map(|(x, y)| (libm::log(*x), libm::log(*y)))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = pts.iter().map(|p| (p.1 - my) * (p.1 - my)).sum();
    if sxx == 0.0 {
        return None;
    }
    let slope = sxy / sxx;
    let r2 = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    Some(LogLogFit {
        slope,
        intercept: my - slope * mx,
        r2,
    })
}
