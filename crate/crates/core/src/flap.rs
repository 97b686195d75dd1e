//! Physical disturbance schedules.
//!
//! Each link flaps independently with exponential inter-flap gaps of mean
//! `T`, so a cluster of `N` links sees a flap about every `T / N`.

use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kernel::{rng_stream, EntityId, Scheduler, SimRng, VirtualTime};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FlapError {
    #[error("link count must be at least 1")]
    NoLinks,
    #[error("mean time to flap must be positive")]
    ZeroMttf,
    #[error("schedule references unknown link {0}")]
    UnknownLink(u32),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum DurationDist {
    Fixed { ns: u64 },
    Exponential { mean_ns: u64 },
}

impl DurationDist {
    pub fn sample(&self, rng: &mut SimRng) -> VirtualTime {
        match *self {
            DurationDist::Fixed { ns } => VirtualTime(ns.max(1)),
            DurationDist::Exponential { mean_ns } => {
                VirtualTime(exponential(rng, mean_ns as f64).max(1))
            }
        }
    }

    pub fn mean_ns(&self) -> u64 {
        match *self {
            DurationDist::Fixed { ns } => ns,
            DurationDist::Exponential { mean_ns } => mean_ns,
        }
    }
}

impl Default for DurationDist {
    /// Ten liveness cadences at the default 1 ms cadence.
    fn default() -> Self {
        DurationDist::Fixed { ns: 10_000_000 }
    }
}

/// Exponential draw with the given mean, rounded to whole ticks.
pub fn exponential(rng: &mut SimRng, mean: f64) -> u64 {
    let u: f64 = rng.random();
    // 1 - u lies in (0, 1], so the log is finite.
    libm::round(-mean * libm::log(1.0 - u)) as u64
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlapParams {
    /// Per-link mean time to flap.
    pub mttf: VirtualTime,
    pub links: u32,
    pub duration: DurationDist,
    pub seed: u64,
}

impl FlapParams {
    pub fn validate(&self) -> Result<(), FlapError> {
        if self.links == 0 {
            return Err(FlapError::NoLinks);
        }
        if self.mttf == VirtualTime::ZERO {
            return Err(FlapError::ZeroMttf);
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct FlapEntry {
    pub start: VirtualTime,
    pub link: u32,
    pub duration: VirtualTime,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlapSchedule {
    pub entries: Vec<FlapEntry>,
}

impl FlapSchedule {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Mean gap between consecutive flap starts across the whole cluster.
    pub fn mean_inter_flap(&self) -> Option<f64> {
        if self.entries.len() < 2 {
            return None;
        }
        let first = self.entries.first()?.start.as_nanos();
        let last = self.entries.last()?.start.as_nanos();
        Some((last - first) as f64 / (self.entries.len() - 1) as f64)
    }

    pub fn sort(&mut self) {
        self.entries.sort();
    }
}

/// `T_cluster = T / N`, truncated to whole ticks.
pub fn cluster_mttf(mttf: VirtualTime, links: u32) -> Result<VirtualTime, FlapError> {
    if links == 0 {
        return Err(FlapError::NoLinks);
    }
    Ok(VirtualTime(mttf.as_nanos() / links as u64))
}

pub fn generate_flap_schedule(params: &FlapParams, horizon: VirtualTime) -> FlapSchedule {
    let mut rng = rng_stream(params.seed, "flaps");
    let mean = params.mttf.as_nanos() as f64;
    let mut entries = Vec::new();
    for link in 0..params.links {
        let mut t = 0u64;
        loop {
            t = t.saturating_add(exponential(&mut rng, mean));
            if t >= horizon.as_nanos() {
                break;
            }
            entries.push(FlapEntry {
                start: VirtualTime(t),
                link,
                duration: params.duration.sample(&mut rng),
            });
        }
    }
    entries.sort();
    FlapSchedule { entries }
}

/// Payloads that can carry a link disturbance.
pub trait DisturbancePayload {
    fn sever(link: u32) -> Self;
    fn restore(link: u32) -> Self;
}

pub const SEVER_KIND: &str = "flap.sever";
pub const RESTORE_KIND: &str = "flap.restore";

/// Turn every entry into a sever/restore event pair. Returns the number of
/// events scheduled.
pub fn inject<P: DisturbancePayload>(
    schedule: &FlapSchedule,
    sim: &mut Scheduler<P>,
    link_count: u32,
    entity_of: impl Fn(u32) -> EntityId,
) -> Result<usize, FlapError> {
    if let Some(bad) = schedule.entries.iter().find(|e| e.link >= link_count) {
        return Err(FlapError::UnknownLink(bad.link));
    }
    let mut n = 0;
    for e in &schedule.entries {
        sim.schedule(e.start, entity_of(e.link), SEVER_KIND, P::sever(e.link))
            .map_err(|_| FlapError::UnknownLink(e.link))?;
        sim.schedule(
            e.start + e.duration,
            entity_of(e.link),
            RESTORE_KIND,
            P::restore(e.link),
        )
        .map_err(|_| FlapError::UnknownLink(e.link))?;
        n += 2;
    }
    Ok(n)
}
