//! A file store whose listing survives eviction of the data behind it.
//!
//! Evicted files stay listed with valid metadata; reading one triggers a
//! fetch that can fail. Every operation is traced so listing stability can
//! be audited afterwards.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kernel::{rng_stream, SimRng, VirtualTime};
use crate::Digest;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StoreConfig {
    #[serde(default)]
    pub eviction: bool,
    /// Chance that the eviction daemon drops a file's data on each tick.
    #[serde(default = "default_eviction_probability")]
    pub eviction_probability: f64,
    #[serde(default = "default_hydration_failure")]
    pub hydration_failure: f64,
    #[serde(default = "default_tick")]
    pub tick: VirtualTime,
}

fn default_eviction_probability() -> f64 {
    0.05
}

fn default_hydration_failure() -> f64 {
    0.1
}

fn default_tick() -> VirtualTime {
    VirtualTime::from_millis(1)
}

impl Default for StoreConfig {
    fn default() -> Self {
        StoreConfig {
            eviction: false,
            eviction_probability: default_eviction_probability(),
            hydration_failure: default_hydration_failure(),
            tick: default_tick(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FacadeFile {
    pub path: String,
    pub metadata_present: bool,
    pub data_present: bool,
    pub content: Digest,
    pub renamed_from: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum StoreError {
    #[error("{0}: no such file")]
    NotFound(String),
    #[error("{0}: listed but data could not be fetched")]
    Unavailable(String),
    #[error("{0}: already exists")]
    Exists(String),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "kebab-case")]
pub enum StoreOpKind {
    List { paths: Vec<String> },
    Read { path: String, ok: bool },
    Write { path: String },
    Unlink { path: String },
    Rename { from: String, to: String },
    Evict { path: String },
    Hydrate { path: String, ok: bool },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StoreOp {
    pub at: VirtualTime,
    #[serde(flatten)]
    pub kind: StoreOpKind,
}

#[derive(Clone, Debug)]
pub struct FacadeStore {
    config: StoreConfig,
    files: BTreeMap<String, FacadeFile>,
    rng: SimRng,
    now: VirtualTime,
    next_tick: VirtualTime,
    pending_writes: Vec<(VirtualTime, String, Digest)>,
    trace: Vec<StoreOp>,
}

impl FacadeStore {
    pub fn new(config: StoreConfig, seed: u64) -> Self {
        FacadeStore {
            config,
            files: BTreeMap::new(),
            rng: rng_stream(seed, "store"),
            now: VirtualTime::ZERO,
            next_tick: config.tick,
            pending_writes: Vec::new(),
            trace: Vec::new(),
        }
    }

    pub fn config(&self) -> &StoreConfig {
        &self.config
    }

    pub fn now(&self) -> VirtualTime {
        self.now
    }

    pub fn trace(&self) -> &[StoreOp] {
        &self.trace
    }

    pub fn file(&self, path: &str) -> Option<&FacadeFile> {
        self.files.get(path)
    }

    fn log(&mut self, kind: StoreOpKind) {
        self.trace.push(StoreOp { at: self.now, kind });
    }

    /// Move the clock to `to`, running eviction ticks and scheduled writes
    /// in time order.
    pub fn advance(&mut self, to: VirtualTime) {
        if to <= self.now {
            return;
        }
        self.pending_writes.sort_by(|a, b| a.0.cmp(&b.0));
        loop {
            let write_at = self.pending_writes.first().map(|w| w.0).filter(|&t| t <= to);
            let tick_at = (self.config.eviction && self.config.tick > VirtualTime::ZERO)
                .then_some(self.next_tick)
                .filter(|&t| t <= to);
            match (write_at, tick_at) {
                (Some(w), t) if t.is_none_or(|t| w <= t) => {
                    let (at, path, content) = self.pending_writes.remove(0);
                    self.now = self.now.max(at);
                    self.write(&path, content);
                }
                (_, Some(t)) => {
                    self.now = self.now.max(t);
                    self.next_tick = t + self.config.tick;
                    self.eviction_daemon();
                }
                _ => break,
            }
        }
        self.now = to;
    }

    pub fn schedule_write(&mut self, at: VirtualTime, path: &str, content: Digest) {
        self.pending_writes.push((at, path.into(), content));
    }

    pub fn create(&mut self, path: &str, content: Digest) -> Result<(), StoreError> {
        if self.files.contains_key(path) {
            return Err(StoreError::Exists(path.into()));
        }
        self.files.insert(
            path.into(),
            FacadeFile {
                path: path.into(),
                metadata_present: true,
                data_present: true,
                content,
                renamed_from: None,
            },
        );
        self.log(StoreOpKind::Write { path: path.into() });
        Ok(())
    }

    /// Replace content, creating the file if needed.
    pub fn write(&mut self, path: &str, content: Digest) {
        let f = self.files.entry(path.into()).or_insert_with(|| FacadeFile {
            path: path.into(),
            metadata_present: true,
            data_present: true,
            content,
            renamed_from: None,
        });
        f.content = content;
        f.data_present = true;
        self.log(StoreOpKind::Write { path: path.into() });
    }

    pub fn list(&mut self) -> Vec<String> {
        let paths: Vec<String> = self
            .files
            .values()
            .filter(|f| f.metadata_present)
            .map(|f| f.path.clone())
            .collect();
        self.log(StoreOpKind::List {
            paths: paths.clone(),
        });
        paths
    }

    pub fn read(&mut self, path: &str) -> Result<Digest, StoreError> {
        let result = match self.files.get(path) {
            None => Err(StoreError::NotFound(path.into())),
            Some(f) if f.data_present => Ok(f.content),
            Some(_) => {
                let fail = self.rng.random::<f64>() < self.config.hydration_failure;
                let f = self.files.get_mut(path).expect("checked above");
                if fail {
                    Err(StoreError::Unavailable(path.into()))
                } else {
                    f.data_present = true;
                    Ok(f.content)
                }
            }
        };
        self.log(StoreOpKind::Read {
            path: path.into(),
            ok: result.is_ok(),
        });
        result
    }

    pub fn unlink(&mut self, path: &str) -> Result<(), StoreError> {
        self.files
            .remove(path)
            .ok_or_else(|| StoreError::NotFound(path.into()))?;
        self.log(StoreOpKind::Unlink { path: path.into() });
        Ok(())
    }

    /// Delete plus create, linked by provenance.
    pub fn rename(&mut self, from: &str, to: &str) -> Result<(), StoreError> {
        if self.files.contains_key(to) {
            return Err(StoreError::Exists(to.into()));
        }
        let mut f = self
            .files
            .remove(from)
            .ok_or_else(|| StoreError::NotFound(from.into()))?;
        f.path = to.into();
        f.renamed_from = Some(from.into());
        self.files.insert(to.into(), f);
        self.log(StoreOpKind::Rename {
            from: from.into(),
            to: to.into(),
        });
        Ok(())
    }

    fn eviction_daemon(&mut self) {
        let p = self.config.eviction_probability;
        let victims: Vec<String> = self
            .files
            .values()
            .filter(|f| f.data_present)
            .map(|f| f.path.clone())
            .collect::<Vec<_>>()
            .into_iter()
            .filter(|_| self.rng.random::<f64>() < p)
            .collect();
        for v in victims {
            let _ = facade_evict(self, &v);
        }
    }
}

/// Drop a file's data; its metadata and listing stay.
pub fn facade_evict(store: &mut FacadeStore, path: &str) -> Result<(), StoreError> {
    let f = store
        .files
        .get_mut(path)
        .ok_or_else(|| StoreError::NotFound(path.into()))?;
    f.data_present = false;
    store.log(StoreOpKind::Evict { path: path.into() });
    Ok(())
}

pub fn facade_hydrate(store: &mut FacadeStore, path: &str, succeeds: bool) -> Result<(), StoreError> {
    let f = store
        .files
        .get_mut(path)
        .ok_or_else(|| StoreError::NotFound(path.into()))?;
    if succeeds {
        f.data_present = true;
    }
    store.log(StoreOpKind::Hydrate {
        path: path.into(),
        ok: succeeds,
    });
    if succeeds {
        Ok(())
    } else {
        Err(StoreError::Unavailable(path.into()))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PropertyLViolation {
    pub path: String,
    pub listed_at: VirtualTime,
    pub failed_at: VirtualTime,
}

/// One violation per failed read of a path that was listed earlier with no
/// unlink or rename of it since.
pub fn audit_property_l(trace: &[StoreOp]) -> Vec<PropertyLViolation> {
    let mut listed: BTreeMap<&str, VirtualTime> = BTreeMap::new();
    let mut out = Vec::new();
    for op in trace {
        match &op.kind {
            StoreOpKind::List { paths } => {
                for p in paths {
                    listed.insert(p, op.at);
                }
            }
            StoreOpKind::Unlink { path } => {
                listed.remove(path.as_str());
            }
            StoreOpKind::Rename { from, to } => {
                listed.remove(from.as_str());
                listed.remove(to.as_str());
            }
            StoreOpKind::Read { path, ok: false } => {
                if let Some(&t0) = listed.get(path.as_str()) {
                    out.push(PropertyLViolation {
                        path: path.clone(),
                        listed_at: t0,
                        failed_at: op.at,
                    });
                }
            }
            _ => {}
        }
    }
    out
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditReport {
    pub listed: u64,
    pub verified: Vec<String>,
    pub mismatch: Vec<String>,
    pub cannot_verify: Vec<String>,
}

impl AuditReport {
    /// Rows of (category, count) in table order.
    pub fn table(&self) -> [(&'static str, u64); 3] {
        [
            ("verified", self.verified.len() as u64),
            ("version mismatch", self.mismatch.len() as u64),
            ("cannot verify", self.cannot_verify.len() as u64),
        ]
    }
}

/// List, checksum everything, wait `delay`, checksum again.
pub fn run_three_step_audit(store: &mut FacadeStore, delay: VirtualTime) -> AuditReport {
    let paths = store.list();
    let first: Vec<_> = paths.iter().map(|p| store.read(p).ok()).collect();
    let later = store.now() + delay;
    store.advance(later);
    let mut r = AuditReport {
        listed: paths.len() as u64,
        ..AuditReport::default()
    };
    for (p, a) in paths.into_iter().zip(first) {
        match (a, store.read(&p).ok()) {
            (Some(x), Some(y)) if x == y => r.verified.push(p),
            (Some(_), Some(_)) => r.mismatch.push(p),
            _ => r.cannot_verify.push(p),
        }
    }
    r
}

/// A run of user activity against a store.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StoreWorkload {
    pub files: u32,
    pub steps: u32,
    #[serde(default = "default_tick")]
    pub interval: VirtualTime,
    #[serde(default = "default_unlink")]
    pub unlink_fraction: f64,
    #[serde(default = "default_unlink")]
    pub rename_fraction: f64,
    #[serde(default = "default_list_every")]
    pub list_every: u32,
}

fn default_unlink() -> f64 {
    0.02
}

fn default_list_every() -> u32 {
    10
}

impl Default for StoreWorkload {
    fn default() -> Self {
        StoreWorkload {
            files: 72,
            steps: 200,
            interval: default_tick(),
            unlink_fraction: default_unlink(),
            rename_fraction: default_unlink(),
            list_every: default_list_every(),
        }
    }
}

pub fn run_store_workload(config: StoreConfig, w: &StoreWorkload, seed: u64) -> FacadeStore {
    let mut store = FacadeStore::new(config, seed);
    let mut rng = rng_stream(seed, "store.workload");
    for i in 0..w.files {
        let path = format!("d/{i:03}");
        let _ = store.create(&path, Digest::of(path.as_bytes()));
    }
    let mut renamed = 0u32;
    for k in 0..w.steps {
        store.advance(VirtualTime(w.interval.as_nanos() * (k as u64 + 1)));
        if w.list_every > 0 && k % w.list_every == 0 {
            store.list();
            continue;
        }
        let names: Vec<String> = store.files.keys().cloned().collect();
        if names.is_empty() {
            break;
        }
        let target = names[rng.random_range(0..names.len())].clone();
        let roll: f64 = rng.random();
        if roll < w.unlink_fraction {
            let _ = store.unlink(&target);
        } else if roll < w.unlink_fraction + w.rename_fraction {
            renamed += 1;
            let _ = store.rename(&target, &format!("r/{renamed:03}"));
        } else {
            let _ = store.read(&target);
        }
    }
    store
}
