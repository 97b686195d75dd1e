//! Row, trace and artifact writers.

use std::io::Write;

use anyhow::Result;
use oae_core::flap::FlapSchedule;
use oae_core::harness::MetricsRow;
use oae_core::kernel::TraceEntry;
use oae_core::sync::EventDag;
use oae_core::topology::OctavalentGrid;
use serde::Serialize;

/// CSV with a header; columns follow `MetricsRow` field order.
pub fn write_csv<W: Write>(rows: &[MetricsRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_jsonl<T: Serialize, W: Write>(items: &[T], mut out: W) -> Result<()> {
    for item in items {
        serde_json::to_writer(&mut out, item)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn write_trace<W: Write>(trace: &[TraceEntry], out: W) -> Result<()> {
    write_jsonl(trace, out)
}

#[derive(Serialize)]
struct FlapLine {
    link: u32,
    start_ns: u64,
    duration_ns: u64,
}

pub fn write_flap_schedule<W: Write>(schedule: &FlapSchedule, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for e in &schedule.entries {
        w.serialize(FlapLine {
            link: e.link,
            start_ns: e.start.as_nanos(),
            duration_ns: e.duration.as_nanos(),
        })?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_dag<W: Write>(dag: &EventDag, out: W) -> Result<()> {
    serde_json::to_writer_pretty(out, dag)?;
    Ok(())
}

pub fn write_adjacency<W: Write>(grid: &OctavalentGrid, out: W) -> Result<()> {
    serde_json::to_writer_pretty(out, &grid.export())?;
    Ok(())
}
