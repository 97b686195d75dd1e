use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use oae_core::harness::{run_scenario, MetricsRow, Scenario, SweepParam, TopologySpec};
use oae_core::sync::generate_workload;
use oae_core::topology::{build_grid, count_failure_configs, enumerate_triangles};
use oae_sim::{audit, load_scenario_file, output, sweep};

#[derive(Parser)]
#[command(name = "oae-sim", version, about = "Bilateral link vs timeout-and-retry simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Jsonl,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and print one metrics row per link kind.
    Run {
        scenario: PathBuf,
        #[arg(long, value_enum, default_value = "csv")]
        format: Format,
        /// Also write rows, traces, the flap schedule and any DAG or
        /// adjacency export into this directory.
        #[arg(long)]
        out_dir: Option<PathBuf>,
        /// Record traces even if the scenario does not ask for them.
        #[arg(long)]
        trace: bool,
    },
    /// Run the scenario once per value of a parameter.
    Sweep {
        scenario: PathBuf,
        #[arg(long)]
        param: String,
        /// Comma-separated values.
        #[arg(long, value_delimiter = ',', num_args = 0..)]
        values: Vec<f64>,
        #[arg(long, value_enum, default_value = "csv")]
        format: Format,
    },
    /// Ledger audit per link kind plus the store audits, as JSON.
    Audit { scenario: PathBuf },
    /// Count failure configurations of a fully connected cluster, and list
    /// the triangles of a grid.
    Enumerate {
        #[arg(long)]
        nodes: u64,
        /// Grid dimensions as ROWSxCOLS.
        #[arg(long)]
        grid: Option<String>,
    },
}

fn emit(rows: &[MetricsRow], format: Format, out: impl Write) -> Result<()> {
    match format {
        Format::Csv => output::write_csv(rows, out),
        Format::Jsonl => output::write_jsonl(rows, out),
    }
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    let p = dir.join(name);
    Ok(BufWriter::new(File::create(&p).with_context(|| format!("creating {}", p.display()))?))
}

fn violations(rows: &[MetricsRow]) -> u64 {
    rows.iter().map(|r| r.violations).sum()
}

fn run(path: &Path, format: Format, out_dir: Option<&Path>, trace: bool) -> Result<bool> {
    let mut s: Scenario = load_scenario_file(path)?;
    s.trace |= trace;
    let reports = run_scenario(&s)?;
    let rows: Vec<MetricsRow> = reports.iter().map(|r| r.row.clone()).collect();
    emit(&rows, format, io::stdout().lock())?;
    for r in &reports {
        for v in &r.violations {
            eprintln!("violation [{}]: {v}", r.row.link_kind);
        }
    }
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir)?;
        output::write_csv(&rows, create(dir, "rows.csv")?)?;
        output::write_jsonl(&rows, create(dir, "rows.jsonl")?)?;
        output::write_flap_schedule(&s.flap_schedule()?, create(dir, "flaps.csv")?)?;
        for r in &reports {
            if !r.trace.is_empty() {
                output::write_trace(&r.trace, create(dir, &format!("trace-{}.jsonl", r.row.link_kind))?)?;
            }
            if !r.transcripts.is_empty() {
                output::write_jsonl(&r.transcripts, create(dir, &format!("2pc-{}.jsonl", r.row.link_kind))?)?;
            }
        }
        if let Some(params) = s.sync_params() {
            output::write_dag(&generate_workload(&params)?, create(dir, "dag.json")?)?;
        }
        if let TopologySpec::Grid { rows, cols } = s.topology {
            output::write_adjacency(&build_grid(rows, cols)?, create(dir, "adjacency.json")?)?;
        }
    }
    Ok(violations(&rows) == 0)
}

fn parse_grid(g: &str) -> Result<(u32, u32)> {
    let Some((r, c)) = g.split_once(['x', 'X']) else {
        bail!("grid must look like 3x3, got {g:?}");
    };
    Ok((r.trim().parse()?, c.trim().parse()?))
}

fn main() -> ExitCode {
    match real_main() {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn real_main() -> Result<bool> {
    let cli = Cli::parse();
    match cli.command {
        Command::Run {
            scenario,
            format,
            out_dir,
            trace,
        } => run(&scenario, format, out_dir.as_deref(), trace),
        Command::Sweep {
            scenario,
            param,
            values,
            format,
        } => {
            let s = load_scenario_file(&scenario)?;
            let param: SweepParam = param.parse()?;
            let rows = sweep(&s, param, &values)?;
            emit(&rows, format, io::stdout().lock())?;
            Ok(violations(&rows) == 0)
        }
        Command::Audit { scenario } => {
            let s = load_scenario_file(&scenario)?;
            let outcome = audit(&s)?;
            let mut out = io::stdout().lock();
            serde_json::to_writer_pretty(&mut out, &outcome)?;
            writeln!(out)?;
            let failures = outcome.failures();
            for f in &failures {
                eprintln!("violation: {f}");
            }
            Ok(failures.is_empty())
        }
        Command::Enumerate { nodes, grid } => {
            let mut out = io::stdout().lock();
            writeln!(out, "{}", count_failure_configs(nodes)?)?;
            if let Some(g) = grid {
                let (rows, cols) = parse_grid(&g)?;
                let grid = build_grid(rows, cols)?;
                let tris = enumerate_triangles(&grid);
                writeln!(out, "triangles {}", tris.len())?;
                for t in tris {
                    let [a, b, c] = t.nodes;
                    writeln!(out, "{} {} {}", a.0, b.0, c.0)?;
                }
            }
            Ok(true)
        }
    }
}
