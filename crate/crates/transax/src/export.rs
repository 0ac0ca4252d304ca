//! Report files: the event log as JSON lines plus plot-ready CSVs.
//!
//! The log keeps every float at full precision so replay is exact. CSV
//! floats are rounded to 9 significant digits.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;
use transax_core::sim::SimReport;
use transax_core::{Genesis, LedgerEvent};

use crate::metrics::{EnergyBalance, Metrics};

pub const EVENTS_FILE: &str = "events.jsonl";
pub const INTERVALS_FILE: &str = "intervals.csv";
pub const SOLVER_FILE: &str = "solver.csv";
pub const CONTROLLER_FILE: &str = "controller.csv";
pub const METRICS_FILE: &str = "metrics.csv";

#[derive(Debug, Error)]
pub enum ExportError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Format { line: usize, message: String },
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

fn io_at(path: &Path) -> impl Fn(std::io::Error) -> ExportError + '_ {
    move |source| ExportError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// First line of a log file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct GenesisLine {
    seq: u64,
    genesis: Genesis,
}

/// Shortest decimal that reads back as the value rounded to 9 significant digits.
pub fn fmt_float(x: f64) -> String {
    if !x.is_finite() {
        return x.to_string();
    }
    if x == 0.0 {
        return "0".to_string();
    }
    let rounded: f64 = format!("{x:.8e}").parse().unwrap_or(x);
    format!("{rounded}")
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(fmt_float).unwrap_or_default()
}

pub fn write_log(genesis: &Genesis, events: &[LedgerEvent], out: impl Write) -> std::io::Result<()> {
    let mut w = BufWriter::new(out);
    let head = GenesisLine {
        seq: 0,
        genesis: genesis.clone(),
    };
    serde_json::to_writer(&mut w, &head)?;
    w.write_all(b"\n")?;
    for e in events {
        serde_json::to_writer(&mut w, e)?;
        w.write_all(b"\n")?;
    }
    w.flush()
}

pub fn read_log(input: impl Read) -> Result<(Genesis, Vec<LedgerEvent>), ExportError> {
    let reader = BufReader::new(input);
    let mut genesis = None;
    let mut events = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| ExportError::Format {
            line: line_no,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let format = |e: serde_json::Error| ExportError::Format {
            line: line_no,
            message: e.to_string(),
        };
        if genesis.is_none() {
            let head: GenesisLine = serde_json::from_str(&line).map_err(format)?;
            genesis = Some(head.genesis);
        } else {
            events.push(serde_json::from_str(&line).map_err(format)?);
        }
    }
    let genesis = genesis.ok_or(ExportError::Format {
        line: 1,
        message: "missing genesis record".into(),
    })?;
    Ok((genesis, events))
}

pub fn read_log_file(path: &Path) -> Result<(Genesis, Vec<LedgerEvent>), ExportError> {
    read_log(fs::File::open(path).map_err(io_at(path))?)
}

fn balance_fields(b: &EnergyBalance) -> [String; 7] {
    [
        fmt_float(b.sell_offered),
        fmt_float(b.buy_offered),
        fmt_float(b.traded),
        fmt_opt(b.unused_fraction),
        fmt_opt(b.unmet_fraction),
        fmt_float(b.unused_dollars),
        fmt_float(b.unmet_dollars),
    ]
}

fn csv_file(dir: &Path, name: &str) -> Result<csv::Writer<fs::File>, ExportError> {
    let path = dir.join(name);
    let f = fs::File::create(&path).map_err(io_at(&path))?;
    Ok(csv::Writer::from_writer(f))
}

/// Per-interval rows with a trailing `total` row. Empty intervals are skipped.
pub fn write_metrics(metrics: &Metrics, out: impl Write) -> Result<(), ExportError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "interval",
        "sell_offered",
        "buy_offered",
        "traded",
        "unused_fraction",
        "unmet_fraction",
        "unused_dollars",
        "unmet_dollars",
    ])?;
    let mut any = false;
    for m in &metrics.intervals {
        let b = &m.balance;
        if !active(b.sell_offered, b.buy_offered, b.traded) {
            continue;
        }
        any = true;
        let mut row = vec![m.interval.to_string()];
        row.extend(balance_fields(b));
        w.write_record(&row)?;
    }
    if any {
        let mut row = vec!["total".to_string()];
        row.extend(balance_fields(&metrics.total));
        w.write_record(&row)?;
    }
    w.flush().map_err(|source| ExportError::Io {
        path: PathBuf::from(METRICS_FILE),
        source,
    })
}

fn active(sell: f64, buy: f64, traded: f64) -> bool {
    sell > 0.0 || buy > 0.0 || traded > 0.0
}

/// Writes the five report files into `dir`, creating it if needed. Intervals
/// with nothing offered or traded are left out of the per-interval files.
pub fn export_report(report: &SimReport, metrics: &Metrics, dir: &Path) -> Result<(), ExportError> {
    fs::create_dir_all(dir).map_err(io_at(dir))?;
    let log_path = dir.join(EVENTS_FILE);
    let f = fs::File::create(&log_path).map_err(io_at(&log_path))?;
    write_log(&report.genesis, &report.events, f).map_err(io_at(&log_path))?;

    let mut w = csv_file(dir, INTERVALS_FILE)?;
    w.write_record(["interval", "sell_offered", "buy_offered", "traded", "trades", "finalized"])?;
    for r in &report.intervals {
        if !active(r.sell_offered, r.buy_offered, r.traded) {
            continue;
        }
        w.write_record([
            r.interval.to_string(),
            fmt_float(r.sell_offered),
            fmt_float(r.buy_offered),
            fmt_float(r.traded),
            r.trades.to_string(),
            r.finalized.to_string(),
        ])?;
    }
    w.flush().map_err(io_at(dir))?;

    let mut w = csv_file(dir, SOLVER_FILE)?;
    w.write_record([
        "solver",
        "tick",
        "interval",
        "lookahead",
        "variables",
        "constraints",
        "iterations",
        "objective",
        "solve_time",
        "cached",
        "submitted",
    ])?;
    for s in &report.solves {
        w.write_record([
            s.solver.0.to_string(),
            s.tick.to_string(),
            s.interval.to_string(),
            s.lookahead.to_string(),
            s.variables.to_string(),
            s.constraints.to_string(),
            s.iterations.to_string(),
            fmt_float(s.objective),
            fmt_float(s.solve_time),
            s.cached.to_string(),
            s.submitted.to_string(),
        ])?;
    }
    w.flush().map_err(io_at(dir))?;

    let mut w = csv_file(dir, CONTROLLER_FILE)?;
    w.write_record(["solver", "tick", "solve_time", "lookahead", "max_lookahead", "cpu"])?;
    for c in &report.control {
        w.write_record([
            c.solver.0.to_string(),
            c.tick.to_string(),
            fmt_float(c.solve_time),
            c.lookahead.to_string(),
            c.max_lookahead.to_string(),
            fmt_float(c.cpu),
        ])?;
    }
    w.flush().map_err(io_at(dir))?;

    let path = dir.join(METRICS_FILE);
    let f = fs::File::create(&path).map_err(io_at(&path))?;
    write_metrics(metrics, f)?;
    Ok(())
}
