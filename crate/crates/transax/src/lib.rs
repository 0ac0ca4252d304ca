//! File formats, trace handling, metrics and the command-line front end for
//! the `transax-core` exchange.

pub mod adversary;
pub mod config;
pub mod export;
pub mod metrics;
pub mod oracle;
pub mod traces;

use std::path::Path;

use serde::Serialize;
use thiserror::Error;
use transax_core::ledger::{audit, AuditError};
use transax_core::sim::{ProsumerTrace, SimError, SimReport, Simulation};
use transax_core::{ContractState, Genesis, LedgerEvent};

use config::{ConfigError, RunConfig};
use export::ExportError;
use metrics::{compute_metrics, Metrics, MetricsError};
use traces::{SynthSpec, TraceError};

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Trace(#[from] TraceError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Export(#[from] ExportError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("audit failed: {0}")]
    Audit(#[from] AuditError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

impl Error {
    /// Stable machine-readable tag.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Config(_) => "config",
            Error::Trace(_) => "trace",
            Error::Sim(_) => "simulation",
            Error::Export(_) => "export",
            Error::Metrics(_) => "metrics",
            Error::Audit(_) => "audit",
            Error::Io { .. } => "io",
        }
    }
}

pub fn synth_spec(cfg: &RunConfig) -> SynthSpec {
    SynthSpec {
        homes: cfg.homes,
        producers: cfg.producers,
        feeders: cfg.feeders,
        intervals: cfg.horizon,
        seed: cfg.seed,
        delta_hours: cfg.delta_hours,
    }
}

/// Runs the configured simulation over `traces`, or over synthesized traces
/// when none are given.
pub fn simulate(cfg: &RunConfig, traces: Option<Vec<ProsumerTrace>>) -> Result<(SimReport, Metrics), Error> {
    let mut traces = match traces {
        Some(t) => t,
        None => traces::synthesize_traces(&synth_spec(cfg))?,
    };
    let flexible = cfg.flexible_participants()?;
    for t in &mut traces {
        if flexible.contains(&t.participant) {
            t.flexible = true;
        }
    }
    let report = Simulation::new(cfg.sim_config()?, traces)?.run()?;
    let metrics = compute_metrics(&report.genesis, &report.events, cfg.unit_price)?;
    Ok((report, metrics))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerifySummary {
    pub events: usize,
    pub accepted: usize,
    pub rejected: usize,
    pub finalized_intervals: usize,
    pub finalized_trades: usize,
    pub finalized_through: Option<u32>,
}

/// Replays a log, re-checking every acceptance and finalization.
pub fn verify_log(genesis: &Genesis, events: &[LedgerEvent]) -> Result<(VerifySummary, ContractState), Error> {
    let report = audit(genesis, events)?;
    let summary = VerifySummary {
        events: report.events,
        accepted: report.accepted,
        rejected: report.rejected,
        finalized_intervals: report.finalized_intervals,
        finalized_trades: report.finalized_trades,
        finalized_through: report.state.pinned.finalized_through(),
    };
    Ok((summary, report.state))
}

pub fn verify_file(path: &Path) -> Result<(VerifySummary, ContractState), Error> {
    let (genesis, events) = export::read_log_file(path)?;
    verify_log(&genesis, &events)
}

pub fn read_config(path: Option<&Path>, overrides: &[String]) -> Result<RunConfig, Error> {
    let text = match path {
        Some(p) => std::fs::read_to_string(p).map_err(|source| Error::Io {
            path: p.display().to_string(),
            source,
        })?,
        None => String::new(),
    };
    Ok(RunConfig::with_overrides(&text, overrides)?)
}
