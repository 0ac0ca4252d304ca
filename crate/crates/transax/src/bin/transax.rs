use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde_json::json;
use transax::export::{self, export_report, write_metrics};
use transax::metrics::{compute_metrics, DEFAULT_UNIT_PRICE};
use transax::oracle::run_suite;
use transax::traces::{ingest_traces, synthesize_traces, write_traces};
use transax::{read_config, simulate, synth_spec, verify_file, Error};

#[derive(Parser)]
#[command(name = "transax", version, about = "Forward energy exchange simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a trading day and write the report files.
    Run {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, conflicts_with = "synthesize", required_unless_present = "synthesize")]
        traces: Option<PathBuf>,
        /// Generate traces from the config's homes/producers/feeders/seed.
        #[arg(long)]
        synthesize: bool,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Config override as key=value; repeatable.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Replay an event log and re-check every acceptance and finalization.
    Verify { log: PathBuf },
    /// Compare the solver against exact and brute-force optima.
    Oracle {
        #[arg(long, default_value_t = 200)]
        count: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Recompute energy metrics from an event log.
    Metrics {
        log: PathBuf,
        #[arg(long, default_value_t = DEFAULT_UNIT_PRICE)]
        unit_price: f64,
        /// Write CSV here instead of printing JSON.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write synthetic traces as CSV.
    Synthesize {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn fail(kind: &str, message: impl ToString) -> ExitCode {
    eprintln!("{}", json!({ "error": kind, "message": message.to_string() }));
    ExitCode::FAILURE
}

fn io(path: &std::path::Path) -> impl Fn(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.display().to_string(),
        source,
    }
}

fn execute(command: Command) -> Result<serde_json::Value, Error> {
    match command {
        Command::Run {
            config,
            traces,
            synthesize,
            out,
            overrides,
        } => {
            let cfg = read_config(config.as_deref(), &overrides)?;
            debug_assert!(synthesize != traces.is_some());
            let traces = traces.map(|p| ingest_traces(&p)).transpose()?;
            let (report, metrics) = simulate(&cfg, traces)?;
            export_report(&report, &metrics, &out)?;
            Ok(json!({
                "out": out.display().to_string(),
                "events": report.events.len(),
                "finalized_through": report.final_state.pinned.finalized_through(),
                "traded": report.total_traded(),
                "total": metrics.total,
            }))
        }
        Command::Verify { log } => {
            let (summary, _) = verify_file(&log)?;
            Ok(serde_json::to_value(summary).expect("summary serializes"))
        }
        Command::Oracle { count, seed } => {
            let summary = run_suite(count, seed);
            Ok(serde_json::to_value(summary).expect("summary serializes"))
        }
        Command::Metrics {
            log,
            unit_price,
            out,
        } => {
            let (genesis, events) = export::read_log_file(&log)?;
            let metrics = compute_metrics(&genesis, &events, unit_price)?;
            match out {
                Some(p) => {
                    let f = std::fs::File::create(&p).map_err(io(&p))?;
                    write_metrics(&metrics, f)?;
                    Ok(json!({ "out": p.display().to_string() }))
                }
                None => Ok(serde_json::to_value(metrics).expect("metrics serialize")),
            }
        }
        Command::Synthesize {
            config,
            overrides,
            out,
        } => {
            let cfg = read_config(config.as_deref(), &overrides)?;
            let traces = synthesize_traces(&synth_spec(&cfg))?;
            let f = std::fs::File::create(&out).map_err(io(&out))?;
            write_traces(&traces, f)?;
            Ok(json!({ "out": out.display().to_string(), "participants": traces.len() }))
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => e.exit(),
        Err(e) => return fail("usage", e.to_string().trim_end()),
    };
    let is_oracle = matches!(cli.command, Command::Oracle { .. });
    match execute(cli.command) {
        Ok(v) => {
            println!("{v}");
            if is_oracle && v["failures"].as_array().is_some_and(|f| !f.is_empty()) {
                return fail("oracle", "solver disagreed with the oracle");
            }
            ExitCode::SUCCESS
        }
        Err(e) => fail(e.kind(), e),
    }
}
