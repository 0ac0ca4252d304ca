//! Trace ingestion from CSV and seeded synthesis of a residential day.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::io::Read;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;
use thiserror::Error;
use transax_core::sim::ProsumerTrace;
use transax_core::{FeederId, ParticipantId};

pub const HEADER: [&str; 5] = ["participant", "feeder", "interval", "production_kwh", "demand_kwh"];

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("line {line}: {message}")]
    ParseError { line: u64, message: String },
    #[error("line {line}: participant {participant} expected interval {expected}, found {found}")]
    GapError {
        line: u64,
        participant: u32,
        expected: u32,
        found: u32,
    },
    #[error("line {line}: negative {column}")]
    NegativeValue { line: u64, column: &'static str },
    #[error("cannot read traces: {0}")]
    Io(#[from] std::io::Error),
    #[error("invalid synthesis spec: {0}")]
    SpecError(&'static str),
}

#[derive(Debug, Deserialize)]
struct Row {
    participant: u32,
    feeder: u32,
    interval: u32,
    production_kwh: f64,
    demand_kwh: f64,
}

pub fn ingest_traces(path: &Path) -> Result<Vec<ProsumerTrace>, TraceError> {
    let file = std::fs::File::open(path)?;
    read_traces(file)
}

/// Parses trace rows. Each participant's intervals must run 0, 1, 2, ...
/// without gaps; rows of different participants may interleave.
pub fn read_traces(input: impl Read) -> Result<Vec<ProsumerTrace>, TraceError> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let header = reader.headers().map_err(|e| TraceError::ParseError {
        line: 1,
        message: e.to_string(),
    })?;
    if header.iter().ne(HEADER) {
        return Err(TraceError::ParseError {
            line: 1,
            message: format!("expected header `{}`", HEADER.join(",")),
        });
    }
    let mut traces: BTreeMap<u32, ProsumerTrace> = BTreeMap::new();
    for record in reader.records() {
        let record = record.map_err(|e| TraceError::ParseError {
            line: e.position().map_or(0, |p| p.line()),
            message: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line());
        let row: Row = record.deserialize(None).map_err(|e| TraceError::ParseError {
            line,
            message: e.to_string(),
        })?;
        for (value, column) in [(row.production_kwh, "production_kwh"), (row.demand_kwh, "demand_kwh")] {
            if !value.is_finite() {
                return Err(TraceError::ParseError {
                    line,
                    message: format!("{column} is not finite"),
                });
            }
            if value < 0.0 {
                return Err(TraceError::NegativeValue { line, column });
            }
        }
        let trace = traces.entry(row.participant).or_insert_with(|| ProsumerTrace {
            participant: ParticipantId(row.participant),
            feeder: FeederId(row.feeder),
            production: Vec::new(),
            demand: Vec::new(),
            flexible: false,
        });
        if trace.feeder != FeederId(row.feeder) {
            return Err(TraceError::ParseError {
                line,
                message: format!("participant {} changes feeder", row.participant),
            });
        }
        let expected = trace.production.len() as u32;
        if row.interval != expected {
            return Err(TraceError::GapError {
                line,
                participant: row.participant,
                expected,
                found: row.interval,
            });
        }
        trace.production.push(row.production_kwh);
        trace.demand.push(row.demand_kwh);
    }
    Ok(traces.into_values().collect())
}

pub fn write_traces(traces: &[ProsumerTrace], out: impl std::io::Write) -> Result<(), TraceError> {
    let mut w = csv::Writer::from_writer(out);
    let io = |e: csv::Error| TraceError::Io(e.into());
    w.write_record(HEADER).map_err(io)?;
    for t in traces {
        for (i, (p, d)) in t.production.iter().zip(&t.demand).enumerate() {
            w.write_record([
                t.participant.0.to_string(),
                t.feeder.0.to_string(),
                i.to_string(),
                crate::export::fmt_float(*p),
                crate::export::fmt_float(*d),
            ])
            .map_err(io)?;
        }
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthSpec {
    pub homes: u32,
    pub producers: u32,
    pub feeders: u32,
    pub intervals: u32,
    pub seed: u64,
    pub delta_hours: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            homes: 102,
            producers: 5,
            feeders: 11,
            intervals: 96,
            seed: 7,
            delta_hours: 0.25,
        }
    }
}

/// Peak output of one producing home, kW.
const SOLAR_PEAK_KW: f64 = 118.0;
/// Flat part of household demand, kW.
const BASE_LOAD_KW: f64 = 3.0;

fn hour_of(t: u32, delta_hours: f64) -> f64 {
    ((t as f64 + 0.5) * delta_hours).rem_euclid(24.0)
}

fn solar_shape(hour: f64) -> f64 {
    if (6.0..18.0).contains(&hour) {
        (PI * (hour - 6.0) / 12.0).sin()
    } else {
        0.0
    }
}

fn load_shape(hour: f64) -> f64 {
    let bump = |center: f64, width: f64, height: f64| {
        let z = (hour - center) / width;
        height * (-z * z).exp()
    };
    BASE_LOAD_KW + bump(7.5, 1.5, 1.5) + bump(19.0, 2.0, 3.0)
}

/// Homes are spread round-robin over feeders; producers are spaced evenly
/// through the home list. Values are energy per interval in kWh.
pub fn synthesize_traces(spec: &SynthSpec) -> Result<Vec<ProsumerTrace>, TraceError> {
    if spec.producers > spec.homes {
        return Err(TraceError::SpecError("more producers than homes"));
    }
    if spec.feeders == 0 {
        return Err(TraceError::SpecError("at least one feeder is required"));
    }
    if spec.delta_hours.is_nan() || spec.delta_hours <= 0.0 {
        return Err(TraceError::SpecError("interval length must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let producers: Vec<u32> = (0..spec.producers)
        .map(|k| (u64::from(k) * u64::from(spec.homes) / u64::from(spec.producers)) as u32)
        .collect();
    let mut out = Vec::with_capacity(spec.homes as usize);
    for home in 0..spec.homes {
        let producing = producers.binary_search(&home).is_ok();
        let peak = if producing { SOLAR_PEAK_KW * rng.random_range(0.8..1.2) } else { 0.0 };
        let scale = rng.random_range(0.7..1.3);
        let mut production = Vec::with_capacity(spec.intervals as usize);
        let mut demand = Vec::with_capacity(spec.intervals as usize);
        for t in 0..spec.intervals {
            let hour = hour_of(t, spec.delta_hours);
            let cloud = rng.random_range(0.9..1.0);
            let noise = rng.random_range(0.85..1.15);
            production.push(peak * solar_shape(hour) * cloud * spec.delta_hours);
            demand.push(scale * load_shape(hour) * noise * spec.delta_hours);
        }
        out.push(ProsumerTrace {
            participant: ParticipantId(home),
            feeder: FeederId(home % spec.feeders),
            production,
            demand,
            flexible: false,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reads_a_small_file() {
        let text = "participant,feeder,interval,production_kwh,demand_kwh\n7,0,0,1.5,0\n7,0,1,0,2\n7,0,2,0,0\n";
        let t = read_traces(text.as_bytes()).unwrap();
        assert_eq!(t.len(), 1);
        assert_eq!(t[0].participant, ParticipantId(7));
        assert_eq!(t[0].production, vec![1.5, 0.0, 0.0]);
        assert_eq!(t[0].demand, vec![0.0, 2.0, 0.0]);
    }

    #[test]
    fn reports_bad_rows_with_lines() {
        let neg = "participant,feeder,interval,production_kwh,demand_kwh\n1,0,0,1,0\n1,0,1,1,-2\n";
        assert!(matches!(
            read_traces(neg.as_bytes()),
            Err(TraceError::NegativeValue { line: 3, column: "demand_kwh" })
        ));
        let gap = "participant,feeder,interval,production_kwh,demand_kwh\n1,0,0,1,0\n1,0,2,1,0\n";
        assert!(matches!(
            read_traces(gap.as_bytes()),
            Err(TraceError::GapError { line: 3, expected: 1, found: 2, .. })
        ));
        let junk = "participant,feeder,interval,production_kwh,demand_kwh\n1,0,zero,1,0\n";
        assert!(matches!(read_traces(junk.as_bytes()), Err(TraceError::ParseError { line: 2, .. })));
        let header = "who,feeder,interval,production_kwh,demand_kwh\n";
        assert!(matches!(read_traces(header.as_bytes()), Err(TraceError::ParseError { line: 1, .. })));
    }

    #[test]
    fn synthesis_is_deterministic() {
        let spec = SynthSpec {
            homes: 3,
            producers: 2,
            seed: 7,
            ..SynthSpec::default()
        };
        assert_eq!(synthesize_traces(&spec).unwrap(), synthesize_traces(&spec).unwrap());
        let other = SynthSpec { seed: 8, ..spec };
        assert_ne!(synthesize_traces(&spec).unwrap(), synthesize_traces(&other).unwrap());
    }

    #[test]
    fn no_producers_means_no_production() {
        let spec = SynthSpec {
            producers: 0,
            ..SynthSpec::default()
        };
        let t = synthesize_traces(&spec).unwrap();
        assert!(t.iter().all(|t| t.production.iter().all(|&p| p == 0.0)));
    }

    #[test]
    fn default_day_has_midday_surplus() {
        let t = synthesize_traces(&SynthSpec::default()).unwrap();
        assert_eq!(t.len(), 102);
        let at = |i: usize| -> (f64, f64) {
            (t.iter().map(|x| x.production[i]).sum(), t.iter().map(|x| x.demand[i]).sum())
        };
        let (p, d) = at(48);
        assert!(p > d, "noon production {p} vs demand {d}");
        let (p, d) = at(8);
        assert!(p < d);
        let feeders: std::collections::BTreeSet<_> = t.iter().map(|x| x.feeder).collect();
        assert_eq!(feeders.len(), 11);
    }

    #[test]
    fn bad_specs_are_rejected() {
        let spec = SynthSpec {
            homes: 2,
            producers: 3,
            ..SynthSpec::default()
        };
        assert!(matches!(synthesize_traces(&spec), Err(TraceError::SpecError(_))));
    }

    #[test]
    fn write_then_read_roundtrips() {
        let spec = SynthSpec {
            homes: 4,
            producers: 1,
            intervals: 6,
            ..SynthSpec::default()
        };
        let t = synthesize_traces(&spec).unwrap();
        let mut buf = Vec::new();
        write_traces(&t, &mut buf).unwrap();
        let back = read_traces(buf.as_slice()).unwrap();
        assert_eq!(back.len(), 4);
        for (a, b) in t.iter().zip(&back) {
            for (x, y) in a.demand.iter().zip(&b.demand) {
                assert!((x - y).abs() <= 1e-8 * x.abs().max(1.0));
            }
        }
    }
}
