//! Traded, unused and unmet energy from the audit trail.

use serde::{Deserialize, Serialize};
use thiserror::Error;
use transax_core::sim::{tally, IntervalTotals};
use transax_core::{EventKind, Genesis, Interval, LedgerEvent};

pub const DEFAULT_UNIT_PRICE: f64 = 0.12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricsError {
    #[error("event log is incomplete: {0}")]
    IncompleteLog(String),
}

/// Offered versus traded energy with the derived losses.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EnergyBalance {
    pub sell_offered: f64,
    pub buy_offered: f64,
    pub traded: f64,
    /// `None` when nothing was offered on that side.
    pub unused_fraction: Option<f64>,
    pub unmet_fraction: Option<f64>,
    pub unused_dollars: f64,
    pub unmet_dollars: f64,
}

impl EnergyBalance {
    pub fn new(sell_offered: f64, buy_offered: f64, traded: f64, unit_price: f64) -> Self {
        let frac = |offered: f64| (offered > 0.0).then(|| (offered - traded) / offered);
        Self {
            sell_offered,
            buy_offered,
            traded,
            unused_fraction: frac(sell_offered),
            unmet_fraction: frac(buy_offered),
            unused_dollars: (sell_offered - traded) * unit_price,
            unmet_dollars: (buy_offered - traded) * unit_price,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntervalMetrics {
    pub interval: Interval,
    pub balance: EnergyBalance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub unit_price: f64,
    pub intervals: Vec<IntervalMetrics>,
    pub total: EnergyBalance,
}

impl Metrics {
    pub fn from_totals(rows: &[IntervalTotals], unit_price: f64) -> Self {
        let intervals: Vec<IntervalMetrics> = rows
            .iter()
            .map(|r| IntervalMetrics {
                interval: r.interval,
                balance: EnergyBalance::new(r.sell_offered, r.buy_offered, r.traded, unit_price),
            })
            .collect();
        let sum = |f: fn(&IntervalTotals) -> f64| rows.iter().map(f).sum::<f64>();
        let total = EnergyBalance::new(
            sum(|r| r.sell_offered),
            sum(|r| r.buy_offered),
            sum(|r| r.traded),
            unit_price,
        );
        Self {
            unit_price,
            intervals,
            total,
        }
    }
}

/// Reads only offer postings and finalized trades. The log must be gapless
/// and finalize every interval of the run's horizon.
pub fn compute_metrics(
    genesis: &Genesis,
    events: &[LedgerEvent],
    unit_price: f64,
) -> Result<Metrics, MetricsError> {
    for (i, e) in events.iter().enumerate() {
        if e.seq != i as u64 + 1 {
            return Err(MetricsError::IncompleteLog(format!(
                "expected seq {} at position {i}, found {}",
                i + 1,
                e.seq
            )));
        }
    }
    let t_clear = genesis.grid.t_clear;
    let finalized_through = events
        .iter()
        .filter_map(|e| match e.kind {
            EventKind::IntervalAdvanced { finalized, .. } => Some(finalized),
            _ => None,
        })
        .next_back()
        .or(t_clear.checked_sub(1));
    let horizon = match genesis.horizon {
        Some(h) => {
            let needed = h.checked_sub(1);
            if needed > finalized_through {
                return Err(MetricsError::IncompleteLog(format!(
                    "horizon {h} needs interval {} finalized, log stops at {finalized_through:?}",
                    h - 1
                )));
            }
            h
        }
        None => finalized_through.map_or(0, |f| f + 1),
    };
    Ok(Metrics::from_totals(&tally(genesis, events, horizon), unit_price))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pct(x: Option<f64>) -> f64 {
        x.unwrap() * 100.0
    }

    #[test]
    fn reported_totals_reproduce_percentages() {
        let b = EnergyBalance::new(4.5, 8.3, 3.668, DEFAULT_UNIT_PRICE);
        assert!((pct(b.unused_fraction) - 18.49).abs() < 0.01);
        assert!((pct(b.unmet_fraction) - 55.81).abs() < 0.01);
        let b = EnergyBalance::new(4.5, 8.3, 2.288, DEFAULT_UNIT_PRICE);
        assert!((pct(b.unused_fraction) - 49.16).abs() < 0.01);
        assert!((pct(b.unmet_fraction) - 72.43).abs() < 0.01);
    }

    #[test]
    fn nothing_traded_means_everything_lost() {
        let b = EnergyBalance::new(2.0, 5.0, 0.0, 0.12);
        assert_eq!(b.unused_fraction, Some(1.0));
        assert_eq!(b.unmet_fraction, Some(1.0));
        assert!((b.unmet_dollars - 0.6).abs() < 1e-12);
        let empty = EnergyBalance::new(0.0, 0.0, 0.0, 0.12);
        assert_eq!(empty.unused_fraction, None);
    }
}
