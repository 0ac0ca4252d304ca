use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::clearing::{ControlRecord, SolveRecord};
use crate::ledger::{ContractState, EventKind, Genesis, LedgerEvent};
use crate::market::{Interval, ParticipantId, Side};

use super::SimTime;

/// Offered and traded energy (kWh) for one interval.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct IntervalTotals {
    pub interval: Interval,
    /// Energy of selling offers whose window contains the interval.
    pub sell_offered: f64,
    pub buy_offered: f64,
    /// Finalized power times interval length.
    pub traded: f64,
    pub trades: usize,
    pub finalized: bool,
}

/// Per-interval totals over `[0, horizon)` computed from offer and
/// finalization events alone.
pub fn tally(genesis: &Genesis, events: &[LedgerEvent], horizon: Interval) -> Vec<IntervalTotals> {
    let delta = genesis.grid.delta;
    let mut rows: Vec<IntervalTotals> = (0..horizon)
        .map(|interval| IntervalTotals {
            interval,
            ..IntervalTotals::default()
        })
        .collect();
    for row in rows.iter_mut().take(genesis.grid.t_clear as usize) {
        row.finalized = true;
    }
    for e in events {
        match &e.kind {
            EventKind::OfferPosted { offer } => {
                let end = offer.end.min(horizon.saturating_sub(1));
                if horizon == 0 || offer.start > end {
                    continue;
                }
                for row in &mut rows[offer.start as usize..=end as usize] {
                    match offer.side {
                        Side::Selling => row.sell_offered += offer.energy,
                        Side::Buying => row.buy_offered += offer.energy,
                    }
                }
            }
            EventKind::TradeFinalized {
                interval, power, ..
            } => {
                if let Some(row) = rows.get_mut(*interval as usize) {
                    row.traded += power * delta;
                    row.trades += 1;
                }
            }
            EventKind::IntervalAdvanced { finalized, .. } => {
                if let Some(row) = rows.get_mut(*finalized as usize) {
                    row.finalized = true;
                }
            }
            _ => {}
        }
    }
    rows
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum NoteKind {
    Failed,
    Detected,
    Rejoined,
    PeersNotified,
    TxFailed { error: String },
    TickFailed { error: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimNote {
    pub time: SimTime,
    pub participant: ParticipantId,
    pub kind: NoteKind,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimReport {
    pub genesis: Genesis,
    pub events: Vec<LedgerEvent>,
    pub final_state: ContractState,
    pub intervals: Vec<IntervalTotals>,
    pub solves: Vec<SolveRecord>,
    pub control: Vec<ControlRecord>,
    pub notes: Vec<SimNote>,
    pub dso: ParticipantId,
    pub solvers: Vec<ParticipantId>,
}

impl SimReport {
    pub fn total_traded(&self) -> f64 {
        self.intervals.iter().map(|r| r.traded).sum()
    }

    /// Objective of every accepted candidate, split at each finalization.
    pub fn candidate_runs(&self) -> Vec<Vec<f64>> {
        let mut runs = vec![Vec::new()];
        for e in &self.events {
            match &e.kind {
                EventKind::SolutionAccepted { objective, .. } => {
                    if let Some(run) = runs.last_mut() {
                        run.push(*objective);
                    }
                }
                EventKind::IntervalAdvanced { .. } => runs.push(Vec::new()),
                _ => {}
            }
        }
        runs
    }

    /// Finalized trades as `(interval, sell, buy, power, price)` in log order.
    pub fn finalized_trades(&self) -> Vec<(Interval, u32, u32, f64, f64)> {
        self.events
            .iter()
            .filter_map(|e| match e.kind {
                EventKind::TradeFinalized {
                    buy_offer,
                    sell_offer,
                    interval,
                    power,
                    price,
                } => Some((interval, sell_offer.0, buy_offer.0, power, price)),
                _ => None,
            })
            .collect()
    }
}
