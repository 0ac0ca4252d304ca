//! Simulated smart contract over a totally ordered, append-only event log.
//!
//! Every mutation is expressed as a [`LedgerEvent`] and applied through
//! [`ContractState::apply`]; live operations and replay share that path, so
//! replaying a log from [`Genesis`] reconstructs the state exactly.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::market::{
    check_feasibility, objective, ConstraintClass, FeederId, GridModel, Interval, MarketError,
    Offer, OfferBook, OfferId, ParticipantId, PinnedTrades, Side, Solution, TradeKey, TradeValue,
    DEFAULT_PRICE_CAP, DUMMY_FEEDER, TOLERANCE,
};
use crate::sim::SimTime;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Role {
    Prosumer,
    Solver,
    Dso,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Participant {
    pub role: Role,
    pub feeder: FeederId,
    /// Cleared when the participant's trades are removed after a failure.
    pub active: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContractConfig {
    pub price_cap: f64,
    /// Only a registered DSO may finalize; disable for timer-driven runs.
    pub dso_finalizes: bool,
}

impl Default for ContractConfig {
    fn default() -> Self {
        Self {
            price_cap: DEFAULT_PRICE_CAP,
            dso_finalizes: true,
        }
    }
}

/// Everything needed to rebuild a contract from its event log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Genesis {
    pub grid: GridModel,
    pub config: ContractConfig,
    /// Number of intervals the run is expected to finalize, when known.
    #[serde(default)]
    pub horizon: Option<Interval>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "reason", rename_all = "snake_case")]
pub enum RejectReason {
    Infeasible { classes: Vec<ConstraintClass> },
    Malformed { error: String },
    NotBetter { objective: f64, candidate: f64 },
    NotRegistered,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload")]
pub enum EventKind {
    ProsumerRegistered {
        participant: ParticipantId,
        role: Role,
        feeder: FeederId,
    },
    OfferPosted {
        offer: Offer,
    },
    SolutionAccepted {
        solver: ParticipantId,
        objective: f64,
        solution: Solution,
    },
    SolutionRejected {
        solver: ParticipantId,
        reason: RejectReason,
    },
    TradeFinalized {
        buy_offer: OfferId,
        sell_offer: OfferId,
        interval: Interval,
        power: f64,
        price: f64,
    },
    IntervalAdvanced {
        /// Interval whose trades were just sealed.
        finalized: Interval,
        /// New current interval.
        current: Interval,
    },
    TradesRemoved {
        participant: ParticipantId,
        withdrawn: Vec<OfferId>,
        removed: Vec<TradeKey>,
        objective: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LedgerEvent {
    pub seq: u64,
    pub time: SimTime,
    #[serde(flatten)]
    pub kind: EventKind,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ReplayError {
    #[error("sequence gap: expected {expected}, got {got}")]
    SequenceGap { expected: u64, got: u64 },
    #[error("event {seq}: {detail}")]
    Conflict { seq: u64, detail: &'static str },
    #[error("event {seq}: {error}")]
    Market { seq: u64, error: MarketError },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LedgerError {
    #[error("{0} is already registered")]
    DuplicateRegistration(ParticipantId),
    #[error("unknown feeder {0}")]
    UnknownFeeder(FeederId),
    #[error("{0} is not registered")]
    NotRegistered(ParticipantId),
    #[error("offer starts at {start}, earliest accepted interval is {earliest}")]
    StaleInterval { start: Interval, earliest: Interval },
    #[error("invalid quantity: {0}")]
    InvalidQuantity(&'static str),
    #[error("interval {0} is already finalized")]
    AlreadyFinalized(Interval),
    #[error("finalize called for {got} while the current interval is {expected}")]
    NotCurrentInterval { expected: Interval, got: Interval },
    #[error("{0} may not finalize")]
    NotAuthorized(ParticipantId),
    #[error(transparent)]
    Replay(#[from] ReplayError),
}

/// Contract state as of the last applied event.
#[derive(Debug, Clone, PartialEq)]
pub struct ContractState {
    pub grid: GridModel,
    pub config: ContractConfig,
    pub participants: BTreeMap<ParticipantId, Participant>,
    pub book: OfferBook,
    pub candidate: Solution,
    pub candidate_objective: f64,
    pub pinned: PinnedTrades,
    pub current_interval: Interval,
    pub next_offer_id: u32,
    /// Bumped whenever the set of tradeable offers changes.
    pub book_revision: u64,
    pub last_seq: u64,
}

impl ContractState {
    /// Fresh state; intervals before `t_clear` count as finalized and empty.
    pub fn genesis(genesis: &Genesis) -> Self {
        let grid = genesis.grid.clone().with_dummy_feeder();
        let pinned = PinnedTrades::sealed_through(grid.t_clear.checked_sub(1));
        Self {
            grid,
            config: genesis.config,
            participants: BTreeMap::new(),
            book: OfferBook::new(),
            candidate: Solution::new(),
            candidate_objective: 0.0,
            pinned,
            current_interval: 0,
            next_offer_id: 0,
            book_revision: 0,
            last_seq: 0,
        }
    }

    pub fn replay<'a>(
        genesis: &Genesis,
        events: impl IntoIterator<Item = &'a LedgerEvent>,
    ) -> Result<Self, ReplayError> {
        let mut state = Self::genesis(genesis);
        for e in events {
            state.apply(e)?;
        }
        Ok(state)
    }

    pub fn participant(&self, id: ParticipantId) -> Option<&Participant> {
        self.participants.get(&id)
    }

    pub fn is_active(&self, id: ParticipantId) -> bool {
        self.participants.get(&id).is_some_and(|p| p.active)
    }

    /// Earliest interval for which offers are still accepted.
    pub fn earliest_open(&self) -> Interval {
        self.current_interval + self.grid.t_clear
    }

    /// Applies one event. This is the only way contract state changes.
    pub fn apply(&mut self, event: &LedgerEvent) -> Result<(), ReplayError> {
        let seq = event.seq;
        if seq != self.last_seq + 1 {
            return Err(ReplayError::SequenceGap {
                expected: self.last_seq + 1,
                got: seq,
            });
        }
        let market = |error| ReplayError::Market { seq, error };
        match &event.kind {
            EventKind::ProsumerRegistered {
                participant,
                role,
                feeder,
            } => {
                if self.is_active(*participant) {
                    return Err(ReplayError::Conflict {
                        seq,
                        detail: "participant registered twice",
                    });
                }
                if self.grid.feeder(*feeder).is_none() {
                    return Err(market(MarketError::UnknownFeeder(*feeder)));
                }
                self.participants.insert(
                    *participant,
                    Participant {
                        role: *role,
                        feeder: *feeder,
                        active: true,
                    },
                );
            }
            EventKind::OfferPosted { offer } => {
                if offer.id.0 != self.next_offer_id {
                    return Err(ReplayError::Conflict {
                        seq,
                        detail: "offer id out of order",
                    });
                }
                self.book.insert(offer.clone()).map_err(market)?;
                self.next_offer_id += 1;
                self.book_revision += 1;
            }
            EventKind::SolutionAccepted {
                objective,
                solution,
                ..
            } => {
                self.candidate = solution.clone();
                self.candidate_objective = *objective;
            }
            EventKind::SolutionRejected { .. } => {}
            EventKind::TradeFinalized {
                buy_offer,
                sell_offer,
                interval,
                power,
                price,
            } => {
                self.pinned
                    .pin_trade(
                        *interval,
                        *sell_offer,
                        *buy_offer,
                        TradeValue {
                            power: *power,
                            price: *price,
                        },
                    )
                    .map_err(market)?;
            }
            EventKind::IntervalAdvanced { finalized, current } => {
                self.pinned.seal(*finalized).map_err(market)?;
                self.current_interval = *current;
            }
            EventKind::TradesRemoved {
                participant,
                withdrawn,
                removed,
                objective,
            } => {
                for id in withdrawn {
                    self.book.withdraw(*id).map_err(market)?;
                }
                for key in removed {
                    self.candidate.remove(key);
                }
                self.candidate_objective = *objective;
                if let Some(p) = self.participants.get_mut(participant) {
                    p.active = false;
                }
                self.book_revision += 1;
            }
        }
        self.last_seq = seq;
        Ok(())
    }
}

/// The contract plus its event log.
#[derive(Debug, Clone)]
pub struct Ledger {
    genesis: Genesis,
    state: ContractState,
    events: Vec<LedgerEvent>,
    clock: SimTime,
}

impl Ledger {
    pub fn new(genesis: Genesis) -> Self {
        let state = ContractState::genesis(&genesis);
        Self {
            genesis,
            state,
            events: Vec::new(),
            clock: SimTime::ZERO,
        }
    }

    pub fn genesis(&self) -> &Genesis {
        &self.genesis
    }

    pub fn state(&self) -> &ContractState {
        &self.state
    }

    pub fn events(&self) -> &[LedgerEvent] {
        &self.events
    }

    /// Events with sequence number greater than `seq`, in order.
    pub fn events_since(&self, seq: u64) -> &[LedgerEvent] {
        let from = usize::try_from(seq).unwrap_or(usize::MAX).min(self.events.len());
        &self.events[from..]
    }

    /// Advances the timestamp stamped on subsequent events. Never moves back.
    pub fn set_time(&mut self, time: SimTime) {
        self.clock = self.clock.max(time);
    }

    pub fn time(&self) -> SimTime {
        self.clock
    }

    fn append(&mut self, kind: EventKind) -> Result<LedgerEvent, LedgerError> {
        let event = LedgerEvent {
            seq: self.state.last_seq + 1,
            time: self.clock,
            kind,
        };
        self.state.apply(&event)?;
        self.events.push(event.clone());
        Ok(event)
    }

    /// Registers a participant. The DSO is always bound to the dummy feeder.
    /// A participant deactivated by a failure may register again.
    pub fn register(
        &mut self,
        participant: ParticipantId,
        role: Role,
        feeder: FeederId,
    ) -> Result<LedgerEvent, LedgerError> {
        if self.state.is_active(participant) {
            return Err(LedgerError::DuplicateRegistration(participant));
        }
        let feeder = if role == Role::Dso { DUMMY_FEEDER } else { feeder };
        if self.state.grid.feeder(feeder).is_none() {
            return Err(LedgerError::UnknownFeeder(feeder));
        }
        self.append(EventKind::ProsumerRegistered {
            participant,
            role,
            feeder,
        })
    }

    pub fn post_offer(
        &mut self,
        participant: ParticipantId,
        side: Side,
        start: Interval,
        end: Interval,
        energy: f64,
        reservation: Option<f64>,
    ) -> Result<LedgerEvent, LedgerError> {
        let Some(p) = self.state.participant(participant).filter(|p| p.active) else {
            return Err(LedgerError::NotRegistered(participant));
        };
        let earliest = self.state.earliest_open();
        if start < earliest {
            return Err(LedgerError::StaleInterval { start, earliest });
        }
        if !(energy.is_finite() && energy > 0.0) {
            return Err(LedgerError::InvalidQuantity("energy must be positive"));
        }
        if start > end {
            return Err(LedgerError::InvalidQuantity("start interval after end interval"));
        }
        let offer = Offer {
            id: OfferId(self.state.next_offer_id),
            side,
            prosumer: participant,
            feeder: p.feeder,
            energy,
            start,
            end,
            reservation,
        };
        if offer.validate().is_err() {
            return Err(LedgerError::InvalidQuantity("reservation price out of range"));
        }
        self.append(EventKind::OfferPosted { offer })
    }

    /// Validates a solution; rejection is a protocol outcome recorded as an event.
    pub fn submit_solution(
        &mut self,
        solver: ParticipantId,
        solution: Solution,
    ) -> Result<LedgerEvent, LedgerError> {
        let verdict = self.judge(solver, &solution);
        let kind = match verdict {
            Ok(objective) => EventKind::SolutionAccepted {
                solver,
                objective,
                solution,
            },
            Err(reason) => EventKind::SolutionRejected { solver, reason },
        };
        self.append(kind)
    }

    fn judge(&self, solver: ParticipantId, solution: &Solution) -> Result<f64, RejectReason> {
        if !self.state.is_active(solver) {
            return Err(RejectReason::NotRegistered);
        }
        let s = &self.state;
        let report = check_feasibility(solution, &s.book, &s.grid, &s.pinned).map_err(|e| {
            RejectReason::Malformed {
                error: e.to_string(),
            }
        })?;
        if !report.is_ok() {
            return Err(RejectReason::Infeasible {
                classes: report.classes().into_iter().collect(),
            });
        }
        let value = objective(solution);
        if !(value > s.candidate_objective + TOLERANCE) {
            return Err(RejectReason::NotBetter {
                objective: value,
                candidate: s.candidate_objective,
            });
        }
        Ok(value)
    }

    /// Pins the candidate's trades for `now + t_clear` and advances to `now + 1`.
    pub fn finalize(
        &mut self,
        caller: ParticipantId,
        now: Interval,
    ) -> Result<Vec<LedgerEvent>, LedgerError> {
        if self.state.config.dso_finalizes
            && !matches!(
                self.state.participant(caller),
                Some(Participant {
                    role: Role::Dso,
                    active: true,
                    ..
                })
            )
        {
            return Err(LedgerError::NotAuthorized(caller));
        }
        let current = self.state.current_interval;
        if now < current {
            return Err(LedgerError::AlreadyFinalized(now));
        }
        if now > current {
            return Err(LedgerError::NotCurrentInterval {
                expected: current,
                got: now,
            });
        }
        let target = now + self.state.grid.t_clear;
        let trades: Vec<(TradeKey, TradeValue)> = self
            .state
            .candidate
            .at_interval(target)
            .map(|(k, v)| (*k, *v))
            .collect();
        let mut out = Vec::with_capacity(trades.len() + 1);
        for (k, v) in trades {
            out.push(self.append(EventKind::TradeFinalized {
                buy_offer: k.buy,
                sell_offer: k.sell,
                interval: k.interval,
                power: v.power,
                price: v.price,
            })?);
        }
        out.push(self.append(EventKind::IntervalAdvanced {
            finalized: target,
            current: now + 1,
        })?);
        Ok(out)
    }

    /// Withdraws the participant's offers and strips its open-interval trades
    /// from the candidate. Finalized trades stay.
    pub fn remove_participant_trades(
        &mut self,
        participant: ParticipantId,
    ) -> Result<Vec<LedgerEvent>, LedgerError> {
        if self.state.participant(participant).is_none() {
            return Err(LedgerError::NotRegistered(participant));
        }
        let s = &self.state;
        let offers = s.book.offers_of(participant);
        let withdrawn: Vec<OfferId> = offers
            .iter()
            .copied()
            .filter(|id| !s.book.is_withdrawn(*id))
            .collect();
        let removed: Vec<TradeKey> = s
            .candidate
            .iter()
            .map(|(k, _)| *k)
            .filter(|k| !s.pinned.is_pinned(k.interval))
            .filter(|k| offers.binary_search(&k.sell).is_ok() || offers.binary_search(&k.buy).is_ok())
            .collect();
        let mut stripped = s.candidate.clone();
        for k in &removed {
            stripped.remove(k);
        }
        let event = self.append(EventKind::TradesRemoved {
            participant,
            withdrawn,
            removed,
            objective: objective(&stripped),
        })?;
        Ok(alloc::vec![event])
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AuditError {
    #[error(transparent)]
    Replay(#[from] ReplayError),
    #[error("event {seq}: accepted solution is infeasible ({detail})")]
    InfeasibleAcceptance { seq: u64, detail: String },
    #[error("event {seq}: accepted solution does not improve the candidate")]
    NonImprovingAcceptance { seq: u64 },
    #[error("event {seq}: finalized trade does not match the candidate")]
    FinalizedOffCandidate { seq: u64 },
    #[error("finalized schedule is infeasible: {detail}")]
    InfeasibleSchedule { detail: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct AuditReport {
    pub state: ContractState,
    pub events: usize,
    pub accepted: usize,
    pub rejected: usize,
    pub finalized_intervals: usize,
    pub finalized_trades: usize,
}

/// Replays a log while re-checking every acceptance and finalization, then
/// checks the complete finalized schedule against the final offer book.
pub fn audit<'a>(
    genesis: &Genesis,
    events: impl IntoIterator<Item = &'a LedgerEvent>,
) -> Result<AuditReport, AuditError> {
    let mut state = ContractState::genesis(genesis);
    let mut report = AuditReport {
        state: state.clone(),
        events: 0,
        accepted: 0,
        rejected: 0,
        finalized_intervals: 0,
        finalized_trades: 0,
    };
    for e in events {
        match &e.kind {
            EventKind::SolutionAccepted {
                objective: claimed,
                solution,
                ..
            } => {
                let check = check_feasibility(solution, &state.book, &state.grid, &state.pinned);
                match check {
                    Ok(r) if r.is_ok() => {}
                    Ok(r) => {
                        return Err(AuditError::InfeasibleAcceptance {
                            seq: e.seq,
                            detail: alloc::format!("{:?}", r.classes()),
                        })
                    }
                    Err(err) => {
                        return Err(AuditError::InfeasibleAcceptance {
                            seq: e.seq,
                            detail: err.to_string(),
                        })
                    }
                }
                let value = objective(solution);
                if value != *claimed || !(value > state.candidate_objective + TOLERANCE) {
                    return Err(AuditError::NonImprovingAcceptance { seq: e.seq });
                }
                report.accepted += 1;
            }
            EventKind::SolutionRejected { .. } => report.rejected += 1,
            EventKind::TradeFinalized {
                buy_offer,
                sell_offer,
                interval,
                power,
                price,
            } => {
                let key = TradeKey {
                    sell: *sell_offer,
                    buy: *buy_offer,
                    interval: *interval,
                };
                let from_candidate = state
                    .candidate
                    .get(&key)
                    .is_some_and(|v| v.power == *power && v.price == *price);
                if !from_candidate {
                    return Err(AuditError::FinalizedOffCandidate { seq: e.seq });
                }
                report.finalized_trades += 1;
            }
            EventKind::IntervalAdvanced { .. } => report.finalized_intervals += 1,
            _ => {}
        }
        state.apply(e)?;
        report.events += 1;
    }
    let schedule = state.pinned.as_solution();
    match check_feasibility(&schedule, &state.book, &state.grid, &state.pinned) {
        Ok(r) if r.is_ok() => {}
        Ok(r) => {
            return Err(AuditError::InfeasibleSchedule {
                detail: alloc::format!("{:?}", r.violations),
            })
        }
        Err(err) => {
            return Err(AuditError::InfeasibleSchedule {
                detail: err.to_string(),
            })
        }
    }
    report.state = state;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market::fixtures::*;
    use crate::market::{is_feasible, GridModel};
    use proptest::prelude::*;
    use std::vec;

    const DSO: ParticipantId = ParticipantId(0);
    const P1: ParticipantId = ParticipantId(1);
    const P2: ParticipantId = ParticipantId(2);
    const C1: ParticipantId = ParticipantId(3);
    const SOLVER: ParticipantId = ParticipantId(4);

    fn ledger(c_int: f64) -> Ledger {
        Ledger::new(Genesis {
            grid: GridModel::uniform(1, 100.0, c_int, 1.0, 1).unwrap(),
            config: ContractConfig::default(),
            horizon: None,
        })
    }

    /// Registers everyone, jumps to interval 47 and posts the example offers.
    fn example_ledger(c_int: f64) -> Ledger {
        let mut l = ledger(c_int);
        l.register(DSO, Role::Dso, FeederId(0)).unwrap();
        for p in [P1, P2, C1] {
            l.register(p, Role::Prosumer, FeederId(0)).unwrap();
        }
        l.register(SOLVER, Role::Solver, FeederId(0)).unwrap();
        for now in 0..47 {
            l.finalize(DSO, now).unwrap();
        }
        l.post_offer(P1, Side::Selling, 48, 48, 10.0, None).unwrap();
        l.post_offer(P2, Side::Selling, 48, 49, 30.0, None).unwrap();
        l.post_offer(C1, Side::Buying, 48, 48, 30.0, None).unwrap();
        l.post_offer(C1, Side::Buying, 49, 49, 10.0, None).unwrap();
        l
    }

    fn naive() -> Solution {
        let mut sol = Solution::new();
        sol.insert(key(P2_SELL, C1_BUY_48, 48), trade(30.0));
        sol
    }

    #[test]
    fn register_appends_sequenced_events() {
        let mut l = ledger(10.0);
        let e = l.register(P1, Role::Prosumer, FeederId(0)).unwrap();
        assert_eq!(e.seq, 1);
        let e = l.register(P2, Role::Prosumer, FeederId(0)).unwrap();
        assert_eq!(e.seq, 2);
        assert_eq!(
            l.register(P1, Role::Prosumer, FeederId(0)),
            Err(LedgerError::DuplicateRegistration(P1))
        );
        assert_eq!(
            l.register(C1, Role::Prosumer, FeederId(7)),
            Err(LedgerError::UnknownFeeder(FeederId(7)))
        );
        let e = l.register(DSO, Role::Dso, FeederId(0)).unwrap();
        assert!(matches!(
            e.kind,
            EventKind::ProsumerRegistered { feeder: DUMMY_FEEDER, .. }
        ));
        assert_eq!(l.state().grid.feeder(DUMMY_FEEDER).unwrap().c_int, crate::market::DUMMY_CAPACITY);
    }

    #[test]
    fn post_offer_gates() {
        let mut l = ledger(10.0);
        assert_eq!(
            l.post_offer(P1, Side::Selling, 2, 2, 5.0, None),
            Err(LedgerError::NotRegistered(P1))
        );
        l.register(P1, Role::Prosumer, FeederId(0)).unwrap();
        let e = l.post_offer(P1, Side::Selling, 2, 2, 5.0, None).unwrap();
        assert!(matches!(e.kind, EventKind::OfferPosted { ref offer } if offer.id == OfferId(0)));
        assert_eq!(
            l.post_offer(P1, Side::Selling, 0, 0, 5.0, None),
            Err(LedgerError::StaleInterval {
                start: 0,
                earliest: 1
            })
        );
        assert!(matches!(
            l.post_offer(P1, Side::Selling, 3, 3, 0.0, None),
            Err(LedgerError::InvalidQuantity(_))
        ));
        assert!(matches!(
            l.post_offer(P1, Side::Buying, 4, 3, 1.0, None),
            Err(LedgerError::InvalidQuantity(_))
        ));
        assert!(matches!(
            l.post_offer(P1, Side::Buying, 3, 3, 1.0, Some(-1.0)),
            Err(LedgerError::InvalidQuantity(_))
        ));
        assert_eq!(l.events().len(), 2);
    }

    #[test]
    fn submissions_follow_strict_improvement() {
        let mut l = example_ledger(100.0);
        let e = l.submit_solution(SOLVER, naive()).unwrap();
        assert!(matches!(e.kind, EventKind::SolutionAccepted { objective, .. } if objective == 30.0));
        let e = l.submit_solution(SOLVER, example_optimum()).unwrap();
        assert!(matches!(e.kind, EventKind::SolutionAccepted { objective, .. } if objective == 40.0));
        let e = l.submit_solution(SOLVER, example_optimum()).unwrap();
        assert!(matches!(
            e.kind,
            EventKind::SolutionRejected {
                reason: RejectReason::NotBetter { .. },
                ..
            }
        ));
        let e = l.submit_solution(ParticipantId(99), example_optimum()).unwrap();
        assert!(matches!(
            e.kind,
            EventKind::SolutionRejected {
                reason: RejectReason::NotRegistered,
                ..
            }
        ));
    }

    #[test]
    fn infeasible_submission_is_rejected() {
        let mut l = example_ledger(10.0);
        let e = l.submit_solution(SOLVER, example_optimum()).unwrap();
        match e.kind {
            EventKind::SolutionRejected {
                reason: RejectReason::Infeasible { classes },
                ..
            } => assert!(classes.contains(&ConstraintClass::FeederInternal)),
            other => panic!("unexpected {other:?}"),
        }
        let mut dangling = Solution::new();
        dangling.insert(key(OfferId(50), C1_BUY_48, 48), trade(1.0));
        let e = l.submit_solution(SOLVER, dangling).unwrap();
        assert!(matches!(
            e.kind,
            EventKind::SolutionRejected {
                reason: RejectReason::Malformed { .. },
                ..
            }
        ));
        assert_eq!(l.state().candidate_objective, 0.0);
    }

    #[test]
    fn finalize_pins_the_candidate_interval() {
        let mut l = example_ledger(100.0);
        l.submit_solution(SOLVER, example_optimum()).unwrap();
        let events = l.finalize(DSO, 47).unwrap();
        let finalized: Vec<_> = events
            .iter()
            .filter_map(|e| match e.kind {
                EventKind::TradeFinalized {
                    buy_offer,
                    sell_offer,
                    interval,
                    power,
                    ..
                } => Some((buy_offer, sell_offer, interval, power)),
                _ => None,
            })
            .collect();
        assert_eq!(
            finalized,
            vec![
                (C1_BUY_48, P1_SELL, 48, 10.0),
                (C1_BUY_48, P2_SELL, 48, 20.0)
            ]
        );
        assert!(matches!(
            events.last().unwrap().kind,
            EventKind::IntervalAdvanced {
                finalized: 48,
                current: 48
            }
        ));
        assert_eq!(l.finalize(DSO, 47), Err(LedgerError::AlreadyFinalized(47)));
        assert_eq!(
            l.finalize(DSO, 50),
            Err(LedgerError::NotCurrentInterval {
                expected: 48,
                got: 50
            })
        );
        assert_eq!(l.finalize(P1, 48), Err(LedgerError::NotAuthorized(P1)));
    }

    #[test]
    fn finalize_without_candidate_only_advances() {
        let mut l = example_ledger(100.0);
        let events = l.finalize(DSO, 47).unwrap();
        assert_eq!(events.len(), 1);
        assert_eq!(l.state().current_interval, 48);
        assert_eq!(l.state().pinned.finalized_through(), Some(48));
    }

    #[test]
    fn timer_driven_finalization() {
        let mut l = Ledger::new(Genesis {
            grid: GridModel::uniform(1, 1.0, 1.0, 1.0, 2).unwrap(),
            config: ContractConfig {
                dso_finalizes: false,
                ..ContractConfig::default()
            },
            horizon: None,
        });
        let e = l.finalize(ParticipantId(42), 0).unwrap();
        assert!(matches!(
            e[0].kind,
            EventKind::IntervalAdvanced {
                finalized: 2,
                current: 1
            }
        ));
    }

    #[test]
    fn removing_a_seller_strips_open_trades() {
        let mut l = example_ledger(100.0);
        l.submit_solution(SOLVER, example_optimum()).unwrap();
        let events = l.remove_participant_trades(P2).unwrap();
        assert_eq!(events.len(), 1);
        match &events[0].kind {
            EventKind::TradesRemoved {
                withdrawn, removed, objective, ..
            } => {
                assert_eq!(withdrawn, &vec![P2_SELL]);
                assert_eq!(removed.len(), 2);
                assert_eq!(*objective, 10.0);
            }
            other => panic!("unexpected {other:?}"),
        }
        let s = l.state();
        assert!(is_feasible(&s.candidate, &s.book, &s.grid, &s.pinned));
        assert!(!s.is_active(P2));
        assert!(matches!(
            l.post_offer(P2, Side::Selling, 50, 50, 1.0, None),
            Err(LedgerError::NotRegistered(P2))
        ));
        // Recovery re-registers.
        l.register(P2, Role::Prosumer, FeederId(0)).unwrap();
        l.post_offer(P2, Side::Selling, 50, 50, 1.0, None).unwrap();
    }

    #[test]
    fn removing_a_seller_keeps_pinned_trades() {
        let mut l = example_ledger(100.0);
        l.submit_solution(SOLVER, example_optimum()).unwrap();
        l.finalize(DSO, 47).unwrap();
        let events = l.remove_participant_trades(P2).unwrap();
        match &events[0].kind {
            EventKind::TradesRemoved { removed, objective, .. } => {
                assert_eq!(removed, &vec![key(P2_SELL, C1_BUY_49, 49)]);
                assert_eq!(*objective, 30.0);
            }
            other => panic!("unexpected {other:?}"),
        }
        let s = l.state();
        assert_eq!(s.pinned.get(&key(P2_SELL, C1_BUY_48, 48)).unwrap().power, 20.0);
        assert!(is_feasible(&s.candidate, &s.book, &s.grid, &s.pinned));
        let events = l.finalize(DSO, 48).unwrap();
        assert_eq!(events.len(), 1);
    }

    #[test]
    fn removing_a_participant_without_trades_is_a_noop_event() {
        let mut l = example_ledger(100.0);
        let before = l.state().candidate.clone();
        let events = l.remove_participant_trades(SOLVER).unwrap();
        assert!(matches!(
            &events[0].kind,
            EventKind::TradesRemoved { withdrawn, removed, .. } if withdrawn.is_empty() && removed.is_empty()
        ));
        assert_eq!(l.state().candidate, before);
        assert_eq!(
            l.remove_participant_trades(ParticipantId(77)),
            Err(LedgerError::NotRegistered(ParticipantId(77)))
        );
    }

    #[test]
    fn events_since_is_an_append_only_suffix() {
        let mut l = ledger(10.0);
        assert!(l.events_since(0).is_empty());
        l.register(P1, Role::Prosumer, FeederId(0)).unwrap();
        l.post_offer(P1, Side::Selling, 3, 3, 1.0, None).unwrap();
        let all = l.events_since(0);
        assert_eq!(all.len(), 2);
        assert_eq!((all[0].seq, all[1].seq), (1, 2));
        assert_eq!(l.events_since(1).len(), 1);
        assert!(l.events_since(9).is_empty());
    }

    #[test]
    fn replay_and_audit_reconstruct_state() {
        let mut l = example_ledger(100.0);
        l.submit_solution(SOLVER, naive()).unwrap();
        l.submit_solution(SOLVER, example_optimum()).unwrap();
        l.finalize(DSO, 47).unwrap();
        l.remove_participant_trades(P2).unwrap();
        l.finalize(DSO, 48).unwrap();
        let replayed = ContractState::replay(l.genesis(), l.events()).unwrap();
        assert_eq!(&replayed, l.state());
        let report = audit(l.genesis(), l.events()).unwrap();
        assert_eq!(&report.state, l.state());
        assert_eq!(report.accepted, 2);
        assert_eq!(report.finalized_intervals, 49);
    }

    #[test]
    fn replay_detects_gaps_and_tampering() {
        let mut l = example_ledger(100.0);
        l.submit_solution(SOLVER, naive()).unwrap();
        l.finalize(DSO, 47).unwrap();
        let mut events = l.events().to_vec();
        events.remove(3);
        assert!(matches!(
            ContractState::replay(l.genesis(), &events),
            Err(ReplayError::SequenceGap { .. })
        ));

        let mut forged = l.events().to_vec();
        let n = forged.len();
        if let EventKind::TradeFinalized { power, .. } = &mut forged[n - 2].kind {
            *power = 29.0;
        } else {
            panic!("expected a finalized trade");
        }
        assert!(matches!(
            audit(l.genesis(), &forged),
            Err(AuditError::FinalizedOffCandidate { .. })
        ));
    }

    #[test]
    fn events_roundtrip_through_json_shape() {
        let mut l = example_ledger(100.0);
        l.submit_solution(SOLVER, example_optimum()).unwrap();
        // serde_json is not available in no_std; check the serde shape through
        // the derived structure instead: kinds are adjacently tagged.
        let e = l.events().last().unwrap();
        assert!(matches!(&e.kind, EventKind::SolutionAccepted { solution, .. } if solution.len() == 3));
    }

    proptest! {
        #[test]
        fn interleaved_observers_see_identical_prefixes(
            ops in prop::collection::vec((0u8..3, 0u32..4, 1u32..5), 1..40),
            polls in prop::collection::vec(0usize..3, 1..40),
        ) {
            let mut l = ledger(10.0);
            let mut seen_a = vec![];
            let mut seen_b = vec![];
            let (mut cur_a, mut cur_b) = (0u64, 0u64);
            for (i, (op, who, x)) in ops.into_iter().enumerate() {
                let who = ParticipantId(who);
                let _ = match op {
                    0 => l.register(who, Role::Prosumer, FeederId(0)).map(|_| ()),
                    1 => l.post_offer(who, Side::Selling, 5 + x, 5 + x, x as f64, None).map(|_| ()),
                    _ => l.remove_participant_trades(who).map(|_| ()),
                };
                let poll = polls[i % polls.len()];
                if poll != 1 {
                    seen_a.extend(l.events_since(cur_a).iter().cloned());
                    cur_a = l.state().last_seq;
                }
                if poll != 0 {
                    seen_b.extend(l.events_since(cur_b).iter().cloned());
                    cur_b = l.state().last_seq;
                }
            }
            let n = seen_a.len().min(seen_b.len());
            prop_assert_eq!(&seen_a[..n], &seen_b[..n]);
            prop_assert_eq!(&seen_a[..], &l.events()[..seen_a.len()]);
            prop_assert_eq!(&ContractState::replay(l.genesis(), l.events()).unwrap(), l.state());
        }
    }
}
