//! Forward-trading energy exchange for microgrids.
//!
//! Prosumers post selling and buying offers for future clearing intervals.
//! Untrusted solvers clear the market by solving a linear program that
//! maximizes traded energy subject to offer quantities and feeder power
//! limits. A ledger contract validates each submitted solution, keeps the
//! best feasible one as its candidate, and at the end of every interval pins
//! the candidate's trades for the interval `T_clear` ahead.
//!
//! The crate is `no_std` and only needs `alloc`:
//!
//! - [`market`]: domain types, the matchability predicate, the feasibility
//!   checker and the trading objective.
//! - [`clearing`]: LP construction with lookahead pruning, the simplex engine
//!   and the solver agent.
//! - [`ledger`]: the event-sourced contract state machine.
//! - [`controller`]: hierarchical lookahead control driven by resource signals.
//! - [`sim`]: a deterministic logical-clock simulation of the whole protocol.

#![no_std]
#![forbid(unsafe_code)]
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod clearing;
pub mod controller;
mod float;
pub mod ledger;
pub mod market;
pub mod sim;

pub use clearing::{
    assign_prices, build_lp, solve, LpInstance, LpOutcome, SolveError, SolverAgent, SolverConfig,
};
pub use controller::{ControllerAction, ControllerState, ResourceEvent, ResourceSignal};
pub use ledger::{
    audit, ContractConfig, ContractState, EventKind, Genesis, Ledger, LedgerError, LedgerEvent,
    RejectReason, Role,
};
pub use market::{
    check_feasibility, matchable, objective, ConstraintClass, FeasibilityReport, Feeder, FeederId,
    GridModel, Interval, MarketError, Offer, OfferBook, OfferId, ParticipantId, PinnedTrades,
    Side, Solution, Trade, TradeKey, TradeValue, Violation, TOLERANCE,
};
pub use sim::{SimConfig, SimError, SimReport, SimTime, Simulation};
