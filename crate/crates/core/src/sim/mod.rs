//! Deterministic discrete-event simulation of the trading protocol.
//!
//! Agents share one logical clock and talk only through the ledger. At each
//! timestamp, queued work runs in a fixed phase order: the DSO finalizes the
//! interval that just ended, failures and recoveries fire, prosumers post
//! offers for the new interval, delayed transactions land, and finally solver
//! agents tick. Ties inside a phase keep insertion order.

mod clock;
mod prosumer;
mod report;

use alloc::boxed::Box;
use alloc::collections::{BTreeSet, BinaryHeap};
use alloc::string::ToString;
use alloc::vec::Vec;
use core::cmp::{Ordering, Reverse};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clearing::{SolveError, SolverAgent, SolverConfig, SubmissionAgent};
use crate::controller::{ControllerState, ResourceModel};
use crate::ledger::{ContractConfig, Genesis, Ledger, LedgerError, Role};
use crate::market::{FeederId, GridModel, Interval, ParticipantId, Solution};

pub use clock::{LogicalClock, SimTime};
pub use prosumer::{prosumer_step, OfferRequest, ProsumerParams, ProsumerProgress, ProsumerTrace};
pub use report::{tally, IntervalTotals, NoteKind, SimNote, SimReport};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Latencies {
    /// Failure to peer notification, seconds.
    pub detect: f64,
    /// Rejoin to peers being told the node is back, seconds.
    pub notify: f64,
    /// Restart to rejoining the ledger, seconds.
    pub rejoin: f64,
}

impl Default for Latencies {
    fn default() -> Self {
        Self {
            detect: 0.14,
            notify: 1.88,
            rejoin: 6.52,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FailureSpec {
    pub participant: ParticipantId,
    /// Seconds of logical time.
    pub fail_at: f64,
    /// Restart time in seconds; the node stays down when absent.
    pub recover_at: Option<f64>,
}

/// Lookahead control settings for honest solvers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdaptiveConfig {
    pub max_lookahead: u32,
    pub kp: f64,
    pub setpoint: f64,
    pub cpu_threshold: f64,
    pub mem_threshold: u64,
    pub model: ResourceModel,
}

impl AdaptiveConfig {
    pub fn new(max_lookahead: u32, solve_period: f64) -> Self {
        Self {
            max_lookahead,
            kp: ControllerState::DEFAULT_KP,
            setpoint: ControllerState::DEFAULT_SETPOINT,
            cpu_threshold: ControllerState::DEFAULT_CPU_THRESHOLD,
            mem_threshold: ControllerState::DEFAULT_MEM_THRESHOLD,
            model: ResourceModel {
                period: solve_period,
                ..ResourceModel::default()
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub grid: GridModel,
    /// Logical seconds per interval.
    pub delta_hat: f64,
    pub t_predict: u32,
    /// Logical seconds between solver ticks.
    pub solver_period: f64,
    /// Intervals `[0, horizon)` are traded and finalized.
    pub horizon: Interval,
    /// Recorded for reproducibility; the market path itself draws no randomness.
    pub seed: u64,
    pub solvers: u32,
    pub solver: SolverConfig,
    pub adaptive: Option<AdaptiveConfig>,
    pub contract: ContractConfig,
    /// Seconds between submitting a transaction and it reaching the ledger.
    pub confirmation_delay: f64,
    pub flex_window: u32,
    pub latencies: Latencies,
    pub failures: Vec<FailureSpec>,
}

impl SimConfig {
    /// One-hour intervals compressed to 60 logical seconds, one solver.
    pub fn new(grid: GridModel, horizon: Interval) -> Self {
        let t_clear = grid.t_clear;
        Self {
            grid,
            delta_hat: 60.0,
            t_predict: t_clear.max(2),
            solver_period: 5.0,
            horizon,
            seed: 0,
            solvers: 1,
            solver: SolverConfig {
                lookahead: SolverConfig::default().lookahead.max(t_clear),
                ..SolverConfig::default()
            },
            adaptive: None,
            contract: ContractConfig::default(),
            confirmation_delay: 0.0,
            flex_window: 2,
            latencies: Latencies::default(),
            failures: Vec::new(),
        }
    }

    fn validate(&self) -> Result<(), SimError> {
        let bad = |what| Err(SimError::Config(what));
        if self.t_predict < 2 {
            return bad("t_predict must exceed 1");
        }
        if !(self.delta_hat > 0.0) || SimTime::from_secs(self.delta_hat) == SimTime::ZERO {
            return bad("delta_hat must be positive");
        }
        if self.delta_hat > self.grid.delta * 3600.0 + 1e-9 {
            return bad("delta_hat exceeds the interval length");
        }
        if !(self.solver_period > 0.0) || SimTime::from_secs(self.solver_period) == SimTime::ZERO {
            return bad("solver_period must be positive");
        }
        if self.solver.lookahead < self.grid.t_clear {
            return bad("lookahead is below t_clear");
        }
        if let Some(a) = &self.adaptive {
            if a.max_lookahead < self.grid.t_clear {
                return bad("max_lookahead is below t_clear");
            }
        }
        if !(self.confirmation_delay >= 0.0) {
            return bad("confirmation_delay must be non-negative");
        }
        let l = &self.latencies;
        if !(l.detect >= 0.0 && l.notify >= 0.0 && l.rejoin >= 0.0) {
            return bad("latencies must be non-negative");
        }
        if self.flex_window == 0 {
            return bad("flex_window must be at least 1");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("invalid configuration: {0}")]
    Config(&'static str),
    #[error("trace for {participant} covers {len} intervals, horizon needs {needed}")]
    ShortTrace {
        participant: ParticipantId,
        len: usize,
        needed: usize,
    },
    #[error("trace for {0} appears twice")]
    DuplicateParticipant(ParticipantId),
    #[error("unknown feeder {0}")]
    UnknownFeeder(FeederId),
    #[error("unknown participant {0}")]
    UnknownParticipant(ParticipantId),
    #[error("the DSO cannot be failed")]
    DsoFailure,
    #[error("solver setup failed: {0}")]
    Solver(#[from] SolveError),
    #[error("protocol failure: {0}")]
    Ledger(#[from] LedgerError),
}

#[derive(Debug, Clone, PartialEq)]
enum Tx {
    Offer {
        participant: ParticipantId,
        request: OfferRequest,
    },
    Submit {
        solver: ParticipantId,
        solution: Solution,
    },
    Remove {
        participant: ParticipantId,
    },
}

#[derive(Debug, Clone, PartialEq)]
enum Action {
    Finalize(Interval),
    Fail(ParticipantId),
    Detect(ParticipantId),
    Recover(ParticipantId),
    Notify(ParticipantId),
    IntervalStart(Interval),
    Deliver(Tx),
    SolverTick,
}

impl Action {
    fn phase(&self) -> u8 {
        match self {
            Action::Finalize(_) => 0,
            Action::Fail(_) | Action::Detect(_) | Action::Recover(_) | Action::Notify(_) => 1,
            Action::IntervalStart(_) => 2,
            Action::Deliver(_) => 3,
            Action::SolverTick => 4,
        }
    }
}

#[derive(Debug)]
struct Scheduled {
    time: SimTime,
    phase: u8,
    order: u64,
    action: Action,
}

impl Scheduled {
    fn rank(&self) -> (SimTime, u8, u64) {
        (self.time, self.phase, self.order)
    }
}

impl PartialEq for Scheduled {
    fn eq(&self, other: &Self) -> bool {
        self.rank() == other.rank()
    }
}

impl Eq for Scheduled {}

impl PartialOrd for Scheduled {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Scheduled {
    fn cmp(&self, other: &Self) -> Ordering {
        self.rank().cmp(&other.rank())
    }
}

struct Prosumer {
    trace: ProsumerTrace,
    progress: ProsumerProgress,
}

pub struct Simulation {
    config: SimConfig,
    ledger: Ledger,
    clock: LogicalClock,
    prosumers: Vec<Prosumer>,
    agents: Vec<Box<dyn SubmissionAgent>>,
    honest: Vec<ParticipantId>,
    dso: ParticipantId,
    down: BTreeSet<ParticipantId>,
    queue: BinaryHeap<Reverse<Scheduled>>,
    order: u64,
    end: SimTime,
    started: bool,
    notes: Vec<SimNote>,
    report: SimReportParts,
}

#[derive(Default)]
struct SimReportParts {
    solves: Vec<crate::clearing::SolveRecord>,
    control: Vec<crate::clearing::ControlRecord>,
}

impl Simulation {
    /// Registers the DSO, every traced prosumer and `config.solvers` honest
    /// solvers. The DSO takes the id after the largest trace id; solvers follow.
    pub fn new(config: SimConfig, traces: Vec<ProsumerTrace>) -> Result<Self, SimError> {
        config.validate()?;
        let mut seen = BTreeSet::new();
        for t in &traces {
            if !seen.insert(t.participant) {
                return Err(SimError::DuplicateParticipant(t.participant));
            }
            if config.grid.feeder(t.feeder).is_none() {
                return Err(SimError::UnknownFeeder(t.feeder));
            }
            if t.len() < config.horizon as usize {
                return Err(SimError::ShortTrace {
                    participant: t.participant,
                    len: t.len(),
                    needed: config.horizon as usize,
                });
            }
            if t.production.iter().chain(&t.demand).any(|v| !(*v >= 0.0) || !v.is_finite()) {
                return Err(SimError::Config("trace values must be finite and non-negative"));
            }
        }
        let next_id = traces.iter().map(|t| t.participant.0).max().map_or(0, |m| m + 1);
        let dso = ParticipantId(next_id);

        let genesis = Genesis {
            grid: config.grid.clone(),
            config: config.contract,
            horizon: Some(config.horizon),
        };
        let mut ledger = Ledger::new(genesis.clone());
        ledger.register(dso, Role::Dso, FeederId(0))?;
        for t in &traces {
            ledger.register(t.participant, Role::Prosumer, t.feeder)?;
        }
        let mut agents: Vec<Box<dyn SubmissionAgent>> = Vec::new();
        let mut honest = Vec::new();
        for k in 0..config.solvers {
            let id = ParticipantId(next_id + 1 + k);
            let mut agent = SolverAgent::new(id, &genesis, config.solver)?;
            if let Some(a) = &config.adaptive {
                let mut c = ControllerState::new(config.grid.t_clear, a.max_lookahead)
                    .map_err(|_| SimError::Config("max_lookahead is below t_clear"))?
                    .with_lookahead(config.solver.lookahead);
                c.kp = a.kp;
                c.setpoint = a.setpoint;
                c.cpu_threshold = a.cpu_threshold;
                c.mem_threshold = a.mem_threshold;
                agent = agent.with_controller(c, a.model);
            }
            ledger.register(id, Role::Solver, FeederId(0))?;
            agents.push(Box::new(agent));
            honest.push(id);
        }

        let clock = LogicalClock::new(SimTime::from_secs(config.delta_hat));
        let last_finalize = config.horizon.saturating_sub(config.grid.t_clear);
        let end = clock.interval_start(last_finalize);
        let prosumers = traces
            .into_iter()
            .map(|trace| Prosumer {
                trace,
                progress: ProsumerProgress::default(),
            })
            .collect();
        let failures = config.failures.clone();
        let mut sim = Self {
            config,
            ledger,
            clock,
            prosumers,
            agents,
            honest,
            dso,
            down: BTreeSet::new(),
            queue: BinaryHeap::new(),
            order: 0,
            end,
            started: false,
            notes: Vec::new(),
            report: SimReportParts::default(),
        };
        for f in failures {
            sim.inject_failure(f.participant, f.fail_at, f.recover_at)?;
        }
        Ok(sim)
    }

    /// Adds an extra submitting agent, registered as a solver.
    pub fn add_agent(&mut self, agent: Box<dyn SubmissionAgent>) -> Result<(), SimError> {
        self.ledger.register(agent.id(), Role::Solver, FeederId(0))?;
        self.agents.push(agent);
        self.agents.sort_by_key(|a| a.id());
        Ok(())
    }

    /// Next unused participant id, for extra agents.
    pub fn next_participant_id(&self) -> ParticipantId {
        let max = self.ledger.state().participants.keys().next_back().map_or(0, |p| p.0 + 1);
        ParticipantId(max)
    }

    pub fn dso(&self) -> ParticipantId {
        self.dso
    }

    pub fn solver_ids(&self) -> &[ParticipantId] {
        &self.honest
    }

    pub fn ledger(&self) -> &Ledger {
        &self.ledger
    }

    pub fn time(&self) -> SimTime {
        self.clock.now()
    }

    pub fn interval(&self) -> Interval {
        self.clock.interval()
    }

    /// Schedules a crash at `at` seconds and an optional restart.
    pub fn inject_failure(
        &mut self,
        participant: ParticipantId,
        at: f64,
        recover_at: Option<f64>,
    ) -> Result<(), SimError> {
        if participant == self.dso {
            return Err(SimError::DsoFailure);
        }
        if self.ledger.state().participant(participant).is_none() {
            return Err(SimError::UnknownParticipant(participant));
        }
        let at = SimTime::from_secs(at);
        self.schedule(at, Action::Fail(participant));
        if let Some(r) = recover_at {
            let r = SimTime::from_secs(r).max(at);
            let rejoin = r.saturating_add(SimTime::from_secs(self.config.latencies.rejoin));
            self.schedule(rejoin, Action::Recover(participant));
        }
        Ok(())
    }

    fn schedule(&mut self, time: SimTime, action: Action) {
        self.order += 1;
        self.queue.push(Reverse(Scheduled {
            time,
            phase: action.phase(),
            order: self.order,
            action,
        }));
    }

    fn start(&mut self) {
        self.started = true;
        let last = self.config.horizon.saturating_sub(self.config.grid.t_clear);
        for k in 0..last {
            self.schedule(self.clock.interval_start(k), Action::IntervalStart(k));
            self.schedule(self.clock.interval_start(k + 1), Action::Finalize(k));
        }
        let period = SimTime::from_secs(self.config.solver_period).0;
        let mut t = 0;
        while t < self.end.0 {
            self.schedule(SimTime(t), Action::SolverTick);
            t += period;
        }
    }

    fn note(&mut self, participant: ParticipantId, kind: NoteKind) {
        self.notes.push(SimNote {
            time: self.clock.now(),
            participant,
            kind,
        });
    }

    fn send(&mut self, tx: Tx) {
        let delay = SimTime::from_secs(self.config.confirmation_delay);
        if delay == SimTime::ZERO {
            self.deliver(tx);
        } else {
            self.schedule(self.clock.now().saturating_add(delay), Action::Deliver(tx));
        }
    }

    fn deliver(&mut self, tx: Tx) {
        self.ledger.set_time(self.clock.now());
        let (who, result) = match tx {
            Tx::Offer {
                participant,
                request,
            } => (
                participant,
                self.ledger
                    .post_offer(
                        participant,
                        request.side,
                        request.start,
                        request.end,
                        request.energy,
                        None,
                    )
                    .map(|_| ()),
            ),
            Tx::Submit { solver, solution } => (
                solver,
                self.ledger.submit_solution(solver, solution).map(|_| ()),
            ),
            Tx::Remove { participant } => (
                self.dso,
                self.ledger.remove_participant_trades(participant).map(|_| ()),
            ),
        };
        if let Err(e) = result {
            self.note(who, NoteKind::TxFailed { error: e.to_string() });
        }
    }

    /// Processes the next queued action. Returns `Ok(None)` once the run is over.
    pub fn step(&mut self) -> Result<Option<SimTime>, SimError> {
        if !self.started {
            self.start();
        }
        let Some(Reverse(next)) = self.queue.pop() else {
            return Ok(None);
        };
        let now = self.clock.advance_to(next.time);
        self.ledger.set_time(now);
        match next.action {
            Action::Finalize(k) => {
                self.ledger.finalize(self.dso, k)?;
            }
            Action::Fail(p) => {
                if self.down.insert(p) {
                    self.note(p, NoteKind::Failed);
                    let at = now.saturating_add(SimTime::from_secs(self.config.latencies.detect));
                    self.schedule(at, Action::Detect(p));
                }
            }
            Action::Detect(p) => {
                self.note(p, NoteKind::Detected);
                self.send(Tx::Remove { participant: p });
            }
            Action::Recover(p) => {
                if self.down.remove(&p) {
                    if !self.ledger.state().is_active(p) {
                        let feeder = self
                            .ledger
                            .state()
                            .participant(p)
                            .map_or(FeederId(0), |x| x.feeder);
                        let role = self
                            .ledger
                            .state()
                            .participant(p)
                            .map_or(Role::Prosumer, |x| x.role);
                        if let Err(e) = self.ledger.register(p, role, feeder) {
                            self.note(p, NoteKind::TxFailed { error: e.to_string() });
                        }
                    }
                    self.note(p, NoteKind::Rejoined);
                    let at = now.saturating_add(SimTime::from_secs(self.config.latencies.notify));
                    self.schedule(at, Action::Notify(p));
                }
            }
            Action::Notify(p) => self.note(p, NoteKind::PeersNotified),
            Action::IntervalStart(k) => {
                let params = ProsumerParams {
                    t_clear: self.config.grid.t_clear,
                    t_predict: self.config.t_predict,
                    horizon: self.config.horizon,
                    flex_window: self.config.flex_window,
                };
                let mut txs = Vec::new();
                for p in &mut self.prosumers {
                    if self.down.contains(&p.trace.participant) {
                        continue;
                    }
                    for request in prosumer_step(&p.trace, &mut p.progress, k, &params) {
                        txs.push(Tx::Offer {
                            participant: p.trace.participant,
                            request,
                        });
                    }
                }
                for tx in txs {
                    self.send(tx);
                }
            }
            Action::Deliver(tx) => self.deliver(tx),
            Action::SolverTick => {
                let interval = self.clock.interval();
                let mut agents = core::mem::take(&mut self.agents);
                for agent in agents.iter_mut() {
                    let id = agent.id();
                    if self.down.contains(&id) {
                        continue;
                    }
                    let r = agent.tick(self.ledger.events(), interval);
                    if let Some(s) = r.solve {
                        self.report.solves.push(s);
                    }
                    if let Some(c) = r.control {
                        self.report.control.push(c);
                    }
                    if let Some(e) = r.error {
                        self.note(id, NoteKind::TickFailed { error: e.to_string() });
                    }
                    if let Some(solution) = r.submission {
                        self.send(Tx::Submit { solver: id, solution });
                    }
                }
                self.agents = agents;
            }
        }
        Ok(Some(now))
    }

    pub fn run(mut self) -> Result<SimReport, SimError> {
        while self.step()?.is_some() {}
        Ok(self.finish())
    }

    fn finish(self) -> SimReport {
        let genesis = self.ledger.genesis().clone();
        let events = self.ledger.events().to_vec();
        let intervals = tally(&genesis, &events, self.config.horizon);
        SimReport {
            final_state: self.ledger.state().clone(),
            genesis,
            events,
            intervals,
            solves: self.report.solves,
            control: self.report.control,
            notes: self.notes,
            dso: self.dso,
            solvers: self.honest,
        }
    }
}

/// Simulates with the given config and traces.
pub fn run(config: SimConfig, traces: Vec<ProsumerTrace>) -> Result<SimReport, SimError> {
    Simulation::new(config, traces)?.run()
}

#[cfg(test)]
mod tests;
