use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{build_lp, solve, SolveError, SolverConfig};
use crate::controller::{ControllerState, ResourceModel};
use crate::ledger::{ContractState, Genesis, LedgerEvent, ReplayError};
use crate::market::{Interval, ParticipantId, Solution, TOLERANCE};

/// Anything that watches the ledger and may submit solutions on a tick.
pub trait SubmissionAgent {
    fn id(&self) -> ParticipantId;

    /// `log` is the full ledger log; implementations track their own cursor.
    fn tick(&mut self, log: &[LedgerEvent], now: Interval) -> TickReport;
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TickError {
    #[error("replica out of sync: {0}")]
    Replay(#[from] ReplayError),
    #[error("solve skipped: {0}")]
    Solve(#[from] SolveError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolveRecord {
    pub solver: ParticipantId,
    pub tick: u64,
    pub interval: Interval,
    pub lookahead: u32,
    pub variables: usize,
    pub constraints: usize,
    pub iterations: usize,
    pub objective: f64,
    /// Modeled seconds for this solve.
    pub solve_time: f64,
    /// The LP was unchanged since the previous tick and was not re-solved.
    pub cached: bool,
    pub submitted: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControlRecord {
    pub solver: ParticipantId,
    pub tick: u64,
    pub solve_time: f64,
    pub cpu: f64,
    /// Values after the update.
    pub lookahead: u32,
    pub max_lookahead: u32,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TickReport {
    pub submission: Option<Solution>,
    pub solve: Option<SolveRecord>,
    pub control: Option<ControlRecord>,
    pub error: Option<TickError>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct LpKey {
    revision: u64,
    finalized: Option<Interval>,
    now: Interval,
    lookahead: u32,
}

#[derive(Debug, Clone)]
struct Cached {
    key: LpKey,
    solution: Solution,
    objective: f64,
    variables: usize,
    constraints: usize,
    iterations: usize,
}

/// Honest solver: keeps a replica of the contract fed from the log, solves
/// the clearing LP each tick and submits when it beats the known candidate.
#[derive(Debug, Clone)]
pub struct SolverAgent {
    id: ParticipantId,
    config: SolverConfig,
    replica: ContractState,
    controller: Option<ControllerState>,
    model: ResourceModel,
    cache: Option<Cached>,
    last_submitted: Option<LpKey>,
    ticks: u64,
}

impl SolverAgent {
    pub fn new(id: ParticipantId, genesis: &Genesis, config: SolverConfig) -> Result<Self, SolveError> {
        let t_clear = genesis.grid.t_clear;
        if config.lookahead < t_clear {
            return Err(SolveError::Config {
                lookahead: config.lookahead,
                t_clear,
            });
        }
        Ok(Self {
            id,
            config,
            replica: ContractState::genesis(genesis),
            controller: None,
            model: ResourceModel::default(),
            cache: None,
            last_submitted: None,
            ticks: 0,
        })
    }

    /// Lets the controller pick the lookahead; `model` supplies resource signals.
    pub fn with_controller(mut self, controller: ControllerState, model: ResourceModel) -> Self {
        self.controller = Some(controller);
        self.model = model;
        self
    }

    pub fn replica(&self) -> &ContractState {
        &self.replica
    }

    pub fn controller(&self) -> Option<&ControllerState> {
        self.controller.as_ref()
    }

    pub fn config(&self) -> &SolverConfig {
        &self.config
    }

    pub fn lookahead(&self) -> u32 {
        self.controller
            .as_ref()
            .map_or(self.config.lookahead, ControllerState::lookahead)
    }

    /// Applies every log entry the replica has not seen yet.
    pub fn sync(&mut self, log: &[LedgerEvent]) -> Result<(), ReplayError> {
        let from = usize::try_from(self.replica.last_seq).unwrap_or(usize::MAX);
        if let Some(fresh) = log.get(from..) {
            for e in fresh {
                self.replica.apply(e)?;
            }
        }
        Ok(())
    }

    fn solve_now(&mut self, now: Interval, lookahead: u32) -> Result<(&Cached, bool), SolveError> {
        let key = LpKey {
            revision: self.replica.book_revision,
            finalized: self.replica.pinned.finalized_through(),
            now,
            lookahead,
        };
        let hit = self.cache.as_ref().is_some_and(|c| c.key == key);
        if !hit {
            let cfg = SolverConfig {
                lookahead,
                ..self.config
            };
            let s = &self.replica;
            let lp = build_lp(&s.book, &s.grid, &s.pinned, now, &cfg);
            let out = solve(&lp)?;
            self.cache = Some(Cached {
                key,
                variables: lp.num_variables(),
                constraints: lp.num_constraints(),
                solution: out.solution,
                objective: out.objective,
                iterations: out.iterations,
            });
        }
        match &self.cache {
            Some(c) => Ok((c, hit)),
            None => Err(SolveError::NumericFailure {
                detail: "solver cache empty after solve",
                iterations: 0,
                violation: None,
            }),
        }
    }
}

impl SubmissionAgent for SolverAgent {
    fn id(&self) -> ParticipantId {
        self.id
    }

    fn tick(&mut self, log: &[LedgerEvent], now: Interval) -> TickReport {
        self.ticks += 1;
        let tick = self.ticks;
        let mut report = TickReport::default();
        if let Err(e) = self.sync(log) {
            report.error = Some(e.into());
            return report;
        }
        let lookahead = self.lookahead();
        let candidate = self.replica.candidate_objective;
        let last_submitted = self.last_submitted;
        let solver = self.id;
        let (cached, hit) = match self.solve_now(now, lookahead) {
            Ok(v) => v,
            Err(e) => {
                report.error = Some(e.into());
                return report;
            }
        };
        let submit = cached.objective > candidate + TOLERANCE && last_submitted != Some(cached.key);
        let mut record = SolveRecord {
            solver,
            tick,
            interval: now,
            lookahead,
            variables: cached.variables,
            constraints: cached.constraints,
            iterations: if hit { 0 } else { cached.iterations },
            objective: cached.objective,
            solve_time: 0.0,
            cached: hit,
            submitted: submit,
        };
        if submit {
            report.submission = Some(cached.solution.clone());
            self.last_submitted = Some(cached.key);
        }
        let signal = self.model.signal(record.variables);
        record.solve_time = signal.solve_time;
        if let Some(c) = self.controller.as_mut() {
            c.top_level_update(&signal);
            c.low_level_update(signal.solve_time);
            report.control = Some(ControlRecord {
                solver,
                tick,
                solve_time: signal.solve_time,
                cpu: signal.cpu_fraction,
                lookahead: c.lookahead(),
                max_lookahead: c.max_lookahead(),
            });
        }
        report.solve = Some(record);
        report
    }
}
