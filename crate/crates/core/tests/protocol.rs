use proptest::prelude::*;
use transax_core::clearing::{SubmissionAgent, TickReport};
use transax_core::ledger::audit;
use transax_core::sim::{run, FailureSpec, ProsumerTrace};
use transax_core::{
    build_lp, check_feasibility, solve, ContractState, EventKind, FeederId, GridModel, Interval,
    Ledger, LedgerEvent, ParticipantId, Role, SimConfig, Simulation, Side, Solution, SolverConfig,
    TradeKey, TradeValue,
};

const HORIZON: usize = 10;

fn arb_trace(id: u32, feeders: u32) -> impl Strategy<Value = ProsumerTrace> {
    (
        0..feeders,
        prop::collection::vec(prop_oneof![3 => Just(0.0), 1 => 0.5f64..20.0], HORIZON),
        prop::collection::vec(prop_oneof![2 => Just(0.0), 1 => 0.5f64..15.0], HORIZON),
        any::<bool>(),
    )
        .prop_map(move |(feeder, production, demand, flexible)| ProsumerTrace {
            participant: ParticipantId(id),
            feeder: FeederId(feeder),
            production,
            demand,
            flexible,
        })
}

fn arb_day() -> impl Strategy<Value = (SimConfig, Vec<ProsumerTrace>)> {
    (1u32..4, 1u32..3, 2u32..5, 5.0f64..40.0).prop_flat_map(|(feeders, t_clear, lookahead, cap)| {
        let traces: Vec<_> = (0..5).map(|id| arb_trace(id, feeders)).collect();
        traces.prop_map(move |traces| {
            let grid = GridModel::uniform(feeders, cap, cap * 1.25, 1.0, t_clear).unwrap();
            let mut cfg = SimConfig::new(grid, HORIZON as Interval);
            cfg.t_predict = 4;
            cfg.solver.lookahead = lookahead.max(t_clear);
            (cfg, traces)
        })
    })
}

/// Submits whatever it is told to, whenever it ticks.
struct Scripted {
    id: ParticipantId,
    queue: Vec<Solution>,
}

impl SubmissionAgent for Scripted {
    fn id(&self) -> ParticipantId {
        self.id
    }

    fn tick(&mut self, _log: &[LedgerEvent], _now: Interval) -> TickReport {
        TickReport {
            submission: self.queue.pop(),
            ..TickReport::default()
        }
    }
}

fn junk(seed: u64) -> Solution {
    let mut sol = Solution::new();
    for k in 0..4u64 {
        let x = seed.wrapping_mul(6364136223846793005).wrapping_add(k * 1442695040888963407);
        sol.insert(
            TradeKey {
                sell: transax_core::OfferId((x >> 8) as u32 % 30),
                buy: transax_core::OfferId((x >> 20) as u32 % 30),
                interval: (x >> 40) as u32 % HORIZON as u32,
            },
            TradeValue {
                power: ((x >> 50) % 40) as f64,
                price: 0.5,
            },
        );
    }
    sol
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn every_run_is_live_safe_and_replayable((cfg, traces) in arb_day()) {
        let t_clear = cfg.grid.t_clear;
        let r = run(cfg.clone(), traces.clone()).unwrap();
        let advanced: Vec<Interval> = r.events.iter().filter_map(|e| match e.kind {
            EventKind::IntervalAdvanced { finalized, .. } => Some(finalized),
            _ => None,
        }).collect();
        prop_assert_eq!(advanced, (t_clear..HORIZON as u32).collect::<Vec<_>>());
        for i in &r.intervals {
            prop_assert!(i.traded <= i.sell_offered.min(i.buy_offered) + 1e-9);
        }
        for run in r.candidate_runs() {
            prop_assert!(run.windows(2).all(|w| w[0] <= w[1]));
        }
        let s = &r.final_state;
        let report = check_feasibility(&s.pinned.as_solution(), &s.book, &s.grid, &s.pinned).unwrap();
        prop_assert!(report.is_ok());
        prop_assert_eq!(&ContractState::replay(&r.genesis, &r.events).unwrap(), s);
        audit(&r.genesis, &r.events).unwrap();
        prop_assert_eq!(run(cfg, traces).unwrap(), r);
    }

    #[test]
    fn junk_submitters_never_reduce_safety((cfg, traces) in arb_day(), seed in any::<u64>()) {
        let honest = run(cfg.clone(), traces.clone()).unwrap();
        let mut sim = Simulation::new(cfg, traces).unwrap();
        let id = sim.next_participant_id();
        let queue = (0..200).map(|k| junk(seed ^ k)).collect();
        sim.add_agent(Box::new(Scripted { id, queue })).unwrap();
        let r = sim.run().unwrap();
        audit(&r.genesis, &r.events).unwrap();
        let s = &r.final_state;
        prop_assert!(check_feasibility(&s.pinned.as_solution(), &s.book, &s.grid, &s.pinned).unwrap().is_ok());
        prop_assert!(r.total_traded() >= honest.total_traded() - 1e-6);
    }

    #[test]
    fn redundant_solvers_survive_losing_all_but_one((cfg, traces) in arb_day(), k in 2u32..4, at in 0.0f64..500.0) {
        let mut cfg = cfg;
        cfg.solvers = k;
        let base = run(cfg.clone(), traces.clone()).unwrap();
        let mut sim = Simulation::new(cfg, traces).unwrap();
        let ids = sim.solver_ids().to_vec();
        for id in &ids[..ids.len() - 1] {
            sim.inject_failure(*id, at, None).unwrap();
        }
        let r = sim.run().unwrap();
        prop_assert_eq!(base.finalized_trades(), r.finalized_trades());
    }

    #[test]
    fn prosumer_failure_keeps_pins((cfg, traces) in arb_day(), who in 0u32..5, at in 0.0f64..500.0) {
        let mut cfg = cfg;
        cfg.failures.push(FailureSpec { participant: ParticipantId(who), fail_at: at, recover_at: None });
        let r = run(cfg, traces).unwrap();
        audit(&r.genesis, &r.events).unwrap();
        let mut state = ContractState::genesis(&r.genesis);
        for e in &r.events {
            let before = state.pinned.clone();
            state.apply(e).unwrap();
            for (k, v) in before.iter() {
                prop_assert_eq!(state.pinned.get(&k), Some(&v));
            }
        }
    }

    #[test]
    fn accepted_candidates_survive_new_offers(
        extra in prop::collection::vec((any::<bool>(), 0u32..3, 1u32..4, 1.0f64..30.0), 1..12),
    ) {
        let grid = GridModel::uniform(2, 25.0, 30.0, 1.0, 1).unwrap();
        let genesis = transax_core::Genesis { grid, config: Default::default(), horizon: None };
        let mut l = Ledger::new(genesis);
        l.register(ParticipantId(100), Role::Dso, FeederId(0)).unwrap();
        l.register(ParticipantId(101), Role::Solver, FeederId(0)).unwrap();
        for p in 0..3 {
            l.register(ParticipantId(p), Role::Prosumer, FeederId(p % 2)).unwrap();
        }
        l.post_offer(ParticipantId(0), Side::Selling, 2, 3, 20.0, None).unwrap();
        l.post_offer(ParticipantId(1), Side::Buying, 2, 2, 15.0, None).unwrap();
        l.post_offer(ParticipantId(2), Side::Buying, 3, 3, 15.0, None).unwrap();
        let cfg = SolverConfig::default();
        let s = l.state();
        let out = solve(&build_lp(&s.book, &s.grid, &s.pinned, 0, &cfg)).unwrap();
        l.submit_solution(ParticipantId(101), out.solution.clone()).unwrap();
        prop_assert_eq!(&l.state().candidate, &out.solution);
        for (sell, who, start, energy) in extra {
            let side = if sell { Side::Selling } else { Side::Buying };
            l.post_offer(ParticipantId(who), side, start, start + 1, energy, None).unwrap();
            let s = l.state();
            prop_assert!(check_feasibility(&out.solution, &s.book, &s.grid, &s.pinned).unwrap().is_ok());
        }
        l.finalize(ParticipantId(100), 0).unwrap();
        l.finalize(ParticipantId(100), 1).unwrap();
        let s = l.state();
        let pinned: f64 = s.pinned.iter().filter(|(k, _)| k.interval == 2).map(|(_, v)| v.power).sum();
        let planned: f64 = out.solution.at_interval(2).map(|(_, v)| v.power).sum();
        prop_assert_eq!(pinned, planned);
    }
}
