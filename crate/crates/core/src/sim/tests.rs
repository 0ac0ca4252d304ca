use super::*;
use crate::ledger::{audit, ContractState, EventKind};
use crate::market::{is_feasible, OfferId, Side};
use std::vec;

fn example_traces() -> Vec<ProsumerTrace> {
    let mut p1 = vec![0.0; 50];
    p1[48] = 10.0;
    let mut p2 = vec![0.0; 50];
    p2[48] = 30.0;
    let mut c1 = vec![0.0; 50];
    c1[48] = 30.0;
    c1[49] = 10.0;
    vec![
        ProsumerTrace {
            participant: ParticipantId(1),
            feeder: FeederId(0),
            production: p1,
            demand: vec![0.0; 50],
            flexible: false,
        },
        ProsumerTrace {
            participant: ParticipantId(2),
            feeder: FeederId(0),
            production: p2,
            demand: vec![0.0; 50],
            flexible: true,
        },
        ProsumerTrace {
            participant: ParticipantId(3),
            feeder: FeederId(0),
            production: vec![0.0; 50],
            demand: c1,
            flexible: false,
        },
    ]
}

fn example_config() -> SimConfig {
    SimConfig::new(GridModel::uniform(1, 100.0, 100.0, 1.0, 1).unwrap(), 50)
}

fn assert_protocol_invariants(r: &SimReport) {
    for run in r.candidate_runs() {
        assert!(run.windows(2).all(|w| w[0] <= w[1]), "candidate regressed: {run:?}");
    }
    assert!(r.intervals.iter().all(|i| i.finalized));
    let advanced: Vec<_> = r
        .events
        .iter()
        .filter_map(|e| match e.kind {
            EventKind::IntervalAdvanced { finalized, .. } => Some(finalized),
            _ => None,
        })
        .collect();
    let t_clear = r.genesis.grid.t_clear;
    let expected: Vec<_> = (t_clear..r.intervals.len() as u32).collect();
    assert_eq!(advanced, expected);
    for i in &r.intervals {
        assert!(i.traded <= i.sell_offered.min(i.buy_offered) + 1e-9, "{i:?}");
    }
    let s = &r.final_state;
    assert!(is_feasible(&s.pinned.as_solution(), &s.book, &s.grid, &s.pinned));
    assert!(is_feasible(&s.candidate, &s.book, &s.grid, &s.pinned));
    assert_eq!(&ContractState::replay(&r.genesis, &r.events).unwrap(), s);
    audit(&r.genesis, &r.events).unwrap();
}

#[test]
fn example_scenario_trades_forty() {
    let r = run(example_config(), example_traces()).unwrap();
    assert_protocol_invariants(&r);
    assert_eq!(r.intervals[48].traded, 30.0);
    assert_eq!(r.intervals[49].traded, 10.0);
    assert_eq!(r.total_traded(), 40.0);
    assert_eq!(r.intervals[48].sell_offered, 40.0);
    assert_eq!(r.intervals[49].sell_offered, 30.0);
}

#[test]
fn zero_demand_trades_nothing() {
    let mut traces = example_traces();
    for t in &mut traces {
        t.demand = vec![0.0; 50];
    }
    let r = run(example_config(), traces).unwrap();
    assert_protocol_invariants(&r);
    assert!(r.intervals.iter().all(|i| i.traded == 0.0));
    assert!(r.final_state.pinned.iter().next().is_none());
}

#[test]
fn runs_are_deterministic() {
    let a = run(example_config(), example_traces()).unwrap();
    let b = run(example_config(), example_traces()).unwrap();
    assert_eq!(a, b);
}

#[test]
fn seller_failure_before_pinning_removes_its_trades() {
    let mut cfg = example_config();
    // Interval 47 runs from 2820 s to 2880 s; the solver has already
    // matched P2 when it fails.
    cfg.failures.push(FailureSpec {
        participant: ParticipantId(2),
        fail_at: 2830.0,
        recover_at: None,
    });
    let r = run(cfg, example_traces()).unwrap();
    assert_protocol_invariants(&r);
    let p2_offer = r
        .events
        .iter()
        .find_map(|e| match &e.kind {
            EventKind::OfferPosted { offer } if offer.prosumer == ParticipantId(2) => Some(offer.id),
            _ => None,
        })
        .unwrap();
    assert!(r.finalized_trades().iter().all(|t| OfferId(t.1) != p2_offer));
    assert_eq!(r.intervals[48].traded, 10.0);
    assert_eq!(r.intervals[49].traded, 0.0);
    let kinds: Vec<_> = r.notes.iter().map(|n| n.kind.clone()).collect();
    assert_eq!(kinds, vec![NoteKind::Failed, NoteKind::Detected]);
}

#[test]
fn seller_failure_after_pinning_keeps_pinned_trade() {
    let mut cfg = example_config();
    cfg.failures.push(FailureSpec {
        participant: ParticipantId(2),
        fail_at: 2890.0,
        recover_at: None,
    });
    let r = run(cfg, example_traces()).unwrap();
    assert_protocol_invariants(&r);
    assert_eq!(r.intervals[48].traded, 30.0);
    assert_eq!(r.intervals[49].traded, 0.0);
}

#[test]
fn idle_participant_failure_only_logs_detection() {
    let mut traces = example_traces();
    traces.push(ProsumerTrace {
        participant: ParticipantId(4),
        feeder: FeederId(0),
        production: vec![0.0; 50],
        demand: vec![0.0; 50],
        flexible: false,
    });
    let baseline = run(example_config(), traces.clone()).unwrap();
    let mut cfg = example_config();
    cfg.failures.push(FailureSpec {
        participant: ParticipantId(4),
        fail_at: 100.0,
        recover_at: Some(200.0),
    });
    let r = run(cfg, traces).unwrap();
    assert_protocol_invariants(&r);
    assert_eq!(r.finalized_trades(), baseline.finalized_trades());
    let kinds: Vec<_> = r.notes.iter().map(|n| n.kind.clone()).collect();
    assert_eq!(
        kinds,
        vec![NoteKind::Failed, NoteKind::Detected, NoteKind::Rejoined, NoteKind::PeersNotified]
    );
    assert!(r.final_state.is_active(ParticipantId(4)));
}

#[test]
fn losing_one_of_two_solvers_changes_nothing() {
    let mut cfg = example_config();
    cfg.solvers = 2;
    let baseline = run(cfg.clone(), example_traces()).unwrap();
    for victim in baseline.solvers.clone() {
        let mut c = cfg.clone();
        c.failures.push(FailureSpec {
            participant: victim,
            fail_at: 10.0,
            recover_at: None,
        });
        let r = run(c, example_traces()).unwrap();
        assert_protocol_invariants(&r);
        assert_eq!(r.finalized_trades(), baseline.finalized_trades());
    }
}

#[test]
fn delayed_confirmation_still_finalizes() {
    let mut cfg = example_config();
    cfg.confirmation_delay = 2.0;
    let r = run(cfg, example_traces()).unwrap();
    assert_protocol_invariants(&r);
    assert_eq!(r.total_traded(), 40.0);
}

#[test]
fn adaptive_solver_records_control() {
    let mut cfg = example_config();
    cfg.adaptive = Some(AdaptiveConfig::new(8, cfg.solver_period));
    let r = run(cfg, example_traces()).unwrap();
    assert_protocol_invariants(&r);
    assert_eq!(r.control.len(), r.solves.len());
    assert!(r.control.iter().all(|c| 1 <= c.lookahead && c.lookahead <= c.max_lookahead));
}

#[test]
fn bad_configs_are_rejected() {
    let mut cfg = example_config();
    cfg.t_predict = 1;
    assert!(matches!(run(cfg, example_traces()), Err(SimError::Config(_))));
    let mut cfg = example_config();
    cfg.delta_hat = 7200.0;
    assert!(matches!(run(cfg, example_traces()), Err(SimError::Config(_))));
    let mut traces = example_traces();
    traces[0].production.truncate(10);
    assert!(matches!(run(example_config(), traces), Err(SimError::ShortTrace { .. })));
    let mut traces = example_traces();
    traces[1].participant = ParticipantId(1);
    assert!(matches!(
        run(example_config(), traces),
        Err(SimError::DuplicateParticipant(_))
    ));
    let mut traces = example_traces();
    traces[1].feeder = FeederId(9);
    assert!(matches!(run(example_config(), traces), Err(SimError::UnknownFeeder(_))));

    let mut sim = Simulation::new(example_config(), example_traces()).unwrap();
    let dso = sim.dso();
    assert_eq!(sim.inject_failure(dso, 1.0, None), Err(SimError::DsoFailure));
    assert_eq!(
        sim.inject_failure(ParticipantId(99), 1.0, None),
        Err(SimError::UnknownParticipant(ParticipantId(99)))
    );
}

#[test]
fn clock_starts_at_zero_and_advances() {
    let mut sim = Simulation::new(example_config(), example_traces()).unwrap();
    assert_eq!((sim.time(), sim.interval()), (SimTime::ZERO, 0));
    let mut last = SimTime::ZERO;
    while let Some(t) = sim.step().unwrap() {
        assert!(t >= last);
        last = t;
        if sim.interval() == 2 {
            break;
        }
    }
    assert_eq!(sim.time(), SimTime::from_secs(120.0));
}

#[test]
fn offers_land_in_the_right_book() {
    let r = run(example_config(), example_traces()).unwrap();
    let sides: Vec<_> = r
        .events
        .iter()
        .filter_map(|e| match &e.kind {
            EventKind::OfferPosted { offer } => Some((offer.prosumer.0, offer.side, offer.start, offer.end)),
            _ => None,
        })
        .collect();
    assert_eq!(
        sides,
        vec![
            (1, Side::Selling, 48, 48),
            (2, Side::Selling, 48, 49),
            (3, Side::Buying, 48, 48),
            (3, Side::Buying, 49, 49)
        ]
    );
}
