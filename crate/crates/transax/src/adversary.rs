//! Seeded adversarial submitter for safety testing.

use rand::seq::IteratorRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use transax_core::clearing::{SubmissionAgent, TickReport};
use transax_core::{
    matchable, ContractState, Genesis, Interval, LedgerEvent, OfferId, ParticipantId, Solution, TradeKey,
    TradeValue,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Attack {
    /// Random rescaling of candidate trades.
    Perturb,
    /// One trade pushed far past every capacity.
    Flood,
    /// A pinned trade altered or dropped.
    RewritePin,
    /// A price outside its reservation band.
    Price,
    /// Trades on arbitrary, possibly dangling or unmatchable, keys.
    Garbage,
    /// Negative or non-finite power.
    BadNumber,
    /// Unpinned candidate trades inflated by a hair.
    Nudge,
}

const ATTACKS: [Attack; 7] = [
    Attack::Perturb,
    Attack::Flood,
    Attack::RewritePin,
    Attack::Price,
    Attack::Garbage,
    Attack::BadNumber,
    Attack::Nudge,
];

pub struct Adversary {
    id: ParticipantId,
    rng: ChaCha8Rng,
    replica: ContractState,
}

impl Adversary {
    pub fn new(id: ParticipantId, genesis: &Genesis, seed: u64) -> Self {
        Self {
            id,
            rng: ChaCha8Rng::seed_from_u64(seed),
            replica: ContractState::genesis(genesis),
        }
    }

    fn random_key(&mut self, state: &ContractState) -> TradeKey {
        let n = state.next_offer_id.max(1) + 2;
        let lo = state.current_interval.saturating_sub(2);
        TradeKey {
            sell: OfferId(self.rng.random_range(0..n)),
            buy: OfferId(self.rng.random_range(0..n)),
            interval: self.rng.random_range(lo..=lo + 8),
        }
    }

    /// A well-formed open-interval key on two live offers, if one turns up
    /// within a few random draws.
    fn live_key(&mut self, state: &ContractState) -> Option<TradeKey> {
        let open = state.pinned.next_open();
        for _ in 0..32 {
            let s = state.book.active_selling().choose(&mut self.rng)?;
            let b = state.book.active_buying().choose(&mut self.rng)?;
            let lo = s.start.max(b.start).max(open);
            let hi = s.end.min(b.end);
            if lo <= hi && matchable(s, b) {
                return Some(TradeKey {
                    sell: s.id,
                    buy: b.id,
                    interval: self.rng.random_range(lo..=hi),
                });
            }
        }
        None
    }

    /// Builds one hostile solution against `state`.
    pub fn craft(&mut self, state: &ContractState) -> (Attack, Solution) {
        let attack = ATTACKS[self.rng.random_range(0..ATTACKS.len())];
        let mut sol = state.candidate.clone();
        match attack {
            Attack::Perturb => {
                for (_, v) in sol.iter_mut() {
                    if self.rng.random_bool(0.5) {
                        v.power *= self.rng.random_range(0.0..3.0);
                    }
                }
                if let Some(k) = self.live_key(state) {
                    let p = self.rng.random_range(0.0..50.0);
                    sol.insert(k, TradeValue { power: p, price: 0.5 });
                }
            }
            Attack::Flood => {
                let k = self.live_key(state).unwrap_or_else(|| self.random_key(state));
                sol.insert(k, TradeValue { power: 1e12, price: 0.5 });
            }
            Attack::RewritePin => {
                let pinned: Vec<(TradeKey, TradeValue)> = state.pinned.iter().collect();
                if pinned.is_empty() {
                    let mut k = self.random_key(state);
                    k.interval = self.rng.random_range(0..state.pinned.next_open().max(1));
                    sol.insert(k, TradeValue { power: 1.0, price: 0.5 });
                } else {
                    let (k, mut v) = pinned[self.rng.random_range(0..pinned.len())];
                    match self.rng.random_range(0..3) {
                        0 => {
                            sol.remove(&k);
                        }
                        1 => {
                            v.power += self.rng.random_range(1e-6..5.0);
                            sol.insert(k, v);
                        }
                        _ => {
                            v.price += 0.01;
                            sol.insert(k, v);
                        }
                    }
                }
            }
            Attack::Price => {
                if let Some(k) = self.live_key(state) {
                    let price = if self.rng.random_bool(0.5) { -1.0 } else { 1e9 };
                    sol.insert(k, TradeValue { power: 0.1, price });
                }
            }
            Attack::Garbage => {
                sol = Solution::new();
                for _ in 0..self.rng.random_range(1..6) {
                    let k = self.random_key(state);
                    let power = self.rng.random_range(0.0..20.0);
                    sol.insert(k, TradeValue { power, price: 0.5 });
                }
            }
            Attack::BadNumber => {
                let k = self.live_key(state).unwrap_or_else(|| self.random_key(state));
                let power = [-1.0, f64::NAN, f64::INFINITY][self.rng.random_range(0..3)];
                sol.insert(k, TradeValue { power, price: 0.5 });
            }
            Attack::Nudge => {
                let open = state.pinned.next_open();
                for (k, v) in sol.iter_mut() {
                    if k.interval >= open {
                        v.power *= 1.0 + 1e-6;
                    }
                }
            }
        }
        (attack, sol)
    }
}

impl SubmissionAgent for Adversary {
    fn id(&self) -> ParticipantId {
        self.id
    }

    fn tick(&mut self, log: &[LedgerEvent], _now: Interval) -> TickReport {
        let mut report = TickReport::default();
        let from = self.replica.last_seq as usize;
        for e in log.get(from..).unwrap_or_default() {
            if let Err(e) = self.replica.apply(e) {
                report.error = Some(e.into());
                return report;
            }
        }
        let state = self.replica.clone();
        report.submission = Some(self.craft(&state).1);
        report
    }
}
