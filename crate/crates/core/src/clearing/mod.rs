//! Market clearing: turns the offer book into a linear program over power
//! variables, solves it, and prices the resulting trades.
//!
//! Only intervals in `[now + t_clear, now + lookahead]` get variables.
//! Finalized trades are fixed constants: they reduce the residual energy of
//! their offers but never move. Prices are not LP variables; any matchable
//! pair admits a price in its band, so they are assigned afterwards.

mod agent;
mod simplex;

use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::market::{
    check_feasibility, matchable, overlap, FeederId, GridModel, Interval, MarketError, Offer,
    OfferBook, OfferId, PinnedTrades, Side, Solution, TradeKey, TradeValue, Violation,
    DEFAULT_PRICE_CAP,
};
use simplex::{Simplex, SimplexError};

pub use agent::{ControlRecord, SolveRecord, SolverAgent, SubmissionAgent, TickError, TickReport};

/// Powers below this are dropped from returned solutions.
const ZERO_POWER: f64 = 1e-12;

/// Shrink factors tried, in order, when floating-point noise leaves a
/// solution marginally outside a bound.
const REPAIR_FACTORS: [f64; 3] = [1.0 - 1e-10, 1.0 - 1e-8, 1.0 - 1e-6];

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SolveError {
    #[error("lookahead {lookahead} is below t_clear {t_clear}")]
    Config { lookahead: u32, t_clear: u32 },
    #[error("LP is unbounded in column {column}; offer quantities should bound every variable")]
    Unbounded { column: usize },
    #[error("numeric failure: {detail}")]
    NumericFailure {
        detail: &'static str,
        iterations: usize,
        violation: Option<Violation>,
    },
    #[error("solution failed structural validation: {0}")]
    Market(#[from] MarketError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    /// Intervals ahead of `now` that receive variables; at least `t_clear`.
    pub lookahead: u32,
    /// Seconds between solver runs.
    pub solve_period: f64,
    /// Reduced-cost threshold for entering variables.
    pub optimality_tol: f64,
    /// Stand-in for an unbounded buyer reservation when pricing.
    pub price_cap: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            lookahead: 5,
            solve_period: 5.0,
            optimality_tol: 1e-9,
            price_cap: DEFAULT_PRICE_CAP,
        }
    }
}

impl SolverConfig {
    pub fn new(lookahead: u32, t_clear: u32) -> Result<Self, SolveError> {
        if lookahead < t_clear {
            return Err(SolveError::Config { lookahead, t_clear });
        }
        Ok(Self {
            lookahead,
            ..Self::default()
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum RowKind {
    SellerEnergy(OfferId),
    BuyerEnergy(OfferId),
    FeederExport { feeder: FeederId, interval: Interval },
    FeederImport { feeder: FeederId, interval: Interval },
    FeederProduction { feeder: FeederId, interval: Interval },
    FeederConsumption { feeder: FeederId, interval: Interval },
}

/// A clearing LP over one offer book snapshot.
#[derive(Debug, Clone)]
pub struct LpInstance<'a> {
    pub book: &'a OfferBook,
    pub grid: &'a GridModel,
    pub pinned: &'a PinnedTrades,
    pub now: Interval,
    /// Inclusive interval range that carries variables, if non-empty.
    pub window: Option<(Interval, Interval)>,
    /// Power variables in lexicographic key order.
    pub variables: Vec<TradeKey>,
    /// Finalized trades, carried into every returned solution unchanged.
    pub fixed: Vec<(TradeKey, TradeValue)>,
    /// `(row, column, coefficient)`; every row reads `sum <= rhs`.
    pub triplets: Vec<(usize, usize, f64)>,
    pub rhs: Vec<f64>,
    pub row_kinds: Vec<RowKind>,
    pub optimality_tol: f64,
    pub price_cap: f64,
}

impl LpInstance<'_> {
    pub fn num_variables(&self) -> usize {
        self.variables.len()
    }

    pub fn num_constraints(&self) -> usize {
        self.rhs.len()
    }

    fn columns(&self) -> Vec<Vec<(usize, f64)>> {
        let mut cols = alloc::vec![Vec::new(); self.variables.len()];
        for &(r, c, a) in &self.triplets {
            cols[c].push((r, a));
        }
        cols
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpOutcome {
    /// Fixed trades plus the solved ones, priced.
    pub solution: Solution,
    /// Objective of `solution`, fixed trades included.
    pub objective: f64,
    /// Dual values, one per row of the instance.
    pub duals: Vec<f64>,
    pub iterations: usize,
    /// Whether the solution had to be shrunk to clear rounding noise.
    pub repaired: bool,
}

/// Builds the clearing LP for the book as seen at interval `now`.
pub fn build_lp<'a>(
    book: &'a OfferBook,
    grid: &'a GridModel,
    pinned: &'a PinnedTrades,
    now: Interval,
    cfg: &SolverConfig,
) -> LpInstance<'a> {
    let lookahead = cfg.lookahead.max(grid.t_clear);
    let lo = now.saturating_add(grid.t_clear).max(pinned.next_open());
    let hi = now.saturating_add(lookahead);
    let window = (lo <= hi).then_some((lo, hi));

    let fixed: Vec<(TradeKey, TradeValue)> = pinned.iter().collect();
    let mut used: BTreeMap<OfferId, f64> = BTreeMap::new();
    for (k, v) in &fixed {
        *used.entry(k.sell).or_default() += v.power * grid.delta;
        *used.entry(k.buy).or_default() += v.power * grid.delta;
    }

    let mut variables = Vec::new();
    if let Some((lo, hi)) = window {
        let buyers: Vec<&Offer> = book.active_buying().filter(|b| b.end >= lo && b.start <= hi).collect();
        for s in book.active_selling().filter(|s| s.end >= lo && s.start <= hi) {
            for b in &buyers {
                if !matchable(s, b) {
                    continue;
                }
                let Some((olo, ohi)) = overlap(s, b) else {
                    continue;
                };
                for t in olo.max(lo)..=ohi.min(hi) {
                    variables.push(TradeKey {
                        sell: s.id,
                        buy: b.id,
                        interval: t,
                    });
                }
            }
        }
    }

    let mut rows: BTreeMap<RowKind, Vec<(usize, f64)>> = BTreeMap::new();
    for (j, key) in variables.iter().enumerate() {
        // Both offers exist: variables come from the book itself.
        let (Some(s), Some(b)) = (book.get(key.sell), book.get(key.buy)) else {
            continue;
        };
        let t = key.interval;
        rows.entry(RowKind::SellerEnergy(s.id)).or_default().push((j, grid.delta));
        rows.entry(RowKind::BuyerEnergy(b.id)).or_default().push((j, grid.delta));
        rows.entry(RowKind::FeederProduction { feeder: s.feeder, interval: t })
            .or_default()
            .push((j, 1.0));
        rows.entry(RowKind::FeederConsumption { feeder: b.feeder, interval: t })
            .or_default()
            .push((j, 1.0));
        if s.feeder != b.feeder {
            for (feeder, sign) in [(s.feeder, 1.0), (b.feeder, -1.0)] {
                rows.entry(RowKind::FeederExport { feeder, interval: t })
                    .or_default()
                    .push((j, sign));
                rows.entry(RowKind::FeederImport { feeder, interval: t })
                    .or_default()
                    .push((j, -sign));
            }
        }
    }

    let mut triplets = Vec::new();
    let mut rhs = Vec::with_capacity(rows.len());
    let mut row_kinds = Vec::with_capacity(rows.len());
    for (kind, entries) in rows {
        let bound = match kind {
            RowKind::SellerEnergy(id) | RowKind::BuyerEnergy(id) => {
                let e = book.get(id).map_or(0.0, |o| o.energy);
                (e - used.get(&id).copied().unwrap_or(0.0)).max(0.0)
            }
            RowKind::FeederExport { feeder, .. } | RowKind::FeederImport { feeder, .. } => {
                grid.feeder(feeder).map_or(0.0, |f| f.c_ext)
            }
            RowKind::FeederProduction { feeder, .. } | RowKind::FeederConsumption { feeder, .. } => {
                grid.feeder(feeder).map_or(0.0, |f| f.c_int)
            }
        };
        let r = rhs.len();
        triplets.extend(entries.into_iter().map(|(j, a)| (r, j, a)));
        rhs.push(bound);
        row_kinds.push(kind);
    }

    LpInstance {
        book,
        grid,
        pinned,
        now,
        window,
        variables,
        fixed,
        triplets,
        rhs,
        row_kinds,
        optimality_tol: cfg.optimality_tol,
        price_cap: cfg.price_cap,
    }
}

/// Solves the instance and returns a priced solution that passes the market
/// feasibility check against the instance's book, grid and pins.
pub fn solve(instance: &LpInstance<'_>) -> Result<LpOutcome, SolveError> {
    let cols = instance.columns();
    let cost = alloc::vec![1.0; cols.len()];
    let out = Simplex::new(
        instance.num_constraints(),
        &cols,
        &cost,
        &instance.rhs,
        instance.optimality_tol,
    )
    .run()
    .map_err(|e| match e {
        SimplexError::Unbounded { column } => SolveError::Unbounded { column },
        SimplexError::IterationLimit { iterations } => SolveError::NumericFailure {
            detail: "iteration limit reached",
            iterations,
            violation: None,
        },
        SimplexError::Numeric { detail } => SolveError::NumericFailure {
            detail,
            iterations: 0,
            violation: None,
        },
    })?;

    let assemble = |scale: f64| -> Result<Solution, MarketError> {
        let mut sol = Solution::new();
        for &(k, v) in &instance.fixed {
            sol.insert(k, v);
        }
        for (key, &x) in instance.variables.iter().zip(&out.x) {
            let p = x * scale;
            if p > ZERO_POWER {
                let (s, b) = offers(instance.book, key)?;
                sol.insert(
                    *key,
                    TradeValue {
                        power: p,
                        price: pair_price(s, b, instance.price_cap),
                    },
                );
            }
        }
        Ok(sol)
    };

    let check = |sol: &Solution| {
        check_feasibility(sol, instance.book, instance.grid, instance.pinned)
    };

    let mut solution = assemble(1.0)?;
    let mut report = check(&solution)?;
    let mut repaired = false;
    for factor in REPAIR_FACTORS {
        if report.is_ok() {
            break;
        }
        solution = assemble(factor)?;
        report = check(&solution)?;
        repaired = true;
    }
    if !report.is_ok() {
        return Err(SolveError::NumericFailure {
            detail: "solution violates a constraint beyond tolerance",
            iterations: out.iterations,
            violation: report.violations.first().copied(),
        });
    }

    Ok(LpOutcome {
        objective: solution.objective(),
        solution,
        duals: out.duals,
        iterations: out.iterations,
        repaired,
    })
}

fn offers<'b>(book: &'b OfferBook, key: &TradeKey) -> Result<(&'b Offer, &'b Offer), MarketError> {
    let s = book.get(key.sell).ok_or(MarketError::UnknownOffer(key.sell))?;
    let b = book.get(key.buy).ok_or(MarketError::UnknownOffer(key.buy))?;
    if !matchable(s, b) {
        return Err(MarketError::UnmatchablePair {
            sell: key.sell,
            buy: key.buy,
        });
    }
    Ok((s, b))
}

/// Midpoint of the reservation band, with an unbounded buyer reservation
/// replaced by `price_cap` (never below the seller's reservation).
pub fn pair_price(s: &Offer, b: &Offer, price_cap: f64) -> f64 {
    debug_assert!(s.side == Side::Selling && b.side == Side::Buying);
    let low = s.reservation_price();
    let high = b.reservation_price();
    let high = if high.is_finite() { high } else { price_cap.max(low) };
    (low + high) / 2.0
}

/// Re-prices every trade at the midpoint of its pair's reservation band.
pub fn assign_prices(
    sol: &Solution,
    book: &OfferBook,
    price_cap: f64,
) -> Result<Solution, MarketError> {
    let mut priced = sol.clone();
    for (key, value) in priced.iter_mut() {
        let (s, b) = offers(book, key)?;
        value.price = pair_price(s, b, price_cap);
    }
    Ok(priced)
}
