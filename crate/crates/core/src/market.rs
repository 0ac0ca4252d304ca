//! Market domain: offers, solutions, finalized trades and the validation rules
//! every solution has to satisfy before the contract accepts it.
//!
//! Units: power in kW, energy in kWh, interval length `delta` in hours.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::float::abs;

/// Absolute slack allowed on every constraint check.
pub const TOLERANCE: f64 = 1e-9;

/// Upper price used in place of `+inf` for unpriced buying offers.
pub const DEFAULT_PRICE_CAP: f64 = 1.0;

/// Feeder housing the DSO.
pub const DUMMY_FEEDER: FeederId = FeederId(u32::MAX);

/// Power limit of the dummy feeder, large enough never to bind.
pub const DUMMY_CAPACITY: f64 = 1e12;

/// Index of a clearing interval.
pub type Interval = u32;

macro_rules! id_type {
    ($(#[$meta:meta])* $name:ident, $prefix:literal) => {
        $(#[$meta])*
        #[derive(
            Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
        )]
        #[serde(transparent)]
        pub struct $name(pub u32);

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, concat!($prefix, "{}"), self.0)
            }
        }
    };
}

id_type!(
    /// Feeder identifier.
    FeederId,
    "feeder-"
);
id_type!(
    /// Participant identifier (prosumer, solver or DSO).
    ParticipantId,
    "participant-"
);
id_type!(
    /// Offer identifier, assigned by the contract in arrival order.
    OfferId,
    "offer-"
);

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MarketError {
    #[error("unknown offer {0}")]
    UnknownOffer(OfferId),
    #[error("offers {sell} and {buy} are not a matchable selling/buying pair")]
    UnmatchablePair { sell: OfferId, buy: OfferId },
    #[error("interval {interval} is outside the common window of {sell} and {buy}")]
    OutsideWindow {
        sell: OfferId,
        buy: OfferId,
        interval: Interval,
    },
    #[error("unknown feeder {0}")]
    UnknownFeeder(FeederId),
    #[error("duplicate feeder {0}")]
    DuplicateFeeder(FeederId),
    #[error("duplicate offer {0}")]
    DuplicateOffer(OfferId),
    #[error("invalid feeder {0}: capacities must be finite and non-negative")]
    InvalidFeeder(FeederId),
    #[error("invalid grid: {0}")]
    InvalidGrid(&'static str),
    #[error("invalid offer {id}: {reason}")]
    InvalidOffer { id: OfferId, reason: &'static str },
    #[error("interval {0} is already finalized")]
    AlreadyPinned(Interval),
    #[error("interval {got} pinned out of order, expected {expected}")]
    PinOutOfOrder { expected: Interval, got: Interval },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Feeder {
    pub id: FeederId,
    /// Bound on net flow into or out of the feeder (kW).
    pub c_ext: f64,
    /// Bound on total production and on total consumption inside the feeder (kW).
    pub c_int: f64,
}

impl Feeder {
    pub fn new(id: FeederId, c_ext: f64, c_int: f64) -> Result<Self, MarketError> {
        let ok = |c: f64| c.is_finite() && c >= 0.0;
        if !ok(c_ext) || !ok(c_int) {
            return Err(MarketError::InvalidFeeder(id));
        }
        Ok(Self { id, c_ext, c_int })
    }

    pub fn dummy() -> Self {
        Self {
            id: DUMMY_FEEDER,
            c_ext: DUMMY_CAPACITY,
            c_int: DUMMY_CAPACITY,
        }
    }
}

/// Feeder topology plus the timing constants of the market.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawGrid")]
pub struct GridModel {
    /// Sorted by id.
    feeders: Vec<Feeder>,
    /// Interval length in hours.
    pub delta: f64,
    /// Lead, in intervals, between finalization and delivery.
    pub t_clear: u32,
}

#[derive(Deserialize)]
struct RawGrid {
    feeders: Vec<Feeder>,
    delta: f64,
    t_clear: u32,
}

impl TryFrom<RawGrid> for GridModel {
    type Error = MarketError;

    fn try_from(raw: RawGrid) -> Result<Self, Self::Error> {
        GridModel::new(raw.feeders, raw.delta, raw.t_clear)
    }
}

impl GridModel {
    pub fn new(mut feeders: Vec<Feeder>, delta: f64, t_clear: u32) -> Result<Self, MarketError> {
        if !(delta.is_finite() && delta > 0.0) {
            return Err(MarketError::InvalidGrid("delta must be positive"));
        }
        if t_clear == 0 {
            return Err(MarketError::InvalidGrid("t_clear must be at least 1"));
        }
        for f in &feeders {
            Feeder::new(f.id, f.c_ext, f.c_int)?;
        }
        feeders.sort_by_key(|f| f.id);
        if let Some(w) = feeders.windows(2).find(|w| w[0].id == w[1].id) {
            return Err(MarketError::DuplicateFeeder(w[0].id));
        }
        Ok(Self {
            feeders,
            delta,
            t_clear,
        })
    }

    /// `n` feeders with ids `0..n` sharing the same limits.
    pub fn uniform(
        n: u32,
        c_ext: f64,
        c_int: f64,
        delta: f64,
        t_clear: u32,
    ) -> Result<Self, MarketError> {
        let feeders = (0..n)
            .map(|i| Feeder::new(FeederId(i), c_ext, c_int))
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(feeders, delta, t_clear)
    }

    pub fn feeders(&self) -> &[Feeder] {
        &self.feeders
    }

    pub fn feeder(&self, id: FeederId) -> Option<&Feeder> {
        self.feeders
            .binary_search_by_key(&id, |f| f.id)
            .ok()
            .map(|i| &self.feeders[i])
    }

    /// Adds the DSO's dummy feeder if it is not present yet.
    pub fn with_dummy_feeder(mut self) -> Self {
        if self.feeder(DUMMY_FEEDER).is_none() {
            self.feeders.push(Feeder::dummy());
        }
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Side {
    Selling,
    Buying,
}

/// A forward offer to sell or buy `energy` kWh somewhere in `[start, end]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Offer {
    pub id: OfferId,
    pub side: Side,
    pub prosumer: ParticipantId,
    pub feeder: FeederId,
    pub energy: f64,
    pub start: Interval,
    pub end: Interval,
    /// `None` means unpriced: 0 for sellers, `+inf` for buyers.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reservation: Option<f64>,
}

impl Offer {
    pub fn reservation_price(&self) -> f64 {
        match (self.reservation, self.side) {
            (Some(r), _) => r,
            (None, Side::Selling) => 0.0,
            (None, Side::Buying) => f64::INFINITY,
        }
    }

    pub fn contains(&self, t: Interval) -> bool {
        self.start <= t && t <= self.end
    }

    pub fn validate(&self) -> Result<(), MarketError> {
        let invalid = |reason| MarketError::InvalidOffer {
            id: self.id,
            reason,
        };
        if !(self.energy.is_finite() && self.energy > 0.0) {
            return Err(invalid("energy must be positive"));
        }
        if self.start > self.end {
            return Err(invalid("start interval after end interval"));
        }
        if let Some(r) = self.reservation {
            if r.is_nan() || r < 0.0 || (r.is_infinite() && self.side == Side::Selling) {
                return Err(invalid("reservation price out of range"));
            }
        }
        Ok(())
    }
}

/// Common interval window `I(s, b)` of two offers, if any.
pub fn overlap(s: &Offer, b: &Offer) -> Option<(Interval, Interval)> {
    let lo = s.start.max(b.start);
    let hi = s.end.min(b.end);
    (lo <= hi).then_some((lo, hi))
}

/// True iff `s` sells, `b` buys, `R_s <= R_b` and their windows intersect.
pub fn matchable(s: &Offer, b: &Offer) -> bool {
    s.side == Side::Selling
        && b.side == Side::Buying
        && s.reservation_price() <= b.reservation_price()
        && overlap(s, b).is_some()
}

/// Key of one power variable. The derived order is the lexicographic
/// `(sell, buy, interval)` order used for deterministic tie-breaking.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TradeKey {
    pub sell: OfferId,
    pub buy: OfferId,
    pub interval: Interval,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TradeValue {
    /// kW, held constant over the interval.
    pub power: f64,
    /// $/kWh.
    pub price: f64,
}

/// Flat wire form of one trade.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Trade {
    pub sell_offer: OfferId,
    pub buy_offer: OfferId,
    pub interval: Interval,
    pub power: f64,
    pub price: f64,
}

impl Trade {
    pub fn key(&self) -> TradeKey {
        TradeKey {
            sell: self.sell_offer,
            buy: self.buy_offer,
            interval: self.interval,
        }
    }

    pub fn value(&self) -> TradeValue {
        TradeValue {
            power: self.power,
            price: self.price,
        }
    }
}

/// Sparse assignment of power and price; absent keys carry zero power.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(from = "Vec<Trade>", into = "Vec<Trade>")]
pub struct Solution {
    trades: BTreeMap<TradeKey, TradeValue>,
}

impl From<Vec<Trade>> for Solution {
    fn from(trades: Vec<Trade>) -> Self {
        trades.into_iter().collect()
    }
}

impl From<Solution> for Vec<Trade> {
    fn from(sol: Solution) -> Self {
        sol.trades().collect()
    }
}

impl FromIterator<Trade> for Solution {
    fn from_iter<I: IntoIterator<Item = Trade>>(iter: I) -> Self {
        let mut sol = Solution::new();
        for t in iter {
            sol.insert(t.key(), t.value());
        }
        sol
    }
}

impl Solution {
    pub fn new() -> Self {
        Self::default()
    }

    /// Sets a trade; a later insert for the same key replaces the earlier one.
    pub fn insert(&mut self, key: TradeKey, value: TradeValue) {
        self.trades.insert(key, value);
    }

    pub fn remove(&mut self, key: &TradeKey) -> Option<TradeValue> {
        self.trades.remove(key)
    }

    pub fn get(&self, key: &TradeKey) -> Option<&TradeValue> {
        self.trades.get(key)
    }

    pub fn power(&self, key: &TradeKey) -> f64 {
        self.trades.get(key).map_or(0.0, |v| v.power)
    }

    pub fn len(&self) -> usize {
        self.trades.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trades.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&TradeKey, &TradeValue)> {
        self.trades.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&TradeKey, &mut TradeValue)> {
        self.trades.iter_mut()
    }

    pub fn trades(&self) -> impl Iterator<Item = Trade> + '_ {
        self.trades.iter().map(|(k, v)| Trade {
            sell_offer: k.sell,
            buy_offer: k.buy,
            interval: k.interval,
            power: v.power,
            price: v.price,
        })
    }

    pub fn retain(&mut self, mut keep: impl FnMut(&TradeKey, &TradeValue) -> bool) {
        self.trades.retain(|k, v| keep(k, v));
    }

    /// Trades scheduled for interval `t`.
    pub fn at_interval(&self, t: Interval) -> impl Iterator<Item = (&TradeKey, &TradeValue)> {
        self.trades.iter().filter(move |(k, _)| k.interval == t)
    }

    pub fn objective(&self) -> f64 {
        objective(self)
    }
}

/// Total power summed over all trades and intervals; prices are ignored.
pub fn objective(sol: &Solution) -> f64 {
    sol.trades.values().map(|v| v.power).sum()
}

/// Finalized trade values. A pinned interval never changes once sealed.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PinnedTrades {
    intervals: BTreeMap<Interval, BTreeMap<(OfferId, OfferId), TradeValue>>,
    finalized_through: Option<Interval>,
}

impl PinnedTrades {
    pub fn new() -> Self {
        Self::default()
    }

    /// Pins with intervals `0..=through` already sealed and empty.
    pub fn sealed_through(through: Option<Interval>) -> Self {
        Self {
            intervals: BTreeMap::new(),
            finalized_through: through,
        }
    }

    pub fn finalized_through(&self) -> Option<Interval> {
        self.finalized_through
    }

    /// First interval that is not sealed yet.
    pub fn next_open(&self) -> Interval {
        self.finalized_through.map_or(0, |t| t + 1)
    }

    pub fn is_pinned(&self, t: Interval) -> bool {
        self.finalized_through.is_some_and(|ft| t <= ft)
    }

    /// Stages one trade for the next open interval.
    pub fn pin_trade(
        &mut self,
        interval: Interval,
        sell: OfferId,
        buy: OfferId,
        value: TradeValue,
    ) -> Result<(), MarketError> {
        self.expect_next(interval)?;
        self.intervals
            .entry(interval)
            .or_default()
            .insert((sell, buy), value);
        Ok(())
    }

    /// Seals the next open interval; no trade can be pinned into it afterwards.
    pub fn seal(&mut self, interval: Interval) -> Result<(), MarketError> {
        self.expect_next(interval)?;
        self.finalized_through = Some(interval);
        Ok(())
    }

    fn expect_next(&self, interval: Interval) -> Result<(), MarketError> {
        if self.is_pinned(interval) {
            return Err(MarketError::AlreadyPinned(interval));
        }
        let expected = self.next_open();
        if interval != expected {
            return Err(MarketError::PinOutOfOrder {
                expected,
                got: interval,
            });
        }
        Ok(())
    }

    pub fn get(&self, key: &TradeKey) -> Option<&TradeValue> {
        self.intervals
            .get(&key.interval)
            .and_then(|m| m.get(&(key.sell, key.buy)))
    }

    /// Pinned trades of interval `t` (empty if none or not sealed).
    pub fn interval(&self, t: Interval) -> impl Iterator<Item = (TradeKey, TradeValue)> + '_ {
        self.intervals.get(&t).into_iter().flat_map(move |m| {
            m.iter().map(move |(&(sell, buy), &v)| {
                (
                    TradeKey {
                        sell,
                        buy,
                        interval: t,
                    },
                    v,
                )
            })
        })
    }

    pub fn iter(&self) -> impl Iterator<Item = (TradeKey, TradeValue)> + '_ {
        self.intervals.iter().flat_map(|(&t, m)| {
            m.iter().map(move |(&(sell, buy), &v)| {
                (
                    TradeKey {
                        sell,
                        buy,
                        interval: t,
                    },
                    v,
                )
            })
        })
    }

    pub fn as_solution(&self) -> Solution {
        let mut sol = Solution::new();
        for (k, v) in self.iter() {
            sol.insert(k, v);
        }
        sol
    }
}

/// Selling and buying offers by id, plus the set of withdrawn offers.
///
/// Withdrawn offers stay in the book so that their pinned trades remain
/// checkable; they take no part in trades for open intervals.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct OfferBook {
    selling: BTreeMap<OfferId, Offer>,
    buying: BTreeMap<OfferId, Offer>,
    withdrawn: BTreeSet<OfferId>,
}

impl OfferBook {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, offer: Offer) -> Result<(), MarketError> {
        offer.validate()?;
        if self.get(offer.id).is_some() {
            return Err(MarketError::DuplicateOffer(offer.id));
        }
        match offer.side {
            Side::Selling => self.selling.insert(offer.id, offer),
            Side::Buying => self.buying.insert(offer.id, offer),
        };
        Ok(())
    }

    pub fn get(&self, id: OfferId) -> Option<&Offer> {
        self.selling.get(&id).or_else(|| self.buying.get(&id))
    }

    pub fn selling(&self) -> impl Iterator<Item = &Offer> {
        self.selling.values()
    }

    pub fn buying(&self) -> impl Iterator<Item = &Offer> {
        self.buying.values()
    }

    pub fn active_selling(&self) -> impl Iterator<Item = &Offer> {
        self.selling
            .values()
            .filter(|o| !self.withdrawn.contains(&o.id))
    }

    pub fn active_buying(&self) -> impl Iterator<Item = &Offer> {
        self.buying
            .values()
            .filter(|o| !self.withdrawn.contains(&o.id))
    }

    pub fn len(&self) -> usize {
        self.selling.len() + self.buying.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn withdraw(&mut self, id: OfferId) -> Result<bool, MarketError> {
        if self.get(id).is_none() {
            return Err(MarketError::UnknownOffer(id));
        }
        Ok(self.withdrawn.insert(id))
    }

    pub fn is_withdrawn(&self, id: OfferId) -> bool {
        self.withdrawn.contains(&id)
    }

    /// Ids of all offers posted by `participant`, ascending.
    pub fn offers_of(&self, participant: ParticipantId) -> Vec<OfferId> {
        let mut ids: Vec<OfferId> = self
            .selling
            .values()
            .chain(self.buying.values())
            .filter(|o| o.prosumer == participant)
            .map(|o| o.id)
            .collect();
        ids.sort();
        ids
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ConstraintClass {
    /// Energy sold from one offer exceeds its quantity.
    EnergySeller,
    /// Energy bought by one offer exceeds its quantity.
    EnergyBuyer,
    /// Net feeder flow exceeds `c_ext` in either direction.
    FeederNet,
    /// Feeder production or consumption exceeds `c_int`.
    FeederInternal,
    /// Price outside `[R_s, R_b]`.
    PriceBand,
    /// Value differs from a finalized trade.
    PinMismatch,
    /// Negative or non-finite power.
    NegativePower,
    /// Open-interval trade on a withdrawn offer.
    WithdrawnOffer,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ViolationSite {
    Offer(OfferId),
    Feeder { feeder: FeederId, interval: Interval },
    Trade(TradeKey),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub class: ConstraintClass,
    pub site: ViolationSite,
    /// Amount by which the bound is exceeded (NaN for non-numeric failures).
    pub excess: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct FeasibilityReport {
    pub violations: Vec<Violation>,
}

impl FeasibilityReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn classes(&self) -> BTreeSet<ConstraintClass> {
        self.violations.iter().map(|v| v.class).collect()
    }

    pub fn has(&self, class: ConstraintClass) -> bool {
        self.violations.iter().any(|v| v.class == class)
    }
}

#[derive(Default)]
struct FeederLoad {
    production: f64,
    consumption: f64,
}

/// Checks a solution against the offer quantities, feeder limits, price
/// bands and finalized trades.
///
/// Structural defects (dangling or unmatchable keys) are errors; constraint
/// violations are collected in the report.
pub fn check_feasibility(
    sol: &Solution,
    book: &OfferBook,
    grid: &GridModel,
    pinned: &PinnedTrades,
) -> Result<FeasibilityReport, MarketError> {
    let mut report = FeasibilityReport::default();
    let mut sold: BTreeMap<OfferId, f64> = BTreeMap::new();
    let mut bought: BTreeMap<OfferId, f64> = BTreeMap::new();
    let mut loads: BTreeMap<(FeederId, Interval), FeederLoad> = BTreeMap::new();

    for (key, value) in sol.iter() {
        let s = book.get(key.sell).ok_or(MarketError::UnknownOffer(key.sell))?;
        let b = book.get(key.buy).ok_or(MarketError::UnknownOffer(key.buy))?;
        if !matchable(s, b) {
            return Err(MarketError::UnmatchablePair {
                sell: key.sell,
                buy: key.buy,
            });
        }
        if !(s.contains(key.interval) && b.contains(key.interval)) {
            return Err(MarketError::OutsideWindow {
                sell: key.sell,
                buy: key.buy,
                interval: key.interval,
            });
        }
        for feeder in [s.feeder, b.feeder] {
            if grid.feeder(feeder).is_none() {
                return Err(MarketError::UnknownFeeder(feeder));
            }
        }

        let p = value.power;
        if !p.is_finite() || p < -TOLERANCE {
            report.violations.push(Violation {
                class: ConstraintClass::NegativePower,
                site: ViolationSite::Trade(*key),
                excess: if p.is_finite() { -p } else { f64::NAN },
            });
            continue;
        }
        if !pinned.is_pinned(key.interval) && (book.is_withdrawn(s.id) || book.is_withdrawn(b.id))
        {
            report.violations.push(Violation {
                class: ConstraintClass::WithdrawnOffer,
                site: ViolationSite::Trade(*key),
                excess: p,
            });
        }

        let (r_s, r_b) = (s.reservation_price(), b.reservation_price());
        let price = value.price;
        if !price.is_finite() || price < r_s - TOLERANCE || price > r_b + TOLERANCE {
            let excess = if !price.is_finite() {
                f64::NAN
            } else if price < r_s {
                r_s - price
            } else {
                price - r_b
            };
            report.violations.push(Violation {
                class: ConstraintClass::PriceBand,
                site: ViolationSite::Trade(*key),
                excess,
            });
        }

        *sold.entry(s.id).or_default() += p * grid.delta;
        *bought.entry(b.id).or_default() += p * grid.delta;
        loads
            .entry((s.feeder, key.interval))
            .or_default()
            .production += p;
        loads
            .entry((b.feeder, key.interval))
            .or_default()
            .consumption += p;
    }

    for (id, used) in &sold {
        let cap = book.get(*id).map_or(0.0, |o| o.energy);
        if *used > cap + TOLERANCE {
            report.violations.push(Violation {
                class: ConstraintClass::EnergySeller,
                site: ViolationSite::Offer(*id),
                excess: used - cap,
            });
        }
    }
    for (id, used) in &bought {
        let cap = book.get(*id).map_or(0.0, |o| o.energy);
        if *used > cap + TOLERANCE {
            report.violations.push(Violation {
                class: ConstraintClass::EnergyBuyer,
                site: ViolationSite::Offer(*id),
                excess: used - cap,
            });
        }
    }
    for (&(feeder, interval), load) in &loads {
        // Every feeder was resolved in the trade loop above.
        let f = grid.feeder(feeder).ok_or(MarketError::UnknownFeeder(feeder))?;
        let site = ViolationSite::Feeder { feeder, interval };
        let net = abs(load.production - load.consumption);
        if net > f.c_ext + TOLERANCE {
            report.violations.push(Violation {
                class: ConstraintClass::FeederNet,
                site,
                excess: net - f.c_ext,
            });
        }
        let internal = load.production.max(load.consumption);
        if internal > f.c_int + TOLERANCE {
            report.violations.push(Violation {
                class: ConstraintClass::FeederInternal,
                site,
                excess: internal - f.c_int,
            });
        }
    }

    check_pins(sol, pinned, &mut report);
    Ok(report)
}

fn check_pins(sol: &Solution, pinned: &PinnedTrades, report: &mut FeasibilityReport) {
    let Some(through) = pinned.finalized_through() else {
        return;
    };
    let mismatch = |key: TradeKey, excess: f64| Violation {
        class: ConstraintClass::PinMismatch,
        site: ViolationSite::Trade(key),
        excess,
    };
    for (key, value) in sol.iter().filter(|(k, _)| k.interval <= through) {
        match pinned.get(key) {
            Some(pin) => {
                let dp = abs(pin.power - value.power);
                let dq = abs(pin.price - value.price);
                if !(dp <= TOLERANCE && dq <= TOLERANCE) {
                    report.violations.push(mismatch(*key, dp.max(dq)));
                }
            }
            // Zero-power entries carry no trade; anything else is new.
            None if abs(value.power) > TOLERANCE || value.power.is_nan() => {
                report.violations.push(mismatch(*key, value.power));
            }
            None => {}
        }
    }
    for (key, pin) in pinned.iter() {
        if sol.get(&key).is_none() && pin.power > TOLERANCE {
            report.violations.push(mismatch(key, pin.power));
        }
    }
}

/// Shorthand for a feasibility check that treats structural errors as failure.
pub fn is_feasible(
    sol: &Solution,
    book: &OfferBook,
    grid: &GridModel,
    pinned: &PinnedTrades,
) -> bool {
    check_feasibility(sol, book, grid, pinned).is_ok_and(|r| r.is_ok())
}

#[cfg(test)]
pub(crate) mod fixtures {
    use super::*;

    pub const P1_SELL: OfferId = OfferId(0);
    pub const P2_SELL: OfferId = OfferId(1);
    pub const C1_BUY_48: OfferId = OfferId(2);
    pub const C1_BUY_49: OfferId = OfferId(3);

    pub fn offer(
        id: u32,
        side: Side,
        prosumer: u32,
        energy: f64,
        start: Interval,
        end: Interval,
        reservation: Option<f64>,
    ) -> Offer {
        Offer {
            id: OfferId(id),
            side,
            prosumer: ParticipantId(prosumer),
            feeder: FeederId(0),
            energy,
            start,
            end,
            reservation,
        }
    }

    /// P1 sells 10 at 48, P2 sells 30 over [48, 49], C1 buys 30 at 48 and 10 at 49.
    pub fn example_book() -> OfferBook {
        let mut book = OfferBook::new();
        book.insert(offer(0, Side::Selling, 1, 10.0, 48, 48, None)).unwrap();
        book.insert(offer(1, Side::Selling, 2, 30.0, 48, 49, None)).unwrap();
        book.insert(offer(2, Side::Buying, 3, 30.0, 48, 48, None)).unwrap();
        book.insert(offer(3, Side::Buying, 3, 10.0, 49, 49, None)).unwrap();
        book
    }

    pub fn grid(c_ext: f64, c_int: f64) -> GridModel {
        GridModel::uniform(1, c_ext, c_int, 1.0, 1).unwrap()
    }

    pub fn key(sell: OfferId, buy: OfferId, interval: Interval) -> TradeKey {
        TradeKey {
            sell,
            buy,
            interval,
        }
    }

    pub fn trade(power: f64) -> TradeValue {
        TradeValue { power, price: 0.5 }
    }

    pub fn example_optimum() -> Solution {
        let mut sol = Solution::new();
        sol.insert(key(P1_SELL, C1_BUY_48, 48), trade(10.0));
        sol.insert(key(P2_SELL, C1_BUY_48, 48), trade(20.0));
        sol.insert(key(P2_SELL, C1_BUY_49, 49), trade(10.0));
        sol
    }
}
