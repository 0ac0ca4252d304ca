//! Brute-force cross-checks for the clearing solver.
//!
//! Small random books are solved three ways: by the production solver, by an
//! exact rational simplex built straight from the offers, and (when there are
//! at most five variables) by enumerating every vertex of the feasible
//! polytope in floating point. The production solver's duals are checked as
//! an optimality certificate on top.

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use rand::Rng;
use serde::Serialize;
use transax_core::clearing::{build_lp, solve, LpInstance, LpOutcome, SolverConfig};
use transax_core::market::is_feasible;
use transax_core::{
    Feeder, FeederId, GridModel, Interval, Offer, OfferBook, OfferId, ParticipantId, PinnedTrades,
    Side,
};

pub const OBJECTIVE_TOL: f64 = 1e-6;
const VERTEX_LIMIT: usize = 5;

#[derive(Debug, Clone)]
pub struct OracleInstance {
    pub book: OfferBook,
    pub grid: GridModel,
    pub pinned: PinnedTrades,
    pub now: Interval,
    pub lookahead: u32,
}

impl OracleInstance {
    pub fn config(&self) -> SolverConfig {
        SolverConfig {
            lookahead: self.lookahead,
            ..SolverConfig::default()
        }
    }

    pub fn window(&self) -> (Interval, Interval) {
        let lo = (self.now + self.grid.t_clear).max(self.pinned.next_open());
        (lo, self.now + self.lookahead)
    }
}

/// Up to six offers over intervals 1..=4 on up to three feeders, all data
/// small integers, one-hour intervals.
pub fn random_book(rng: &mut impl Rng) -> (OfferBook, GridModel) {
    let feeders = rng.random_range(1..=3u32);
    let list: Vec<Feeder> = (0..feeders)
        .map(|f| {
            let c_ext = f64::from(rng.random_range(0..=6u32));
            let c_int = f64::from(rng.random_range(0..=6u32));
            Feeder::new(FeederId(f), c_ext, c_int).expect("non-negative capacities")
        })
        .collect();
    let grid = GridModel::new(list, 1.0, 1).expect("valid grid");
    let mut book = OfferBook::new();
    let n = rng.random_range(1..=6u32);
    for id in 0..n {
        let side = if rng.random_bool(0.5) { Side::Selling } else { Side::Buying };
        let start = rng.random_range(1..=4u32);
        let end = rng.random_range(start..=4u32);
        let reservation = if rng.random_bool(0.4) {
            None
        } else {
            Some(f64::from(rng.random_range(0..=3u32)))
        };
        let offer = Offer {
            id: OfferId(id),
            side,
            prosumer: ParticipantId(id),
            feeder: FeederId(rng.random_range(0..feeders)),
            energy: f64::from(rng.random_range(1..=8u32)),
            start,
            end,
            reservation,
        };
        book.insert(offer).expect("well-formed offer");
    }
    (book, grid)
}

/// A random book, cleared from interval 0 with lookahead 4. With probability
/// `pin_probability` the solver's interval-1 trades are pinned first and the
/// instance is posed from interval 1 instead.
pub fn random_instance(rng: &mut impl Rng, pin_probability: f64) -> OracleInstance {
    let (book, grid) = random_book(rng);
    let mut inst = OracleInstance {
        book,
        grid,
        pinned: PinnedTrades::sealed_through(Some(0)),
        now: 0,
        lookahead: 4,
    };
    if rng.random_bool(pin_probability) {
        let first = {
            let lp = build_lp(&inst.book, &inst.grid, &inst.pinned, 0, &inst.config());
            solve(&lp).map(|o| o.solution)
        };
        if let Ok(sol) = first {
            let mut pinned = inst.pinned.clone();
            let ok = sol
                .at_interval(1)
                .all(|(k, v)| pinned.pin_trade(1, k.sell, k.buy, *v).is_ok())
                && pinned.seal(1).is_ok();
            if ok {
                inst.pinned = pinned;
                inst.now = 1;
                inst.lookahead = 3;
            }
        }
    }
    inst
}

/// `max 1'x  s.t.  Ax <= b, x >= 0` written out densely.
#[derive(Debug, Clone)]
pub struct DenseLp {
    pub rows: Vec<Vec<f64>>,
    pub rhs: Vec<f64>,
    pub columns: usize,
    /// Objective contribution of pinned trades.
    pub constant: f64,
}

fn reservation(o: &Offer) -> Option<f64> {
    match (o.side, o.reservation) {
        (_, Some(r)) => Some(r),
        (Side::Selling, None) => Some(0.0),
        (Side::Buying, None) => None,
    }
}

/// Builds the clearing LP from the offers, without the production LP builder.
pub fn dense_lp(inst: &OracleInstance) -> DenseLp {
    let (lo, hi) = inst.window();
    let sellers: Vec<&Offer> = inst
        .book
        .selling()
        .filter(|o| !inst.book.is_withdrawn(o.id))
        .collect();
    let buyers: Vec<&Offer> = inst
        .book
        .buying()
        .filter(|o| !inst.book.is_withdrawn(o.id))
        .collect();
    let mut vars: Vec<(&Offer, &Offer, Interval)> = Vec::new();
    for s in &sellers {
        for b in &buyers {
            let priced = match (reservation(s), reservation(b)) {
                (Some(rs), Some(rb)) => rs <= rb,
                _ => true,
            };
            if !priced {
                continue;
            }
            let from = s.start.max(b.start).max(lo);
            let to = s.end.min(b.end).min(hi);
            for t in from..=to {
                vars.push((s, b, t));
            }
        }
    }
    let delta = inst.grid.delta;
    let mut used = std::collections::BTreeMap::<OfferId, f64>::new();
    let mut constant = 0.0;
    for (k, v) in inst.pinned.iter() {
        *used.entry(k.sell).or_default() += v.power * delta;
        *used.entry(k.buy).or_default() += v.power * delta;
        constant += v.power;
    }
    let n = vars.len();
    let mut rows = Vec::new();
    let mut rhs = Vec::new();
    for o in sellers.iter().chain(&buyers) {
        let row: Vec<f64> = vars
            .iter()
            .map(|(s, b, _)| if s.id == o.id || b.id == o.id { delta } else { 0.0 })
            .collect();
        rows.push(row);
        rhs.push((o.energy - used.get(&o.id).copied().unwrap_or(0.0)).max(0.0));
    }
    if lo <= hi {
        for f in inst.grid.feeders() {
            for t in lo..=hi {
                let prod: Vec<f64> = vars
                    .iter()
                    .map(|(s, _, vt)| if *vt == t && s.feeder == f.id { 1.0 } else { 0.0 })
                    .collect();
                let cons: Vec<f64> = vars
                    .iter()
                    .map(|(_, b, vt)| if *vt == t && b.feeder == f.id { 1.0 } else { 0.0 })
                    .collect();
                let net: Vec<f64> = prod.iter().zip(&cons).map(|(p, c)| p - c).collect();
                let neg: Vec<f64> = net.iter().map(|x| -x).collect();
                rows.extend([prod, cons]);
                rhs.extend([f.c_int, f.c_int]);
                rows.extend([net, neg]);
                rhs.extend([f.c_ext, f.c_ext]);
            }
        }
    }
    DenseLp {
        rows,
        rhs,
        columns: n,
        constant,
    }
}

fn rational(x: f64) -> BigRational {
    BigRational::from_float(x).unwrap_or_else(BigRational::zero)
}

/// Exact optimum by tableau simplex over rationals with Bland's rule.
pub fn exact_optimum(lp: &DenseLp) -> BigRational {
    let m = lp.rows.len();
    let n = lp.columns;
    let width = n + m + 1;
    let mut t: Vec<Vec<BigRational>> = (0..m)
        .map(|i| {
            let mut row = vec![BigRational::zero(); width];
            for (j, &a) in lp.rows[i].iter().enumerate() {
                row[j] = rational(a);
            }
            row[n + i] = BigRational::one();
            row[n + m] = rational(lp.rhs[i].max(0.0));
            row
        })
        .collect();
    let mut reduced: Vec<BigRational> = (0..n + m)
        .map(|j| if j < n { BigRational::one() } else { BigRational::zero() })
        .collect();
    let mut value = BigRational::zero();
    let mut basis: Vec<usize> = (n..n + m).collect();
    while let Some(q) = (0..n + m).find(|&j| reduced[j].is_positive()) {
        let mut pick: Option<(usize, BigRational)> = None;
        for i in 0..m {
            if !t[i][q].is_positive() {
                continue;
            }
            let ratio = &t[i][n + m] / &t[i][q];
            let better = match &pick {
                None => true,
                Some((r, best)) => ratio < *best || (ratio == *best && basis[i] < basis[*r]),
            };
            if better {
                pick = Some((i, ratio));
            }
        }
        let Some((r, _)) = pick else {
            // Offer energies bound every variable.
            unreachable!("oracle LP is bounded");
        };
        let p = t[r][q].clone();
        for x in t[r].iter_mut() {
            *x /= &p;
        }
        let pivot_row = t[r].clone();
        for (i, row) in t.iter_mut().enumerate() {
            if i == r || row[q].is_zero() {
                continue;
            }
            let f = row[q].clone();
            for (x, y) in row.iter_mut().zip(&pivot_row) {
                *x -= &f * y;
            }
        }
        let f = reduced[q].clone();
        for (x, y) in reduced.iter_mut().zip(&pivot_row) {
            *x -= &f * y;
        }
        value += &f * &pivot_row[n + m];
        basis[r] = q;
    }
    value + rational(lp.constant)
}

pub fn to_f64(x: &BigRational) -> f64 {
    x.to_f64().unwrap_or_else(|| {
        let num = x.numer().to_f64().unwrap_or(f64::NAN);
        let den = x.denom().to_f64().unwrap_or(f64::NAN);
        num / den
    })
}

fn solve_square(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for c in 0..n {
        let p = (c..n).max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs()))?;
        if a[p][c].abs() < 1e-12 {
            return None;
        }
        a.swap(c, p);
        b.swap(c, p);
        for i in 0..n {
            if i == c {
                continue;
            }
            let f = a[i][c] / a[c][c];
            if f == 0.0 {
                continue;
            }
            let (pivot, row) = if i < c {
                let (lo, hi) = a.split_at_mut(c);
                (&hi[0], &mut lo[i])
            } else {
                let (lo, hi) = a.split_at_mut(i);
                (&lo[c], &mut hi[0])
            };
            for (x, p) in row[c..n].iter_mut().zip(&pivot[c..n]) {
                *x -= f * p;
            }
            b[i] -= f * b[c];
        }
    }
    Some((0..n).map(|i| b[i] / a[i][i]).collect())
}

/// Best vertex over all choices of `n` tight constraints, or `None` when
/// there are too many variables to enumerate.
pub fn vertex_optimum(lp: &DenseLp) -> Option<f64> {
    let n = lp.columns;
    if n > VERTEX_LIMIT {
        return None;
    }
    if n == 0 {
        return Some(lp.constant);
    }
    let mut all_rows: Vec<(Vec<f64>, f64)> = lp
        .rows
        .iter()
        .cloned()
        .zip(lp.rhs.iter().map(|b| b.max(0.0)))
        .filter(|(r, _)| r.iter().any(|&a| a != 0.0))
        .collect();
    for j in 0..n {
        let mut r = vec![0.0; n];
        r[j] = -1.0;
        all_rows.push((r, 0.0));
    }
    let feasible = |x: &[f64]| {
        all_rows
            .iter()
            .all(|(r, b)| r.iter().zip(x).map(|(a, v)| a * v).sum::<f64>() <= b + 1e-9)
    };
    let total = all_rows.len();
    let mut best: Option<f64> = None;
    let mut pick: Vec<usize> = (0..n).collect();
    loop {
        let a = pick.iter().map(|&i| all_rows[i].0.clone()).collect();
        let b = pick.iter().map(|&i| all_rows[i].1).collect();
        if let Some(x) = solve_square(a, b) {
            if feasible(&x) {
                let v: f64 = x.iter().sum();
                best = Some(best.map_or(v, |bv: f64| bv.max(v)));
            }
        }
        // Next combination in lexicographic order.
        let mut i = n;
        loop {
            if i == 0 {
                return best.map(|v| v + lp.constant);
            }
            i -= 1;
            if pick[i] < total - n + i {
                break;
            }
        }
        pick[i] += 1;
        for k in i + 1..n {
            pick[k] = pick[k - 1] + 1;
        }
    }
}

/// Checks `y >= 0`, `A'y >= 1` and `b'y = objective` for the solver's duals.
pub fn check_dual_certificate(lp: &LpInstance<'_>, out: &LpOutcome, pinned_total: f64) -> Result<(), String> {
    if out.duals.len() != lp.num_constraints() {
        return Err(format!("{} duals for {} rows", out.duals.len(), lp.num_constraints()));
    }
    if let Some((i, y)) = out.duals.iter().enumerate().find(|(_, y)| **y < -1e-9) {
        return Err(format!("dual {i} is negative: {y}"));
    }
    let mut aty = vec![0.0; lp.num_variables()];
    for &(r, c, a) in &lp.triplets {
        aty[c] += a * out.duals[r];
    }
    if let Some((j, v)) = aty.iter().enumerate().find(|(_, v)| **v < 1.0 - 1e-7) {
        return Err(format!("reduced cost of column {j} is positive: A'y = {v}"));
    }
    let bty: f64 = lp.rhs.iter().zip(&out.duals).map(|(b, y)| b * y).sum();
    let primal = out.objective - pinned_total;
    if (bty - primal).abs() > OBJECTIVE_TOL * (1.0 + primal.abs()) {
        return Err(format!("duality gap: b'y = {bty}, primal = {primal}"));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleCase {
    pub index: usize,
    pub offers: usize,
    pub variables: usize,
    pub pinned: bool,
    pub solver: f64,
    pub exact: f64,
    pub vertex: Option<f64>,
    pub feasible: bool,
    pub certificate: Option<String>,
    pub error: Option<String>,
}

impl OracleCase {
    pub fn passed(&self) -> bool {
        self.error.is_none()
            && self.feasible
            && self.certificate.is_none()
            && (self.solver - self.exact).abs() <= OBJECTIVE_TOL
            && self.vertex.is_none_or(|v| (v - self.exact).abs() <= OBJECTIVE_TOL)
    }
}

pub fn check_instance(index: usize, inst: &OracleInstance) -> OracleCase {
    let dense = dense_lp(inst);
    let exact = to_f64(&exact_optimum(&dense));
    let vertex = vertex_optimum(&dense);
    let lp = build_lp(&inst.book, &inst.grid, &inst.pinned, inst.now, &inst.config());
    let mut case = OracleCase {
        index,
        offers: inst.book.len(),
        variables: lp.num_variables(),
        pinned: inst.pinned.iter().next().is_some(),
        solver: f64::NAN,
        exact,
        vertex,
        feasible: false,
        certificate: None,
        error: None,
    };
    match solve(&lp) {
        Ok(out) => {
            case.solver = out.objective;
            case.feasible = is_feasible(&out.solution, &inst.book, &inst.grid, &inst.pinned);
            case.certificate = check_dual_certificate(&lp, &out, dense.constant).err();
        }
        Err(e) => case.error = Some(e.to_string()),
    }
    case
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleSummary {
    pub instances: usize,
    pub passed: usize,
    pub vertex_checked: usize,
    pub pinned: usize,
    pub max_error: f64,
    pub failures: Vec<OracleCase>,
}

pub fn run_suite(count: usize, seed: u64) -> OracleSummary {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut summary = OracleSummary {
        instances: count,
        passed: 0,
        vertex_checked: 0,
        pinned: 0,
        max_error: 0.0,
        failures: Vec::new(),
    };
    for index in 0..count {
        let inst = random_instance(&mut rng, 0.3);
        let case = check_instance(index, &inst);
        summary.vertex_checked += usize::from(case.vertex.is_some());
        summary.pinned += usize::from(case.pinned);
        let err = (case.solver - case.exact).abs();
        summary.max_error = summary.max_error.max(if err.is_nan() { f64::INFINITY } else { err });
        if case.passed() {
            summary.passed += 1;
        } else {
            summary.failures.push(case);
        }
    }
    summary
}

/// Integer-valued rational, for tests.
pub fn int(x: i64) -> BigRational {
    BigRational::from_integer(BigInt::from(x))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn example() -> OracleInstance {
        let mut book = OfferBook::new();
        let offers = [
            (Side::Selling, 10.0, 48, 48),
            (Side::Selling, 30.0, 48, 49),
            (Side::Buying, 30.0, 48, 48),
            (Side::Buying, 10.0, 49, 49),
        ];
        for (i, (side, energy, start, end)) in offers.into_iter().enumerate() {
            book.insert(Offer {
                id: OfferId(i as u32),
                side,
                prosumer: ParticipantId(i as u32),
                feeder: FeederId(0),
                energy,
                start,
                end,
                reservation: None,
            })
            .unwrap();
        }
        OracleInstance {
            book,
            grid: GridModel::uniform(1, 100.0, 100.0, 1.0, 1).unwrap(),
            pinned: PinnedTrades::sealed_through(Some(0)),
            now: 47,
            lookahead: 2,
        }
    }

    #[test]
    fn oracles_agree_on_the_example() {
        let inst = example();
        let dense = dense_lp(&inst);
        assert_eq!(dense.columns, 3);
        assert_eq!(exact_optimum(&dense), int(40));
        assert_eq!(vertex_optimum(&dense), Some(40.0));
        assert!(check_instance(0, &inst).passed());
    }

    #[test]
    fn tight_feeder_caps_the_optimum() {
        let mut inst = example();
        inst.grid = GridModel::uniform(1, 100.0, 10.0, 1.0, 1).unwrap();
        let dense = dense_lp(&inst);
        assert_eq!(exact_optimum(&dense), int(20));
        assert_eq!(vertex_optimum(&dense), Some(20.0));
    }

    #[test]
    fn small_suite_passes() {
        let s = run_suite(40, 11);
        assert!(s.failures.is_empty(), "{:#?}", s.failures);
        assert!(s.vertex_checked > 0);
    }
}
