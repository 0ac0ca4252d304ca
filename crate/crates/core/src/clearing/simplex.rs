//! Primal revised simplex for `max c'x  s.t.  Ax <= b, x >= 0` with `b >= 0`.
//!
//! The slack basis is feasible from the start, so there is no phase one. The
//! basis inverse is kept dense (column-major) and updated in product form;
//! structural columns stay sparse. Pricing is Dantzig's rule with ties to the
//! lowest index, falling back to Bland's rule after a run of degenerate
//! pivots. Leaving-variable ties go to the lowest basic index, so the vertex
//! reached is a deterministic function of the input.

use alloc::vec;
use alloc::vec::Vec;

use crate::float::abs;

const PIVOT_EPS: f64 = 1e-9;
const DEGENERATE_RUN: usize = 64;

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum SimplexError {
    Unbounded { column: usize },
    IterationLimit { iterations: usize },
    Numeric { detail: &'static str },
}

#[derive(Debug, Clone)]
pub(crate) struct SimplexOutcome {
    pub x: Vec<f64>,
    pub duals: Vec<f64>,
    pub iterations: usize,
}

pub(crate) struct Simplex<'a> {
    m: usize,
    n: usize,
    cols: &'a [Vec<(usize, f64)>],
    cost: &'a [f64],
    rhs: Vec<f64>,
    /// Column-major: entry (i, k) lives at `k * m + i`.
    binv: Vec<f64>,
    basis: Vec<usize>,
    /// Basis position of each variable, `usize::MAX` when non-basic.
    position: Vec<usize>,
    xb: Vec<f64>,
    y: Vec<f64>,
    tol: f64,
}

impl<'a> Simplex<'a> {
    /// `cols[j]` lists the `(row, coefficient)` entries of structural column `j`.
    pub fn new(m: usize, cols: &'a [Vec<(usize, f64)>], cost: &'a [f64], rhs: &[f64], tol: f64) -> Self {
        let n = cols.len();
        let mut binv = vec![0.0; m * m];
        for i in 0..m {
            binv[i * m + i] = 1.0;
        }
        let mut position = vec![usize::MAX; n + m];
        for i in 0..m {
            position[n + i] = i;
        }
        let rhs: Vec<f64> = rhs.iter().map(|&b| b.max(0.0)).collect();
        Self {
            m,
            n,
            cols,
            cost,
            xb: rhs.clone(),
            rhs,
            binv,
            basis: (n..n + m).collect(),
            position,
            y: vec![0.0; m],
            tol,
        }
    }

    fn reduced_cost(&self, j: usize) -> f64 {
        if j < self.n {
            let dot: f64 = self.cols[j].iter().map(|&(i, a)| self.y[i] * a).sum();
            self.cost[j] - dot
        } else {
            -self.y[j - self.n]
        }
    }

    fn entering(&self, bland: bool) -> Option<usize> {
        let mut best: Option<(usize, f64)> = None;
        for j in 0..self.n + self.m {
            if self.position[j] != usize::MAX {
                continue;
            }
            let d = self.reduced_cost(j);
            if d <= self.tol {
                continue;
            }
            if bland {
                return Some(j);
            }
            if best.is_none_or(|(_, bd)| d > bd) {
                best = Some((j, d));
            }
        }
        best.map(|(j, _)| j)
    }

    /// `B^-1 a_q` as a dense vector.
    fn column(&self, q: usize) -> Vec<f64> {
        let m = self.m;
        let mut alpha = vec![0.0; m];
        let mut add = |k: usize, a: f64| {
            let col = &self.binv[k * m..(k + 1) * m];
            for (out, &v) in alpha.iter_mut().zip(col) {
                *out += a * v;
            }
        };
        if q < self.n {
            for &(k, a) in &self.cols[q] {
                add(k, a);
            }
        } else {
            add(q - self.n, 1.0);
        }
        alpha
    }

    fn leaving(&self, alpha: &[f64]) -> Option<(usize, f64)> {
        let mut best: Option<(usize, f64)> = None;
        for (i, &a) in alpha.iter().enumerate() {
            if a <= PIVOT_EPS {
                continue;
            }
            let ratio = self.xb[i] / a;
            match best {
                None => best = Some((i, ratio)),
                Some((bi, br)) => {
                    if ratio < br - 1e-12 || (ratio <= br + 1e-12 && self.basis[i] < self.basis[bi]) {
                        best = Some((i, ratio));
                    }
                }
            }
        }
        best
    }

    fn pivot(&mut self, r: usize, q: usize, alpha: &[f64], d_q: f64) {
        let m = self.m;
        let ar = alpha[r];
        for k in 0..m {
            let col = &mut self.binv[k * m..(k + 1) * m];
            let v = col[r];
            if v == 0.0 {
                continue;
            }
            let vr = v / ar;
            for (i, entry) in col.iter_mut().enumerate() {
                if i != r {
                    *entry -= alpha[i] * vr;
                }
            }
            col[r] = vr;
            self.y[k] += d_q * vr;
        }

        let theta = self.xb[r] / ar;
        for (i, x) in self.xb.iter_mut().enumerate() {
            if i == r {
                *x = theta;
            } else {
                *x -= theta * alpha[i];
                if *x < 0.0 && *x > -1e-9 {
                    *x = 0.0;
                }
            }
        }

        let out = self.basis[r];
        self.position[out] = usize::MAX;
        self.position[q] = r;
        self.basis[r] = q;
    }

    /// Recomputes `x_B = B^-1 b` from the current inverse.
    fn refresh_primal(&mut self) {
        let m = self.m;
        let mut xb = vec![0.0; m];
        for k in 0..m {
            let bk = self.rhs[k];
            if bk == 0.0 {
                continue;
            }
            let col = &self.binv[k * m..(k + 1) * m];
            for (out, &v) in xb.iter_mut().zip(col) {
                *out += v * bk;
            }
        }
        for x in xb.iter_mut() {
            if *x < 0.0 && *x > -1e-9 {
                *x = 0.0;
            }
        }
        self.xb = xb;
    }

    pub fn run(mut self) -> Result<SimplexOutcome, SimplexError> {
        let limit = 200 * (self.m + self.n) + 1000;
        let mut iterations = 0;
        let mut degenerate = 0;
        loop {
            let bland = degenerate >= DEGENERATE_RUN;
            let Some(q) = self.entering(bland) else {
                break;
            };
            let alpha = self.column(q);
            let Some((r, ratio)) = self.leaving(&alpha) else {
                return Err(SimplexError::Unbounded { column: q });
            };
            if ratio <= 1e-12 {
                degenerate += 1;
            } else {
                degenerate = 0;
            }
            let d_q = self.reduced_cost(q);
            self.pivot(r, q, &alpha, d_q);
            iterations += 1;
            if iterations % 256 == 0 {
                self.refresh_primal();
            }
            if iterations > limit {
                return Err(SimplexError::IterationLimit { iterations });
            }
        }
        self.refresh_primal();

        let mut x = vec![0.0; self.n];
        for (i, &j) in self.basis.iter().enumerate() {
            if j < self.n {
                let v = self.xb[i];
                if v.is_nan() || v < -1e-7 {
                    return Err(SimplexError::Numeric {
                        detail: "basic variable left the feasible region",
                    });
                }
                x[j] = v.max(0.0);
            }
        }
        let duals = self.y.iter().map(|&v| if abs(v) < 1e-13 { 0.0 } else { v }).collect();
        Ok(SimplexOutcome {
            x,
            duals,
            iterations,
        })
    }
}
