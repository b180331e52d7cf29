//! Dense two-phase tableau simplex over `f64` or exact rationals.
//!
//! Solves `max c^T x  s.t.  A x = b, x >= 0` and reports primal values, row
//! duals, or a Farkas ray when the rows are inconsistent. Small problems only:
//! the tableau is stored densely.

use std::fmt::Debug;

use num::{BigInt, BigRational, FromPrimitive, Signed, ToPrimitive, Zero};

use crate::error::{Error, Result};

/// Arithmetic the simplex needs. `tolerance` is zero for exact types.
pub trait LpScalar: Clone + Debug + PartialOrd + num::Num + Signed {
    fn tolerance() -> Self;
    fn to_f64(&self) -> f64;
}

impl LpScalar for f64 {
    fn tolerance() -> Self {
        1e-11
    }
    fn to_f64(&self) -> f64 {
        *self
    }
}

impl LpScalar for BigRational {
    fn tolerance() -> Self {
        BigRational::zero()
    }
    fn to_f64(&self) -> f64 {
        ToPrimitive::to_f64(self).unwrap_or(f64::NAN)
    }
}

/// `x` rounded to the nearest multiple of `grid` as an exact rational.
pub fn rational_on_grid(x: f64, grid: f64) -> BigRational {
    let steps = (x / grid).round();
    let denom = (1.0 / grid).round();
    BigRational::new(
        BigInt::from_f64(steps).unwrap_or_default(),
        BigInt::from_f64(denom).unwrap_or_else(|| BigInt::from(1)),
    )
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpSolution<T> {
    pub x: Vec<T>,
    pub objective: T,
    /// One multiplier per equality row; `b^T y` equals the optimum.
    pub duals: Vec<T>,
    pub pivots: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub enum LpOutcome<T> {
    Optimal(LpSolution<T>),
    /// `y` with `y^T A <= 0` and `y^T b > 0`.
    Infeasible {
        farkas: Vec<T>,
    },
    Unbounded,
}

/// An equality-form LP with a dense row-major constraint matrix.
#[derive(Debug, Clone)]
pub struct Lp<T> {
    pub a: Vec<Vec<T>>,
    pub b: Vec<T>,
    pub c: Vec<T>,
}

struct Tableau<T> {
    /// Rows of `[A | I | b]`.
    rows: Vec<Vec<T>>,
    /// Reduced costs in the same column layout; last entry is minus the objective.
    cost: Vec<T>,
    basis: Vec<usize>,
    n: usize,
    pivots: usize,
}

const MAX_PIVOTS: usize = 50_000;
/// Degenerate pivots tolerated before switching to Bland's rule.
const STALL_LIMIT: usize = 50;

impl<T: LpScalar> Tableau<T> {
    fn rhs(&self) -> usize {
        self.rows[0].len() - 1
    }

    fn pivot(&mut self, r: usize, j: usize) {
        let p = self.rows[r][j].clone();
        for v in self.rows[r].iter_mut() {
            *v = v.clone() / p.clone();
        }
        let pivot_row = self.rows[r].clone();
        for (i, row) in self.rows.iter_mut().enumerate() {
            if i == r || row[j].is_zero() {
                continue;
            }
            let f = row[j].clone();
            for (v, pv) in row.iter_mut().zip(&pivot_row) {
                *v = v.clone() - f.clone() * pv.clone();
            }
        }
        let f = self.cost[j].clone();
        if !f.is_zero() {
            for (v, pv) in self.cost.iter_mut().zip(&pivot_row) {
                *v = v.clone() - f.clone() * pv.clone();
            }
        }
        self.basis[r] = j;
        self.pivots += 1;
    }

    /// Maximizes over columns `< limit`. Returns false when unbounded.
    fn optimize(&mut self, limit: usize) -> Result<bool> {
        let tol = T::tolerance();
        let rhs = self.rhs();
        let mut bland = false;
        let mut stalled = 0;
        loop {
            if self.pivots >= MAX_PIVOTS {
                return Err(Error::NumericalFailure(format!("simplex exceeded {MAX_PIVOTS} pivots")));
            }
            let entering = if bland {
                (0..limit).find(|&j| self.cost[j] > tol)
            } else {
                let mut best: Option<usize> = None;
                for j in 0..limit {
                    if self.cost[j] > tol && best.is_none_or(|b| self.cost[j] > self.cost[b]) {
                        best = Some(j);
                    }
                }
                best
            };
            let Some(j) = entering else { return Ok(true) };
            let mut leave: Option<(usize, T)> = None;
            for (r, row) in self.rows.iter().enumerate() {
                if row[j] > tol {
                    let ratio = row[rhs].clone() / row[j].clone();
                    let better = match &leave {
                        None => true,
                        Some((lr, lratio)) => ratio < *lratio || (ratio == *lratio && self.basis[r] < self.basis[*lr]),
                    };
                    if better {
                        leave = Some((r, ratio));
                    }
                }
            }
            let Some((r, ratio)) = leave else { return Ok(false) };
            if ratio.abs() <= tol {
                stalled += 1;
                if stalled > STALL_LIMIT {
                    bland = true;
                }
            } else {
                stalled = 0;
            }
            self.pivot(r, j);
        }
    }
}

impl<T: LpScalar> Lp<T> {
    pub fn new(a: Vec<Vec<T>>, b: Vec<T>, c: Vec<T>) -> Result<Self> {
        let n = c.len();
        if a.len() != b.len() || a.iter().any(|row| row.len() != n) || a.is_empty() {
            return Err(Error::InvalidArgument(format!(
                "LP dimensions disagree: {} rows, {} right-hand sides, {} costs",
                a.len(),
                b.len(),
                n
            )));
        }
        Ok(Self { a, b, c })
    }

    pub fn solve(&self) -> Result<LpOutcome<T>> {
        let m = self.b.len();
        let n = self.c.len();
        let tol = T::tolerance();
        // Flip rows so every right-hand side is nonnegative.
        let sign: Vec<T> = self
            .b
            .iter()
            .map(|bi| if bi.is_negative() { -T::one() } else { T::one() })
            .collect();
        let rows: Vec<Vec<T>> = (0..m)
            .map(|r| {
                let mut row: Vec<T> = self.a[r].iter().map(|v| v.clone() * sign[r].clone()).collect();
                row.extend((0..m).map(|k| if k == r { T::one() } else { T::zero() }));
                row.push(self.b[r].clone() * sign[r].clone());
                row
            })
            .collect();
        // Phase 1 maximizes minus the artificial sum.
        let mut cost = vec![T::zero(); n + m + 1];
        for row in &rows {
            for j in 0..n {
                cost[j] = cost[j].clone() + row[j].clone();
            }
            cost[n + m] = cost[n + m].clone() + row[n + m].clone();
        }
        let mut t = Tableau {
            rows,
            cost,
            basis: (n..n + m).collect(),
            n,
            pivots: 0,
        };
        t.optimize(n)?;
        let infeasibility = t.cost[n + m].clone();
        if infeasibility > tol {
            // Phase-1 duals y_r = -1 - d_{n+r}; the Farkas ray is -y in the original row signs.
            let farkas = (0..m)
                .map(|r| (T::one() + t.cost[n + r].clone()) * sign[r].clone())
                .collect();
            return Ok(LpOutcome::Infeasible { farkas });
        }
        // Drive zero-level artificials out of the basis where possible.
        for r in 0..m {
            if t.basis[r] >= n {
                if let Some(j) = (0..n).find(|&j| t.rows[r][j].abs() > tol) {
                    t.pivot(r, j);
                }
            }
        }
        // Phase 2 reduced costs d_j = c_j - c_B^T T_j.
        let rhs = n + m;
        let mut cost: Vec<T> = (0..=rhs)
            .map(|j| if j < n { self.c[j].clone() } else { T::zero() })
            .collect();
        for (r, row) in t.rows.iter().enumerate() {
            let cb = if t.basis[r] < n {
                self.c[t.basis[r]].clone()
            } else {
                T::zero()
            };
            if cb.is_zero() {
                continue;
            }
            for j in 0..=rhs {
                cost[j] = cost[j].clone() - cb.clone() * row[j].clone();
            }
        }
        t.cost = cost;
        if !t.optimize(n)? {
            return Ok(LpOutcome::Unbounded);
        }
        let mut x = vec![T::zero(); n];
        for (r, &bj) in t.basis.iter().enumerate() {
            if bj < n {
                x[bj] = t.rows[r][rhs].clone();
            }
        }
        let objective = -t.cost[rhs].clone();
        let duals = (0..m).map(|r| -t.cost[t.n + r].clone() * sign[r].clone()).collect();
        Ok(LpOutcome::Optimal(LpSolution {
            x,
            objective,
            duals,
            pivots: t.pivots,
        }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn q(n: i64, d: i64) -> BigRational {
        BigRational::new(n.into(), d.into())
    }

    #[test]
    fn small_lp_with_duals() {
        // max 3x + 2y  s.t. x + y + s1 = 4, x + 3y + s2 = 6
        let lp = Lp::new(
            vec![vec![1.0, 1.0, 1.0, 0.0], vec![1.0, 3.0, 0.0, 1.0]],
            vec![4.0, 6.0],
            vec![3.0, 2.0, 0.0, 0.0],
        )
        .unwrap();
        let LpOutcome::Optimal(sol) = lp.solve().unwrap() else {
            panic!()
        };
        assert_abs_diff_eq!(sol.objective, 12.0, epsilon = 1e-12);
        assert_abs_diff_eq!(sol.x[0], 4.0, epsilon = 1e-12);
        // strong duality
        let by: f64 = sol.duals.iter().zip(&lp.b).map(|(y, b)| y * b).sum();
        assert_abs_diff_eq!(by, sol.objective, epsilon = 1e-12);
        assert_abs_diff_eq!(sol.duals[0], 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(sol.duals[1], 0.0, epsilon = 1e-12);
    }

    #[test]
    fn exact_rational_optimum() {
        // max x + y  s.t. 3x + y + s1 = 2, x + 3y + s2 = 2  -> x = y = 1/2
        let lp = Lp::new(
            vec![
                vec![q(3, 1), q(1, 1), q(1, 1), q(0, 1)],
                vec![q(1, 1), q(3, 1), q(0, 1), q(1, 1)],
            ],
            vec![q(2, 1), q(2, 1)],
            vec![q(1, 1), q(1, 1), q(0, 1), q(0, 1)],
        )
        .unwrap();
        let LpOutcome::Optimal(sol) = lp.solve().unwrap() else {
            panic!()
        };
        assert_eq!(sol.objective, q(1, 1));
        assert_eq!(sol.x[0], q(1, 2));
        assert_eq!(sol.duals, vec![q(1, 4), q(1, 4)]);
    }

    #[test]
    fn infeasible_gives_farkas_ray() {
        // x + y = 1 and x + y = 2 with a negative right-hand side variant
        let a = vec![vec![1.0, 1.0], vec![-1.0, -1.0]];
        let b = vec![1.0, -2.0];
        let lp = Lp::new(a.clone(), b.clone(), vec![0.0, 0.0]).unwrap();
        let LpOutcome::Infeasible { farkas } = lp.solve().unwrap() else {
            panic!()
        };
        for j in 0..2 {
            let ya: f64 = (0..2).map(|r| farkas[r] * a[r][j]).sum();
            assert!(ya <= 1e-12);
        }
        let yb: f64 = farkas.iter().zip(&b).map(|(y, b)| y * b).sum();
        assert!(yb > 0.0);
    }

    #[test]
    fn unbounded_detected() {
        let lp = Lp::new(vec![vec![1.0, -1.0]], vec![1.0], vec![0.0, 1.0]).unwrap();
        assert_eq!(lp.solve().unwrap(), LpOutcome::Unbounded);
    }

    #[test]
    fn redundant_rows_are_tolerated() {
        let lp = Lp::new(vec![vec![1.0, 1.0], vec![2.0, 2.0]], vec![1.0, 2.0], vec![1.0, 2.0]).unwrap();
        let LpOutcome::Optimal(sol) = lp.solve().unwrap() else {
            panic!()
        };
        assert_abs_diff_eq!(sol.objective, 2.0, epsilon = 1e-12);
    }

    #[test]
    fn degenerate_cycling_example() {
        // Beale's example in equality form; Dantzig's rule alone can cycle.
        let a = vec![
            vec![0.25, -60.0, -0.04, 9.0, 1.0, 0.0, 0.0],
            vec![0.5, -90.0, -0.02, 3.0, 0.0, 1.0, 0.0],
            vec![0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0],
        ];
        let lp = Lp::new(a, vec![0.0, 0.0, 1.0], vec![0.75, -150.0, 0.02, -6.0, 0.0, 0.0, 0.0]).unwrap();
        let LpOutcome::Optimal(sol) = lp.solve().unwrap() else {
            panic!()
        };
        assert_abs_diff_eq!(sol.objective, 0.05, epsilon = 1e-10);
    }

    #[test]
    fn grid_rounding() {
        assert_eq!(rational_on_grid(0.5, 1e-12), q(1, 2));
        assert_eq!(rational_on_grid(-1.25, 1e-12), q(-5, 4));
    }
}
