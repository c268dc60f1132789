//! Small dense linear programs of the form
//!
//! ```text
//! minimize c·w  subject to  A w = b,  lo ≤ w ≤ hi
//! ```
//!
//! A single equality with nonnegative coefficients is a continuous knapsack
//! and is solved greedily; everything else goes through a bounded simplex.
//! [`solve_bruteforce`] enumerates basic points and serves as a test oracle.

use std::cmp::Ordering;

use minilp::{ComparisonOp, OptimizationDirection, Problem};
use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Absolute feasibility tolerance shared by all solvers in this module.
pub const FEAS_TOL: f64 = 1e-9;

const BOX_TOL: f64 = 1e-10;
const MAX_BRUTEFORCE_DIM: usize = 8;

#[derive(Debug, Clone, PartialEq)]
pub struct BoxEqualityLp {
    pub c: Vec<f64>,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    /// Equality rows, each of length `c.len()`.
    pub a: Vec<Vec<f64>>,
    pub b: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpSolution {
    pub w: Vec<f64>,
    pub objective: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum LpOutcome {
    Optimal(LpSolution),
    Infeasible,
}

impl LpOutcome {
    pub fn optimal(self) -> Option<LpSolution> {
        match self {
            LpOutcome::Optimal(s) => Some(s),
            LpOutcome::Infeasible => None,
        }
    }
}

impl BoxEqualityLp {
    fn validate(&self) -> Result<()> {
        let n = self.c.len();
        if self.lo.len() != n || self.hi.len() != n {
            return Err(Error::Dimension("box bounds must match the cost vector".into()));
        }
        if self.a.len() != self.b.len() || self.a.iter().any(|r| r.len() != n) {
            return Err(Error::Dimension("equality rows must match the cost vector".into()));
        }
        let finite = |v: &[f64]| v.iter().all(|x| x.is_finite());
        if !finite(&self.c)
            || !finite(&self.lo)
            || !finite(&self.hi)
            || !finite(&self.b)
            || self.a.iter().any(|r| !finite(r))
        {
            return Err(Error::Lp("non-finite data".into()));
        }
        if let Some(i) = (0..n).find(|&i| self.lo[i] > self.hi[i]) {
            return Err(Error::Lp(format!(
                "empty box at coordinate {i}: [{}, {}]",
                self.lo[i], self.hi[i]
            )));
        }
        Ok(())
    }

    pub fn objective(&self, w: &[f64]) -> f64 {
        self.c.iter().zip(w).map(|(c, w)| c * w).sum()
    }

    /// Largest violation of the box and of the equalities at `w`.
    pub fn violation(&self, w: &[f64]) -> (f64, f64) {
        let box_v = w
            .iter()
            .zip(self.lo.iter().zip(&self.hi))
            .map(|(w, (lo, hi))| (lo - w).max(w - hi).max(0.0))
            .fold(0.0, f64::max);
        let eq_v = self
            .a
            .iter()
            .zip(&self.b)
            .map(|(row, b)| (row.iter().zip(w).map(|(a, w)| a * w).sum::<f64>() - b).abs())
            .fold(0.0, f64::max);
        (box_v, eq_v)
    }
}

/// Solves the LP. Returns [`LpOutcome::Infeasible`] when no point satisfies
/// the constraints within [`FEAS_TOL`].
pub fn solve(lp: &BoxEqualityLp) -> Result<LpOutcome> {
    lp.validate()?;
    if lp.a.len() == 1 {
        let row = &lp.a[0];
        if row.iter().all(|&a| a >= 0.0) {
            return Ok(solve_budget(&lp.c, row, &lp.lo, &lp.hi, lp.b[0]));
        }
        if row.iter().all(|&a| a <= 0.0) {
            let neg: Vec<f64> = row.iter().map(|a| -a).collect();
            return Ok(solve_budget(&lp.c, &neg, &lp.lo, &lp.hi, -lp.b[0]));
        }
    }
    solve_simplex(lp)
}

/// Continuous knapsack: minimize `c·w` subject to `weights·w = budget` and
/// `lo ≤ w ≤ hi`, with `weights ≥ 0`.
///
/// All coordinates start at `lo`; the remaining budget is spent on
/// coordinates in ascending order of `c/weight`, ties by index.
pub fn solve_budget(c: &[f64], weights: &[f64], lo: &[f64], hi: &[f64], budget: f64) -> LpOutcome {
    let n = c.len();
    let mut w = lo.to_vec();
    // Zero-weight coordinates do not touch the budget.
    for i in 0..n {
        if weights[i] == 0.0 && c[i] < 0.0 {
            w[i] = hi[i];
        }
    }
    let mut order: Vec<usize> = (0..n).filter(|&i| weights[i] > 0.0).collect();
    order.sort_by(|&i, &j| {
        (c[i] / weights[i])
            .partial_cmp(&(c[j] / weights[j]))
            .unwrap_or(Ordering::Equal)
            .then(i.cmp(&j))
    });
    let used: f64 = (0..n).map(|i| weights[i] * lo[i]).sum();
    if !fill_in_order(&order, weights, lo, hi, budget - used, &mut w) {
        return LpOutcome::Infeasible;
    }
    let objective = c.iter().zip(&w).map(|(c, w)| c * w).sum();
    LpOutcome::Optimal(LpSolution { w, objective })
}

/// Raises coordinates of `w` (assumed at `lo`) from `lo` toward `hi` in the
/// given order until `remaining` units of weight have been added. Returns
/// `false` when the budget is negative or cannot be exhausted, beyond
/// [`FEAS_TOL`].
pub(crate) fn fill_in_order(
    order: &[usize],
    weights: &[f64],
    lo: &[f64],
    hi: &[f64],
    mut remaining: f64,
    w: &mut [f64],
) -> bool {
    if remaining < -FEAS_TOL {
        return false;
    }
    for &i in order {
        if remaining <= 0.0 {
            break;
        }
        let cap = weights[i] * (hi[i] - lo[i]);
        if cap <= remaining {
            w[i] = hi[i];
            remaining -= cap;
        } else {
            w[i] = lo[i] + remaining / weights[i];
            remaining = 0.0;
        }
    }
    remaining <= FEAS_TOL
}

fn solve_simplex(lp: &BoxEqualityLp) -> Result<LpOutcome> {
    let n = lp.c.len();
    if lp.a.is_empty() {
        let w: Vec<f64> = (0..n)
            .map(|i| if lp.c[i] < 0.0 { lp.hi[i] } else { lp.lo[i] })
            .collect();
        let objective = lp.objective(&w);
        return Ok(LpOutcome::Optimal(LpSolution { w, objective }));
    }
    let mut problem = Problem::new(OptimizationDirection::Minimize);
    let vars: Vec<_> = (0..n)
        .map(|i| problem.add_var(lp.c[i], (lp.lo[i], lp.hi[i])))
        .collect();
    for (row, &b) in lp.a.iter().zip(&lp.b) {
        let expr: Vec<_> = vars.iter().copied().zip(row.iter().copied()).collect();
        problem.add_constraint(expr.as_slice(), ComparisonOp::Eq, b);
    }
    let solution = match problem.solve() {
        Ok(s) => s,
        Err(minilp::Error::Infeasible) => return Ok(LpOutcome::Infeasible),
        Err(minilp::Error::Unbounded) => {
            unreachable!("box-constrained LP cannot be unbounded")
        }
    };
    let w: Vec<f64> = vars
        .iter()
        .enumerate()
        .map(|(i, v)| solution[*v].clamp(lp.lo[i], lp.hi[i]))
        .collect();
    let (_, eq_v) = lp.violation(&w);
    if eq_v > FEAS_TOL {
        return Ok(LpOutcome::Infeasible);
    }
    let objective = lp.objective(&w);
    Ok(LpOutcome::Optimal(LpSolution { w, objective }))
}

/// Exact optimum by enumerating every basic point: a maximal independent set
/// of equality rows, a choice of basic columns, and every lo/hi assignment of
/// the nonbasic ones. Only for `n ≤ 8`.
pub fn solve_bruteforce(lp: &BoxEqualityLp) -> Result<LpOutcome> {
    lp.validate()?;
    let n = lp.c.len();
    if n > MAX_BRUTEFORCE_DIM {
        return Err(Error::Lp(format!(
            "vertex enumeration supports at most {MAX_BRUTEFORCE_DIM} variables, got {n}"
        )));
    }
    let Some((a, b)) = independent_rows(lp) else {
        return Ok(LpOutcome::Infeasible);
    };
    let m = a.len();
    let mut best: Option<LpSolution> = None;
    for basis in combinations(n, m) {
        let nonbasic: Vec<usize> = (0..n).filter(|i| !basis.contains(i)).collect();
        let bmat = DMatrix::from_fn(m, m, |r, k| a[r][basis[k]]);
        let Some(lu) = nonsingular_lu(&bmat) else {
            continue;
        };
        for mask in 0u32..(1u32 << nonbasic.len()) {
            let mut w = vec![0.0; n];
            for (bit, &j) in nonbasic.iter().enumerate() {
                w[j] = if mask & (1 << bit) == 0 { lp.lo[j] } else { lp.hi[j] };
            }
            let rhs = DVector::from_fn(m, |r, _| {
                b[r] - nonbasic.iter().map(|&j| a[r][j] * w[j]).sum::<f64>()
            });
            let Some(sol) = lu.solve(&rhs) else {
                continue;
            };
            for (k, &j) in basis.iter().enumerate() {
                w[j] = sol[k];
            }
            let (box_v, eq_v) = lp.violation(&w);
            if box_v > BOX_TOL || eq_v > FEAS_TOL {
                continue;
            }
            for j in 0..n {
                w[j] = w[j].clamp(lp.lo[j], lp.hi[j]);
            }
            let objective = lp.objective(&w);
            if best.as_ref().is_none_or(|s| objective < s.objective) {
                best = Some(LpSolution { w, objective });
            }
        }
    }
    Ok(best.map_or(LpOutcome::Infeasible, LpOutcome::Optimal))
}

fn nonsingular_lu(m: &DMatrix<f64>) -> Option<nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>> {
    if m.nrows() == 0 {
        return Some(m.clone().lu());
    }
    let scale = m.iter().fold(0.0f64, |s, v| s.max(v.abs())).max(1.0);
    let det = m.determinant();
    if det.abs() <= 1e-12 * scale.powi(m.nrows() as i32) {
        return None;
    }
    Some(m.clone().lu())
}

/// Drops dependent equality rows; `None` when the system is inconsistent.
fn independent_rows(lp: &BoxEqualityLp) -> Option<(Vec<Vec<f64>>, Vec<f64>)> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut rhs: Vec<f64> = Vec::new();
    for (row, &b) in lp.a.iter().zip(&lp.b) {
        let mut candidate = rows.clone();
        candidate.push(row.clone());
        if rank(&candidate) > rows.len() {
            rows = candidate;
            rhs.push(b);
        } else {
            let mut aug_rows: Vec<Vec<f64>> = rows
                .iter()
                .zip(&rhs)
                .map(|(r, b)| r.iter().copied().chain([*b]).collect())
                .collect();
            aug_rows.push(row.iter().copied().chain([b]).collect());
            if rank(&aug_rows) > rows.len() {
                return None;
            }
        }
    }
    Some((rows, rhs))
}

fn rank(rows: &[Vec<f64>]) -> usize {
    if rows.is_empty() {
        return 0;
    }
    let m = DMatrix::from_fn(rows.len(), rows[0].len(), |r, c| rows[r][c]);
    m.rank(1e-10)
}

fn combinations(n: usize, k: usize) -> Vec<Vec<usize>> {
    fn rec(start: usize, n: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..n {
            cur.push(i);
            rec(i + 1, n, k, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(0, n, k, &mut Vec::new(), &mut out);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn budget_example() -> BoxEqualityLp {
        BoxEqualityLp {
            c: vec![0.5, 0.0],
            lo: vec![0.75, 0.75],
            hi: vec![1.5, 1.5],
            a: vec![vec![0.5, 0.5]],
            b: vec![1.0],
        }
    }

    fn assert_solution(out: LpOutcome, w: &[f64], obj: f64) {
        let s = out.optimal().expect("feasible");
        assert!((s.objective - obj).abs() < 1e-9, "objective {}", s.objective);
        for (a, b) in s.w.iter().zip(w) {
            assert!((a - b).abs() < 1e-9, "w = {:?}", s.w);
        }
    }

    #[test]
    fn hand_solved_budget_lp() {
        let lp = budget_example();
        assert_solution(solve(&lp).unwrap(), &[0.75, 1.25], 0.375);
        assert_solution(solve_bruteforce(&lp).unwrap(), &[0.75, 1.25], 0.375);
    }

    #[test]
    fn zero_cost_gives_zero() {
        let mut lp = budget_example();
        lp.c = vec![0.0, 0.0];
        for out in [solve(&lp).unwrap(), solve_bruteforce(&lp).unwrap()] {
            let s = out.optimal().unwrap();
            assert_eq!(s.objective, 0.0);
            let (bv, ev) = lp.violation(&s.w);
            assert!(bv <= 1e-10 && ev <= 1e-9);
        }
    }

    #[test]
    fn unit_box_is_a_single_point() {
        let lp = BoxEqualityLp {
            c: vec![3.0, -1.0, 2.0],
            lo: vec![1.0; 3],
            hi: vec![1.0; 3],
            a: vec![vec![1.0, 2.0, -1.0], vec![0.5, 0.5, 0.5]],
            b: vec![2.0, 1.5],
        };
        assert_solution(solve(&lp).unwrap(), &[1.0; 3], 4.0);
        assert_solution(solve_bruteforce(&lp).unwrap(), &[1.0; 3], 4.0);
    }

    #[test]
    fn infeasible_is_reported() {
        let mut lp = budget_example();
        lp.b = vec![2.0];
        assert_eq!(solve(&lp).unwrap(), LpOutcome::Infeasible);
        assert_eq!(solve_bruteforce(&lp).unwrap(), LpOutcome::Infeasible);
        let mixed = BoxEqualityLp {
            c: vec![1.0, 1.0],
            lo: vec![0.0, 0.0],
            hi: vec![1.0, 1.0],
            a: vec![vec![1.0, -1.0], vec![1.0, 1.0]],
            b: vec![0.0, 3.0],
        };
        assert_eq!(solve(&mixed).unwrap(), LpOutcome::Infeasible);
        assert_eq!(solve_bruteforce(&mixed).unwrap(), LpOutcome::Infeasible);
    }

    #[test]
    fn inconsistent_duplicate_rows_are_infeasible() {
        let lp = BoxEqualityLp {
            c: vec![1.0, 1.0],
            lo: vec![0.0, 0.0],
            hi: vec![1.0, 1.0],
            a: vec![vec![1.0, 1.0], vec![2.0, 2.0]],
            b: vec![1.0, 1.0],
        };
        assert_eq!(solve_bruteforce(&lp).unwrap(), LpOutcome::Infeasible);
        assert_eq!(solve(&lp).unwrap(), LpOutcome::Infeasible);
    }

    #[test]
    fn bad_shapes_and_large_bruteforce_are_errors() {
        let mut lp = budget_example();
        lp.lo.push(0.0);
        assert!(solve(&lp).is_err());
        let big = BoxEqualityLp {
            c: vec![0.0; 9],
            lo: vec![0.0; 9],
            hi: vec![1.0; 9],
            a: vec![],
            b: vec![],
        };
        assert!(solve_bruteforce(&big).is_err());
        let mut empty_box = budget_example();
        empty_box.lo[0] = 2.0;
        assert!(solve(&empty_box).is_err());
    }

    #[test]
    fn negative_row_and_zero_weights() {
        let lp = BoxEqualityLp {
            c: vec![1.0, -2.0, 0.5],
            lo: vec![0.0, 0.0, 0.0],
            hi: vec![1.0, 3.0, 1.0],
            a: vec![vec![-1.0, 0.0, -1.0]],
            b: vec![-1.5],
        };
        let greedy = solve(&lp).unwrap().optimal().unwrap();
        let brute = solve_bruteforce(&lp).unwrap().optimal().unwrap();
        assert!((greedy.objective - brute.objective).abs() < 1e-12);
        assert!((greedy.objective - (-6.0 + 0.5 + 0.5)).abs() < 1e-12);
    }
}
