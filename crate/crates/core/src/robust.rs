//! s-rectangular robust lower bound over full-information models consistent
//! with the data and the `(Γ, Δ, p)` sensitivity model.
//!
//! At a single state the unknowns are `π_b(·|x,u)` and `P(·|x,u,a)` for
//! `u ∈ {0,1}`. The data pin `Σ_u p(u) π_b(a|x,u) = π̂(a|x)` and
//! `Σ_u p(u) π_b(a|x,u) P(·|x,u,a) = π̂(a|x) P̂(·|x,a)`, so the `u=1` unknowns
//! are affine in the `u=0` ones. Writing `s_a = π_b(a|x,0)`,
//! `t_0 = p(u=0) s_a / π̂(a|x)`, `t_1 = 1 - t_0` and `m = t_0 P(·|x,0,a)`,
//! the value of action `a` under the true marginal is
//!
//! ```text
//! G_a(s_a) = min_m  (p(u=0)/t_0) m·y_a + (p(u=1)/t_1) (P̂ - m)·y_a
//! ```
//!
//! over a box in `m` with `Σ m = t_0`, a continuous knapsack. The state
//! value is `min Σ_a π_e(a|x) G_a(s_a)` over `s` in a box intersected with
//! the simplex. Every `G_a` attains its maximum at the nominal point
//! `s_a = π̂(a|x)`, so the outer problem is nonconvex: with two supported
//! actions it is a one-dimensional search, solved by dense sampling and
//! golden-section refinement; with more, a dynamic program over a grid
//! seeds pairwise-exchange line searches.

use ndarray::{s, Array3, Array4};
use rayon::prelude::*;

use crate::confounded::ConfoundedMdp;
use crate::dataset::EmpiricalModel;
use crate::error::{Error, Result};
use crate::fqe::{nominal_fqe, EvalProblem};
use crate::mdp::{policy_value, StateValues};
use crate::sensitivity::{odds_interval, policy_box, transition_box, SensitivityParams};

/// Tolerance for the constraints a candidate model must satisfy.
pub const CANDIDATE_TOL: f64 = 1e-8;

const LINE_SAMPLES: usize = 256;
const EXCHANGE_SAMPLES: usize = 64;
const GOLDEN_ITERS: usize = 60;
const REFINED_MINIMA: usize = 3;
const GRID_STEPS: usize = 64;
const MAX_SWEEPS: usize = 50;
const SUM_TOL: f64 = 1e-9;

/// The uncertainty problem at one state.
#[derive(Debug, Clone, PartialEq)]
pub struct StateUncertaintyProblem {
    /// `π̂(·|x)`; all zeros for a state absent from the data.
    pub pi_hat: Vec<f64>,
    /// `P̂(·|x,a)` per action; rows of unsupported actions are ignored.
    pub p_hat: Vec<Vec<f64>>,
    pub params: SensitivityParams,
    /// `y_a(x') = R(x,a,x') + γ V(x')` per action.
    pub continuation: Vec<Vec<f64>>,
    pub pi_e: Vec<f64>,
}

/// Minimizer of a [`StateUncertaintyProblem`].
#[derive(Debug, Clone, PartialEq)]
pub struct StateSolution {
    pub value: f64,
    /// `π_b(·|x,u)` for `u = 0, 1`.
    pub behavior: [Vec<f64>; 2],
    /// `P(·|x,u,a)` indexed `[u][a]`.
    pub transitions: [Vec<Vec<f64>>; 2],
    /// Spread of the final objective across search starts.
    pub dispersion: f64,
    pub visited: bool,
    pub unsupported_actions: usize,
}

impl StateUncertaintyProblem {
    fn validate(&self) -> Result<()> {
        let na = self.pi_hat.len();
        if na == 0 || self.p_hat.len() != na || self.continuation.len() != na || self.pi_e.len() != na {
            return Err(Error::Dimension("per-action rows must all have one entry per action".into()));
        }
        let ns = self.continuation[0].len();
        if self.p_hat.iter().chain(&self.continuation).any(|r| r.len() != ns) {
            return Err(Error::Dimension("next-state rows must share one length".into()));
        }
        if self.continuation.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Parameter("continuation values must be finite".into()));
        }
        let total: f64 = self.pi_hat.iter().sum();
        if self.pi_hat.iter().any(|&p| p < 0.0) || (total > 0.0 && (total - 1.0).abs() > SUM_TOL) {
            return Err(Error::Probability(format!("π̂ row sums to {total}")));
        }
        for (a, row) in self.p_hat.iter().enumerate() {
            let s: f64 = row.iter().sum();
            if self.pi_hat[a] > 0.0 && (row.iter().any(|&p| p < 0.0) || (s - 1.0).abs() > SUM_TOL) {
                return Err(Error::Probability(format!("P̂ row of action {a} sums to {s}")));
            }
        }
        Ok(())
    }
}

/// The value of one supported action as a function of `s = π_b(a|x,0)`.
struct ActionCurve<'a> {
    w: [f64; 2],
    pi_hat: f64,
    p_hat: &'a [f64],
    y: &'a [f64],
    lo: Vec<f64>,
    hi: Vec<f64>,
    /// Support of `P̂` sorted by ascending `y`.
    ascending: Vec<usize>,
    /// Feasible range of `s`.
    range: (f64, f64),
}

impl<'a> ActionCurve<'a> {
    fn new(w: [f64; 2], gamma: f64, delta: f64, pi_hat: f64, p_hat: &'a [f64], y: &'a [f64]) -> Self {
        let bx = transition_box(p_hat, delta);
        let mut ascending: Vec<usize> = (0..p_hat.len()).filter(|&i| p_hat[i] > 0.0).collect();
        ascending.sort_by(|&i, &j| y[i].total_cmp(&y[j]).then(i.cmp(&j)));
        let (plo, phi) = odds_interval(pi_hat, gamma);
        let lo = plo.max((pi_hat - w[1] * phi) / w[0]);
        let hi = phi.min((pi_hat - w[1] * plo) / w[0]);
        Self {
            w,
            pi_hat,
            p_hat,
            y,
            lo: bx.lo,
            hi: bx.hi,
            ascending,
            range: (lo.min(pi_hat), hi.max(pi_hat)),
        }
    }

    fn other(&self, s: f64) -> f64 {
        ((self.pi_hat - self.w[0] * s) / self.w[1]).max(0.0)
    }

    fn posteriors(&self, s: f64) -> (f64, f64) {
        let t0 = (self.w[0] * s / self.pi_hat).max(f64::MIN_POSITIVE);
        let t1 = (self.w[1] * self.other(s) / self.pi_hat).max(f64::MIN_POSITIVE);
        (t0, t1)
    }

    fn bounds(&self, i: usize, t0: f64, t1: f64) -> (f64, f64) {
        let p = self.p_hat[i];
        let l = (t0 * self.lo[i]).max(p - t1 * self.hi[i]);
        let u = (t0 * self.hi[i]).min(p - t1 * self.lo[i]);
        if l > u {
            let m = t0 * p;
            (m, m)
        } else {
            (l, u)
        }
    }

    fn value(&self, s: f64) -> f64 {
        self.solve(s, None)
    }

    /// Greedy knapsack over `m`; writes `m` into `out` when given.
    fn solve(&self, s: f64, mut out: Option<&mut [f64]>) -> f64 {
        let (t0, t1) = self.posteriors(s);
        let (c0, c1) = (self.w[0] / t0, self.w[1] / t1);
        let kappa = c0 - c1;
        let mut remaining = t0;
        for &i in &self.ascending {
            remaining -= self.bounds(i, t0, t1).0;
        }
        let feasible = remaining >= -SUM_TOL * t0.max(1e-3) && {
            let capacity: f64 = self
                .ascending
                .iter()
                .map(|&i| {
                    let (l, u) = self.bounds(i, t0, t1);
                    u - l
                })
                .sum();
            capacity >= remaining - SUM_TOL * t0.max(1e-3)
        };
        let mut value = 0.0;
        let n = self.ascending.len();
        for k in 0..n {
            let i = if kappa >= 0.0 { self.ascending[k] } else { self.ascending[n - 1 - k] };
            let m = if feasible {
                let (l, u) = self.bounds(i, t0, t1);
                let add = (u - l).min(remaining.max(0.0));
                remaining -= add;
                l + add
            } else {
                t0 * self.p_hat[i]
            };
            if let Some(out) = out.as_deref_mut() {
                out[i] = m;
            }
            value += (c0 * m + c1 * (self.p_hat[i] - m)) * self.y[i];
        }
        value
    }

    fn nominal(&self) -> f64 {
        self.ascending.iter().map(|&i| self.p_hat[i] * self.y[i]).sum()
    }
}

fn min_entry(row: &[f64]) -> (usize, f64) {
    row.iter()
        .enumerate()
        .fold((0, f64::INFINITY), |(bi, bv), (i, &v)| if v < bv { (i, v) } else { (bi, bv) })
}

fn one_hot(n: usize, i: usize) -> Vec<f64> {
    let mut v = vec![0.0; n];
    v[i] = 1.0;
    v
}

fn normalized(mut v: Vec<f64>) -> Vec<f64> {
    for x in v.iter_mut() {
        *x = x.max(0.0);
    }
    let s: f64 = v.iter().sum();
    if s > 0.0 {
        for x in v.iter_mut() {
            *x /= s;
        }
    }
    v
}

fn golden(f: &impl Fn(f64) -> f64, mut a: f64, mut b: f64) -> (f64, f64) {
    let r = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - r * (b - a);
    let mut d = a + r * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..GOLDEN_ITERS {
        if b - a <= 1e-15 * a.abs().max(b.abs()).max(1.0) {
            break;
        }
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - r * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + r * (b - a);
            fd = f(d);
        }
    }
    if fc <= fd {
        (c, fc)
    } else {
        (d, fd)
    }
}

/// Global search on `[lo, hi]`: uniform samples with both endpoints, then
/// golden-section refinement around the best local minima.
fn line_min(f: impl Fn(f64) -> f64, lo: f64, hi: f64, samples: usize) -> (f64, f64) {
    if !(hi > lo) {
        return (lo, f(lo));
    }
    let xs: Vec<f64> = (0..=samples)
        .map(|i| if i == samples { hi } else { lo + (hi - lo) * i as f64 / samples as f64 })
        .collect();
    let fs: Vec<f64> = xs.iter().map(|&x| f(x)).collect();
    let mut minima: Vec<usize> = (0..=samples)
        .filter(|&i| (i == 0 || fs[i] <= fs[i - 1]) && (i == samples || fs[i] <= fs[i + 1]))
        .collect();
    minima.sort_by(|&i, &j| fs[i].total_cmp(&fs[j]).then(i.cmp(&j)));
    let mut best = (xs[minima[0]], fs[minima[0]]);
    for &i in minima.iter().take(REFINED_MINIMA) {
        let a = xs[i.saturating_sub(1)];
        let b = xs[(i + 1).min(samples)];
        let cand = golden(&f, a, b);
        if cand.1 < best.1 {
            best = cand;
        }
    }
    best
}

/// Minimizes `Σ_k weight_k G_k(s_k)` over the box ∩ simplex.
struct Outer<'a> {
    curves: Vec<ActionCurve<'a>>,
    weights: Vec<f64>,
}

impl Outer<'_> {
    fn objective(&self, s: &[f64]) -> f64 {
        self.curves
            .iter()
            .zip(&self.weights)
            .zip(s)
            .map(|((c, w), &s)| if *w == 0.0 { 0.0 } else { w * c.value(s) })
            .sum()
    }

    fn term(&self, k: usize, s: f64) -> f64 {
        if self.weights[k] == 0.0 {
            0.0
        } else {
            self.weights[k] * self.curves[k].value(s)
        }
    }

    /// Returns the minimizer and the spread of objective values across
    /// starts.
    fn search(&self) -> (Vec<f64>, f64) {
        let k = self.curves.len();
        let nominal: Vec<f64> = self.curves.iter().map(|c| c.pi_hat).collect();
        if k == 2 {
            let (a, b) = (&self.curves[0].range, &self.curves[1].range);
            let lo = a.0.max(1.0 - b.1);
            let hi = a.1.min(1.0 - b.0);
            let (s, _) = line_min(|s| self.term(0, s) + self.term(1, 1.0 - s), lo, hi, LINE_SAMPLES);
            return (vec![s, 1.0 - s], 0.0);
        }
        let mut starts = vec![nominal];
        if let Some(grid) = self.grid_start() {
            starts.push(grid);
        }
        let mut results: Vec<(Vec<f64>, f64)> = starts
            .into_iter()
            .map(|mut s| {
                let v = self.exchange(&mut s);
                (s, v)
            })
            .collect();
        let hi = results.iter().map(|r| r.1).fold(f64::NEG_INFINITY, f64::max);
        results.sort_by(|a, b| a.1.total_cmp(&b.1));
        let (best, lo) = results.swap_remove(0);
        (best, hi - lo)
    }

    /// Dynamic program over a uniform grid of the slack above the lower
    /// ends; the action with the widest range absorbs the remainder exactly.
    fn grid_start(&self) -> Option<Vec<f64>> {
        let k = self.curves.len();
        let lows: Vec<f64> = self.curves.iter().map(|c| c.range.0).collect();
        let widths: Vec<f64> = self.curves.iter().map(|c| c.range.1 - c.range.0).collect();
        let slack = (1.0 - lows.iter().sum::<f64>()).max(0.0);
        let last = (0..k).fold(0, |b, i| if widths[i] > widths[b] { i } else { b });
        let n = GRID_STEPS;
        let h = slack / n as f64;
        let tol = 1e-12;
        let mut best = vec![f64::INFINITY; n + 1];
        best[0] = 0.0;
        let mut choice: Vec<Vec<usize>> = Vec::new();
        for a in (0..k).filter(|&a| a != last) {
            let vals: Vec<Option<f64>> = (0..=n)
                .map(|j| {
                    let e = j as f64 * h;
                    (e <= widths[a] + tol).then(|| self.term(a, lows[a] + e.min(widths[a])))
                })
                .collect();
            let mut next = vec![f64::INFINITY; n + 1];
            let mut pick = vec![0usize; n + 1];
            for total in 0..=n {
                for (j, v) in vals.iter().enumerate().take(total + 1) {
                    if let Some(v) = v {
                        let cand = best[total - j] + v;
                        if cand < next[total] {
                            next[total] = cand;
                            pick[total] = j;
                        }
                    }
                }
            }
            best = next;
            choice.push(pick);
        }
        let mut top: Option<(usize, f64, f64)> = None;
        for (total, &b) in best.iter().enumerate() {
            let e = slack - total as f64 * h;
            if !b.is_finite() || e < -tol || e > widths[last] + tol {
                continue;
            }
            let s_last = lows[last] + e.clamp(0.0, widths[last]);
            let v = b + self.term(last, s_last);
            if top.is_none_or(|t| v < t.1) {
                top = Some((total, v, s_last));
            }
        }
        let (mut total, _, s_last) = top?;
        let mut s = vec![0.0; k];
        s[last] = s_last;
        let others: Vec<usize> = (0..k).filter(|&a| a != last).collect();
        for (idx, &a) in others.iter().enumerate().rev() {
            let j = choice[idx][total];
            s[a] = lows[a] + (j as f64 * h).min(widths[a]);
            total -= j;
        }
        Some(s)
    }

    /// Pairwise mass exchanges with a line search each, until a full sweep
    /// makes no progress.
    fn exchange(&self, s: &mut [f64]) -> f64 {
        let k = s.len();
        for _ in 0..MAX_SWEEPS {
            let mut improved = false;
            for a in 0..k {
                for b in a + 1..k {
                    let (ra, rb) = (self.curves[a].range, self.curves[b].range);
                    let lo = (ra.0 - s[a]).max(s[b] - rb.1);
                    let hi = (ra.1 - s[a]).min(s[b] - rb.0);
                    let (sa, sb) = (s[a], s[b]);
                    let f = |d: f64| self.term(a, sa + d) + self.term(b, sb - d);
                    let f0 = f(0.0);
                    let (d, fd) = line_min(f, lo.min(0.0), hi.max(0.0), EXCHANGE_SAMPLES);
                    if fd < f0 - 1e-15 * f0.abs().max(1.0) {
                        s[a] = sa + d;
                        s[b] = sb - d;
                        improved = true;
                    }
                }
            }
            if !improved {
                break;
            }
        }
        self.objective(s)
    }
}

/// Solves the per-state minimization.
pub fn solve_state(prob: &StateUncertaintyProblem) -> Result<StateSolution> {
    prob.validate()?;
    let na = prob.pi_hat.len();
    let ns = prob.continuation[0].len();
    let w = prob.params.confounder_weights();
    let unsupported: Vec<usize> = (0..na).filter(|&a| prob.pi_hat[a] <= 0.0).collect();
    let free: Vec<usize> = (0..na).filter(|&a| prob.pi_hat[a] > 0.0).collect();

    let mut value = 0.0;
    let mut transitions = [vec![vec![0.0; ns]; na], vec![vec![0.0; ns]; na]];
    for &a in &unsupported {
        let (i, m) = min_entry(&prob.continuation[a]);
        value += prob.pi_e[a] * m;
        for row in transitions.iter_mut() {
            row[a] = one_hot(ns, i);
        }
    }
    if free.is_empty() {
        let uniform = vec![1.0 / na as f64; na];
        return Ok(StateSolution {
            value,
            behavior: [uniform.clone(), uniform],
            transitions,
            dispersion: 0.0,
            visited: false,
            unsupported_actions: na,
        });
    }

    let params = prob.params;
    let nominal = free.len() == 1
        || params.gamma == 1.0
        || params.delta == 1.0
        || params.p == 0.0
        || params.p == 1.0;
    let curves: Vec<ActionCurve<'_>> = free
        .iter()
        .map(|&a| {
            ActionCurve::new(
                w,
                params.gamma,
                params.delta,
                prob.pi_hat[a],
                &prob.p_hat[a],
                &prob.continuation[a],
            )
        })
        .collect();

    let mut behavior = [vec![0.0; na], vec![0.0; na]];
    if nominal {
        for (c, &a) in curves.iter().zip(&free) {
            value += prob.pi_e[a] * c.nominal();
            for u in 0..2 {
                behavior[u][a] = prob.pi_hat[a];
                transitions[u][a] = prob.p_hat[a].clone();
            }
        }
        return Ok(StateSolution {
            value,
            behavior,
            transitions,
            dispersion: 0.0,
            visited: true,
            unsupported_actions: unsupported.len(),
        });
    }

    let outer = Outer {
        weights: free.iter().map(|&a| prob.pi_e[a]).collect(),
        curves,
    };
    let (s, dispersion) = outer.search();
    for (k, &a) in free.iter().enumerate() {
        let c = &outer.curves[k];
        let mut m = vec![0.0; ns];
        let g = c.solve(s[k], Some(&mut m));
        value += prob.pi_e[a] * g;
        let (t0, t1) = c.posteriors(s[k]);
        transitions[0][a] = normalized(m.iter().map(|m| m / t0).collect());
        transitions[1][a] = normalized(
            m.iter()
                .zip(c.p_hat)
                .map(|(m, p)| (p - m) / t1)
                .collect(),
        );
        behavior[0][a] = s[k];
        behavior[1][a] = c.other(s[k]);
    }
    let behavior = behavior.map(normalized);
    Ok(StateSolution {
        value,
        behavior,
        transitions,
        dispersion,
        visited: true,
        unsupported_actions: unsupported.len(),
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct RobustDiagnostics {
    pub max_dispersion: f64,
    /// Unsupported state-action pairs, summed over iterations.
    pub unsupported_pairs: usize,
    pub unvisited_states: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RobustBoundResult {
    pub v_lower: StateValues,
    pub expected_lower: f64,
    /// `χ · V_k` for `k = 1..=T`.
    pub per_horizon: Vec<f64>,
    pub diagnostics: RobustDiagnostics,
}

/// A full-information model assembled from per-state minimizers.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateModel {
    pub model: ConfoundedMdp,
    pub params: SensitivityParams,
    /// States present in the data; the others carry placeholder behavior.
    pub visited: Vec<bool>,
}

impl CandidateModel {
    pub fn to_confounded(&self) -> &ConfoundedMdp {
        &self.model
    }

    /// Checks the data-consistency equalities and both odds-ratio boxes.
    pub fn validate(&self, data: &EmpiricalModel) -> Result<()> {
        let cm = &self.model;
        let mut violations = Vec::new();
        if cm.p_u() != self.params.p {
            violations.push(format!("p(u=1) = {} but the model uses {}", self.params.p, cm.p_u()));
        }
        let (ns, na) = (cm.n_states(), cm.n_actions());
        if data.n_states() != ns || data.n_actions() != na {
            return Err(Error::Dimension("candidate and data disagree on shape".into()));
        }
        let w = cm.weights();
        let bu = cm.behavior_u();
        let tu = cm.transitions_u();
        for x in (0..ns).filter(|&x| self.visited[x]) {
            let pi_hat = data.pi_hat.row(x).to_vec();
            let pbox = policy_box(&pi_hat, self.params.gamma);
            for u in (0..2).filter(|&u| w[u] > 0.0) {
                let row = bu.slice(s![x, u, ..]).to_vec();
                if !pbox.contains(&row, CANDIDATE_TOL) {
                    violations.push(format!("π_b(·|{x},{u}) leaves the Γ box"));
                }
            }
            for a in 0..na {
                let mixed: f64 = (0..2).map(|u| w[u] * bu[[x, u, a]]).sum();
                if (mixed - pi_hat[a]).abs() > CANDIDATE_TOL {
                    violations.push(format!("behavior marginal at ({x},{a}) is {mixed}, data say {}", pi_hat[a]));
                }
                if !data.supported[[x, a]] {
                    continue;
                }
                let p_hat = data.p_hat.slice(s![x, a, ..]).to_vec();
                let tbox = transition_box(&p_hat, self.params.delta);
                for u in (0..2).filter(|&u| w[u] > 0.0) {
                    let row = tu.slice(s![x, u, a, ..]).to_vec();
                    if !tbox.contains(&row, CANDIDATE_TOL) {
                        violations.push(format!("P(·|{x},{u},{a}) leaves the Δ box"));
                    }
                }
                for y in 0..ns {
                    let joint: f64 = (0..2).map(|u| w[u] * bu[[x, u, a]] * tu[[x, u, a, y]]).sum();
                    if (joint - pi_hat[a] * p_hat[y]).abs() > CANDIDATE_TOL {
                        violations.push(format!("joint law at ({x},{a},{y}) is {joint}, data say {}", pi_hat[a] * p_hat[y]));
                    }
                }
            }
        }
        if violations.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidCandidate(violations))
        }
    }
}

fn state_problem(
    prob: &EvalProblem<'_>,
    params: SensitivityParams,
    x: usize,
    v: &StateValues,
) -> StateUncertaintyProblem {
    let na = prob.n_actions();
    StateUncertaintyProblem {
        pi_hat: prob.model.pi_hat.row(x).to_vec(),
        p_hat: (0..na).map(|a| prob.p_hat_row(x, a)).collect(),
        params,
        continuation: (0..na).map(|a| prob.continuation(x, a, &v.v)).collect(),
        pi_e: prob.pi_e.row(x).to_vec(),
    }
}

/// One robust backup at every state.
pub fn robust_sweep(
    prob: &EvalProblem<'_>,
    params: SensitivityParams,
    v_prev: &StateValues,
) -> Result<(StateValues, Vec<StateSolution>)> {
    prob.validate()?;
    if v_prev.v.len() != prob.n_states() {
        return Err(Error::Dimension("continuation length".into()));
    }
    let solutions = (0..prob.n_states())
        .into_par_iter()
        .map(|x| solve_state(&state_problem(prob, params, x, v_prev)))
        .collect::<Result<Vec<_>>>()?;
    let v = StateValues {
        v: solutions.iter().map(|s| s.value).collect(),
        horizon: v_prev.horizon + 1,
    };
    Ok((v, solutions))
}

fn assemble(
    prob: &EvalProblem<'_>,
    params: SensitivityParams,
    solutions: &[StateSolution],
) -> Result<CandidateModel> {
    let (ns, na) = (prob.n_states(), prob.n_actions());
    let behavior_u = Array3::from_shape_fn((ns, 2, na), |(x, u, a)| solutions[x].behavior[u][a]);
    let transitions_u =
        Array4::from_shape_fn((ns, 2, na, ns), |(x, u, a, y)| solutions[x].transitions[u][a][y]);
    let model = ConfoundedMdp::new(
        transitions_u,
        behavior_u,
        params.p,
        prob.rewards.clone(),
        prob.initial_dist.clone(),
        prob.discount,
    )?;
    Ok(CandidateModel {
        model,
        params,
        visited: solutions.iter().map(|s| s.visited).collect(),
    })
}

fn accumulate(d: &mut RobustDiagnostics, solutions: &[StateSolution]) {
    for s in solutions {
        d.max_dispersion = d.max_dispersion.max(s.dispersion);
        d.unsupported_pairs += if s.visited { s.unsupported_actions } else { 0 };
    }
    d.unvisited_states = solutions.iter().filter(|s| !s.visited).count();
}

/// `T` robust backups from `V_0 = 0`. The candidate model is assembled from
/// the minimizers of the final backup.
pub fn robust_value_iteration(
    prob: &EvalProblem<'_>,
    params: SensitivityParams,
    horizon: usize,
) -> Result<(RobustBoundResult, CandidateModel)> {
    if horizon == 0 {
        return Err(Error::Parameter("robust value iteration needs T ≥ 1".into()));
    }
    let mut v = StateValues::zeros(prob.n_states());
    let mut diagnostics = RobustDiagnostics::default();
    let mut per_horizon = Vec::with_capacity(horizon);
    let mut last = Vec::new();
    for _ in 0..horizon {
        let (next, solutions) = robust_sweep(prob, params, &v)?;
        accumulate(&mut diagnostics, &solutions);
        v = next;
        per_horizon.push(v.expected(prob.initial_dist));
        last = solutions;
    }
    let candidate = assemble(prob, params, &last)?;
    Ok((
        RobustBoundResult {
            expected_lower: v.expected(prob.initial_dist),
            v_lower: v,
            per_horizon,
            diagnostics,
        },
        candidate,
    ))
}

/// Value of the evaluation policy in the candidate minus the bound. The
/// candidate is a feasible model, so the gap is nonnegative; it is zero when
/// the bound is attained.
pub fn tightness_check(
    prob: &EvalProblem<'_>,
    bound: &RobustBoundResult,
    candidate: &CandidateModel,
) -> Result<f64> {
    candidate.validate(prob.model)?;
    let (_, value) = policy_value(&candidate.model.marginal_mdp(), prob.pi_e, bound.v_lower.horizon)?;
    Ok(value - bound.expected_lower)
}

/// `T − 1` nominal backups followed by one robust backup, all on `prob`.
pub fn single_step_bound(
    prob: &EvalProblem<'_>,
    params: SensitivityParams,
    horizon: usize,
) -> Result<RobustBoundResult> {
    single_step_bound_with(prob, prob, params, horizon)
}

/// Like [`single_step_bound`], but the `T − 1` nominal backups run on
/// `continuation`, a model for the steps after the confounded one.
pub fn single_step_bound_with(
    first: &EvalProblem<'_>,
    continuation: &EvalProblem<'_>,
    params: SensitivityParams,
    horizon: usize,
) -> Result<RobustBoundResult> {
    if horizon == 0 {
        return Err(Error::Parameter("single-step bound needs T ≥ 1".into()));
    }
    if first.n_states() != continuation.n_states() || first.n_actions() != continuation.n_actions() {
        return Err(Error::Dimension("continuation model shape".into()));
    }
    let tail = nominal_fqe(continuation, horizon - 1)?;
    let (v, solutions) = robust_sweep(first, params, &tail.v_lower)?;
    let mut diagnostics = RobustDiagnostics::default();
    accumulate(&mut diagnostics, &solutions);
    let expected_lower = v.expected(first.initial_dist);
    let mut per_horizon = tail.per_horizon;
    per_horizon.push(expected_lower);
    Ok(RobustBoundResult {
        v_lower: v,
        expected_lower,
        per_horizon,
        diagnostics,
    })
}
