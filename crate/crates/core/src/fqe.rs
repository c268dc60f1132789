//! Tabular fitted-Q evaluation and its confounding-robust lower bounds.
//!
//! All three recursions share the continuation
//! `y(x,a,x') = R(x,a,x') + γ V(x')` with `V(x') = Q(x',π_e)` from the previous
//! iteration, and differ only in how the per-pair conditional mean of `y`
//! is formed from `P̂(·|x,a)`:
//!
//! - nominal: `Σ P̂ y`;
//! - naive: `Σ P̂ [β 1(y<0) + α 1(y≥0)] y`;
//! - confounded: `min_w Σ P̂ w y` over `α ≤ w ≤ β`, `Σ P̂ w = 1`.
//!
//! Pairs without data get the pessimistic value `min_{x'} y(x,a,x')`.

use ndarray::{s, Array1, Array2, Array3};

use crate::dataset::EmpiricalModel;
use crate::error::{Error, Result};
use crate::lp::{self, BoxEqualityLp, LpOutcome};
use crate::mdp::{ActionValues, PolicyTable, StateValues};
use crate::sensitivity::alpha_beta;

/// An evaluation problem posed on an estimated marginal model.
#[derive(Debug, Clone, Copy)]
pub struct EvalProblem<'a> {
    pub model: &'a EmpiricalModel,
    pub rewards: &'a Array3<f64>,
    pub discount: f64,
    pub initial_dist: &'a Array1<f64>,
    pub pi_e: &'a PolicyTable,
}

impl EvalProblem<'_> {
    pub fn validate(&self) -> Result<()> {
        let (ns, na) = (self.model.n_states(), self.model.n_actions());
        if self.rewards.dim() != (ns, na, ns) {
            return Err(Error::Dimension(format!(
                "rewards are {:?}, model is [{ns}, {na}, {ns}]",
                self.rewards.dim()
            )));
        }
        if self.initial_dist.len() != ns {
            return Err(Error::Dimension("initial distribution length".into()));
        }
        if self.pi_e.n_states() != ns || self.pi_e.n_actions() != na {
            return Err(Error::Dimension("evaluation policy shape".into()));
        }
        if !(0.0..=1.0).contains(&self.discount) {
            return Err(Error::Parameter(format!("discount {} outside [0, 1]", self.discount)));
        }
        Ok(())
    }

    pub fn n_states(&self) -> usize {
        self.model.n_states()
    }

    pub fn n_actions(&self) -> usize {
        self.model.n_actions()
    }

    /// `y(x,a,·)` for continuation values `v`.
    pub fn continuation(&self, x: usize, a: usize, v: &Array1<f64>) -> Vec<f64> {
        (0..self.n_states())
            .map(|y| self.rewards[[x, a, y]] + self.discount * v[y])
            .collect()
    }

    /// Pessimistic value for a pair without data.
    pub fn fallback(&self, x: usize, a: usize, v: &Array1<f64>) -> f64 {
        self.continuation(x, a, v)
            .into_iter()
            .fold(f64::INFINITY, f64::min)
    }

    pub(crate) fn p_hat_row(&self, x: usize, a: usize) -> Vec<f64> {
        self.model.p_hat.slice(s![x, a, ..]).to_vec()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct FqeDiagnostics {
    /// Unsupported pairs that received the pessimistic fallback, summed over
    /// iterations.
    pub fallback_pairs: usize,
    pub lp_infeasible: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FqeBoundResult {
    pub q_lower: ActionValues,
    pub v_lower: StateValues,
    pub expected_lower: f64,
    /// `χ · V_k` for `k = 1..=T`.
    pub per_horizon: Vec<f64>,
    pub diagnostics: FqeDiagnostics,
}

fn iterate(
    prob: &EvalProblem<'_>,
    horizon: usize,
    mut step: impl FnMut(&StateValues, &mut FqeDiagnostics) -> Result<ActionValues>,
) -> Result<FqeBoundResult> {
    prob.validate()?;
    let (ns, na) = (prob.n_states(), prob.n_actions());
    let mut diagnostics = FqeDiagnostics::default();
    let mut q = ActionValues::zeros(ns, na);
    let mut v = StateValues::zeros(ns);
    let mut per_horizon = Vec::with_capacity(horizon);
    for _ in 0..horizon {
        q = step(&v, &mut diagnostics)?;
        v = q.under_policy(prob.pi_e);
        per_horizon.push(v.expected(prob.initial_dist));
    }
    let expected_lower = v.expected(prob.initial_dist);
    Ok(FqeBoundResult {
        q_lower: q,
        v_lower: v,
        expected_lower,
        per_horizon,
        diagnostics,
    })
}

fn per_pair(
    prob: &EvalProblem<'_>,
    v_prev: &StateValues,
    diagnostics: &mut FqeDiagnostics,
    mut value: impl FnMut(usize, usize, &[f64], &[f64]) -> Result<f64>,
) -> Result<ActionValues> {
    let (ns, na) = (prob.n_states(), prob.n_actions());
    let mut q = Array2::zeros((ns, na));
    for x in 0..ns {
        for a in 0..na {
            let y = prob.continuation(x, a, &v_prev.v);
            q[[x, a]] = if prob.model.supported[[x, a]] {
                value(x, a, &prob.p_hat_row(x, a), &y)?
            } else {
                diagnostics.fallback_pairs += 1;
                y.iter().copied().fold(f64::INFINITY, f64::min)
            };
        }
    }
    Ok(ActionValues {
        q,
        horizon: v_prev.horizon + 1,
    })
}

/// One nominal backup `Q(x,a) = Σ P̂(x'|x,a) y(x,a,x')`.
pub fn nominal_step(prob: &EvalProblem<'_>, v_prev: &StateValues) -> Result<ActionValues> {
    per_pair(prob, v_prev, &mut FqeDiagnostics::default(), |_, _, p, y| {
        Ok(dot(p, y))
    })
}

/// Tabular FQE on the estimated model; exact policy evaluation on `(P̂, R)`.
pub fn nominal_fqe(prob: &EvalProblem<'_>, horizon: usize) -> Result<FqeBoundResult> {
    iterate(prob, horizon, |v, d| {
        per_pair(prob, v, d, |_, _, p, y| Ok(dot(p, y)))
    })
}

/// One step of the closed-form bound that weights negative continuations by
/// `β` and nonnegative ones by `α`.
pub fn naive_bound_step(
    prob: &EvalProblem<'_>,
    gamma: f64,
    v_prev: &StateValues,
) -> Result<ActionValues> {
    naive_step_counted(prob, gamma, v_prev, &mut FqeDiagnostics::default())
}

fn naive_step_counted(
    prob: &EvalProblem<'_>,
    gamma: f64,
    v_prev: &StateValues,
    diagnostics: &mut FqeDiagnostics,
) -> Result<ActionValues> {
    per_pair(prob, v_prev, diagnostics, |x, a, p, y| {
        let (alpha, beta) = alpha_beta(prob.model.pi_hat[[x, a]], gamma)?;
        Ok(p.iter()
            .zip(y)
            .map(|(&p, &y)| p * if y < 0.0 { beta } else { alpha } * y)
            .sum())
    })
}

pub fn naive_bound(prob: &EvalProblem<'_>, gamma: f64, horizon: usize) -> Result<FqeBoundResult> {
    alpha_beta(0.5, gamma)?;
    iterate(prob, horizon, |v, d| naive_step_counted(prob, gamma, v, d))
}

/// The linear-program lower bound: at every supported pair, the least
/// reweighted mean of `y` over weights `w(x') ∈ [α, β]` with `Σ P̂ w = 1`.
pub fn confounded_fqe(prob: &EvalProblem<'_>, gamma: f64, horizon: usize) -> Result<FqeBoundResult> {
    alpha_beta(0.5, gamma)?;
    iterate(prob, horizon, |v, d| {
        let mut infeasible = 0;
        let q = per_pair(prob, v, d, |x, a, p, y| {
            let (alpha, beta) = alpha_beta(prob.model.pi_hat[[x, a]], gamma)?;
            let support: Vec<usize> = (0..p.len()).filter(|&i| p[i] > 0.0).collect();
            let weights: Vec<f64> = support.iter().map(|&i| p[i]).collect();
            let lp = BoxEqualityLp {
                c: support.iter().map(|&i| p[i] * y[i]).collect(),
                lo: vec![alpha; support.len()],
                hi: vec![beta; support.len()],
                a: vec![weights],
                b: vec![1.0],
            };
            match lp::solve(&lp)? {
                LpOutcome::Optimal(sol) => Ok(sol.objective),
                LpOutcome::Infeasible => {
                    // Only reachable through rounding in P̂; w ≡ 1 is feasible.
                    infeasible += 1;
                    Ok(dot(p, y))
                }
            }
        })?;
        d.lp_infeasible += infeasible;
        Ok(q)
    })
}

/// `T`-step value of the estimated behavior policy on the estimated model.
/// Unvisited states act uniformly.
pub fn behavior_value(prob: &EvalProblem<'_>, horizon: usize) -> Result<f64> {
    let pi_b = estimated_behavior(prob.model);
    let swapped = EvalProblem { pi_e: &pi_b, ..*prob };
    Ok(nominal_fqe(&swapped, horizon)?.expected_lower)
}

/// `π̂` as a policy table; unvisited states get the uniform row.
pub fn estimated_behavior(model: &EmpiricalModel) -> PolicyTable {
    let mut probs = model.pi_hat.clone();
    let na = model.n_actions();
    for mut row in probs.rows_mut() {
        let total: f64 = row.sum();
        if total <= 0.0 {
            row.fill(1.0 / na as f64);
        } else {
            row.mapv_inplace(|p| p / total);
        }
    }
    PolicyTable::new(probs).expect("normalized rows")
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(a, b)| a * b).sum()
}
