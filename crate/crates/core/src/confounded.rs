//! Full-information MDPs with a binary unobserved state `u` that is redrawn
//! iid every step with `p(u=1) = p`.
//!
//! Integrating out `u` yields two different transition tensors:
//!
//! - the *true* marginal `Σ_u p(u) P(x'|x,u,a)`, which governs the value of
//!   any policy that ignores `u`;
//! - the *apparent* marginal `Σ_u p(u|x,a) P(x'|x,u,a)` with
//!   `p(u|x,a) = π_b(a|x,u) p(u) / π_b(a|x)`, which is what transition counts
//!   in data logged under the confounded behavior policy converge to.

use ndarray::{s, Array1, Array2, Array3, Array4, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{
    check_distribution, flat3, nested3, optimal_values, PolicyTable, TabularMdp, PROB_TOL,
};
use crate::sensitivity::{odds_interval, odds_ratio};

pub const N_CONFOUNDERS: usize = 2;

#[derive(Debug, Clone, PartialEq)]
pub struct ConfoundedMdp {
    /// `P(x'|x,u,a)` indexed `[x][u][a][x']`.
    transitions_u: Array4<f64>,
    /// `π_b(a|x,u)` indexed `[x][u][a]`.
    behavior_u: Array3<f64>,
    p_u: f64,
    rewards: Array3<f64>,
    initial_dist: Array1<f64>,
    discount: f64,
}

/// Both marginalizations of a [`ConfoundedMdp`] plus the marginal behavior
/// policy. Apparent rows for pairs with `π_b(a|x) = 0` are undefined: they
/// are left at zero and flagged in `supported`.
#[derive(Debug, Clone, PartialEq)]
pub struct Marginals {
    pub behavior: Array2<f64>,
    pub true_marginal: Array3<f64>,
    pub apparent_marginal: Array3<f64>,
    pub supported: Array2<bool>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TiltSignal {
    /// Rank actions by expected immediate reward and next states by reward.
    Reward,
    /// Rank by the finite-horizon optimal value function.
    OptimalValue,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SensitivityAudit {
    pub gamma: f64,
    pub delta: f64,
}

impl ConfoundedMdp {
    pub fn new(
        transitions_u: Array4<f64>,
        behavior_u: Array3<f64>,
        p_u: f64,
        rewards: Array3<f64>,
        initial_dist: Array1<f64>,
        discount: f64,
    ) -> Result<Self> {
        let (ns, nu, na, ns2) = transitions_u.dim();
        if nu != N_CONFOUNDERS || ns2 != ns || ns == 0 || na == 0 {
            return Err(Error::Dimension(format!(
                "transitions_u has shape {:?}, expected [{ns}, 2, {na}, {ns}]",
                transitions_u.dim()
            )));
        }
        if behavior_u.dim() != (ns, N_CONFOUNDERS, na) {
            return Err(Error::Dimension(format!(
                "behavior_u has shape {:?}, expected [{ns}, 2, {na}]",
                behavior_u.dim()
            )));
        }
        if !(0.0..=1.0).contains(&p_u) {
            return Err(Error::Parameter(format!("p(u=1) = {p_u} outside [0, 1]")));
        }
        for x in 0..ns {
            for u in 0..N_CONFOUNDERS {
                check_distribution(behavior_u.slice(s![x, u, ..]), || {
                    format!("behavior_u[{x}][{u}]")
                })?;
                for a in 0..na {
                    check_distribution(transitions_u.slice(s![x, u, a, ..]), || {
                        format!("transitions_u[{x}][{u}][{a}]")
                    })?;
                }
            }
        }
        // Validates rewards, initial distribution and discount.
        let probe = Array3::from_shape_fn((ns, na, ns), |(x, a, y)| {
            transitions_u[[x, 0, a, y]]
        });
        TabularMdp::new(probe, rewards.clone(), initial_dist.clone(), discount)?;
        Ok(Self {
            transitions_u,
            behavior_u,
            p_u,
            rewards,
            initial_dist,
            discount,
        })
    }

    /// A model whose behavior and dynamics do not depend on `u`.
    pub fn unconfounded(mdp: &TabularMdp, behavior: &PolicyTable, p_u: f64) -> Result<Self> {
        crate::mdp::check_policy_shape(mdp, behavior)?;
        let (ns, na) = (mdp.n_states(), mdp.n_actions());
        let transitions_u =
            Array4::from_shape_fn((ns, 2, na, ns), |(x, _, a, y)| mdp.transitions()[[x, a, y]]);
        let behavior_u = Array3::from_shape_fn((ns, 2, na), |(x, _, a)| behavior.probs()[[x, a]]);
        Self::new(
            transitions_u,
            behavior_u,
            p_u,
            mdp.rewards().clone(),
            mdp.initial_dist().clone(),
            mdp.discount(),
        )
    }

    pub fn n_states(&self) -> usize {
        self.transitions_u.dim().0
    }

    pub fn n_actions(&self) -> usize {
        self.transitions_u.dim().2
    }

    pub fn transitions_u(&self) -> &Array4<f64> {
        &self.transitions_u
    }

    pub fn behavior_u(&self) -> &Array3<f64> {
        &self.behavior_u
    }

    pub fn p_u(&self) -> f64 {
        self.p_u
    }

    pub fn rewards(&self) -> &Array3<f64> {
        &self.rewards
    }

    pub fn initial_dist(&self) -> &Array1<f64> {
        &self.initial_dist
    }

    pub fn discount(&self) -> f64 {
        self.discount
    }

    /// `(p(u=0), p(u=1))`.
    pub fn weights(&self) -> [f64; 2] {
        [1.0 - self.p_u, self.p_u]
    }

    pub fn marginalize(&self) -> Marginals {
        let (ns, na) = (self.n_states(), self.n_actions());
        let w = self.weights();
        let behavior = Array2::from_shape_fn((ns, na), |(x, a)| {
            (0..2).map(|u| w[u] * self.behavior_u[[x, u, a]]).sum()
        });
        let true_marginal = Array3::from_shape_fn((ns, na, ns), |(x, a, y)| {
            (0..2).map(|u| w[u] * self.transitions_u[[x, u, a, y]]).sum()
        });
        let supported = behavior.mapv(|b| b > 0.0);
        let apparent_marginal = Array3::from_shape_fn((ns, na, ns), |(x, a, y)| {
            let pb = behavior[[x, a]];
            if pb <= 0.0 {
                return 0.0;
            }
            (0..2)
                .map(|u| w[u] * self.behavior_u[[x, u, a]] * self.transitions_u[[x, u, a, y]])
                .sum::<f64>()
                / pb
        });
        Marginals {
            behavior,
            true_marginal,
            apparent_marginal,
            supported,
        }
    }

    /// The MDP governing the value of policies that ignore `u`.
    pub fn marginal_mdp(&self) -> TabularMdp {
        let m = self.marginalize();
        TabularMdp::new(
            renormalize_rows(m.true_marginal),
            self.rewards.clone(),
            self.initial_dist.clone(),
            self.discount,
        )
        .expect("mixture of valid rows is a valid row")
    }

    pub fn marginal_behavior(&self) -> PolicyTable {
        let m = self.marginalize();
        PolicyTable::new(renormalize_rows2(m.behavior)).expect("mixture of valid rows")
    }

    /// `E_D[(π_b(a|x)/π_b(a|x,u)) f(x,a,x') | x, a]` evaluated exactly under
    /// the data distribution; equals the marginal conditional mean of `f`.
    pub fn reweighted_conditional_mean(
        &self,
        f: impl Fn(usize, usize, usize) -> f64,
        x: usize,
        a: usize,
    ) -> Result<f64> {
        if x >= self.n_states() || a >= self.n_actions() {
            return Err(Error::Dimension(format!("pair ({x}, {a}) out of range")));
        }
        let w = self.weights();
        let pb: f64 = (0..2).map(|u| w[u] * self.behavior_u[[x, u, a]]).sum();
        let mut total = 0.0;
        for u in 0..2 {
            if w[u] == 0.0 {
                continue;
            }
            let pbu = self.behavior_u[[x, u, a]];
            if pbu <= 0.0 || pb <= 0.0 {
                return Err(Error::ZeroBehavior { x, a, u });
            }
            let posterior = pbu * w[u] / pb;
            let inner: f64 = (0..self.n_states())
                .map(|y| self.transitions_u[[x, u, a, y]] * f(x, a, y))
                .sum();
            total += posterior * (pb / pbu) * inner;
        }
        Ok(total)
    }

    pub fn to_document(&self) -> ConfoundedDocument {
        let m = self.marginal_mdp();
        ConfoundedDocument {
            n_states: self.n_states(),
            n_actions: self.n_actions(),
            gamma: self.discount,
            initial_dist: self.initial_dist.to_vec(),
            transitions: Some(nested3(m.transitions())),
            rewards: nested3(&self.rewards),
            p_u: self.p_u,
            transitions_u: self
                .transitions_u
                .outer_iter()
                .map(|xu| {
                    xu.outer_iter()
                        .map(|ua| ua.outer_iter().map(|r| r.to_vec()).collect())
                        .collect()
                })
                .collect(),
            behavior_u: self
                .behavior_u
                .outer_iter()
                .map(|xu| xu.outer_iter().map(|r| r.to_vec()).collect())
                .collect(),
        }
    }

    pub fn from_document(doc: &ConfoundedDocument) -> Result<Self> {
        let (ns, na) = (doc.n_states, doc.n_actions);
        let rewards = flat3(&doc.rewards, (ns, na, ns), "rewards")?;
        let behavior_u = flat3(&doc.behavior_u, (ns, 2, na), "behavior_u")?;
        if doc.transitions_u.len() != ns {
            return Err(Error::Dimension("transitions_u: wrong number of states".into()));
        }
        let mut transitions_u = Array4::zeros((ns, 2, na, ns));
        for (x, block) in doc.transitions_u.iter().enumerate() {
            let t = flat3(block, (2, na, ns), &format!("transitions_u[{x}]"))?;
            transitions_u.slice_mut(s![x, .., .., ..]).assign(&t);
        }
        Self::new(
            transitions_u,
            behavior_u,
            doc.p_u,
            rewards,
            Array1::from(doc.initial_dist.clone()),
            doc.gamma,
        )
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.to_document())?)
    }

    pub fn from_json(json: &str) -> Result<Self> {
        Self::from_document(&serde_json::from_str(json)?)
    }
}

/// JSON layout of a [`ConfoundedMdp`]: the tabular schema (with the true
/// marginal under `transitions`) extended by `p_u`, `transitions_u`
/// (`[x][u][a][x']`) and `behavior_u` (`[x][u][a]`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfoundedDocument {
    pub n_states: usize,
    pub n_actions: usize,
    pub gamma: f64,
    pub initial_dist: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transitions: Option<Vec<Vec<Vec<f64>>>>,
    pub rewards: Vec<Vec<Vec<f64>>>,
    pub p_u: f64,
    pub transitions_u: Vec<Vec<Vec<Vec<f64>>>>,
    pub behavior_u: Vec<Vec<Vec<f64>>>,
}

/// Adds an iid binary confounder to `mdp` while preserving the marginal
/// behavior policy `behavior` and the true marginal transitions exactly.
///
/// At each state the behavior policy under `u=1` shifts mass toward the
/// action ranked highest by `signal` and away from it under `u=0`; the shift
/// is the largest one keeping every policy odds ratio within `gamma_star`, so
/// the audited `Γ` equals `gamma_star` wherever a shift is possible. Next-state
/// distributions are shifted the same way toward the highest-ranked reachable
/// state, as far as the audited `Δ` (measured against the apparent marginal)
/// stays within `delta_star`. `horizon` is used by
/// [`TiltSignal::OptimalValue`].
pub fn inject_confounding(
    mdp: &TabularMdp,
    behavior: &PolicyTable,
    gamma_star: f64,
    delta_star: f64,
    p: f64,
    signal: TiltSignal,
    horizon: usize,
) -> Result<ConfoundedMdp> {
    crate::mdp::check_policy_shape(mdp, behavior)?;
    if !(gamma_star >= 1.0 && gamma_star.is_finite()) || !(delta_star >= 1.0 && delta_star.is_finite())
    {
        return Err(Error::Parameter(format!(
            "Γ* = {gamma_star} and Δ* = {delta_star} must be finite and ≥ 1"
        )));
    }
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::Parameter(format!("p = {p} must lie in (0, 1)")));
    }
    let (ns, na) = (mdp.n_states(), mdp.n_actions());
    let w = [1.0 - p, p];
    let trans = mdp.transitions();
    let rewards = mdp.rewards();

    let (action_score, next_score): (Array2<f64>, Array3<f64>) = match signal {
        TiltSignal::Reward => (
            Array2::from_shape_fn((ns, na), |(x, a)| {
                (0..ns).map(|y| trans[[x, a, y]] * rewards[[x, a, y]]).sum()
            }),
            rewards.clone(),
        ),
        TiltSignal::OptimalValue => {
            let h = horizon.max(1);
            let (_, q) = optimal_values(mdp, h);
            let (v_prev, _) = optimal_values(mdp, h - 1);
            let g = mdp.discount();
            (
                q.q,
                Array3::from_shape_fn((ns, na, ns), |(x, a, y)| rewards[[x, a, y]] + g * v_prev.v[y]),
            )
        }
    };

    let mut behavior_u = Array3::zeros((ns, 2, na));
    let mut transitions_u = Array4::zeros((ns, 2, na, ns));
    for x in 0..ns {
        let pi = behavior.row(x).to_vec();
        let favored = argmax_where(na, |a| action_score[[x, a]], |a| pi[a] > 0.0);
        let direction: Vec<f64> = (0..na)
            .map(|a| f64::from(u8::from(Some(a) == favored)) - pi[a])
            .collect();
        let eps = match favored {
            Some(fa) if pi[fa] < 1.0 => max_policy_shift(&pi, &direction, w, gamma_star),
            _ => 0.0,
        };
        for a in 0..na {
            behavior_u[[x, 1, a]] = (pi[a] + w[0] * eps * direction[a]).clamp(0.0, 1.0);
            behavior_u[[x, 0, a]] = (pi[a] - w[1] * eps * direction[a]).clamp(0.0, 1.0);
        }
        for u in 0..2 {
            normalize(behavior_u.slice_mut(s![x, u, ..]).as_slice_mut().expect("contiguous"));
        }

        for a in 0..na {
            let row: Vec<f64> = trans.slice(s![x, a, ..]).to_vec();
            let target = argmax_where(ns, |y| next_score[[x, a, y]], |y| row[y] > 0.0);
            let mut eta = 0.0;
            if let (Some(ty), true) = (target, pi[a] > 0.0) {
                if row[ty] < 1.0 {
                    let posterior = [
                        w[0] * behavior_u[[x, 0, a]] / pi[a],
                        w[1] * behavior_u[[x, 1, a]] / pi[a],
                    ];
                    eta = max_transition_shift(&row, ty, w, posterior, delta_star);
                }
            }
            let tilted = shifted_rows(&row, target, w, eta);
            for u in 0..2 {
                transitions_u.slice_mut(s![x, u, a, ..]).assign(&Array1::from(tilted[u].clone()));
            }
        }
    }
    ConfoundedMdp::new(
        transitions_u,
        behavior_u,
        p,
        rewards.clone(),
        mdp.initial_dist().clone(),
        mdp.discount(),
    )
}

/// Smallest `(Γ, Δ)` under which the model satisfies both odds-ratio
/// bounds. `Γ` is measured against the marginal behavior policy and `Δ`
/// against the apparent marginal transitions; entries whose reference is 0
/// or 1 are skipped.
pub fn audit_sensitivity(cm: &ConfoundedMdp) -> SensitivityAudit {
    let m = cm.marginalize();
    let w = cm.weights();
    let (ns, na) = (cm.n_states(), cm.n_actions());
    let spread = |r: f64| if r >= 1.0 { r } else { 1.0 / r };
    let mut gamma = 1.0f64;
    let mut delta = 1.0f64;
    for x in 0..ns {
        for a in 0..na {
            let pb = m.behavior[[x, a]];
            for u in 0..2 {
                if w[u] == 0.0 {
                    continue;
                }
                if let Some(r) = odds_ratio(cm.behavior_u[[x, u, a]], pb) {
                    gamma = gamma.max(spread(r));
                }
                if !m.supported[[x, a]] {
                    continue;
                }
                for y in 0..ns {
                    if let Some(r) =
                        odds_ratio(cm.transitions_u[[x, u, a, y]], m.apparent_marginal[[x, a, y]])
                    {
                        delta = delta.max(spread(r));
                    }
                }
            }
        }
    }
    SensitivityAudit { gamma, delta }
}

fn argmax_where(
    n: usize,
    score: impl Fn(usize) -> f64,
    allowed: impl Fn(usize) -> bool,
) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for i in (0..n).filter(|&i| allowed(i)) {
        let s = score(i);
        if best.is_none_or(|(_, b)| s > b) {
            best = Some((i, s));
        }
    }
    best.map(|(i, _)| i)
}

/// Largest `ε` such that `π ± ε·w·d` stays inside every `Γ` odds box.
fn max_policy_shift(pi: &[f64], d: &[f64], w: [f64; 2], gamma: f64) -> f64 {
    let mut eps = f64::INFINITY;
    for (&q, &da) in pi.iter().zip(d) {
        if da == 0.0 || q <= 0.0 || q >= 1.0 {
            continue;
        }
        let (lo, hi) = odds_interval(q, gamma);
        // u = 1 moves by +w0·ε·d, u = 0 by -w1·ε·d.
        let limits = if da > 0.0 {
            [(hi - q) / (w[0] * da), (q - lo) / (w[1] * da)]
        } else {
            [(lo - q) / (w[0] * da), (q - hi) / (w[1] * da)]
        };
        for l in limits {
            eps = eps.min(l);
        }
    }
    if eps.is_finite() {
        eps.max(0.0)
    } else {
        0.0
    }
}

fn shifted_rows(row: &[f64], target: Option<usize>, w: [f64; 2], eta: f64) -> [Vec<f64>; 2] {
    let Some(ty) = target else {
        return [row.to_vec(), row.to_vec()];
    };
    let d: Vec<f64> = (0..row.len())
        .map(|y| f64::from(u8::from(y == ty)) - row[y])
        .collect();
    let mut r0: Vec<f64> = row.iter().zip(&d).map(|(p, d)| (p - w[1] * eta * d).max(0.0)).collect();
    let mut r1: Vec<f64> = row.iter().zip(&d).map(|(p, d)| (p + w[0] * eta * d).max(0.0)).collect();
    normalize(&mut r0);
    normalize(&mut r1);
    [r0, r1]
}

fn transition_spread(row: &[f64], target: usize, w: [f64; 2], posterior: [f64; 2], eta: f64) -> f64 {
    let rows = shifted_rows(row, Some(target), w, eta);
    let mut worst = 1.0f64;
    for y in 0..row.len() {
        let apparent = posterior[0] * rows[0][y] + posterior[1] * rows[1][y];
        for r in &rows {
            if let Some(ratio) = odds_ratio(r[y], apparent) {
                let s = if ratio >= 1.0 { ratio } else { 1.0 / ratio };
                worst = worst.max(s);
            }
        }
    }
    worst
}

/// Largest shift whose audited transition odds ratio stays within `delta`.
fn max_transition_shift(row: &[f64], target: usize, w: [f64; 2], posterior: [f64; 2], delta: f64) -> f64 {
    if delta <= 1.0 {
        return 0.0;
    }
    // Keep both shifted rows inside the simplex.
    let pt = row[target];
    let mut upper = 1.0 / w[0];
    if w[1] > 0.0 {
        upper = upper.min(pt / (w[1] * (1.0 - pt)));
        for (y, &q) in row.iter().enumerate() {
            if y != target && q > 0.0 {
                upper = upper.min((1.0 / q - 1.0) / w[1]);
            }
        }
    }
    let feasible = |eta: f64| transition_spread(row, target, w, posterior, eta) <= delta;
    if feasible(upper) {
        return upper;
    }
    let (mut lo, mut hi) = (0.0, upper);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if feasible(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    lo
}

fn normalize(row: &mut [f64]) {
    let s: f64 = row.iter().sum();
    if s > 0.0 {
        for v in row.iter_mut() {
            *v /= s;
        }
    }
}

pub(crate) fn renormalize_rows(mut t: Array3<f64>) -> Array3<f64> {
    for mut lane in t.lanes_mut(Axis(2)) {
        let s = lane.sum();
        if s > 0.0 && (s - 1.0).abs() <= 1e3 * PROB_TOL {
            lane.mapv_inplace(|v| v / s);
        }
    }
    t
}

fn renormalize_rows2(mut t: Array2<f64>) -> Array2<f64> {
    for mut lane in t.lanes_mut(Axis(1)) {
        let s = lane.sum();
        if s > 0.0 && (s - 1.0).abs() <= 1e3 * PROB_TOL {
            lane.mapv_inplace(|v| v / s);
        }
    }
    t
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use ndarray::array;

    /// One state, two actions, two next states. Action 0 is the confounded one
    /// from the worked example; action 1 mirrors it.
    pub(crate) fn worked_example() -> ConfoundedMdp {
        let mut t = Array4::zeros((2, 2, 2, 2));
        for a in 0..2 {
            t[[0, 1, a, 1]] = 0.8;
            t[[0, 1, a, 0]] = 0.2;
            t[[0, 0, a, 1]] = 0.2;
            t[[0, 0, a, 0]] = 0.8;
            t[[1, 0, a, 1]] = 1.0;
            t[[1, 1, a, 1]] = 1.0;
        }
        let b = array![[[0.25, 0.75], [0.75, 0.25]], [[0.5, 0.5], [0.5, 0.5]]];
        let mut r = Array3::zeros((2, 2, 2));
        r.slice_mut(s![0, .., 1]).fill(1.0);
        ConfoundedMdp::new(t, b, 0.5, r, array![1.0, 0.0], 0.9).unwrap()
    }

    #[test]
    fn worked_example_marginals() {
        let m = worked_example().marginalize();
        assert!((m.behavior[[0, 0]] - 0.5).abs() < 1e-15);
        assert!((m.true_marginal[[0, 0, 1]] - 0.5).abs() < 1e-15);
        assert!((m.apparent_marginal[[0, 0, 1]] - 0.65).abs() < 1e-15);
        // Action 1 is favored under u=0, where x'=1 is unlikely.
        assert!((m.apparent_marginal[[0, 1, 1]] - 0.35).abs() < 1e-15);
    }

    #[test]
    fn reweighting_recovers_true_marginal() {
        let cm = worked_example();
        let got = cm
            .reweighted_conditional_mean(|_, _, y| f64::from(u8::from(y == 1)), 0, 0)
            .unwrap();
        assert!((got - 0.5).abs() < 1e-15);
        let one = cm.reweighted_conditional_mean(|_, _, _| 1.0, 0, 1).unwrap();
        assert!((one - 1.0).abs() < 1e-15);
    }

    #[test]
    fn zero_behavior_probability_is_named() {
        let mut cm = worked_example();
        cm.behavior_u[[1, 1, 0]] = 0.0;
        cm.behavior_u[[1, 1, 1]] = 1.0;
        match cm.reweighted_conditional_mean(|_, _, _| 1.0, 1, 0) {
            Err(Error::ZeroBehavior { x: 1, a: 0, u: 1 }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn u_independent_policy_gives_equal_marginals() {
        let mut cm = worked_example();
        cm.behavior_u[[0, 0, 0]] = 0.5;
        cm.behavior_u[[0, 0, 1]] = 0.5;
        cm.behavior_u[[0, 1, 0]] = 0.5;
        cm.behavior_u[[0, 1, 1]] = 0.5;
        let m = cm.marginalize();
        assert_eq!(m.true_marginal, m.apparent_marginal);
    }

    #[test]
    fn u_independent_dynamics_gives_equal_marginals() {
        let mut cm = worked_example();
        for a in 0..2 {
            for u in 0..2 {
                cm.transitions_u[[0, u, a, 0]] = 0.3;
                cm.transitions_u[[0, u, a, 1]] = 0.7;
            }
        }
        let m = cm.marginalize();
        assert_eq!(m.true_marginal, m.apparent_marginal);
        assert_eq!(m.true_marginal[[0, 1, 1]], 0.7);
    }

    #[test]
    fn audit_of_worked_example() {
        let audit = audit_sensitivity(&worked_example());
        assert!((audit.gamma - 3.0).abs() < 1e-12);
        // P(1|u=1) = 0.8 against the apparent 0.65: odds 4 vs 13/7.
        let expected_delta = (0.65 / 0.35) / (0.2 / 0.8);
        assert!((audit.delta - expected_delta).abs() < 1e-12, "{}", audit.delta);
    }

    #[test]
    fn unconfounded_audit_is_one() {
        let cm = worked_example();
        let mdp = cm.marginal_mdp();
        let pi = PolicyTable::uniform(2, 2);
        let plain = ConfoundedMdp::unconfounded(&mdp, &pi, 0.3).unwrap();
        assert_eq!(audit_sensitivity(&plain), SensitivityAudit { gamma: 1.0, delta: 1.0 });
    }

    #[test]
    fn json_round_trip() {
        let cm = worked_example();
        let back = ConfoundedMdp::from_json(&cm.to_json().unwrap()).unwrap();
        assert_eq!(cm, back);
    }
}
