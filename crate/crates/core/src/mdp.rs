//! Tabular MDPs, stationary policies and exact finite-horizon evaluation.
//!
//! Rewards are deterministic functions `R(x, a, x')`. Terminal states are
//! ordinary absorbing states with zero reward.

use ndarray::{Array1, Array2, Array3, ArrayView1, ArrayView2, ArrayView3, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Absolute tolerance used when validating probability rows at construction.
pub const PROB_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct TabularMdp {
    transitions: Array3<f64>,
    rewards: Array3<f64>,
    initial_dist: Array1<f64>,
    discount: f64,
}

impl TabularMdp {
    pub fn new(
        transitions: Array3<f64>,
        rewards: Array3<f64>,
        initial_dist: Array1<f64>,
        discount: f64,
    ) -> Result<Self> {
        let (ns, na, ns2) = transitions.dim();
        if ns == 0 || na == 0 {
            return Err(Error::Dimension("MDP needs at least one state and one action".into()));
        }
        if ns2 != ns {
            return Err(Error::Dimension(format!(
                "transitions have shape [{ns}, {na}, {ns2}], expected [{ns}, {na}, {ns}]"
            )));
        }
        if rewards.dim() != transitions.dim() {
            return Err(Error::Dimension(format!(
                "rewards have shape {:?}, transitions {:?}",
                rewards.dim(),
                transitions.dim()
            )));
        }
        if initial_dist.len() != ns {
            return Err(Error::Dimension(format!(
                "initial distribution has {} entries for {ns} states",
                initial_dist.len()
            )));
        }
        if !(0.0..=1.0).contains(&discount) {
            return Err(Error::Parameter(format!("discount {discount} outside [0, 1]")));
        }
        for x in 0..ns {
            for a in 0..na {
                check_distribution(transitions.slice(ndarray::s![x, a, ..]), || {
                    format!("transitions[{x}][{a}]")
                })?;
            }
        }
        check_distribution(initial_dist.view(), || "initial distribution".to_string())?;
        if let Some(r) = rewards.iter().find(|r| !r.is_finite()) {
            return Err(Error::Parameter(format!("non-finite reward {r}")));
        }
        Ok(Self {
            transitions,
            rewards,
            initial_dist,
            discount,
        })
    }

    pub fn n_states(&self) -> usize {
        self.transitions.dim().0
    }

    pub fn n_actions(&self) -> usize {
        self.transitions.dim().1
    }

    pub fn transitions(&self) -> &Array3<f64> {
        &self.transitions
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

    /// Same dynamics with a different discount factor.
    pub fn with_discount(&self, discount: f64) -> Result<Self> {
        Self::new(
            self.transitions.clone(),
            self.rewards.clone(),
            self.initial_dist.clone(),
            discount,
        )
    }

    pub fn to_document(&self) -> MdpDocument {
        MdpDocument {
            n_states: self.n_states(),
            n_actions: self.n_actions(),
            gamma: self.discount,
            initial_dist: self.initial_dist.to_vec(),
            transitions: nested3(&self.transitions),
            rewards: nested3(&self.rewards),
        }
    }

    pub fn from_document(doc: &MdpDocument) -> Result<Self> {
        let shape = (doc.n_states, doc.n_actions, doc.n_states);
        let transitions = flat3(&doc.transitions, shape, "transitions")?;
        let rewards = flat3(&doc.rewards, shape, "rewards")?;
        Self::new(
            transitions,
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

/// JSON layout of a [`TabularMdp`]; tensors nest as `[x][a][x']`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MdpDocument {
    pub n_states: usize,
    pub n_actions: usize,
    pub gamma: f64,
    pub initial_dist: Vec<f64>,
    pub transitions: Vec<Vec<Vec<f64>>>,
    pub rewards: Vec<Vec<Vec<f64>>>,
}

/// A stationary policy `π(a|x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyTable {
    probs: Array2<f64>,
}

impl PolicyTable {
    pub fn new(probs: Array2<f64>) -> Result<Self> {
        if probs.nrows() == 0 || probs.ncols() == 0 {
            return Err(Error::Dimension("empty policy table".into()));
        }
        for (x, row) in probs.axis_iter(Axis(0)).enumerate() {
            check_distribution(row, || format!("policy row {x}"))?;
        }
        Ok(Self { probs })
    }

    pub fn uniform(n_states: usize, n_actions: usize) -> Self {
        Self {
            probs: Array2::from_elem((n_states, n_actions), 1.0 / n_actions as f64),
        }
    }

    pub fn deterministic(actions: &[usize], n_actions: usize) -> Result<Self> {
        let mut probs = Array2::zeros((actions.len(), n_actions));
        for (x, &a) in actions.iter().enumerate() {
            if a >= n_actions {
                return Err(Error::Dimension(format!("action {a} out of range at state {x}")));
            }
            probs[[x, a]] = 1.0;
        }
        Self::new(probs)
    }

    pub fn probs(&self) -> &Array2<f64> {
        &self.probs
    }

    pub fn n_states(&self) -> usize {
        self.probs.nrows()
    }

    pub fn n_actions(&self) -> usize {
        self.probs.ncols()
    }

    pub fn row(&self, x: usize) -> ArrayView1<'_, f64> {
        self.probs.row(x)
    }

    pub fn to_nested(&self) -> Vec<Vec<f64>> {
        self.probs.outer_iter().map(|r| r.to_vec()).collect()
    }

    pub fn from_nested(rows: &[Vec<f64>]) -> Result<Self> {
        Self::new(flat2(rows, "policy")?)
    }
}

/// State values `V_T(x)` at a given horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct StateValues {
    pub v: Array1<f64>,
    pub horizon: usize,
}

impl StateValues {
    pub fn zeros(n_states: usize) -> Self {
        Self {
            v: Array1::zeros(n_states),
            horizon: 0,
        }
    }

    /// `χ · V`.
    pub fn expected(&self, initial_dist: &Array1<f64>) -> f64 {
        initial_dist.dot(&self.v)
    }
}

/// State-action values `Q_T(x, a)` at a given horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionValues {
    pub q: Array2<f64>,
    pub horizon: usize,
}

impl ActionValues {
    pub fn zeros(n_states: usize, n_actions: usize) -> Self {
        Self {
            q: Array2::zeros((n_states, n_actions)),
            horizon: 0,
        }
    }

    /// `V(x) = Q(x, π)`.
    pub fn under_policy(&self, policy: &PolicyTable) -> StateValues {
        StateValues {
            v: mix(self.q.view(), policy.probs().view()),
            horizon: self.horizon,
        }
    }
}

/// One Bellman evaluation backup:
/// `Q(x,a) = Σ_{x'} P(x'|x,a) (R(x,a,x') + γ v_prev(x'))`.
pub fn bellman_apply(mdp: &TabularMdp, v_prev: &StateValues) -> Result<ActionValues> {
    if v_prev.v.len() != mdp.n_states() {
        return Err(Error::Dimension(format!(
            "value table has {} states, MDP has {}",
            v_prev.v.len(),
            mdp.n_states()
        )));
    }
    Ok(ActionValues {
        q: backup(
            mdp.transitions.view(),
            mdp.rewards.view(),
            mdp.discount,
            v_prev.v.view(),
        ),
        horizon: v_prev.horizon + 1,
    })
}

/// Exact `T`-step value of `policy`; returns the state values and `χ · V_T`.
pub fn policy_value(
    mdp: &TabularMdp,
    policy: &PolicyTable,
    horizon: usize,
) -> Result<(StateValues, f64)> {
    check_policy_shape(mdp, policy)?;
    let mut v = StateValues::zeros(mdp.n_states());
    for _ in 0..horizon {
        v = bellman_apply(mdp, &v)?.under_policy(policy);
    }
    let value = v.expected(&mdp.initial_dist);
    Ok((v, value))
}

/// Finite-horizon optimal values by backward induction.
pub fn optimal_values(mdp: &TabularMdp, horizon: usize) -> (StateValues, ActionValues) {
    let mut v = StateValues::zeros(mdp.n_states());
    let mut q = ActionValues::zeros(mdp.n_states(), mdp.n_actions());
    for _ in 0..horizon {
        q = bellman_apply(mdp, &v).expect("shapes agree by construction");
        v = StateValues {
            v: q.q.map_axis(Axis(1), |row| row.iter().copied().fold(f64::NEG_INFINITY, f64::max)),
            horizon: q.horizon,
        };
    }
    (v, q)
}

pub(crate) fn check_policy_shape(mdp: &TabularMdp, policy: &PolicyTable) -> Result<()> {
    if policy.n_states() != mdp.n_states() || policy.n_actions() != mdp.n_actions() {
        return Err(Error::Dimension(format!(
            "policy is [{}, {}], MDP is [{}, {}]",
            policy.n_states(),
            policy.n_actions(),
            mdp.n_states(),
            mdp.n_actions()
        )));
    }
    Ok(())
}

/// Raw backup on arbitrary transition tensors (rows may be all-zero for
/// unsupported pairs, in which case the entry is zero).
pub(crate) fn backup(
    transitions: ArrayView3<f64>,
    rewards: ArrayView3<f64>,
    discount: f64,
    v: ArrayView1<f64>,
) -> Array2<f64> {
    let (ns, na, _) = transitions.dim();
    let mut q = Array2::zeros((ns, na));
    for x in 0..ns {
        for a in 0..na {
            let mut acc = 0.0;
            for (y, &p) in transitions.slice(ndarray::s![x, a, ..]).iter().enumerate() {
                if p != 0.0 {
                    acc += p * (rewards[[x, a, y]] + discount * v[y]);
                }
            }
            q[[x, a]] = acc;
        }
    }
    q
}

pub(crate) fn mix(q: ArrayView2<f64>, policy: ArrayView2<f64>) -> Array1<f64> {
    (&q * &policy).sum_axis(Axis(1))
}

pub(crate) fn check_distribution(
    row: ArrayView1<f64>,
    what: impl Fn() -> String,
) -> Result<()> {
    if let Some(p) = row.iter().find(|p| !(p.is_finite() && **p >= 0.0 && **p <= 1.0)) {
        return Err(Error::Probability(format!("{} has entry {p}", what())));
    }
    let sum: f64 = row.sum();
    if (sum - 1.0).abs() > PROB_TOL {
        return Err(Error::Probability(format!("{} sums to {sum}", what())));
    }
    Ok(())
}

pub(crate) fn nested3(t: &Array3<f64>) -> Vec<Vec<Vec<f64>>> {
    t.outer_iter()
        .map(|m| m.outer_iter().map(|r| r.to_vec()).collect())
        .collect()
}

pub(crate) fn flat3(
    nested: &[Vec<Vec<f64>>],
    shape: (usize, usize, usize),
    what: &str,
) -> Result<Array3<f64>> {
    let mut out = Array3::zeros(shape);
    if nested.len() != shape.0 {
        return Err(Error::Dimension(format!("{what}: expected {} rows", shape.0)));
    }
    for (i, m) in nested.iter().enumerate() {
        if m.len() != shape.1 {
            return Err(Error::Dimension(format!("{what}[{i}]: expected {} entries", shape.1)));
        }
        for (j, r) in m.iter().enumerate() {
            if r.len() != shape.2 {
                return Err(Error::Dimension(format!(
                    "{what}[{i}][{j}]: expected {} entries",
                    shape.2
                )));
            }
            for (k, v) in r.iter().enumerate() {
                out[[i, j, k]] = *v;
            }
        }
    }
    Ok(out)
}

pub(crate) fn flat2(rows: &[Vec<f64>], what: &str) -> Result<Array2<f64>> {
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::Dimension(format!("{what}: ragged rows")));
    }
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    Array2::from_shape_vec((rows.len(), ncols), flat).map_err(|e| Error::Dimension(e.to_string()))
}
