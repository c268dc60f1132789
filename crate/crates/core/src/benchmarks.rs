//! Four small benchmark environments with behavior and evaluation policies.
//!
//! | name            | states | actions | horizon |
//! |-----------------|--------|---------|---------|
//! | `toy`           | 3      | 2       | 5       |
//! | `ope-graph`     | 8      | 2       | 4       |
//! | `ope-mc`        | 22     | 2       | 20      |
//! | `ope-gridworld` | 16     | 4       | 8       |
//!
//! In every environment the evaluation policy is worth more than the
//! behavior policy. Construction is a pure function of the name.

use std::fmt;
use std::str::FromStr;

use ndarray::{Array1, Array2, Array3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{optimal_values, policy_value, MdpDocument, PolicyTable, TabularMdp, PROB_TOL};

/// Discount used by [`steady_state_transform`].
pub const STEADY_STATE_DISCOUNT: f64 = 0.95;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EnvName {
    Toy,
    OpeGraph,
    OpeMc,
    OpeGridworld,
}

impl EnvName {
    pub const ALL: [EnvName; 4] = [EnvName::Toy, EnvName::OpeGraph, EnvName::OpeMc, EnvName::OpeGridworld];

    pub fn as_str(self) -> &'static str {
        match self {
            EnvName::Toy => "toy",
            EnvName::OpeGraph => "ope-graph",
            EnvName::OpeMc => "ope-mc",
            EnvName::OpeGridworld => "ope-gridworld",
        }
    }
}

impl fmt::Display for EnvName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EnvName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        EnvName::ALL
            .into_iter()
            .find(|e| e.as_str() == s)
            .ok_or_else(|| Error::UnknownEnv(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkEnv {
    pub name: String,
    pub mdp: TabularMdp,
    pub pi_b: PolicyTable,
    pub pi_e: PolicyTable,
    pub horizon: usize,
}

/// JSON layout of a [`BenchmarkEnv`]: the MDP fields plus the two policies
/// and the default horizon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvDocument {
    #[serde(default)]
    pub name: Option<String>,
    #[serde(flatten)]
    pub mdp: MdpDocument,
    pub pi_b: Vec<Vec<f64>>,
    pub pi_e: Vec<Vec<f64>>,
    pub horizon: usize,
}

impl BenchmarkEnv {
    pub fn new(name: impl Into<String>, mdp: TabularMdp, pi_b: PolicyTable, pi_e: PolicyTable, horizon: usize) -> Result<Self> {
        for pi in [&pi_b, &pi_e] {
            if pi.n_states() != mdp.n_states() || pi.n_actions() != mdp.n_actions() {
                return Err(Error::Dimension("policy shape does not match the MDP".into()));
            }
        }
        Ok(Self {
            name: name.into(),
            mdp,
            pi_b,
            pi_e,
            horizon,
        })
    }

    /// `(V^{π_b}_T, V^{π_e}_T)` at the default horizon.
    pub fn reference_values(&self) -> (f64, f64) {
        let vb = policy_value(&self.mdp, &self.pi_b, self.horizon).expect("shapes checked").1;
        let ve = policy_value(&self.mdp, &self.pi_e, self.horizon).expect("shapes checked").1;
        (vb, ve)
    }

    /// States that every action maps to themselves with probability one.
    pub fn terminal_states(&self) -> Vec<usize> {
        let t = self.mdp.transitions();
        (0..self.mdp.n_states())
            .filter(|&x| (0..self.mdp.n_actions()).all(|a| (t[[x, a, x]] - 1.0).abs() <= PROB_TOL))
            .collect()
    }

    pub fn to_document(&self) -> EnvDocument {
        EnvDocument {
            name: Some(self.name.clone()),
            mdp: self.mdp.to_document(),
            pi_b: self.pi_b.to_nested(),
            pi_e: self.pi_e.to_nested(),
            horizon: self.horizon,
        }
    }

    pub fn from_document(doc: &EnvDocument) -> Result<Self> {
        Self::new(
            doc.name.clone().unwrap_or_else(|| "custom".into()),
            TabularMdp::from_document(&doc.mdp)?,
            PolicyTable::from_nested(&doc.pi_b)?,
            PolicyTable::from_nested(&doc.pi_e)?,
            doc.horizon,
        )
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.to_document())?)
    }

    pub fn from_json(json: &str) -> Result<Self> {
        Self::from_document(&serde_json::from_str(json)?)
    }
}

pub fn load_env(name: EnvName) -> BenchmarkEnv {
    match name {
        EnvName::Toy => toy(),
        EnvName::OpeGraph => graph(),
        EnvName::OpeMc => mountain_chain(),
        EnvName::OpeGridworld => gridworld(),
    }
}

/// `weight` on the action chosen per state, the rest spread uniformly.
fn mixture(best: &[usize], n_actions: usize, weight: f64) -> PolicyTable {
    let rest = (1.0 - weight) / (n_actions - 1) as f64;
    let probs = Array2::from_shape_fn((best.len(), n_actions), |(x, a)| if a == best[x] { weight } else { rest });
    PolicyTable::new(probs).expect("valid mixture")
}

fn greedy_actions(mdp: &TabularMdp, horizon: usize) -> Vec<usize> {
    let (_, q) = optimal_values(mdp, horizon);
    q.q.outer_iter()
        .map(|row| (0..row.len()).fold(0, |b, a| if row[a] > row[b] + 1e-12 { a } else { b }))
        .collect()
}

fn delta(n: usize, i: usize) -> Array1<f64> {
    let mut v = Array1::zeros(n);
    v[i] = 1.0;
    v
}

/// A three-state problem: from every state, the safe action reaches the
/// rewarding state more often and the penalized state less often.
fn toy() -> BenchmarkEnv {
    let rows = [[0.35, 0.45, 0.20], [0.25, 0.35, 0.40]];
    let reward_into = [0.0, 0.36, -0.24];
    let t = Array3::from_shape_fn((3, 2, 3), |(_, a, y)| rows[a][y]);
    let r = Array3::from_shape_fn((3, 2, 3), |(_, _, y)| reward_into[y]);
    let mdp = TabularMdp::new(t, r, delta(3, 0), 1.0).expect("valid toy");
    let pi_b = mixture(&[0, 0, 0], 2, 0.4);
    let pi_e = mixture(&[0, 0, 0], 2, 0.85);
    BenchmarkEnv::new("toy", mdp, pi_b, pi_e, 5).expect("valid toy")
}

/// A layered graph `0 → {1,2} → {3,4} → {5,6} → 7`. Action 0 aims at the odd
/// successor and action 1 at the even one, each slipping with probability
/// `SLIP`. Leaving an odd state pays 1/3 and leaving an even state costs
/// 1/3, so the reward for a good landing arrives one step later. State 7 is
/// absorbing.
fn graph() -> BenchmarkEnv {
    const SLIP: f64 = 0.15;
    let n = 8;
    let mut t = Array3::zeros((n, 2, n));
    let mut r = Array3::zeros((n, 2, n));
    let children = |x: usize| -> Option<(usize, usize)> {
        match x {
            0 => Some((1, 2)),
            1 | 2 => Some((3, 4)),
            3 | 4 => Some((5, 6)),
            _ => None,
        }
    };
    for x in 0..n {
        let leaving = match x {
            0 | 7 => 0.0,
            _ if x % 2 == 1 => 1.0 / 3.0,
            _ => -1.0 / 3.0,
        };
        for a in 0..2 {
            match children(x) {
                Some((odd, even)) => {
                    let (aim, miss) = if a == 0 { (odd, even) } else { (even, odd) };
                    t[[x, a, aim]] = 1.0 - SLIP;
                    t[[x, a, miss]] = SLIP;
                }
                None => t[[x, a, 7]] = 1.0,
            }
            for y in 0..n {
                r[[x, a, y]] = leaving;
            }
        }
    }
    let mdp = TabularMdp::new(t, r, delta(n, 0), 1.0).expect("valid graph");
    let pi_b = mixture(&[0; 8], 2, 0.4);
    let pi_e = mixture(&[0; 8], 2, 0.95);
    BenchmarkEnv::new("ope-graph", mdp, pi_b, pi_e, 4).expect("valid graph")
}

/// A discretized hill climb: positions `0..=20` and an absorbing goal 21.
/// Action 1 pushes right and action 0 left; pushes succeed less often on
/// the steep section near the top, and the car stalls in place with
/// probability `STALL`. Every step costs 1 except the one that
/// reaches the goal.
fn mountain_chain() -> BenchmarkEnv {
    const GOAL: usize = 21;
    const START: usize = 14;
    const STALL: f64 = 0.1;
    let n = GOAL + 1;
    let mut t = Array3::zeros((n, 2, n));
    let mut r = Array3::zeros((n, 2, n));
    for x in 0..GOAL {
        let success = if (14..18).contains(&x) { 0.65 } else { 0.9 };
        for a in 0..2 {
            let (right, left) = if a == 1 { (success, 1.0 - success) } else { (1.0 - success, success) };
            t[[x, a, x + 1]] += (1.0 - STALL) * right;
            t[[x, a, x.saturating_sub(1)]] += (1.0 - STALL) * left;
            t[[x, a, x]] += STALL;
            for y in 0..GOAL {
                r[[x, a, y]] = -1.0;
            }
        }
    }
    for a in 0..2 {
        t[[GOAL, a, GOAL]] = 1.0;
    }
    let mdp = TabularMdp::new(t, r, delta(n, START), 1.0).expect("valid chain");
    let pi_b = mixture(&[1; GOAL + 1], 2, 0.65);
    let pi_e = mixture(&[1; GOAL + 1], 2, 0.85);
    BenchmarkEnv::new("ope-mc", mdp, pi_b, pi_e, 20).expect("valid chain")
}

/// A 4×4 grid starting in the top-left corner with the goal in the bottom
/// right and holes at (1,2) and (2,1). Moves go in the intended direction
/// with probability 0.8 and otherwise in one of the other three; moves into
/// a wall stay put. Each step costs 0.05, entering the goal pays 1 and
/// entering a hole costs 0.5. Goal and holes are absorbing.
fn gridworld() -> BenchmarkEnv {
    const SIDE: usize = 4;
    const GOAL: usize = 15;
    const HOLES: [usize; 2] = [6, 9];
    const MOVES: [(i64, i64); 4] = [(-1, 0), (1, 0), (0, -1), (0, 1)];
    let n = SIDE * SIDE;
    let mut t = Array3::zeros((n, 4, n));
    let mut r = Array3::zeros((n, 4, n));
    let step = |x: usize, m: usize| -> usize {
        let (row, col) = ((x / SIDE) as i64, (x % SIDE) as i64);
        let (nr, nc) = (row + MOVES[m].0, col + MOVES[m].1);
        if (0..SIDE as i64).contains(&nr) && (0..SIDE as i64).contains(&nc) {
            (nr as usize) * SIDE + nc as usize
        } else {
            x
        }
    };
    for x in 0..n {
        let absorbing = x == GOAL || HOLES.contains(&x);
        for a in 0..4 {
            if absorbing {
                t[[x, a, x]] = 1.0;
                continue;
            }
            for m in 0..4 {
                let p = if m == a { 0.8 } else { 0.2 / 3.0 };
                t[[x, a, step(x, m)]] += p;
            }
            for y in 0..n {
                r[[x, a, y]] = -0.05
                    + if y == GOAL {
                        1.0
                    } else if HOLES.contains(&y) {
                        -0.5
                    } else {
                        0.0
                    };
            }
        }
    }
    let mdp = TabularMdp::new(t, r, delta(n, 0), 1.0).expect("valid grid");
    let best = greedy_actions(&mdp, 8);
    let pi_b = mixture(&best, 4, 0.5);
    let pi_e = mixture(&best, 4, 0.7);
    BenchmarkEnv::new("ope-gridworld", mdp, pi_b, pi_e, 8).expect("valid grid")
}

/// Removes absorbing states so the chain keeps moving, and makes rewards
/// depend on the current state only.
///
/// Probability mass that flowed into a removed state is spread over the
/// remaining destinations of the same row in proportion to their
/// probability; a row left with no mass restarts from the initial
/// distribution restricted to the remaining states. The reward of a state is
/// its expected one-step reward under the evaluation policy, and the
/// discount becomes [`STEADY_STATE_DISCOUNT`]. Environments without
/// absorbing states are returned unchanged.
pub fn steady_state_transform(env: &BenchmarkEnv) -> BenchmarkEnv {
    let terminals = env.terminal_states();
    if terminals.is_empty() {
        return env.clone();
    }
    let keep: Vec<usize> = (0..env.mdp.n_states()).filter(|x| !terminals.contains(x)).collect();
    let (n, na) = (keep.len(), env.mdp.n_actions());
    let t = env.mdp.transitions();
    let r = env.mdp.rewards();
    let chi = env.mdp.initial_dist();
    let chi_kept: Vec<f64> = keep.iter().map(|&x| chi[x]).collect();
    let chi_total: f64 = chi_kept.iter().sum();
    let restart: Vec<f64> = if chi_total > 0.0 {
        chi_kept.iter().map(|c| c / chi_total).collect()
    } else {
        vec![1.0 / n as f64; n]
    };
    let mut nt = Array3::zeros((n, na, n));
    for (i, &x) in keep.iter().enumerate() {
        for a in 0..na {
            let row: Vec<f64> = keep.iter().map(|&y| t[[x, a, y]]).collect();
            let total: f64 = row.iter().sum();
            for j in 0..n {
                nt[[i, a, j]] = if total > 0.0 { row[j] / total } else { restart[j] };
            }
        }
    }
    let pi_e = env.pi_e.probs();
    let state_reward: Vec<f64> = keep
        .iter()
        .map(|&x| {
            (0..na)
                .map(|a| {
                    pi_e[[x, a]]
                        * (0..env.mdp.n_states()).map(|y| t[[x, a, y]] * r[[x, a, y]]).sum::<f64>()
                })
                .sum()
        })
        .collect();
    let nr = Array3::from_shape_fn((n, na, n), |(i, _, _)| state_reward[i]);
    let mdp = TabularMdp::new(nt, nr, Array1::from(restart), STEADY_STATE_DISCOUNT)
        .expect("renormalized rows");
    let rows = |p: &PolicyTable| {
        PolicyTable::new(Array2::from_shape_fn((n, na), |(i, a)| p.probs()[[keep[i], a]])).expect("rows kept")
    };
    BenchmarkEnv {
        name: format!("{}-steady", env.name),
        mdp,
        pi_b: rows(&env.pi_b),
        pi_e: rows(&env.pi_e),
        horizon: env.horizon,
    }
}
