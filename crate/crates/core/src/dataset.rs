//! Logged trajectories and the empirical marginal model estimated from them.
//!
//! Simulation uses ChaCha8 seeded with `seed`; trajectory `i` draws from
//! stream `i` of that generator, so datasets are reproducible across
//! platforms and independent of thread scheduling.

use std::io::{Read, Write};

use ndarray::{s, Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::confounded::ConfoundedMdp;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Step {
    pub x: usize,
    pub a: usize,
    pub x_next: usize,
    pub r: f64,
}

/// One logged episode. The unobserved state is not recorded.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trajectory {
    pub steps: Vec<Step>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelMode {
    Sampled,
    Population,
}

/// Estimated marginal behavior policy and transitions.
///
/// Rows of `pi_hat` for unvisited states and rows of `p_hat` for unsupported
/// pairs are zero; `supported` marks the pairs with data.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalModel {
    pub pi_hat: Array2<f64>,
    pub p_hat: Array3<f64>,
    pub counts: Option<Array2<u64>>,
    pub supported: Array2<bool>,
    pub mode: ModelMode,
}

impl EmpiricalModel {
    pub fn n_states(&self) -> usize {
        self.pi_hat.nrows()
    }

    pub fn n_actions(&self) -> usize {
        self.pi_hat.ncols()
    }
}

pub fn simulate(cm: &ConfoundedMdp, n_trajectories: usize, horizon: usize, seed: u64) -> Vec<Trajectory> {
    simulate_with_confounders(cm, n_trajectories, horizon, seed).0
}

/// Like [`simulate`], additionally returning the unobserved `u_t` of every
/// step. Intended for test oracles only.
pub fn simulate_with_confounders(
    cm: &ConfoundedMdp,
    n_trajectories: usize,
    horizon: usize,
    seed: u64,
) -> (Vec<Trajectory>, Vec<Vec<u8>>) {
    (0..n_trajectories)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            rollout(cm, horizon, &mut rng)
        })
        .unzip()
}

fn rollout(cm: &ConfoundedMdp, horizon: usize, rng: &mut ChaCha8Rng) -> (Trajectory, Vec<u8>) {
    let mut steps = Vec::with_capacity(horizon);
    let mut us = Vec::with_capacity(horizon);
    let mut x = sample(cm.initial_dist().as_slice().expect("contiguous"), rng);
    for _ in 0..horizon {
        let u = usize::from(rng.gen::<f64>() < cm.p_u());
        let a = sample(
            cm.behavior_u().slice(s![x, u, ..]).as_slice().expect("contiguous"),
            rng,
        );
        let x_next = sample(
            cm.transitions_u().slice(s![x, u, a, ..]).as_slice().expect("contiguous"),
            rng,
        );
        steps.push(Step {
            x,
            a,
            x_next,
            r: cm.rewards()[[x, a, x_next]],
        });
        us.push(u as u8);
        x = x_next;
    }
    (Trajectory { steps }, us)
}

/// Inverse-CDF draw; never returns a zero-probability index.
fn sample(probs: &[f64], rng: &mut ChaCha8Rng) -> usize {
    let draw: f64 = rng.gen();
    let mut acc = 0.0;
    let mut last = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p <= 0.0 {
            continue;
        }
        acc += p;
        last = i;
        if draw < acc {
            return i;
        }
    }
    last
}

/// Count-based estimates `π̂(a|x) = N(x,a)/N(x)` and
/// `P̂(x'|x,a) = N(x,a,x')/N(x,a)`.
pub fn estimate(data: &[Trajectory], n_states: usize, n_actions: usize) -> Result<EmpiricalModel> {
    if data.iter().all(|t| t.steps.is_empty()) {
        return Err(Error::Malformed("no transitions to estimate from".into()));
    }
    let mut pair = Array2::<u64>::zeros((n_states, n_actions));
    let mut triple = Array3::<u64>::zeros((n_states, n_actions, n_states));
    for step in data.iter().flat_map(|t| &t.steps) {
        if step.x >= n_states || step.x_next >= n_states || step.a >= n_actions {
            return Err(Error::Dimension(format!(
                "step ({}, {}, {}) outside [{n_states}] x [{n_actions}]",
                step.x, step.a, step.x_next
            )));
        }
        pair[[step.x, step.a]] += 1;
        triple[[step.x, step.a, step.x_next]] += 1;
    }
    let mut pi_hat = Array2::zeros((n_states, n_actions));
    let mut p_hat = Array3::zeros((n_states, n_actions, n_states));
    for x in 0..n_states {
        let n_x: u64 = pair.row(x).sum();
        for a in 0..n_actions {
            let n_xa = pair[[x, a]];
            if n_xa == 0 {
                continue;
            }
            pi_hat[[x, a]] = n_xa as f64 / n_x as f64;
            for y in 0..n_states {
                p_hat[[x, a, y]] = triple[[x, a, y]] as f64 / n_xa as f64;
            }
        }
    }
    Ok(EmpiricalModel {
        pi_hat,
        p_hat,
        supported: pair.mapv(|n| n > 0),
        counts: Some(pair),
        mode: ModelMode::Sampled,
    })
}

/// The infinite-data limit of [`estimate`]: the marginal behavior policy and
/// the apparent marginal transitions, exactly.
pub fn population_model(cm: &ConfoundedMdp) -> EmpiricalModel {
    let m = cm.marginalize();
    EmpiricalModel {
        pi_hat: m.behavior,
        p_hat: m.apparent_marginal,
        counts: None,
        supported: m.supported,
        mode: ModelMode::Population,
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct CsvRow {
    traj_id: usize,
    t: usize,
    x: usize,
    a: usize,
    x_next: usize,
    r: f64,
}

/// Writes `traj_id,t,x,a,x_next,r`, one row per step.
pub fn write_csv<W: Write>(data: &[Trajectory], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for (traj_id, traj) in data.iter().enumerate() {
        for (t, s) in traj.steps.iter().enumerate() {
            w.serialize(CsvRow {
                traj_id,
                t,
                x: s.x,
                a: s.a,
                x_next: s.x_next,
                r: s.r,
            })?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv<R: Read>(reader: R) -> Result<Vec<Trajectory>> {
    let mut rdr = csv::Reader::from_reader(reader);
    let mut out: Vec<Trajectory> = Vec::new();
    for row in rdr.deserialize::<CsvRow>() {
        let row = row?;
        if row.traj_id >= out.len() {
            out.resize_with(row.traj_id + 1, Trajectory::default);
        }
        let traj = &mut out[row.traj_id];
        if row.t != traj.steps.len() {
            return Err(Error::Malformed(format!(
                "trajectory {} has step {} out of order",
                row.traj_id, row.t
            )));
        }
        traj.steps.push(Step {
            x: row.x,
            a: row.a,
            x_next: row.x_next,
            r: row.r,
        });
    }
    Ok(out)
}
