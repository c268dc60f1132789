#![allow(dead_code)]

use confope::confounded::ConfoundedMdp;
use confope::lp::BoxEqualityLp;
use confope::mdp::PolicyTable;
use confope::robust::StateUncertaintyProblem;
use confope::sensitivity::{odds_interval, SensitivityParams};
use ndarray::{Array1, Array3, Array4};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Random probability vector with entries bounded away from zero.
pub fn simplex(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..n).map(|_| rng.gen_range(0.05..1.0)).collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / total).collect()
}

/// Random probability vector that may contain zeros.
pub fn sparse_simplex(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    loop {
        let raw: Vec<f64> = (0..n)
            .map(|_| if rng.gen_bool(0.3) { 0.0 } else { rng.gen_range(0.05..1.0) })
            .collect();
        let total: f64 = raw.iter().sum();
        if total > 0.0 {
            return raw.into_iter().map(|v| v / total).collect();
        }
    }
}

pub struct RandomModel {
    pub cm: ConfoundedMdp,
    pub pi_e: PolicyTable,
}

/// A random confounded MDP with fully supported behavior policies. Rows of
/// `P(·|x,u,a)` may contain zeros when `sparse` is set.
pub fn random_model(rng: &mut ChaCha8Rng, ns: usize, na: usize, sparse: bool) -> RandomModel {
    let mut transitions = Array4::zeros((ns, 2, na, ns));
    let mut behavior = Array3::zeros((ns, 2, na));
    for x in 0..ns {
        for u in 0..2 {
            for (a, v) in simplex(rng, na).into_iter().enumerate() {
                behavior[[x, u, a]] = v;
            }
            for a in 0..na {
                let row = if sparse { sparse_simplex(rng, ns) } else { simplex(rng, ns) };
                for (y, v) in row.into_iter().enumerate() {
                    transitions[[x, u, a, y]] = v;
                }
            }
        }
    }
    let rewards = Array3::from_shape_fn((ns, na, ns), |_| rng.gen_range(-1.0..1.0));
    let initial = Array1::from(simplex(rng, ns));
    let discount = if rng.gen_bool(0.5) { 1.0 } else { 0.9 };
    let p = rng.gen_range(0.15..0.85);
    let cm = ConfoundedMdp::new(transitions, behavior, p, rewards, initial, discount).expect("valid model");
    let rows: Vec<Vec<f64>> = (0..ns).map(|_| simplex(rng, na)).collect();
    let pi_e = PolicyTable::from_nested(&rows).expect("valid policy");
    RandomModel { cm, pi_e }
}

/// Minimum of the per-state robust objective on a two-state, two-action
/// instance by exhaustive search over `π_b(a=0|x,u=0)` and `P(x'=1|x,u=0,a)`
/// at resolution `step`; the `u = 1` quantities follow from the observable
/// implications.
pub fn grid_oracle(prob: &StateUncertaintyProblem, step: f64) -> f64 {
    let [w0, w1] = prob.params.confounder_weights();
    let (g, d) = (prob.params.gamma, prob.params.delta);
    let inside = |v: f64, (lo, hi): (f64, f64)| v >= lo - 1e-12 && v <= hi + 1e-12;
    let grid = |(lo, hi): (f64, f64)| {
        let n = ((hi - lo) / step).ceil().max(1.0) as usize;
        (0..=n).map(move |i| lo + (hi - lo) * i as f64 / n as f64)
    };
    let per_action = |a: usize, s: f64| -> f64 {
        let ph = prob.pi_hat[a];
        let s1 = (ph - w0 * s) / w1;
        if !inside(s, odds_interval(ph, g)) || !inside(s1, odds_interval(ph, g)) {
            return f64::INFINITY;
        }
        let q_hat = prob.p_hat[a][1];
        let y = &prob.continuation[a];
        grid(odds_interval(q_hat, d))
            .filter_map(|q0| {
                let q1 = (ph * q_hat - w0 * s * q0) / (w1 * s1);
                inside(q1, odds_interval(q_hat, d))
                    .then(|| w0 * ((1.0 - q0) * y[0] + q0 * y[1]) + w1 * ((1.0 - q1) * y[0] + q1 * y[1]))
            })
            .fold(f64::INFINITY, f64::min)
    };
    grid(odds_interval(prob.pi_hat[0], g))
        .map(|s| prob.pi_e[0] * per_action(0, s) + prob.pi_e[1] * per_action(1, 1.0 - s))
        .fold(f64::INFINITY, f64::min)
}

pub fn random_two_by_two(rng: &mut ChaCha8Rng) -> StateUncertaintyProblem {
    let pi = rng.gen_range(0.1..0.9);
    let e = rng.gen_range(0.0..1.0);
    let q: [f64; 2] = [rng.gen_range(0.05..0.95), rng.gen_range(0.05..0.95)];
    StateUncertaintyProblem {
        pi_hat: vec![pi, 1.0 - pi],
        p_hat: q.iter().map(|&q| vec![1.0 - q, q]).collect(),
        params: SensitivityParams::new(rng.gen_range(1.0..6.0), rng.gen_range(1.0..6.0), rng.gen_range(0.1..0.9))
            .expect("valid parameters"),
        continuation: (0..2)
            .map(|_| vec![rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)])
            .collect(),
        pi_e: vec![e, 1.0 - e],
    }
}

/// Random bounded LP with one or two equality rows; feasible unless
/// `infeasible` is set, in which case the first right-hand side is pushed
/// past what the box allows.
pub fn random_lp(rng: &mut ChaCha8Rng, infeasible: bool) -> BoxEqualityLp {
    let n = rng.gen_range(2..=8);
    let m = rng.gen_range(1..=2);
    let lo: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let hi: Vec<f64> = lo.iter().map(|&l| l + rng.gen_range(0.0..2.0)).collect();
    let c: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let a: Vec<Vec<f64>> = (0..m)
        .map(|_| (0..n).map(|_| rng.gen_range(0.0..1.0)).collect())
        .collect();
    let interior: Vec<f64> = lo.iter().zip(&hi).map(|(&l, &h)| rng.gen_range(l..=h)).collect();
    let mut b: Vec<f64> = a
        .iter()
        .map(|row| row.iter().zip(&interior).map(|(r, w)| r * w).sum())
        .collect();
    if infeasible {
        let max: f64 = a[0].iter().zip(&hi).zip(&lo).map(|((r, h), l)| (r * h).max(r * l)).sum();
        b[0] = max + 0.5;
    }
    BoxEqualityLp { c, lo, hi, a, b }
}
