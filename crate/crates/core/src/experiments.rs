//! Experiment protocols producing [`BoundResult`] rows.
//!
//! Population mode (the default) feeds every bound the exact marginal model
//! of the data-generating process; sampled mode simulates a dataset with a
//! fixed seed and estimates the model from counts. Output rows are ordered
//! by grid index regardless of how points are scheduled, so repeated runs
//! with identical inputs write identical CSV.

use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::Deserialize;

use crate::benchmarks::{steady_state_transform, BenchmarkEnv};
use crate::confounded::{audit_sensitivity, inject_confounding, ConfoundedMdp, TiltSignal};
use crate::dataset::{estimate, population_model, simulate, EmpiricalModel};
use crate::error::{Error, Result};
use crate::fqe::{
    behavior_value, confounded_fqe, estimated_behavior, naive_bound, nominal_fqe, nominal_step, EvalProblem,
};
use crate::mdp::StateValues;
use crate::robust::{robust_value_iteration, single_step_bound, single_step_bound_with, tightness_check};
use crate::sensitivity::SensitivityParams;

pub const CSV_HEADER: [&str; 11] = [
    "env",
    "method",
    "gamma",
    "delta",
    "p",
    "horizon",
    "bound",
    "nominal_value",
    "behavior_value",
    "runtime_ms",
    "seed",
];

pub const DEFAULT_GAMMAS: [f64; 14] = [1.0, 1.1, 1.5, 2.0, 2.5, 3.0, 3.5, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0, 10.0];
pub const DEFAULT_DELTAS: [f64; 5] = [1.1, 1.5, 2.0, 4.0, 10.0];
/// Stand-in for an unrestricted transition odds ratio.
pub const UNRESTRICTED_DELTA: f64 = 1e6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    Fqe,
    Naive,
    Robust,
    SingleStep,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Fqe => "fqe",
            Method::Naive => "naive",
            Method::Robust => "robust",
            Method::SingleStep => "single-step",
        }
    }

    /// Whether the method uses `Δ`.
    pub fn uses_delta(self) -> bool {
        matches!(self, Method::Robust | Method::SingleStep)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [Method::Fqe, Method::Naive, Method::Robust, Method::SingleStep]
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::Parameter(format!("unknown method {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DataMode {
    Population,
    Sampled { n_trajectories: usize, seed: u64 },
}

/// Confounding injected into the data-generating process.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Confounding {
    pub gamma: f64,
    pub delta: f64,
    pub signal: TiltSignal,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    pub env: BenchmarkEnv,
    pub method: Method,
    pub gammas: Vec<f64>,
    pub deltas: Vec<f64>,
    pub p: f64,
    pub horizon: usize,
    pub data: DataMode,
    pub confounding: Option<Confounding>,
    /// Record wall-clock time per point. Off by default so output is
    /// reproducible byte for byte.
    pub timing: bool,
}

impl SweepSpec {
    pub fn new(env: BenchmarkEnv, method: Method) -> Self {
        let horizon = env.horizon;
        Self {
            env,
            method,
            gammas: DEFAULT_GAMMAS.to_vec(),
            deltas: DEFAULT_DELTAS.to_vec(),
            p: 0.5,
            horizon,
            data: DataMode::Population,
            confounding: None,
            timing: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.gammas.is_empty() || self.deltas.is_empty() {
            return Err(Error::Parameter("Γ and Δ lists must be nonempty".into()));
        }
        for &g in &self.gammas {
            SensitivityParams::new(g, 1.0, self.p)?;
        }
        for &d in &self.deltas {
            SensitivityParams::new(1.0, d, self.p)?;
        }
        if self.horizon == 0 {
            return Err(Error::Parameter("horizon must be ≥ 1".into()));
        }
        if let DataMode::Sampled { n_trajectories: 0, .. } = self.data {
            return Err(Error::Parameter("sampled mode needs at least one trajectory".into()));
        }
        if self.confounding.is_some() && !(self.p > 0.0 && self.p < 1.0) {
            return Err(Error::Parameter("injected confounding needs p in (0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Diagnostics {
    pub fallback_pairs: usize,
    pub max_dispersion: f64,
}

/// One output row.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundResult {
    pub env: String,
    pub method: Method,
    pub gamma: f64,
    /// Blank for methods that ignore `Δ`.
    pub delta: Option<f64>,
    pub p: f64,
    pub horizon: usize,
    pub bound: f64,
    pub nominal_value: f64,
    pub behavior_value: f64,
    pub runtime_ms: Option<f64>,
    pub seed: Option<u64>,
    /// Candidate value minus bound, for tightness runs.
    pub gap: Option<f64>,
    pub diagnostics: Diagnostics,
}

/// The data-generating process and the model estimated from it.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub confounded: ConfoundedMdp,
    pub model: EmpiricalModel,
    pub seed: Option<u64>,
}

impl Prepared {
    pub fn problem<'a>(&'a self, env: &'a BenchmarkEnv) -> EvalProblem<'a> {
        EvalProblem {
            model: &self.model,
            rewards: env.mdp.rewards(),
            discount: env.mdp.discount(),
            initial_dist: env.mdp.initial_dist(),
            pi_e: &env.pi_e,
        }
    }
}

pub fn data_process(env: &BenchmarkEnv, p: f64, confounding: Option<Confounding>, horizon: usize) -> Result<ConfoundedMdp> {
    match confounding {
        Some(c) => inject_confounding(&env.mdp, &env.pi_b, c.gamma, c.delta, p, c.signal, horizon),
        None => ConfoundedMdp::unconfounded(&env.mdp, &env.pi_b, p),
    }
}

pub fn prepare(spec: &SweepSpec) -> Result<Prepared> {
    let confounded = data_process(&spec.env, spec.p, spec.confounding, spec.horizon)?;
    let (model, seed) = match spec.data {
        DataMode::Population => (population_model(&confounded), None),
        DataMode::Sampled { n_trajectories, seed } => {
            let data = simulate(&confounded, n_trajectories, spec.horizon, seed);
            (
                estimate(&data, confounded.n_states(), confounded.n_actions())?,
                Some(seed),
            )
        }
    };
    Ok(Prepared {
        confounded,
        model,
        seed,
    })
}

fn timed<T>(f: impl FnOnce() -> Result<T>) -> Result<(T, f64)> {
    let start = Instant::now();
    let out = f()?;
    Ok((out, start.elapsed().as_secs_f64() * 1e3))
}

/// One row per `Γ` for `fqe` and `naive`, one per `(Γ, Δ)` otherwise.
pub fn run_sweep(spec: &SweepSpec) -> Result<Vec<BoundResult>> {
    spec.validate()?;
    let prepared = prepare(spec)?;
    let prob = prepared.problem(&spec.env);
    let nominal_value = nominal_fqe(&prob, spec.horizon)?.expected_lower;
    let behavior = behavior_value(&prob, spec.horizon)?;
    let points: Vec<(f64, Option<f64>)> = spec
        .gammas
        .iter()
        .flat_map(|&g| {
            let deltas: Vec<Option<f64>> = if spec.method.uses_delta() {
                spec.deltas.iter().map(|&d| Some(d)).collect()
            } else {
                vec![None]
            };
            deltas.into_iter().map(move |d| (g, d))
        })
        .collect();
    points
        .par_iter()
        .map(|&(gamma, delta)| {
            let params = SensitivityParams::new(gamma, delta.unwrap_or(1.0), spec.p)?;
            let ((bound, diagnostics), ms) = timed(|| match spec.method {
                Method::Fqe => {
                    let r = confounded_fqe(&prob, gamma, spec.horizon)?;
                    Ok((r.expected_lower, fqe_diag(r.diagnostics.fallback_pairs)))
                }
                Method::Naive => {
                    let r = naive_bound(&prob, gamma, spec.horizon)?;
                    Ok((r.expected_lower, fqe_diag(r.diagnostics.fallback_pairs)))
                }
                Method::Robust => {
                    let (r, _) = robust_value_iteration(&prob, params, spec.horizon)?;
                    Ok((r.expected_lower, robust_diag(&r.diagnostics)))
                }
                Method::SingleStep => {
                    let r = single_step_bound(&prob, params, spec.horizon)?;
                    Ok((r.expected_lower, robust_diag(&r.diagnostics)))
                }
            })?;
            Ok(BoundResult {
                env: spec.env.name.clone(),
                method: spec.method,
                gamma,
                delta,
                p: spec.p,
                horizon: spec.horizon,
                bound,
                nominal_value,
                behavior_value: behavior,
                runtime_ms: spec.timing.then_some(ms),
                seed: prepared.seed,
                gap: None,
                diagnostics,
            })
        })
        .collect()
}

fn fqe_diag(fallback_pairs: usize) -> Diagnostics {
    Diagnostics {
        fallback_pairs,
        max_dispersion: 0.0,
    }
}

fn robust_diag(d: &crate::robust::RobustDiagnostics) -> Diagnostics {
    Diagnostics {
        fallback_pairs: d.unsupported_pairs,
        max_dispersion: d.max_dispersion,
    }
}

/// Pairs `Γ` and `Δ` elementwise; a single-entry list is broadcast.
pub fn paired(gammas: &[f64], deltas: &[f64]) -> Result<Vec<(f64, f64)>> {
    match (gammas.len(), deltas.len()) {
        (a, b) if a == b => Ok(gammas.iter().copied().zip(deltas.iter().copied()).collect()),
        (_, 1) => Ok(gammas.iter().map(|&g| (g, deltas[0])).collect()),
        (1, _) => Ok(deltas.iter().map(|&d| (gammas[0], d)).collect()),
        (a, b) => Err(Error::Parameter(format!("cannot pair {a} values of Γ with {b} values of Δ"))),
    }
}

/// Robust bound plus the gap to the value of its candidate model, for each
/// `(Γ, Δ)` pair.
pub fn run_tightness(spec: &SweepSpec) -> Result<Vec<BoundResult>> {
    spec.validate()?;
    let pairs = paired(&spec.gammas, &spec.deltas)?;
    let prepared = prepare(spec)?;
    let prob = prepared.problem(&spec.env);
    let nominal_value = nominal_fqe(&prob, spec.horizon)?.expected_lower;
    let behavior = behavior_value(&prob, spec.horizon)?;
    pairs
        .par_iter()
        .map(|&(gamma, delta)| {
            let params = SensitivityParams::new(gamma, delta, spec.p)?;
            let ((r, gap), ms) = timed(|| {
                let (r, candidate) = robust_value_iteration(&prob, params, spec.horizon)?;
                let gap = tightness_check(&prob, &r, &candidate)?;
                Ok((r, gap))
            })?;
            Ok(BoundResult {
                env: spec.env.name.clone(),
                method: Method::Robust,
                gamma,
                delta: Some(delta),
                p: spec.p,
                horizon: spec.horizon,
                bound: r.expected_lower,
                nominal_value,
                behavior_value: behavior,
                runtime_ms: spec.timing.then_some(ms),
                seed: prepared.seed,
                gap: Some(gap),
                diagnostics: robust_diag(&r.diagnostics),
            })
        })
        .collect()
}

/// Bounds at every horizon `t = 1..=T` on the steady-state version of the
/// environment, one row per `(Γ, Δ, t)`; `Δ` is ignored by `fqe` and
/// `naive`.
pub fn run_horizon(spec: &SweepSpec) -> Result<Vec<BoundResult>> {
    spec.validate()?;
    if spec.method == Method::SingleStep {
        return Err(Error::Parameter("the horizon protocol supports fqe, naive and robust".into()));
    }
    let env = steady_state_transform(&spec.env);
    let spec = SweepSpec {
        env,
        ..spec.clone()
    };
    let prepared = prepare(&spec)?;
    let prob = prepared.problem(&spec.env);
    let nominal = nominal_fqe(&prob, spec.horizon)?.per_horizon;
    let pi_b = estimated_behavior(&prepared.model);
    let behavior = nominal_fqe(&EvalProblem { pi_e: &pi_b, ..prob }, spec.horizon)?.per_horizon;
    let points: Vec<(f64, Option<f64>)> = spec
        .gammas
        .iter()
        .flat_map(|&g| {
            let deltas: Vec<Option<f64>> = if spec.method.uses_delta() {
                spec.deltas.iter().map(|&d| Some(d)).collect()
            } else {
                vec![None]
            };
            deltas.into_iter().map(move |d| (g, d))
        })
        .collect();
    let curves = points
        .par_iter()
        .map(|&(gamma, delta)| {
            let params = SensitivityParams::new(gamma, delta.unwrap_or(1.0), spec.p)?;
            let ((curve, diagnostics), ms) = timed(|| match spec.method {
                Method::Fqe => {
                    let r = confounded_fqe(&prob, gamma, spec.horizon)?;
                    Ok((r.per_horizon, fqe_diag(r.diagnostics.fallback_pairs)))
                }
                Method::Naive => {
                    let r = naive_bound(&prob, gamma, spec.horizon)?;
                    Ok((r.per_horizon, fqe_diag(r.diagnostics.fallback_pairs)))
                }
                _ => {
                    let (r, _) = robust_value_iteration(&prob, params, spec.horizon)?;
                    Ok((r.per_horizon, robust_diag(&r.diagnostics)))
                }
            })?;
            Ok((gamma, delta, curve, diagnostics, ms))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut rows = Vec::new();
    for (gamma, delta, curve, diagnostics, ms) in curves {
        for (t, bound) in curve.into_iter().enumerate() {
            rows.push(BoundResult {
                env: spec.env.name.clone(),
                method: spec.method,
                gamma,
                delta,
                p: spec.p,
                horizon: t + 1,
                bound,
                nominal_value: nominal[t],
                behavior_value: behavior[t],
                runtime_ms: (spec.timing && t + 1 == spec.horizon).then_some(ms),
                seed: prepared.seed,
                gap: None,
                diagnostics,
            });
        }
    }
    Ok(rows)
}

/// Confounding confined to the first step: the data for that step come
/// from the confounded process and all later steps from the unconfounded
/// one. The bound is evaluated at the audited sensitivity of the injected
/// process; `nominal_value` is the estimate that ignores confounding and
/// `behavior_value` the observed value of the behavior policy.
pub fn run_single_step(spec: &SweepSpec) -> Result<Vec<BoundResult>> {
    spec.validate()?;
    spec.confounding
        .ok_or_else(|| Error::Parameter("the single-step protocol needs injected confounding".into()))?;
    if spec.data != DataMode::Population {
        return Err(Error::Parameter("the single-step protocol runs in population mode".into()));
    }
    let first = prepare(spec)?;
    let rest = Prepared {
        model: population_model(&ConfoundedMdp::unconfounded(&spec.env.mdp, &spec.env.pi_b, spec.p)?),
        ..first.clone()
    };
    let audit = audit_sensitivity(&first.confounded);
    let first_prob = first.problem(&spec.env);
    let rest_prob = rest.problem(&spec.env);
    let params = SensitivityParams::new(audit.gamma, audit.delta, spec.p)?;
    let (r, ms) = timed(|| single_step_bound_with(&first_prob, &rest_prob, params, spec.horizon))?;
    let nominal = single_step_bound_with(
        &first_prob,
        &rest_prob,
        SensitivityParams::new(1.0, 1.0, spec.p)?,
        spec.horizon,
    )?;
    let behavior = observed_behavior_value(&first_prob, &rest_prob, spec.horizon)?;
    Ok(vec![BoundResult {
        env: spec.env.name.clone(),
        method: Method::SingleStep,
        gamma: audit.gamma,
        delta: Some(audit.delta),
        p: spec.p,
        horizon: spec.horizon,
        bound: r.expected_lower,
        nominal_value: nominal.expected_lower,
        behavior_value: behavior,
        runtime_ms: spec.timing.then_some(ms),
        seed: None,
        gap: None,
        diagnostics: robust_diag(&r.diagnostics),
    }])
}

fn observed_behavior_value(first: &EvalProblem<'_>, rest: &EvalProblem<'_>, horizon: usize) -> Result<f64> {
    let pi_first = estimated_behavior(first.model);
    let pi_rest = estimated_behavior(rest.model);
    let tail: StateValues = nominal_fqe(&EvalProblem { pi_e: &pi_rest, ..*rest }, horizon - 1)?.v_lower;
    let q = nominal_step(first, &tail)?;
    Ok(q.under_policy(&pi_first).expected(first.initial_dist))
}

fn fmt_opt<T: fmt::Display>(v: Option<T>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

/// Writes rows under [`CSV_HEADER`], plus a trailing `gap` column when every
/// row carries a gap.
pub fn write_csv<W: Write>(rows: &[BoundResult], writer: W) -> Result<()> {
    let with_gap = !rows.is_empty() && rows.iter().all(|r| r.gap.is_some());
    let mut w = csv::Writer::from_writer(writer);
    let mut header: Vec<&str> = CSV_HEADER.to_vec();
    if with_gap {
        header.push("gap");
    }
    w.write_record(&header)?;
    for r in rows {
        let mut rec = vec![
            r.env.clone(),
            r.method.to_string(),
            r.gamma.to_string(),
            fmt_opt(r.delta),
            r.p.to_string(),
            r.horizon.to_string(),
            r.bound.to_string(),
            r.nominal_value.to_string(),
            r.behavior_value.to_string(),
            fmt_opt(r.runtime_ms),
            fmt_opt(r.seed),
        ];
        if with_gap {
            rec.push(fmt_opt(r.gap));
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Deserialize)]
struct CsvRow {
    env: String,
    method: String,
    gamma: f64,
    delta: Option<f64>,
    p: f64,
    horizon: usize,
    bound: f64,
    nominal_value: f64,
    behavior_value: f64,
    runtime_ms: Option<f64>,
    seed: Option<u64>,
    #[serde(default)]
    gap: Option<f64>,
}

pub fn read_csv<R: Read>(reader: R) -> Result<Vec<BoundResult>> {
    let mut rdr = csv::Reader::from_reader(reader);
    let headers = rdr.headers()?.clone();
    if headers.iter().take(CSV_HEADER.len()).ne(CSV_HEADER.iter().copied()) {
        return Err(Error::Malformed(format!("unexpected CSV header {:?}", headers.iter().collect::<Vec<_>>())));
    }
    rdr.deserialize::<CsvRow>()
        .map(|row| {
            let row = row?;
            Ok(BoundResult {
                env: row.env,
                method: row.method.parse()?,
                gamma: row.gamma,
                delta: row.delta,
                p: row.p,
                horizon: row.horizon,
                bound: row.bound,
                nominal_value: row.nominal_value,
                behavior_value: row.behavior_value,
                runtime_ms: row.runtime_ms,
                seed: row.seed,
                gap: row.gap,
                diagnostics: Diagnostics::default(),
            })
        })
        .collect()
}
