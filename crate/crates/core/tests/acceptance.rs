//! Acceptance criteria. Each criterion prints one PASS/FAIL line; the test
//! fails if any criterion fails.

mod common;

use std::panic::{self, AssertUnwindSafe};
use std::time::Instant;

use confope::benchmarks::{load_env, steady_state_transform, BenchmarkEnv, EnvName};
use confope::confounded::{audit_sensitivity, inject_confounding, ConfoundedMdp, TiltSignal};
use confope::dataset::{self, population_model};
use confope::experiments::{
    run_horizon, run_sweep, run_tightness, write_csv, BoundResult, Confounding, Method, SweepSpec,
    UNRESTRICTED_DELTA,
};
use confope::fqe::{confounded_fqe, EvalProblem};
use confope::lp::{solve, solve_bruteforce, LpOutcome};
use confope::mdp::policy_value;
use confope::plot::render_svg;
use confope::robust::{robust_value_iteration, solve_state};
use confope::sensitivity::SensitivityParams;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

const METHODS: [Method; 4] = [Method::Fqe, Method::Naive, Method::Robust, Method::SingleStep];

fn injected(gamma: f64, delta: f64) -> Option<Confounding> {
    Some(Confounding {
        gamma,
        delta,
        signal: TiltSignal::Reward,
    })
}

fn spec(env: &BenchmarkEnv, method: Method, gammas: &[f64], deltas: &[f64]) -> SweepSpec {
    SweepSpec {
        gammas: gammas.to_vec(),
        deltas: deltas.to_vec(),
        ..SweepSpec::new(env.clone(), method)
    }
}

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn collapse() -> Outcome {
    let mut worst = 0.0f64;
    for name in EnvName::ALL {
        let env = load_env(name);
        for confounding in [None, injected(2.0, 2.0)] {
            for p in [0.2, 0.5, 0.8] {
                for method in METHODS {
                    let s = SweepSpec {
                        p,
                        confounding,
                        ..spec(&env, method, &[1.0], &[1.0, 2.0, 10.0])
                    };
                    for r in run_sweep(&s).map_err(|e| e.to_string())? {
                        worst = worst.max((r.bound - r.nominal_value).abs());
                    }
                }
                let s = SweepSpec {
                    p,
                    confounding,
                    ..spec(&env, Method::Robust, &[1.5, 4.0, 10.0], &[1.0])
                };
                for r in run_sweep(&s).map_err(|e| e.to_string())? {
                    worst = worst.max((r.bound - r.nominal_value).abs());
                }
            }
        }
    }
    check(worst <= 1e-9, format!("max |bound - nominal| = {worst:.3e} (tol 1e-9)"))
}

fn monotone_violation(rows: &[BoundResult], n_delta: usize) -> f64 {
    let mut worst = 0.0f64;
    for (i, r) in rows.iter().enumerate() {
        worst = worst.max(r.bound - r.nominal_value);
        if i % n_delta > 0 {
            worst = worst.max(r.bound - rows[i - 1].bound);
        }
        if i >= n_delta {
            worst = worst.max(r.bound - rows[i - n_delta].bound);
        }
    }
    worst
}

fn monotonicity() -> Outcome {
    let grid = [1.0, 1.5, 2.0, 4.0, 10.0];
    let mut worst = 0.0f64;
    for name in EnvName::ALL {
        let env = load_env(name);
        for confounding in [None, injected(2.0, 2.0)] {
            for method in METHODS {
                let s = SweepSpec {
                    confounding,
                    ..spec(&env, method, &grid, &grid)
                };
                let rows = run_sweep(&s).map_err(|e| e.to_string())?;
                let nd = if method.uses_delta() { grid.len() } else { 1 };
                worst = worst.max(monotone_violation(&rows, nd));
            }
        }
    }
    check(worst <= 1e-9, format!("max increase along Γ or Δ = {worst:.3e} (tol 1e-9)"))
}

fn dominance() -> Outcome {
    let gammas = [1.5, 2.0, 4.0, 10.0];
    let mut worst = f64::INFINITY;
    let mut details = Vec::new();
    for name in EnvName::ALL {
        let env = load_env(name);
        for confounding in [None, injected(2.0, 2.0)] {
            let fqe = run_sweep(&SweepSpec {
                confounding,
                ..spec(&env, Method::Fqe, &gammas, &[1.0])
            })
            .map_err(|e| e.to_string())?;
            let robust = run_sweep(&SweepSpec {
                confounding,
                ..spec(&env, Method::Robust, &gammas, &[UNRESTRICTED_DELTA])
            })
            .map_err(|e| e.to_string())?;
            let margin = fqe
                .iter()
                .zip(&robust)
                .map(|(f, r)| r.bound - f.bound)
                .fold(f64::INFINITY, f64::min);
            worst = worst.min(margin);
            if confounding.is_none() {
                details.push(format!("{name} {margin:.3}"));
            }
        }
    }
    check(
        worst >= -1e-9,
        format!("min robust - fqe = {worst:.3e} (tol -1e-9); per env: {}", details.join(", ")),
    )
}

fn soundness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst = f64::NEG_INFINITY;
    for _ in 0..20 {
        let ns = rng.gen_range(2..=4);
        let na = rng.gen_range(2..=3);
        let horizon = rng.gen_range(1..=5);
        let m = common::random_model(&mut rng, ns, na, false);
        let audit = audit_sensitivity(&m.cm);
        let params = SensitivityParams::new(audit.gamma, audit.delta, m.cm.p_u()).map_err(|e| e.to_string())?;
        let model = population_model(&m.cm);
        let prob = EvalProblem {
            model: &model,
            rewards: m.cm.rewards(),
            discount: m.cm.discount(),
            initial_dist: m.cm.initial_dist(),
            pi_e: &m.pi_e,
        };
        let (_, truth) = policy_value(&m.cm.marginal_mdp(), &m.pi_e, horizon).map_err(|e| e.to_string())?;
        let fqe = confounded_fqe(&prob, audit.gamma, horizon).map_err(|e| e.to_string())?;
        let (robust, _) = robust_value_iteration(&prob, params, horizon).map_err(|e| e.to_string())?;
        worst = worst.max(fqe.expected_lower - truth).max(robust.expected_lower - truth);
    }
    check(worst <= 1e-9, format!("max bound - true value = {worst:.3e} over 20 models (tol 1e-9)"))
}

fn tightness() -> Outcome {
    let mut worst = 0.0f64;
    for name in EnvName::ALL {
        let s = SweepSpec {
            horizon: 1,
            ..spec(&load_env(name), Method::Robust, &[2.0, 10.0], &[2.0, 10.0])
        };
        for r in run_tightness(&s).map_err(|e| e.to_string())? {
            worst = worst.max(r.gap.unwrap_or(f64::INFINITY).abs());
        }
    }
    let env = load_env(EnvName::OpeGridworld);
    let horizons = [8, 28, 208];
    let mut decreasing = true;
    let mut table = Vec::new();
    for (g, d) in [(2.0, 2.0), (10.0, 10.0)] {
        let gaps: Vec<f64> = horizons
            .iter()
            .map(|&h| {
                let s = SweepSpec {
                    horizon: h,
                    ..spec(&env, Method::Robust, &[g], &[d])
                };
                run_tightness(&s).map(|rows| rows[0].gap.unwrap_or(f64::INFINITY))
            })
            .collect::<Result<_, _>>()
            .map_err(|e| e.to_string())?;
        decreasing &= gaps.windows(2).all(|w| w[1] <= w[0] + 1e-12) && gaps[0] > gaps[2];
        table.push(format!(
            "({g},{d}): {}",
            horizons
                .iter()
                .zip(&gaps)
                .map(|(h, gap)| format!("T={h} {gap:.2e}"))
                .collect::<Vec<_>>()
                .join(" ")
        ));
    }
    check(
        worst <= 1e-8 && decreasing,
        format!("max T=1 gap = {worst:.3e} (tol 1e-8); gridworld gaps {}", table.join("; ")),
    )
}

fn oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    // (a) LP against vertex enumeration.
    let mut lp_diff = 0.0f64;
    let mut lp_mismatch = 0;
    for i in 0..200 {
        let lp = common::random_lp(&mut rng, i % 7 == 0);
        match (solve(&lp).map_err(|e| e.to_string())?, solve_bruteforce(&lp).map_err(|e| e.to_string())?) {
            (LpOutcome::Optimal(a), LpOutcome::Optimal(b)) => lp_diff = lp_diff.max((a.objective - b.objective).abs()),
            (LpOutcome::Infeasible, LpOutcome::Infeasible) => {}
            _ => lp_mismatch += 1,
        }
    }
    // (b) Per-state robust solver against grid search.
    let mut grid_diff = 0.0f64;
    for _ in 0..40 {
        let prob = common::random_two_by_two(&mut rng);
        let sol = solve_state(&prob).map_err(|e| e.to_string())?;
        grid_diff = grid_diff.max((common::grid_oracle(&prob, 1e-3) - sol.value).abs());
    }
    // (c) Reweighting identity.
    let mut reweight_diff = 0.0f64;
    let mut models: Vec<ConfoundedMdp> = Vec::new();
    for i in 0..50 {
        let ns = rng.gen_range(2..=5);
        let na = rng.gen_range(2..=3);
        let m = common::random_model(&mut rng, ns, na, i % 2 == 0);
        let f: Vec<f64> = (0..ns * na * ns).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let fval = |x: usize, a: usize, y: usize| f[(x * na + a) * ns + y];
        let w = m.cm.weights();
        for x in 0..ns {
            for a in 0..na {
                let got = m.cm.reweighted_conditional_mean(fval, x, a).map_err(|e| e.to_string())?;
                let want: f64 = (0..2)
                    .map(|u| {
                        w[u] * (0..ns)
                            .map(|y| m.cm.transitions_u()[[x, u, a, y]] * fval(x, a, y))
                            .sum::<f64>()
                    })
                    .sum();
                reweight_diff = reweight_diff.max((got - want).abs());
            }
        }
        models.push(m.cm);
    }
    // (d) Observable implications on every constructed model.
    for name in EnvName::ALL {
        let env = load_env(name);
        models.push(ConfoundedMdp::unconfounded(&env.mdp, &env.pi_b, 0.5).map_err(|e| e.to_string())?);
        for signal in [TiltSignal::Reward, TiltSignal::OptimalValue] {
            for (g, d, p) in [(2.0, 2.0, 0.5), (10.0, 10.0, 0.3), (1.5, 4.0, 0.8)] {
                models.push(
                    inject_confounding(&env.mdp, &env.pi_b, g, d, p, signal, env.horizon).map_err(|e| e.to_string())?,
                );
            }
        }
    }
    let implication_diff = models.iter().map(observable_implication_error).fold(0.0, f64::max);
    check(
        lp_mismatch == 0 && lp_diff <= 1e-8 && grid_diff <= 2e-3 && reweight_diff <= 1e-12 && implication_diff <= 1e-12,
        format!(
            "(a) LP diff {lp_diff:.2e}, {lp_mismatch} feasibility mismatches; (b) grid diff {grid_diff:.2e}; \
             (c) reweighting diff {reweight_diff:.2e}; (d) implication diff {implication_diff:.2e} on {} models",
            models.len()
        ),
    )
}

fn observable_implication_error(cm: &ConfoundedMdp) -> f64 {
    let model = population_model(cm);
    let marg = cm.marginalize();
    let w = cm.weights();
    let mut worst = 0.0f64;
    for x in 0..cm.n_states() {
        for a in 0..cm.n_actions() {
            let mixed: f64 = (0..2).map(|u| w[u] * cm.behavior_u()[[x, u, a]]).sum();
            worst = worst
                .max((mixed - marg.behavior[[x, a]]).abs())
                .max((mixed - model.pi_hat[[x, a]]).abs());
            for y in 0..cm.n_states() {
                let joint: f64 = (0..2)
                    .map(|u| w[u] * cm.behavior_u()[[x, u, a]] * cm.transitions_u()[[x, u, a, y]])
                    .sum();
                let observed = marg.behavior[[x, a]] * model.p_hat[[x, a, y]];
                worst = worst.max((joint - observed).abs());
            }
        }
    }
    worst
}

fn crossing(rows: &[BoundResult]) -> Option<f64> {
    rows.iter().find(|r| r.bound < r.behavior_value).map(|r| r.gamma)
}

fn crossing_points() -> Outcome {
    let gammas: Vec<f64> = (10..=100).map(|i| f64::from(i) / 10.0).collect();
    let out_dir = std::path::Path::new(env!("CARGO_TARGET_TMPDIR"));
    let mut ok = true;
    let mut details = Vec::new();
    for name in EnvName::ALL {
        let env = load_env(name);
        let fqe = run_sweep(&spec(&env, Method::Fqe, &gammas, &[1.0])).map_err(|e| e.to_string())?;
        let robust = run_sweep(&spec(&env, Method::Robust, &gammas, &[1.1, 1.5, 2.0, 4.0, 10.0]))
            .map_err(|e| e.to_string())?;
        let c = crossing(&fqe);
        ok &= match name {
            EnvName::OpeGraph => c.is_some_and(|g| (4.0..=9.0).contains(&g)),
            _ => c.is_some_and(|g| g < 3.5),
        };
        let robust_two: Vec<BoundResult> = robust.iter().filter(|r| r.delta == Some(2.0)).cloned().collect();
        let rc = crossing(&robust_two);
        if name == EnvName::Toy {
            ok &= match (c, rc) {
                (Some(f), Some(r)) => r > f,
                (Some(_), None) => true,
                _ => false,
            };
        }
        let fmt = |v: Option<f64>| v.map_or("none".to_string(), |g| format!("{g}"));
        details.push(format!("{name}: fqe {} robust(Δ=2) {}", fmt(c), fmt(rc)));
        let all: Vec<BoundResult> = fqe.into_iter().chain(robust).collect();
        if let Ok(svg) = render_svg(&all) {
            let _ = std::fs::write(out_dir.join(format!("gamma-sweep-{name}.svg")), svg);
        }
    }
    check(
        ok,
        format!("crossing Γ: {}; charts in {}", details.join("; "), out_dir.display()),
    )
}

fn horizon_protocol() -> Outcome {
    let start = Instant::now();
    let mut worst = 0.0f64;
    let mut details = Vec::new();
    for name in [EnvName::OpeGraph, EnvName::OpeMc, EnvName::OpeGridworld] {
        let env = load_env(name);
        let s = SweepSpec {
            horizon: 200,
            ..spec(&env, Method::Robust, &[1.5, 2.0, 10.0], &[UNRESTRICTED_DELTA])
        };
        let rows = run_horizon(&s).map_err(|e| e.to_string())?;
        if rows.len() != 600 || steady_state_transform(&env).mdp.discount() != 0.95 {
            return Err(format!("{name}: unexpected output shape"));
        }
        for curve in rows.chunks(200) {
            for w in curve.windows(2) {
                let gap0 = w[0].nominal_value - w[0].bound;
                let gap1 = w[1].nominal_value - w[1].bound;
                worst = worst.max(gap0 - gap1);
            }
        }
        for t in 0..200 {
            worst = worst
                .max(rows[200 + t].bound - rows[t].bound)
                .max(rows[400 + t].bound - rows[200 + t].bound);
        }
        details.push(format!(
            "{name} T=200 gap at Γ=10: {:.3}",
            rows[599].nominal_value - rows[599].bound
        ));
    }
    let secs = start.elapsed().as_secs_f64();
    check(
        worst <= 1e-9 && secs < 600.0,
        format!("max gap decrease {worst:.3e} (tol 1e-9); {}; {secs:.1}s (budget 600s)", details.join(", ")),
    )
}

fn determinism() -> Outcome {
    let csv = |s: &SweepSpec| -> Result<Vec<u8>, String> {
        let rows = run_sweep(s).map_err(|e| e.to_string())?;
        let mut buf = Vec::new();
        write_csv(&rows, &mut buf).map_err(|e| e.to_string())?;
        Ok(buf)
    };
    let single = rayon::ThreadPoolBuilder::new().num_threads(1).build().map_err(|e| e.to_string())?;
    let mut same = true;
    for name in EnvName::ALL {
        let env = load_env(name);
        for method in METHODS {
            let s = SweepSpec {
                confounding: injected(2.0, 2.0),
                ..spec(&env, method, &[1.0, 2.0, 10.0], &[2.0, 10.0])
            };
            let a = csv(&s)?;
            let b = csv(&s)?;
            let c = single.install(|| csv(&s))?;
            same &= a == b && a == c;
        }
        let cm = ConfoundedMdp::unconfounded(&env.mdp, &env.pi_b, 0.5).map_err(|e| e.to_string())?;
        let bytes = |seed| {
            let mut buf = Vec::new();
            dataset::write_csv(&dataset::simulate(&cm, 200, env.horizon, seed), &mut buf).map(|()| buf)
        };
        let d1 = bytes(5).map_err(|e| e.to_string())?;
        let d2 = bytes(5).map_err(|e| e.to_string())?;
        let d3 = single.install(|| bytes(5)).map_err(|e| e.to_string())?;
        same &= d1 == d2 && d1 == d3;
    }
    check(same, "CSV and datasets identical across repeats and thread counts".into())
}

#[test]
fn acceptance() {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("1 collapse identities", collapse),
        ("2 monotonicity", monotonicity),
        ("3 dominance", dominance),
        ("4 soundness", soundness),
        ("5 tightness", tightness),
        ("6 oracle equivalences", oracles),
        ("7 crossing points", crossing_points),
        ("8 horizon protocol", horizon_protocol),
        ("9 determinism", determinism),
    ];
    let mut failed = Vec::new();
    for (name, run) in criteria {
        let start = Instant::now();
        let outcome = panic::catch_unwind(AssertUnwindSafe(run))
            .unwrap_or_else(|e| Err(format!("panicked: {:?}", e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string())))));
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS [{name}] {detail} ({secs:.1}s)"),
            Err(detail) => {
                println!("FAIL [{name}] {detail} ({secs:.1}s)");
                failed.push(name);
            }
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
