use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use confope::benchmarks::{load_env, BenchmarkEnv, EnvName};
use confope::confounded::TiltSignal;
use confope::experiments::{
    self, BoundResult, Confounding, DataMode, Method, SweepSpec, UNRESTRICTED_DELTA,
};
use confope::{dataset, plot, Error};

#[derive(Parser)]
#[command(name = "confope", version, about = "Worst-case off-policy evaluation bounds under unobserved confounding")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Bounds over a grid of sensitivity parameters.
    Sweep(ExperimentArgs),
    /// Robust bounds and the gap to the value of their candidate models.
    Tightness(ExperimentArgs),
    /// Bounds at every horizon on the steady-state version of an environment.
    Horizon(ExperimentArgs),
    /// Bound for confounding confined to the first step, at the audited
    /// sensitivity of the injected model.
    SingleStep(ExperimentArgs),
    /// Render a results CSV as an SVG chart.
    Plot {
        /// Results CSV.
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Simulate a trajectory dataset.
    Simulate {
        #[command(flatten)]
        env: EnvArgs,
        #[arg(long)]
        sample: usize,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        horizon: Option<usize>,
        #[arg(long, default_value_t = 0.5)]
        p: f64,
        #[command(flatten)]
        confound: ConfoundArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print an environment as JSON together with its reference values.
    Inspect {
        #[command(flatten)]
        env: EnvArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
#[group(required = true, multiple = false)]
struct EnvArgs {
    /// Built-in environment: toy, ope-graph, ope-mc or ope-gridworld.
    #[arg(long)]
    env: Option<String>,
    /// Environment JSON file.
    #[arg(long)]
    env_file: Option<PathBuf>,
}

#[derive(Args)]
struct ConfoundArgs {
    /// Inject confounding with odds-ratio limits `Γ*` and `Δ*`.
    #[arg(long, num_args = 2, value_names = ["GAMMA", "DELTA"])]
    confound: Option<Vec<f64>>,
    /// Signal that the injected confounder tilts toward.
    #[arg(long, value_enum, default_value_t = Tilt::Reward)]
    tilt: Tilt,
}

#[derive(Clone, Copy, ValueEnum)]
enum Tilt {
    Reward,
    OptimalValue,
}

#[derive(Args)]
struct ExperimentArgs {
    #[command(flatten)]
    env: EnvArgs,
    /// fqe, naive, robust or single-step.
    #[arg(long)]
    method: Option<String>,
    /// Policy odds-ratio limits.
    #[arg(long, num_args = 1.., value_delimiter = ',')]
    gamma: Option<Vec<f64>>,
    /// Transition odds-ratio limits.
    #[arg(long, num_args = 1.., value_delimiter = ',')]
    delta: Option<Vec<f64>>,
    /// Probability of the confounder being 1.
    #[arg(long, default_value_t = 0.5)]
    p: f64,
    #[arg(long)]
    horizon: Option<usize>,
    /// Estimate the model from this many simulated trajectories.
    #[arg(long, requires = "seed")]
    sample: Option<usize>,
    #[arg(long, requires = "sample")]
    seed: Option<u64>,
    #[command(flatten)]
    confound: ConfoundArgs,
    /// Record wall-clock runtime per point.
    #[arg(long)]
    timing: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

enum Failure {
    Usage(String),
    Runtime(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Parameter(_) | Error::UnknownEnv(_) => Failure::Usage(e.to_string()),
            _ => Failure::Runtime(e.to_string()),
        }
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

fn resolve_env(args: &EnvArgs) -> Result<BenchmarkEnv, Failure> {
    match (&args.env, &args.env_file) {
        (Some(name), _) => Ok(load_env(name.parse::<EnvName>()?)),
        (None, Some(path)) => {
            let json = std::fs::read_to_string(path)
                .map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?;
            Ok(BenchmarkEnv::from_json(&json).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?)
        }
        (None, None) => Err(Failure::Usage("one of --env or --env-file is required".into())),
    }
}

fn resolve_confounding(args: &ConfoundArgs) -> Option<Confounding> {
    args.confound.as_ref().map(|v| Confounding {
        gamma: v[0],
        delta: v[1],
        signal: match args.tilt {
            Tilt::Reward => TiltSignal::Reward,
            Tilt::OptimalValue => TiltSignal::OptimalValue,
        },
    })
}

fn build_spec(args: &ExperimentArgs, command: &str) -> Result<SweepSpec, Failure> {
    let env = resolve_env(&args.env)?;
    let default_method = match command {
        "single-step" => Method::SingleStep,
        "tightness" | "horizon" => Method::Robust,
        _ => Method::Fqe,
    };
    let method = match &args.method {
        Some(m) => m.parse::<Method>()?,
        None => default_method,
    };
    let mut spec = SweepSpec::new(env, method);
    match command {
        "tightness" => {
            spec.gammas = vec![2.0, 10.0];
            spec.deltas = vec![2.0, 10.0];
        }
        "horizon" => {
            spec.gammas = vec![1.5, 2.0, 10.0];
            spec.deltas = vec![UNRESTRICTED_DELTA];
            spec.horizon = 200;
        }
        _ => {}
    }
    if let Some(g) = &args.gamma {
        spec.gammas = g.clone();
    }
    if let Some(d) = &args.delta {
        spec.deltas = d.clone();
    }
    spec.p = args.p;
    if let Some(h) = args.horizon {
        spec.horizon = h;
    }
    if let (Some(n), Some(seed)) = (args.sample, args.seed) {
        spec.data = DataMode::Sampled {
            n_trajectories: n,
            seed,
        };
    }
    spec.confounding = resolve_confounding(&args.confound);
    if command == "single-step" && spec.confounding.is_none() {
        spec.confounding = Some(Confounding {
            gamma: 2.0,
            delta: 2.0,
            signal: TiltSignal::Reward,
        });
    }
    spec.timing = args.timing;
    Ok(spec)
}

fn open_out(out: Option<&Path>) -> Result<Box<dyn Write>, Failure> {
    Ok(match out {
        Some(path) => Box::new(BufWriter::new(
            File::create(path).map_err(|e| Failure::Runtime(format!("{}: {e}", path.display())))?,
        )),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn write_rows(rows: &[BoundResult], out: Option<&Path>) -> Result<(), Failure> {
    let mut w = open_out(out)?;
    experiments::write_csv(rows, &mut w)?;
    w.flush()?;
    Ok(())
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Sweep(args) => {
            let rows = experiments::run_sweep(&build_spec(&args, "sweep")?)?;
            write_rows(&rows, args.out.as_deref())
        }
        Command::Tightness(args) => {
            let rows = experiments::run_tightness(&build_spec(&args, "tightness")?)?;
            write_rows(&rows, args.out.as_deref())
        }
        Command::Horizon(args) => {
            let rows = experiments::run_horizon(&build_spec(&args, "horizon")?)?;
            write_rows(&rows, args.out.as_deref())
        }
        Command::SingleStep(args) => {
            let rows = experiments::run_single_step(&build_spec(&args, "single-step")?)?;
            write_rows(&rows, args.out.as_deref())
        }
        Command::Plot { input, out } => {
            let file = File::open(&input).map_err(|e| Failure::Usage(format!("{}: {e}", input.display())))?;
            let rows = experiments::read_csv(file)?;
            let svg = plot::render_svg(&rows)?;
            std::fs::write(&out, svg).map_err(|e| Failure::Runtime(format!("{}: {e}", out.display())))?;
            Ok(())
        }
        Command::Simulate {
            env,
            sample,
            seed,
            horizon,
            p,
            confound,
            out,
        } => {
            let env = resolve_env(&env)?;
            let horizon = horizon.unwrap_or(env.horizon);
            let cm = experiments::data_process(&env, p, resolve_confounding(&confound), horizon)?;
            let data = dataset::simulate(&cm, sample, horizon, seed);
            let mut w = open_out(out.as_deref())?;
            dataset::write_csv(&data, &mut w)?;
            w.flush()?;
            Ok(())
        }
        Command::Inspect { env, out } => {
            let env = resolve_env(&env)?;
            let (vb, ve) = env.reference_values();
            let mut w = open_out(out.as_deref())?;
            writeln!(w, "{}", env.to_json()?)?;
            eprintln!(
                "{}: {} states, {} actions, horizon {}, V(pi_b) = {vb}, V(pi_e) = {ve}",
                env.name,
                env.mdp.n_states(),
                env.mdp.n_actions(),
                env.horizon
            );
            w.flush()?;
            Ok(())
        }
    }
}

fn configure_threads() -> Result<(), Failure> {
    let Ok(raw) = std::env::var("CONFOPE_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Failure::Usage(format!("CONFOPE_THREADS must be a positive integer, got {raw:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Failure::Runtime(e.to_string()))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match configure_threads().and_then(|()| run(cli)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}
