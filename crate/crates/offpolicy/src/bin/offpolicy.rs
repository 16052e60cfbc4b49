//! Command-line entry point for closed-form solves, studies and learning runs.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;

use offpolicy::agents::Algorithm;
use offpolicy::control::ControlAlgorithm;
use offpolicy::harness::{self, Counterexample, CounterexampleParams, SolveObjective};
use offpolicy::{Error, Result};

#[derive(Parser, Debug)]
#[command(name = "offpolicy", version, about = "Off-policy value estimation experiments on finite MDPs")]
struct Cli {
    /// Base random seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output path; standard output when omitted.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads for parallel runs.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// JSON file with subcommand parameters; explicit flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Solve one objective in closed form and print a JSON report.
    Solve(SolveArgs),
    /// Fixed-point study over random policies and representations.
    FixedPoints(FixedPointArgs),
    /// Sampled learning curves of a prediction agent.
    Run(RunArgs),
    /// Sampled control runs compared against the soft-optimal values.
    Control(ControlArgs),
    /// Figure-shaped table of a counterexample.
    Counterexample(CounterexampleArgs),
}

#[derive(Args, Debug)]
struct SolveArgs {
    /// Environment name or MDP JSON path.
    #[arg(long)]
    env: Option<String>,
    /// Representation, e.g. `tabular`, `agg:2`, `tile:4x4`.
    #[arg(long)]
    features: Option<String>,
    /// Correction representation of the generalized PBE.
    #[arg(long)]
    h_features: Option<String>,
    /// Weighting: db, dpi or m.
    #[arg(long)]
    weighting: Option<String>,
    /// Objective: td, pbe, be, tde or ve.
    #[arg(long)]
    objective: Option<SolveObjective>,
    /// Trace parameter.
    #[arg(long)]
    lambda: Option<f64>,
}

#[derive(Args, Debug)]
struct FixedPointArgs {
    /// Environment name or MDP JSON path.
    #[arg(long)]
    env: Option<String>,
    /// Comma-separated representations.
    #[arg(long, value_delimiter = ',')]
    representations: Option<Vec<String>>,
    /// Random policy draws.
    #[arg(long)]
    reps: Option<usize>,
    /// Trace parameter of the emphatic weighting.
    #[arg(long)]
    lambda: Option<f64>,
}

#[derive(Args, Debug)]
struct RunArgs {
    /// Environment name or MDP JSON path.
    #[arg(long)]
    env: Option<String>,
    /// Representation.
    #[arg(long)]
    features: Option<String>,
    /// Algorithm, e.g. td, gtd, etd, tdrc.
    #[arg(long)]
    agent: Option<Algorithm>,
    /// Primary stepsize.
    #[arg(long)]
    alpha: Option<f64>,
    /// Secondary stepsize.
    #[arg(long)]
    alpha_h: Option<f64>,
    /// Trace parameter.
    #[arg(long)]
    lambda: Option<f64>,
    /// TDRC regularization.
    #[arg(long)]
    beta: Option<f64>,
    /// Value-error weighting: db, dpi or m.
    #[arg(long)]
    weighting: Option<String>,
    /// Independent runs.
    #[arg(long)]
    runs: Option<usize>,
    /// Steps per run.
    #[arg(long)]
    steps: Option<usize>,
    /// Steps between recorded points.
    #[arg(long)]
    record_every: Option<usize>,
}

#[derive(Args, Debug)]
struct ControlArgs {
    /// Algorithm: q, gq or qrc.
    #[arg(long)]
    agent: Option<ControlAlgorithm>,
    /// Environment name or MDP JSON path.
    #[arg(long)]
    env: Option<String>,
    /// Mellowmax temperature; 0 is the hard max.
    #[arg(long)]
    tau: Option<f64>,
    /// Correction regularization.
    #[arg(long)]
    beta: Option<f64>,
    /// Exploration rate.
    #[arg(long)]
    epsilon: Option<f64>,
    /// Value stepsize.
    #[arg(long)]
    alpha: Option<f64>,
    /// Correction stepsize; defaults to alpha.
    #[arg(long)]
    alpha_h: Option<f64>,
    /// Steps per run.
    #[arg(long)]
    steps: Option<usize>,
    /// Independent runs.
    #[arg(long)]
    runs: Option<usize>,
    /// Steps between recorded points.
    #[arg(long)]
    record_every: Option<usize>,
}

#[derive(Args, Debug)]
struct CounterexampleArgs {
    /// One of baird, kolter, aliased, tde-bias.
    name: Counterexample,
    /// Points of the Kolter sweep.
    #[arg(long, default_value_t = 981)]
    points: usize,
    /// Iteration cap of the star trajectories.
    #[arg(long, default_value_t = 100_000)]
    iterations: usize,
    /// Checkpoint spacing of the star trajectories.
    #[arg(long, default_value_t = 1000)]
    check_every: usize,
}

fn load_config<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    match path {
        None => Ok(T::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| Error::InvalidParameter(format!("cannot read config '{}': {e}", p.display())))?;
            Ok(serde_json::from_str(&text)?)
        }
    }
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

fn configure_threads(threads: Option<usize>) -> Result<()> {
    let Some(n) = threads else { return Ok(()) };
    if n == 0 {
        return Err(Error::InvalidParameter("threads must be at least 1".into()));
    }
    #[cfg(feature = "parallel")]
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::InvalidParameter(e.to_string()))?;
    Ok(())
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!("{stem}{suffix}"))
}

fn execute(cli: Cli) -> Result<()> {
    configure_threads(cli.threads)?;
    let config = cli.config.as_deref();
    let out = cli.out.as_deref();
    match cli.command {
        Command::Solve(a) => {
            let mut spec: harness::SolveSpec = load_config(config)?;
            set(&mut spec.env, a.env);
            set(&mut spec.features, a.features);
            set(&mut spec.h_features, a.h_features.map(Some));
            set(&mut spec.weighting, a.weighting);
            set(&mut spec.objective, a.objective);
            set(&mut spec.lambda, a.lambda);
            set(&mut spec.seed, cli.seed);
            let report = harness::solve(&spec)?;
            harness::emit(out, |buf| {
                serde_json::to_writer_pretty(&mut *buf, &report).map_err(|e| Error::Io(e.to_string()))?;
                buf.push(b'\n');
                Ok(())
            })
        }
        Command::FixedPoints(a) => {
            let mut spec: harness::FixedPointSpec = load_config(config)?;
            set(&mut spec.env, a.env);
            set(&mut spec.representations, a.representations);
            set(&mut spec.reps, a.reps);
            set(&mut spec.lambda, a.lambda);
            set(&mut spec.seed, cli.seed);
            let table = harness::run_fixed_point_study(&spec)?;
            harness::emit(out, |buf| harness::write_fixed_points(buf, &table))?;
            if let Some(p) = out {
                harness::emit(Some(&sibling(p, "_se.csv")), |buf| harness::write_fixed_point_stats(buf, &table))?;
            }
            Ok(())
        }
        Command::Run(a) => {
            let mut spec: harness::ExperimentSpec = load_config(config)?;
            set(&mut spec.env, a.env);
            set(&mut spec.features, a.features);
            set(&mut spec.cfg.algorithm, a.agent);
            set(&mut spec.cfg.alpha, a.alpha);
            set(&mut spec.cfg.alpha_h, a.alpha_h);
            set(&mut spec.cfg.lambda, a.lambda);
            set(&mut spec.cfg.beta_reg, a.beta);
            set(&mut spec.weighting, a.weighting);
            set(&mut spec.runs, a.runs);
            set(&mut spec.steps, a.steps);
            set(&mut spec.record_every, a.record_every);
            set(&mut spec.seed, cli.seed);
            let rows = harness::run_learning_curve(&spec)?;
            harness::emit(out, |buf| harness::write_results(buf, &rows))
        }
        Command::Control(a) => {
            let mut spec: harness::ControlSpec = load_config(config)?;
            set(&mut spec.agent, a.agent);
            set(&mut spec.env, a.env);
            set(&mut spec.tau, a.tau);
            set(&mut spec.beta, a.beta);
            set(&mut spec.epsilon, a.epsilon);
            set(&mut spec.alpha, a.alpha);
            set(&mut spec.alpha_h, a.alpha_h.map(Some));
            set(&mut spec.steps, a.steps);
            set(&mut spec.runs, a.runs);
            set(&mut spec.record_every, a.record_every);
            set(&mut spec.seed, cli.seed);
            let rows = harness::run_control(&spec)?;
            harness::emit(out, |buf| harness::write_control(buf, &rows))
        }
        Command::Counterexample(a) => {
            let params = CounterexampleParams {
                kolter_points: a.points,
                baird_iterations: a.iterations,
                baird_check_every: a.check_every,
            };
            let rows = harness::run_counterexample(a.name, &params)?;
            harness::emit(out, |buf| harness::write_counterexample(buf, &rows))
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
