//! `gou`: simulate, fit, test and monitor GOU processes from the command line.

use std::fs::File;
use std::io::{self, BufRead, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;

use gou_changepoint::critvals::{self, CriticalValueTable};
use gou_changepoint::detect::{run_monitor, DetectorConfig, DetectorKind, Monitor, SigmaSource};
use gou_changepoint::estimate::{fit_theta, historical_design};
use gou_changepoint::experiments::{self, ExperimentConfig};
use gou_changepoint::gof::{self, GofTable, ScaleEstimator};
use gou_changepoint::simulate::{euler_maruyama_trajectory, simulate_trajectory, ScenarioConfig, Trajectory};
use gou_changepoint::{BasisSpec, Error};

#[derive(Parser, Debug)]
#[command(name = "gou", version, about = "Change-point monitoring for generalized Ornstein-Uhlenbeck processes")]
struct Cli {
    /// Worker threads (default: all available cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate a trajectory from a scenario JSON file.
    Simulate(SimulateArgs),
    /// Least-squares fit on the historical window.
    Estimate(EstimateArgs),
    /// Goodness-of-fit test of the historical residuals.
    Gof(GofArgs),
    /// Run a sequential detector over a trajectory or a stream on stdin.
    Monitor(MonitorArgs),
    /// Tabulate critical values of the Brownian supremum functionals.
    TabulateCritvals(CritvalArgs),
    /// Tabulate null quantiles of the goodness-of-fit statistics.
    TabulateGof(TabulateGofArgs),
    /// Run a Monte Carlo experiment grid.
    Experiment(ExperimentArgs),
    /// Power curves from experiment results.
    Power(PowerArgs),
}

#[derive(Args, Debug, Clone, Copy)]
struct BasisArgs {
    /// Number of cosine functions, including the constant.
    #[arg(long, default_value_t = 2)]
    p1: usize,
    /// Number of sine functions.
    #[arg(long, default_value_t = 0)]
    p2: usize,
}

impl BasisArgs {
    fn spec(self) -> Result<BasisSpec, Error> {
        BasisSpec::new(self.p1, self.p2)
    }
}

#[derive(Args, Debug)]
struct SimulateArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Use the Euler-Maruyama scheme (no change point) instead of exact steps.
    #[arg(long)]
    euler: bool,
}

#[derive(Args, Debug)]
struct EstimateArgs {
    #[arg(long)]
    input: PathBuf,
    /// Size N of the historical window.
    #[arg(long)]
    history: usize,
    #[command(flatten)]
    basis: BasisArgs,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct GofArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    history: usize,
    #[command(flatten)]
    basis: BasisArgs,
    /// Quantile table CSV (default: bundled table).
    #[arg(long)]
    table: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(ValueEnum, Debug, Clone, Copy)]
enum DetectorArg {
    Q,
    Gamma,
}

impl From<DetectorArg> for DetectorKind {
    fn from(d: DetectorArg) -> Self {
        match d {
            DetectorArg::Q => DetectorKind::Q,
            DetectorArg::Gamma => DetectorKind::Gamma,
        }
    }
}

#[derive(Args, Debug)]
struct MonitorArgs {
    /// Trajectory CSV; omit with --stream.
    #[arg(long, required_unless_present = "stream")]
    input: Option<PathBuf>,
    /// Read whitespace-separated observations from stdin.
    #[arg(long, conflicts_with = "input")]
    stream: bool,
    /// Sampling interval for --stream (alternatively give --horizon).
    #[arg(long)]
    delta: Option<f64>,
    /// Length T of the historical window for --stream; sets delta = T / N.
    #[arg(long = "T", conflicts_with = "delta")]
    horizon: Option<f64>,
    #[arg(long)]
    history: usize,
    #[arg(long, value_enum, default_value_t = DetectorArg::Q)]
    detector: DetectorArg,
    #[arg(long, default_value_t = 0.1)]
    gamma: f64,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    /// Critical value; looked up in the critical-value table if omitted.
    #[arg(long)]
    c: Option<f64>,
    #[arg(long)]
    critvals: Option<PathBuf>,
    /// Known diffusion scale; estimated from the history if omitted.
    #[arg(long)]
    sigma: Option<f64>,
    /// Monitoring horizon (default 2N).
    #[arg(long)]
    max_k: Option<usize>,
    #[command(flatten)]
    basis: BasisArgs,
    /// Path CSV `K,statistic,boundary,stopped` (file mode only).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct CritvalArgs {
    #[arg(long, value_delimiter = ',', default_values_t = [1usize, 2, 3, 4, 5])]
    k: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_values_t = critvals::DEFAULT_GAMMAS.to_vec())]
    gamma: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_values_t = critvals::DEFAULT_ALPHAS.to_vec())]
    alpha: Vec<f64>,
    #[arg(long = "B", default_value_t = 50_000)]
    reps: usize,
    #[arg(long, default_value_t = 10_000)]
    grid: usize,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct TabulateGofArgs {
    #[arg(long, value_delimiter = ',', default_values_t = [100usize, 250, 500, 750, 1000])]
    n: Vec<usize>,
    #[arg(long = "B", default_value_t = 100_000)]
    reps: usize,
    #[arg(long, value_delimiter = ',', default_values_t = gof::DEFAULT_LEVELS.to_vec())]
    levels: Vec<f64>,
    /// Center the simulated residuals before estimating the scale.
    #[arg(long)]
    centered: bool,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ExperimentArgs {
    #[arg(long)]
    config: PathBuf,
    /// Overrides the seed in the config file.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    critvals: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct PowerArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn output(path: &Option<PathBuf>) -> Result<Box<dyn Write>, Error> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn resolve_seed(seed: Option<u64>) -> u64 {
    let s = seed.unwrap_or_else(rand::random);
    info!("seed = {s}");
    s
}

fn read_trajectory(path: &Path, history: usize) -> Result<Trajectory, Error> {
    Trajectory::read_csv(File::open(path)?, history)
}

fn critical_value_table(path: &Option<PathBuf>) -> Result<CriticalValueTable, Error> {
    match path {
        Some(p) => CriticalValueTable::read_path(p),
        None => CriticalValueTable::from_env(),
    }
}

fn simulate(args: SimulateArgs) -> Result<(), Error> {
    let cfg: ScenarioConfig = serde_json::from_reader(File::open(&args.config)?)?;
    let seed = resolve_seed(args.seed.or(cfg.seed));
    info!(
        "simulate: N={}, T={}, scenario={}",
        cfg.n,
        cfg.t,
        serde_json::to_string(&cfg.scenario)?
    );
    let traj = if args.euler {
        euler_maruyama_trajectory(&cfg.scenario.theta0, cfg.n, cfg.t, seed)?
    } else {
        simulate_trajectory(&cfg.scenario, cfg.n, cfg.t, seed)?
    };
    traj.write_csv(output(&args.out)?)
}

fn estimate(args: EstimateArgs) -> Result<(), Error> {
    info!("estimate: {args:?}");
    let traj = read_trajectory(&args.input, args.history)?;
    let fit = fit_theta(&historical_design(&traj, &args.basis.spec()?)?)?;
    let mut out = output(&args.out)?;
    writeln!(out, "{}", fit.to_json()?)?;
    Ok(())
}

fn gof_cmd(args: GofArgs) -> Result<(), Error> {
    info!("gof: {args:?}");
    let traj = read_trajectory(&args.input, args.history)?;
    let table = match &args.table {
        Some(p) => GofTable::read_csv(File::open(p)?)?,
        None => GofTable::bundled(),
    };
    let report = gof::gof_test_with_table(&traj, &args.basis.spec()?, &table)?;
    let mut out = output(&args.out)?;
    writeln!(out, "{}", serde_json::to_string_pretty(&report)?)?;
    Ok(())
}

fn monitor(args: MonitorArgs) -> Result<(), Error> {
    let basis = args.basis.spec()?;
    let kind: DetectorKind = args.detector.into();
    let c = match args.c {
        Some(c) => c,
        None => critical_value_table(&args.critvals)?.lookup(kind.limit_dimension(&basis), args.gamma, args.alpha)?,
    };
    let config = DetectorConfig {
        gamma: args.gamma,
        c,
        alpha: args.alpha,
        max_k: args.max_k,
        sigma: args.sigma.map_or(SigmaSource::Estimate, SigmaSource::Known),
    };
    info!("monitor: detector={}, N={}, config={config:?}", kind.as_str(), args.history);
    if args.stream {
        return monitor_stream(&args, &basis, kind, config);
    }
    let input = args.input.as_ref().expect("clap requires --input without --stream");
    let traj = read_trajectory(input, args.history)?;
    let run = run_monitor(&traj, &basis, kind, &config)?;
    match run.stopped_at {
        Some(k) => info!("alarm at K={k}"),
        None => info!("no alarm within {} observations", run.statistic.len()),
    }
    run.write_csv(output(&args.out)?)
}

fn monitor_stream(args: &MonitorArgs, basis: &BasisSpec, kind: DetectorKind, config: DetectorConfig) -> Result<(), Error> {
    let n = args.history;
    let delta = match (args.delta, args.horizon) {
        (Some(d), _) => d,
        (None, Some(t)) => t / n as f64,
        (None, None) => return Err(Error::InvalidParameter("--stream needs --delta or --T".into())),
    };
    let stdin = io::stdin();
    let mut history = Vec::with_capacity(n + 1);
    let mut monitor: Option<Monitor> = None;
    let mut stdout = io::stdout().lock();
    for line in stdin.lock().lines() {
        for tok in line?.split_whitespace() {
            let x: f64 = tok
                .parse()
                .map_err(|_| Error::Format(format!("not a number: {tok:?}")))?;
            match monitor.as_mut() {
                None => {
                    history.push(x);
                    if history.len() == n + 1 {
                        monitor = Some(Monitor::from_history(&history, delta, basis, kind, config.clone())?);
                    }
                }
                Some(m) => {
                    let step = m.push(x)?;
                    if step.alarm {
                        writeln!(stdout, "ALARM K={}", step.k)?;
                        stdout.flush()?;
                        return Ok(());
                    }
                    if m.k() >= m.horizon() {
                        info!("horizon K={} reached without alarm", m.k());
                        return Ok(());
                    }
                }
            }
        }
    }
    match monitor {
        Some(m) => info!("end of input at K={} without alarm", m.k()),
        None => {
            return Err(Error::InvalidParameter(format!(
                "stream ended after {} observations; the history needs N+1 = {}",
                history.len(),
                n + 1
            )))
        }
    }
    Ok(())
}

fn tabulate_critvals(args: CritvalArgs) -> Result<(), Error> {
    let seed = resolve_seed(args.seed);
    info!("tabulate-critvals: {args:?}");
    let table = critvals::tabulate(&args.k, &args.gamma, &args.alpha, args.reps, args.grid, seed)?;
    table.write_csv(output(&args.out)?)
}

fn tabulate_gof(args: TabulateGofArgs) -> Result<(), Error> {
    let seed = resolve_seed(args.seed);
    info!("tabulate-gof: {args:?}");
    let scale = if args.centered {
        ScaleEstimator::Centered
    } else {
        ScaleEstimator::Uncentered
    };
    let mut rows = Vec::new();
    for &n in &args.n {
        rows.extend(gof::tabulate_gof_quantiles(n, args.reps, seed, &args.levels, scale)?);
    }
    gof::write_quantile_csv(&rows, output(&args.out)?)
}

fn experiment(args: ExperimentArgs) -> Result<(), Error> {
    let mut cfg: ExperimentConfig = serde_json::from_reader(File::open(&args.config)?)?;
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    info!("seed = {}", cfg.seed);
    info!("experiment: {}", serde_json::to_string(&cfg)?);
    let table = critical_value_table(&args.critvals)?;
    let rows = experiments::run_grid(&cfg, &table)?;
    experiments::write_results(&rows, output(&args.out)?)
}

fn power(args: PowerArgs) -> Result<(), Error> {
    info!("power: {args:?}");
    let mut text = String::new();
    File::open(&args.input)?.read_to_string(&mut text)?;
    let rows = experiments::read_results(text.as_bytes())?;
    let table = experiments::power_table(&rows)?;
    experiments::write_power(&table, output(&args.out)?)
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Estimate(a) => estimate(a),
        Command::Gof(a) => gof_cmd(a),
        Command::Monitor(a) => monitor(a),
        Command::TabulateCritvals(a) => tabulate_critvals(a),
        Command::TabulateGof(a) => tabulate_gof(a),
        Command::Experiment(a) => experiment(a),
        Command::Power(a) => power(a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    if let Some(t) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(t).build_global() {
            eprintln!("error: cannot configure {t} threads: {e}");
            return ExitCode::from(2);
        }
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_domain() { 1 } else { 2 })
        }
    }
}
