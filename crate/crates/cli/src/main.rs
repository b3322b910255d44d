mod output;

use std::fs::{self, File};
use std::io::{self, BufWriter};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::thread;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use clik_sdp::config::ModeConfig;
use clik_sdp::lmi::formulate;
use clik_sdp::{build_state, run, ConfigError, Scenario, ScenarioConfig};
use thiserror::Error;

use output::SweepRow;

#[derive(Debug, Parser)]
#[command(
    name = "clik-sdp",
    version,
    about = "Hierarchical CLIK simulations with SDP-scheduled gains"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate one scenario and write its trace.
    Run(RunArgs),
    /// Simulate a scenario once per parameter value.
    Sweep(SweepArgs),
    /// Check a scenario and print its normalized form.
    Validate(Source),
    /// Write the first step's gain problem in SDPA sparse format.
    Export(ExportArgs),
    /// Write a matplotlib script that plots a trace CSV.
    PlotScript {
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
#[group(required = true, multiple = false)]
struct Source {
    /// Scenario file (TOML).
    #[arg(long)]
    scenario: Option<PathBuf>,
    /// Builtin scenario: planar3 or ur5.
    #[arg(long)]
    builtin: Option<String>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Mode {
    Sdp,
    Fixed,
}

#[derive(Debug, Args)]
struct Overrides {
    #[arg(long, value_enum)]
    mode: Option<Mode>,
    #[arg(long)]
    beta_tilde: Option<f64>,
    #[arg(long)]
    dt: Option<f64>,
    #[arg(long)]
    duration: Option<f64>,
    /// Symmetric joint-velocity bound applied to every joint, rad/s.
    #[arg(long)]
    qd_limit: Option<f64>,
}

#[derive(Debug, Args)]
struct RunArgs {
    #[command(flatten)]
    source: Source,
    #[command(flatten)]
    overrides: Overrides,
    /// Trace CSV path.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write zero solve times so reruns are byte-identical.
    #[arg(long)]
    no_timing: bool,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
#[value(rename_all = "snake_case")]
enum SweepParam {
    BetaTilde,
    Dt,
    QdLimit,
}

impl SweepParam {
    fn name(self) -> &'static str {
        match self {
            SweepParam::BetaTilde => "beta_tilde",
            SweepParam::Dt => "dt",
            SweepParam::QdLimit => "qd_limit",
        }
    }
}

#[derive(Debug, Args)]
struct SweepArgs {
    #[command(flatten)]
    source: Source,
    #[command(flatten)]
    overrides: Overrides,
    #[arg(long, value_enum)]
    param: SweepParam,
    /// Comma-separated values.
    #[arg(long, allow_hyphen_values = true)]
    values: String,
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long)]
    no_timing: bool,
}

#[derive(Debug, Args)]
struct ExportArgs {
    #[command(flatten)]
    source: Source,
    #[command(flatten)]
    overrides: Overrides,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Error)]
enum CliError {
    #[error("cannot read `{path}`: {source}")]
    Read { path: PathBuf, source: io::Error },
    #[error("{0}")]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Usage(String),
    #[error("simulation `{name}` aborted: {source}")]
    Simulation { name: String, source: clik_sdp::Error },
    #[error("cannot write `{path}`: {message}")]
    Write { path: PathBuf, message: String },
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Read { .. } | CliError::Config(_) | CliError::Usage(_) => 2,
            CliError::Simulation { .. } => 3,
            CliError::Write { .. } => 1,
        }
    }
}

fn write_error(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Write {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

fn load(source: &Source) -> Result<ScenarioConfig, CliError> {
    match (&source.scenario, &source.builtin) {
        (Some(path), _) => {
            let text = fs::read_to_string(path).map_err(|e| CliError::Read {
                path: path.clone(),
                source: e,
            })?;
            Ok(ScenarioConfig::from_toml(&text)?)
        }
        (None, Some(name)) => Ok(ScenarioConfig::builtin(name)?),
        (None, None) => unreachable!("clap requires one source"),
    }
}

fn env_override<T: std::str::FromStr>(key: &str, slot: &mut T) -> Result<(), CliError> {
    if let Ok(raw) = std::env::var(key) {
        *slot = raw
            .trim()
            .parse()
            .map_err(|_| CliError::Usage(format!("environment variable {key}: cannot parse `{raw}`")))?;
    }
    Ok(())
}

fn apply(cfg: &mut ScenarioConfig, o: &Overrides) -> Result<(), CliError> {
    if let Some(mode) = o.mode {
        cfg.controller.mode = match mode {
            Mode::Sdp => ModeConfig::Sdp,
            Mode::Fixed => ModeConfig::Fixed,
        };
    }
    if let Some(v) = o.beta_tilde {
        cfg.controller.beta_tilde = v;
    }
    if let Some(v) = o.dt {
        cfg.sim.dt = v;
    }
    if let Some(v) = o.duration {
        cfg.sim.duration = v;
    }
    if let Some(v) = o.qd_limit {
        cfg.set_velocity_limit(v);
    }
    let solver = &mut cfg.controller.solver;
    env_override("CLIK_SDP_FEAS_TOL", &mut solver.feas_tol)?;
    env_override("CLIK_SDP_OBJ_TOL", &mut solver.obj_tol)?;
    env_override("CLIK_SDP_MAX_ITER", &mut solver.max_iterations)?;
    Ok(())
}

/// Builds the scenario, warning when the stack cannot be fully satisfied.
fn scenario(cfg: &ScenarioConfig) -> Result<Scenario, CliError> {
    let sc = cfg.to_scenario()?;
    if sc.stack.exceeds_dof(sc.model.dof()) {
        eprintln!(
            "warning: `{}` stacks {} task dimensions on {} joints; lower-priority tasks cannot all converge",
            sc.name,
            sc.stack.total_dim(),
            sc.model.dof()
        );
    }
    Ok(sc)
}

fn simulate(scenario: &Scenario) -> Result<clik_sdp::SimTrace, CliError> {
    run(scenario).map_err(|e| CliError::Simulation {
        name: scenario.name.clone(),
        source: e,
    })
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path).map(BufWriter::new).map_err(|e| write_error(path, e))
}

fn cmd_run(args: &RunArgs) -> Result<(), CliError> {
    let mut cfg = load(&args.source)?;
    apply(&mut cfg, &args.overrides)?;
    let scenario = scenario(&cfg)?;
    let start = Instant::now();
    let trace = simulate(&scenario)?;
    let wall = start.elapsed().as_secs_f64();
    if let Some(path) = &args.out {
        output::write_trace(&trace, create(path)?, !args.no_timing).map_err(|e| write_error(path, e))?;
    }
    output::print_summary(&trace, scenario.controller.beta_tilde, wall);
    Ok(())
}

fn parse_values(raw: &str) -> Result<Vec<f64>, CliError> {
    let values = raw
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<f64>()
                .map_err(|_| CliError::Usage(format!("--values: `{s}` is not a number")))
        })
        .collect::<Result<Vec<_>, _>>()?;
    if values.is_empty() {
        return Err(CliError::Usage("--values: the list is empty".into()));
    }
    Ok(values)
}

fn cmd_sweep(args: &SweepArgs) -> Result<(), CliError> {
    let values = parse_values(&args.values)?;
    let mut base = load(&args.source)?;
    apply(&mut base, &args.overrides)?;
    let scenarios = values
        .iter()
        .map(|v| {
            let mut cfg = base.clone();
            match args.param {
                SweepParam::BetaTilde => cfg.controller.beta_tilde = *v,
                SweepParam::Dt => cfg.sim.dt = *v,
                SweepParam::QdLimit => cfg.set_velocity_limit(*v),
            }
            scenario(&cfg)
        })
        .collect::<Result<Vec<_>, _>>()?;

    fs::create_dir_all(&args.out_dir).map_err(|e| write_error(&args.out_dir, e))?;
    let start = Instant::now();
    let traces = thread::scope(|s| {
        let handles: Vec<_> = scenarios.iter().map(|sc| s.spawn(move || simulate(sc))).collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("simulation thread panicked"))
            .collect::<Result<Vec<_>, _>>()
    })?;

    let param = args.param.name();
    let mut rows = Vec::with_capacity(values.len());
    for ((value, trace), sc) in values.iter().zip(traces).zip(&scenarios) {
        let path = args.out_dir.join(format!("{}_{param}_{value}.csv", sc.name));
        output::write_trace(&trace, create(&path)?, !args.no_timing).map_err(|e| write_error(&path, e))?;
        println!(
            "{param} = {value}: final errors [{}], max margin {:.6e} -> {}",
            trace
                .last()
                .err_norms
                .iter()
                .map(|e| format!("{e:.6e}"))
                .collect::<Vec<_>>()
                .join(", "),
            trace.max_margin(),
            path.display()
        );
        rows.push(SweepRow {
            value: *value,
            trace,
            beta_tilde: sc.controller.beta_tilde,
        });
    }
    let summary = args.out_dir.join("summary.csv");
    output::write_sweep_summary(param, &rows, create(&summary)?).map_err(|e| write_error(&summary, e))?;
    println!("summary: {}", summary.display());
    println!("wall time: {:.3} s", start.elapsed().as_secs_f64());
    Ok(())
}

fn cmd_validate(source: &Source) -> Result<(), CliError> {
    let cfg = load(source)?;
    scenario(&cfg)?;
    print!("{}", cfg.to_toml());
    Ok(())
}

fn cmd_export(args: &ExportArgs) -> Result<(), CliError> {
    let mut cfg = load(&args.source)?;
    apply(&mut cfg, &args.overrides)?;
    let sc = scenario(&cfg)?;
    let problem = build_state(&sc.stack, &sc.model, &sc.q0)
        .and_then(|state| formulate(&state, sc.model.qd_upper(), sc.model.qd_lower(), &sc.gain_params()))
        .map_err(|e| CliError::Simulation {
            name: sc.name.clone(),
            source: e,
        })?;
    match &args.out {
        Some(path) => problem.write_sdpa(create(path)?).map_err(|e| write_error(path, e)),
        None => problem
            .write_sdpa(io::stdout().lock())
            .map_err(|e| write_error(Path::new("-"), e)),
    }
}

fn cmd_plot_script(out: Option<&Path>) -> Result<(), CliError> {
    match out {
        Some(path) => fs::write(path, output::PLOT_SCRIPT).map_err(|e| write_error(path, e)),
        None => {
            print!("{}", output::PLOT_SCRIPT);
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Validate(s) => cmd_validate(s),
        Command::Export(a) => cmd_export(a),
        Command::PlotScript { out } => cmd_plot_script(out.as_deref()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
