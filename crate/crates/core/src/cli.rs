//! Command-line front end.
//!
//! Exit codes: 0 success, 2 usage or invalid input, 3 solver failure,
//! 4 I/O failure. Every JSON number written here is rounded to 12
//! significant digits so repeated runs are byte-identical.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use crate::control::{ConverterConfig, Mode, Strategy};
use crate::equilibrium::{
    closed_form_aligned, existence_conditions, solve_saturated_equilibrium, EquilibriumSolution,
    SaturatedEquilibriumProblem,
};
use crate::error::Error;
use crate::network::{augment_with_virtual_impedances, CMatrix, KronReducedNetwork, SolveMode};
use crate::phasor::{Phasor, RotatedSetpoint};
use crate::scenario::{load_scenario, ParsedScenario};
use crate::sim::{classify, run_detailed, ScenarioSpec, TimeSeriesLog};
use crate::stability::{check_microgrid, check_multi_grid, check_single, StabilityReport, Variant};

/// Overrides the default output directory of `simulate`.
pub const OUT_DIR_ENV: &str = "GFMSAT_OUT_DIR";
const DEFAULT_OUT_DIR: &str = "out";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitCode {
    Success = 0,
    Usage = 2,
    Solver = 3,
    Io = 4,
}

#[derive(Debug)]
pub struct CliError {
    pub code: ExitCode,
    pub message: String,
}

impl CliError {
    fn usage(message: impl Into<String>) -> Self {
        Self { code: ExitCode::Usage, message: message.into() }
    }

    fn io(path: &Path, e: std::io::Error) -> Self {
        Self { code: ExitCode::Io, message: format!("{}: {e}", path.display()) }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Io(_) => ExitCode::Io,
            Error::Schema { .. }
            | Error::Input(_)
            | Error::Reference(_)
            | Error::Domain(_)
            | Error::Model(_)
            | Error::Event(_)
            | Error::Applicability(_) => ExitCode::Usage,
            Error::SingularReduction { .. }
            | Error::SingularAugmentation
            | Error::NonConvergence { .. }
            | Error::Singular(_)
            | Error::Numeric(_)
            | Error::Simulation { .. } => ExitCode::Solver,
        };
        Self { code, message: e.to_string() }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "gfmsat", version, about = "Grid-forming converter saturation and fault ride-through toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run a time-domain simulation and classify the trajectory.
    Simulate(SimulateArgs),
    /// Solve the saturated steady state of a single grid-connected converter.
    Equilibrium(EquilibriumArgs),
    /// Evaluate a sufficient transient-stability condition.
    Stability(StabilityArgs),
    /// Classify an existing time-series log.
    Classify(ClassifyArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Exact,
    Equivalent,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ConditionArg {
    Single,
    Multi,
    Microgrid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum VariantArg {
    Exact,
    VStarRelaxed,
    NoVoltageInfo,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Scenario file, or the name of a builtin fixture.
    #[arg(long)]
    pub scenario: String,
    /// Strategy applied to every converter (overrides the file).
    #[arg(long, value_parser = parse_strategy)]
    pub strategy: Option<Strategy>,
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
    #[arg(long)]
    pub dt: Option<f64>,
    #[arg(long = "t-end")]
    pub t_end: Option<f64>,
    /// Output directory [default: $GFMSAT_OUT_DIR, else ./out].
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EquilibriumArgs {
    #[arg(long)]
    pub scenario: String,
    /// Grid voltage magnitude (p.u.) [default: the scenario's grid voltage].
    #[arg(long = "grid-voltage")]
    pub grid_voltage: Option<f64>,
}

#[derive(Debug, Args)]
pub struct StabilityArgs {
    #[arg(long)]
    pub scenario: String,
    #[arg(long, value_enum)]
    pub condition: ConditionArg,
    /// Right-hand-side variant for the grid-connected conditions
    /// [default: exact for one converter, no-voltage-info otherwise].
    #[arg(long, value_enum)]
    pub variant: Option<VariantArg>,
    /// Grid voltage used for the single-converter steady state.
    #[arg(long = "grid-voltage")]
    pub grid_voltage: Option<f64>,
    /// Smallest internal voltage magnitude `|v̂_μs|` over all converters.
    #[arg(long = "v-hat-min")]
    pub v_hat_min: Option<f64>,
    /// Steady-state degree of saturation `μ_s`.
    #[arg(long = "mu-s")]
    pub mu_s: Option<f64>,
    /// Largest steady-state angle difference (rad), microgrid only.
    #[arg(long = "delta-bar")]
    pub delta_bar: Option<f64>,
    /// Degree-of-saturation bound, microgrid only.
    #[arg(long = "mu-bar")]
    pub mu_bar: Option<f64>,
}

#[derive(Debug, Args)]
pub struct ClassifyArgs {
    /// CSV log written by `simulate`.
    #[arg(long)]
    pub log: PathBuf,
    #[arg(long)]
    pub scenario: String,
}

fn parse_strategy(s: &str) -> std::result::Result<Strategy, String> {
    Strategy::from_tag(s).ok_or_else(|| {
        let tags: Vec<&str> = [Strategy::SaturationInformed, Strategy::ConventionalWithLimiter, Strategy::NoLimiter]
            .iter()
            .map(|s| s.tag())
            .collect();
        format!("unknown strategy '{s}' (expected one of: {})", tags.join(", "))
    })
}

/// Parses `args` (program name first), runs the command and returns the
/// exit code. Reports go to `out`, diagnostics to `err`.
pub fn main_with<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { ExitCode::Usage } else { ExitCode::Success };
            let _ = if e.use_stderr() { write!(err, "{e}") } else { write!(out, "{e}") };
            return code as i32;
        }
    };
    match dispatch(cli.command, out) {
        Ok(()) => ExitCode::Success as i32,
        Err(e) => {
            let _ = writeln!(err, "error: {}", e.message);
            e.code as i32
        }
    }
}

fn dispatch(cmd: Command, out: &mut dyn Write) -> CliResult<()> {
    let report = match cmd {
        Command::Simulate(a) => simulate(&a)?,
        Command::Equilibrium(a) => equilibrium(&a)?,
        Command::Stability(a) => stability(&a)?,
        Command::Classify(a) => classify_cmd(&a)?,
    };
    writeln!(out, "{}", to_json(report)).map_err(|e| CliError { code: ExitCode::Io, message: e.to_string() })
}

/// Rounds every non-integer number to 12 significant digits.
pub fn round_floats(v: &mut Value) {
    match v {
        Value::Number(n) if !(n.is_i64() || n.is_u64()) => {
            if let Some(x) = n.as_f64() {
                let r: f64 = format!("{x:.11e}").parse().expect("formatted float parses");
                *v = json!(r);
            }
        }
        Value::Array(a) => a.iter_mut().for_each(round_floats),
        Value::Object(m) => m.values_mut().for_each(round_floats),
        _ => {}
    }
}

fn to_json(mut v: Value) -> String {
    round_floats(&mut v);
    serde_json::to_string_pretty(&v).expect("JSON values serialize")
}

fn load(scenario: &str) -> CliResult<ParsedScenario> {
    load_scenario(scenario).map_err(|e| match e {
        Error::Io(io) => CliError::io(Path::new(scenario), io),
        other => other.into(),
    })
}

fn write_file(path: &Path, contents: &[u8]) -> CliResult<()> {
    fs::write(path, contents).map_err(|e| CliError::io(path, e))
}

fn output_dir(flag: Option<&Path>) -> PathBuf {
    flag.map(Path::to_path_buf)
        .or_else(|| std::env::var_os(OUT_DIR_ENV).filter(|s| !s.is_empty()).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR))
}

fn simulate(a: &SimulateArgs) -> CliResult<Value> {
    let parsed = load(&a.scenario)?;
    let mut spec = parsed.spec;
    if let Some(s) = a.strategy {
        spec = spec.with_strategy(s);
    }
    if let Some(m) = a.mode {
        spec.solver.mode = match m {
            ModeArg::Exact => SolveMode::ExactLimiter,
            ModeArg::Equivalent => SolveMode::EquivalentCircuit,
        };
    }
    if let Some(dt) = a.dt {
        spec.solver.dt = dt;
        spec.solver.log_rate = spec.solver.log_rate.min(1.0 / dt);
    }
    if let Some(t) = a.t_end {
        spec.solver.t_end = t;
    }
    spec.validate()?;

    let dir = output_dir(a.out.as_deref());
    fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
    let run = run_detailed(&spec)?;

    let stem = match a.strategy {
        Some(s) => format!("{}-{}", spec.name, s.tag()),
        None => spec.name.clone(),
    };
    let mut csv = Vec::new();
    run.log.write_csv(&mut csv, &spec.outputs)?;
    write_file(&dir.join(format!("{stem}.csv")), &csv)?;

    let strategy = uniform_strategy(&spec).map(|s| s.tag());
    let expected = strategy.and_then(|t| spec.expected.get(t)).copied();
    let peak_current: Vec<f64> = run.log.converters.iter().map(|c| c.imag.iter().copied().fold(0.0, f64::max)).collect();
    let verdict = json!({
        "scenario": spec.name,
        "strategy": strategy,
        "verdict": run.verdict,
        "peak_current": peak_current,
        "expected": expected,
        "matches_expected": expected.map(|e| e == run.verdict.classification),
    });
    write_file(&dir.join(format!("{stem}.verdict.json")), to_json(verdict.clone()).as_bytes())?;

    let meta = json!({
        "package": env!("CARGO_PKG_NAME"),
        "version": env!("CARGO_PKG_VERSION"),
        "scenario": serde_json::to_value(&spec).expect("scenario serializes"),
        "defaults_applied": parsed.provenance,
        "run": run.info,
    });
    write_file(&dir.join(format!("{stem}.run.json")), to_json(meta).as_bytes())?;
    Ok(verdict)
}

fn uniform_strategy(spec: &ScenarioSpec) -> Option<Strategy> {
    let first = spec.converters.first()?.config.strategy;
    spec.converters.iter().all(|c| c.config.strategy == first).then_some(first)
}

/// Saturated ride-through parameters on the system base.
fn saturated_system_config(cfg: &ConverterConfig) -> ConverterConfig {
    let mut c = cfg.clone();
    c.strategy = Strategy::SaturationInformed;
    c.effective(Mode::Saturated).to_system_base()
}

fn reduced(spec: &ScenarioSpec) -> CliResult<KronReducedNetwork> {
    let nodes: Vec<&str> = spec.converters.iter().map(|c| c.node.as_str()).collect();
    let grid = spec.grid.as_ref().map(|g| g.node.as_str());
    Ok(KronReducedNetwork::from_model(&spec.network, &nodes, grid)?)
}

struct SingleSetup {
    cfg: ConverterConfig,
    z_g: Phasor,
    problem: SaturatedEquilibriumProblem,
}

fn single_setup(spec: &ScenarioSpec, grid_voltage: Option<f64>) -> CliResult<SingleSetup> {
    let grid = spec
        .grid
        .as_ref()
        .ok_or_else(|| CliError::usage("the single-converter steady state needs a grid-connected scenario"))?;
    if spec.converters.len() != 1 {
        return Err(CliError::usage(format!(
            "the single-converter steady state needs exactly one converter, found {}",
            spec.converters.len()
        )));
    }
    let y_c = reduced(spec)?.y_c()[(0, 0)];
    if !(y_c.norm() > 0.0) {
        return Err(CliError::usage("converter terminal is not connected to the grid"));
    }
    let z_g = y_c.inv();
    let cfg = saturated_system_config(&spec.converters[0].config);
    let v_g = grid_voltage.unwrap_or(grid.model.v_g);
    let problem = SaturatedEquilibriumProblem::from_config(&cfg, z_g, v_g, grid.model.omega_delta(), spec.base.frequency_base)?;
    Ok(SingleSetup { cfg, z_g, problem })
}

fn equilibrium(a: &EquilibriumArgs) -> CliResult<Value> {
    let spec = load(&a.scenario)?.spec;
    let s = single_setup(&spec, a.grid_voltage)?;
    let solution = solve_saturated_equilibrium(&s.problem)?;
    let closed_form: Option<EquilibriumSolution> = s
        .problem
        .closed_form_applicable()
        .then(|| closed_form_aligned(&s.problem).ok())
        .flatten();
    Ok(json!({
        "scenario": spec.name,
        "converter": spec.converters[0].id,
        "grid_voltage": s.problem.v_g,
        "z_g": s.z_g,
        "problem": s.problem,
        "solution": solution,
        "closed_form": closed_form,
        "existence": existence_conditions(&s.problem, s.cfg.z_v, Some(s.z_g)),
    }))
}

fn variant_from(arg: VariantArg, v_star: f64, mu_s: Option<f64>) -> CliResult<Variant> {
    Ok(match arg {
        VariantArg::Exact => {
            let mu = mu_s.ok_or_else(|| CliError::usage("--variant exact needs --mu-s"))?;
            Variant::Exact { v_mu_star: mu * v_star }
        }
        VariantArg::VStarRelaxed => Variant::VStarRelaxed { v_star },
        VariantArg::NoVoltageInfo => Variant::NoVoltageInfo,
    })
}

/// Converter setpoints and a common gain `α_ref` such that
/// `max_i(ρ_i + α_i) = max_i(ρ'_i) + α_ref`; `α_ref` is the smallest gain,
/// which keeps every voltage term conservative.
fn common_gain(cfgs: &[ConverterConfig]) -> CliResult<(Vec<RotatedSetpoint>, f64, f64)> {
    let varphi = cfgs[0].varphi;
    if cfgs.iter().any(|c| (c.varphi - varphi).abs() > 1e-12) {
        return Err(CliError::usage("the network conditions need a common rotation angle varphi"));
    }
    let alpha = cfgs.iter().map(|c| c.alpha).fold(f64::INFINITY, f64::min);
    let setpoints = cfgs
        .iter()
        .map(|c| {
            let mut s = c.rotated_setpoint()?;
            s.rho_phi += c.alpha - alpha;
            Ok(s)
        })
        .collect::<crate::Result<Vec<_>>>()?;
    Ok((setpoints, alpha, varphi))
}

fn stability(a: &StabilityArgs) -> CliResult<Value> {
    let spec = load(&a.scenario)?.spec;
    let cfgs: Vec<ConverterConfig> = spec.converters.iter().map(|c| saturated_system_config(&c.config)).collect();
    let n = cfgs.len();
    let v_star = cfgs.iter().map(|c| c.v_star).fold(f64::INFINITY, f64::min);

    let report: StabilityReport = match a.condition {
        ConditionArg::Single | ConditionArg::Multi => {
            if spec.is_islanded() {
                return Err(CliError::usage("grid-connected condition requested for an islanded scenario"));
            }
            if a.condition == ConditionArg::Single && n != 1 {
                return Err(CliError::usage(format!("--condition single needs one converter, found {n}")));
            }
            let steady = if n == 1 && (a.v_hat_min.is_none() || a.mu_s.is_none()) {
                let s = single_setup(&spec, a.grid_voltage)?;
                let sol = solve_saturated_equilibrium(&s.problem)?;
                sol.exists.then_some((sol.v_hat_mu_s, sol.mu_s))
            } else {
                None
            };
            let v_hat = a.v_hat_min.or(steady.map(|s| s.0));
            let mu_s = a.mu_s.or(steady.map(|s| s.1));
            let default_variant = if n == 1 { VariantArg::Exact } else { VariantArg::NoVoltageInfo };
            let variant = variant_from(a.variant.unwrap_or(default_variant), v_star, mu_s)?;
            let v_hat = match variant {
                Variant::NoVoltageInfo => v_hat.unwrap_or(0.0),
                _ => v_hat.ok_or_else(|| CliError::usage("this variant needs --v-hat-min"))?,
            };
            let y_c = reduced(&spec)?.y_c();
            let z_v: Vec<Phasor> = cfgs.iter().map(|c| c.z_v).collect();
            let y_aug = augment_with_virtual_impedances(&y_c, &z_v)?;
            let (setpoints, alpha, varphi) = common_gain(&cfgs)?;
            if a.condition == ConditionArg::Single {
                check_single(&setpoints[0], alpha, v_hat, y_aug[(0, 0)], varphi, variant)
            } else {
                check_multi_grid(&setpoints, alpha, v_hat, &y_aug, varphi, variant)?
            }
        }
        ConditionArg::Microgrid => {
            if !spec.is_islanded() {
                return Err(CliError::usage("microgrid condition requested for a grid-connected scenario"));
            }
            if n < 2 {
                return Err(CliError::usage("the microgrid condition needs at least two converters"));
            }
            let delta_bar = a.delta_bar.ok_or_else(|| CliError::usage("--condition microgrid needs --delta-bar"))?;
            let mu_bar = a.mu_bar.ok_or_else(|| CliError::usage("--condition microgrid needs --mu-bar"))?;
            let y_m: CMatrix = reduced(&spec)?.y_c();
            let z_v: Vec<Phasor> = cfgs.iter().map(|c| c.z_v).collect();
            let y_aug = augment_with_virtual_impedances(&y_m, &z_v)?;
            let (setpoints, alpha, varphi) = common_gain(&cfgs)?;
            check_microgrid(&setpoints, alpha, delta_bar, mu_bar, &y_aug, varphi)?
        }
    };
    Ok(json!({
        "scenario": spec.name,
        "converters": spec.converters.iter().map(|c| c.id.as_str()).collect::<Vec<_>>(),
        "report": report,
    }))
}

fn classify_cmd(a: &ClassifyArgs) -> CliResult<Value> {
    let spec = load(&a.scenario)?.spec;
    let file = fs::File::open(&a.log).map_err(|e| CliError::io(&a.log, e))?;
    let log = TimeSeriesLog::read_csv(file, spec.is_islanded())?;
    let verdict = classify(&log, &spec)?;
    Ok(json!({ "scenario": spec.name, "verdict": verdict }))
}
