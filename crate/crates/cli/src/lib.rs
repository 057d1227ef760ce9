//! Command-line front end for `occbound`.
//!
//! Exit codes: 0 success, 1 verification failure, 2 input error,
//! 3 numerical failure.

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use occbound::bounds::{occupation_bound_at, resolvent_bound};
use occbound::control::{validate_admissible, FeedbackControl, SampleGrid, PRESET_NAMES};
use occbound::integral::{path_integral_bound, time_integral_bound};
use occbound::sim::{bias_budget, estimate_occupation_both, Noise};
use occbound::verify::{
    all_passed, run_analytic_suite, run_sharpness_experiment, run_validity_experiment,
    AnalyticGrid, AnalyticTolerances, CheckReport, Measure, SharpnessSpec, ValiditySpec,
};
use occbound::{CoefficientBox, Error, SimConfig};

pub mod output;
pub mod scenario;

use output::{emit, Format, Table};
use scenario::{
    builtin_control, load_control_file, load_profile, load_query_grid, LoadedProfile, Scenario,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_VERIFY_FAILED: i32 = 1;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

const DEFAULT_SEED: u64 = 20_240_601;
const DEFAULT_TOL: f64 = 1e-10;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Input(String),
    #[error("{0}")]
    Numerical(String),
    #[error("output: {0}")]
    Io(#[from] std::io::Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::ToleranceNotMet { .. } | Error::NonFiniteState { .. } => {
                CliError::Numerical(e.to_string())
            }
            _ => CliError::Input(e.to_string()),
        }
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) | CliError::Io(_) => EXIT_INPUT,
            CliError::Numerical(_) => EXIT_NUMERICAL,
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "occbound",
    version,
    about = "Sharp bounds on expected occupation densities of controlled diffusions"
)]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Scenario file (TOML); flags override its values
    #[arg(long, global = true)]
    pub scenario: Option<PathBuf>,
    /// Random seed for Monte Carlo commands
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Absolute quadrature tolerance
    #[arg(long, global = true)]
    pub tol: Option<f64>,
    #[arg(long, global = true, value_enum)]
    pub format: Option<Format>,
    /// Write the table here instead of stdout
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads (results do not depend on it)
    #[arg(long, global = true, env = "OCCBOUND_THREADS")]
    pub threads: Option<usize>,
}

#[derive(Debug, Args, Clone, Default)]
pub struct BoxArgs {
    #[arg(long)]
    pub a: Option<f64>,
    #[arg(long)]
    pub b: Option<f64>,
    #[arg(long)]
    pub k: Option<f64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Evaluate G(x, y, T)
    Bound {
        #[command(flatten)]
        bx: BoxArgs,
        #[arg(long, allow_hyphen_values = true)]
        x: Option<f64>,
        #[arg(long, allow_hyphen_values = true)]
        y: Option<f64>,
        #[arg(long = "T")]
        horizon: Option<f64>,
        /// CSV with columns y,T (and optionally x)
        #[arg(long)]
        grid: Option<PathBuf>,
    },
    /// Evaluate the exponentially stopped value Q_λ(r)
    Resolvent {
        #[command(flatten)]
        bx: BoxArgs,
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        r: Vec<f64>,
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        lambda: Vec<f64>,
    },
    /// Bound E ∫ f(X_s) ds (or E ∫ f(s, X_s) ds) for a tabulated profile
    IntegralBound {
        #[command(flatten)]
        bx: BoxArgs,
        /// CSV with header `y,f` or `t,y,f`
        #[arg(long)]
        profile: Option<PathBuf>,
        #[arg(long, allow_hyphen_values = true)]
        x: Option<f64>,
        #[arg(long = "T")]
        horizon: Option<f64>,
    },
    /// Monte Carlo occupation-density estimate for a feedback control
    Simulate {
        #[command(flatten)]
        bx: BoxArgs,
        /// Built-in control
        #[arg(long)]
        control: Option<String>,
        /// Control definition file (TOML)
        #[arg(long)]
        control_file: Option<PathBuf>,
        /// Mollification parameter of the extremal control
        #[arg(long = "M")]
        m: Option<u32>,
        /// Level y
        #[arg(long, allow_hyphen_values = true)]
        y: Option<f64>,
        #[arg(long, allow_hyphen_values = true)]
        x0: Option<f64>,
        #[arg(long = "T")]
        horizon: Option<f64>,
        #[arg(long)]
        dt: Option<f64>,
        #[arg(long)]
        paths: Option<u64>,
        /// Window parameter N (window half-width 1/N)
        #[arg(long = "N")]
        window_n: Option<f64>,
        #[arg(long, value_enum)]
        estimator: Option<EstimatorChoice>,
    },
    /// Run verification suites; exit 0 iff every check passes
    Verify {
        /// Restrict to these suites
        #[arg(long, value_enum, value_delimiter = ',')]
        only: Vec<Suite>,
        /// Treat under-resolution warnings as failures
        #[arg(long)]
        strict: bool,
        /// Monte Carlo paths per estimate
        #[arg(long)]
        paths: Option<u64>,
        #[arg(long)]
        dt: Option<f64>,
        #[arg(long = "N")]
        window_n: Option<f64>,
        /// Mollification parameters for the sharpness suite
        #[arg(long = "M", value_delimiter = ',')]
        ms: Vec<u32>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum EstimatorChoice {
    Window,
    LocalTime,
    Both,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Suite {
    Analytic,
    Validity,
    Sharpness,
}

/// Parses `args` and runs the command; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_INPUT } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .format_timestamp(None)
        .try_init();
    match execute(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

struct Settings {
    scenario: Scenario,
    seed: u64,
    tol: f64,
    format: Format,
    out: Option<PathBuf>,
}

fn execute(cli: &Cli) -> Result<i32, CliError> {
    let scenario = match &cli.common.scenario {
        Some(p) => Scenario::load(p)?,
        None => Scenario::default(),
    };
    let settings = Settings {
        seed: cli.common.seed.or(scenario.seed).unwrap_or(DEFAULT_SEED),
        tol: cli.common.tol.or(scenario.tol).unwrap_or(DEFAULT_TOL),
        format: cli.common.format.or(scenario.format).unwrap_or_default(),
        out: cli.common.out.clone(),
        scenario,
    };
    if !(settings.tol > 0.0) {
        return Err(CliError::Input(format!(
            "--tol must be > 0, got {}",
            settings.tol
        )));
    }
    let pool = match cli.common.threads {
        Some(0) => return Err(CliError::Input("--threads must be >= 1".into())),
        Some(n) => rayon::ThreadPoolBuilder::new().num_threads(n).build(),
        None => rayon::ThreadPoolBuilder::new().build(),
    }
    .map_err(|e| CliError::Input(format!("cannot start worker pool: {e}")))?;
    pool.install(|| dispatch(&cli.command, &settings))
}

fn dispatch(cmd: &Command, s: &Settings) -> Result<i32, CliError> {
    match cmd {
        Command::Bound {
            bx,
            x,
            y,
            horizon,
            grid,
        } => cmd_bound(s, bx, *x, *y, *horizon, grid.as_ref()),
        Command::Resolvent { bx, r, lambda } => cmd_resolvent(s, bx, r, lambda),
        Command::IntegralBound {
            bx,
            profile,
            x,
            horizon,
        } => cmd_integral_bound(s, bx, profile.as_ref(), *x, *horizon),
        Command::Simulate {
            bx,
            control,
            control_file,
            m,
            y,
            x0,
            horizon,
            dt,
            paths,
            window_n,
            estimator,
        } => cmd_simulate(
            s,
            bx,
            SimulateArgs {
                control: control.clone(),
                control_file: control_file.clone(),
                m: *m,
                y: *y,
                x0: *x0,
                horizon: *horizon,
                dt: *dt,
                paths: *paths,
                window_n: *window_n,
                estimator: *estimator,
            },
        ),
        Command::Verify {
            only,
            strict,
            paths,
            dt,
            window_n,
            ms,
        } => cmd_verify(s, only, *strict, *paths, *dt, *window_n, ms),
    }
}

fn coefficient_box(s: &Settings, bx: &BoxArgs) -> Result<CoefficientBox, CliError> {
    s.scenario.coefficient_box(bx.a, bx.b, bx.k)
}

fn cmd_bound(
    s: &Settings,
    bx: &BoxArgs,
    x: Option<f64>,
    y: Option<f64>,
    horizon: Option<f64>,
    grid: Option<&PathBuf>,
) -> Result<i32, CliError> {
    let bxv = coefficient_box(s, bx)?;
    let q = s.scenario.query.clone().unwrap_or_default();
    let x = x.or(q.x);
    let points: Vec<(f64, f64, f64)> = if let Some(path) = grid {
        load_query_grid(path, x.or(Some(0.0)))?
    } else if let (None, None, Some(pts)) = (y, horizon, &q.points) {
        let x = x.unwrap_or(0.0);
        pts.iter().map(|&[y, t]| (x, y, t)).collect()
    } else {
        let need = |v: Option<f64>, name: &str| {
            v.ok_or_else(|| CliError::Input(format!("missing --{name}")))
        };
        vec![(
            need(x, "x")?,
            need(y.or(q.y), "y")?,
            need(horizon.or(q.horizon), "T")?,
        )]
    };
    let mut table = Table::new(&["x", "y", "T", "G", "error_estimate"]);
    for (x, y, t) in points {
        if !(x.is_finite() && y.is_finite()) {
            return Err(CliError::Input(format!(
                "x and y must be finite, got {x}, {y}"
            )));
        }
        let rep = occupation_bound_at(&bxv, (x - y).abs(), t, s.tol)?;
        table.push(vec![
            x.into(),
            y.into(),
            t.into(),
            rep.value.into(),
            rep.abs_error_estimate.into(),
        ]);
    }
    emit(&table, s.format, s.out.as_deref())?;
    Ok(EXIT_OK)
}

fn cmd_resolvent(s: &Settings, bx: &BoxArgs, r: &[f64], lambda: &[f64]) -> Result<i32, CliError> {
    let bxv = coefficient_box(s, bx)?;
    let spec = s.scenario.resolvent.clone().unwrap_or_default();
    let rs = if r.is_empty() {
        spec.r.unwrap_or_default()
    } else {
        r.to_vec()
    };
    let ls = if lambda.is_empty() {
        spec.lambda.unwrap_or_default()
    } else {
        lambda.to_vec()
    };
    if rs.is_empty() || ls.is_empty() {
        return Err(CliError::Input(
            "need at least one --r and one --lambda".into(),
        ));
    }
    let mut table = Table::new(&["r", "lambda", "Q"]);
    for &lam in &ls {
        for &r in &rs {
            let q = resolvent_bound(&bxv, r, lam)?;
            table.push(vec![r.into(), lam.into(), q.into()]);
        }
    }
    emit(&table, s.format, s.out.as_deref())?;
    Ok(EXIT_OK)
}

fn cmd_integral_bound(
    s: &Settings,
    bx: &BoxArgs,
    profile: Option<&PathBuf>,
    x: Option<f64>,
    horizon: Option<f64>,
) -> Result<i32, CliError> {
    let bxv = coefficient_box(s, bx)?;
    let spec = s.scenario.profile.clone().unwrap_or_default();
    let path = match (profile, &spec.file) {
        (Some(p), _) => p.clone(),
        (None, Some(p)) => s.scenario.resolve(p),
        (None, None) => return Err(CliError::Input("missing --profile".into())),
    };
    let x = x.or(spec.x).unwrap_or(0.0);
    let t = horizon
        .or(spec.horizon)
        .ok_or_else(|| CliError::Input("missing --T".into()))?;
    let (kind, label, rep) = match load_profile(&path)? {
        LoadedProfile::Space(f) => (
            "path",
            f.label().to_string(),
            path_integral_bound(&bxv, x, t, &f, s.tol)?,
        ),
        LoadedProfile::SpaceTime(f) => (
            "time",
            f.label().to_string(),
            time_integral_bound(&bxv, x, t, &f, s.tol)?,
        ),
    };
    let mut table = Table::new(&["profile", "kind", "x", "T", "bound", "error_estimate"]);
    table.push(vec![
        label.into(),
        kind.into(),
        x.into(),
        t.into(),
        rep.value.into(),
        rep.abs_error_estimate.into(),
    ]);
    emit(&table, s.format, s.out.as_deref())?;
    Ok(EXIT_OK)
}

struct SimulateArgs {
    control: Option<String>,
    control_file: Option<PathBuf>,
    m: Option<u32>,
    y: Option<f64>,
    x0: Option<f64>,
    horizon: Option<f64>,
    dt: Option<f64>,
    paths: Option<u64>,
    window_n: Option<f64>,
    estimator: Option<EstimatorChoice>,
}

/// Admissibility grid around the start and the level.
fn admissibility_grid(bx: &CoefficientBox, x0: f64, y: f64, horizon: f64) -> SampleGrid {
    let reach = 6.0 * bx.b() * horizon.sqrt() + bx.max_drift() * horizon + 1.0;
    let lo = x0.min(y) - reach;
    let hi = x0.max(y) + reach;
    SampleGrid::uniform(horizon, 33, lo, hi, 4001)
        .with_state_refinement(y, 1e-6)
        .with_state_refinement(x0, 1e-6)
}

fn check_admissible(
    bx: &CoefficientBox,
    ctrl: &FeedbackControl,
    grid: &SampleGrid,
) -> Result<(), CliError> {
    let rep = validate_admissible(bx, ctrl, grid)?;
    if rep.passed {
        return Ok(());
    }
    let mut msg = format!(
        "control `{}` is not admissible for a={}, b={}, k={}: {} of {} grid points violate the box (worst excess {:.3e})",
        rep.label,
        bx.a(),
        bx.b(),
        bx.k(),
        rep.violation_count,
        rep.points_checked,
        rep.worst_excess
    );
    for v in &rep.violations {
        msg.push_str(&format!(
            "\n  t={:.6} x={:.6}: beta={:.6} sigma={:.6} (excess {:.3e})",
            v.t, v.x, v.beta, v.sigma, v.excess
        ));
    }
    if rep.violation_count > rep.violations.len() {
        msg.push_str(&format!(
            "\n  ... {} more",
            rep.violation_count - rep.violations.len()
        ));
    }
    Err(CliError::Input(msg))
}

fn cmd_simulate(s: &Settings, bx: &BoxArgs, a: SimulateArgs) -> Result<i32, CliError> {
    let bxv = coefficient_box(s, bx)?;
    let sim = s.scenario.sim.clone().unwrap_or_default();
    let ctl = s.scenario.control.clone().unwrap_or_default();
    let y = a.y.or(sim.level).unwrap_or(0.0);
    let estimator = match (a.estimator, sim.estimator.as_deref()) {
        (Some(e), _) => e,
        (None, None) => EstimatorChoice::Window,
        (None, Some(name)) => EstimatorChoice::from_str(name, true)
            .map_err(|_| CliError::Input(format!("unknown estimator `{name}`")))?,
    };
    let cfg = SimConfig {
        dt: a.dt.or(sim.dt).unwrap_or(1e-4),
        n_paths: a.paths.or(sim.paths).unwrap_or(10_000),
        seed: s.seed,
        window_n: a.window_n.or(sim.window_n).unwrap_or(50.0),
        horizon: a.horizon.or(sim.horizon).unwrap_or(1.0),
        x0: a.x0.or(sim.x0).unwrap_or(0.0),
        noise: Noise::Gaussian,
    };
    cfg.validate()?;
    let m = a.m.or(ctl.m).unwrap_or(50);
    let file = a
        .control_file
        .clone()
        .or_else(|| ctl.file.as_ref().map(|p| s.scenario.resolve(p)));
    let ctrl = match (&a.control, file) {
        (Some(name), _) => builtin_control(name, &bxv, y, m)?,
        (None, Some(path)) => load_control_file(&path, &bxv, y)?,
        (None, None) => match &ctl.preset {
            Some(name) => builtin_control(name, &bxv, y, m)?,
            None => {
                return Err(CliError::Input(format!(
                    "missing --control (one of {}) or --control-file",
                    PRESET_NAMES.join(", ")
                )))
            }
        },
    };
    check_admissible(
        &bxv,
        &ctrl,
        &admissibility_grid(&bxv, cfg.x0, y, cfg.horizon),
    )?;

    let g = occupation_bound_at(&bxv, (cfg.x0 - y).abs(), cfg.horizon, s.tol)?.value;
    let bias = bias_budget(&bxv, cfg.step(), cfg.window_n);
    let (window, local) = estimate_occupation_both(&ctrl, &cfg, y)?;
    let picked = match estimator {
        EstimatorChoice::Window => vec![window],
        EstimatorChoice::LocalTime => vec![local],
        EstimatorChoice::Both => vec![window, local],
    };
    let mut table = Table::new(&[
        "control",
        "estimator",
        "x0",
        "y",
        "T",
        "dt",
        "N",
        "n_paths",
        "seed",
        "mean",
        "std_error",
        "G",
        "bias_budget",
        "resolution_ratio",
    ]);
    for est in picked {
        table.push(vec![
            ctrl.label().into(),
            est.estimator_kind.as_str().into(),
            cfg.x0.into(),
            y.into(),
            cfg.horizon.into(),
            cfg.dt.into(),
            cfg.window_n.into(),
            est.n_paths.into(),
            cfg.seed.into(),
            est.mean.into(),
            est.std_error.into(),
            g.into(),
            bias.into(),
            est.resolution_ratio.into(),
        ]);
    }
    emit(&table, s.format, s.out.as_deref())?;
    Ok(EXIT_OK)
}

fn parse_suite(name: &str) -> Result<Suite, CliError> {
    Suite::from_str(name, true).map_err(|_| CliError::Input(format!("unknown suite `{name}`")))
}

fn cmd_verify(
    s: &Settings,
    only: &[Suite],
    strict: bool,
    paths: Option<u64>,
    dt: Option<f64>,
    window_n: Option<f64>,
    ms: &[u32],
) -> Result<i32, CliError> {
    let spec = s.scenario.verify.clone().unwrap_or_default();
    let suites: Vec<Suite> = if !only.is_empty() {
        only.to_vec()
    } else if let Some(names) = &spec.only {
        names
            .iter()
            .map(|n| parse_suite(n))
            .collect::<Result<_, _>>()?
    } else {
        vec![Suite::Analytic, Suite::Validity, Suite::Sharpness]
    };
    let strict = strict || spec.strict.unwrap_or(false);
    let cfg = SimConfig {
        dt: dt.or(spec.dt).unwrap_or(2e-4),
        n_paths: paths.or(spec.paths).unwrap_or(2_000),
        seed: s.seed,
        window_n: window_n.or(spec.window_n).unwrap_or(10.0),
        horizon: 1.0,
        x0: 0.0,
        noise: Noise::Gaussian,
    };
    let ms: Vec<u32> = if !ms.is_empty() {
        ms.to_vec()
    } else {
        spec.ms.clone().unwrap_or_else(|| vec![10, 50])
    };

    let mut reports: Vec<CheckReport> = Vec::new();
    if suites.contains(&Suite::Analytic) {
        let tol = AnalyticTolerances {
            quadrature: s.tol.min(1e-12),
            ..AnalyticTolerances::default()
        };
        reports.extend(run_analytic_suite(&AnalyticGrid::default(), &tol));
    }
    if suites.contains(&Suite::Validity) || suites.contains(&Suite::Sharpness) {
        cfg.validate()?;
    }
    if suites.contains(&Suite::Validity) {
        let bx = CoefficientBox::new(1.0, 2.0, 1.0)?;
        let mut controls = occbound::control::adversarial_suite(&bx, 0.0);
        controls.push(occbound::control::make_extremal_control(
            &bx,
            0.0,
            occbound::MollificationParams::new(50)?,
        ));
        reports.extend(run_validity_experiment(&ValiditySpec {
            bx,
            controls,
            queries: vec![(0.0, 0.0), (0.5, 0.0), (-1.0, 0.0)],
            cfg,
            strict,
        }));
    }
    if suites.contains(&Suite::Sharpness) {
        for bx in [
            CoefficientBox::new(1.0, 1.0, 0.0)?,
            CoefficientBox::new(1.0, 2.0, 1.0)?,
        ] {
            reports.extend(run_sharpness_experiment(&SharpnessSpec {
                bx,
                level: 0.0,
                ms: ms.clone(),
                cfg,
                strict,
            }));
        }
    }

    write_reports(&reports, s.format, s.out.as_deref())?;
    print_summary(&reports);
    Ok(if all_passed(&reports) {
        EXIT_OK
    } else {
        EXIT_VERIFY_FAILED
    })
}

fn write_reports(
    reports: &[CheckReport],
    format: Format,
    path: Option<&std::path::Path>,
) -> Result<(), CliError> {
    match format {
        Format::Json => {
            let mut buf = Vec::new();
            for r in reports {
                serde_json::to_writer(&mut buf, r).map_err(std::io::Error::from)?;
                buf.push(b'\n');
            }
            match path {
                Some(p) => std::fs::write(p, buf)?,
                None => std::io::stdout().lock().write_all(&buf)?,
            }
        }
        Format::Csv => {
            let mut table = Table::new(&[
                "name",
                "point",
                "measure",
                "value",
                "tolerance",
                "passed",
                "runtime_secs",
                "note",
            ]);
            for r in reports {
                let point = r
                    .point
                    .iter()
                    .map(|(k, v)| format!("{k}={v}"))
                    .collect::<Vec<_>>()
                    .join(";");
                let measure = match r.measure {
                    Measure::Residual => "residual",
                    Measure::Margin => "margin",
                };
                table.push(vec![
                    r.name.clone().into(),
                    point.into(),
                    measure.into(),
                    r.value.into(),
                    r.tolerance.into(),
                    r.passed.into(),
                    r.runtime_secs.into(),
                    r.note.clone().unwrap_or_default().into(),
                ]);
            }
            emit(&table, Format::Csv, path)?;
        }
    }
    Ok(())
}

/// Per-check-family counts and worst value, on stderr.
fn print_summary(reports: &[CheckReport]) {
    let mut families: Vec<(&str, usize, usize, f64, Measure)> = Vec::new();
    for r in reports {
        let idx = match families.iter().position(|f| f.0 == r.name) {
            Some(i) => i,
            None => {
                let start = match r.measure {
                    Measure::Residual => f64::NEG_INFINITY,
                    Measure::Margin => f64::INFINITY,
                };
                families.push((&r.name, 0, 0, start, r.measure));
                families.len() - 1
            }
        };
        let f = &mut families[idx];
        f.1 += 1;
        if r.passed {
            f.2 += 1;
        }
        f.3 = match r.measure {
            Measure::Residual if r.value.is_nan() || r.value > f.3 => r.value,
            Measure::Margin if r.value.is_nan() || r.value < f.3 => r.value,
            _ => f.3,
        };
    }
    let mut err = std::io::stderr().lock();
    let _ = writeln!(
        err,
        "{:<26} {:>7} {:>7}  {:<10} {:>12}",
        "check", "passed", "total", "measure", "worst"
    );
    for (name, total, passed, worst, measure) in &families {
        let m = match measure {
            Measure::Residual => "residual",
            Measure::Margin => "margin",
        };
        let _ = writeln!(
            err,
            "{name:<26} {passed:>7} {total:>7}  {m:<10} {worst:>12.3e}"
        );
    }
    let passed = reports.iter().filter(|r| r.passed).count();
    let _ = writeln!(
        err,
        "{} of {} checks passed: {}",
        passed,
        reports.len(),
        if passed == reports.len() {
            "PASS"
        } else {
            "FAIL"
        }
    );
}
