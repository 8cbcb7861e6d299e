//! Command-line front end.
//!
//! `gfne solve` loads a scenario, runs one of the solvers and writes its
//! artifacts into an output directory. `gfne compare` diffs two CSV files
//! column by column.
//!
//! Exit codes: 0 on success, 1 when a solver fails or a comparison exceeds
//! the tolerance, 2 for invalid configurations, scenarios and inputs.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::DMatrix;

use crate::active_set::{solve_inequality_lq_auto, ActiveSetOptions};
use crate::error::Error;
use crate::game_model::{
    expand_trajectory, load_scenario, vehicle_paths, Dimensions, GameModel, GameSpec, Multipliers, StageGroups, Trajectory,
};
use crate::iteration_log::{format_working_set, IterationLog, LogRow, MajorIteration};
use crate::lq_core::solve_equality_lq_auto;
use crate::sqp::{solve_gfqne_logged, SqpOptions};
use crate::verification::{check_sufficiency, residual};

#[derive(Debug, Parser)]
#[command(name = "gfne", version, about = "Feedback Nash equilibria of constrained dynamic games")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve a scenario and write its artifacts.
    Solve(SolveArgs),
    /// Compare two CSV files column by column.
    Compare(CompareArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SolverKind {
    /// Equality-constrained LQ game.
    EqLq,
    /// Inequality-constrained LQ game (active-set method).
    IneqLq,
    /// Nonlinear game (sequential LQ with line search).
    Gfqne,
}

impl fmt::Display for SolverKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SolverKind::EqLq => "eq-lq",
            SolverKind::IneqLq => "ineq-lq",
            SolverKind::Gfqne => "gfqne",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum LogLevel {
    Quiet,
    Info,
    Debug,
}

#[derive(Debug, Args)]
pub struct SolveArgs {
    /// Scenario file (JSON).
    #[arg(long)]
    pub scenario: PathBuf,
    #[arg(long, value_enum)]
    pub solver: SolverKind,
    /// Merit tolerance of the nonlinear solver.
    #[arg(long, default_value_t = 1e-6)]
    pub tol: f64,
    /// Cap on major iterations (gfqne) or active-set iterations (ineq-lq).
    #[arg(long, default_value_t = 100)]
    pub max_iters: usize,
    /// Directory for the run artifacts, created if missing.
    #[arg(long)]
    pub out: PathBuf,
    /// Write the trajectory after every major iteration.
    #[arg(long)]
    pub snapshots: bool,
    #[arg(long, value_enum, default_value_t = LogLevel::Quiet)]
    pub log_level: LogLevel,
    /// Not accepted: the solvers are deterministic.
    #[arg(long, hide = true)]
    pub seed: Option<String>,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    pub a: PathBuf,
    pub b: PathBuf,
    /// Largest accepted absolute difference in any cell.
    #[arg(long)]
    pub tol: f64,
}

/// Validated settings of one `solve` run.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub scenario: PathBuf,
    pub solver: SolverKind,
    pub tol: f64,
    pub max_iters: usize,
    pub out: PathBuf,
    pub snapshots: bool,
}

impl RunConfig {
    pub fn from_args(args: &SolveArgs) -> Result<Self, CliError> {
        if args.seed.is_some() {
            return Err(CliError::config("the solvers are deterministic and take no seed"));
        }
        let config = RunConfig {
            scenario: args.scenario.clone(),
            solver: args.solver,
            tol: args.tol,
            max_iters: args.max_iters,
            out: args.out.clone(),
            snapshots: args.snapshots,
        };
        config.check()?;
        Ok(config)
    }

    pub fn check(&self) -> Result<(), CliError> {
        if !(self.tol > 0.0 && self.tol.is_finite()) {
            return Err(CliError::config("--tol must be positive and finite"));
        }
        if self.max_iters == 0 {
            return Err(CliError::config("--max-iters must be at least 1"));
        }
        Ok(())
    }
}

/// A failure together with the process exit code it maps to.
#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    pub fn config(message: impl Into<String>) -> Self {
        Self {
            code: 2,
            message: message.into(),
        }
    }

    pub fn solver(message: impl Into<String>) -> Self {
        Self {
            code: 1,
            message: message.into(),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::solver(format!("i/o error: {e}"))
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::solver(format!("csv error: {e}"))
    }
}

/// What a successful run produced.
#[derive(Debug, Clone)]
pub struct RunReport {
    pub solver: SolverKind,
    pub merit: f64,
    pub lq_solves: usize,
    pub artifacts: Vec<PathBuf>,
}

/// Everything the artifact writer needs, whichever solver produced it.
struct Outcome {
    /// Model the multipliers and gains refer to (merged stages included).
    model: Box<dyn GameModel>,
    trajectory: Trajectory,
    multipliers: Multipliers,
    gains: Vec<DMatrix<f64>>,
    /// Trajectory on the scenario's own stages.
    original: Trajectory,
    log: IterationLog,
    snapshots: Vec<Trajectory>,
}

/// Loads the scenario, solves it and writes the artifacts. On a solver
/// failure the partial artifacts are written next to a `FAILED` marker.
pub fn run(config: &RunConfig) -> Result<RunReport, CliError> {
    config.check()?;
    let spec = load_scenario(&config.scenario).map_err(|e| CliError::config(e.to_string()))?;
    check_compatibility(config.solver, &spec)?;
    fs::create_dir_all(&config.out)?;
    let failed = config.out.join("FAILED");
    if failed.exists() {
        fs::remove_file(&failed)?;
    }

    let outcome = match config.solver {
        SolverKind::EqLq => solve_eq(&spec),
        SolverKind::IneqLq => solve_ineq(&spec, config),
        SolverKind::Gfqne => solve_nonlinear(&spec, config),
    };
    let outcome = match outcome {
        Ok(o) => o,
        Err(failure) => {
            write_failure(config, &spec, &failure)?;
            return Err(CliError::solver(format!("{} solver failed: {}", config.solver, failure.error)));
        }
    };
    let artifacts = write_artifacts(config, &spec, &outcome)?;
    Ok(RunReport {
        solver: config.solver,
        merit: outcome.log.final_merit().unwrap_or(f64::NAN),
        lq_solves: outcome.log.lq_solves,
        artifacts,
    })
}

fn check_compatibility(solver: SolverKind, spec: &GameSpec) -> Result<(), CliError> {
    let dims = spec.model.dims();
    match solver {
        SolverKind::EqLq | SolverKind::IneqLq if spec.lq.is_none() => Err(CliError::config(format!(
            "solver {solver} needs a custom-lq scenario; use gfqne for nonlinear models"
        ))),
        SolverKind::EqLq if dims.has_inequalities() => Err(CliError::config(format!(
            "solver eq-lq cannot handle the {} inequality rows of this scenario; use ineq-lq or gfqne",
            dims.total_inequalities()
        ))),
        _ => Ok(()),
    }
}

struct Failure {
    error: Error,
    log: IterationLog,
    trajectory: Option<Trajectory>,
}

impl From<Error> for Box<Failure> {
    fn from(error: Error) -> Self {
        Box::new(Failure {
            error,
            log: IterationLog::default(),
            trajectory: None,
        })
    }
}

fn group_notes(groups: &StageGroups) -> Vec<String> {
    groups
        .groups
        .iter()
        .filter(|g| g.len() > 1)
        .map(|g| format!("stages {}-{} solved as one combined stage", g.start + 1, g.end))
        .collect()
}

fn single_major(rows: Vec<LogRow>, merit: f64) -> MajorIteration {
    MajorIteration {
        index: 1,
        rows,
        alpha: Some(1.0),
        merit: Some(merit),
    }
}

fn solve_eq(spec: &GameSpec) -> Result<Outcome, Box<Failure>> {
    let game = spec.lq.as_ref().expect("checked by check_compatibility");
    let started = Instant::now();
    let combined = solve_equality_lq_auto(game, &spec.x1)?;
    let solve_time = started.elapsed();
    let sol = &combined.solution;
    let gains = sol.policy_gains();
    let clock = Instant::now();
    let merit = residual(&combined.game, &sol.trajectory, &sol.multipliers, &gains)?.total;
    let mut log = IterationLog {
        lq_solves: 1 + (game.dims.horizon - combined.game.dims.horizon),
        notes: group_notes(&combined.groups),
        ..Default::default()
    };
    let row = LogRow {
        minor: "1".into(),
        working_set: "{}".into(),
        comment: "Solution".into(),
    };
    log.majors.push(single_major(vec![row], merit));
    log.timing.function_eval = clock.elapsed();
    log.timing.solve = solve_time;
    log.timing.total = started.elapsed();
    Ok(Outcome {
        original: expand_trajectory(game, &combined.groups, &sol.trajectory),
        trajectory: sol.trajectory.clone(),
        multipliers: sol.multipliers.clone(),
        gains,
        model: Box::new(combined.game.clone()),
        log,
        snapshots: Vec::new(),
    })
}

fn solve_ineq(spec: &GameSpec, config: &RunConfig) -> Result<Outcome, Box<Failure>> {
    let game = spec.lq.as_ref().expect("checked by check_compatibility");
    let options = ActiveSetOptions {
        max_iterations: config.max_iters,
        ..Default::default()
    };
    let started = Instant::now();
    let combined = solve_inequality_lq_auto(game, &spec.x1, &options)?;
    let solve_time = started.elapsed();
    let sol = &combined.result.solution;
    let gains = sol.policy_gains();
    let clock = Instant::now();
    let merit = residual(&combined.game, &sol.trajectory, &sol.multipliers, &gains)?.total;
    let rows = combined
        .minors
        .iter()
        .map(|m| LogRow {
            minor: m.label.clone(),
            working_set: format_working_set(&m.working_set, &game.dims),
            comment: m.comment().to_string(),
        })
        .collect();
    let mut log = IterationLog {
        lq_solves: combined.lq_solves,
        notes: group_notes(&combined.groups),
        ..Default::default()
    };
    log.majors.push(single_major(rows, merit));
    log.timing.function_eval = clock.elapsed();
    log.timing.solve = solve_time;
    log.timing.total = started.elapsed();
    Ok(Outcome {
        original: combined.trajectory.clone(),
        trajectory: sol.trajectory.clone(),
        multipliers: sol.multipliers.clone(),
        gains,
        model: Box::new(combined.game.clone()),
        log,
        snapshots: Vec::new(),
    })
}

fn solve_nonlinear(spec: &GameSpec, config: &RunConfig) -> Result<Outcome, Box<Failure>> {
    let options = SqpOptions {
        tol: config.tol,
        max_iterations: config.max_iters,
        snapshots: config.snapshots,
        ..Default::default()
    };
    match solve_gfqne_logged(spec.model.clone(), &spec.x1, &options) {
        Ok(sol) => Ok(Outcome {
            model: Box::new(sol.model),
            trajectory: sol.trajectory,
            multipliers: sol.multipliers,
            gains: sol.quasigrads,
            original: sol.original_trajectory,
            log: sol.log,
            snapshots: sol.snapshots,
        }),
        Err(f) => {
            let f = *f;
            Err(Box::new(Failure {
                error: f.error,
                log: f.log,
                trajectory: (!f.trajectory.x.is_empty()).then_some(f.trajectory),
            }))
        }
    }
}

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>, CliError> {
    Ok(csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(path)?)
}

/// Writes `stage, x_1..x_n, u blocks per player` with one-based stages. The
/// terminal row leaves the control cells empty.
pub fn write_trajectory_csv(path: &Path, dims: &Dimensions, traj: &Trajectory) -> Result<(), CliError> {
    let widths: Vec<usize> = (0..dims.players)
        .map(|i| (0..dims.horizon).map(|t| dims.m_player(t, i)).max().unwrap_or(0))
        .collect();
    let mut header = vec!["stage".to_string()];
    header.extend((1..=dims.n).map(|k| format!("x{k}")));
    for (i, w) in widths.iter().enumerate() {
        header.extend((1..=*w).map(|k| format!("u{}_{k}", i + 1)));
    }
    let mut wr = csv_writer(path)?;
    wr.write_record(&header)?;
    for (t, x) in traj.x.iter().enumerate() {
        let mut rec = vec![(t + 1).to_string()];
        rec.extend(x.iter().map(|v| v.to_string()));
        for (i, w) in widths.iter().enumerate() {
            let u = (t < traj.u.len()).then(|| traj.player_control(dims, t, i));
            for k in 0..*w {
                rec.push(u.as_ref().and_then(|u| u.get(k)).map(|v| v.to_string()).unwrap_or_default());
            }
        }
        wr.write_record(&rec)?;
    }
    wr.flush()?;
    Ok(())
}

fn write_vehicle_csvs(out: &Path, vehicles: usize, traj: &Trajectory) -> Result<Vec<PathBuf>, CliError> {
    let mut paths = Vec::new();
    for (j, series) in vehicle_paths(&traj.x, vehicles).iter().enumerate() {
        let path = out.join(format!("vehicle_{}.csv", j + 1));
        let mut wr = csv_writer(&path)?;
        wr.write_record(["stage", "p_long", "p_lat"])?;
        for (t, (px, py)) in series.iter().enumerate() {
            wr.write_record([(t + 1).to_string(), px.to_string(), py.to_string()])?;
        }
        wr.flush()?;
        paths.push(path);
    }
    Ok(paths)
}

fn write_artifacts(config: &RunConfig, spec: &GameSpec, outcome: &Outcome) -> Result<Vec<PathBuf>, CliError> {
    let out = &config.out;
    let dims = spec.model.dims();
    let mut written = Vec::new();

    let path = out.join("trajectory.csv");
    write_trajectory_csv(&path, dims, &outcome.original)?;
    written.push(path);

    let path = out.join("iterations.txt");
    fs::write(&path, outcome.log.render())?;
    written.push(path);

    let model = outcome.model.as_ref();
    let mut text = format!("solver: {}\n", config.solver);
    match residual(model, &outcome.trajectory, &outcome.multipliers, &outcome.gains) {
        Ok(r) => text.push_str(&r.to_string()),
        Err(e) => text.push_str(&format!("error: {e}\n")),
    }
    let path = out.join("residuals.txt");
    fs::write(&path, text)?;
    written.push(path);

    let mut text = format!("solver: {}\n", config.solver);
    match check_sufficiency(model, &outcome.trajectory, &outcome.multipliers, &outcome.gains) {
        Ok(r) => {
            text.push_str(&r.to_string());
            let overall = if r.all_satisfied() {
                "satisfied"
            } else if r.any_violated() {
                "violated"
            } else {
                "inconclusive"
            };
            text.push_str(&format!("verdict: {overall}\n"));
        }
        Err(e) => text.push_str(&format!("error: {e}\n")),
    }
    let path = out.join("sufficiency.txt");
    fs::write(&path, text)?;
    written.push(path);

    if let Some(params) = &spec.driving {
        written.extend(write_vehicle_csvs(out, params.players(), &outcome.original)?);
    }

    if config.snapshots {
        if outcome.snapshots.is_empty() {
            log::warn!("--snapshots only applies to gfqne; nothing to write for {}", config.solver);
        } else {
            let dir = out.join("snapshots");
            fs::create_dir_all(&dir)?;
            for (k, snap) in outcome.snapshots.iter().enumerate() {
                let path = dir.join(format!("iter_{}.csv", k + 1));
                write_trajectory_csv(&path, dims, snap)?;
                written.push(path);
            }
        }
    }
    Ok(written)
}

fn write_failure(config: &RunConfig, spec: &GameSpec, failure: &Failure) -> Result<(), CliError> {
    let out = &config.out;
    fs::write(out.join("FAILED"), format!("{} solver failed: {}\n", config.solver, failure.error))?;
    fs::write(out.join("iterations.txt"), failure.log.render())?;
    if let Some(traj) = &failure.trajectory {
        write_trajectory_csv(&out.join("trajectory.csv"), spec.model.dims(), traj)?;
        if let Some(params) = &spec.driving {
            write_vehicle_csvs(out, params.players(), traj)?;
        }
    }
    Ok(())
}

/// Column-wise comparison of two CSV files.
#[derive(Debug, Clone, PartialEq)]
pub struct CompareReport {
    /// Largest absolute difference per column, in header order.
    pub columns: Vec<(String, f64)>,
}

impl CompareReport {
    pub fn max_difference(&self) -> f64 {
        self.columns.iter().fold(0.0f64, |a, (_, d)| a.max(*d))
    }

    /// True when every column differs by less than `tol`.
    pub fn within(&self, tol: f64) -> bool {
        self.columns.iter().all(|(_, d)| *d < tol)
    }
}

impl fmt::Display for CompareReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (name, d) in &self.columns {
            writeln!(f, "{name}: {d:.6e}")?;
        }
        writeln!(f, "max: {:.6e}", self.max_difference())
    }
}

fn read_table(path: &Path) -> Result<(Vec<String>, Vec<Vec<String>>), CliError> {
    let mut rd = csv::Reader::from_path(path).map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
    let header = rd.headers()?.iter().map(str::to_string).collect();
    let mut rows = Vec::new();
    for rec in rd.records() {
        rows.push(rec?.iter().map(str::to_string).collect());
    }
    Ok((header, rows))
}

fn cell(text: &str, path: &Path, row: usize, col: &str) -> Result<Option<f64>, CliError> {
    if text.trim().is_empty() {
        return Ok(None);
    }
    text.trim()
        .parse::<f64>()
        .map(Some)
        .map_err(|_| CliError::config(format!("{}: row {row}, column {col}: not a number: {text:?}", path.display())))
}

/// Max-norm difference per column. Both files must have the same header
/// and row count; a cell empty in one file but not the other counts as an
/// infinite difference.
pub fn compare(a: &Path, b: &Path) -> Result<CompareReport, CliError> {
    let (ha, ra) = read_table(a)?;
    let (hb, rb) = read_table(b)?;
    if ha != hb {
        return Err(CliError::config(format!("headers differ: {ha:?} vs {hb:?}")));
    }
    if ra.len() != rb.len() {
        return Err(CliError::config(format!("row counts differ: {} vs {}", ra.len(), rb.len())));
    }
    let mut diff = vec![0.0f64; ha.len()];
    for (r, (x, y)) in ra.iter().zip(&rb).enumerate() {
        for (c, name) in ha.iter().enumerate() {
            let u = cell(&x[c], a, r + 1, name)?;
            let v = cell(&y[c], b, r + 1, name)?;
            let d = match (u, v) {
                (None, None) => 0.0,
                (Some(u), Some(v)) if u == v => 0.0,
                (Some(u), Some(v)) => (u - v).abs(),
                _ => f64::INFINITY,
            };
            // NaN in either file never compares as close
            diff[c] = diff[c].max(if d.is_nan() { f64::INFINITY } else { d });
        }
    }
    Ok(CompareReport {
        columns: ha.into_iter().zip(diff).collect(),
    })
}

fn init_logging(level: LogLevel) {
    let filter = match level {
        LogLevel::Quiet => log::LevelFilter::Error,
        LogLevel::Info => log::LevelFilter::Info,
        LogLevel::Debug => log::LevelFilter::Debug,
    };
    let _ = env_logger::Builder::new().filter_level(filter).format_timestamp(None).try_init();
}

/// Runs a parsed command line and returns the process exit code.
pub fn execute(cli: Cli) -> ExitCode {
    let result = match cli.command {
        Command::Solve(args) => {
            init_logging(args.log_level);
            RunConfig::from_args(&args).and_then(|config| run(&config)).map(|report| {
                println!(
                    "{}: merit {:.3e}, {} LQ solves, artifacts in {}",
                    report.solver,
                    report.merit,
                    report.lq_solves,
                    args.out.display()
                );
            })
        }
        Command::Compare(args) => {
            if !(args.tol >= 0.0) {
                Err(CliError::config("--tol must be nonnegative"))
            } else {
                compare(&args.a, &args.b).and_then(|report| {
                    print!("{report}");
                    if report.within(args.tol) {
                        Ok(())
                    } else {
                        Err(CliError::solver(format!(
                            "difference {:.6e} is not below {:e}",
                            report.max_difference(),
                            args.tol
                        )))
                    }
                })
            }
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code)
        }
    }
}

/// Entry point of the `gfne` binary.
pub fn main() -> ExitCode {
    execute(Cli::parse())
}
