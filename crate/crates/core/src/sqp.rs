//! Sequential-LQ solver for nonlinear constrained games.
//!
//! Every major iteration approximates the game around the current iterate
//! (linear dynamics and constraints, quadratic costs whose curvature
//! includes the constraint and dynamics terms weighted by the current
//! multipliers), solves the approximation with the active-set method, and
//! moves along the resulting step with a backtracking line search on the
//! squared residual of the first-order conditions.
//!
//! The approximation is written in deviation coordinates: its state and
//! control variables are offsets from the iterate, the initial offset is
//! zero, and the solution is the search direction. Its multipliers are the
//! new multiplier estimates rather than offsets.

use std::sync::Arc;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};

use crate::active_set::{self, expand_working_set, ActiveSetOptions, MinorIteration, Tracker};
use crate::error::{Error, Result};
use crate::game_model::{
    evaluate_stage, expand_trajectory, merge_multipliers, merge_trajectory, Dimensions, GameModel, LqGame,
    LqPlayerStage, MergedModel, Multipliers, StageEval, Trajectory,
};
use crate::iteration_log::{format_working_set, IterationLog, LogRow, MajorIteration};
use crate::linalg::symmetrize;
use crate::working_set::WorkingSet;

#[derive(Debug, Clone)]
pub struct SqpOptions {
    /// Stop once the merit falls below this value.
    pub tol: f64,
    pub max_iterations: usize,
    /// Step shrink factor of the line search.
    pub backtrack: f64,
    /// Required fraction of the merit decrease per unit step.
    pub sufficient_decrease: f64,
    pub min_step: f64,
    /// Keep the policy gradients of the current subproblem fixed during
    /// the line search instead of re-solving at each trial point.
    pub reuse_quasigrads: bool,
    /// Options for the inner active-set solves. Cycles are always accepted.
    pub active_set: ActiveSetOptions,
    /// Keep the trajectory after every major iteration.
    pub snapshots: bool,
}

impl Default for SqpOptions {
    fn default() -> Self {
        Self {
            tol: 1e-6,
            max_iterations: 100,
            backtrack: 0.5,
            sufficient_decrease: 1e-4,
            min_step: 1e-8,
            reuse_quasigrads: true,
            active_set: ActiveSetOptions::default(),
            snapshots: false,
        }
    }
}

impl SqpOptions {
    pub fn check(&self) -> Result<()> {
        let ok = self.tol > 0.0
            && self.max_iterations > 0
            && self.backtrack > 0.0
            && self.backtrack < 1.0
            && self.sufficient_decrease > 0.0
            && self.min_step > 0.0
            && self.min_step <= 1.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config("solver options out of range".into()))
        }
    }
}

fn evaluate_all(model: &dyn GameModel, traj: &Trajectory) -> Result<Vec<StageEval>> {
    let horizon = model.dims().horizon;
    let empty = DVector::zeros(0);
    (0..=horizon)
        .map(|t| {
            let u = if t < horizon { &traj.u[t] } else { &empty };
            evaluate_stage(model, t, &traj.x[t], u)
        })
        .collect()
}

fn linearize_from(dims: &Dimensions, evals: &[StageEval], traj: &Trajectory) -> LqGame {
    let n = dims.n;
    let mut game = LqGame::zeros(dims.clone());
    for (t, ev) in evals.iter().enumerate() {
        if let Some(f) = &ev.dynamics {
            let st = &mut game.stages[t];
            st.a = f.jac.columns(0, n).into_owned();
            st.b = f.jac.columns(n, dims.m(t)).into_owned();
            st.c = &f.value - &traj.x[t + 1];
        }
        for i in 0..dims.players {
            let p = player_slot(&mut game, t, i);
            let h = &ev.equalities[i];
            let g = &ev.inequalities[i];
            p.hx = h.jac.columns(0, n).into_owned();
            p.hu = h.jac.columns(n, h.dim() - n).into_owned();
            p.h = h.value.clone();
            p.gx = g.jac.columns(0, n).into_owned();
            p.gu = g.jac.columns(n, g.dim() - n).into_owned();
            p.g = g.value.clone();
        }
    }
    game
}

fn player_slot(game: &mut LqGame, t: usize, i: usize) -> &mut LqPlayerStage {
    if t == game.dims.horizon {
        &mut game.terminal[i]
    } else {
        &mut game.stages[t].players[i]
    }
}

fn quadraticize_into(game: &mut LqGame, evals: &[StageEval], mult: &Multipliers) {
    let n = game.dims.n;
    for (t, ev) in evals.iter().enumerate() {
        for i in 0..game.dims.players {
            let l = &ev.costs[i];
            let mut hess = l.hess.clone();
            if let Some(f) = &ev.dynamics {
                hess += f.weighted_hessian(&mult.lambda[t][i]);
            }
            hess -= ev.equalities[i].weighted_hessian(&mult.mu[t][i]);
            hess -= ev.inequalities[i].weighted_hessian(&mult.gamma[t][i]);
            let hess = symmetrize(&hess);
            let m = hess.nrows() - n;
            let p = player_slot(game, t, i);
            p.q_mat = hess.view((0, 0), (n, n)).into_owned();
            p.s_mat = hess.view((n, 0), (m, n)).into_owned();
            p.r_mat = hess.view((n, n), (m, m)).into_owned();
            p.q = l.grad.rows(0, n).into_owned();
            p.r = l.grad.rows(n, m).into_owned();
            p.constant = l.value;
        }
    }
}

/// Linear dynamics and constraints of the local approximation at `traj`:
/// Jacobians, the dynamics defect `f(x_t, u_t) − x_{t+1}` and the
/// constraint values. Cost blocks are left at zero.
pub fn linearize(model: &dyn GameModel, traj: &Trajectory) -> Result<LqGame> {
    let evals = evaluate_all(model, traj)?;
    Ok(linearize_from(model.dims(), &evals, traj))
}

/// Fills the cost blocks of `game` with the Hessians of each player's
/// Lagrangian at `traj` and the plain cost gradients.
pub fn quadraticize(model: &dyn GameModel, traj: &Trajectory, mult: &Multipliers, game: &mut LqGame) -> Result<()> {
    let evals = evaluate_all(model, traj)?;
    quadraticize_into(game, &evals, mult);
    Ok(())
}

/// The LQ game whose equilibrium from a zero initial offset is the search
/// direction at `(traj, mult)`.
pub fn approximate(model: &dyn GameModel, traj: &Trajectory, mult: &Multipliers) -> Result<LqGame> {
    let evals = evaluate_all(model, traj)?;
    let mut game = linearize_from(model.dims(), &evals, traj);
    quadraticize_into(&mut game, &evals, mult);
    Ok(game)
}

/// Squared residual of the first-order conditions, with `quasigrads[t]`
/// (the feedback gains of the last subproblem) standing in for the policy
/// gradients.
pub fn merit(model: &dyn GameModel, traj: &Trajectory, mult: &Multipliers, quasigrads: &[DMatrix<f64>]) -> Result<f64> {
    let dims = model.dims();
    let horizon = dims.horizon;
    let n = dims.n;
    let evals = evaluate_all(model, traj)?;
    let mut sum = 0.0;
    for (t, ev) in evals.iter().enumerate() {
        if let Some(f) = &ev.dynamics {
            let fx = f.jac.columns(0, n);
            let fu = f.jac.columns(n, dims.m(t));
            for i in 0..dims.players {
                let lam = &mult.lambda[t][i];
                let h = &ev.equalities[i];
                let g = &ev.inequalities[i];
                let l = &ev.costs[i];
                let du = l.grad.rows(n, dims.m(t)) + fu.transpose() * lam
                    - h.jac.columns(n, dims.m(t)).transpose() * &mult.mu[t][i]
                    - g.jac.columns(n, dims.m(t)).transpose() * &mult.gamma[t][i];
                let own_start = dims.control_offset(t, i);
                let own_len = dims.controls[t][i];
                sum += du.rows(own_start, own_len).norm_squared();
                if t >= 1 {
                    let mut dx = l.grad.rows(0, n) - &mult.lambda[t - 1][i] + fx.transpose() * lam
                        - h.jac.columns(0, n).transpose() * &mult.mu[t][i]
                        - g.jac.columns(0, n).transpose() * &mult.gamma[t][i];
                    let mut k = 0;
                    for j in (0..dims.players).filter(|&j| j != i) {
                        let off = dims.control_offset(t, j);
                        for c in 0..dims.controls[t][j] {
                            let psi = mult.psi[t][i][k];
                            dx += quasigrads[t].row(off + c).transpose() * psi;
                            sum += (du[off + c] - psi).powi(2);
                            k += 1;
                        }
                    }
                    sum += dx.norm_squared();
                }
            }
            sum += (&traj.x[t + 1] - &f.value).norm_squared();
        } else {
            for i in 0..dims.players {
                let dx = ev.costs[i].grad.rows(0, n) - &mult.lambda[horizon - 1][i]
                    - ev.equalities[i].jac.columns(0, n).transpose() * &mult.mu[t][i]
                    - ev.inequalities[i].jac.columns(0, n).transpose() * &mult.gamma[t][i];
                sum += dx.norm_squared();
            }
        }
        for i in 0..dims.players {
            sum += ev.equalities[i].value.norm_squared();
            let g = &ev.inequalities[i].value;
            let gamma = &mult.gamma[t][i];
            sum += g.iter().map(|v| v.min(0.0).powi(2)).sum::<f64>();
            sum += gamma.iter().map(|v| v.min(0.0).powi(2)).sum::<f64>();
            sum += g.dot(gamma).abs();
        }
    }
    Ok(sum)
}

/// Backtracking search along `(step, target)` from `(traj, mult)`.
///
/// Returns the largest `α = backtrack^j ≥ min_step` with
/// `M(α) ≤ (1 − c α) M(0)`, or zero when no trial qualifies. A null step
/// (zero direction and unchanged multipliers) is accepted with `α = 1`.
#[allow(clippy::too_many_arguments)]
pub fn line_search(
    model: &dyn GameModel,
    traj: &Trajectory,
    mult: &Multipliers,
    step: &Trajectory,
    target: &Multipliers,
    quasigrads: &[DMatrix<f64>],
    options: &SqpOptions,
    ws: &WorkingSet,
) -> Result<f64> {
    if step.max_abs() == 0.0 && mult.max_abs_difference(target) == 0.0 {
        return Ok(1.0);
    }
    let m0 = merit(model, traj, mult, quasigrads)?;
    if m0 == 0.0 {
        return Ok(1.0);
    }
    let mut alpha = 1.0;
    while alpha >= options.min_step {
        let x = traj.step(step, alpha);
        let lam = mult.interpolate(target, alpha);
        let grads = if options.reuse_quasigrads {
            None
        } else {
            trial_quasigrads(model, &x, &lam, ws).ok()
        };
        let value = merit(model, &x, &lam, grads.as_deref().unwrap_or(quasigrads));
        if let Ok(v) = value {
            if v.is_finite() && v <= (1.0 - options.sufficient_decrease * alpha) * m0 {
                return Ok(alpha);
            }
        }
        alpha *= options.backtrack;
    }
    Ok(0.0)
}

/// Policy gradients of the local approximation at a trial point, with the
/// working set held fixed.
fn trial_quasigrads(model: &dyn GameModel, traj: &Trajectory, mult: &Multipliers, ws: &WorkingSet) -> Result<Vec<DMatrix<f64>>> {
    let game = approximate(model, traj, mult)?;
    let sol = crate::lq_core::solve_with_working_set(&game, ws, &DVector::zeros(model.dims().n))?;
    Ok(sol.policy_gains())
}

/// Converged (or best) iterate of [`solve_gfqne`].
#[derive(Debug, Clone)]
pub struct GfqneSolution {
    /// The model the iterate refers to (with any merged stages).
    pub model: MergedModel,
    pub trajectory: Trajectory,
    pub multipliers: Multipliers,
    /// Gains of the last subproblem, used as policy gradients.
    pub quasigrads: Vec<DMatrix<f64>>,
    /// Working set of the last subproblem, in the model's row indices.
    pub working_set: WorkingSet,
    /// Trajectory on the original stages.
    pub original_trajectory: Trajectory,
    /// Working set in the original row indices.
    pub original_working_set: WorkingSet,
    pub merit: f64,
    pub log: IterationLog,
    /// Original-stage trajectories after each major iteration.
    pub snapshots: Vec<Trajectory>,
}

/// A failed run with the log and iterate reached so far.
#[derive(Debug)]
pub struct GfqneFailure {
    pub error: Error,
    pub log: IterationLog,
    /// Last accepted iterate on the original stages.
    pub trajectory: Trajectory,
}

/// Major iteration state, everything in the current model's indices.
struct Iterate {
    model: MergedModel,
    traj: Trajectory,
    mult: Multipliers,
    ws: WorkingSet,
}

impl Iterate {
    fn merge(self, s: usize) -> Result<Iterate> {
        let dims = self.model.dims().clone();
        Ok(Iterate {
            model: self.model.merge(s)?,
            traj: merge_trajectory(&dims, &self.traj, s),
            mult: merge_multipliers(&dims, &self.mult, s),
            ws: self.ws.merged(&dims, s),
        })
    }
}

fn log_rows(minors: &[MinorIteration], model: &MergedModel) -> Vec<LogRow> {
    let base = model.base().dims();
    minors
        .iter()
        .map(|m| LogRow {
            minor: m.label.clone(),
            working_set: format_working_set(&expand_working_set(base, model.groups(), &m.working_set), base),
            comment: m.comment().to_string(),
        })
        .collect()
}

/// Runs the sequential-LQ iteration from the zero-control rollout of
/// `model` at `x1` with zero multipliers.
pub fn solve_gfqne(model: Arc<dyn GameModel>, x1: &DVector<f64>, options: &SqpOptions) -> Result<GfqneSolution> {
    solve_gfqne_logged(model, x1, options).map_err(|f| f.error)
}

/// Like [`solve_gfqne`], but a failure keeps the partial log.
pub fn solve_gfqne_logged(
    model: Arc<dyn GameModel>,
    x1: &DVector<f64>,
    options: &SqpOptions,
) -> std::result::Result<GfqneSolution, Box<GfqneFailure>> {
    let started = Instant::now();
    let mut log = IterationLog::default();
    let mut last = Trajectory { x: Vec::new(), u: Vec::new() };
    let outcome = iterate(model, x1, options, &mut log, &mut last);
    log.timing.total = started.elapsed();
    match outcome {
        Ok(mut sol) => {
            sol.log = log;
            Ok(sol)
        }
        Err(error) => Err(Box::new(GfqneFailure {
            error,
            log,
            trajectory: last,
        })),
    }
}

fn iterate(
    model: Arc<dyn GameModel>,
    x1: &DVector<f64>,
    options: &SqpOptions,
    log: &mut IterationLog,
    last: &mut Trajectory,
) -> Result<GfqneSolution> {
    options.check()?;
    let mut eval_time = Duration::ZERO;
    let mut solve_time = Duration::ZERO;

    let dims = model.dims().clone();
    dims.check()?;
    if x1.len() != dims.n {
        return Err(Error::Dimension(format!("x1 has length {}, expected {}", x1.len(), dims.n)));
    }
    let clock = Instant::now();
    let traj = Trajectory::zero_control_rollout(model.as_ref(), x1)?;
    eval_time += clock.elapsed();
    *last = traj.clone();
    let mut it = Iterate {
        model: MergedModel::identity(model.clone()),
        mult: Multipliers::zeros(&dims),
        traj,
        ws: options.active_set.warm_start.clone().unwrap_or_default(),
    };
    let mut snapshots = Vec::new();
    let mut inner = options.active_set.clone();
    inner.accept_cycles = true;

    for k in 1..=options.max_iterations {
        let mut rows = Vec::new();
        // solve the subproblem, merging stages while a stage system is singular
        let result = loop {
            let clock = Instant::now();
            let game = approximate(&it.model, &it.traj, &it.mult)?;
            eval_time += clock.elapsed();
            inner.warm_start = Some(it.ws.clone());
            let mut tracker = Tracker::default();
            let clock = Instant::now();
            let outcome = active_set::run(&game, &DVector::zeros(dims.n), &inner, &mut tracker);
            solve_time += clock.elapsed();
            log.lq_solves += tracker.lq_solves;
            match outcome {
                Ok(result) => {
                    rows.extend(log_rows(&result.minors, &it.model));
                    break result;
                }
                Err(Error::SingularStageMatrix { stage, pivot_ratio })
                    if stage >= 1
                        && stage < it.model.dims().horizon
                        && it.model.groups().merged_len(stage) <= inner.max_merged_stages =>
                {
                    rows.extend(log_rows(&tracker.minors, &it.model));
                    let groups = it.model.groups();
                    let note = format!(
                        "major {k}: singular stage matrix at stage {} (pivot ratio {pivot_ratio:.2e}), merged into stage {}",
                        groups.first_original(stage) + 1,
                        groups.first_original(stage - 1) + 1
                    );
                    log::info!("{note}");
                    log.notes.push(note);
                    it.ws = tracker.working_set.clone();
                    it = it.merge(stage)?;
                }
                Err(e) => return Err(e),
            }
        };
        if result.cycled {
            log::debug!("major {k}: subproblem cycled, accepting the current iterate");
        }
        let step = result.solution.trajectory.clone();
        let target = result.solution.multipliers.clone();
        let quasigrads = result.solution.policy_gains();

        let clock = Instant::now();
        let alpha = line_search(&it.model, &it.traj, &it.mult, &step, &target, &quasigrads, options, &result.working_set)?;
        if alpha == 0.0 {
            eval_time += clock.elapsed();
            log.majors.push(MajorIteration {
                index: k,
                rows,
                alpha: Some(0.0),
                merit: None,
            });
            log.timing.solve = solve_time;
            log.timing.function_eval = eval_time;
            return Err(Error::LineSearchFailure(k));
        }
        it.traj = it.traj.step(&step, alpha);
        it.mult = it.mult.interpolate(&target, alpha);
        it.ws = result.working_set.clone();
        let value = merit(&it.model, &it.traj, &it.mult, &quasigrads)?;
        eval_time += clock.elapsed();
        log::info!("major {k}: alpha {alpha}, merit {value:.3e}, {} LQ solves so far", log.lq_solves);
        log.majors.push(MajorIteration {
            index: k,
            rows,
            alpha: Some(alpha),
            merit: Some(value),
        });
        let original = expand_trajectory(model.as_ref(), it.model.groups(), &it.traj);
        *last = original.clone();
        log.timing.solve = solve_time;
        log.timing.function_eval = eval_time;
        if options.snapshots {
            snapshots.push(original.clone());
        }
        if value < options.tol {
            log.timing.solve = solve_time;
            log.timing.function_eval = eval_time;
            let original_working_set = expand_working_set(&dims, it.model.groups(), &it.ws);
            return Ok(GfqneSolution {
                original_trajectory: original,
                original_working_set,
                model: it.model,
                trajectory: it.traj,
                multipliers: it.mult,
                quasigrads,
                working_set: it.ws,
                merit: value,
                log: IterationLog::default(),
                snapshots,
            });
        }
    }
    Err(Error::MaxIterations(options.max_iterations))
}
