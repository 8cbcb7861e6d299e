//! Active-set solver for inequality-constrained LQ games.
//!
//! Each iteration solves the equality-constrained game in which the rows of
//! the working set are enforced as equalities. The step towards that
//! solution is clipped so every inequality stays satisfied, a blocking row
//! joins the working set, and a working row with a negative multiplier
//! leaves it. A feasible starting point is found first by repeatedly
//! solving with the working set and adding the most violated row.

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::game_model::{combine_lq_stages, expand_trajectory, Dimensions, LqGame, Multipliers, StageGroups, Trajectory};
use crate::lq_core::{solve_with_working_set, FeedbackSolution};
use crate::working_set::{RowId, WorkingSet};

#[derive(Debug, Clone)]
pub struct ActiveSetOptions {
    /// Cap on main-loop iterations.
    pub max_iterations: usize,
    /// Cap on feasibility solves.
    pub max_feasibility_iterations: usize,
    /// Inequality rows count as satisfied down to `-feasibility_tol`.
    pub feasibility_tol: f64,
    /// Relative tolerance for treating a multiplier as negative or zero.
    pub multiplier_tol: f64,
    /// Relative size below which a step is treated as zero.
    pub step_tol: f64,
    /// Accept the current iterate when a dropped row blocks again instead
    /// of failing.
    pub accept_cycles: bool,
    /// Rows to start the feasibility phase with.
    pub warm_start: Option<WorkingSet>,
    /// Longest run of original stages a singular stage may be merged into.
    /// A singularity that would need a longer group is reported instead.
    pub max_merged_stages: usize,
}

impl Default for ActiveSetOptions {
    fn default() -> Self {
        Self {
            max_iterations: 100,
            max_feasibility_iterations: 50,
            feasibility_tol: 1e-8,
            multiplier_tol: 1e-8,
            step_tol: 1e-9,
            accept_cycles: false,
            warm_start: None,
            max_merged_stages: 4,
        }
    }
}

/// What happened in one minor iteration.
#[derive(Debug, Clone, PartialEq)]
pub enum MinorEvent {
    /// Feasibility solve (`F1`, `F2`, ...).
    Feasibility,
    /// Step taken without hitting a new row.
    FullStep,
    /// Step clipped by `row`, which joins the working set.
    Add(RowId),
    /// Zero step; `row` leaves the working set.
    Drop(RowId),
    /// The previously dropped row blocked again.
    Cycle(RowId),
    /// Equilibrium found.
    Solution,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MinorIteration {
    /// `F1`, `F2`, ... for feasibility solves, `1`, `2`, ... afterwards.
    pub label: String,
    /// Working set used by the solve of this iteration (for cycle rows, the
    /// set after re-adding the blocking row).
    pub working_set: WorkingSet,
    pub event: MinorEvent,
    pub beta: Option<f64>,
}

impl MinorIteration {
    pub fn comment(&self) -> &'static str {
        match self.event {
            MinorEvent::Cycle(_) => "Cycle",
            MinorEvent::Solution => "Solution",
            _ => "",
        }
    }
}

#[derive(Debug, Clone)]
pub struct ActiveSetResult {
    pub solution: FeedbackSolution,
    pub working_set: WorkingSet,
    pub minors: Vec<MinorIteration>,
    pub lq_solves: usize,
    /// Ended on an accepted cycle rather than a verified solution.
    pub cycled: bool,
    /// Working rows with multipliers inside the zero band.
    pub degenerate_rows: Vec<RowId>,
}

fn inequality_rows(game: &LqGame) -> Vec<RowId> {
    let d = &game.dims;
    let mut out = Vec::new();
    for t in 0..=d.horizon {
        for i in 0..d.players {
            for j in 0..d.b(t, i) {
                out.push(RowId::new(t, i, j));
            }
        }
    }
    out
}

/// Value of inequality row `id` along `traj`.
pub fn row_value(game: &LqGame, traj: &Trajectory, id: RowId) -> f64 {
    let p = game.player(id.stage, id.player);
    let x = &traj.x[id.stage];
    let mut v = p.g[id.row] + p.gx.row(id.row).dot(&x.transpose());
    if id.stage < game.dims.horizon {
        v += p.gu.row(id.row).dot(&traj.u[id.stage].transpose());
    }
    v
}

/// Change of inequality row `id` along the direction `dir` (the offset `g`
/// does not enter).
fn row_slope(game: &LqGame, dir: &Trajectory, id: RowId) -> f64 {
    let p = game.player(id.stage, id.player);
    let mut v = p.gx.row(id.row).dot(&dir.x[id.stage].transpose());
    if id.stage < game.dims.horizon {
        v += p.gu.row(id.row).dot(&dir.u[id.stage].transpose());
    }
    v
}

/// Most negative inequality value along `traj` with its row, if any row is
/// violated beyond `tol`. Ties go to the lexicographically first row.
fn most_violated(game: &LqGame, traj: &Trajectory, tol: f64, skip: &WorkingSet) -> Option<(RowId, f64)> {
    let mut worst: Option<(RowId, f64)> = None;
    for id in inequality_rows(game) {
        if skip.contains(&id) {
            continue;
        }
        let v = row_value(game, traj, id);
        if v < -tol && worst.is_none_or(|(_, w)| v < w) {
            worst = Some((id, v));
        }
    }
    worst
}

/// Largest `β ∈ [0, 1]` keeping every row outside the working set
/// satisfied along `x + β p`, with the blocking row when `β < 1`.
pub fn ratio_test(game: &LqGame, x: &Trajectory, p: &Trajectory, ws: &WorkingSet) -> (f64, Option<RowId>) {
    let mut beta = 1.0;
    let mut blocking = None;
    for id in inequality_rows(game) {
        if ws.contains(&id) {
            continue;
        }
        let slope = row_slope(game, p, id);
        if slope < 0.0 {
            let value = row_value(game, x, id);
            let b = (-value / slope).max(0.0);
            if b < beta {
                beta = b;
                blocking = Some(id);
            }
        }
    }
    (beta, blocking)
}

/// Step to the equilibrium of the game restricted to `ws`, taken from the
/// (feasible) iterate `x`. Returns the direction and the multipliers at
/// `x + p`.
pub fn step_subproblem(game: &LqGame, x: &Trajectory, ws: &WorkingSet) -> Result<(Trajectory, FeedbackSolution)> {
    let shifted = game.recentered(x);
    let sol = solve_with_working_set(&shifted, ws, &DVector::zeros(game.dims.n))?;
    Ok((sol.trajectory.clone(), sol))
}

/// Progress of an active-set run, kept up to date so that a caller can
/// resume after an error.
#[derive(Debug, Clone, Default)]
pub struct Tracker {
    pub minors: Vec<MinorIteration>,
    pub lq_solves: usize,
    pub working_set: WorkingSet,
}

impl Tracker {
    fn solve(&mut self, game: &LqGame, x: Option<&Trajectory>, x1: &DVector<f64>, label: String, event: MinorEvent) -> Result<FeedbackSolution> {
        self.lq_solves += 1;
        self.minors.push(MinorIteration {
            label,
            working_set: self.working_set.clone(),
            event,
            beta: None,
        });
        match x {
            Some(x) => step_subproblem(game, x, &self.working_set).map(|(_, sol)| sol),
            None => solve_with_working_set(game, &self.working_set, x1),
        }
    }

    fn annotate(&mut self, event: MinorEvent, beta: Option<f64>) {
        if let Some(last) = self.minors.last_mut() {
            last.event = event;
            last.beta = beta;
        }
    }
}

/// Outcome of the feasibility phase.
#[derive(Debug, Clone)]
pub struct FeasibleStart {
    pub trajectory: Trajectory,
    pub solution: FeedbackSolution,
}

/// Finds a trajectory satisfying every constraint, together with a working
/// set of rows active along it (left in `tracker.working_set`).
///
/// Starting from the warm-start rows, the game is solved with the working
/// rows as equalities and the most violated remaining row joins the set
/// until nothing is violated. Working rows hold with equality at every
/// such solution, so a violated row is never already in the set.
pub fn find_feasible_start(
    game: &LqGame,
    x1: &DVector<f64>,
    options: &ActiveSetOptions,
    tracker: &mut Tracker,
) -> Result<FeasibleStart> {
    let ws = options.warm_start.clone().unwrap_or_default();
    ws.check(&game.dims)?;
    tracker.working_set = ws;
    for k in 1..=options.max_feasibility_iterations {
        let sol = tracker.solve(game, None, x1, format!("F{k}"), MinorEvent::Feasibility)?;
        let traj = sol.trajectory.clone();
        let scale = 1.0 + traj.max_abs();
        match most_violated(game, &traj, options.feasibility_tol * scale, &tracker.working_set) {
            None => {
                return Ok(FeasibleStart {
                    trajectory: traj,
                    solution: sol,
                })
            }
            Some((row, v)) => {
                log::debug!("feasibility: adding {row} (value {v:.3e})");
                tracker.working_set.insert(row);
            }
        }
    }
    Err(Error::InfeasibleGame(format!(
        "no feasible point after {} feasibility solves",
        options.max_feasibility_iterations
    )))
}

/// Negative working-row multipliers, most negative first.
fn negative_multipliers(mult: &Multipliers, ws: &WorkingSet, tol: f64) -> Vec<(RowId, f64)> {
    let mut neg: Vec<(RowId, f64)> = ws
        .iter()
        .map(|id| (*id, mult.gamma[id.stage][id.player][id.row]))
        .filter(|(_, v)| *v < -tol)
        .collect();
    neg.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    neg
}

/// Runs the feasibility phase and the active-set iteration.
pub fn solve_inequality_lq(game: &LqGame, x1: &DVector<f64>, options: &ActiveSetOptions) -> Result<ActiveSetResult> {
    run(game, x1, options, &mut Tracker::default())
}

/// [`solve_inequality_lq`] with progress recorded in `tracker`.
pub fn run(game: &LqGame, x1: &DVector<f64>, options: &ActiveSetOptions, tracker: &mut Tracker) -> Result<ActiveSetResult> {
    let start = find_feasible_start(game, x1, options, tracker)?;
    let mut x = start.trajectory;
    // the row dropped most recently and the other drop candidates from
    // that decision
    let mut last_drop: Option<(RowId, Vec<RowId>)> = None;

    for k in 1..=options.max_iterations {
        let sol = tracker.solve(game, Some(&x), x1, k.to_string(), MinorEvent::FullStep)?;
        let p = sol.trajectory.clone();
        if p.max_abs() <= options.step_tol * (1.0 + x.max_abs()) {
            let tol = options.multiplier_tol * (1.0 + sol.multipliers.max_abs());
            let neg = negative_multipliers(&sol.multipliers, &tracker.working_set, tol);
            if neg.is_empty() {
                let degenerate_rows: Vec<RowId> = tracker
                    .working_set
                    .iter()
                    .filter(|id| sol.multipliers.gamma[id.stage][id.player][id.row].abs() <= tol)
                    .copied()
                    .collect();
                for r in &degenerate_rows {
                    log::warn!("degenerate working row {r}: multiplier within tolerance of zero");
                }
                tracker.annotate(MinorEvent::Solution, Some(1.0));
                let ws = tracker.working_set.clone();
                let solution = finalize(game, &ws, x1, x, sol);
                return Ok(ActiveSetResult {
                    solution,
                    working_set: ws,
                    minors: tracker.minors.clone(),
                    lq_solves: tracker.lq_solves,
                    cycled: false,
                    degenerate_rows,
                });
            }
            let drop = neg[0].0;
            tracker.annotate(MinorEvent::Drop(drop), Some(1.0));
            tracker.working_set.remove(&drop);
            last_drop = Some((drop, neg[1..].iter().map(|(r, _)| *r).collect()));
            continue;
        }

        let (beta, blocking) = ratio_test(game, &x, &p, &tracker.working_set);
        let next_x = x.step(&p, beta);
        match blocking {
            Some(row) if last_drop.as_ref().is_some_and(|(d, _)| *d == row) => {
                tracker.annotate(MinorEvent::Add(row), Some(beta));
                tracker.working_set.insert(row);
                if options.accept_cycles {
                    tracker.minors.push(MinorIteration {
                        label: (k + 1).to_string(),
                        working_set: tracker.working_set.clone(),
                        event: MinorEvent::Cycle(row),
                        beta: Some(beta),
                    });
                    let mut solution = sol;
                    solution.trajectory = next_x;
                    return Ok(ActiveSetResult {
                        solution,
                        working_set: tracker.working_set.clone(),
                        minors: tracker.minors.clone(),
                        lq_solves: tracker.lq_solves,
                        cycled: true,
                        degenerate_rows: Vec::new(),
                    });
                }
                let (_, mut others) = last_drop.take().expect("checked above");
                if others.is_empty() {
                    return Err(Error::CycleFailure {
                        stage: row.stage,
                        player: row.player,
                        row: row.row,
                    });
                }
                let alt = others.remove(0);
                log::debug!("cycle on {row}; dropping {alt} instead");
                tracker.working_set.remove(&alt);
                x = next_x;
                last_drop = Some((alt, others));
            }
            Some(row) => {
                tracker.annotate(MinorEvent::Add(row), Some(beta));
                tracker.working_set.insert(row);
                x = next_x;
                last_drop = None;
            }
            None => {
                tracker.annotate(MinorEvent::FullStep, Some(beta));
                x = next_x;
                last_drop = None;
            }
        }
    }
    Err(Error::MaxIterations(options.max_iterations))
}


/// Active-set solution of a game whose stages may have been merged.
#[derive(Debug, Clone)]
pub struct CombinedActiveSet {
    /// Game actually solved.
    pub game: LqGame,
    pub groups: StageGroups,
    pub result: ActiveSetResult,
    /// Solution trajectory on the original stages.
    pub trajectory: Trajectory,
    /// Final working set in original row indices.
    pub working_set: WorkingSet,
    /// Minor iterations across every restart, with working sets in original
    /// row indices.
    pub minors: Vec<MinorIteration>,
    pub lq_solves: usize,
}

/// Maps rows of a merged game back to the rows of the original game.
pub fn expand_working_set(original: &Dimensions, groups: &StageGroups, ws: &WorkingSet) -> WorkingSet {
    WorkingSet::from_rows(ws.iter().map(|id| {
        let (stage, row) = groups.original_row(id.stage, id.row, |o| original.b(o, id.player));
        RowId::new(stage, id.player, row)
    }))
}

fn original_minors(dims: &Dimensions, groups: &StageGroups, minors: &[MinorIteration]) -> Vec<MinorIteration> {
    minors
        .iter()
        .map(|m| MinorIteration {
            working_set: expand_working_set(dims, groups, &m.working_set),
            ..m.clone()
        })
        .collect()
}

/// Like [`solve_inequality_lq`], but when a working set makes a stage
/// system singular that stage is merged into its predecessor and the
/// iteration restarts on the combined game, warm-started with the working
/// set reached so far.
pub fn solve_inequality_lq_auto(game: &LqGame, x1: &DVector<f64>, options: &ActiveSetOptions) -> Result<CombinedActiveSet> {
    let mut current = game.clone();
    let mut groups = StageGroups::identity(game.dims.horizon);
    let mut opts = options.clone();
    let mut minors = Vec::new();
    let mut lq_solves = 0;
    loop {
        let mut tracker = Tracker::default();
        match run(&current, x1, &opts, &mut tracker) {
            Ok(result) => {
                let trajectory = expand_trajectory(game, &groups, &result.solution.trajectory);
                let working_set = expand_working_set(&game.dims, &groups, &result.working_set);
                minors.extend(original_minors(&game.dims, &groups, &result.minors));
                lq_solves += result.lq_solves;
                return Ok(CombinedActiveSet {
                    game: current,
                    groups,
                    result,
                    trajectory,
                    working_set,
                    minors,
                    lq_solves,
                });
            }
            Err(Error::SingularStageMatrix { stage, pivot_ratio })
                if stage >= 1 && stage < current.dims.horizon && groups.merged_len(stage) <= options.max_merged_stages =>
            {
                log::info!(
                    "singular stage matrix at stage {} (pivot ratio {:.2e}); merging into stage {}",
                    groups.first_original(stage) + 1,
                    pivot_ratio,
                    groups.first_original(stage - 1) + 1
                );
                minors.extend(original_minors(&game.dims, &groups, &tracker.minors));
                lq_solves += tracker.lq_solves;
                let ws = tracker.working_set.merged(&current.dims, stage);
                current = combine_lq_stages(&current, stage)?;
                groups = groups.merge(stage)?;
                opts.warm_start = Some(ws);
            }
            Err(e) => return Err(e),
        }
    }
}

/// Re-expresses the solution of the recentered subproblem in the original
/// coordinates by solving the game once more with the final working set.
fn finalize(game: &LqGame, ws: &WorkingSet, x1: &DVector<f64>, x: Trajectory, deviation: FeedbackSolution) -> FeedbackSolution {
    match solve_with_working_set(game, ws, x1) {
        Ok(sol) => sol,
        Err(_) => {
            let mut out = deviation;
            out.trajectory = x;
            out
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::game_model::Dimensions;

    /// `x' = x + u`, cost `u² + x'²`, with `u ≥ lower` at the only stage.
    fn bounded(lower: f64) -> LqGame {
        let dims = Dimensions::uniform(1, 1, &[1], &[0], &[1], &[0], &[0]);
        let mut g = LqGame::zeros(dims);
        let s = &mut g.stages[0];
        s.a[(0, 0)] = 1.0;
        s.b[(0, 0)] = 1.0;
        s.players[0].r_mat[(0, 0)] = 2.0;
        s.players[0].gu[(0, 0)] = 1.0;
        s.players[0].g[0] = -lower;
        g.terminal[0].q_mat[(0, 0)] = 2.0;
        g.regular = true;
        g
    }

    #[test]
    fn ratio_test_interpolates() {
        let g = bounded(-1.0);
        // g = u + 1; at u = 0 value 1, direction du = -2 gives slope -2
        let x = Trajectory {
            x: vec![DVector::from_vec(vec![0.0]), DVector::from_vec(vec![0.0])],
            u: vec![DVector::from_vec(vec![0.0])],
        };
        let p = Trajectory {
            x: vec![DVector::zeros(1), DVector::from_vec(vec![-2.0])],
            u: vec![DVector::from_vec(vec![-2.0])],
        };
        let (beta, row) = ratio_test(&g, &x, &p, &WorkingSet::new());
        assert!((beta - 0.5).abs() < 1e-15);
        assert_eq!(row, Some(RowId::new(0, 0, 0)));
        let up = Trajectory {
            x: p.x.iter().map(|v| -v).collect(),
            u: p.u.iter().map(|v| -v).collect(),
        };
        assert_eq!(ratio_test(&g, &x, &up, &WorkingSet::new()), (1.0, None));
    }

    #[test]
    fn active_bound_pins_the_control() {
        // unconstrained optimum u = -x/2 = -2 violates u >= -1
        let g = bounded(-1.0);
        let res = solve_inequality_lq(&g, &DVector::from_vec(vec![4.0]), &ActiveSetOptions::default()).unwrap();
        assert!((res.solution.trajectory.u[0][0] + 1.0).abs() < 1e-12);
        assert!(res.working_set.contains(&RowId::new(0, 0, 0)));
        assert!(res.solution.multipliers.gamma[0][0][0] > 0.0);
    }

    #[test]
    fn inactive_bound_leaves_the_equality_solution() {
        let g = bounded(-5.0);
        let res = solve_inequality_lq(&g, &DVector::from_vec(vec![4.0]), &ActiveSetOptions::default()).unwrap();
        assert!((res.solution.trajectory.u[0][0] + 2.0).abs() < 1e-12);
        assert!(res.working_set.is_empty());
        assert_eq!(res.minors[0].label, "F1");
        assert_eq!(res.minors.last().unwrap().event, MinorEvent::Solution);
    }

    #[test]
    fn active_bound_has_zero_step() {
        let g = bounded(-1.0);
        let x1 = DVector::from_vec(vec![4.0]);
        let ws = WorkingSet::from_rows([RowId::new(0, 0, 0)]);
        let sol = solve_with_working_set(&g, &ws, &x1).unwrap();
        let (p, _) = step_subproblem(&g, &sol.trajectory, &ws).unwrap();
        assert!(p.max_abs() < 1e-14);
    }
}
