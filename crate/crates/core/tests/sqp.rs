#![allow(clippy::needless_range_loop)]

mod common;

use std::sync::Arc;

use common::*;
use gfne::error::Error;
use gfne::game_model::{DrivingGame, DrivingParams, GameModel, LqGame, Multipliers, Trajectory};
use gfne::lq_core::{solve_equality_lq, solve_with_working_set};
use gfne::sqp::{approximate, line_search, merit, solve_gfqne, solve_gfqne_logged, SqpOptions};
use gfne::verification::{fd_policy_gradient_lq, residual};
use gfne::working_set::WorkingSet;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

const FD_STEP: f64 = 1e-6;

/// Merit assembled from function values only: every derivative is a
/// central difference of the stage Lagrangian
/// `l + λᵀf − μᵀh − γᵀg` of one player.
fn finite_difference_merit(model: &dyn GameModel, traj: &Trajectory, mult: &Multipliers, gains: &[DMatrix<f64>]) -> f64 {
    let d = model.dims();
    let (n, horizon) = (d.n, d.horizon);
    let mut total = 0.0;
    for t in 0..=horizon {
        let u = if t < horizon { traj.u[t].clone() } else { DVector::zeros(0) };
        let m = u.len();
        for i in 0..d.players {
            let lagrangian = |w: &DVector<f64>| {
                let x = w.rows(0, n).into_owned();
                let u = w.rows(n, m).into_owned();
                let mut v = model.cost(t, i, &x, &u).value;
                if t < horizon {
                    v += mult.lambda[t][i].dot(&model.dynamics(t, &x, &u).value);
                }
                v - mult.mu[t][i].dot(&model.equality(t, i, &x, &u).value)
                    - mult.gamma[t][i].dot(&model.inequality(t, i, &x, &u).value)
            };
            let w = DVector::from_iterator(n + m, traj.x[t].iter().chain(u.iter()).copied());
            let grad = DVector::from_fn(n + m, |k, _| {
                let mut wp = w.clone();
                let mut wm = w.clone();
                wp[k] += FD_STEP;
                wm[k] -= FD_STEP;
                (lagrangian(&wp) - lagrangian(&wm)) / (2.0 * FD_STEP)
            });
            let mut gx = grad.rows(0, n).into_owned();
            if t >= 1 {
                gx -= &mult.lambda[t - 1][i];
            }
            if t < horizon {
                let own: Vec<usize> = d.own_indices(t, i);
                total += own.iter().map(|&o| grad[n + o].powi(2)).sum::<f64>();
                if t >= 1 {
                    for (k, &o) in d.other_indices(t, i).iter().enumerate() {
                        let psi = mult.psi[t][i][k];
                        gx += gains[t].row(o).transpose() * psi;
                        total += (grad[n + o] - psi).powi(2);
                    }
                    total += gx.norm_squared();
                }
                let f = model.dynamics(t, &traj.x[t], &u).value;
                if i == 0 {
                    total += (&traj.x[t + 1] - f).norm_squared();
                }
            } else {
                total += gx.norm_squared();
            }
            total += model.equality(t, i, &traj.x[t], &u).value.norm_squared();
            let g = model.inequality(t, i, &traj.x[t], &u).value;
            let y = &mult.gamma[t][i];
            total += g.iter().chain(y.iter()).map(|v| v.min(0.0).powi(2)).sum::<f64>();
            total += g.dot(y).abs();
        }
    }
    total
}

/// Tight enough that the last subproblem is solved at the converged point
/// up to rounding.
fn tight() -> SqpOptions {
    SqpOptions {
        tol: 1e-12,
        ..Default::default()
    }
}

fn short_driving_game(horizon: usize) -> DrivingGame {
    DrivingGame::new(DrivingParams::lane_change(2.0), horizon).unwrap()
}

/// Random iterate around the lane-change start, with vehicles kept apart.
fn driving_iterate(r: &mut rand::rngs::StdRng, game: &DrivingGame) -> (Trajectory, Multipliers, Vec<DMatrix<f64>>) {
    let d = game.dims();
    let mut traj = random_trajectory(r, d, 0.5);
    let start = DrivingParams::lane_change_start();
    for x in &mut traj.x {
        *x += &start;
    }
    (traj, random_multipliers(r, d, 1.0), random_gains(r, d, 0.5))
}

fn equality_game(seed: u64) -> (LqGame, DVector<f64>) {
    let mut r = rng(seed);
    let shape = GameShape {
        n: 3,
        horizon: 4,
        controls: vec![1, 2],
        equalities: vec![0, 1],
        inequalities: vec![0, 0],
        terminal_equalities: vec![1, 0],
        terminal_inequalities: vec![0, 0],
    };
    let game = random_game(&mut r, &shape);
    let x1 = rand_vec(&mut r, 3, 1.0);
    (game, x1)
}

#[test]
fn lq_game_converges_in_one_major_iteration() {
    for seed in 0..5 {
        let (game, x1) = equality_game(seed);
        let exact = solve_equality_lq(&game, &x1).unwrap();
        let sol = solve_gfqne(Arc::new(game), &x1, &SqpOptions::default()).unwrap();
        assert_eq!(sol.log.majors.len(), 1);
        assert!(sol.merit < 1e-12, "merit {}", sol.merit);
        assert!(sol.trajectory.difference(&exact.trajectory).max_abs() < 1e-8);
    }
}

#[test]
fn merit_matches_residual_total() {
    let mut r = rng(7);
    let game = short_driving_game(4);
    for _ in 0..20 {
        let (traj, mult, gains) = driving_iterate(&mut r, &game);
        let a = merit(&game, &traj, &mult, &gains).unwrap();
        let b = residual(&game, &traj, &mult, &gains).unwrap().total;
        assert!((a - b).abs() <= 1e-12 * b.max(1.0), "{a} vs {b}");
    }
}

#[test]
fn merit_matches_finite_difference_oracle() {
    let mut r = rng(8);
    let game = short_driving_game(3);
    for _ in 0..5 {
        let (traj, mult, gains) = driving_iterate(&mut r, &game);
        let a = merit(&game, &traj, &mult, &gains).unwrap();
        let b = finite_difference_merit(&game, &traj, &mult, &gains);
        assert!((a - b).abs() <= 1e-6 * b.max(1.0), "{a} vs {b}");
    }
    let (lq, _) = equality_game(3);
    let (traj, mult, gains) = (
        random_trajectory(&mut r, &lq.dims, 1.0),
        random_multipliers(&mut r, &lq.dims, 1.0),
        random_gains(&mut r, &lq.dims, 1.0),
    );
    let a = merit(&lq, &traj, &mult, &gains).unwrap();
    let b = finite_difference_merit(&lq, &traj, &mult, &gains);
    assert!((a - b).abs() <= 1e-6 * b.max(1.0), "{a} vs {b}");
}

#[test]
fn quasigradients_match_finite_differences_of_the_subproblem() {
    let game = short_driving_game(30);
    let model: Arc<dyn GameModel> = Arc::new(game);
    let x1 = DrivingParams::lane_change_start();
    // the quasi-gradients come from the subproblem at the previous iterate,
    // so iterate until the last step is negligible
    let options = SqpOptions {
        tol: 1e-20,
        ..Default::default()
    };
    let sol = solve_gfqne(model, &x1, &options).unwrap();
    let sub = approximate(&sol.model, &sol.trajectory, &sol.multipliers).unwrap();
    let zero = DVector::zeros(12);
    let check = solve_with_working_set(&sub, &sol.working_set, &zero).unwrap();
    for t in [0, 7, 15, sub.dims.horizon - 1] {
        assert!(max_abs(&(&check.gains[t].k_mat - &sol.quasigrads[t])) < 1e-6, "stage {t}");
        let fd = fd_policy_gradient_lq(&sub, &sol.working_set, t, &zero, 1e-6).unwrap();
        assert!(max_abs(&(fd - &sol.quasigrads[t])) < 1e-5, "stage {t}");
    }
}

/// Gradient of `f` over the controls by central differences.
fn control_gradient(f: &dyn Fn(&[DVector<f64>]) -> f64, controls: &[DVector<f64>]) -> Vec<f64> {
    let mut out = Vec::new();
    for t in 0..controls.len() {
        for k in 0..controls[t].len() {
            let mut up = controls.to_vec();
            let mut dn = controls.to_vec();
            up[t][k] += FD_STEP;
            dn[t][k] -= FD_STEP;
            out.push((f(&up) - f(&dn)) / (2.0 * FD_STEP));
        }
    }
    out
}

#[test]
fn single_vehicle_solution_satisfies_optimal_control_kkt() {
    // one vehicle, so the equilibrium is a constrained optimum over the
    // controls with the state eliminated by simulation
    let params = DrivingParams {
        v_goal: vec![1.0],
        lane: vec![-2.0],
        avoid: vec![None],
        polite_towards: vec![None],
        ..DrivingParams::lane_change(0.0)
    };
    let horizon = 60;
    let game = DrivingGame::new(params, horizon).unwrap();
    let x1 = DVector::from_vec(vec![0.0, 2.0, 1.0, 0.0]);
    let sol = solve_gfqne(Arc::new(game.clone()), &x1, &tight()).unwrap();
    let controls = sol.original_trajectory.u.clone();

    let cost = |u: &[DVector<f64>]| {
        let traj = Trajectory::rollout(&game, &x1, u).unwrap();
        (0..=horizon)
            .map(|t| {
                let ut = if t < horizon { u[t].clone() } else { DVector::zeros(0) };
                game.cost(t, 0, &traj.x[t], &ut).value
            })
            .sum::<f64>()
    };
    let lane = |u: &[DVector<f64>]| {
        let traj = Trajectory::rollout(&game, &x1, u).unwrap();
        game.equality(horizon, 0, &traj.x[horizon], &DVector::zeros(0)).value[0]
    };
    assert!(lane(&controls).abs() < 1e-8);
    let gj = DVector::from_vec(control_gradient(&cost, &controls));
    let gh = DVector::from_vec(control_gradient(&lane, &controls));
    // least-squares multiplier of the lane constraint
    let nu = -gj.dot(&gh) / gh.norm_squared();
    let stationarity = (&gj + &gh * nu).amax();
    assert!(stationarity < 1e-5 * (1.0 + gj.amax()), "stationarity {stationarity}");
}

#[test]
fn null_step_is_accepted_with_unit_length() {
    let mut r = rng(12);
    let game = short_driving_game(3);
    let (traj, mult, gains) = driving_iterate(&mut r, &game);
    let zero = Trajectory::zeros(game.dims());
    let alpha = line_search(&game, &traj, &mult, &zero, &mult, &gains, &SqpOptions::default(), &WorkingSet::new()).unwrap();
    assert_eq!(alpha, 1.0);
}

#[test]
fn iteration_cap_reports_partial_log() {
    let model: Arc<dyn GameModel> = Arc::new(short_driving_game(30));
    let x1 = DrivingParams::lane_change_start();
    let options = SqpOptions {
        max_iterations: 1,
        tol: 1e-14,
        ..Default::default()
    };
    let failure = solve_gfqne_logged(model, &x1, &options).unwrap_err();
    assert!(matches!(failure.error, Error::MaxIterations(1)));
    assert_eq!(failure.log.majors.len(), 1);
    assert_eq!(failure.trajectory.x.len(), 31);
}

#[test]
fn snapshots_follow_major_iterations() {
    let model: Arc<dyn GameModel> = Arc::new(short_driving_game(30));
    let x1 = DrivingParams::lane_change_start();
    let options = SqpOptions {
        snapshots: true,
        ..Default::default()
    };
    let sol = solve_gfqne(model, &x1, &options).unwrap();
    assert_eq!(sol.snapshots.len(), sol.log.majors.len());
    assert_eq!(sol.snapshots.last().unwrap(), &sol.original_trajectory);
    let merits: Vec<f64> = sol.log.majors.iter().map(|m| m.merit.unwrap()).collect();
    assert!(merits.windows(2).all(|w| w[1] < w[0]));
}

#[test]
fn invalid_options_are_rejected() {
    let model: Arc<dyn GameModel> = Arc::new(short_driving_game(3));
    let options = SqpOptions {
        backtrack: 1.5,
        ..Default::default()
    };
    assert!(matches!(
        solve_gfqne(model, &DrivingParams::lane_change_start(), &options),
        Err(Error::Config(_))
    ));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn accepted_steps_satisfy_sufficient_decrease(seed in 0u64..500, scale in 0.01f64..1.0) {
        let mut r = rng(seed);
        let game = short_driving_game(3);
        let (traj, mult, gains) = driving_iterate(&mut r, &game);
        let step = random_trajectory(&mut r, game.dims(), scale);
        let target = random_multipliers(&mut r, game.dims(), 1.0);
        let options = SqpOptions::default();
        let alpha = line_search(&game, &traj, &mult, &step, &target, &gains, &options, &WorkingSet::new()).unwrap();
        if alpha > 0.0 {
            let m0 = merit(&game, &traj, &mult, &gains).unwrap();
            let m1 = merit(&game, &traj.step(&step, alpha), &mult.interpolate(&target, alpha), &gains).unwrap();
            prop_assert!(m1 <= (1.0 - options.sufficient_decrease * alpha) * m0);
        }
    }
}
