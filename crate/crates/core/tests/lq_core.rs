mod common;

use common::*;
use gfne::game_model::{combine_lq_stages, Trajectory};
use gfne::lq_core::{backward_recursion, solve_equality_lq, solve_equality_lq_auto, solve_terminal};
use gfne::verification::{fd_policy_gradient_lq, monolithic_oracle, residual};
use gfne::working_set::WorkingSet;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

#[test]
fn single_player_gains_match_riccati() {
    let mut r = rng(11);
    for case in 0..10 {
        let n = 1 + case % 5;
        let m = 1 + case % 3;
        let shape = GameShape::unconstrained(n, 5 + 3 * case, vec![m]);
        let game = random_game(&mut r, &shape);
        let gains = backward_recursion(&game, &WorkingSet::new()).unwrap();
        let oracle = riccati_gains(&game);
        for (g, (k_mat, k)) in gains.iter().zip(&oracle) {
            assert!(max_abs(&(&g.k_mat - k_mat)) < 1e-8, "case {case}");
            assert!(max_abs_vec(&(&g.k - k)) < 1e-8, "case {case}");
        }
    }
}

#[test]
fn decoupled_players_reduce_to_separate_regulators() {
    let mut r = rng(5);
    let n1 = 2;
    let n2 = 3;
    let horizon = 6;
    let p1 = random_game(&mut r, &GameShape::unconstrained(n1, horizon, vec![1]));
    let p2 = random_game(&mut r, &GameShape::unconstrained(n2, horizon, vec![2]));
    let shape = GameShape::unconstrained(n1 + n2, horizon, vec![1, 2]);
    let mut game = random_game(&mut r, &shape);
    let n = n1 + n2;
    let embed = |m: &DMatrix<f64>, r0: usize, c0: usize, rows: usize, cols: usize| {
        let mut out = DMatrix::zeros(rows, cols);
        out.view_mut((r0, c0), m.shape()).copy_from(m);
        out
    };
    for t in 0..horizon {
        let (a1, a2) = (&p1.stages[t], &p2.stages[t]);
        let st = &mut game.stages[t];
        st.a = embed(&a1.a, 0, 0, n, n) + embed(&a2.a, n1, n1, n, n);
        st.b = embed(&a1.b, 0, 0, n, 3) + embed(&a2.b, n1, 1, n, 3);
        st.c = DVector::from_iterator(n, a1.c.iter().chain(a2.c.iter()).copied());
        let c1 = &a1.players[0];
        let c2 = &a2.players[0];
        st.players[0].q_mat = embed(&c1.q_mat, 0, 0, n, n);
        st.players[0].s_mat = embed(&c1.s_mat, 0, 0, 3, n);
        st.players[0].r_mat = embed(&c1.r_mat, 0, 0, 3, 3);
        st.players[0].q = embed(&DMatrix::from_column_slice(n1, 1, c1.q.as_slice()), 0, 0, n, 1).column(0).into_owned();
        st.players[0].r = DVector::from_vec(vec![c1.r[0], 0.0, 0.0]);
        st.players[1].q_mat = embed(&c2.q_mat, n1, n1, n, n);
        st.players[1].s_mat = embed(&c2.s_mat, 1, n1, 3, n);
        st.players[1].r_mat = embed(&c2.r_mat, 1, 1, 3, 3);
        st.players[1].q = embed(&DMatrix::from_column_slice(n2, 1, c2.q.as_slice()), n1, 0, n, 1).column(0).into_owned();
        st.players[1].r = DVector::from_vec(vec![0.0, c2.r[0], c2.r[1]]);
    }
    game.terminal[0].q_mat = embed(&p1.terminal[0].q_mat, 0, 0, n, n);
    game.terminal[0].q = embed(&DMatrix::from_column_slice(n1, 1, p1.terminal[0].q.as_slice()), 0, 0, n, 1).column(0).into_owned();
    game.terminal[1].q_mat = embed(&p2.terminal[0].q_mat, n1, n1, n, n);
    game.terminal[1].q = embed(&DMatrix::from_column_slice(n2, 1, p2.terminal[0].q.as_slice()), n1, 0, n, 1).column(0).into_owned();

    let gains = backward_recursion(&game, &WorkingSet::new()).unwrap();
    let o1 = riccati_gains(&p1);
    let o2 = riccati_gains(&p2);
    for t in 0..horizon {
        let k = &gains[t].k_mat;
        assert!(max_abs(&(k.view((0, 0), (1, n1)).into_owned() - &o1[t].0)) < 1e-8);
        assert!(max_abs(&(k.view((1, n1), (2, n2)).into_owned() - &o2[t].0)) < 1e-8);
        assert!(max_abs(&k.view((0, n1), (1, n2)).into_owned()) < 1e-8);
        assert!(max_abs(&k.view((1, 0), (2, n1)).into_owned()) < 1e-8);
        assert!((gains[t].k[0] - o1[t].1[0]).abs() < 1e-8);
    }
}

fn coupled_shape() -> GameShape {
    GameShape {
        n: 3,
        horizon: 3,
        controls: vec![2, 2],
        equalities: vec![1, 0],
        inequalities: vec![0, 0],
        terminal_equalities: vec![0, 1],
        terminal_inequalities: vec![0, 0],
    }
}

#[test]
fn coupled_constrained_game_matches_monolithic_solve() {
    let mut r = rng(21);
    for _ in 0..5 {
        let game = random_game(&mut r, &coupled_shape());
        let x1 = rand_vec(&mut r, 3, 2.0);
        let sol = solve_equality_lq(&game, &x1).unwrap();
        let mono = monolithic_oracle(&game, &WorkingSet::new(), &x1).unwrap();
        for t in 0..3 {
            assert!(max_abs(&(&sol.gains[t].k_mat - &mono.policy_gains[t])) < 1e-8);
            assert!(max_abs_vec(&(&sol.trajectory.u[t] - &mono.trajectory.u[t])) < 1e-8);
        }
        assert!(sol.multipliers.max_abs_difference(&mono.multipliers) < 1e-7);
    }
}

#[test]
fn solution_satisfies_first_order_conditions() {
    let mut r = rng(3);
    let game = random_game(&mut r, &coupled_shape());
    let x1 = rand_vec(&mut r, 3, 1.0);
    let sol = solve_equality_lq(&game, &x1).unwrap();
    let res = residual(&game, &sol.trajectory, &sol.multipliers, &sol.policy_gains()).unwrap();
    assert!(res.total < 1e-16, "{res}");
}

#[test]
fn terminal_solve_has_zero_residual_for_any_state() {
    let mut r = rng(8);
    let game = random_game(&mut r, &coupled_shape());
    let last = game.subgame(2);
    let g = solve_terminal(&last, &WorkingSet::new()).unwrap();
    for _ in 0..5 {
        let x = rand_vec(&mut r, 3, 3.0);
        let sol = solve_equality_lq(&last, &x).unwrap();
        let u = &g.k_mat * &x + &g.k;
        assert!(max_abs_vec(&(u - &sol.trajectory.u[0])) < 1e-12);
        let res = residual(&last, &sol.trajectory, &sol.multipliers, &sol.policy_gains()).unwrap();
        assert!(res.total < 1e-18);
    }
}

#[test]
fn gains_match_finite_difference_policy_gradients() {
    let mut r = rng(17);
    let game = random_game(&mut r, &coupled_shape());
    let x1 = rand_vec(&mut r, 3, 1.0);
    let sol = solve_equality_lq(&game, &x1).unwrap();
    for t in 0..3 {
        let fd = fd_policy_gradient_lq(&game, &WorkingSet::new(), t, &sol.trajectory.x[t], 1e-6).unwrap();
        assert!(max_abs(&(fd - &sol.gains[t].k_mat)) < 1e-5);
    }
}

#[test]
fn single_player_stage_combination_preserves_the_solution() {
    let mut r = rng(29);
    for _ in 0..5 {
        let game = random_game(&mut r, &GameShape::unconstrained(2, 3, vec![2]));
        let x1 = rand_vec(&mut r, 2, 1.0);
        let sol = solve_equality_lq(&game, &x1).unwrap();
        let merged = combine_lq_stages(&game, 1).unwrap();
        let msol = solve_equality_lq(&merged, &x1).unwrap();
        // merged control stacks u_1 and u_2
        let u = &msol.trajectory.u[0];
        assert!(max_abs_vec(&(u.rows(0, 2) - &sol.trajectory.u[0])) < 1e-9);
        assert!(max_abs_vec(&(u.rows(2, 2) - &sol.trajectory.u[1])) < 1e-9);
        assert!(max_abs_vec(&(&msol.trajectory.x[2] - &sol.trajectory.x[3])) < 1e-9);
    }
}

#[test]
fn combined_game_keeps_feasibility_and_costs() {
    let mut r = rng(30);
    let shape = GameShape {
        n: 2,
        horizon: 3,
        controls: vec![1, 2],
        equalities: vec![1, 1],
        inequalities: vec![1, 0],
        terminal_equalities: vec![0, 0],
        terminal_inequalities: vec![0, 0],
    };
    let game = random_game(&mut r, &shape);
    let merged = combine_lq_stages(&game, 2).unwrap();
    assert_eq!(merged.dims.total_controls(), game.dims.total_controls());
    assert_eq!(merged.dims.total_equalities(), game.dims.total_equalities());
    assert_eq!(merged.dims.total_inequalities(), game.dims.total_inequalities());
    for _ in 0..10 {
        let x1 = rand_vec(&mut r, 2, 1.0);
        let controls: Vec<_> = (0..3).map(|t| rand_vec(&mut r, game.dims.m(t), 1.0)).collect();
        let orig = game.rollout(&x1, &controls);
        // stack per player: [u_2^i; u_3^i]
        let u1 = &controls[1];
        let u2 = &controls[2];
        let stacked = DVector::from_vec(vec![u1[0], u2[0], u1[1], u1[2], u2[1], u2[2]]);
        let comb = merged.rollout(&x1, &[controls[0].clone(), stacked.clone()]);
        assert!(max_abs_vec(&(&comb.x[2] - &orig.x[3])) < 1e-12);
        let c0 = game.total_costs(&orig);
        let c1 = merged.total_costs(&comb);
        for (a, b) in c0.iter().zip(&c1) {
            assert!((a - b).abs() < 1e-10 * (1.0 + a.abs()));
        }
        for i in 0..2 {
            let mut original_rows: Vec<f64> = game.stages[1].players[i].equality_value(&orig.x[1], u1).iter().copied().collect();
            original_rows.extend(game.stages[2].players[i].equality_value(&orig.x[2], u2).iter());
            let merged_rows = merged.stages[1].players[i].equality_value(&comb.x[1], &stacked);
            for (a, b) in original_rows.iter().zip(merged_rows.iter()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
        let g_orig = game.stages[2].players[0].inequality_value(&orig.x[2], u2);
        let g_comb = merged.stages[1].players[0].inequality_value(&comb.x[1], &stacked);
        assert!((g_orig[0] - g_comb[1]).abs() < 1e-12);
    }
}

#[test]
fn full_state_terminal_constraint_needs_merging() {
    // n = 2 double integrator with one control and x_T = 0
    let shape = GameShape {
        n: 2,
        horizon: 4,
        controls: vec![1],
        equalities: vec![0],
        inequalities: vec![0],
        terminal_equalities: vec![2],
        terminal_inequalities: vec![0],
    };
    let mut r = rng(1);
    let mut game = random_game(&mut r, &shape);
    for st in &mut game.stages {
        st.a = DMatrix::from_row_slice(2, 2, &[1.0, 0.1, 0.0, 1.0]);
        st.b = DMatrix::from_row_slice(2, 1, &[0.0, 0.1]);
        st.c = DVector::zeros(2);
    }
    game.terminal[0].hx = DMatrix::identity(2, 2);
    game.terminal[0].h = DVector::zeros(2);
    let x1 = DVector::from_vec(vec![1.0, 0.0]);
    assert!(solve_equality_lq(&game, &x1).is_err());
    let c = solve_equality_lq_auto(&game, &x1).unwrap();
    assert_eq!(c.game.dims.horizon, 3);
    assert!(max_abs_vec(&c.solution.trajectory.x[3]) < 1e-10);
}

#[test]
fn zero_trajectory_solves_homogeneous_game() {
    let mut r = rng(2);
    let mut game = random_game(&mut r, &coupled_shape()).scaled_offsets(0.0);
    game.regular = true;
    let sol = solve_equality_lq(&game, &DVector::zeros(3)).unwrap();
    assert_eq!(sol.trajectory, Trajectory::zeros(&game.dims));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn offsets_scale_linearly(seed in 0u64..1000, s in -3.0f64..3.0) {
        let mut r = rng(seed);
        let game = random_game(&mut r, &coupled_shape());
        let x1 = DVector::zeros(3);
        let base = solve_equality_lq(&game, &x1).unwrap();
        let scaled = solve_equality_lq(&game.scaled_offsets(s), &x1).unwrap();
        for t in 0..3 {
            prop_assert!(max_abs(&(&base.gains[t].k_mat - &scaled.gains[t].k_mat)) < 1e-9);
            prop_assert!(max_abs_vec(&(&base.gains[t].k * s - &scaled.gains[t].k)) < 1e-8);
            prop_assert!(max_abs_vec(&(&base.trajectory.u[t] * s - &scaled.trajectory.u[t])) < 1e-8);
        }
    }

    #[test]
    fn rollout_is_dynamically_consistent(seed in 0u64..1000) {
        let mut r = rng(seed);
        let game = random_game(&mut r, &coupled_shape());
        let x1 = rand_vec(&mut r, 3, 1.0);
        let sol = solve_equality_lq(&game, &x1).unwrap();
        for t in 0..3 {
            let st = &game.stages[t];
            let next = &st.a * &sol.trajectory.x[t] + &st.b * &sol.trajectory.u[t] + &st.c;
            prop_assert_eq!(&next, &sol.trajectory.x[t + 1]);
        }
    }
}
