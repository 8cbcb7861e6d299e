//! Shared helpers for the integration tests: random game generators and a
//! textbook Riccati recursion used as an independent oracle.

#![allow(dead_code)]

use gfne::active_set::row_value;
use gfne::game_model::{Dimensions, LqGame, LqPlayerStage, Multipliers, Trajectory};
use gfne::verification::monolithic_oracle;
use gfne::working_set::{RowId, WorkingSet};
use nalgebra::{DMatrix, DVector};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

pub fn rng(seed: u64) -> StdRng {
    StdRng::seed_from_u64(seed)
}

pub fn rand_mat(rng: &mut StdRng, r: usize, c: usize, scale: f64) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| rng.gen_range(-1.0..1.0) * scale)
}

pub fn rand_vec(rng: &mut StdRng, r: usize, scale: f64) -> DVector<f64> {
    DVector::from_fn(r, |_, _| rng.gen_range(-1.0..1.0) * scale)
}

/// Random symmetric positive semidefinite matrix `G Gᵀ / k`.
pub fn rand_psd(rng: &mut StdRng, k: usize) -> DMatrix<f64> {
    let g = rand_mat(rng, k, k, 1.0);
    &g * g.transpose() / (k.max(1) as f64)
}

/// Shape of a random LQ game.
#[derive(Debug, Clone)]
pub struct GameShape {
    pub n: usize,
    pub horizon: usize,
    pub controls: Vec<usize>,
    /// Equality rows per player at control stages.
    pub equalities: Vec<usize>,
    pub inequalities: Vec<usize>,
    pub terminal_equalities: Vec<usize>,
    pub terminal_inequalities: Vec<usize>,
}

impl GameShape {
    pub fn unconstrained(n: usize, horizon: usize, controls: Vec<usize>) -> Self {
        let np = controls.len();
        Self {
            n,
            horizon,
            controls,
            equalities: vec![0; np],
            inequalities: vec![0; np],
            terminal_equalities: vec![0; np],
            terminal_inequalities: vec![0; np],
        }
    }

    pub fn dims(&self) -> Dimensions {
        Dimensions::uniform(
            self.n,
            self.horizon,
            &self.controls,
            &self.equalities,
            &self.inequalities,
            &self.terminal_equalities,
            &self.terminal_inequalities,
        )
    }
}

/// Random convex regular LQ game: jointly PSD stage Hessians with a
/// positive-definite own-control block, PSD terminal costs, and equality
/// rows that each player can satisfy with its own controls.
pub fn random_game(rng: &mut StdRng, shape: &GameShape) -> LqGame {
    let dims = shape.dims();
    let n = dims.n;
    let np = dims.players;
    let mut game = LqGame::zeros(dims.clone());
    for t in 0..dims.horizon {
        let m = dims.m(t);
        let st = &mut game.stages[t];
        st.a = DMatrix::identity(n, n) + rand_mat(rng, n, n, 0.3);
        st.b = rand_mat(rng, n, m, 1.0);
        st.c = rand_vec(rng, n, 0.5);
        for i in 0..np {
            let own = dims.own_indices(t, i);
            let p = &mut st.players[i];
            let h = rand_psd(rng, n + m);
            p.q_mat = h.view((0, 0), (n, n)).into_owned();
            p.s_mat = h.view((n, 0), (m, n)).into_owned();
            p.r_mat = h.view((n, n), (m, m)).into_owned();
            for &o in &own {
                p.r_mat[(o, o)] += 1.0;
            }
            p.q = rand_vec(rng, n, 1.0);
            p.r = rand_vec(rng, m, 1.0);
            let a = dims.a(t, i);
            p.hx = rand_mat(rng, a, n, 1.0);
            p.hu = rand_mat(rng, a, m, 0.3);
            for r in 0..a {
                p.hu[(r, own[r % own.len()])] += 2.0;
            }
            p.h = rand_vec(rng, a, 1.0);
            let b = dims.b(t, i);
            p.gx = rand_mat(rng, b, n, 1.0);
            p.gu = rand_mat(rng, b, m, 0.3);
            for r in 0..b {
                p.gu[(r, own[r % own.len()])] += if rng.gen_bool(0.5) { 1.5 } else { -1.5 };
            }
            p.g = rand_vec(rng, b, 1.0) + DVector::from_element(b, 0.3);
        }
    }
    let t = dims.horizon;
    for i in 0..np {
        let p: &mut LqPlayerStage = &mut game.terminal[i];
        p.q_mat = rand_psd(rng, n) + DMatrix::identity(n, n) * 0.5;
        p.q = rand_vec(rng, n, 1.0);
        let a = dims.a(t, i);
        p.hx = rand_mat(rng, a, n, 1.0);
        p.h = rand_vec(rng, a, 1.0);
        let b = dims.b(t, i);
        p.gx = rand_mat(rng, b, n, 1.0);
        p.g = rand_vec(rng, b, 1.0) + DVector::from_element(b, 0.3);
    }
    game.regular = true;
    game
}

/// Riccati recursion for a single-player unconstrained LQ problem.
/// Returns `(K_t, k_t)` for every control stage.
pub fn riccati_gains(game: &LqGame) -> Vec<(DMatrix<f64>, DVector<f64>)> {
    assert_eq!(game.dims.players, 1);
    let horizon = game.dims.horizon;
    let mut p_mat = game.terminal[0].q_mat.clone();
    let mut p_vec = game.terminal[0].q.clone();
    let mut out = vec![(DMatrix::zeros(0, 0), DVector::zeros(0)); horizon];
    for t in (0..horizon).rev() {
        let st = &game.stages[t];
        let c = &st.players[0];
        let pc = &p_mat * &st.c + &p_vec;
        let huu = &c.r_mat + st.b.transpose() * &p_mat * &st.b;
        let hux = &c.s_mat + st.b.transpose() * &p_mat * &st.a;
        let hu = &c.r + st.b.transpose() * &pc;
        let inv = huu.clone().try_inverse().expect("Riccati Huu invertible");
        let k_mat = -&inv * &hux;
        let k = -&inv * &hu;
        let new_p = &c.q_mat + st.a.transpose() * &p_mat * &st.a + hux.transpose() * &k_mat;
        let new_p_vec = &c.q + st.a.transpose() * &pc + hux.transpose() * &k;
        p_mat = (&new_p + new_p.transpose()) * 0.5;
        p_vec = new_p_vec;
        out[t] = (k_mat, k);
    }
    out
}

pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0f64, |a, v| a.max(v.abs()))
}

pub fn max_abs_vec(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0f64, |a, x| a.max(x.abs()))
}

/// Random (not dynamically consistent) trajectory of the right shape.
pub fn random_trajectory(rng: &mut StdRng, dims: &Dimensions, scale: f64) -> Trajectory {
    Trajectory {
        x: (0..=dims.horizon).map(|_| rand_vec(rng, dims.n, scale)).collect(),
        u: (0..dims.horizon).map(|t| rand_vec(rng, dims.m(t), scale)).collect(),
    }
}

/// Random multipliers of every family, with inequality multipliers of
/// both signs.
pub fn random_multipliers(rng: &mut StdRng, dims: &Dimensions, scale: f64) -> Multipliers {
    let mut mult = Multipliers::zeros(dims);
    for family in [&mut mult.lambda, &mut mult.mu, &mut mult.gamma, &mut mult.psi] {
        for stage in family.iter_mut() {
            for v in stage.iter_mut() {
                *v = rand_vec(rng, v.len(), scale);
            }
        }
    }
    mult
}

/// Random gains `m_t x n` for every control stage.
pub fn random_gains(rng: &mut StdRng, dims: &Dimensions, scale: f64) -> Vec<DMatrix<f64>> {
    (0..dims.horizon).map(|t| rand_mat(rng, dims.m(t), dims.n, scale)).collect()
}

pub fn all_rows(game: &LqGame) -> Vec<RowId> {
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

/// A candidate equilibrium found by brute force.
pub struct Candidate {
    pub working_set: WorkingSet,
    pub trajectory: Trajectory,
}

/// Solves the game once for every subset of inequality rows with the
/// dense one-shot system and keeps the subsets whose solution is feasible
/// and has non-negative working multipliers.
pub fn enumerate(game: &LqGame, x1: &DVector<f64>) -> Vec<Candidate> {
    let rows = all_rows(game);
    let mut out = Vec::new();
    for mask in 0u32..(1 << rows.len()) {
        let ws = WorkingSet::from_rows(
            rows.iter()
                .enumerate()
                .filter(|(k, _)| mask & (1 << k) != 0)
                .map(|(_, r)| *r),
        );
        let Ok(sol) = monolithic_oracle(game, &ws, x1) else {
            continue;
        };
        let scale = 1.0 + sol.trajectory.max_abs();
        let feasible = rows.iter().all(|r| row_value(game, &sol.trajectory, *r) >= -1e-9 * scale);
        let signs = ws
            .iter()
            .all(|r| sol.multipliers.gamma[r.stage][r.player][r.row] >= -1e-9 * (1.0 + sol.multipliers.max_abs()));
        if feasible && signs {
            out.push(Candidate {
                working_set: ws,
                trajectory: sol.trajectory,
            });
        }
    }
    out
}

pub fn constrained_game(rng: &mut StdRng) -> (LqGame, DVector<f64>) {
    let players = rng.gen_range(1..=2);
    let shape = GameShape {
        n: 2,
        horizon: 3,
        controls: vec![1; players],
        equalities: vec![0; players],
        inequalities: vec![1; players],
        terminal_equalities: vec![0; players],
        terminal_inequalities: vec![if players == 1 { 1 } else { 0 }; players],
    };
    let mut game = random_game(rng, &shape);
    // pull offsets down so that several rows bind
    for t in 0..game.dims.horizon {
        for p in game.stages[t].players.iter_mut() {
            p.g.add_scalar_mut(-0.6);
        }
    }
    let x1 = rand_vec(rng, 2, 2.0);
    (game, x1)
}
