//! Linear-quadratic games.

use nalgebra::{DMatrix, DVector};

use super::{Dimensions, GameModel, ScalarEval, Trajectory, VecEval};
use crate::linalg::{put, put_vec};

/// Cost and constraint data of one player at one stage.
///
/// The stage cost is
/// `½ [x;u]ᵀ [Q Sᵀ; S R] [x;u] + [x;u]ᵀ [q; r] + constant`,
/// the equality rows are `Hx x + Hu u + h = 0` and the inequality rows are
/// `Gx x + Gu u + g ≥ 0`. At the terminal stage all control blocks have
/// zero columns.
#[derive(Debug, Clone, PartialEq)]
pub struct LqPlayerStage {
    pub q_mat: DMatrix<f64>,
    pub s_mat: DMatrix<f64>,
    pub r_mat: DMatrix<f64>,
    pub q: DVector<f64>,
    pub r: DVector<f64>,
    pub constant: f64,
    pub hx: DMatrix<f64>,
    pub hu: DMatrix<f64>,
    pub h: DVector<f64>,
    pub gx: DMatrix<f64>,
    pub gu: DMatrix<f64>,
    pub g: DVector<f64>,
}

impl LqPlayerStage {
    pub fn zeros(n: usize, m: usize, a: usize, b: usize) -> Self {
        Self {
            q_mat: DMatrix::zeros(n, n),
            s_mat: DMatrix::zeros(m, n),
            r_mat: DMatrix::zeros(m, m),
            q: DVector::zeros(n),
            r: DVector::zeros(m),
            constant: 0.0,
            hx: DMatrix::zeros(a, n),
            hu: DMatrix::zeros(a, m),
            h: DVector::zeros(a),
            gx: DMatrix::zeros(b, n),
            gu: DMatrix::zeros(b, m),
            g: DVector::zeros(b),
        }
    }

    pub fn cost(&self, x: &DVector<f64>, u: &DVector<f64>) -> f64 {
        let quad = 0.5 * x.dot(&(&self.q_mat * x))
            + u.dot(&(&self.s_mat * x))
            + 0.5 * u.dot(&(&self.r_mat * u));
        quad + x.dot(&self.q) + u.dot(&self.r) + self.constant
    }

    pub fn equality_value(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        &self.hx * x + &self.hu * u + &self.h
    }

    pub fn inequality_value(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        &self.gx * x + &self.gu * u + &self.g
    }

    /// Full Hessian of the cost over `[x; u]`.
    pub fn hessian(&self) -> DMatrix<f64> {
        let n = self.q_mat.nrows();
        let m = self.r_mat.nrows();
        let mut h = DMatrix::zeros(n + m, n + m);
        put(&mut h, 0, 0, &self.q_mat);
        put(&mut h, n, 0, &self.s_mat);
        put(&mut h, 0, n, &self.s_mat.transpose());
        put(&mut h, n, n, &self.r_mat);
        h
    }
}

/// Dynamics `x_{t+1} = A x_t + B u_t + c` plus per-player data.
#[derive(Debug, Clone, PartialEq)]
pub struct LqStage {
    pub a: DMatrix<f64>,
    /// `[B^1 ... B^N]`, `n × m_t`.
    pub b: DMatrix<f64>,
    pub c: DVector<f64>,
    pub players: Vec<LqPlayerStage>,
}

/// A linear-quadratic game with equality and inequality constraints.
#[derive(Debug, Clone, PartialEq)]
pub struct LqGame {
    pub dims: Dimensions,
    pub stages: Vec<LqStage>,
    /// Terminal (stage `T`) data with zero-width control blocks.
    pub terminal: Vec<LqPlayerStage>,
    /// Declares `R_t^{i,i,i} ≻ 0`; checked by `validate`.
    pub regular: bool,
}

impl LqGame {
    /// All-zero coefficients (identity-free dynamics) of the given shape.
    pub fn zeros(dims: Dimensions) -> Self {
        let n = dims.n;
        let stages = (0..dims.horizon)
            .map(|t| LqStage {
                a: DMatrix::zeros(n, n),
                b: DMatrix::zeros(n, dims.m(t)),
                c: DVector::zeros(n),
                players: (0..dims.players)
                    .map(|i| LqPlayerStage::zeros(n, dims.m(t), dims.a(t, i), dims.b(t, i)))
                    .collect(),
            })
            .collect();
        let t = dims.horizon;
        let terminal = (0..dims.players)
            .map(|i| LqPlayerStage::zeros(n, 0, dims.a(t, i), dims.b(t, i)))
            .collect();
        Self {
            dims,
            stages,
            terminal,
            regular: false,
        }
    }

    pub fn horizon(&self) -> usize {
        self.dims.horizon
    }

    /// Player data at stage `t`, including the terminal stage.
    pub fn player(&self, t: usize, i: usize) -> &LqPlayerStage {
        if t == self.dims.horizon {
            &self.terminal[i]
        } else {
            &self.stages[t].players[i]
        }
    }

    pub fn player_mut(&mut self, t: usize, i: usize) -> &mut LqPlayerStage {
        if t == self.dims.horizon {
            &mut self.terminal[i]
        } else {
            &mut self.stages[t].players[i]
        }
    }

    /// Controls of stage `t` or an empty vector at the terminal stage.
    pub fn control_at(&self, traj: &Trajectory, t: usize) -> DVector<f64> {
        if t < self.dims.horizon {
            traj.u[t].clone()
        } else {
            DVector::zeros(0)
        }
    }

    /// Affine rollout under the given controls.
    pub fn rollout(&self, x1: &DVector<f64>, controls: &[DVector<f64>]) -> Trajectory {
        let mut x = vec![x1.clone()];
        for (t, u) in controls.iter().enumerate() {
            let s = &self.stages[t];
            let next = &s.a * &x[t] + &s.b * u + &s.c;
            x.push(next);
        }
        Trajectory {
            x,
            u: controls.to_vec(),
        }
    }

    /// Total cost of each player along a trajectory.
    pub fn total_costs(&self, traj: &Trajectory) -> Vec<f64> {
        (0..self.dims.players)
            .map(|i| {
                (0..=self.dims.horizon)
                    .map(|t| self.player(t, i).cost(&traj.x[t], &self.control_at(traj, t)))
                    .sum()
            })
            .collect()
    }

    /// The game in deviation coordinates around `traj`.
    ///
    /// Quadratic terms are kept, linear terms become gradients at `traj`,
    /// `c` becomes the dynamics defect and constraint offsets become the
    /// constraint values at `traj`. Solving the result from a zero initial
    /// deviation yields the step from `traj` to the equilibrium.
    pub fn recentered(&self, traj: &Trajectory) -> LqGame {
        let mut out = self.clone();
        for t in 0..=self.dims.horizon {
            let x = &traj.x[t];
            let u = self.control_at(traj, t);
            let p = out.player_mut_all(t);
            for pl in p {
                let q_new = &pl.q_mat * x + pl.s_mat.transpose() * &u + &pl.q;
                let r_new = &pl.s_mat * x + &pl.r_mat * &u + &pl.r;
                let h_new = pl.equality_value(x, &u);
                let g_new = pl.inequality_value(x, &u);
                pl.constant = pl.cost(x, &u);
                pl.q = q_new;
                pl.r = r_new;
                pl.h = h_new;
                pl.g = g_new;
            }
            if t < self.dims.horizon {
                let s = &mut out.stages[t];
                s.c = &s.a * x + &s.b * &u + &s.c - &traj.x[t + 1];
            }
        }
        out
    }

    fn player_mut_all(&mut self, t: usize) -> &mut Vec<LqPlayerStage> {
        if t == self.dims.horizon {
            &mut self.terminal
        } else {
            &mut self.stages[t].players
        }
    }

    /// Same game with all offsets (`c`, `q`, `r`, `h`, `g`) scaled by `s`.
    pub fn scaled_offsets(&self, s: f64) -> LqGame {
        let mut out = self.clone();
        for t in 0..=self.dims.horizon {
            if t < self.dims.horizon {
                out.stages[t].c *= s;
            }
            for pl in out.player_mut_all(t) {
                pl.q *= s;
                pl.r *= s;
                pl.h *= s;
                pl.g *= s;
            }
        }
        out
    }

    /// Drops every inequality row.
    pub fn without_inequalities(&self) -> LqGame {
        let mut out = self.clone();
        let n = self.dims.n;
        for t in 0..=self.dims.horizon {
            let m = self.dims.m(t);
            for pl in out.player_mut_all(t) {
                pl.gx = DMatrix::zeros(0, n);
                pl.gu = DMatrix::zeros(0, m);
                pl.g = DVector::zeros(0);
            }
            for b in out.dims.inequalities[t].iter_mut() {
                *b = 0;
            }
        }
        out
    }

    /// The subgame on stages `t..=T`.
    pub fn subgame(&self, t: usize) -> LqGame {
        let mut dims = self.dims.clone();
        dims.horizon -= t;
        dims.controls.drain(..t);
        dims.equalities.drain(..t);
        dims.inequalities.drain(..t);
        LqGame {
            dims,
            stages: self.stages[t..].to_vec(),
            terminal: self.terminal.clone(),
            regular: self.regular,
        }
    }
}

impl GameModel for LqGame {
    fn dims(&self) -> &Dimensions {
        &self.dims
    }

    fn dynamics(&self, t: usize, x: &DVector<f64>, u: &DVector<f64>) -> VecEval {
        let s = &self.stages[t];
        let n = self.dims.n;
        let m = u.len();
        let mut jac = DMatrix::zeros(n, n + m);
        put(&mut jac, 0, 0, &s.a);
        put(&mut jac, 0, n, &s.b);
        VecEval {
            value: &s.a * x + &s.b * u + &s.c,
            jac,
            hess: vec![DMatrix::zeros(n + m, n + m); n],
        }
    }

    fn cost(&self, t: usize, player: usize, x: &DVector<f64>, u: &DVector<f64>) -> ScalarEval {
        let p = self.player(t, player);
        let hess = p.hessian();
        let n = x.len();
        let mut grad = DVector::zeros(n + u.len());
        put_vec(&mut grad, 0, &(&p.q_mat * x + p.s_mat.transpose() * u + &p.q));
        put_vec(&mut grad, n, &(&p.s_mat * x + &p.r_mat * u + &p.r));
        ScalarEval {
            value: p.cost(x, u),
            grad,
            hess,
        }
    }

    fn equality(&self, t: usize, player: usize, x: &DVector<f64>, u: &DVector<f64>) -> VecEval {
        let p = self.player(t, player);
        affine_rows(&p.hx, &p.hu, p.equality_value(x, u))
    }

    fn inequality(&self, t: usize, player: usize, x: &DVector<f64>, u: &DVector<f64>) -> VecEval {
        let p = self.player(t, player);
        affine_rows(&p.gx, &p.gu, p.inequality_value(x, u))
    }
}

fn affine_rows(jx: &DMatrix<f64>, ju: &DMatrix<f64>, value: DVector<f64>) -> VecEval {
    let rows = jx.nrows();
    let n = jx.ncols();
    let m = ju.ncols();
    let mut jac = DMatrix::zeros(rows, n + m);
    put(&mut jac, 0, 0, jx);
    put(&mut jac, 0, n, ju);
    VecEval {
        value,
        jac,
        hess: vec![DMatrix::zeros(n + m, n + m); rows],
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_game() -> LqGame {
        let dims = Dimensions::uniform(1, 1, &[1], &[0], &[0], &[0], &[0]);
        let mut g = LqGame::zeros(dims);
        g.stages[0].a[(0, 0)] = 1.0;
        g.stages[0].b[(0, 0)] = 1.0;
        g.stages[0].players[0].r_mat[(0, 0)] = 2.0;
        g.terminal[0].q_mat[(0, 0)] = 2.0;
        g.regular = true;
        g
    }

    #[test]
    fn recentering_preserves_costs_up_to_shift() {
        let g = scalar_game();
        let traj = g.rollout(&DVector::from_vec(vec![2.0]), &[DVector::from_vec(vec![0.5])]);
        let rc = g.recentered(&traj);
        // zero deviation reproduces the original costs and zero defect
        let zero = Trajectory::zeros(&g.dims);
        let costs0 = g.total_costs(&traj);
        let costs1 = rc.total_costs(&zero);
        assert!((costs0[0] - costs1[0]).abs() < 1e-14);
        assert_eq!(rc.stages[0].c[0], 0.0);
        // q at the terminal stage becomes the terminal gradient Q x
        assert!((rc.terminal[0].q[0] - 2.0 * traj.x[1][0]).abs() < 1e-14);
    }

    #[test]
    fn subgame_drops_leading_stages() {
        let dims = Dimensions::uniform(1, 3, &[1], &[0], &[0], &[0], &[0]);
        let g = LqGame::zeros(dims);
        let s = g.subgame(1);
        assert_eq!(s.dims.horizon, 2);
        assert_eq!(s.stages.len(), 2);
        assert_eq!(s.dims.equalities.len(), 3);
    }
}
