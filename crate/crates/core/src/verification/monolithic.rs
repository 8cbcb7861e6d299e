//! One-shot dense solve of the full first-order system.
//!
//! For a subgame starting at `t0` every condition of every later stage is
//! written into a single matrix over all subgame unknowns and solved once.
//! The policy gradients of later stages come from the same procedure
//! applied to the shorter subgames, so nothing is shared with the
//! stagewise solver. This is meant as a test oracle for small games.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::game_model::{LqGame, LqPlayerStage, Multipliers, Trajectory};
use crate::working_set::WorkingSet;

/// Largest system width the oracle accepts.
pub const MAX_WIDTH: usize = 5000;

#[derive(Debug, Clone)]
pub struct MonolithicSolution {
    pub trajectory: Trajectory,
    pub multipliers: Multipliers,
    /// `K_t` for every control stage.
    pub policy_gains: Vec<DMatrix<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
enum Var {
    U(usize),
    /// Active-row multipliers of one player.
    Mu(usize, usize),
    Lam(usize, usize),
    X(usize),
    Psi(usize, usize),
}

/// Active rows of one player: `(equality count, working inequality rows)`.
fn active(game: &LqGame, ws: &WorkingSet, t: usize, i: usize) -> (usize, Vec<usize>) {
    (game.dims.a(t, i), ws.rows_of(t, i))
}

/// Stacked active constraint rows `(Jx, Ju, j)`.
fn active_data(p: &LqPlayerStage, eq: usize, ineq: &[usize]) -> (DMatrix<f64>, DMatrix<f64>, DVector<f64>) {
    let k = eq + ineq.len();
    let n = p.hx.ncols();
    let m = p.hu.ncols();
    let mut jx = DMatrix::zeros(k, n);
    let mut ju = DMatrix::zeros(k, m);
    let mut j = DVector::zeros(k);
    for r in 0..eq {
        jx.row_mut(r).copy_from(&p.hx.row(r));
        ju.row_mut(r).copy_from(&p.hu.row(r));
        j[r] = p.h[r];
    }
    for (k, &r) in ineq.iter().enumerate() {
        jx.row_mut(eq + k).copy_from(&p.gx.row(r));
        ju.row_mut(eq + k).copy_from(&p.gu.row(r));
        j[eq + k] = p.g[r];
    }
    (jx, ju, j)
}

struct System {
    index: HashMap<Var, (usize, usize)>,
    width: usize,
    m: DMatrix<f64>,
    /// Coefficient of the initial state `x_{t0}`.
    nx: DMatrix<f64>,
    c: DVector<f64>,
    row: usize,
    t0: usize,
}

impl System {
    fn new(vars: Vec<(Var, usize)>, n: usize, t0: usize) -> Self {
        let mut index = HashMap::new();
        let mut off = 0;
        for (v, len) in vars {
            index.insert(v, (off, len));
            off += len;
        }
        Self {
            index,
            width: off,
            m: DMatrix::zeros(off, off),
            nx: DMatrix::zeros(off, n),
            c: DVector::zeros(off),
            row: 0,
            t0,
        }
    }

    /// Adds `coef · var` to the equations starting at the current row.
    fn term(&mut self, var: Var, coef: &DMatrix<f64>) {
        if coef.nrows() == 0 || coef.ncols() == 0 {
            return;
        }
        if var == Var::X(self.t0) {
            let mut v = self.nx.view_mut((self.row, 0), coef.shape());
            v += coef;
            return;
        }
        let (off, len) = self.index[&var];
        assert_eq!(len, coef.ncols());
        let mut v = self.m.view_mut((self.row, off), coef.shape());
        v += coef;
    }

    fn constant(&mut self, v: &DVector<f64>) {
        for (k, x) in v.iter().enumerate() {
            self.c[self.row + k] += x;
        }
    }

    fn next(&mut self, rows: usize) {
        self.row += rows;
    }
}

fn pick_rows(m: &DMatrix<f64>, idx: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(idx.len(), m.ncols(), |r, c| m[(idx[r], c)])
}

fn pick_cols(m: &DMatrix<f64>, idx: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(m.nrows(), idx.len(), |r, c| m[(r, idx[c])])
}

fn pick(v: &DVector<f64>, idx: &[usize]) -> DVector<f64> {
    DVector::from_fn(idx.len(), |r, _| v[idx[r]])
}

/// Assembles the subgame system from `t0`, given gains for stages `> t0`.
fn assemble(game: &LqGame, ws: &WorkingSet, t0: usize, gains: &[Option<DMatrix<f64>>]) -> Result<System> {
    let d = &game.dims;
    let n = d.n;
    let np = d.players;
    let horizon = d.horizon;
    let id = |k: usize| DMatrix::<f64>::identity(k, k);

    let mut vars = Vec::new();
    for s in t0..horizon {
        vars.push((Var::U(s), d.m(s)));
        for i in 0..np {
            let (eq, ineq) = active(game, ws, s, i);
            vars.push((Var::Mu(s, i), eq + ineq.len()));
            vars.push((Var::Lam(s, i), n));
        }
        vars.push((Var::X(s + 1), n));
        if s + 1 < horizon {
            for i in 0..np {
                vars.push((Var::Psi(s + 1, i), d.m_others(s + 1, i)));
            }
        }
    }
    for i in 0..np {
        let (eq, ineq) = active(game, ws, horizon, i);
        vars.push((Var::Mu(horizon, i), eq + ineq.len()));
    }
    let width: usize = vars.iter().map(|v| v.1).sum();
    if width > MAX_WIDTH {
        return Err(Error::TooLarge(width));
    }
    let mut sys = System::new(vars, n, t0);

    for s in t0..horizon {
        let st = &game.stages[s];
        for i in 0..np {
            let p = &st.players[i];
            let (eq, ineq) = active(game, ws, s, i);
            let (jx, ju, j) = active_data(p, eq, &ineq);
            let own = d.own_indices(s, i);
            let others = d.other_indices(s, i);

            // own controls
            sys.term(Var::U(s), &pick_rows(&p.r_mat, &own));
            sys.term(Var::X(s), &pick_rows(&p.s_mat, &own));
            sys.term(Var::Lam(s, i), &pick_cols(&st.b, &own).transpose());
            sys.term(Var::Mu(s, i), &(-pick_cols(&ju, &own).transpose()));
            sys.constant(&pick(&p.r, &own));
            sys.next(own.len());

            if s > t0 {
                // state
                sys.term(Var::X(s), &p.q_mat);
                sys.term(Var::U(s), &p.s_mat.transpose());
                sys.term(Var::Lam(s - 1, i), &(-id(n)));
                sys.term(Var::Lam(s, i), &st.a.transpose());
                sys.term(Var::Mu(s, i), &(-jx.transpose()));
                let k = gains[s].as_ref().expect("later-stage gains");
                sys.term(Var::Psi(s, i), &pick_rows(k, &others).transpose());
                sys.constant(&p.q);
                sys.next(n);

                // other players' controls
                sys.term(Var::U(s), &pick_rows(&p.r_mat, &others));
                sys.term(Var::X(s), &pick_rows(&p.s_mat, &others));
                sys.term(Var::Lam(s, i), &pick_cols(&st.b, &others).transpose());
                sys.term(Var::Mu(s, i), &(-pick_cols(&ju, &others).transpose()));
                sys.term(Var::Psi(s, i), &(-id(others.len())));
                sys.constant(&pick(&p.r, &others));
                sys.next(others.len());
            }

            // active rows
            sys.term(Var::X(s), &jx);
            sys.term(Var::U(s), &ju);
            sys.constant(&j);
            sys.next(j.len());
        }
        // dynamics
        sys.term(Var::X(s + 1), &id(n));
        sys.term(Var::X(s), &(-&st.a));
        sys.term(Var::U(s), &(-&st.b));
        sys.constant(&(-&st.c));
        sys.next(n);
    }
    for i in 0..np {
        let p = &game.terminal[i];
        let (eq, ineq) = active(game, ws, horizon, i);
        let (jx, _, j) = active_data(p, eq, &ineq);
        sys.term(Var::X(horizon), &p.q_mat);
        sys.term(Var::Lam(horizon - 1, i), &(-id(n)));
        sys.term(Var::Mu(horizon, i), &(-jx.transpose()));
        sys.constant(&p.q);
        sys.next(n);
        sys.term(Var::X(horizon), &jx);
        sys.constant(&j);
        sys.next(j.len());
    }
    if sys.row != sys.width {
        return Err(Error::SingularSystem(format!(
            "{} equations for {} unknowns",
            sys.row, sys.width
        )));
    }
    Ok(sys)
}

/// Solves `M z + N x + c = 0` for `z` as an affine function of `x`.
fn solve_affine(sys: &System) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let n = sys.nx.ncols();
    let mut rhs = DMatrix::zeros(sys.width, n + 1);
    rhs.view_mut((0, 0), (sys.width, n)).copy_from(&(-&sys.nx));
    rhs.set_column(n, &(-&sys.c));
    let sol = sys
        .m
        .clone()
        .full_piv_lu()
        .solve(&rhs)
        .ok_or_else(|| Error::SingularSystem(format!("subgame from stage {}", sys.t0 + 1)))?;
    if sol.iter().any(|v| !v.is_finite()) {
        return Err(Error::SingularSystem(format!("subgame from stage {}", sys.t0 + 1)));
    }
    let z = sol.columns(0, n).into_owned();
    let z0 = sol.column(n).into_owned();
    Ok((z, z0))
}

/// Solves the game with the working rows `ws` enforced as equalities.
pub fn monolithic_oracle(game: &LqGame, ws: &WorkingSet, x1: &DVector<f64>) -> Result<MonolithicSolution> {
    let d = &game.dims;
    d.check()?;
    let horizon = d.horizon;
    let mut gains: Vec<Option<DMatrix<f64>>> = vec![None; horizon];
    for t0 in (1..horizon).rev() {
        let sys = assemble(game, ws, t0, &gains)?;
        let (z, _) = solve_affine(&sys)?;
        let (off, len) = sys.index[&Var::U(t0)];
        gains[t0] = Some(z.rows(off, len).into_owned());
    }
    let sys = assemble(game, ws, 0, &gains)?;
    let (z, z0) = solve_affine(&sys)?;
    let (off, len) = sys.index[&Var::U(0)];
    gains[0] = Some(z.rows(off, len).into_owned());
    let values = &z * x1 + z0;
    let get = |v: Var| -> DVector<f64> {
        let (off, len) = sys.index[&v];
        values.rows(off, len).into_owned()
    };

    let mut traj = Trajectory::zeros(d);
    let mut mult = Multipliers::zeros(d);
    traj.x[0] = x1.clone();
    for s in 0..horizon {
        traj.u[s] = get(Var::U(s));
        traj.x[s + 1] = get(Var::X(s + 1));
        for i in 0..d.players {
            mult.lambda[s][i] = get(Var::Lam(s, i));
            if s >= 1 {
                mult.psi[s][i] = get(Var::Psi(s, i));
            }
        }
    }
    for s in 0..=horizon {
        for i in 0..d.players {
            let (eq, ineq) = active(game, ws, s, i);
            let v = get(Var::Mu(s, i));
            mult.mu[s][i] = v.rows(0, eq).into_owned();
            for (k, &r) in ineq.iter().enumerate() {
                mult.gamma[s][i][r] = v[eq + k];
            }
        }
    }
    Ok(MonolithicSolution {
        trajectory: traj,
        multipliers: mult,
        policy_gains: gains.into_iter().map(|g| g.expect("all gains computed")).collect(),
    })
}
