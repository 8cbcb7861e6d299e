//! Exact feedback equilibria of equality-constrained LQ games.
//!
//! The solver walks backwards from the last control stage. At stage `t` it
//! assembles one square block system in the unknowns
//!
//! ```text
//! z_t = [u_t, μ_t, λ_t, ψ_{t+1}, x_{t+1}]          (t < T − 1)
//! z_t = [u_t, μ_t, λ_t, x_T, μ_T]                   (t = T − 1)
//! ```
//!
//! whose tail rows fold in the already computed stage-`t+1` gains. One
//! dense LU factorization with `n + 1` right-hand sides then gives every
//! unknown as an affine function of `x_t`. Rows of a working set of
//! inequalities are handled exactly like equality rows, with their
//! multipliers reported as `γ`.
//!
//! Stage indices are zero-based, and the terminal stage is `T`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::game_model::{combine_lq_stages, LqGame, LqPlayerStage, Multipliers, StageGroups, Trajectory};
use crate::linalg::{put, put_identity, select_cols, select_entries, select_rows, solve_pivoted};
use crate::working_set::WorkingSet;

/// Rows of one player's constraint block treated as equalities: all
/// equality rows followed by the working inequality rows.
#[derive(Debug, Clone, PartialEq)]
pub struct ActiveRows {
    pub equalities: usize,
    pub inequalities: Vec<usize>,
}

impl ActiveRows {
    pub fn len(&self) -> usize {
        self.equalities + self.inequalities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Stacked active constraint data `J_x x + J_u u + j` of one player.
struct ActiveBlock {
    jx: DMatrix<f64>,
    ju: DMatrix<f64>,
    off: DVector<f64>,
}

fn active_rows(ws: &WorkingSet, game: &LqGame, t: usize) -> Vec<ActiveRows> {
    (0..game.dims.players)
        .map(|i| ActiveRows {
            equalities: game.dims.a(t, i),
            inequalities: ws.rows_of(t, i),
        })
        .collect()
}

fn active_block(p: &LqPlayerStage, rows: &ActiveRows) -> ActiveBlock {
    let gx = select_rows(&p.gx, &rows.inequalities);
    let gu = select_rows(&p.gu, &rows.inequalities);
    let g = select_entries(&p.g, &rows.inequalities);
    let k = rows.len();
    let mut jx = DMatrix::zeros(k, p.hx.ncols());
    let mut ju = DMatrix::zeros(k, p.hu.ncols());
    let mut off = DVector::zeros(k);
    let a = rows.equalities;
    put(&mut jx, 0, 0, &p.hx);
    put(&mut jx, a, 0, &gx);
    put(&mut ju, 0, 0, &p.hu);
    put(&mut ju, a, 0, &gu);
    off.rows_mut(0, a).copy_from(&p.h);
    off.rows_mut(a, k - a).copy_from(&g);
    ActiveBlock { jx, ju, off }
}

/// Affine maps `x_t ↦ z_t` produced by the stage solve.
#[derive(Debug, Clone)]
pub struct StageGains {
    pub stage: usize,
    /// `u_t = K x_t + k`.
    pub k_mat: DMatrix<f64>,
    pub k: DVector<f64>,
    /// `λ_t`, stacked over players (`N·n` rows).
    pub lambda_mat: DMatrix<f64>,
    pub lambda: DVector<f64>,
    /// Active-row multipliers, stacked over players in the order of
    /// `active`.
    pub mu_mat: DMatrix<f64>,
    pub mu: DVector<f64>,
    /// `ψ_{t+1}`, stacked over players; empty at the last control stage.
    pub psi_mat: DMatrix<f64>,
    pub psi: DVector<f64>,
    /// `x_{t+1}` as produced by the stage system.
    pub x_mat: DMatrix<f64>,
    pub x: DVector<f64>,
    /// Terminal active-row multipliers, present only at the last control
    /// stage.
    pub terminal_mu: Option<(DMatrix<f64>, DVector<f64>)>,
    pub active: Vec<ActiveRows>,
    pub terminal_active: Option<Vec<ActiveRows>>,
    /// Smallest over largest LU pivot magnitude of the stage matrix.
    pub pivot_ratio: f64,
}

impl StageGains {
    /// Offset of player `i`'s block inside `mu`.
    pub fn mu_offset(&self, i: usize) -> usize {
        self.active[..i].iter().map(ActiveRows::len).sum()
    }

    /// Player `i`'s slice of the `λ_t` gains.
    pub fn lambda_of(&self, i: usize, n: usize) -> (DMatrix<f64>, DVector<f64>) {
        (
            self.lambda_mat.rows(i * n, n).into_owned(),
            self.lambda.rows(i * n, n).into_owned(),
        )
    }

    /// Player `i`'s slice of the active-row multiplier gains.
    pub fn mu_of(&self, i: usize) -> (DMatrix<f64>, DVector<f64>) {
        let off = self.mu_offset(i);
        let len = self.active[i].len();
        (
            self.mu_mat.rows(off, len).into_owned(),
            self.mu.rows(off, len).into_owned(),
        )
    }
}

/// Solved game: gains per stage, equilibrium trajectory and multipliers.
#[derive(Debug, Clone)]
pub struct FeedbackSolution {
    pub gains: Vec<StageGains>,
    pub trajectory: Trajectory,
    pub multipliers: Multipliers,
}

impl FeedbackSolution {
    /// Feedback gains `K_t`, which are also the policy (quasi-)gradients.
    pub fn policy_gains(&self) -> Vec<DMatrix<f64>> {
        self.gains.iter().map(|g| g.k_mat.clone()).collect()
    }

    /// Multipliers of the working inequality rows, as `(row id, value)`.
    pub fn working_multipliers(&self, ws: &WorkingSet) -> Vec<(crate::working_set::RowId, f64)> {
        ws.iter()
            .map(|id| (*id, self.multipliers.gamma[id.stage][id.player][id.row]))
            .collect()
    }
}

/// Data of stage `t + 1` needed by the stage-`t` system.
struct NextStage<'a> {
    gains: &'a StageGains,
}

/// Builds and solves the block system of control stage `t`.
fn solve_stage(game: &LqGame, ws: &WorkingSet, t: usize, next: Option<NextStage>) -> Result<StageGains> {
    let dims = &game.dims;
    let n = dims.n;
    let np = dims.players;
    let horizon = dims.horizon;
    let last = t + 1 == horizon;
    let stage = &game.stages[t];
    let m = dims.m(t);

    let active = active_rows(ws, game, t);
    let blocks: Vec<ActiveBlock> = (0..np).map(|i| active_block(&stage.players[i], &active[i])).collect();
    let a_tot: usize = active.iter().map(ActiveRows::len).sum();

    let (terminal_active, terminal_blocks) = if last {
        let ta = active_rows(ws, game, horizon);
        let tb: Vec<ActiveBlock> = (0..np).map(|i| active_block(&game.terminal[i], &ta[i])).collect();
        (Some(ta), tb)
    } else {
        (None, Vec::new())
    };
    let a_term: usize = terminal_active.as_ref().map_or(0, |ta| ta.iter().map(ActiveRows::len).sum());
    let psi_lens: Vec<usize> = if last {
        vec![0; np]
    } else {
        (0..np).map(|i| dims.m_others(t + 1, i)).collect()
    };
    let p_tot: usize = psi_lens.iter().sum();

    // column offsets
    let c_u = 0;
    let c_mu = m;
    let c_lam = c_mu + a_tot;
    let c_psi = c_lam + np * n;
    let c_x = c_psi + p_tot;
    let c_mut = c_x + n;
    let width = c_mut + a_term;

    let mut lhs = DMatrix::zeros(width, width);
    let mut rhs = DMatrix::zeros(width, n + 1);

    // player offsets inside μ and ψ
    let mu_off: Vec<usize> = prefix(active.iter().map(ActiveRows::len));
    let psi_off: Vec<usize> = prefix(psi_lens.iter().copied());
    let mut_off: Vec<usize> = terminal_active
        .as_ref()
        .map_or(vec![0; np], |ta| prefix(ta.iter().map(ActiveRows::len)));

    let mut row = 0;
    // own-control stationarity
    for i in 0..np {
        let own = dims.own_indices(t, i);
        let p = &stage.players[i];
        let r_own = select_rows(&p.r_mat, &own);
        put(&mut lhs, row, c_u, &r_own);
        let hu_own = select_cols(&blocks[i].ju, &own);
        put(&mut lhs, row, c_mu + mu_off[i], &(-hu_own.transpose()));
        let b_own = select_cols(&stage.b, &own);
        put(&mut lhs, row, c_lam + i * n, &b_own.transpose());
        put(&mut rhs, row, 0, &(-select_rows(&p.s_mat, &own)));
        for (k, &o) in own.iter().enumerate() {
            rhs[(row + k, n)] = -p.r[o];
        }
        row += own.len();
    }
    // active constraints of stage t
    for b in &blocks {
        let k = b.off.len();
        put(&mut lhs, row, c_u, &b.ju);
        put(&mut rhs, row, 0, &(-&b.jx));
        for r in 0..k {
            rhs[(row + r, n)] = -b.off[r];
        }
        row += k;
    }
    // dynamics
    put(&mut lhs, row, c_u, &(-&stage.b));
    put_identity(&mut lhs, row, c_x, n, 1.0);
    put(&mut rhs, row, 0, &stage.a);
    for r in 0..n {
        rhs[(row + r, n)] = stage.c[r];
    }
    row += n;

    if last {
        // terminal state stationarity and terminal active rows
        for i in 0..np {
            let p = &game.terminal[i];
            put_identity(&mut lhs, row, c_lam + i * n, n, -1.0);
            put(&mut lhs, row, c_x, &p.q_mat);
            put(&mut lhs, row, c_mut + mut_off[i], &(-terminal_blocks[i].jx.transpose()));
            for r in 0..n {
                rhs[(row + r, n)] = -p.q[r];
            }
            row += n;
        }
        for b in &terminal_blocks {
            let k = b.off.len();
            put(&mut lhs, row, c_x, &b.jx);
            for r in 0..k {
                rhs[(row + r, n)] = -b.off[r];
            }
            row += k;
        }
    } else {
        let g1 = next.expect("stage t+1 gains required").gains;
        let s1 = &game.stages[t + 1];
        let next_blocks: Vec<ActiveBlock> = (0..np)
            .map(|i| active_block(&s1.players[i], &g1.active[i]))
            .collect();
        // next-stage state stationarity folded through the stage-(t+1) gains
        for i in 0..np {
            let p = &s1.players[i];
            let (klam, klam0) = g1.lambda_of(i, n);
            let (kmu, kmu0) = g1.mu_of(i);
            let jx = &next_blocks[i].jx;
            let v = &p.q_mat + p.s_mat.transpose() * &g1.k_mat + s1.a.transpose() * &klam - jx.transpose() * &kmu;
            let v0 = &p.q + p.s_mat.transpose() * &g1.k + s1.a.transpose() * &klam0 - jx.transpose() * &kmu0;
            let others = dims.other_indices(t + 1, i);
            let k_others = select_rows(&g1.k_mat, &others);
            put_identity(&mut lhs, row, c_lam + i * n, n, -1.0);
            put(&mut lhs, row, c_psi + psi_off[i], &k_others.transpose());
            put(&mut lhs, row, c_x, &v);
            for r in 0..n {
                rhs[(row + r, n)] = -v0[r];
            }
            row += n;
        }
        // next-stage stationarity in the other players' controls
        for i in 0..np {
            let p = &s1.players[i];
            let others = dims.other_indices(t + 1, i);
            if others.is_empty() {
                continue;
            }
            let (klam, klam0) = g1.lambda_of(i, n);
            let (kmu, kmu0) = g1.mu_of(i);
            let ju_o = select_cols(&next_blocks[i].ju, &others);
            let b_o = select_cols(&s1.b, &others);
            let r_o = select_rows(&p.r_mat, &others);
            let w = select_rows(&p.s_mat, &others) + &r_o * &g1.k_mat + b_o.transpose() * &klam
                - ju_o.transpose() * &kmu;
            let w0 = select_entries(&p.r, &others) + &r_o * &g1.k + b_o.transpose() * &klam0
                - ju_o.transpose() * &kmu0;
            let k = others.len();
            put_identity(&mut lhs, row, c_psi + psi_off[i], k, -1.0);
            put(&mut lhs, row, c_x, &w);
            for r in 0..k {
                rhs[(row + r, n)] = -w0[r];
            }
            row += k;
        }
    }
    debug_assert_eq!(row, width);

    let solved = solve_pivoted(lhs, &rhs).map_err(|pivot_ratio| Error::SingularStageMatrix { stage: t, pivot_ratio })?;
    log::debug!("stage {} width {} pivot ratio {:.3e}", t + 1, width, solved.pivot_ratio);
    let sol = solved.solution;
    let part = |off: usize, len: usize| -> (DMatrix<f64>, DVector<f64>) {
        (
            sol.view((off, 0), (len, n)).into_owned(),
            sol.view((off, n), (len, 1)).column(0).into_owned(),
        )
    };
    let (k_mat, k) = part(c_u, m);
    let (mu_mat, mu) = part(c_mu, a_tot);
    let (lambda_mat, lambda) = part(c_lam, np * n);
    let (psi_mat, psi) = part(c_psi, p_tot);
    let (x_mat, x) = part(c_x, n);
    let terminal_mu = last.then(|| part(c_mut, a_term));
    Ok(StageGains {
        stage: t,
        k_mat,
        k,
        lambda_mat,
        lambda,
        mu_mat,
        mu,
        psi_mat,
        psi,
        x_mat,
        x,
        terminal_mu,
        active,
        terminal_active,
        pivot_ratio: solved.pivot_ratio,
    })
}

fn prefix(lens: impl Iterator<Item = usize>) -> Vec<usize> {
    let mut acc = 0;
    lens.map(|l| {
        let o = acc;
        acc += l;
        o
    })
    .collect()
}

/// Solves the last control stage together with the terminal conditions.
pub fn solve_terminal(game: &LqGame, ws: &WorkingSet) -> Result<StageGains> {
    game.dims.check()?;
    solve_stage(game, ws, game.dims.horizon - 1, None)
}

/// Gains for every control stage, computed from the last stage backwards.
/// The returned vector is indexed by stage.
pub fn backward_recursion(game: &LqGame, ws: &WorkingSet) -> Result<Vec<StageGains>> {
    let horizon = game.dims.horizon;
    let mut rev = Vec::with_capacity(horizon);
    rev.push(solve_terminal(game, ws)?);
    for t in (0..horizon - 1).rev() {
        let g = solve_stage(game, ws, t, Some(NextStage { gains: rev.last().unwrap() }))?;
        rev.push(g);
    }
    rev.reverse();
    Ok(rev)
}

/// Forward pass: applies the gains from `x1` and extracts the multipliers.
/// States are propagated with the game dynamics.
pub fn rollout(game: &LqGame, gains: Vec<StageGains>, x1: &DVector<f64>) -> FeedbackSolution {
    let dims = &game.dims;
    let horizon = dims.horizon;
    let mut traj = Trajectory::zeros(dims);
    let mut mult = Multipliers::zeros(dims);
    traj.x[0] = x1.clone();
    for t in 0..horizon {
        let g = &gains[t];
        let x = traj.x[t].clone();
        let u = &g.k_mat * &x + &g.k;
        let lam = &g.lambda_mat * &x + &g.lambda;
        let mu = &g.mu_mat * &x + &g.mu;
        let psi = &g.psi_mat * &x + &g.psi;
        let s = &game.stages[t];
        traj.x[t + 1] = &s.a * &x + &s.b * &u + &s.c;
        traj.u[t] = u;
        scatter_active(&mu, &g.active, &mut mult, t);
        for i in 0..dims.players {
            mult.lambda[t][i] = lam.rows(i * dims.n, dims.n).into_owned();
        }
        if t + 1 < horizon {
            let mut off = 0;
            for i in 0..dims.players {
                let len = dims.m_others(t + 1, i);
                mult.psi[t + 1][i] = psi.rows(off, len).into_owned();
                off += len;
            }
        }
        if let (Some((km, k0)), Some(ta)) = (&g.terminal_mu, &g.terminal_active) {
            let mu_t = km * &x + k0;
            scatter_active(&mu_t, ta, &mut mult, horizon);
        }
    }
    FeedbackSolution {
        gains,
        trajectory: traj,
        multipliers: mult,
    }
}

/// Splits stacked active-row multipliers into `μ` (equality rows) and `γ`
/// (working inequality rows); non-working `γ` entries stay zero.
fn scatter_active(values: &DVector<f64>, active: &[ActiveRows], mult: &mut Multipliers, t: usize) {
    let mut off = 0;
    for (i, rows) in active.iter().enumerate() {
        mult.mu[t][i] = values.rows(off, rows.equalities).into_owned();
        off += rows.equalities;
        let gamma = &mut mult.gamma[t][i];
        gamma.fill(0.0);
        for &r in &rows.inequalities {
            gamma[r] = values[off];
            off += 1;
        }
    }
}

/// Solves the game with the rows of `ws` enforced as equalities and all
/// other inequality rows ignored.
pub fn solve_with_working_set(game: &LqGame, ws: &WorkingSet, x1: &DVector<f64>) -> Result<FeedbackSolution> {
    if x1.len() != game.dims.n {
        return Err(Error::Dimension(format!("x1 has length {}, expected {}", x1.len(), game.dims.n)));
    }
    ws.check(&game.dims)?;
    let gains = backward_recursion(game, ws)?;
    Ok(rollout(game, gains, x1))
}

/// Solves an equality-constrained LQ game (inequality rows are ignored).
pub fn solve_equality_lq(game: &LqGame, x1: &DVector<f64>) -> Result<FeedbackSolution> {
    solve_with_working_set(game, &WorkingSet::new(), x1)
}

/// Result of a solve that merged stages to restore non-singularity.
#[derive(Debug, Clone)]
pub struct CombinedSolution {
    /// Game actually solved.
    pub game: LqGame,
    pub groups: StageGroups,
    pub solution: FeedbackSolution,
}

/// Like [`solve_equality_lq`], but on a singular stage matrix merges that
/// stage into its predecessor and retries, up to `n` merges.
pub fn solve_equality_lq_auto(game: &LqGame, x1: &DVector<f64>) -> Result<CombinedSolution> {
    let mut current = game.clone();
    let mut groups = StageGroups::identity(game.dims.horizon);
    let mut merges = 0;
    loop {
        match solve_equality_lq(&current, x1) {
            Ok(solution) => {
                return Ok(CombinedSolution {
                    game: current,
                    groups,
                    solution,
                })
            }
            Err(Error::SingularStageMatrix { stage, pivot_ratio })
                if stage >= 1 && merges < game.dims.n =>
            {
                log::info!(
                    "singular stage matrix at stage {} (pivot ratio {:.2e}); merging into stage {}",
                    groups.first_original(stage) + 1,
                    pivot_ratio,
                    groups.first_original(stage - 1) + 1
                );
                current = combine_lq_stages(&current, stage)?;
                groups = groups.merge(stage)?;
                merges += 1;
            }
            Err(e) => return Err(e),
        }
    }
}
