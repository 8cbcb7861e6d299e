//! Finite-difference policy gradients.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::game_model::LqGame;
use crate::lq_core::solve_with_working_set;
use crate::working_set::WorkingSet;

/// Default central-difference step.
pub const DEFAULT_STEP: f64 = 1e-6;

/// Central-difference Jacobian of `control_map` at `x`, using `2n`
/// evaluations.
pub fn fd_policy_gradient<F>(control_map: F, x: &DVector<f64>, h: f64) -> Result<DMatrix<f64>>
where
    F: Fn(&DVector<f64>) -> Result<DVector<f64>>,
{
    if !(h > 0.0) {
        return Err(Error::Config(format!("finite-difference step must be positive, got {h}")));
    }
    let n = x.len();
    let mut cols = Vec::with_capacity(n);
    for j in 0..n {
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[j] += h;
        xm[j] -= h;
        let up = control_map(&xp)?;
        let um = control_map(&xm)?;
        cols.push((up - um) / (2.0 * h));
    }
    let m = cols.first().map_or(0, |c| c.len());
    Ok(DMatrix::from_fn(m, n, |r, c| cols[c][r]))
}

/// Policy gradient of an LQ game at stage `t`: perturbs `x_t`, re-solves
/// the subgame from `t` with the given working rows and differences the
/// stage-`t` controls.
pub fn fd_policy_gradient_lq(
    game: &LqGame,
    ws: &WorkingSet,
    t: usize,
    x_t: &DVector<f64>,
    h: f64,
) -> Result<DMatrix<f64>> {
    if t >= game.dims.horizon {
        return Err(Error::InvalidStage {
            stage: t + 1,
            reason: "policy gradients exist only at control stages".into(),
        });
    }
    let sub = game.subgame(t);
    let sub_ws = ws.shifted(t);
    fd_policy_gradient(
        |x| Ok(solve_with_working_set(&sub, &sub_ws, x)?.trajectory.u[0].clone()),
        x_t,
        h,
    )
}
