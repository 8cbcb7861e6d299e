//! Residuals of the first-order equilibrium conditions.

use std::fmt;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::game_model::{evaluate_stage, GameModel, Multipliers, StageEval, Trajectory};
use crate::linalg::select_rows;

/// Squared residual norms of the eight condition families.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ResidualBreakdown {
    /// Stationarity in each player's own controls.
    pub control: f64,
    /// Stationarity in the state at stages after the first, including the
    /// policy-gradient coupling through `ψ`.
    pub state: f64,
    /// Stationarity in the other players' controls at stages after the
    /// first.
    pub cross_control: f64,
    /// Stationarity in the terminal state.
    pub terminal: f64,
    pub dynamics: f64,
    pub equality: f64,
    /// Squared inequality violations `min(g, 0)`.
    pub inequality: f64,
    /// Squared sign violations `min(γ, 0)` plus `|gᵀγ|`.
    pub multiplier_sign: f64,
    /// Sum of all eight blocks.
    pub total: f64,
    /// Largest of `|min(g,0)|`, `|min(γ,0)|` and `|γᵀg|` over all blocks.
    pub complementarity: f64,
}

impl ResidualBreakdown {
    pub fn blocks(&self) -> [(&'static str, f64); 8] {
        [
            ("control_stationarity", self.control),
            ("state_stationarity", self.state),
            ("cross_control_stationarity", self.cross_control),
            ("terminal_stationarity", self.terminal),
            ("dynamics", self.dynamics),
            ("equality", self.equality),
            ("inequality", self.inequality),
            ("multiplier_sign", self.multiplier_sign),
        ]
    }

    /// Largest single block.
    pub fn max_block(&self) -> f64 {
        self.blocks().iter().fold(0.0f64, |a, (_, v)| a.max(*v))
    }
}

impl fmt::Display for ResidualBreakdown {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (name, v) in self.blocks() {
            writeln!(f, "{name}: {v:.6e}")?;
        }
        writeln!(f, "total: {:.6e}", self.total)?;
        writeln!(f, "complementarity: {:.6e}", self.complementarity)
    }
}

/// Gradient over `[x; u]` of `l + fᵀλ − hᵀμ − gᵀγ` for one player.
fn lagrangian_gradient(ev: &StageEval, i: usize, lambda: Option<&DVector<f64>>, mu: &DVector<f64>, gamma: &DVector<f64>) -> DVector<f64> {
    let mut grad = ev.costs[i].grad.clone();
    if let (Some(f), Some(lam)) = (&ev.dynamics, lambda) {
        grad += f.jac.transpose() * lam;
    }
    grad -= ev.equalities[i].jac.transpose() * mu;
    grad -= ev.inequalities[i].jac.transpose() * gamma;
    grad
}

fn check_shapes(model: &dyn GameModel, traj: &Trajectory, mult: &Multipliers, policy_gains: &[DMatrix<f64>]) -> Result<()> {
    let dims = model.dims();
    let t = dims.horizon;
    let ok_traj = traj.x.len() == t + 1
        && traj.u.len() == t
        && traj.x.iter().all(|x| x.len() == dims.n)
        && traj.u.iter().enumerate().all(|(s, u)| u.len() == dims.m(s));
    if !ok_traj {
        return Err(Error::ShapeMismatch("trajectory does not match the game dimensions".into()));
    }
    if !mult.matches(dims) {
        return Err(Error::ShapeMismatch("multipliers do not match the game dimensions".into()));
    }
    if policy_gains.len() != t
        || policy_gains
            .iter()
            .enumerate()
            .any(|(s, k)| k.nrows() != dims.m(s) || k.ncols() != dims.n)
    {
        return Err(Error::ShapeMismatch("policy gains do not match the game dimensions".into()));
    }
    Ok(())
}

/// Evaluates every line of the quasi-necessary conditions, with
/// `policy_gains[s]` standing in for the policy gradient at stage `s`.
pub fn residual(
    model: &dyn GameModel,
    traj: &Trajectory,
    mult: &Multipliers,
    policy_gains: &[DMatrix<f64>],
) -> Result<ResidualBreakdown> {
    check_shapes(model, traj, mult, policy_gains)?;
    let dims = model.dims();
    let n = dims.n;
    let horizon = dims.horizon;
    let mut out = ResidualBreakdown::default();
    let mut comp = 0.0f64;

    let mut inequality_terms = |g: &DVector<f64>, gamma: &DVector<f64>, out: &mut ResidualBreakdown| {
        for (gv, yv) in g.iter().zip(gamma.iter()) {
            let gv_neg = gv.min(0.0);
            let yv_neg = yv.min(0.0);
            out.inequality += gv_neg * gv_neg;
            out.multiplier_sign += yv_neg * yv_neg;
            comp = comp.max(gv_neg.abs()).max(yv_neg.abs());
        }
        let dot = g.dot(gamma).abs();
        out.multiplier_sign += dot;
        comp = comp.max(dot);
    };

    for s in 0..=horizon {
        let u = if s < horizon { traj.u[s].clone() } else { DVector::zeros(0) };
        let ev = evaluate_stage(model, s, &traj.x[s], &u)?;
        for i in 0..dims.players {
            let lam = (s < horizon).then(|| &mult.lambda[s][i]);
            let grad = lagrangian_gradient(&ev, i, lam, &mult.mu[s][i], &mult.gamma[s][i]);
            if s < horizon {
                let own = dims.own_indices(s, i);
                for &o in &own {
                    out.control += grad[n + o].powi(2);
                }
                if s >= 1 {
                    let others = dims.other_indices(s, i);
                    let k_others = select_rows(&policy_gains[s], &others);
                    let gx = grad.rows(0, n) - &mult.lambda[s - 1][i] + k_others.transpose() * &mult.psi[s][i];
                    out.state += gx.norm_squared();
                    for (k, &o) in others.iter().enumerate() {
                        out.cross_control += (grad[n + o] - mult.psi[s][i][k]).powi(2);
                    }
                }
            } else {
                let gx = grad.rows(0, n) - &mult.lambda[horizon - 1][i];
                out.terminal += gx.norm_squared();
            }
            out.equality += ev.equalities[i].value.norm_squared();
            inequality_terms(&ev.inequalities[i].value, &mult.gamma[s][i], &mut out);
        }
        if let Some(f) = &ev.dynamics {
            out.dynamics += (&traj.x[s + 1] - &f.value).norm_squared();
        }
    }
    out.complementarity = comp;
    out.total = out.control
        + out.state
        + out.cross_control
        + out.terminal
        + out.dynamics
        + out.equality
        + out.inequality
        + out.multiplier_sign;
    Ok(out)
}
