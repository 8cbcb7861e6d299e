//! Second-order check of a candidate equilibrium.
//!
//! For player `i` and stage `t` the test directions let player `i` deviate
//! freely at stage `t` from an unperturbed state, keep the other players'
//! stage-`t` controls fixed, and let every player follow the feedback gains
//! at later stages. The states follow the linearized dynamics. On this
//! subspace the sum of stage Lagrangian Hessians (plus the terminal
//! Hessian) is a quadratic form in the free deviation, and positivity is
//! decided by its smallest eigenvalue.

use std::fmt;

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};
use crate::game_model::{evaluate_stage, GameModel, Multipliers, Trajectory};
use crate::linalg::max_abs;

/// Relative curvature tolerance.
pub const CURVATURE_TOLERANCE: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Satisfied,
    Violated,
    /// Smallest eigenvalue within the tolerance band around zero.
    Inconclusive,
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Verdict::Satisfied => "satisfied",
            Verdict::Violated => "violated",
            Verdict::Inconclusive => "inconclusive",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlayerSufficiency {
    pub player: usize,
    /// Smallest eigenvalue of the reduced form over all stages.
    pub min_value: f64,
    /// Stage attaining `min_value`.
    pub worst_stage: usize,
    pub tolerance: f64,
    pub verdict: Verdict,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SufficiencyReport {
    pub players: Vec<PlayerSufficiency>,
}

impl SufficiencyReport {
    pub fn all_satisfied(&self) -> bool {
        self.players.iter().all(|p| p.verdict == Verdict::Satisfied)
    }

    pub fn any_violated(&self) -> bool {
        self.players.iter().any(|p| p.verdict == Verdict::Violated)
    }
}

impl fmt::Display for SufficiencyReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for p in &self.players {
            let k = p.player + 1;
            writeln!(f, "player_{k}_min_value: {:.6e}", p.min_value)?;
            writeln!(f, "player_{k}_worst_stage: {}", p.worst_stage + 1)?;
            writeln!(f, "player_{k}_tolerance: {:.3e}", p.tolerance)?;
            writeln!(f, "player_{k}_verdict: {}", p.verdict)?;
        }
        Ok(())
    }
}

/// Runs the check for every player. `policy_gains[s]` are the feedback
/// gains used for the policy-following directions.
pub fn check_sufficiency(
    model: &dyn GameModel,
    traj: &Trajectory,
    mult: &Multipliers,
    policy_gains: &[DMatrix<f64>],
) -> Result<SufficiencyReport> {
    let dims = model.dims();
    let n = dims.n;
    let horizon = dims.horizon;
    if policy_gains.len() != horizon || !mult.matches(dims) {
        return Err(Error::ShapeMismatch("gains or multipliers do not match the game".into()));
    }

    // Lagrangian Hessians, per stage and player, plus linearized dynamics.
    let mut hess: Vec<Vec<DMatrix<f64>>> = Vec::with_capacity(horizon + 1);
    let mut jac: Vec<DMatrix<f64>> = Vec::with_capacity(horizon);
    for s in 0..=horizon {
        let u = if s < horizon { traj.u[s].clone() } else { DVector::zeros(0) };
        let ev = evaluate_stage(model, s, &traj.x[s], &u)?;
        let per_player = (0..dims.players)
            .map(|i| {
                let mut h = ev.costs[i].hess.clone();
                if let Some(f) = &ev.dynamics {
                    h += f.weighted_hessian(&mult.lambda[s][i]);
                }
                h -= ev.equalities[i].weighted_hessian(&mult.mu[s][i]);
                h -= ev.inequalities[i].weighted_hessian(&mult.gamma[s][i]);
                h
            })
            .collect();
        hess.push(per_player);
        if let Some(f) = ev.dynamics {
            jac.push(f.jac);
        }
    }
    let scale = hess
        .iter()
        .flatten()
        .map(max_abs)
        .fold(1.0f64, f64::max);
    let tolerance = CURVATURE_TOLERANCE * scale;

    let mut players = Vec::with_capacity(dims.players);
    for i in 0..dims.players {
        let mut best: Option<(f64, usize)> = None;
        for t in 0..horizon {
            let k = dims.m_player(t, i);
            if k == 0 {
                continue;
            }
            let mut reduced = DMatrix::zeros(k, k);
            // stage t: d_x = 0, d_u = E_i d
            let mut du = DMatrix::zeros(dims.m(t), k);
            let off = dims.control_offset(t, i);
            for r in 0..k {
                du[(off + r, r)] = 1.0;
            }
            let mut dx = DMatrix::zeros(n, k);
            for s in t..horizon {
                if s > t {
                    du = &policy_gains[s] * &dx;
                }
                let mut d = DMatrix::zeros(n + dims.m(s), k);
                d.view_mut((0, 0), (n, k)).copy_from(&dx);
                d.view_mut((n, 0), (dims.m(s), k)).copy_from(&du);
                reduced += d.transpose() * &hess[s][i] * &d;
                let a = jac[s].columns(0, n);
                let b = jac[s].columns(n, dims.m(s));
                dx = a * &dx + b * &du;
            }
            reduced += dx.transpose() * &hess[horizon][i] * &dx;
            let reduced = (&reduced + reduced.transpose()) * 0.5;
            let min_eig = SymmetricEigen::new(reduced).eigenvalues.min();
            if best.is_none_or(|(v, _)| min_eig < v) {
                best = Some((min_eig, t));
            }
        }
        let (min_value, worst_stage) = best.ok_or(Error::DegenerateCone { player: i })?;
        let verdict = if min_value > tolerance {
            Verdict::Satisfied
        } else if min_value < -tolerance {
            Verdict::Violated
        } else {
            Verdict::Inconclusive
        };
        players.push(PlayerSufficiency {
            player: i,
            min_value,
            worst_stage,
            tolerance,
            verdict,
        });
    }
    Ok(SufficiencyReport { players })
}
