use nalgebra::DVector;

use super::{Dimensions, GameModel};
use crate::error::{Error, Result};

/// Primal trajectory: `x[0..=T]`, `u[0..T]` with `u[t]` the stacked player
/// controls `[u^1; ...; u^N]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub x: Vec<DVector<f64>>,
    pub u: Vec<DVector<f64>>,
}

impl Trajectory {
    pub fn zeros(dims: &Dimensions) -> Self {
        Self {
            x: vec![DVector::zeros(dims.n); dims.horizon + 1],
            u: (0..dims.horizon).map(|t| DVector::zeros(dims.m(t))).collect(),
        }
    }

    /// Forward simulation of the model dynamics under the given controls.
    pub fn rollout(model: &dyn GameModel, x1: &DVector<f64>, controls: &[DVector<f64>]) -> Result<Self> {
        let dims = model.dims();
        if controls.len() != dims.horizon {
            return Err(Error::Dimension(format!(
                "rollout needs {} control vectors, got {}",
                dims.horizon,
                controls.len()
            )));
        }
        let mut x = Vec::with_capacity(dims.horizon + 1);
        x.push(x1.clone());
        for (t, u) in controls.iter().enumerate() {
            let next = model.dynamics(t, &x[t], u).value;
            if next.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("rollout at stage {}", t + 1)));
            }
            x.push(next);
        }
        Ok(Self {
            x,
            u: controls.to_vec(),
        })
    }

    /// Rollout under zero controls, the default SQP initialization.
    pub fn zero_control_rollout(model: &dyn GameModel, x1: &DVector<f64>) -> Result<Self> {
        let dims = model.dims();
        let controls: Vec<_> = (0..dims.horizon).map(|t| DVector::zeros(dims.m(t))).collect();
        Self::rollout(model, x1, &controls)
    }

    pub fn horizon(&self) -> usize {
        self.u.len()
    }

    /// `self + alpha * direction`.
    pub fn step(&self, direction: &Trajectory, alpha: f64) -> Trajectory {
        Trajectory {
            x: self
                .x
                .iter()
                .zip(&direction.x)
                .map(|(a, b)| a + b * alpha)
                .collect(),
            u: self
                .u
                .iter()
                .zip(&direction.u)
                .map(|(a, b)| a + b * alpha)
                .collect(),
        }
    }

    pub fn difference(&self, other: &Trajectory) -> Trajectory {
        self.step(other, -1.0)
    }

    pub fn max_abs(&self) -> f64 {
        self.x
            .iter()
            .chain(&self.u)
            .flat_map(|v| v.iter())
            .fold(0.0f64, |acc, v| acc.max(v.abs()))
    }

    pub fn player_control(&self, dims: &Dimensions, t: usize, i: usize) -> DVector<f64> {
        let off = dims.control_offset(t, i);
        self.u[t].rows(off, dims.controls[t][i]).into_owned()
    }
}

/// Multiplier bundle `(λ, μ, γ, ψ)`, indexed `[stage][player]`.
///
/// `lambda` covers stages `0..T`, `mu` and `gamma` cover `0..=T`, and `psi`
/// covers `0..T` with empty vectors at stage 0 (no ψ at the first stage).
#[derive(Debug, Clone, PartialEq)]
pub struct Multipliers {
    pub lambda: Vec<Vec<DVector<f64>>>,
    pub mu: Vec<Vec<DVector<f64>>>,
    pub gamma: Vec<Vec<DVector<f64>>>,
    pub psi: Vec<Vec<DVector<f64>>>,
}

impl Multipliers {
    pub fn zeros(dims: &Dimensions) -> Self {
        let np = dims.players;
        Self {
            lambda: vec![vec![DVector::zeros(dims.n); np]; dims.horizon],
            mu: (0..=dims.horizon)
                .map(|t| (0..np).map(|i| DVector::zeros(dims.a(t, i))).collect())
                .collect(),
            gamma: (0..=dims.horizon)
                .map(|t| (0..np).map(|i| DVector::zeros(dims.b(t, i))).collect())
                .collect(),
            psi: (0..dims.horizon)
                .map(|t| {
                    (0..np)
                        .map(|i| {
                            if t == 0 {
                                DVector::zeros(0)
                            } else {
                                DVector::zeros(dims.m_others(t, i))
                            }
                        })
                        .collect()
                })
                .collect(),
        }
    }

    fn families(&self) -> [&Vec<Vec<DVector<f64>>>; 4] {
        [&self.lambda, &self.mu, &self.gamma, &self.psi]
    }

    /// `self + alpha * (target - self)`.
    pub fn interpolate(&self, target: &Multipliers, alpha: f64) -> Multipliers {
        let mix = |a: &Vec<Vec<DVector<f64>>>, b: &Vec<Vec<DVector<f64>>>| -> Vec<Vec<DVector<f64>>> {
            a.iter()
                .zip(b)
                .map(|(sa, sb)| sa.iter().zip(sb).map(|(va, vb)| va + (vb - va) * alpha).collect())
                .collect()
        };
        Multipliers {
            lambda: mix(&self.lambda, &target.lambda),
            mu: mix(&self.mu, &target.mu),
            gamma: mix(&self.gamma, &target.gamma),
            psi: mix(&self.psi, &target.psi),
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.families()
            .iter()
            .flat_map(|f| f.iter().flatten())
            .flat_map(|v| v.iter())
            .fold(0.0f64, |acc, v| acc.max(v.abs()))
    }

    pub fn max_abs_difference(&self, other: &Multipliers) -> f64 {
        let mut worst = 0.0f64;
        for (fa, fb) in self.families().iter().zip(other.families().iter()) {
            for (sa, sb) in fa.iter().zip(fb.iter()) {
                for (va, vb) in sa.iter().zip(sb) {
                    worst = worst.max((va - vb).abs().max());
                }
            }
        }
        worst
    }

    /// Shapes agree with `dims`.
    pub fn matches(&self, dims: &Dimensions) -> bool {
        let z = Multipliers::zeros(dims);
        self.families()
            .iter()
            .zip(z.families().iter())
            .all(|(a, b)| {
                a.len() == b.len()
                    && a.iter()
                        .zip(b.iter())
                        .all(|(sa, sb)| sa.len() == sb.len() && sa.iter().zip(sb).all(|(x, y)| x.len() == y.len()))
            })
    }
}
