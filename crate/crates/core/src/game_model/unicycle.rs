//! Highway driving game with unicycle vehicles.
//!
//! Each player drives one vehicle with state `[p_long, p_lat, v, θ]` and
//! controls `[a, ω]`, integrated with a forward-Euler step of length `dt`.
//! Players pay for control effort, lateral offset from their target lane
//! and speed error at every control stage, must end in their target lane,
//! and may keep a minimum centre distance from one other vehicle at every
//! stage including the terminal one. A player can also add a weighted copy
//! of another player's running cost ("politeness").

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::{Dimensions, GameModel, ScalarEval, VecEval};
use crate::error::{Error, Result};

/// Parameters of the driving family. Player references are one-based.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DrivingParams {
    /// Integration step.
    pub dt: f64,
    /// Weights of control effort, lane offset and speed error.
    pub sigma: [f64; 3],
    pub sigma_polite: f64,
    pub v_goal: Vec<f64>,
    /// Target lateral position (lane centre) per vehicle.
    pub lane: Vec<f64>,
    pub d_min: f64,
    /// Vehicle each player keeps `d_min` away from, if any.
    pub avoid: Vec<Option<usize>>,
    /// Player whose running cost each player adds with weight
    /// `sigma_polite`, if any.
    pub polite_towards: Vec<Option<usize>>,
}

impl DrivingParams {
    /// Three-vehicle lane change: player 1 merges left between players 2
    /// and 3.
    pub fn lane_change(sigma_polite: f64) -> Self {
        Self {
            dt: 0.1,
            sigma: [10.0, 0.2, 10.0],
            sigma_polite,
            v_goal: vec![1.0, 1.5, 0.75],
            lane: vec![-2.0, -2.0, 2.0],
            d_min: 3.3,
            avoid: vec![Some(3), Some(1), None],
            polite_towards: vec![Some(2), None, None],
        }
    }

    pub fn lane_change_start() -> DVector<f64> {
        DVector::from_vec(vec![0.0, 2.0, 1.0, 0.0, -10.0, -2.0, 1.5, 0.0, 30.0, 2.0, 0.75, 0.0])
    }

    pub fn players(&self) -> usize {
        self.v_goal.len()
    }

    pub fn check(&self) -> Result<()> {
        let np = self.players();
        let bad = |msg: String| Err(Error::Scenario(msg));
        if np == 0 {
            return bad("driving game needs at least one vehicle".into());
        }
        if self.lane.len() != np || self.avoid.len() != np || self.polite_towards.len() != np {
            return bad(format!("v_goal, lane, avoid and polite_towards must all have {np} entries"));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return bad("dt must be positive".into());
        }
        if self.d_min < 0.0 {
            return bad("d_min must be nonnegative".into());
        }
        for (i, r) in self.avoid.iter().chain(self.polite_towards.iter()).enumerate() {
            if let Some(j) = r {
                if *j == 0 || *j > np || *j == i % np + 1 {
                    return bad(format!("player {} refers to invalid vehicle {j}", i % np + 1));
                }
            }
        }
        Ok(())
    }

    pub fn dims(&self, horizon: usize) -> Dimensions {
        let np = self.players();
        let b: Vec<usize> = self.avoid.iter().map(|a| usize::from(a.is_some())).collect();
        Dimensions::uniform(4 * np, horizon, &vec![2; np], &vec![0; np], &b, &vec![1; np], &b)
    }
}

#[derive(Debug, Clone)]
pub struct DrivingGame {
    params: DrivingParams,
    dims: Dimensions,
}

impl DrivingGame {
    pub fn new(params: DrivingParams, horizon: usize) -> Result<Self> {
        params.check()?;
        let dims = params.dims(horizon);
        dims.check()?;
        Ok(Self { params, dims })
    }

    pub fn params(&self) -> &DrivingParams {
        &self.params
    }

    /// Running cost of vehicle `j` alone, accumulated into `out` with
    /// `weight`.
    fn add_running_cost(&self, j: usize, weight: f64, x: &DVector<f64>, u: &DVector<f64>, out: &mut ScalarEval) {
        let n = self.dims.n;
        let [s1, s2, s3] = self.params.sigma;
        let (iy, iv) = (4 * j + 1, 4 * j + 2);
        let dy = x[iy] - self.params.lane[j];
        let dv = x[iv] - self.params.v_goal[j];
        let ua = 2 * j;
        let uw = 2 * j + 1;
        out.value += weight * (s1 * (u[ua] * u[ua] + u[uw] * u[uw]) + s2 * dy * dy + s3 * dv * dv);
        out.grad[iy] += weight * 2.0 * s2 * dy;
        out.grad[iv] += weight * 2.0 * s3 * dv;
        out.grad[n + ua] += weight * 2.0 * s1 * u[ua];
        out.grad[n + uw] += weight * 2.0 * s1 * u[uw];
        out.hess[(iy, iy)] += weight * 2.0 * s2;
        out.hess[(iv, iv)] += weight * 2.0 * s3;
        out.hess[(n + ua, n + ua)] += weight * 2.0 * s1;
        out.hess[(n + uw, n + uw)] += weight * 2.0 * s1;
    }
}

impl GameModel for DrivingGame {
    fn dims(&self) -> &Dimensions {
        &self.dims
    }

    fn dynamics(&self, _t: usize, x: &DVector<f64>, u: &DVector<f64>) -> VecEval {
        let n = self.dims.n;
        let dt = self.params.dt;
        let mut out = VecEval::zeros(n, n + u.len());
        for j in 0..self.params.players() {
            let s = 4 * j;
            let (v, th) = (x[s + 2], x[s + 3]);
            let (sin, cos) = th.sin_cos();
            out.value[s] = x[s] + dt * v * cos;
            out.value[s + 1] = x[s + 1] + dt * v * sin;
            out.value[s + 2] = v + dt * u[2 * j];
            out.value[s + 3] = th + dt * u[2 * j + 1];
            for k in 0..4 {
                out.jac[(s + k, s + k)] = 1.0;
            }
            out.jac[(s, s + 2)] = dt * cos;
            out.jac[(s, s + 3)] = -dt * v * sin;
            out.jac[(s + 1, s + 2)] = dt * sin;
            out.jac[(s + 1, s + 3)] = dt * v * cos;
            out.jac[(s + 2, n + 2 * j)] = dt;
            out.jac[(s + 3, n + 2 * j + 1)] = dt;
            let hx = &mut out.hess[s];
            hx[(s + 2, s + 3)] = -dt * sin;
            hx[(s + 3, s + 2)] = -dt * sin;
            hx[(s + 3, s + 3)] = -dt * v * cos;
            let hy = &mut out.hess[s + 1];
            hy[(s + 2, s + 3)] = dt * cos;
            hy[(s + 3, s + 2)] = dt * cos;
            hy[(s + 3, s + 3)] = -dt * v * sin;
        }
        out
    }

    fn cost(&self, t: usize, player: usize, x: &DVector<f64>, u: &DVector<f64>) -> ScalarEval {
        let mut out = ScalarEval::zeros(self.dims.n + u.len());
        if t < self.dims.horizon {
            self.add_running_cost(player, 1.0, x, u, &mut out);
            if let Some(j) = self.params.polite_towards[player] {
                self.add_running_cost(j - 1, self.params.sigma_polite, x, u, &mut out);
            }
        }
        out
    }

    fn equality(&self, t: usize, player: usize, x: &DVector<f64>, u: &DVector<f64>) -> VecEval {
        let dim = self.dims.n + u.len();
        if t < self.dims.horizon {
            return VecEval::zeros(0, dim);
        }
        let mut out = VecEval::zeros(1, dim);
        let iy = 4 * player + 1;
        out.value[0] = x[iy] - self.params.lane[player];
        out.jac[(0, iy)] = 1.0;
        out
    }

    fn inequality(&self, _t: usize, player: usize, x: &DVector<f64>, u: &DVector<f64>) -> VecEval {
        let dim = self.dims.n + u.len();
        let Some(other) = self.params.avoid[player] else {
            return VecEval::zeros(0, dim);
        };
        let (a, b) = (4 * player, 4 * (other - 1));
        let d = [x[a] - x[b], x[a + 1] - x[b + 1]];
        let r = d[0].hypot(d[1]);
        let mut out = VecEval::zeros(1, dim);
        out.value[0] = r - self.params.d_min;
        let e = [d[0] / r, d[1] / r];
        for k in 0..2 {
            out.jac[(0, a + k)] = e[k];
            out.jac[(0, b + k)] = -e[k];
        }
        // Hessian of the norm: (I − e eᵀ) / r on the relative position
        let h = &mut out.hess[0];
        for k in 0..2 {
            for l in 0..2 {
                let v = (if k == l { 1.0 } else { 0.0 } - e[k] * e[l]) / r;
                h[(a + k, a + l)] = v;
                h[(b + k, b + l)] = v;
                h[(a + k, b + l)] = -v;
                h[(b + k, a + l)] = -v;
            }
        }
        out
    }
}

/// Position of every vehicle along a trajectory, as `(p_long, p_lat)`
/// series.
pub fn vehicle_paths(states: &[DVector<f64>], vehicles: usize) -> Vec<Vec<(f64, f64)>> {
    (0..vehicles)
        .map(|j| states.iter().map(|x| (x[4 * j], x[4 * j + 1])).collect())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lane_change_shape() {
        let g = DrivingGame::new(DrivingParams::lane_change(5.0), 100).unwrap();
        let d = g.dims();
        assert_eq!((d.n, d.horizon, d.players), (12, 100, 3));
        assert_eq!(d.controls[0], vec![2, 2, 2]);
        assert_eq!(d.inequalities[100], vec![1, 1, 0]);
        assert_eq!(d.equalities[100], vec![1, 1, 1]);
        assert_eq!(d.equalities[5], vec![0, 0, 0]);
    }

    #[test]
    fn heading_jacobian_at_zero_heading() {
        let g = DrivingGame::new(DrivingParams::lane_change(0.0), 3).unwrap();
        let x = DrivingParams::lane_change_start();
        let f = g.dynamics(0, &x, &DVector::zeros(6));
        // vehicle 1 has v = 1 and θ = 0
        assert!(f.jac[(0, 3)].abs() < 1e-15);
        assert!((f.jac[(1, 3)] - 0.1).abs() < 1e-15);
    }

    #[test]
    fn rejects_self_reference() {
        let mut p = DrivingParams::lane_change(0.0);
        p.avoid[1] = Some(2);
        assert!(DrivingGame::new(p, 10).is_err());
    }
}
