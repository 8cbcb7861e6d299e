//! Derivative-bearing evaluator outputs and the `GameModel` trait.

use std::fmt::Debug;

use nalgebra::{DMatrix, DVector};

use super::Dimensions;
use crate::error::{Error, Result};
use crate::linalg::symmetrize;

/// Value, gradient and Hessian of a scalar map of `w = [x; u]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarEval {
    pub value: f64,
    pub grad: DVector<f64>,
    pub hess: DMatrix<f64>,
}

/// Value, Jacobian and per-row Hessians of a vector map of `w = [x; u]`.
#[derive(Debug, Clone, PartialEq)]
pub struct VecEval {
    pub value: DVector<f64>,
    pub jac: DMatrix<f64>,
    pub hess: Vec<DMatrix<f64>>,
}

impl ScalarEval {
    pub fn zeros(dim: usize) -> Self {
        Self {
            value: 0.0,
            grad: DVector::zeros(dim),
            hess: DMatrix::zeros(dim, dim),
        }
    }

    pub fn dim(&self) -> usize {
        self.grad.len()
    }

    pub fn is_finite(&self) -> bool {
        self.value.is_finite()
            && self.grad.iter().all(|v| v.is_finite())
            && self.hess.iter().all(|v| v.is_finite())
    }

    pub fn symmetrized(mut self) -> Self {
        self.hess = symmetrize(&self.hess);
        self
    }

    pub fn add_assign(&mut self, other: &ScalarEval, weight: f64) {
        self.value += weight * other.value;
        self.grad.axpy(weight, &other.grad, 1.0);
        self.hess += &other.hess * weight;
    }
}

impl VecEval {
    pub fn zeros(rows: usize, dim: usize) -> Self {
        Self {
            value: DVector::zeros(rows),
            jac: DMatrix::zeros(rows, dim),
            hess: vec![DMatrix::zeros(dim, dim); rows],
        }
    }

    pub fn rows(&self) -> usize {
        self.value.len()
    }

    pub fn dim(&self) -> usize {
        self.jac.ncols()
    }

    pub fn is_finite(&self) -> bool {
        self.value.iter().all(|v| v.is_finite())
            && self.jac.iter().all(|v| v.is_finite())
            && self.hess.iter().all(|h| h.iter().all(|v| v.is_finite()))
    }

    pub fn symmetrized(mut self) -> Self {
        for h in &mut self.hess {
            *h = symmetrize(h);
        }
        self
    }

    /// Stacks the rows of `parts` (all evaluated over the same `w`).
    pub fn stack(dim: usize, parts: &[VecEval]) -> VecEval {
        let rows: usize = parts.iter().map(|p| p.rows()).sum();
        let mut out = VecEval {
            value: DVector::zeros(rows),
            jac: DMatrix::zeros(rows, dim),
            hess: Vec::with_capacity(rows),
        };
        let mut r = 0;
        for p in parts {
            assert_eq!(p.dim(), dim);
            for k in 0..p.rows() {
                out.value[r] = p.value[k];
                out.jac.row_mut(r).copy_from(&p.jac.row(k));
                out.hess.push(p.hess[k].clone());
                r += 1;
            }
        }
        out
    }

    /// `sum_k weights[k] * hess[k]`.
    pub fn weighted_hessian(&self, weights: &DVector<f64>) -> DMatrix<f64> {
        let d = self.dim();
        let mut h = DMatrix::zeros(d, d);
        for (k, w) in weights.iter().enumerate() {
            if *w != 0.0 {
                h += &self.hess[k] * *w;
            }
        }
        h
    }
}

/// Second-order chain rule: `outer ∘ inner`.
///
/// `inner` maps `w` to the argument of `outer`; its Hessians may be empty
/// matrices for affine rows.
pub fn compose(outer: &VecEval, inner: &VecEval) -> VecEval {
    let jv = &inner.jac;
    let jac = &outer.jac * jv;
    let hess = outer
        .hess
        .iter()
        .enumerate()
        .map(|(k, h)| {
            let mut out = jv.transpose() * h * jv;
            for (j, hv) in inner.hess.iter().enumerate() {
                let coef = outer.jac[(k, j)];
                if coef != 0.0 && hv.nrows() > 0 {
                    out += hv * coef;
                }
            }
            out
        })
        .collect();
    VecEval {
        value: outer.value.clone(),
        jac,
        hess,
    }
}

pub fn compose_scalar(outer: &ScalarEval, inner: &VecEval) -> ScalarEval {
    let jv = &inner.jac;
    let grad = jv.transpose() * &outer.grad;
    let mut hess = jv.transpose() * &outer.hess * jv;
    for (j, hv) in inner.hess.iter().enumerate() {
        let coef = outer.grad[j];
        if coef != 0.0 && hv.nrows() > 0 {
            hess += hv * coef;
        }
    }
    ScalarEval {
        value: outer.value,
        grad,
        hess,
    }
}

/// Evaluators for a nonlinear dynamic game.
///
/// Every method receives the stage `t` (zero-based) and evaluates at
/// `w = [x; u]`. At the terminal stage `t == horizon` the control vector is
/// empty and `dynamics` is never called. Implementations must be pure.
pub trait GameModel: Debug + Send + Sync {
    fn dims(&self) -> &Dimensions;

    fn dynamics(&self, t: usize, x: &DVector<f64>, u: &DVector<f64>) -> VecEval;

    fn cost(&self, t: usize, player: usize, x: &DVector<f64>, u: &DVector<f64>) -> ScalarEval;

    fn equality(&self, t: usize, player: usize, x: &DVector<f64>, u: &DVector<f64>) -> VecEval;

    fn inequality(&self, t: usize, player: usize, x: &DVector<f64>, u: &DVector<f64>) -> VecEval;
}

/// Everything the solvers need from one stage, evaluated once.
#[derive(Debug, Clone)]
pub struct StageEval {
    /// `None` at the terminal stage.
    pub dynamics: Option<VecEval>,
    pub costs: Vec<ScalarEval>,
    pub equalities: Vec<VecEval>,
    pub inequalities: Vec<VecEval>,
}

/// Evaluates stage `t` and rejects non-finite output.
pub fn evaluate_stage(
    model: &dyn GameModel,
    t: usize,
    x: &DVector<f64>,
    u: &DVector<f64>,
) -> Result<StageEval> {
    let dims = model.dims();
    let dynamics = if t < dims.horizon {
        let f = model.dynamics(t, x, u);
        if !f.is_finite() {
            return Err(Error::NonFinite(format!("dynamics at stage {}", t + 1)));
        }
        Some(f)
    } else {
        None
    };
    let mut costs = Vec::with_capacity(dims.players);
    let mut equalities = Vec::with_capacity(dims.players);
    let mut inequalities = Vec::with_capacity(dims.players);
    for i in 0..dims.players {
        let l = model.cost(t, i, x, u);
        let h = model.equality(t, i, x, u);
        let g = model.inequality(t, i, x, u);
        if !l.is_finite() || !h.is_finite() || !g.is_finite() {
            return Err(Error::NonFinite(format!(
                "cost or constraints of player {} at stage {}",
                i + 1,
                t + 1
            )));
        }
        costs.push(l.symmetrized());
        equalities.push(h.symmetrized());
        inequalities.push(g.symmetrized());
    }
    Ok(StageEval {
        dynamics: dynamics.map(VecEval::symmetrized),
        costs,
        equalities,
        inequalities,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chain_rule_matches_closed_form() {
        // inner: w -> (w0 * w1, w1), outer: v -> v0^2 + sin(v1)
        let w = [0.7, -1.3];
        let inner = VecEval {
            value: DVector::from_vec(vec![w[0] * w[1], w[1]]),
            jac: DMatrix::from_row_slice(2, 2, &[w[1], w[0], 0.0, 1.0]),
            hess: vec![
                DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]),
                DMatrix::zeros(2, 2),
            ],
        };
        let v = &inner.value;
        let outer = ScalarEval {
            value: v[0] * v[0] + v[1].sin(),
            grad: DVector::from_vec(vec![2.0 * v[0], v[1].cos()]),
            hess: DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, -v[1].sin()]),
        };
        let c = compose_scalar(&outer, &inner);
        // phi(w) = w0^2 w1^2 + sin(w1)
        let g0 = 2.0 * w[0] * w[1] * w[1];
        let g1 = 2.0 * w[0] * w[0] * w[1] + w[1].cos();
        assert!((c.grad[0] - g0).abs() < 1e-12);
        assert!((c.grad[1] - g1).abs() < 1e-12);
        let h00 = 2.0 * w[1] * w[1];
        let h01 = 4.0 * w[0] * w[1];
        let h11 = 2.0 * w[0] * w[0] - w[1].sin();
        assert!((c.hess[(0, 0)] - h00).abs() < 1e-12);
        assert!((c.hess[(0, 1)] - h01).abs() < 1e-12);
        assert!((c.hess[(1, 0)] - h01).abs() < 1e-12);
        assert!((c.hess[(1, 1)] - h11).abs() < 1e-12);
    }
}
