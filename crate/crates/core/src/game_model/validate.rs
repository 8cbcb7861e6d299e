//! Structural checks on games, reported as a list of findings.

use std::fmt;

use nalgebra::{DMatrix, DVector};

use super::{evaluate_stage, GameModel, LqGame, LqPlayerStage, Trajectory};
use crate::linalg::{is_positive_definite, select_cols, select_rows};

const SYMMETRY_TOLERANCE: f64 = 1e-10;

/// Violated invariants; empty when the game is valid.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationReport {
    pub issues: Vec<String>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.issues.is_empty()
    }

    fn push(&mut self, msg: String) {
        self.issues.push(msg);
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for issue in &self.issues {
            writeln!(f, "{issue}")?;
        }
        Ok(())
    }
}

fn shape(report: &mut ValidationReport, what: &str, at: &str, m: &DMatrix<f64>, rows: usize, cols: usize) {
    if m.nrows() != rows || m.ncols() != cols {
        report.push(format!(
            "shape mismatch: {what} at {at} is {}x{}, expected {rows}x{cols}",
            m.nrows(),
            m.ncols()
        ));
    }
}

fn shape_vec(report: &mut ValidationReport, what: &str, at: &str, v: &DVector<f64>, len: usize) {
    if v.len() != len {
        report.push(format!("shape mismatch: {what} at {at} has length {}, expected {len}", v.len()));
    }
}

fn asymmetry(m: &DMatrix<f64>) -> f64 {
    if m.nrows() != m.ncols() {
        return 0.0;
    }
    (m - m.transpose()).iter().fold(0.0f64, |a, v| a.max(v.abs()))
}

fn check_player(report: &mut ValidationReport, p: &LqPlayerStage, at: &str, n: usize, m: usize, a: usize, b: usize) {
    shape(report, "Q", at, &p.q_mat, n, n);
    shape(report, "S", at, &p.s_mat, m, n);
    shape(report, "R", at, &p.r_mat, m, m);
    shape_vec(report, "q", at, &p.q, n);
    shape_vec(report, "r", at, &p.r, m);
    shape(report, "Hx", at, &p.hx, a, n);
    shape(report, "Hu", at, &p.hu, a, m);
    shape_vec(report, "h", at, &p.h, a);
    shape(report, "Gx", at, &p.gx, b, n);
    shape(report, "Gu", at, &p.gu, b, m);
    shape_vec(report, "g", at, &p.g, b);
    if asymmetry(&p.q_mat) > SYMMETRY_TOLERANCE {
        report.push(format!("Q not symmetric at {at}"));
    }
    if asymmetry(&p.r_mat) > SYMMETRY_TOLERANCE {
        report.push(format!("R not symmetric at {at}"));
    }
    let finite = [&p.q_mat, &p.s_mat, &p.r_mat, &p.hx, &p.hu, &p.gx, &p.gu]
        .iter()
        .all(|m| m.iter().all(|v| v.is_finite()))
        && [&p.q, &p.r, &p.h, &p.g].iter().all(|v| v.iter().all(|x| x.is_finite()));
    if !finite {
        report.push(format!("non-finite coefficient at {at}"));
    }
}

/// Checks shapes, symmetry and, for games flagged regular, positive
/// definiteness of each player's own-control cost block. Locations are
/// printed one-based as `(stage,player)`.
pub fn validate_lq(game: &LqGame) -> ValidationReport {
    let mut report = ValidationReport::default();
    let d = &game.dims;
    if let Err(e) = d.check() {
        report.push(e.to_string());
        return report;
    }
    let n = d.n;
    if game.stages.len() != d.horizon {
        report.push(format!("expected {} stages, found {}", d.horizon, game.stages.len()));
        return report;
    }
    if game.terminal.len() != d.players {
        report.push(format!("expected {} terminal blocks, found {}", d.players, game.terminal.len()));
        return report;
    }
    for (t, st) in game.stages.iter().enumerate() {
        let m = d.m(t);
        let at = format!("stage {}", t + 1);
        shape(&mut report, "A", &at, &st.a, n, n);
        shape(&mut report, "B", &at, &st.b, n, m);
        shape_vec(&mut report, "c", &at, &st.c, n);
        if st.players.len() != d.players {
            report.push(format!("expected {} player blocks at {at}, found {}", d.players, st.players.len()));
            continue;
        }
        for (i, p) in st.players.iter().enumerate() {
            let at = format!("({},{})", t + 1, i + 1);
            check_player(&mut report, p, &at, n, m, d.a(t, i), d.b(t, i));
            if game.regular && p.r_mat.nrows() == m && p.r_mat.ncols() == m {
                let own = d.own_indices(t, i);
                let block = select_cols(&select_rows(&p.r_mat, &own), &own);
                if !is_positive_definite(&block) {
                    report.push(format!("R not PD at {at}"));
                }
            }
        }
    }
    for (i, p) in game.terminal.iter().enumerate() {
        let at = format!("({},{})", d.horizon + 1, i + 1);
        check_player(&mut report, p, &at, n, 0, d.a(d.horizon, i), d.b(d.horizon, i));
    }
    report
}

/// Evaluates every stage of `model` along the zero-control rollout from
/// `x1` and reports evaluator outputs whose shapes disagree with the
/// declared dimensions, asymmetric Hessians and non-finite values.
pub fn validate_model(model: &dyn GameModel, x1: &DVector<f64>) -> ValidationReport {
    let mut report = ValidationReport::default();
    let d = model.dims();
    if let Err(e) = d.check() {
        report.push(e.to_string());
        return report;
    }
    if x1.len() != d.n {
        report.push(format!("shape mismatch: x1 has length {}, expected {}", x1.len(), d.n));
        return report;
    }
    let n = d.n;
    // raw evaluator output first, so that asymmetric Hessians are caught
    // before symmetrization
    let mut x = x1.clone();
    for t in 0..=d.horizon {
        let m = if t < d.horizon { d.m(t) } else { 0 };
        let u = DVector::zeros(m);
        let w = n + m;
        if t < d.horizon {
            let f = model.dynamics(t, &x, &u);
            let at = format!("stage {}", t + 1);
            shape_vec(&mut report, "dynamics", &at, &f.value, n);
            shape(&mut report, "dynamics Jacobian", &at, &f.jac, n, w);
            if f.hess.len() != n || f.hess.iter().any(|h| h.nrows() != w || h.ncols() != w) {
                report.push(format!("shape mismatch: dynamics Hessians at {at}"));
            }
        }
        for i in 0..d.players {
            let at = format!("({},{})", t + 1, i + 1);
            let l = model.cost(t, i, &x, &u);
            shape_vec(&mut report, "cost gradient", &at, &l.grad, w);
            shape(&mut report, "cost Hessian", &at, &l.hess, w, w);
            if asymmetry(&l.hess) > SYMMETRY_TOLERANCE {
                report.push(format!("cost Hessian not symmetric at {at}"));
            }
            for (what, rows, v) in [
                ("equality", d.a(t, i), model.equality(t, i, &x, &u)),
                ("inequality", d.b(t, i), model.inequality(t, i, &x, &u)),
            ] {
                shape_vec(&mut report, what, &at, &v.value, rows);
                shape(&mut report, &format!("{what} Jacobian"), &at, &v.jac, rows, w);
                if v.hess.len() != rows || v.hess.iter().any(|h| h.nrows() != w || h.ncols() != w) {
                    report.push(format!("shape mismatch: {what} Hessians at {at}"));
                }
            }
        }
        if !report.is_valid() {
            return report;
        }
        if let Err(e) = evaluate_stage(model, t, &x, &u) {
            report.push(e.to_string());
            return report;
        }
        if t < d.horizon {
            x = model.dynamics(t, &x, &u).value;
        }
    }
    let _ = Trajectory::zero_control_rollout(model, x1).map_err(|e| report.push(e.to_string()));
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::game_model::Dimensions;

    fn two_player() -> LqGame {
        let dims = Dimensions::uniform(2, 2, &[1, 1], &[0, 0], &[0, 0], &[0, 0], &[0, 0]);
        let mut g = LqGame::zeros(dims);
        for st in &mut g.stages {
            st.a = DMatrix::identity(2, 2);
            st.b = DMatrix::identity(2, 2);
            for p in &mut st.players {
                p.r_mat = DMatrix::identity(2, 2);
            }
        }
        g.regular = true;
        g
    }

    #[test]
    fn well_formed_game_passes() {
        assert!(validate_lq(&two_player()).is_valid());
    }

    #[test]
    fn zero_own_block_is_reported() {
        let mut g = two_player();
        g.stages[1].players[0].r_mat[(0, 0)] = 0.0;
        let report = validate_lq(&g);
        assert_eq!(report.issues, vec!["R not PD at (2,1)".to_string()]);
        g.regular = false;
        assert!(validate_lq(&g).is_valid());
    }

    #[test]
    fn wrong_shape_is_reported() {
        let mut g = two_player();
        g.stages[0].b = DMatrix::zeros(3, 2);
        let report = validate_lq(&g);
        assert!(report.issues[0].starts_with("shape mismatch: B at stage 1"));
    }

    #[test]
    fn validation_is_repeatable() {
        let mut g = two_player();
        g.stages[0].players[1].q_mat[(0, 1)] = 1.0;
        let a = validate_lq(&g);
        let b = validate_lq(&g);
        assert_eq!(a, b);
        assert!(a.issues.iter().any(|s| s == "Q not symmetric at (1,2)"));
    }
}
