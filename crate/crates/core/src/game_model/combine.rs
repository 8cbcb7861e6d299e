//! Merging a stage into its predecessor.
//!
//! Combining stage `s` into `s − 1` gives the merged stage the control space
//! `U_{s−1}ⁱ × U_sⁱ` per player (player blocks stay contiguous, earlier
//! stage first), composed dynamics `f_s ∘ f_{s−1}`, stacked constraints and
//! summed costs. Stage `s` must satisfy `1 ≤ s ≤ T − 1` (zero-based).

use std::ops::Range;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use super::eval::{compose, compose_scalar};
use super::{Dimensions, GameModel, LqGame, LqPlayerStage, LqStage, Multipliers, ScalarEval, Trajectory, VecEval};
use crate::error::{Error, Result};
use crate::linalg::{cols, put};

fn check_stage(dims: &Dimensions, s: usize) -> Result<()> {
    if s == 0 || s >= dims.horizon {
        return Err(Error::InvalidStage {
            stage: s + 1,
            reason: format!("stage combination needs 2 <= t <= T = {}", dims.horizon),
        });
    }
    Ok(())
}

/// Dimensions after merging stage `s` into `s − 1`.
pub fn merged_dims(dims: &Dimensions, s: usize) -> Result<Dimensions> {
    check_stage(dims, s)?;
    let mut out = dims.clone();
    let p = s - 1;
    for i in 0..dims.players {
        out.controls[p][i] += dims.controls[s][i];
        out.equalities[p][i] += dims.equalities[s][i];
        out.inequalities[p][i] += dims.inequalities[s][i];
    }
    out.controls.remove(s);
    out.equalities.remove(s);
    out.inequalities.remove(s);
    out.horizon -= 1;
    Ok(out)
}

/// Selection matrices `E_prev`, `E_cur` with `u_{s−1} = E_prev û` and
/// `u_s = E_cur û`.
fn selections(dims: &Dimensions, s: usize) -> (DMatrix<f64>, DMatrix<f64>) {
    let p = s - 1;
    let m_new: usize = dims.m(p) + dims.m(s);
    let mut e_prev = DMatrix::zeros(dims.m(p), m_new);
    let mut e_cur = DMatrix::zeros(dims.m(s), m_new);
    let mut k = 0;
    for i in 0..dims.players {
        let off_p = dims.control_offset(p, i);
        for r in 0..dims.controls[p][i] {
            e_prev[(off_p + r, k)] = 1.0;
            k += 1;
        }
        let off_s = dims.control_offset(s, i);
        for r in 0..dims.controls[s][i] {
            e_cur[(off_s + r, k)] = 1.0;
            k += 1;
        }
    }
    (e_prev, e_cur)
}

/// Merges stage `s` of an LQ game into stage `s − 1`.
///
/// Costs keep their constant terms, so every trajectory of the original
/// game has the same total cost per player in the merged game.
pub fn combine_lq_stages(game: &LqGame, s: usize) -> Result<LqGame> {
    let dims = &game.dims;
    let new_dims = merged_dims(dims, s)?;
    let p = s - 1;
    let n = dims.n;
    let (e_prev, e_cur) = selections(dims, s);
    let m_new = e_prev.ncols();
    let sp = &game.stages[p];
    let sc = &game.stages[s];

    // w = [x; û];  [x_s; u_s] = L w + d;  [x; u_{s−1}] = Lp w
    let mut l_cur = DMatrix::zeros(n + dims.m(s), n + m_new);
    put(&mut l_cur, 0, 0, &sp.a);
    put(&mut l_cur, 0, n, &(&sp.b * &e_prev));
    put(&mut l_cur, n, n, &e_cur);
    let mut d_cur = DVector::zeros(n + dims.m(s));
    d_cur.rows_mut(0, n).copy_from(&sp.c);
    let mut l_prev = DMatrix::zeros(n + dims.m(p), n + m_new);
    put(&mut l_prev, 0, 0, &DMatrix::identity(n, n));
    put(&mut l_prev, n, n, &e_prev);

    let a = &sc.a * &sp.a;
    let b = &sc.a * &sp.b * &e_prev + &sc.b * &e_cur;
    let c = &sc.a * &sp.c + &sc.c;

    let players = (0..dims.players)
        .map(|i| {
            let pp = &sp.players[i];
            let pc = &sc.players[i];
            let hp = pp.hessian();
            let hc = pc.hessian();
            let gp = stack_vec(&pp.q, &pp.r);
            let gc = stack_vec(&pc.q, &pc.r);
            let hess = l_prev.transpose() * &hp * &l_prev + l_cur.transpose() * &hc * &l_cur;
            let grad = l_prev.transpose() * &gp + l_cur.transpose() * (&hc * &d_cur + &gc);
            let constant = pp.constant + pc.constant + 0.5 * d_cur.dot(&(&hc * &d_cur)) + d_cur.dot(&gc);

            let (hx, hu, h) = stack_rows(
                (&pp.hx, &(&pp.hu * &e_prev), &pp.h),
                (&pc.hx, &pc.hu, &pc.h),
                &l_cur,
                &d_cur,
            );
            let (gx, gu, g) = stack_rows(
                (&pp.gx, &(&pp.gu * &e_prev), &pp.g),
                (&pc.gx, &pc.gu, &pc.g),
                &l_cur,
                &d_cur,
            );
            LqPlayerStage {
                q_mat: hess.view((0, 0), (n, n)).into_owned(),
                s_mat: hess.view((n, 0), (m_new, n)).into_owned(),
                r_mat: hess.view((n, n), (m_new, m_new)).into_owned(),
                q: grad.rows(0, n).into_owned(),
                r: grad.rows(n, m_new).into_owned(),
                constant,
                hx,
                hu,
                h,
                gx,
                gu,
                g,
            }
        })
        .collect();

    let mut stages = game.stages.clone();
    stages[p] = LqStage { a, b, c, players };
    stages.remove(s);
    Ok(LqGame {
        dims: new_dims,
        stages,
        terminal: game.terminal.clone(),
        regular: game.regular,
    })
}

fn stack_vec(a: &DVector<f64>, b: &DVector<f64>) -> DVector<f64> {
    DVector::from_iterator(a.len() + b.len(), a.iter().chain(b.iter()).copied())
}

type Rows<'a> = (&'a DMatrix<f64>, &'a DMatrix<f64>, &'a DVector<f64>);

/// Stacks rows already over `w` (`prev`) with rows over `[x_s; u_s]`
/// (`cur`) pulled back through `L w + d`.
fn stack_rows(prev: Rows, cur: Rows, l_cur: &DMatrix<f64>, d_cur: &DVector<f64>) -> (DMatrix<f64>, DMatrix<f64>, DVector<f64>) {
    let n = prev.0.ncols();
    let m_new = prev.1.ncols();
    let rp = prev.0.nrows();
    let rc = cur.0.nrows();
    let mut j_cur = DMatrix::zeros(rc, cur.0.ncols() + cur.1.ncols());
    put(&mut j_cur, 0, 0, cur.0);
    put(&mut j_cur, 0, n, cur.1);
    let pulled = &j_cur * l_cur;
    let offset = &j_cur * d_cur + cur.2;

    let mut jx = DMatrix::zeros(rp + rc, n);
    let mut ju = DMatrix::zeros(rp + rc, m_new);
    let mut v = DVector::zeros(rp + rc);
    put(&mut jx, 0, 0, prev.0);
    put(&mut ju, 0, 0, prev.1);
    v.rows_mut(0, rp).copy_from(prev.2);
    put(&mut jx, rp, 0, &cols(&pulled, 0, n));
    put(&mut ju, rp, 0, &cols(&pulled, n, m_new));
    v.rows_mut(rp, rc).copy_from(&offset);
    (jx, ju, v)
}

/// Contiguous ranges of original stages making up each combined stage.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StageGroups {
    pub groups: Vec<Range<usize>>,
}

impl StageGroups {
    pub fn identity(horizon: usize) -> Self {
        Self {
            groups: (0..horizon).map(|t| t..t + 1).collect(),
        }
    }

    pub fn is_identity(&self) -> bool {
        self.groups.iter().all(|g| g.len() == 1)
    }

    pub fn horizon(&self) -> usize {
        self.groups.len()
    }

    /// Original horizon.
    pub fn original_horizon(&self) -> usize {
        self.groups.last().map(|g| g.end).unwrap_or(0)
    }

    pub fn merge(&self, s: usize) -> Result<StageGroups> {
        if s == 0 || s >= self.groups.len() {
            return Err(Error::InvalidStage {
                stage: s + 1,
                reason: "cannot merge".into(),
            });
        }
        let mut groups = self.groups.clone();
        let end = groups[s].end;
        groups[s - 1].end = end;
        groups.remove(s);
        Ok(StageGroups { groups })
    }

    /// Number of original stages in the group that merging `s` into
    /// `s − 1` would produce.
    pub fn merged_len(&self, s: usize) -> usize {
        match (self.groups.get(s - 1), self.groups.get(s)) {
            (Some(a), Some(b)) => a.len() + b.len(),
            _ => 0,
        }
    }

    /// Original stage of combined stage `k` (terminal maps to terminal).
    pub fn first_original(&self, k: usize) -> usize {
        if k == self.groups.len() {
            self.original_horizon()
        } else {
            self.groups[k].start
        }
    }

    /// Maps a row of a combined-stage constraint block back to
    /// `(original stage, row)`, given original per-stage row counts for the
    /// player.
    pub fn original_row(&self, k: usize, row: usize, rows_per_stage: impl Fn(usize) -> usize) -> (usize, usize) {
        if k == self.groups.len() {
            return (self.original_horizon(), row);
        }
        let mut r = row;
        for o in self.groups[k].clone() {
            let cnt = rows_per_stage(o);
            if r < cnt {
                return (o, r);
            }
            r -= cnt;
        }
        (self.groups[k].end - 1, r)
    }
}

/// Expands a combined-stage trajectory to original stages by splitting
/// merged controls and simulating the original dynamics inside each group.
pub fn expand_trajectory(original: &dyn GameModel, groups: &StageGroups, traj: &Trajectory) -> Trajectory {
    let od = original.dims();
    let mut x = Vec::with_capacity(od.horizon + 1);
    let mut u = Vec::with_capacity(od.horizon);
    for (k, g) in groups.groups.iter().enumerate() {
        let mut xc = traj.x[k].clone();
        // per-player cursor into the merged control block
        let mut cursor: Vec<usize> = Vec::with_capacity(od.players);
        let mut off = 0;
        for i in 0..od.players {
            cursor.push(off);
            off += g.clone().map(|o| od.controls[o][i]).sum::<usize>();
        }
        for o in g.clone() {
            let mut uo = DVector::zeros(od.m(o));
            for i in 0..od.players {
                let len = od.controls[o][i];
                let dst = od.control_offset(o, i);
                uo.rows_mut(dst, len).copy_from(&traj.u[k].rows(cursor[i], len));
                cursor[i] += len;
            }
            x.push(xc.clone());
            if o + 1 < g.end {
                xc = original.dynamics(o, &xc, &uo).value;
            }
            u.push(uo);
        }
    }
    x.push(traj.x[groups.horizon()].clone());
    Trajectory { x, u }
}

/// Re-indexes an iterate after merging stage `s` into `s − 1`; `dims` are
/// the dimensions before the merge.
pub fn merge_trajectory(dims: &Dimensions, traj: &Trajectory, s: usize) -> Trajectory {
    let p = s - 1;
    let mut x = traj.x.clone();
    x.remove(s);
    let mut u = traj.u.clone();
    let mut merged = Vec::with_capacity(dims.m(p) + dims.m(s));
    for i in 0..dims.players {
        merged.extend(traj.player_control(dims, p, i).iter());
        merged.extend(traj.player_control(dims, s, i).iter());
    }
    u[p] = DVector::from_vec(merged);
    u.remove(s);
    Trajectory { x, u }
}

/// Re-indexes multipliers after merging stage `s` into `s − 1`.
pub fn merge_multipliers(dims: &Dimensions, mult: &Multipliers, s: usize) -> Multipliers {
    let p = s - 1;
    let np = dims.players;
    let cat = |a: &DVector<f64>, b: &DVector<f64>| stack_vec(a, b);

    let mut lambda = mult.lambda.clone();
    lambda[p] = mult.lambda[s].clone();
    lambda.remove(s);

    let mut mu = mult.mu.clone();
    let mut gamma = mult.gamma.clone();
    for i in 0..np {
        mu[p][i] = cat(&mult.mu[p][i], &mult.mu[s][i]);
        gamma[p][i] = cat(&mult.gamma[p][i], &mult.gamma[s][i]);
    }
    mu.remove(s);
    gamma.remove(s);

    let mut psi = mult.psi.clone();
    if p > 0 {
        for i in 0..np {
            let mut merged = Vec::new();
            let (mut op, mut os) = (0, 0);
            for j in (0..np).filter(|&j| j != i) {
                let lp = dims.controls[p][j];
                let ls = dims.controls[s][j];
                merged.extend(mult.psi[p][i].rows(op, lp).iter());
                merged.extend(mult.psi[s][i].rows(os, ls).iter());
                op += lp;
                os += ls;
            }
            psi[p][i] = DVector::from_vec(merged);
        }
    }
    psi.remove(s);
    Multipliers { lambda, mu, gamma, psi }
}

/// A nonlinear game with groups of consecutive stages merged.
#[derive(Debug, Clone)]
pub struct MergedModel {
    base: Arc<dyn GameModel>,
    groups: StageGroups,
    dims: Dimensions,
}

impl MergedModel {
    pub fn new(base: Arc<dyn GameModel>, groups: StageGroups) -> Result<Self> {
        let bd = base.dims();
        if groups.original_horizon() != bd.horizon {
            return Err(Error::Dimension("stage groups do not cover the horizon".into()));
        }
        let mut dims = bd.clone();
        dims.horizon = groups.horizon();
        dims.controls.clear();
        dims.equalities.clear();
        dims.inequalities.clear();
        for g in &groups.groups {
            let sum = |f: &dyn Fn(usize, usize) -> usize, i: usize| g.clone().map(|o| f(o, i)).sum::<usize>();
            dims.controls
                .push((0..bd.players).map(|i| sum(&|o, i| bd.controls[o][i], i)).collect());
            dims.equalities
                .push((0..bd.players).map(|i| sum(&|o, i| bd.equalities[o][i], i)).collect());
            dims.inequalities
                .push((0..bd.players).map(|i| sum(&|o, i| bd.inequalities[o][i], i)).collect());
        }
        dims.equalities.push(bd.equalities[bd.horizon].clone());
        dims.inequalities.push(bd.inequalities[bd.horizon].clone());
        Ok(Self { base, groups, dims })
    }

    pub fn identity(base: Arc<dyn GameModel>) -> Self {
        let h = base.dims().horizon;
        Self::new(base, StageGroups::identity(h)).expect("identity grouping is valid")
    }

    pub fn base(&self) -> &Arc<dyn GameModel> {
        &self.base
    }

    pub fn groups(&self) -> &StageGroups {
        &self.groups
    }

    /// Merges combined stage `s` into `s − 1`.
    pub fn merge(&self, s: usize) -> Result<MergedModel> {
        check_stage(&self.dims, s)?;
        MergedModel::new(self.base.clone(), self.groups.merge(s)?)
    }

    /// Evaluates the chain of original stages in group `k` at `w = [x; û]`.
    fn chain(&self, k: usize, x: &DVector<f64>, u: &DVector<f64>) -> Chain {
        let bd = self.base.dims();
        let n = bd.n;
        let dim = n + u.len();
        let g = self.groups.groups[k].clone();
        // offsets of each player's block inside û, then per-stage cursor
        let mut cursor = Vec::with_capacity(bd.players);
        let mut off = 0;
        for i in 0..bd.players {
            cursor.push(off);
            off += g.clone().map(|o| bd.controls[o][i]).sum::<usize>();
        }
        let mut y = VecEval {
            value: x.clone(),
            jac: {
                let mut j = DMatrix::zeros(n, dim);
                put(&mut j, 0, 0, &DMatrix::identity(n, n));
                j
            },
            hess: vec![DMatrix::zeros(0, 0); n],
        };
        let mut cost = vec![ScalarEval::zeros(dim); bd.players];
        let mut eqs: Vec<Vec<VecEval>> = vec![Vec::new(); bd.players];
        let mut ineqs: Vec<Vec<VecEval>> = vec![Vec::new(); bd.players];
        for o in g.clone() {
            let mo = bd.m(o);
            let mut idx = vec![0usize; mo];
            for i in 0..bd.players {
                let dst = bd.control_offset(o, i);
                for r in 0..bd.controls[o][i] {
                    idx[dst + r] = n + cursor[i] + r;
                }
                cursor[i] += bd.controls[o][i];
            }
            let uo = DVector::from_fn(mo, |r, _| u[idx[r] - n]);
            // v = [y; u_o] over w
            let mut vjac = DMatrix::zeros(n + mo, dim);
            put(&mut vjac, 0, 0, &y.jac);
            for (r, &c) in idx.iter().enumerate() {
                vjac[(n + r, c)] = 1.0;
            }
            let mut vhess = y.hess.clone();
            vhess.extend(std::iter::repeat_n(DMatrix::zeros(0, 0), mo));
            let v = VecEval {
                value: DVector::from_iterator(n + mo, y.value.iter().chain(uo.iter()).copied()),
                jac: vjac,
                hess: vhess,
            };
            for i in 0..bd.players {
                let l = self.base.cost(o, i, &y.value, &uo);
                cost[i].add_assign(&compose_scalar(&l, &v), 1.0);
                eqs[i].push(compose(&self.base.equality(o, i, &y.value, &uo), &v));
                ineqs[i].push(compose(&self.base.inequality(o, i, &y.value, &uo), &v));
            }
            let f = self.base.dynamics(o, &y.value, &uo);
            y = compose(&f, &v);
        }
        Chain {
            dynamics: y,
            cost,
            eqs: eqs.into_iter().map(|p| VecEval::stack(dim, &p)).collect(),
            ineqs: ineqs.into_iter().map(|p| VecEval::stack(dim, &p)).collect(),
        }
    }

    fn trivial(&self, k: usize) -> Option<usize> {
        if k == self.dims.horizon {
            Some(self.base.dims().horizon)
        } else if self.groups.groups[k].len() == 1 {
            Some(self.groups.groups[k].start)
        } else {
            None
        }
    }
}

struct Chain {
    dynamics: VecEval,
    cost: Vec<ScalarEval>,
    eqs: Vec<VecEval>,
    ineqs: Vec<VecEval>,
}

impl GameModel for MergedModel {
    fn dims(&self) -> &Dimensions {
        &self.dims
    }

    fn dynamics(&self, t: usize, x: &DVector<f64>, u: &DVector<f64>) -> VecEval {
        match self.trivial(t) {
            Some(o) => self.base.dynamics(o, x, u),
            None => self.chain(t, x, u).dynamics,
        }
    }

    fn cost(&self, t: usize, player: usize, x: &DVector<f64>, u: &DVector<f64>) -> ScalarEval {
        match self.trivial(t) {
            Some(o) => self.base.cost(o, player, x, u),
            None => self.chain(t, x, u).cost.swap_remove(player),
        }
    }

    fn equality(&self, t: usize, player: usize, x: &DVector<f64>, u: &DVector<f64>) -> VecEval {
        match self.trivial(t) {
            Some(o) => self.base.equality(o, player, x, u),
            None => self.chain(t, x, u).eqs.swap_remove(player),
        }
    }

    fn inequality(&self, t: usize, player: usize, x: &DVector<f64>, u: &DVector<f64>) -> VecEval {
        match self.trivial(t) {
            Some(o) => self.base.inequality(o, player, x, u),
            None => self.chain(t, x, u).ineqs.swap_remove(player),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_stage(a1: f64, a2: f64, b1: f64, b2: f64) -> LqGame {
        let dims = Dimensions::uniform(1, 2, &[1], &[0], &[0], &[0], &[0]);
        let mut g = LqGame::zeros(dims);
        g.stages[0].a[(0, 0)] = a1;
        g.stages[1].a[(0, 0)] = a2;
        g.stages[0].b[(0, 0)] = b1;
        g.stages[1].b[(0, 0)] = b2;
        g
    }

    #[test]
    fn linear_composition() {
        let g = two_stage(2.0, 3.0, 0.5, 1.5);
        let c = combine_lq_stages(&g, 1).unwrap();
        assert_eq!(c.dims.horizon, 1);
        assert_eq!(c.dims.controls[0], vec![2]);
        assert_eq!(c.stages[0].a[(0, 0)], 6.0);
        // B-block of u_{t-1} is A2 B1, of u_t is B2
        assert_eq!(c.stages[0].b[(0, 0)], 1.5);
        assert_eq!(c.stages[0].b[(0, 1)], 1.5);
    }

    #[test]
    fn identity_dynamics_make_later_controls_inert() {
        let g = two_stage(1.0, 1.0, 1.0, 0.0);
        let c = combine_lq_stages(&g, 1).unwrap();
        assert_eq!(c.stages[0].a[(0, 0)], 1.0);
        assert_eq!(c.stages[0].b[(0, 0)], 1.0);
        assert_eq!(c.stages[0].b[(0, 1)], 0.0);
    }

    #[test]
    fn invalid_stage_rejected() {
        let g = two_stage(1.0, 1.0, 1.0, 1.0);
        assert!(matches!(combine_lq_stages(&g, 0), Err(Error::InvalidStage { .. })));
        assert!(matches!(combine_lq_stages(&g, 2), Err(Error::InvalidStage { .. })));
    }

    #[test]
    fn stage_groups_map_rows_back() {
        let g = StageGroups::identity(5).merge(3).unwrap().merge(2).unwrap();
        assert_eq!(g.groups, vec![0..1, 1..4, 4..5]);
        assert_eq!(g.original_row(1, 2, |_| 1), (3, 0));
        assert_eq!(g.original_row(3, 0, |_| 1), (5, 0));
        assert_eq!(g.first_original(2), 4);
    }
}
