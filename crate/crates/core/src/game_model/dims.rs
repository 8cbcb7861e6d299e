use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dimension bookkeeping for a dynamic game.
///
/// Stages are zero-based internally: control stages are `0..horizon` and the
/// terminal stage (state only) is `horizon`. User-facing output is one-based.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dimensions {
    /// State dimension `n`.
    pub n: usize,
    /// Number of control stages `T`.
    pub horizon: usize,
    /// Number of players `N`.
    pub players: usize,
    /// `controls[t][i]`, `t < T`.
    pub controls: Vec<Vec<usize>>,
    /// `equalities[t][i]`, `t <= T`.
    pub equalities: Vec<Vec<usize>>,
    /// `inequalities[t][i]`, `t <= T`.
    pub inequalities: Vec<Vec<usize>>,
}

impl Dimensions {
    /// Time-invariant control and constraint dimensions, with separate
    /// terminal constraint counts.
    pub fn uniform(
        n: usize,
        horizon: usize,
        controls: &[usize],
        equalities: &[usize],
        inequalities: &[usize],
        terminal_equalities: &[usize],
        terminal_inequalities: &[usize],
    ) -> Self {
        let players = controls.len();
        let mut eq = vec![equalities.to_vec(); horizon];
        eq.push(terminal_equalities.to_vec());
        let mut ineq = vec![inequalities.to_vec(); horizon];
        ineq.push(terminal_inequalities.to_vec());
        Self {
            n,
            horizon,
            players,
            controls: vec![controls.to_vec(); horizon],
            equalities: eq,
            inequalities: ineq,
        }
    }

    pub fn check(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Dimension(msg));
        if self.n == 0 || self.horizon == 0 || self.players == 0 {
            return fail("n, T and N must all be at least 1".into());
        }
        if self.controls.len() != self.horizon {
            return fail(format!(
                "control dims cover {} stages, expected {}",
                self.controls.len(),
                self.horizon
            ));
        }
        if self.equalities.len() != self.horizon + 1 || self.inequalities.len() != self.horizon + 1 {
            return fail(format!("constraint dims must cover {} stages", self.horizon + 1));
        }
        let all = self
            .controls
            .iter()
            .chain(&self.equalities)
            .chain(&self.inequalities);
        for row in all {
            if row.len() != self.players {
                return fail(format!("per-player list of length {} (N = {})", row.len(), self.players));
            }
        }
        Ok(())
    }

    /// Total control dimension `m_t`.
    pub fn m(&self, t: usize) -> usize {
        if t >= self.horizon {
            return 0;
        }
        self.controls[t].iter().sum()
    }

    pub fn m_player(&self, t: usize, i: usize) -> usize {
        if t >= self.horizon {
            return 0;
        }
        self.controls[t][i]
    }

    /// `m_t^{-i}`.
    pub fn m_others(&self, t: usize, i: usize) -> usize {
        self.m(t) - self.m_player(t, i)
    }

    /// Offset of player `i`'s block inside `u_t`.
    pub fn control_offset(&self, t: usize, i: usize) -> usize {
        self.controls[t][..i].iter().sum()
    }

    /// Indices of player `i`'s entries inside `u_t`.
    pub fn own_indices(&self, t: usize, i: usize) -> Vec<usize> {
        let off = self.control_offset(t, i);
        (off..off + self.controls[t][i]).collect()
    }

    /// Indices of all other players' entries inside `u_t`, in player order.
    pub fn other_indices(&self, t: usize, i: usize) -> Vec<usize> {
        (0..self.players)
            .filter(|&j| j != i)
            .flat_map(|j| self.own_indices(t, j))
            .collect()
    }

    pub fn a(&self, t: usize, i: usize) -> usize {
        self.equalities[t][i]
    }

    pub fn b(&self, t: usize, i: usize) -> usize {
        self.inequalities[t][i]
    }

    pub fn total_controls(&self) -> usize {
        (0..self.horizon).map(|t| self.m(t)).sum()
    }

    pub fn total_equalities(&self) -> usize {
        self.equalities.iter().flatten().sum()
    }

    pub fn total_inequalities(&self) -> usize {
        self.inequalities.iter().flatten().sum()
    }

    pub fn has_inequalities(&self) -> bool {
        self.total_inequalities() > 0
    }
}
