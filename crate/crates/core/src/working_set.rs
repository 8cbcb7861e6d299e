//! Working sets of inequality rows treated as equalities.

use std::collections::BTreeSet;
use std::fmt;

use crate::game_model::Dimensions;
use crate::error::{Error, Result};

/// Identifies inequality row `row` of player `player` at stage `stage`
/// (all zero-based; `stage == T` is the terminal stage).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct RowId {
    pub stage: usize,
    pub player: usize,
    pub row: usize,
}

impl RowId {
    pub fn new(stage: usize, player: usize, row: usize) -> Self {
        Self { stage, player, row }
    }
}

/// Ordered set of working inequality rows. Ordering is lexicographic in
/// `(stage, player, row)`, which is also the tie-breaking order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct WorkingSet {
    rows: BTreeSet<RowId>,
}

impl WorkingSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_rows(rows: impl IntoIterator<Item = RowId>) -> Self {
        Self {
            rows: rows.into_iter().collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn contains(&self, id: &RowId) -> bool {
        self.rows.contains(id)
    }

    pub fn insert(&mut self, id: RowId) -> bool {
        self.rows.insert(id)
    }

    pub fn remove(&mut self, id: &RowId) -> bool {
        self.rows.remove(id)
    }

    pub fn iter(&self) -> impl Iterator<Item = &RowId> {
        self.rows.iter()
    }

    /// Sorted working rows of player `i` at stage `t`.
    pub fn rows_of(&self, t: usize, i: usize) -> Vec<usize> {
        self.rows
            .range(RowId::new(t, i, 0)..RowId::new(t, i + 1, 0))
            .map(|r| r.row)
            .collect()
    }

    /// Re-indexes the set after stage `s` is merged into `s − 1`; `dims`
    /// are the dimensions before the merge.
    pub fn merged(&self, dims: &Dimensions, s: usize) -> WorkingSet {
        let rows = self.rows.iter().map(|r| {
            if r.stage < s {
                *r
            } else if r.stage == s && s < dims.horizon {
                RowId::new(s - 1, r.player, dims.b(s - 1, r.player) + r.row)
            } else {
                RowId::new(r.stage - 1, r.player, r.row)
            }
        });
        WorkingSet::from_rows(rows)
    }

    /// Rows at stages `t..` re-indexed for the subgame starting at `t`.
    pub fn shifted(&self, t: usize) -> WorkingSet {
        WorkingSet::from_rows(
            self.rows
                .iter()
                .filter(|r| r.stage >= t)
                .map(|r| RowId::new(r.stage - t, r.player, r.row)),
        )
    }

    /// Every member indexes an existing inequality row.
    pub fn check(&self, dims: &Dimensions) -> Result<()> {
        for r in &self.rows {
            if r.stage > dims.horizon || r.player >= dims.players || r.row >= dims.b(r.stage, r.player) {
                return Err(Error::Dimension(format!("working-set entry {r} does not exist")));
            }
        }
        Ok(())
    }
}

impl fmt::Display for RowId {
    /// One-based `(stage,player,row)`.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{},{})", self.stage + 1, self.player + 1, self.row + 1)
    }
}

/// Formats row identifiers one-based, collapsing the row index when the
/// block has a single row. `stage_map` translates stage indices (used to
/// report original stages after stage combination).
pub fn format_row(id: &RowId, rows_in_block: usize, stage_map: &dyn Fn(usize) -> usize) -> String {
    let t = stage_map(id.stage) + 1;
    if rows_in_block == 1 {
        format!("({},{})", t, id.player + 1)
    } else {
        format!("({},{},{})", t, id.player + 1, id.row + 1)
    }
}
