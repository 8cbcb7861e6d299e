//! Small dense linear-algebra helpers shared by the solvers.

use nalgebra::{DMatrix, DVector};

/// Relative pivot threshold below which a stage matrix is declared singular.
pub const PIVOT_TOLERANCE: f64 = 1e-10;

/// Outcome of a pivoted dense solve.
#[derive(Debug, Clone)]
pub struct PivotedSolve {
    pub solution: DMatrix<f64>,
    /// Smallest |U_ii| divided by the largest |U_ii|.
    pub pivot_ratio: f64,
}

/// Solves `lhs * X = rhs` with LU and partial pivoting.
///
/// Fails with the observed pivot ratio when the smallest pivot is below
/// `PIVOT_TOLERANCE` times the largest one.
pub fn solve_pivoted(lhs: DMatrix<f64>, rhs: &DMatrix<f64>) -> Result<PivotedSolve, f64> {
    assert_eq!(lhs.nrows(), lhs.ncols(), "solve_pivoted needs a square matrix");
    assert_eq!(lhs.nrows(), rhs.nrows());
    if lhs.nrows() == 0 {
        return Ok(PivotedSolve {
            solution: DMatrix::zeros(0, rhs.ncols()),
            pivot_ratio: 1.0,
        });
    }
    if lhs.iter().any(|v| !v.is_finite()) {
        return Err(0.0);
    }
    let lu = lhs.lu();
    let u = lu.u();
    let (mut min_piv, mut max_piv) = (f64::INFINITY, 0.0f64);
    for i in 0..u.nrows() {
        let p = u[(i, i)].abs();
        min_piv = min_piv.min(p);
        max_piv = max_piv.max(p);
    }
    if max_piv == 0.0 {
        return Err(0.0);
    }
    let pivot_ratio = min_piv / max_piv;
    if pivot_ratio < PIVOT_TOLERANCE {
        return Err(pivot_ratio);
    }
    let solution = lu.solve(rhs).ok_or(pivot_ratio)?;
    Ok(PivotedSolve {
        solution,
        pivot_ratio,
    })
}

/// Writes `block` into `target` at (`row`, `col`).
pub fn put(target: &mut DMatrix<f64>, row: usize, col: usize, block: &DMatrix<f64>) {
    if block.nrows() == 0 || block.ncols() == 0 {
        return;
    }
    target
        .view_mut((row, col), (block.nrows(), block.ncols()))
        .copy_from(block);
}

/// Adds `block` into `target` at (`row`, `col`).
pub fn add(target: &mut DMatrix<f64>, row: usize, col: usize, block: &DMatrix<f64>) {
    if block.nrows() == 0 || block.ncols() == 0 {
        return;
    }
    let mut view = target.view_mut((row, col), (block.nrows(), block.ncols()));
    view += block;
}

pub fn put_vec(target: &mut DVector<f64>, row: usize, v: &DVector<f64>) {
    if v.is_empty() {
        return;
    }
    target.rows_mut(row, v.len()).copy_from(v);
}

pub fn put_identity(target: &mut DMatrix<f64>, row: usize, col: usize, size: usize, scale: f64) {
    for k in 0..size {
        target[(row + k, col + k)] = scale;
    }
}

/// Rows `start..start+len` of a matrix, copied.
pub fn rows(m: &DMatrix<f64>, start: usize, len: usize) -> DMatrix<f64> {
    m.rows(start, len).into_owned()
}

/// Columns `start..start+len` of a matrix, copied.
pub fn cols(m: &DMatrix<f64>, start: usize, len: usize) -> DMatrix<f64> {
    m.columns(start, len).into_owned()
}

pub fn segment(v: &DVector<f64>, start: usize, len: usize) -> DVector<f64> {
    v.rows(start, len).into_owned()
}

/// Selects the listed rows of `m`, in order.
pub fn select_rows(m: &DMatrix<f64>, idx: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(idx.len(), m.ncols(), |r, c| m[(idx[r], c)])
}

/// Selects the listed columns of `m`, in order.
pub fn select_cols(m: &DMatrix<f64>, idx: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(m.nrows(), idx.len(), |r, c| m[(r, idx[c])])
}

pub fn select_entries(v: &DVector<f64>, idx: &[usize]) -> DVector<f64> {
    DVector::from_fn(idx.len(), |r, _| v[idx[r]])
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Largest absolute entry, zero for empty inputs.
pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0f64, |acc, v| acc.max(v.abs()))
}

pub fn max_abs_vec(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0f64, |acc, x| acc.max(x.abs()))
}

/// Positive definiteness via Cholesky.
pub fn is_positive_definite(m: &DMatrix<f64>) -> bool {
    if m.nrows() == 0 {
        return true;
    }
    m.clone().cholesky().is_some()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solves_well_conditioned_system() {
        let a = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 3.0]);
        let b = DMatrix::from_row_slice(2, 1, &[3.0, 5.0]);
        let sol = solve_pivoted(a, &b).unwrap();
        assert!((sol.solution[(0, 0)] - 0.8).abs() < 1e-14);
        assert!((sol.solution[(1, 0)] - 1.4).abs() < 1e-14);
    }

    #[test]
    fn rejects_rank_deficient_system() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 4.0]);
        let b = DMatrix::from_row_slice(2, 1, &[1.0, 1.0]);
        assert!(solve_pivoted(a, &b).is_err());
    }

    #[test]
    fn selection_helpers() {
        let m = DMatrix::from_fn(3, 3, |r, c| (3 * r + c) as f64);
        let s = select_rows(&m, &[2, 0]);
        assert_eq!(s[(0, 1)], 7.0);
        assert_eq!(s[(1, 2)], 2.0);
        let c = select_cols(&m, &[1]);
        assert_eq!(c.column(0).as_slice(), &[1.0, 4.0, 7.0]);
    }
}
