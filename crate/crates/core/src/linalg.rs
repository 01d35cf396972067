//! Small dense helpers shared by the modules.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Builds a matrix from row-major nested rows. An empty outer list yields 0×0.
pub fn from_rows(rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::Dimension("ragged matrix rows".into()));
    }
    Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

pub fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

/// Relative Frobenius asymmetry ‖M − Mᵀ‖ / max(‖M‖, 1e-300).
pub fn asymmetry(m: &DMatrix<f64>) -> f64 {
    if m.nrows() != m.ncols() {
        return f64::INFINITY;
    }
    let diff = (m - m.transpose()).norm();
    if diff == 0.0 {
        return 0.0;
    }
    diff / m.norm().max(1e-300)
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Largest eigenvalue of a symmetric matrix (symmetrized first). Empty → −∞.
pub fn max_eig(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return f64::NEG_INFINITY;
    }
    match m.nrows() {
        1 => m[(0, 0)],
        2 => {
            let (a, b, d) = (m[(0, 0)], 0.5 * (m[(0, 1)] + m[(1, 0)]), m[(1, 1)]);
            let mid = 0.5 * (a + d);
            let rad = (0.25 * (a - d) * (a - d) + b * b).sqrt();
            mid + rad
        }
        _ => symmetrize(m)
            .symmetric_eigenvalues()
            .iter()
            .cloned()
            .fold(f64::NEG_INFINITY, f64::max),
    }
}

pub fn min_eig(m: &DMatrix<f64>) -> f64 {
    -max_eig(&(-m))
}

pub fn kron(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    a.kronecker(b)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn max_eig_matches_general_solver() {
        let m = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, -3.0]);
        let general = m.clone().symmetric_eigenvalues().max();
        assert!((max_eig(&m) - general).abs() < 1e-12);
        let m3 = DMatrix::from_row_slice(3, 3, &[1.0, 0.5, 0.0, 0.5, 2.0, 0.1, 0.0, 0.1, -1.0]);
        assert!((max_eig(&m3) - m3.clone().symmetric_eigenvalues().max()).abs() < 1e-12);
    }

    #[test]
    fn ragged_rows_rejected() {
        assert!(from_rows(&[vec![1.0, 2.0], vec![3.0]]).is_err());
        let m = from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        assert_eq!(m[(1, 0)], 3.0);
        assert_eq!(to_rows(&m), vec![vec![1.0, 2.0], vec![3.0, 4.0]]);
    }
}
