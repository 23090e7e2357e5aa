//! Small dense helpers. Every inverse goes through a condition check.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Largest condition number accepted before a matrix counts as singular.
pub const MAX_CONDITION: f64 = 1e12;

/// 2-norm condition number from the singular values.
pub fn condition_number(m: &DMatrix<f64>) -> f64 {
    let sv = m.clone().svd(false, false).singular_values;
    let max = sv.max();
    let min = sv.min();
    if min == 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

fn check_square(m: &DMatrix<f64>) -> Result<()> {
    if m.nrows() != m.ncols() {
        return Err(Error::Dimension {
            expected: m.nrows(),
            got: m.ncols(),
        });
    }
    Ok(())
}

fn check_condition(m: &DMatrix<f64>, what: &str) -> Result<()> {
    check_square(m)?;
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(what.to_string()));
    }
    let condition = condition_number(m);
    if !condition.is_finite() || condition > MAX_CONDITION {
        return Err(Error::Singular {
            what: what.to_string(),
            condition,
        });
    }
    Ok(())
}

pub fn inverse(m: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    check_condition(m, what)?;
    m.clone().lu().try_inverse().ok_or_else(|| Error::Singular {
        what: what.to_string(),
        condition: f64::INFINITY,
    })
}

pub fn solve(m: &DMatrix<f64>, rhs: &DVector<f64>, what: &str) -> Result<DVector<f64>> {
    check_condition(m, what)?;
    if rhs.len() != m.nrows() {
        return Err(Error::Dimension {
            expected: m.nrows(),
            got: rhs.len(),
        });
    }
    m.clone().lu().solve(rhs).ok_or_else(|| Error::Singular {
        what: what.to_string(),
        condition: f64::INFINITY,
    })
}

/// Operator 2-norm (largest singular value).
pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.clone().svd(false, false).singular_values.max()
}

/// Smallest eigenvalue of the symmetric part `(m + mᵀ)/2`.
pub fn min_symmetric_eigenvalue(m: &DMatrix<f64>) -> Result<f64> {
    check_square(m)?;
    let sym = (m + m.transpose()) * 0.5;
    Ok(SymmetricEigen::new(sym).eigenvalues.min())
}

/// Cosine of the angle between two vectors; `None` when either is zero.
pub fn cosine(u: &DVector<f64>, v: &DVector<f64>) -> Option<f64> {
    let nu = u.norm();
    let nv = v.norm();
    if nu == 0.0 || nv == 0.0 {
        return None;
    }
    Some((u.dot(v) / (nu * nv)).clamp(-1.0, 1.0))
}

pub fn rotation2(deg: f64) -> [[f64; 2]; 2] {
    let x = deg.to_radians();
    let (s, c) = x.sin_cos();
    [[c, -s], [s, c]]
}

pub fn matrix_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| m.row(i).iter().copied().collect())
        .collect()
}

pub fn matrix_from_rows(rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, Vec::len);
    if let Some(bad) = rows.iter().find(|r| r.len() != ncols) {
        return Err(Error::Dimension {
            expected: ncols,
            got: bad.len(),
        });
    }
    Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn singular_matrix_rejected() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 4.0]);
        let err = inverse(&m, "test").unwrap_err();
        assert!(matches!(err, Error::Singular { .. }));
    }

    #[test]
    fn near_singular_rejected() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1e-13]);
        assert!(inverse(&m, "test").is_err());
        let ok = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1e-6]);
        assert!(inverse(&ok, "test").is_ok());
    }

    #[test]
    fn spectral_norm_of_scaled_rotation() {
        let r = rotation2(37.0);
        let m = DMatrix::from_row_slice(2, 2, &[r[0][0], r[0][1], r[1][0], r[1][1]]) * 0.3;
        assert_relative_eq!(spectral_norm(&m), 0.3, epsilon = 1e-14);
    }

    #[test]
    fn cosine_edge_cases() {
        let u = DVector::from_vec(vec![1.0, 0.0]);
        let v = DVector::from_vec(vec![0.0, 2.0]);
        assert_eq!(cosine(&u, &v), Some(0.0));
        assert_eq!(cosine(&u, &(u.clone() * 3.0)), Some(1.0));
        assert_eq!(cosine(&u, &DVector::zeros(2)), None);
    }
}
