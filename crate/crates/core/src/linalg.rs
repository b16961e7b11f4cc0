//! Small dense linear-algebra helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{shape, Result};

/// Relative cutoff for singular values treated as zero.
pub const PINV_RTOL: f64 = 1e-12;

/// Moore-Penrose pseudo-inverse via SVD, dropping singular values below `PINV_RTOL * s_max`.
pub fn pseudo_inverse(m: &DMatrix<f64>) -> DMatrix<f64> {
    let (rows, cols) = m.shape();
    if rows == 0 || cols == 0 {
        return DMatrix::zeros(cols, rows);
    }
    let svd = m.clone().svd(true, true);
    let u = svd.u.as_ref().expect("u requested");
    let vt = svd.v_t.as_ref().expect("v_t requested");
    let smax = svd.singular_values.max();
    let cutoff = PINV_RTOL * smax;
    let mut out = DMatrix::zeros(cols, rows);
    for (k, &s) in svd.singular_values.iter().enumerate() {
        if s > cutoff && s > 0.0 {
            let vk = vt.row(k).transpose();
            let uk = u.column(k);
            out += (vk / s) * uk.transpose();
        }
    }
    out
}

/// Numerical rank with the same cutoff as [`pseudo_inverse`].
pub fn rank(m: &DMatrix<f64>) -> usize {
    if m.is_empty() {
        return 0;
    }
    let s = m.clone().singular_values();
    let smax = s.max();
    s.iter().filter(|&&x| x > PINV_RTOL * smax && x > 0.0).count()
}

/// Removes the component of `x` in the row space of `d`: `x - d_pinv * d * x`.
pub fn project_null(d: &DMatrix<f64>, d_pinv: &DMatrix<f64>, x: &DVector<f64>) -> DVector<f64> {
    x - d_pinv * (d * x)
}

pub fn max_asymmetry(m: &DMatrix<f64>) -> f64 {
    let n = m.nrows();
    let mut worst: f64 = 0.0;
    for i in 0..n {
        for j in (i + 1)..n {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

/// Principal square root of a symmetric PSD matrix; negative eigenvalues are clamped to 0.
pub fn sym_sqrt(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if !m.is_square() {
        return Err(shape("sym_sqrt needs a square matrix"));
    }
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let vals = eig.eigenvalues.map(|l| libm::sqrt(l.max(0.0)));
    let q = &eig.eigenvectors;
    Ok(q * DMatrix::from_diagonal(&vals) * q.transpose())
}

/// Eigenvalues of a symmetric matrix, ascending.
pub fn sym_eigenvalues(m: &DMatrix<f64>) -> DVector<f64> {
    let sym = (m + m.transpose()) * 0.5;
    let mut vals: alloc::vec::Vec<f64> = SymmetricEigen::new(sym).eigenvalues.iter().copied().collect();
    vals.sort_by(|a, b| a.total_cmp(b));
    DVector::from_vec(vals)
}

/// Column mean and unbiased covariance of the rows of `x`, plus `ridge * I`.
pub fn mean_cov(x: &DMatrix<f64>, ridge: f64) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let (n, p) = x.shape();
    if n < 2 {
        return Err(crate::Error::InsufficientData(alloc::format!(
            "need at least 2 samples for a covariance, got {n}"
        )));
    }
    let mean = x.row_mean().transpose();
    let mut centered = x.clone();
    for mut row in centered.row_iter_mut() {
        row -= mean.transpose();
    }
    let mut cov = centered.transpose() * &centered / (n as f64 - 1.0);
    for i in 0..p {
        cov[(i, i)] += ridge;
    }
    Ok((mean, cov))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pinv_of_wide_full_rank() {
        let d = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 0.0, 0.0, 1.0, -1.0]);
        let p = pseudo_inverse(&d);
        let id = &d * &p;
        assert!((id - DMatrix::identity(2, 2)).norm() < 1e-12);
        let x = DVector::from_vec(alloc::vec![0.3, -1.0, 2.0]);
        let z = project_null(&d, &p, &x);
        assert!((&d * z).norm() < 1e-12);
    }

    #[test]
    fn pinv_drops_tiny_singular_values() {
        let d = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1e-14]);
        let p = pseudo_inverse(&d);
        assert_eq!(p[(1, 1)], 0.0);
        assert_eq!(rank(&d), 1);
    }

    #[test]
    fn sqrt_squares_back() {
        let a = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let s = sym_sqrt(&a).unwrap();
        assert!((&s * &s - a).norm() < 1e-12);
    }

    #[test]
    fn covariance_of_two_points() {
        let x = DMatrix::from_row_slice(2, 1, &[1.0, 3.0]);
        let (m, c) = mean_cov(&x, 0.0).unwrap();
        assert_eq!(m[0], 2.0);
        assert_eq!(c[(0, 0)], 2.0);
    }
}
