//! Dense linear-algebra helpers shared by the certificate and design code.
//!
//! All norms are Euclidean; the induced matrix norm is the largest singular
//! value. Eigenvalue and SVD iterations run at machine precision, which is
//! well inside the 1e-10 tolerance the certificates are quoted at.

use nalgebra::{DMatrix, DVector, Schur, SVD};

pub type Mat = DMatrix<f64>;
pub type Vector = DVector<f64>;

const MAX_ITER: usize = 10_000;

/// Largest singular value (induced 2-norm).
pub fn induced_norm(m: &Mat) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    singular_values(m).max()
}

pub fn singular_values(m: &Mat) -> Vector {
    SVD::try_new(m.clone(), false, false, f64::EPSILON, MAX_ITER)
        .map(|svd| svd.singular_values)
        .unwrap_or_else(|| m.singular_values())
}

/// Right singular vectors of `m` as the columns of the returned matrix.
pub fn right_singular_vectors(m: &Mat) -> Mat {
    let svd = SVD::try_new(m.clone(), false, true, f64::EPSILON, MAX_ITER)
        .unwrap_or_else(|| SVD::new(m.clone(), false, true));
    svd.v_t
        .expect("SVD was asked for v_t")
        .transpose()
}

/// Spectral radius of a general (non-symmetric) square matrix.
pub fn spectral_radius(m: &Mat) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    match Schur::try_new(m.clone(), f64::EPSILON, MAX_ITER) {
        Some(schur) => schur
            .complex_eigenvalues()
            .iter()
            .map(|z| z.norm())
            .fold(0.0, f64::max),
        None => gelfand_estimate(m),
    }
}

// rho(M) = lim ||M^k||^(1/k); repeated squaring with renormalisation.
fn gelfand_estimate(m: &Mat) -> f64 {
    let mut power = m.clone();
    let mut log_scale = 0.0;
    let mut k = 1.0_f64;
    for _ in 0..40 {
        let n = induced_norm(&power);
        if n == 0.0 {
            return 0.0;
        }
        power /= n;
        log_scale += n.ln() / k;
        power = &power * &power;
        k *= 2.0;
    }
    (log_scale + induced_norm(&power).ln() / k).exp()
}

pub fn identity(n: usize) -> Mat {
    Mat::identity(n, n)
}

pub fn relative_diff(a: &Vector, b: &Vector) -> f64 {
    let scale = a.norm().max(b.norm());
    if scale == 0.0 {
        0.0
    } else {
        (a - b).norm() / scale
    }
}

pub fn from_rows(rows: &[Vec<f64>]) -> Option<Mat> {
    let n_rows = rows.len();
    let n_cols = rows.first().map_or(0, |r| r.len());
    if rows.iter().any(|r| r.len() != n_cols) {
        return None;
    }
    Some(Mat::from_fn(n_rows, n_cols, |i, j| rows[i][j]))
}

pub fn to_rows(m: &Mat) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| m.row(i).iter().copied().collect())
        .collect()
}
