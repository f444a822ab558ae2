//! Small dense complex linear-algebra helpers shared by the solver modules.
//!
//! Matrix products go through `ndarray`; factorizations (Cholesky, Hermitian
//! eigendecomposition) are delegated to `nalgebra`.

use nalgebra::DMatrix;
use ndarray::{Array2, ArrayView2};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

pub type C64 = Complex64;
pub type CMat = Array2<C64>;

pub const ZERO: C64 = C64::new(0.0, 0.0);

/// Conjugate transpose.
pub fn herm(a: &ArrayView2<C64>) -> CMat {
    a.t().mapv(|z| z.conj())
}

pub fn frob_sq(a: &ArrayView2<C64>) -> f64 {
    a.iter().map(|z| z.norm_sqr()).sum()
}

/// Real inner product `Re tr(A^H B)`.
pub fn re_inner(a: &ArrayView2<C64>, b: &ArrayView2<C64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x.re * y.re + x.im * y.im).sum()
}

pub fn l1_norm(a: &ArrayView2<C64>) -> f64 {
    a.iter().map(|z| z.norm()).sum()
}

/// i.i.d. circularly-symmetric complex Gaussian entries with variance `var`.
pub fn crandn<R: Rng + ?Sized>(rows: usize, cols: usize, var: f64, rng: &mut R) -> CMat {
    let s = (var / 2.0).sqrt();
    Array2::from_shape_simple_fn((rows, cols), || {
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        C64::new(s * re, s * im)
    })
}

pub fn to_na(a: &ArrayView2<C64>) -> DMatrix<C64> {
    let (r, c) = a.dim();
    DMatrix::from_fn(r, c, |i, j| a[[i, j]])
}

pub fn from_na(m: &DMatrix<C64>) -> CMat {
    Array2::from_shape_fn((m.nrows(), m.ncols()), |(i, j)| m[(i, j)])
}

/// Eigen-decomposition of a Hermitian matrix. Eigenvalues are returned in
/// ascending order with matching eigenvector columns.
pub fn hermitian_eigen(a: &ArrayView2<C64>) -> Result<(Vec<f64>, CMat)> {
    let (r, c) = a.dim();
    if r != c {
        return Err(Error::Dimension(format!("eigen of {r}x{c} matrix")));
    }
    let eig = nalgebra::SymmetricEigen::new(to_na(a));
    let mut order: Vec<usize> = (0..r).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let vals = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vecs = Array2::from_shape_fn((r, r), |(i, k)| eig.eigenvectors[(i, order[k])]);
    Ok((vals, vecs))
}

/// Solves `A X = B` for Hermitian positive-definite `A`.
pub fn solve_hpd(a: &ArrayView2<C64>, b: &ArrayView2<C64>) -> Result<CMat> {
    if a.nrows() != a.ncols() || a.nrows() != b.nrows() {
        return Err(Error::Dimension(format!(
            "solve {:?} against {:?}",
            a.dim(),
            b.dim()
        )));
    }
    let chol = nalgebra::Cholesky::new(to_na(a))
        .ok_or_else(|| Error::Linalg("matrix is not positive definite".into()))?;
    Ok(from_na(&chol.solve(&to_na(b))))
}

/// Identity matrix scaled by `s`.
pub fn scaled_eye(n: usize, s: f64) -> CMat {
    Array2::from_shape_fn((n, n), |(i, j)| if i == j { C64::new(s, 0.0) } else { ZERO })
}

/// Largest entrywise deviation between two matrices.
pub fn max_abs_diff(a: &ArrayView2<C64>, b: &ArrayView2<C64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn eigen_reconstructs_hermitian() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = crandn(5, 4, 1.0, &mut rng);
        let g = herm(&x.view()).dot(&x);
        let (vals, vecs) = hermitian_eigen(&g.view()).unwrap();
        assert!(vals.windows(2).all(|w| w[0] <= w[1]));
        let d = Array2::from_shape_fn((4, 4), |(i, j)| {
            if i == j {
                C64::new(vals[i], 0.0)
            } else {
                ZERO
            }
        });
        let back = vecs.dot(&d).dot(&herm(&vecs.view()));
        assert!(max_abs_diff(&back.view(), &g.view()) < 1e-10);
    }

    #[test]
    fn hpd_solve_matches_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = crandn(6, 3, 1.0, &mut rng);
        let a = herm(&x.view()).dot(&x) + scaled_eye(3, 0.5);
        let want = crandn(3, 2, 1.0, &mut rng);
        let b = a.dot(&want);
        let got = solve_hpd(&a.view(), &b.view()).unwrap();
        assert!(max_abs_diff(&got.view(), &want.view()) < 1e-10);
    }

    #[test]
    fn crandn_variance() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = crandn(200, 200, 2.0, &mut rng);
        let v = frob_sq(&x.view()) / 40_000.0;
        assert!((v - 2.0).abs() < 0.05, "{v}");
    }
}
