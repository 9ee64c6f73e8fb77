//! Thin helpers over faer for the dense kernels used throughout.

use faer::linalg::matmul::matmul;
use faer::linalg::matmul::triangular::{self, BlockStructure};
use faer::{Accum, Mat, MatRef, Side};

use crate::error::{Error, Result};

/// faer's default parallelism follows the size of whichever rayon pool runs
/// the kernel, and its partitioning (hence rounding) follows that. This pins
/// the default once to the machine's core count, so results do not depend on
/// the pool. An explicit setting made by the caller beforehand is kept.
pub(crate) fn pin_parallelism() {
    static PIN: std::sync::Once = std::sync::Once::new();
    PIN.call_once(|| {
        if faer::get_global_parallelism() == faer::Par::rayon(0) {
            let k = std::thread::available_parallelism().map_or(1, |k| k.get());
            faer::set_global_parallelism(if k == 1 { faer::Par::Seq } else { faer::Par::rayon(k) });
        }
    });
}

pub(crate) fn par() -> faer::Par {
    pin_parallelism();
    faer::get_global_parallelism()
}

/// A·v.
pub fn matvec(a: MatRef<'_, f64>, v: &[f64]) -> Vec<f64> {
    assert_eq!(a.ncols(), v.len());
    pin_parallelism();
    let col = faer::ColRef::from_slice(v);
    let out = a * col;
    out.iter().copied().collect()
}

/// Aᵀ·v.
pub fn matvec_t(a: MatRef<'_, f64>, v: &[f64]) -> Vec<f64> {
    matvec(a.transpose(), v)
}

/// A·B into a fresh matrix.
pub fn mul(a: MatRef<'_, f64>, b: MatRef<'_, f64>) -> Mat<f64> {
    let mut out = Mat::zeros(a.nrows(), b.ncols());
    matmul(out.as_mut(), Accum::Replace, a, b, 1.0, par());
    out
}

/// A·Aᵀ.
pub fn gram(a: MatRef<'_, f64>) -> Mat<f64> {
    // The product is much faster with both operands column-major in the
    // inner dimension.
    gram_cols(a.transpose().to_owned().as_ref())
}

/// BᵀB, computed on the lower triangle and mirrored, so exactly symmetric.
pub fn gram_cols(b: MatRef<'_, f64>) -> Mat<f64> {
    let n = b.ncols();
    let mut g = Mat::zeros(n, n);
    triangular::matmul(
        g.as_mut(),
        BlockStructure::TriangularLower,
        Accum::Replace,
        b.transpose(),
        BlockStructure::Rectangular,
        b,
        BlockStructure::Rectangular,
        1.0,
        par(),
    );
    for j in 0..n {
        for i in j + 1..n {
            g[(j, i)] = g[(i, j)];
        }
    }
    g
}

/// Symmetric eigendecomposition with eigenvalues in non-increasing order.
#[derive(Clone, Debug)]
pub struct SymEigen {
    pub values: Vec<f64>,
    /// Columns are the matching eigenvectors.
    pub vectors: Mat<f64>,
}

pub fn sym_eigen(a: MatRef<'_, f64>) -> Result<SymEigen> {
    pin_parallelism();
    let n = a.nrows();
    let e = a
        .self_adjoint_eigen(Side::Lower)
        .map_err(|e| Error::Linalg(format!("eigendecomposition failed: {e:?}")))?;
    let s = e.S().column_vector();
    let u = e.U();
    let values: Vec<f64> = (0..n).rev().map(|i| s[i]).collect();
    let vectors = Mat::from_fn(n, n, |i, j| u[(i, n - 1 - j)]);
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("eigenvalues".into()));
    }
    Ok(SymEigen { values, vectors })
}

pub fn sym_eigenvalues(a: MatRef<'_, f64>) -> Result<Vec<f64>> {
    pin_parallelism();
    let mut v = a
        .self_adjoint_eigenvalues(Side::Lower)
        .map_err(|e| Error::Linalg(format!("eigenvalues failed: {e:?}")))?;
    v.reverse();
    Ok(v)
}

/// Spectral norm of a symmetric matrix.
pub fn sym_op_norm(a: MatRef<'_, f64>) -> Result<f64> {
    let v = sym_eigenvalues(a)?;
    Ok(v.iter().fold(0.0f64, |m, x| m.max(x.abs())))
}

pub fn norm_sq(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn check_finite(name: &str, v: impl IntoIterator<Item = f64>) -> Result<()> {
    if v.into_iter().all(f64::is_finite) {
        Ok(())
    } else {
        Err(Error::NonFinite(name.to_string()))
    }
}

pub(crate) fn mat_values(a: MatRef<'_, f64>) -> impl Iterator<Item = f64> + '_ {
    (0..a.ncols()).flat_map(move |j| (0..a.nrows()).map(move |i| a[(i, j)]))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eigen_is_descending_and_reconstructs() {
        let a = Mat::from_fn(3, 3, |i, j| if i == j { (i + 1) as f64 } else { 0.1 });
        let e = sym_eigen(a.as_ref()).unwrap();
        assert!(e.values.windows(2).all(|w| w[0] >= w[1]));
        for i in 0..3 {
            for j in 0..3 {
                let r: f64 = (0..3)
                    .map(|k| e.vectors[(i, k)] * e.values[k] * e.vectors[(j, k)])
                    .sum();
                assert!((r - a[(i, j)]).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn matvec_matches_loops() {
        let a = Mat::from_fn(2, 3, |i, j| (i * 3 + j) as f64);
        assert_eq!(matvec(a.as_ref(), &[1.0, 0.0, -1.0]), vec![-2.0, -2.0]);
        assert_eq!(matvec_t(a.as_ref(), &[1.0, 1.0]), vec![3.0, 5.0, 7.0]);
    }
}
