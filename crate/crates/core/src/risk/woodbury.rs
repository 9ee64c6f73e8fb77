use faer::prelude::Solve;
use faer::{Mat, MatRef, Side};

use crate::error::{Error, Result};
use crate::linalg;
use crate::spectra::Spectrum;

/// Whitened columns zᵢ = Xvᵢ/√λᵢ of a design (V = I) and A = XXᵀ.
///
/// This is a validation path: the leave-one-out form of the variance term
/// is computed with one Cholesky solve per coordinate.
pub struct EigenbasisCache {
    z: Mat<f64>,
    lam: Vec<f64>,
    a: Mat<f64>,
}

fn shifted_llt(a: MatRef<'_, f64>, shift: f64) -> Result<faer::linalg::solvers::Llt<f64>> {
    let mut m = a.to_owned();
    for i in 0..m.nrows() {
        m[(i, i)] += shift;
    }
    m.llt(Side::Lower)
        .map_err(|e| Error::Linalg(format!("Cholesky failed: {e:?}")))
}

impl EigenbasisCache {
    pub fn new(x: MatRef<'_, f64>, spec: &Spectrum) -> Result<Self> {
        if x.ncols() != spec.truncation_dim() {
            return Err(Error::DimensionMismatch(format!(
                "design has {} columns but the spectrum has dimension {}",
                x.ncols(),
                spec.truncation_dim()
            )));
        }
        let lam = spec.eigenvalues().to_vec();
        let z = Mat::from_fn(x.nrows(), x.ncols(), |i, j| x[(i, j)] / lam[j].sqrt());
        Ok(EigenbasisCache {
            z,
            lam,
            a: linalg::gram(x),
        })
    }

    pub fn z(&self) -> MatRef<'_, f64> {
        self.z.as_ref()
    }

    pub fn gram(&self) -> MatRef<'_, f64> {
        self.a.as_ref()
    }

    /// Σᵢ λᵢzᵢzᵢᵀ.
    pub fn reconstruct_gram(&self) -> Mat<f64> {
        let n = self.z.nrows();
        Mat::from_fn(n, n, |r, c| {
            (0..self.lam.len())
                .map(|j| self.lam[j] * self.z[(r, j)] * self.z[(c, j)])
                .sum()
        })
    }

    /// Per-index pairs (variance summand, norm-variance summand):
    /// λᵢ²zᵢᵀ(A₋ᵢ+nλI)⁻²zᵢ / (1+λᵢzᵢᵀ(A₋ᵢ+nλI)⁻¹zᵢ)² and the same with λᵢ.
    pub fn leave_one_out_terms(&self, lambda: f64) -> Result<Vec<(f64, f64)>> {
        let n = self.z.nrows();
        let shift = n as f64 * lambda;
        (0..self.lam.len())
            .map(|i| {
                let li = self.lam[i];
                let mut a_minus = self.a.clone();
                for r in 0..n {
                    for c in 0..n {
                        a_minus[(r, c)] -= li * self.z[(r, i)] * self.z[(c, i)];
                    }
                }
                let llt = shifted_llt(a_minus.as_ref(), shift)?;
                let mut u = Mat::from_fn(n, 1, |r, _| self.z[(r, i)]);
                llt.solve_in_place(u.as_mut());
                let quad: f64 = (0..n).map(|r| self.z[(r, i)] * u[(r, 0)]).sum();
                let sq: f64 = (0..n).map(|r| u[(r, 0)] * u[(r, 0)]).sum();
                let den = (1.0 + li * quad).powi(2);
                Ok((li * li * sq / den, li * sq / den))
            })
            .collect()
    }

    /// Direct (tr{XΣXᵀ(A+nλI)⁻²}, tr{A(A+nλI)⁻²}) by Cholesky inversion.
    pub fn direct_traces(&self, lambda: f64) -> Result<(f64, f64)> {
        let n = self.z.nrows();
        let llt = shifted_llt(self.a.as_ref(), n as f64 * lambda)?;
        let mut inv = Mat::<f64>::identity(n, n);
        llt.solve_in_place(inv.as_mut());
        // XΣXᵀ = Σᵢ λᵢ² zᵢzᵢᵀ.
        let zl = Mat::from_fn(n, self.lam.len(), |r, j| self.lam[j] * self.z[(r, j)]);
        let t = linalg::gram(zl.as_ref());
        let inv2 = linalg::mul(inv.as_ref(), inv.as_ref());
        let tr = |m: &Mat<f64>| -> f64 {
            (0..n)
                .map(|r| (0..n).map(|c| m[(r, c)] * inv2[(c, r)]).sum::<f64>())
                .sum()
        };
        Ok((tr(&t), tr(&self.a)))
    }
}
