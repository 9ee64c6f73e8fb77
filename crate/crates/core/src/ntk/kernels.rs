use std::f64::consts::PI;
use std::io::Write;

use faer::{Mat, MatRef};
use serde::Serialize;

use super::{preactivations, relu, relu_grad, NtkModel};
use crate::error::{Error, Result};
use crate::linalg;
use crate::spectra::Spectrum;

/// Empirical, analytic and linearized NTK Gram matrices of one input set.
#[derive(Clone, Debug)]
pub struct KernelTriple {
    pub k_emp: Mat<f64>,
    pub k_arc: Mat<f64>,
    pub k_lin: Mat<f64>,
    pub errors: KernelErrors,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct KernelErrors {
    /// ‖K_emp − K_arc‖₂.
    pub emp_arc: f64,
    /// ‖K_arc − K_lin‖₂.
    pub arc_lin: f64,
    /// ‖K_lin‖₂.
    pub lin_norm: f64,
}

/// K = ∇F∇Fᵀ, assembled as s²(HHᵀ + (GGᵀ)∘(XXᵀ)) with H = h(XΘ₀ᵀ) and
/// G = h′(XΘ₀ᵀ)·diag(u₀).
pub fn empirical_kernel(model: &NtkModel, x: MatRef<'_, f64>) -> Result<Mat<f64>> {
    model.check_rows(x)?;
    let a = preactivations(model, x);
    Ok(kernel_from_preacts(model, a.as_ref(), x))
}

pub(crate) fn kernel_from_preacts(
    model: &NtkModel,
    a: MatRef<'_, f64>,
    x: MatRef<'_, f64>,
) -> Mat<f64> {
    let (n, m) = (a.nrows(), a.ncols());
    let h = Mat::from_fn(n, m, |i, j| relu(a[(i, j)]));
    let u = model.u0();
    let g = Mat::from_fn(n, m, |i, j| relu_grad(a[(i, j)]) * u[j]);
    let hh = linalg::gram(h.as_ref());
    let gg = linalg::gram(g.as_ref());
    let xx = linalg::gram(x);
    let s2 = model.scale() * model.scale();
    Mat::from_fn(n, n, |i, k| s2 * (hh[(i, k)] + gg[(i, k)] * xx[(i, k)]))
}

/// Infinite-width limit of the NTK Gram matrix:
/// (xᵢᵀxⱼ/(πp))·arccos(−ρ) + (‖xᵢ‖‖xⱼ‖/(2πp))·√(1 − ρ²), ρ the cosine.
pub fn arccos_kernel(x: MatRef<'_, f64>) -> Result<Mat<f64>> {
    linalg::check_finite("inputs", linalg::mat_values(x))?;
    let p = x.ncols() as f64;
    let xx = linalg::gram(x);
    let n = x.nrows();
    let norms: Vec<f64> = (0..n).map(|i| xx[(i, i)].sqrt()).collect();
    if let Some(i) = norms.iter().position(|&v| v == 0.0) {
        return Err(Error::invalid(
            "X",
            format!("row {i} has zero norm; the cosine is undefined"),
        ));
    }
    Ok(Mat::from_fn(n, n, |i, j| {
        let ip = xx[(i, j)];
        let nn = norms[i] * norms[j];
        let rho = (ip / nn).clamp(-1.0, 1.0);
        ip / (PI * p) * (-rho).acos() + nn / (2.0 * PI * p) * (1.0 - rho * rho).sqrt()
    }))
}

/// K̃ = (l/p)(1/(2π) + 3tr(Σ²)/(4πl²))11ᵀ + XXᵀ/(2p) + (l/p)(1/2 − 1/(2π))I
/// with l = tr(Σ).
pub fn linearized_kernel(x: MatRef<'_, f64>, spec: &Spectrum) -> Result<Mat<f64>> {
    linalg::check_finite("inputs", linalg::mat_values(x))?;
    let p = x.ncols() as f64;
    let l = spec.trace();
    let tr2 = spec.trace_sq();
    let ones = l / p * (1.0 / (2.0 * PI) + 3.0 * tr2 / (4.0 * PI * l * l));
    let ridge = l / p * (0.5 - 1.0 / (2.0 * PI));
    let xx = linalg::gram(x);
    let n = x.nrows();
    Ok(Mat::from_fn(n, n, |i, j| {
        let d = if i == j { ridge } else { 0.0 };
        ones + xx[(i, j)] / (2.0 * p) + d
    }))
}

fn diff(a: &Mat<f64>, b: &Mat<f64>) -> Mat<f64> {
    Mat::from_fn(a.nrows(), a.ncols(), |i, j| a[(i, j)] - b[(i, j)])
}

pub fn kernels(model: &NtkModel, x: MatRef<'_, f64>, spec: &Spectrum) -> Result<KernelTriple> {
    let k_emp = empirical_kernel(model, x)?;
    let k_arc = arccos_kernel(x)?;
    let k_lin = linearized_kernel(x, spec)?;
    let errors = KernelErrors {
        emp_arc: linalg::sym_op_norm(diff(&k_emp, &k_arc).as_ref())?,
        arc_lin: linalg::sym_op_norm(diff(&k_arc, &k_lin).as_ref())?,
        lin_norm: linalg::sym_op_norm(k_lin.as_ref())?,
    };
    Ok(KernelTriple {
        k_emp,
        k_arc,
        k_lin,
        errors,
    })
}

/// Writes a matrix as headerless CSV, one row per line.
pub fn kernel_to_csv<W: Write>(k: MatRef<'_, f64>, out: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(out);
    for i in 0..k.nrows() {
        let row: Vec<String> = (0..k.ncols()).map(|j| format!("{:e}", k[(i, j)])).collect();
        w.write_record(&row)
            .map_err(|e| Error::Parse(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}
