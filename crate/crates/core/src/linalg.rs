//! Dense complex linear-algebra kernels shared by the solvers.
//!
//! Everything here works on `DMatrix<Complex<f64>>`. Hermitian
//! eigendecompositions and SVDs are delegated to `nalgebra`; the helpers add
//! the conventions the solvers rely on (descending eigenvalue order,
//! Cholesky-based log-determinants of `I + PSD` matrices, matrix powers of
//! Hermitian positive definite matrices).

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};
use num_complex::Complex;

use crate::error::{Error, Result};

pub type C64 = Complex<f64>;
pub type CMat = DMatrix<C64>;
pub type CVec = DVector<C64>;

pub const ZERO: C64 = C64 { re: 0.0, im: 0.0 };
pub const ONE: C64 = C64 { re: 1.0, im: 0.0 };

/// Largest absolute entry of `m - m^H`.
pub fn hermitian_drift(m: &CMat) -> f64 {
    let n = m.nrows();
    let mut drift: f64 = 0.0;
    for i in 0..n {
        for j in i..n {
            drift = drift.max((m[(i, j)] - m[(j, i)].conj()).norm());
        }
    }
    drift
}

/// `(m + m^H) / 2`.
pub fn hermitian_part(m: &CMat) -> CMat {
    (m + m.adjoint()).scale(0.5)
}

/// Frobenius inner product `Re tr(a^H b)`.
pub fn fro_inner(a: &CMat, b: &CMat) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x.conj() * y).re).sum()
}

pub fn fro_norm_sq(a: &CMat) -> f64 {
    a.iter().map(|x| x.norm_sqr()).sum()
}

/// Real part of the trace.
pub fn trace_re(a: &CMat) -> f64 {
    a.diagonal().iter().map(|x| x.re).sum()
}

/// Eigendecomposition of a Hermitian matrix with eigenvalues sorted in
/// descending order.
#[derive(Debug, Clone)]
pub struct HermitianEigen {
    pub values: Vec<f64>,
    pub vectors: CMat,
}

impl HermitianEigen {
    /// Decomposes the Hermitian part of `m`.
    pub fn new(m: &CMat) -> Self {
        let n = m.nrows();
        if n == 0 {
            return Self {
                values: Vec::new(),
                vectors: CMat::zeros(0, 0),
            };
        }
        let eig = SymmetricEigen::new(hermitian_part(m));
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
        let vectors = CMat::from_fn(n, n, |r, c| eig.eigenvectors[(r, order[c])]);
        Self { values, vectors }
    }

    /// `V diag(f(λ)) V^H`.
    pub fn reassemble_with(&self, f: impl Fn(f64) -> f64) -> CMat {
        let mapped: Vec<f64> = self.values.iter().map(|&v| f(v)).collect();
        reassemble(&self.vectors, &mapped)
    }

    pub fn max(&self) -> f64 {
        self.values.first().copied().unwrap_or(0.0)
    }

    pub fn min(&self) -> f64 {
        self.values.last().copied().unwrap_or(0.0)
    }
}

/// `V diag(values) V^H`, symmetrized.
pub fn reassemble(vectors: &CMat, values: &[f64]) -> CMat {
    let n = vectors.nrows();
    let mut scaled = vectors.clone();
    for (c, &v) in values.iter().enumerate() {
        scaled.column_mut(c).scale_mut(v);
    }
    let out = &scaled * vectors.adjoint();
    debug_assert_eq!(out.nrows(), n);
    hermitian_part(&out)
}

/// Largest eigenvalue of a Hermitian matrix.
pub fn lambda_max(m: &CMat) -> f64 {
    HermitianEigen::new(m).max()
}

/// Natural log-determinant of a Hermitian positive definite matrix.
pub fn ln_det_hpd(m: &CMat) -> Result<f64> {
    if m.nrows() == 0 {
        return Ok(0.0);
    }
    match Cholesky::new(hermitian_part(m)) {
        Some(chol) if positive_diagonal(&chol) => {
            Ok(2.0 * chol.l_dirty().diagonal().iter().map(|d| d.re.ln()).sum::<f64>())
        }
        _ => Err(Error::NotPsd(HermitianEigen::new(m).min())),
    }
}

/// Complex Cholesky takes complex square roots of negative pivots instead of
/// failing, so definiteness is read off the factor's diagonal.
fn positive_diagonal(chol: &Cholesky<C64, nalgebra::Dyn>) -> bool {
    chol.l_dirty()
        .diagonal()
        .iter()
        .all(|d| d.re > 0.0 && d.im.abs() <= 1e-12 * d.re)
}

/// Inverse of a Hermitian positive definite matrix.
pub fn inverse_hpd(m: &CMat) -> Result<CMat> {
    if m.nrows() == 0 {
        return Ok(CMat::zeros(0, 0));
    }
    match Cholesky::new(hermitian_part(m)) {
        Some(chol) if positive_diagonal(&chol) => Ok(hermitian_part(&chol.inverse())),
        _ => Err(Error::NotPsd(HermitianEigen::new(m).min())),
    }
}

/// `m^p` for a Hermitian positive definite `m`, through its eigendecomposition.
pub fn hpd_power(m: &CMat, p: f64) -> Result<CMat> {
    let eig = HermitianEigen::new(m);
    if eig.values.iter().any(|&v| v <= 0.0) {
        return Err(Error::NotPsd(eig.min()));
    }
    Ok(eig.reassemble_with(|v| v.powf(p)))
}

pub fn identity(n: usize) -> CMat {
    CMat::identity(n, n)
}

/// Converts a real vector into a complex one.
pub fn complexify(v: &DVector<f64>) -> CVec {
    v.map(|x| C64::new(x, 0.0))
}
