//! Dense complex matrix helpers and column-stacking vectorization.
//!
//! Density matrices are vectorized by stacking columns, so that
//! `vec(A X B) = (Bᵀ ⊗ A) vec(X)`; element `ρ[(i, j)]` lives at index
//! `i + d * j`. nalgebra stores matrices column-major, which makes the
//! vectorization a plain reinterpretation of the storage.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

pub type CMatrix = DMatrix<Complex64>;
pub type CVector = DVector<Complex64>;

pub const ZERO: Complex64 = Complex64::new(0.0, 0.0);
pub const ONE: Complex64 = Complex64::new(1.0, 0.0);
pub const I: Complex64 = Complex64::new(0.0, 1.0);

pub fn real(x: f64) -> Complex64 {
    Complex64::new(x, 0.0)
}

pub fn vectorize(m: &CMatrix) -> CVector {
    CVector::from_column_slice(m.as_slice())
}

pub fn unvectorize(v: &CVector, dim: usize) -> CMatrix {
    CMatrix::from_column_slice(dim, dim, v.as_slice())
}

/// Superoperator of `X ↦ A X`.
pub fn left_mul(a: &CMatrix) -> CMatrix {
    CMatrix::identity(a.nrows(), a.nrows()).kronecker(a)
}

/// Superoperator of `X ↦ X B`.
pub fn right_mul(b: &CMatrix) -> CMatrix {
    b.transpose().kronecker(&CMatrix::identity(b.nrows(), b.nrows()))
}

/// Superoperator of `X ↦ C X C†`.
pub fn sandwich(c: &CMatrix) -> CMatrix {
    c.map(|z| z.conj()).kronecker(c)
}

/// Row weights `w` with `Tr(A X) = Σ_k w[k] vec(X)[k]`.
pub fn trace_weights(a: &CMatrix) -> Vec<Complex64> {
    a.transpose().as_slice().to_vec()
}

/// `Tr(A X)` evaluated directly on a vectorized `X`.
pub fn trace_with(weights: &[Complex64], x: &[Complex64]) -> Complex64 {
    weights.iter().zip(x).map(|(w, v)| w * v).sum()
}

pub fn trace_of_vectorized(x: &[Complex64], dim: usize) -> Complex64 {
    (0..dim).map(|i| x[i * (dim + 1)]).sum()
}

pub fn projector(dim: usize, index: usize) -> CMatrix {
    let mut p = CMatrix::zeros(dim, dim);
    p[(index, index)] = ONE;
    p
}

pub fn max_abs(m: &CMatrix) -> f64 {
    m.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

pub fn is_hermitian(m: &CMatrix, tol: f64) -> bool {
    m.is_square() && max_abs(&(m - m.adjoint())) <= tol
}

/// Dense `y = A x` for small matrices without allocation.
pub(crate) fn matvec_into(a: &CMatrix, x: &[Complex64], y: &mut [Complex64]) {
    let n = a.nrows();
    y.iter_mut().for_each(|v| *v = ZERO);
    let data = a.as_slice();
    for (j, xj) in x.iter().enumerate() {
        if *xj == ZERO {
            continue;
        }
        let col = &data[j * n..(j + 1) * n];
        for (yi, aij) in y.iter_mut().zip(col) {
            *yi += aij * xj;
        }
    }
}

/// `exp(A)` by scaling and squaring with a Padé approximant.
pub fn expm(a: &CMatrix) -> CMatrix {
    a.exp()
}

/// Matrix infinity norm (maximum absolute row sum).
pub fn inf_norm(m: &CMatrix) -> f64 {
    m.row_iter()
        .map(|r| r.iter().map(|z| z.norm()).sum::<f64>())
        .fold(0.0, f64::max)
}
