//! Small dense complex-matrix helpers shared by every module.

use crate::{CMatrix, CVector, Complex64};

/// Shorthand complex constructor.
#[inline]
pub fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

/// Real number as a complex scalar.
#[inline]
pub fn cr(re: f64) -> Complex64 {
    Complex64::new(re, 0.0)
}

/// d x d identity.
pub fn identity(d: usize) -> CMatrix {
    CMatrix::identity(d, d)
}

/// Conjugate transpose.
pub fn dagger(m: &CMatrix) -> CMatrix {
    m.adjoint()
}

/// `[a, b] = ab - ba`
pub fn commutator(a: &CMatrix, b: &CMatrix) -> CMatrix {
    a * b - b * a
}

/// `{a, b} = ab + ba`
pub fn anticommutator(a: &CMatrix, b: &CMatrix) -> CMatrix {
    a * b + b * a
}

/// Largest entry-wise deviation from Hermiticity, `max |m - m†|`.
pub fn hermitian_defect(m: &CMatrix) -> f64 {
    let diff = m - m.adjoint();
    diff.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// Largest entry modulus.
pub fn max_abs(m: &CMatrix) -> f64 {
    m.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// Eigenvalues of a Hermitian matrix, ascending. The input is symmetrized
/// first so that round-off level defects do not disturb the decomposition.
pub fn hermitian_eigenvalues(m: &CMatrix) -> Vec<f64> {
    let sym = (m + m.adjoint()).scale(0.5);
    let eig = nalgebra::SymmetricEigen::new(sym);
    let mut vals: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
    vals
}

/// Smallest eigenvalue of a Hermitian matrix.
pub fn min_eigenvalue(m: &CMatrix) -> f64 {
    hermitian_eigenvalues(m)[0]
}

/// Determinants of the leading principal minors (1x1, 2x2, ..., full).
pub fn leading_minors(m: &CMatrix) -> Vec<Complex64> {
    (1..=m.nrows())
        .map(|k| m.view((0, 0), (k, k)).into_owned().lu().determinant())
        .collect()
}

/// Trace.
pub fn trace(m: &CMatrix) -> Complex64 {
    m.diagonal().iter().sum()
}

/// Pauli x.
pub fn pauli_x() -> CMatrix {
    CMatrix::from_row_slice(2, 2, &[cr(0.0), cr(1.0), cr(1.0), cr(0.0)])
}

/// Pauli y.
pub fn pauli_y() -> CMatrix {
    CMatrix::from_row_slice(2, 2, &[cr(0.0), c(0.0, -1.0), c(0.0, 1.0), cr(0.0)])
}

/// Pauli z.
pub fn pauli_z() -> CMatrix {
    CMatrix::from_row_slice(2, 2, &[cr(1.0), cr(0.0), cr(0.0), cr(-1.0)])
}

/// Lowering operator `|1><0|` in the two-level basis `{|+>, |->}`.
pub fn sigma_minus() -> CMatrix {
    CMatrix::from_row_slice(2, 2, &[cr(0.0), cr(0.0), cr(1.0), cr(0.0)])
}

/// Column-major vectorization of a matrix.
pub fn vectorize(m: &CMatrix) -> CVector {
    CVector::from_column_slice(m.as_slice())
}

/// Inverse of [`vectorize`] for a d x d matrix.
pub fn unvectorize(v: &CVector, d: usize) -> CMatrix {
    CMatrix::from_column_slice(d, d, v.as_slice())
}

/// Superoperator of `rho -> A rho B` acting on column-major vec(rho):
/// `B^T (x) A`.
pub fn sandwich_superop(a: &CMatrix, b: &CMatrix) -> CMatrix {
    b.transpose().kronecker(a)
}

/// Superoperator of `rho -> A rho`.
pub fn left_superop(a: &CMatrix) -> CMatrix {
    identity(a.nrows()).kronecker(a)
}

/// Superoperator of `rho -> rho B`.
pub fn right_superop(b: &CMatrix) -> CMatrix {
    b.transpose().kronecker(&identity(b.nrows()))
}

/// Superoperator of the Lindblad dissipator
/// `rho -> V rho V† - (1/2){V†V, rho}`.
pub fn lindblad_superop(v: &CMatrix) -> CMatrix {
    let vdv = v.adjoint() * v;
    sandwich_superop(v, &v.adjoint())
        - (left_superop(&vdv) + right_superop(&vdv)).scale(0.5)
}

/// Superoperator of `rho -> -i[H, rho]`.
pub fn hamiltonian_superop(h: &CMatrix) -> CMatrix {
    (left_superop(h) - right_superop(h)) * c(0.0, -1.0)
}
