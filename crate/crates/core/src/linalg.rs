//! Small fixed-size linear algebra shared by the two-qubit modules.
//!
//! Basis ordering is `|q0 q1>` with qubit 0 as the most significant bit, so
//! index `2*b0 + b1` addresses the bitstring `b0 b1`.

use nalgebra::{Matrix2, Matrix4, SymmetricEigen, Vector4};
use num_complex::Complex64;

pub type CMatrix2 = Matrix2<Complex64>;
pub type CMatrix4 = Matrix4<Complex64>;
pub type CVector4 = Vector4<Complex64>;

pub const ZERO: Complex64 = Complex64::new(0.0, 0.0);
pub const ONE: Complex64 = Complex64::new(1.0, 0.0);
pub const I: Complex64 = Complex64::new(0.0, 1.0);

pub fn pauli_x() -> Matrix2<f64> {
    Matrix2::new(0.0, 1.0, 1.0, 0.0)
}

pub fn pauli_z() -> Matrix2<f64> {
    Matrix2::new(1.0, 0.0, 0.0, -1.0)
}

/// Kronecker product `a ⊗ b` of two 2×2 matrices.
pub fn kron<T: nalgebra::Scalar + Copy + std::ops::Mul<Output = T>>(
    a: &Matrix2<T>,
    b: &Matrix2<T>,
) -> Matrix4<T> {
    Matrix4::from_fn(|r, c| a[(r / 2, c / 2)] * b[(r % 2, c % 2)])
}

pub fn complexify(m: &Matrix4<f64>) -> CMatrix4 {
    m.map(|x| Complex64::new(x, 0.0))
}

/// `exp(i·angle·H)` for a real symmetric `H`, via its eigendecomposition.
pub fn exp_i_symmetric(h: &Matrix4<f64>, angle: f64) -> CMatrix4 {
    let eig = SymmetricEigen::new(*h);
    let v = complexify(&eig.eigenvectors);
    let phases = CMatrix4::from_diagonal(
        &eig.eigenvalues
            .map(|lambda| Complex64::from_polar(1.0, angle * lambda)),
    );
    v * phases * v.adjoint()
}

/// Largest entrywise modulus of `a - b`.
pub fn max_abs_diff(a: &CMatrix4, b: &CMatrix4) -> f64 {
    (a - b).iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// `<v|M|v>` for a real symmetric observable.
pub fn expectation(v: &CVector4, m: &Matrix4<f64>) -> f64 {
    let mv = complexify(m) * v;
    v.dotc(&mv).re
}
