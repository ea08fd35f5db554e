//! Dense complex linear algebra for the two-spin simulator: 4×4 operators
//! and 16×16 superoperators, plus the bounded simplex search shared by the
//! pulse-design code.

mod eigen;
mod expm;
mod mat;
mod simplex;

pub use eigen::{exp_from_eigen, hermitian_eigen, mat_exp_hermitian, HermitianEigen, HERMITIAN_TOL};
pub use expm::{apply_super, c, expm, left_action, mat_pow, right_action};
pub use mat::{commutator, frobenius_inner, kron, matmul_into, CMat};
pub use simplex::{minimize_bounded, reflect_into, SimplexOptions, SimplexResult};
pub use num_complex::Complex64 as C64;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum NumError {
    #[error("matrix is not Hermitian (relative deviation {deviation:.3e})")]
    NotHermitian { deviation: f64 },
    #[error("dimension mismatch: {left} vs {right}")]
    DimMismatch { left: usize, right: usize },
}

/// Pauli matrices divided by two.
pub fn half_pauli() -> [CMat; 3] {
    let z = c(0.0, 0.0);
    let h = c(0.5, 0.0);
    [
        CMat::from_vec(vec![z, h, h, z]),
        CMat::from_vec(vec![z, c(0.0, -0.5), c(0.0, 0.5), z]),
        CMat::from_vec(vec![h, z, z, -h]),
    ]
}
