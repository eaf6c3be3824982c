//! Numerical kernels: FFT, Hermitian solves, SVD and operator norms.

pub mod fft;
pub mod linalg;
pub mod operator;
pub mod svd;

pub use fft::{fft, fft_real};
pub use linalg::{hermitian_eigenvalues, solve_hermitian, CMatrix};
pub use operator::{check_adjoint, operator_norm, LinearOperator, MatrixOperator, Scalar};
pub use svd::{svd, SvdResult};
