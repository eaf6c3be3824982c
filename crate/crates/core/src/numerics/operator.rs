//! Abstract linear operators and their spectral norm.

use std::fmt::Debug;
use std::ops::{Add, AddAssign, Mul, Neg, Sub, SubAssign};

use ndarray::Array2;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Real or complex field element.
pub trait Scalar:
    Copy
    + Default
    + Debug
    + PartialEq
    + Send
    + Sync
    + Add<Output = Self>
    + Sub<Output = Self>
    + Neg<Output = Self>
    + Mul<Output = Self>
    + Mul<f64, Output = Self>
    + AddAssign
    + SubAssign
{
    fn modulus(self) -> f64;
    fn modulus_sqr(self) -> f64;
    fn conj(self) -> Self;
    /// `Re(conj(self) * other)`.
    fn real_inner(self, other: Self) -> f64;
    fn sample<R: Rng>(rng: &mut R) -> Self;
}

impl Scalar for f64 {
    fn modulus(self) -> f64 {
        self.abs()
    }
    fn modulus_sqr(self) -> f64 {
        self * self
    }
    fn conj(self) -> Self {
        self
    }
    fn real_inner(self, other: Self) -> f64 {
        self * other
    }
    fn sample<R: Rng>(rng: &mut R) -> Self {
        rng.gen_range(-1.0..1.0)
    }
}

impl Scalar for Complex64 {
    fn modulus(self) -> f64 {
        self.norm()
    }
    fn modulus_sqr(self) -> f64 {
        self.norm_sqr()
    }
    fn conj(self) -> Self {
        Complex64::conj(&self)
    }
    fn real_inner(self, other: Self) -> f64 {
        self.re * other.re + self.im * other.im
    }
    fn sample<R: Rng>(rng: &mut R) -> Self {
        Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))
    }
}

pub fn norm<T: Scalar>(x: &[T]) -> f64 {
    x.iter().map(|v| v.modulus_sqr()).sum::<f64>().sqrt()
}

/// `Re <a, b>`.
pub fn real_inner<T: Scalar>(a: &[T], b: &[T]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x.real_inner(*y)).sum()
}

/// A linear map with its adjoint under the real inner product `Re <., .>`.
pub trait LinearOperator: Sync {
    type Domain: Scalar;
    type Range: Scalar;

    fn domain_len(&self) -> usize;
    fn range_len(&self) -> usize;
    fn apply(&self, x: &[Self::Domain]) -> Vec<Self::Range>;
    fn adjoint(&self, y: &[Self::Range]) -> Vec<Self::Domain>;
}

/// Dense matrix acting by multiplication.
#[derive(Debug, Clone)]
pub struct MatrixOperator<T> {
    pub matrix: Array2<T>,
}

impl<T: Scalar> MatrixOperator<T> {
    pub fn new(matrix: Array2<T>) -> Self {
        Self { matrix }
    }
}

impl<T: Scalar> LinearOperator for MatrixOperator<T> {
    type Domain = T;
    type Range = T;

    fn domain_len(&self) -> usize {
        self.matrix.ncols()
    }

    fn range_len(&self) -> usize {
        self.matrix.nrows()
    }

    fn apply(&self, x: &[T]) -> Vec<T> {
        self.matrix
            .rows()
            .into_iter()
            .map(|row| {
                let mut acc = T::default();
                for (a, b) in row.iter().zip(x) {
                    acc += *a * *b;
                }
                acc
            })
            .collect()
    }

    fn adjoint(&self, y: &[T]) -> Vec<T> {
        let mut out = vec![T::default(); self.matrix.ncols()];
        for (row, &yi) in self.matrix.rows().into_iter().zip(y) {
            for (o, a) in out.iter_mut().zip(row.iter()) {
                *o += a.conj() * yi;
            }
        }
        out
    }
}

/// Probabilistic adjoint test: `|Re<Ax, y> - Re<x, A^H y>|` for random unit
/// vectors, relative to `max(1, |Ax|, |A^H y|)`. Fails above `1e-8`.
pub fn check_adjoint<Op: LinearOperator + ?Sized>(op: &Op, seed: u64) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..2 {
        let mut x: Vec<Op::Domain> = (0..op.domain_len()).map(|_| Scalar::sample(&mut rng)).collect();
        let mut y: Vec<Op::Range> = (0..op.range_len()).map(|_| Scalar::sample(&mut rng)).collect();
        let nx = norm(&x).max(1e-300);
        let ny = norm(&y).max(1e-300);
        x.iter_mut().for_each(|v| *v = *v * (1.0 / nx));
        y.iter_mut().for_each(|v| *v = *v * (1.0 / ny));
        let ax = op.apply(&x);
        let ahy = op.adjoint(&y);
        if ax.len() != op.range_len() || ahy.len() != op.domain_len() {
            return Err(Error::DimensionMismatch(format!(
                "operator returned lengths {} / {}, declared {} / {}",
                ax.len(),
                ahy.len(),
                op.range_len(),
                op.domain_len()
            )));
        }
        let lhs = real_inner(&ax, &y);
        let rhs = real_inner(&x, &ahy);
        let scale = 1f64.max(norm(&ax)).max(norm(&ahy));
        let residual = (lhs - rhs).abs();
        if !(residual <= 1e-8 * scale) {
            return Err(Error::AdjointMismatch { residual });
        }
    }
    Ok(())
}

/// Largest singular value of `op` by power iteration on `A^H A`, times a
/// 1.01 safety factor so that `1/estimate^2` is a safe gradient step.
pub fn operator_norm<Op: LinearOperator + ?Sized>(op: &Op, iters: usize) -> Result<f64> {
    check_adjoint(op, 0x5eed)?;
    let n = op.domain_len();
    if n == 0 {
        return Ok(0.0);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0x0b5e55ed);
    let mut x: Vec<Op::Domain> = (0..n).map(|_| Scalar::sample(&mut rng)).collect();
    let nx = norm(&x);
    x.iter_mut().for_each(|v| *v = *v * (1.0 / nx));
    for _ in 0..iters {
        let y = op.adjoint(&op.apply(&x));
        let ny = norm(&y);
        if ny == 0.0 {
            return Ok(0.0);
        }
        x = y.into_iter().map(|v| v * (1.0 / ny)).collect();
    }
    Ok(norm(&op.apply(&x)) * 1.01)
}
