//! Dense Hermitian linear algebra: Cholesky solves and a Jacobi eigensolver.

use ndarray::Array2;
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type CMatrix = Array2<Complex64>;

/// Largest deviation `|A[i,j] - conj(A[j,i])|`, relative to the largest entry.
pub fn hermitian_defect(a: &CMatrix) -> f64 {
    let n = a.nrows();
    let scale = a.iter().map(|v| v.norm()).fold(0.0, f64::max).max(1e-300);
    let mut worst: f64 = 0.0;
    for i in 0..n {
        for j in i..n {
            worst = worst.max((a[[i, j]] - a[[j, i]].conj()).norm());
        }
    }
    worst / scale
}

/// Solves `(A + loading * I) x = b` for Hermitian positive-definite `A` by
/// Cholesky factorization.
pub fn solve_hermitian(a: &CMatrix, b: &[Complex64], loading: f64) -> Result<Vec<Complex64>> {
    let n = a.nrows();
    if a.ncols() != n || b.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "solve_hermitian: matrix {}x{}, rhs {}",
            a.nrows(),
            a.ncols(),
            b.len()
        )));
    }
    if !(loading >= 0.0) {
        return Err(Error::InvalidArgument(format!("loading must be nonnegative, got {loading}")));
    }
    if hermitian_defect(a) > 1e-10 {
        return Err(Error::InvalidArgument("matrix is not Hermitian".into()));
    }
    let l = cholesky(a, loading)?;
    Ok(cholesky_solve(&l, b))
}

/// Lower-triangular `L` with `L L^H = A + loading I`.
pub fn cholesky(a: &CMatrix, loading: f64) -> Result<CMatrix> {
    let n = a.nrows();
    let mut l = CMatrix::zeros((n, n));
    for j in 0..n {
        let mut d = a[[j, j]].re + loading;
        for k in 0..j {
            d -= l[[j, k]].norm_sqr();
        }
        if !(d > 0.0) {
            return Err(Error::SingularMatrix { row: j, pivot: d });
        }
        let djj = d.sqrt();
        l[[j, j]] = Complex64::new(djj, 0.0);
        for i in j + 1..n {
            let mut s = a[[i, j]];
            for k in 0..j {
                s -= l[[i, k]] * l[[j, k]].conj();
            }
            l[[i, j]] = s / djj;
        }
    }
    Ok(l)
}

/// Forward then backward substitution with a Cholesky factor.
pub fn cholesky_solve(l: &CMatrix, b: &[Complex64]) -> Vec<Complex64> {
    let n = l.nrows();
    let mut y = b.to_vec();
    for i in 0..n {
        let mut s = y[i];
        for k in 0..i {
            s -= l[[i, k]] * y[k];
        }
        y[i] = s / l[[i, i]].re;
    }
    for i in (0..n).rev() {
        let mut s = y[i];
        for k in i + 1..n {
            s -= l[[k, i]].conj() * y[k];
        }
        y[i] = s / l[[i, i]].re;
    }
    y
}

/// Eigenvalues of a Hermitian matrix in ascending order, by cyclic two-sided
/// Jacobi rotations.
pub fn hermitian_eigenvalues(a: &CMatrix) -> Result<Vec<f64>> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(Error::DimensionMismatch(format!("{}x{} is not square", a.nrows(), a.ncols())));
    }
    let mut m = a.clone();
    let frob2: f64 = m.iter().map(|v| v.norm_sqr()).sum();
    const MAX_SWEEPS: usize = 100;
    let mut converged = n < 2;
    for _ in 0..MAX_SWEEPS {
        if converged {
            break;
        }
        let mut off = 0.0;
        for p in 0..n {
            for q in p + 1..n {
                off += m[[p, q]].norm_sqr();
            }
        }
        if off <= 1e-30 * frob2 || off == 0.0 {
            converged = true;
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = m[[p, q]];
                let g = apq.norm();
                if g <= 1e-300 {
                    continue;
                }
                // make the (p, q) entry real and positive
                let phase = apq / g;
                for k in 0..n {
                    m[[k, q]] *= phase.conj();
                }
                for k in 0..n {
                    m[[q, k]] *= phase;
                }
                let app = m[[p, p]].re;
                let aqq = m[[q, q]].re;
                let theta = (aqq - app) / (2.0 * g);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let kp = m[[k, p]];
                    let kq = m[[k, q]];
                    m[[k, p]] = kp * c - kq * s;
                    m[[k, q]] = kp * s + kq * c;
                }
                for k in 0..n {
                    let pk = m[[p, k]];
                    let qk = m[[q, k]];
                    m[[p, k]] = pk * c - qk * s;
                    m[[q, k]] = pk * s + qk * c;
                }
            }
        }
    }
    if !converged {
        return Err(Error::NoConvergence { sweeps: MAX_SWEEPS });
    }
    let mut eig: Vec<f64> = (0..n).map(|i| m[[i, i]].re).collect();
    eig.sort_by(|a, b| a.total_cmp(b));
    Ok(eig)
}

/// `A^H`.
pub fn adjoint(a: &CMatrix) -> CMatrix {
    a.t().mapv(|v| v.conj())
}

/// `A B` for complex matrices.
pub fn matmul(a: &CMatrix, b: &CMatrix) -> CMatrix {
    a.dot(b)
}

pub fn frobenius_norm(a: &CMatrix) -> f64 {
    a.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64) -> Complex64 {
        Complex64::new(re, 0.0)
    }

    /// Gaussian elimination with full pivoting; independent of the Cholesky path.
    fn gauss_full_pivot(a: &CMatrix, b: &[Complex64]) -> Vec<Complex64> {
        let n = a.nrows();
        let mut m = a.clone();
        let mut rhs = b.to_vec();
        let mut col_perm: Vec<usize> = (0..n).collect();
        for k in 0..n {
            let (mut pi, mut pj, mut best) = (k, k, -1.0);
            for i in k..n {
                for j in k..n {
                    if m[[i, j]].norm() > best {
                        best = m[[i, j]].norm();
                        pi = i;
                        pj = j;
                    }
                }
            }
            for j in 0..n {
                let tmp = m[[k, j]];
                m[[k, j]] = m[[pi, j]];
                m[[pi, j]] = tmp;
            }
            rhs.swap(k, pi);
            for i in 0..n {
                let tmp = m[[i, k]];
                m[[i, k]] = m[[i, pj]];
                m[[i, pj]] = tmp;
            }
            col_perm.swap(k, pj);
            for i in k + 1..n {
                let f = m[[i, k]] / m[[k, k]];
                for j in k..n {
                    let v = m[[k, j]];
                    m[[i, j]] -= f * v;
                }
                let r = rhs[k];
                rhs[i] -= f * r;
            }
        }
        let mut z = vec![c(0.0); n];
        for i in (0..n).rev() {
            let mut s = rhs[i];
            for j in i + 1..n {
                s -= m[[i, j]] * z[j];
            }
            z[i] = s / m[[i, i]];
        }
        let mut x = vec![c(0.0); n];
        for (k, &p) in col_perm.iter().enumerate() {
            x[p] = z[k];
        }
        x
    }

    fn random_hpd(n: usize, seed: u64) -> CMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let b = CMatrix::from_shape_fn((n, n), |_| {
            Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))
        });
        let mut a = b.dot(&adjoint(&b));
        for i in 0..n {
            a[[i, i]] += c(0.5);
        }
        a
    }

    #[test]
    fn identity_solve() {
        let a = CMatrix::eye(2);
        let x = solve_hermitian(&a, &[c(3.0), c(4.0)], 0.0).unwrap();
        assert_eq!(x, vec![c(3.0), c(4.0)]);
    }

    #[test]
    fn diagonal_solve() {
        let a = array![[c(1.0), c(0.0)], [c(0.0), c(4.0)]];
        let x = solve_hermitian(&a, &[c(1.0), c(1.0)], 0.0).unwrap();
        assert!((x[0] - c(1.0)).norm() < 1e-15);
        assert!((x[1] - c(0.25)).norm() < 1e-15);
    }

    #[test]
    fn random_hpd_matches_full_pivot_elimination() {
        for seed in 0..5 {
            let a = random_hpd(6, seed);
            let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
            let b: Vec<Complex64> = (0..6)
                .map(|_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
                .collect();
            let x = solve_hermitian(&a, &b, 0.0).unwrap();
            let oracle = gauss_full_pivot(&a, &b);
            let xn = x.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
            for (u, v) in x.iter().zip(&oracle) {
                assert!((u - v).norm() < 1e-10 * xn);
            }
            let ax = a.dot(&ndarray::Array1::from(x.clone()));
            let res: f64 = ax.iter().zip(&b).map(|(u, v)| (u - v).norm_sqr()).sum::<f64>().sqrt();
            let anorm = frobenius_norm(&a);
            assert!(res <= 1e-10 * anorm * xn);
        }
    }

    #[test]
    fn loading_is_same_as_shifted_matrix() {
        let a = random_hpd(5, 9);
        let b: Vec<Complex64> = (0..5).map(|i| Complex64::new(i as f64, 1.0)).collect();
        let delta = 0.37;
        let mut shifted = a.clone();
        for i in 0..5 {
            shifted[[i, i]] += c(delta);
        }
        let x1 = solve_hermitian(&a, &b, delta).unwrap();
        let x2 = solve_hermitian(&shifted, &b, 0.0).unwrap();
        for (u, v) in x1.iter().zip(&x2) {
            assert!((u - v).norm() < 1e-12);
        }
    }

    #[test]
    fn singular_matrix_reported() {
        let a = array![[c(1.0), c(1.0)], [c(1.0), c(1.0)]];
        assert!(matches!(
            solve_hermitian(&a, &[c(1.0), c(0.0)], 0.0),
            Err(Error::SingularMatrix { .. })
        ));
        // loading rescues it
        assert!(solve_hermitian(&a, &[c(1.0), c(0.0)], 0.1).is_ok());
    }

    #[test]
    fn non_hermitian_rejected() {
        let a = array![[c(1.0), c(2.0)], [c(0.0), c(1.0)]];
        assert!(solve_hermitian(&a, &[c(1.0), c(0.0)], 0.0).is_err());
    }

    #[test]
    fn eigenvalues_of_known_matrices() {
        let a = array![[c(2.0), c(1.0)], [c(1.0), c(2.0)]];
        let e = hermitian_eigenvalues(&a).unwrap();
        assert!((e[0] - 1.0).abs() < 1e-14 && (e[1] - 3.0).abs() < 1e-14);
        let h = array![
            [c(2.0), Complex64::new(0.0, 1.0)],
            [Complex64::new(0.0, -1.0), c(2.0)]
        ];
        let e = hermitian_eigenvalues(&h).unwrap();
        assert!((e[0] - 1.0).abs() < 1e-14 && (e[1] - 3.0).abs() < 1e-14);
    }

    #[test]
    fn eigenvalue_sum_is_trace() {
        let a = random_hpd(7, 4);
        let e = hermitian_eigenvalues(&a).unwrap();
        let tr: f64 = (0..7).map(|i| a[[i, i]].re).sum();
        assert!((e.iter().sum::<f64>() - tr).abs() < 1e-10 * tr);
        assert!(e.iter().all(|&v| v > 0.0));
    }
}
