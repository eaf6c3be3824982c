//! Thin singular value decomposition by one-sided (Hestenes) Jacobi rotations.
//!
//! Tall inputs are first reduced with a Householder QR so the rotations run on
//! the small square factor. Wide inputs are handled through `A^H`.

use num_complex::Complex64;

use super::linalg::CMatrix;
use crate::error::{Error, Result};

const MAX_SWEEPS: usize = 60;

/// `A = U diag(s) V^H` with `r = min(M, N)` columns in `U` and `V`.
#[derive(Debug, Clone)]
pub struct SvdResult {
    /// `M x r`, orthonormal columns.
    pub u: CMatrix,
    /// Descending, nonnegative.
    pub singular_values: Vec<f64>,
    /// `N x r`, orthonormal columns.
    pub v: CMatrix,
}

impl SvdResult {
    /// `U diag(s) V^H`.
    pub fn reconstruct(&self) -> CMatrix {
        self.reconstruct_with(&self.singular_values)
    }

    /// `U diag(values) V^H` for a replacement spectrum of the same length.
    pub fn reconstruct_with(&self, values: &[f64]) -> CMatrix {
        let m = self.u.nrows();
        let n = self.v.nrows();
        let mut out = CMatrix::zeros((m, n));
        for (k, &s) in values.iter().enumerate() {
            if s == 0.0 {
                continue;
            }
            for i in 0..m {
                let us = self.u[[i, k]] * s;
                if us == Complex64::new(0.0, 0.0) {
                    continue;
                }
                for j in 0..n {
                    out[[i, j]] += us * self.v[[j, k]].conj();
                }
            }
        }
        out
    }
}

pub fn svd(a: &CMatrix) -> Result<SvdResult> {
    let (m, n) = a.dim();
    if m == 0 || n == 0 {
        return Err(Error::DimensionMismatch(format!("svd of empty {m}x{n} matrix")));
    }
    if a.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
        return Err(Error::NonFiniteSample("svd input".into()));
    }
    if m < n {
        let t = a.t().mapv(|v| v.conj());
        let r = svd(&t)?;
        return Ok(SvdResult {
            u: r.v,
            singular_values: r.singular_values,
            v: r.u,
        });
    }
    // m >= n
    let (q, r) = householder_qr(a);
    let (ur, s, v) = jacobi_square(&r)?;
    let u = q.dot(&ur);
    Ok(SvdResult {
        u,
        singular_values: s,
        v,
    })
}

/// Thin QR: `Q` is `m x n` with orthonormal columns, `R` is `n x n` upper triangular.
fn householder_qr(a: &CMatrix) -> (CMatrix, CMatrix) {
    let (m, n) = a.dim();
    // column-major working copy
    let mut cols: Vec<Vec<Complex64>> = (0..n).map(|j| a.column(j).to_vec()).collect();
    let mut reflectors: Vec<Vec<Complex64>> = Vec::with_capacity(n);
    for k in 0..n {
        let x = &cols[k][k..];
        let xnorm = x.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
        if xnorm == 0.0 {
            reflectors.push(Vec::new());
            continue;
        }
        let phase = if x[0].norm() > 0.0 {
            x[0] / x[0].norm()
        } else {
            Complex64::new(1.0, 0.0)
        };
        let alpha = -phase * xnorm;
        let mut v: Vec<Complex64> = x.to_vec();
        v[0] -= alpha;
        let vnorm = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        if vnorm == 0.0 {
            reflectors.push(Vec::new());
            continue;
        }
        v.iter_mut().for_each(|z| *z /= vnorm);
        for col in cols.iter_mut().skip(k) {
            let seg = &mut col[k..];
            let dot: Complex64 = v.iter().zip(seg.iter()).map(|(vi, si)| vi.conj() * si).sum();
            let f = dot * 2.0;
            for (si, vi) in seg.iter_mut().zip(&v) {
                *si -= vi * f;
            }
        }
        reflectors.push(v);
    }
    let mut r = CMatrix::zeros((n, n));
    for j in 0..n {
        for i in 0..=j {
            r[[i, j]] = cols[j][i];
        }
    }
    // Q = H_0 ... H_{n-1} applied to the first n columns of I
    let mut qcols: Vec<Vec<Complex64>> = (0..n)
        .map(|j| {
            let mut e = vec![Complex64::new(0.0, 0.0); m];
            e[j] = Complex64::new(1.0, 0.0);
            e
        })
        .collect();
    for k in (0..n).rev() {
        let v = &reflectors[k];
        if v.is_empty() {
            continue;
        }
        for col in qcols.iter_mut() {
            let seg = &mut col[k..];
            let dot: Complex64 = v.iter().zip(seg.iter()).map(|(vi, si)| vi.conj() * si).sum();
            let f = dot * 2.0;
            for (si, vi) in seg.iter_mut().zip(v) {
                *si -= vi * f;
            }
        }
    }
    let mut q = CMatrix::zeros((m, n));
    for (j, col) in qcols.iter().enumerate() {
        for i in 0..m {
            q[[i, j]] = col[i];
        }
    }
    (q, r)
}

/// One-sided Jacobi on a square (or tall) matrix; returns `(U, s, V)`.
fn jacobi_square(a: &CMatrix) -> Result<(CMatrix, Vec<f64>, CMatrix)> {
    let (m, n) = a.dim();
    let mut w: Vec<Vec<Complex64>> = (0..n).map(|j| a.column(j).to_vec()).collect();
    let mut v: Vec<Vec<Complex64>> = (0..n)
        .map(|j| {
            let mut e = vec![Complex64::new(0.0, 0.0); n];
            e[j] = Complex64::new(1.0, 0.0);
            e
        })
        .collect();
    let frob2: f64 = w.iter().flatten().map(|z| z.norm_sqr()).sum();
    let mut norms: Vec<f64> = w.iter().map(|c| c.iter().map(|z| z.norm_sqr()).sum()).collect();

    let null_tol = (m.max(n) as f64) * f64::EPSILON * frob2.sqrt();
    let null2 = null_tol * null_tol;
    let ortho_tol = m.max(2) as f64 * f64::EPSILON;
    let mut converged = frob2 == 0.0 || n < 2;
    let mut sweeps = 0;
    while !converged {
        if sweeps == MAX_SWEEPS {
            return Err(Error::NoConvergence { sweeps });
        }
        sweeps += 1;
        let mut rotations = 0usize;
        for p in 0..n {
            for q in p + 1..n {
                let alpha = norms[p];
                let beta = norms[q];
                // numerically null columns carry no direction worth rotating
                if alpha.min(beta) <= null2 {
                    continue;
                }
                let gamma: Complex64 = w[p].iter().zip(&w[q]).map(|(x, y)| x.conj() * y).sum();
                let g = gamma.norm();
                if g == 0.0 || g <= ortho_tol * (alpha * beta).sqrt() {
                    continue;
                }
                rotations += 1;
                let zeta = (beta - alpha) / (2.0 * g);
                let t = if zeta >= 0.0 { 1.0 } else { -1.0 } / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                let phase = (gamma / g).conj();
                rotate(&mut w, p, q, c, s, phase);
                rotate(&mut v, p, q, c, s, phase);
                norms[p] = w[p].iter().map(|z| z.norm_sqr()).sum();
                norms[q] = w[q].iter().map(|z| z.norm_sqr()).sum();
            }
        }
        // every remaining pair is orthogonal to working precision
        if rotations == 0 {
            converged = true;
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    let sigma: Vec<f64> = norms.iter().map(|x| x.sqrt()).collect();
    order.sort_by(|&i, &j| sigma[j].total_cmp(&sigma[i]).then(i.cmp(&j)));

    let mut u = CMatrix::zeros((m, n));
    let mut vout = CMatrix::zeros((n, n));
    let mut s = Vec::with_capacity(n);
    let mut zero_cols = Vec::new();
    for (k, &j) in order.iter().enumerate() {
        let sj = sigma[j];
        s.push(sj);
        if sj > null_tol {
            for i in 0..m {
                u[[i, k]] = w[j][i] / sj;
            }
        } else {
            zero_cols.push(k);
        }
        for i in 0..n {
            vout[[i, k]] = v[j][i];
        }
    }
    complete_orthonormal(&mut u, &zero_cols);
    Ok((u, s, vout))
}

/// `[x_p, x_q] <- [c x_p - s e x_q, s x_p + c e x_q]` with `e` a unit phase.
fn rotate(cols: &mut [Vec<Complex64>], p: usize, q: usize, c: f64, s: f64, phase: Complex64) {
    let (lo, hi) = cols.split_at_mut(q);
    let xp = &mut lo[p];
    let xq = &mut hi[0];
    for (a, b) in xp.iter_mut().zip(xq.iter_mut()) {
        let bq = *b * phase;
        let ap = *a;
        *a = ap * c - bq * s;
        *b = ap * s + bq * c;
    }
}

/// Fills the listed (zero) columns of `u` with unit vectors orthogonal to all
/// other columns, by Gram-Schmidt over the standard basis.
fn complete_orthonormal(u: &mut CMatrix, zero_cols: &[usize]) {
    if zero_cols.is_empty() {
        return;
    }
    let (m, r) = u.dim();
    let mut filled: Vec<usize> = (0..r).filter(|k| !zero_cols.contains(k)).collect();
    let mut basis = 0;
    for &k in zero_cols {
        while basis < m {
            let mut cand = vec![Complex64::new(0.0, 0.0); m];
            cand[basis] = Complex64::new(1.0, 0.0);
            basis += 1;
            // two passes of modified Gram-Schmidt
            for _ in 0..2 {
                for &f in &filled {
                    let dot: Complex64 = (0..m).map(|i| u[[i, f]].conj() * cand[i]).sum();
                    for (i, c) in cand.iter_mut().enumerate() {
                        *c -= u[[i, f]] * dot;
                    }
                }
            }
            let norm = cand.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
            if norm > 1e-8 {
                for i in 0..m {
                    u[[i, k]] = cand[i] / norm;
                }
                filled.push(k);
                break;
            }
        }
    }
}
