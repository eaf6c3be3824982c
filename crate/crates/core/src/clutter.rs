//! Tissue clutter suppression on a Casorati (space x time) matrix: singular
//! value thresholding and low-rank plus row-sparse RPCA.

use ndarray::Array2;
use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::numerics::linalg::frobenius_norm;
use crate::numerics::{svd, CMatrix};

/// Frames stacked as columns, each vectorized column-major.
#[derive(Debug, Clone, PartialEq)]
pub struct CasoratiMatrix {
    pub data: CMatrix,
    /// `(N, M)` of a single frame.
    pub frame_shape: (usize, usize),
}

impl CasoratiMatrix {
    pub fn num_frames(&self) -> usize {
        self.data.ncols()
    }
}

pub fn build_casorati(frames: &[Array2<Complex64>]) -> Result<CasoratiMatrix> {
    if frames.len() < 2 {
        return Err(Error::ShapeMismatch(format!("need at least 2 frames, got {}", frames.len())));
    }
    let shape = frames[0].dim();
    if let Some(t) = frames.iter().position(|f| f.dim() != shape) {
        return Err(Error::ShapeMismatch(format!("frame {t} is {:?}, frame 0 is {shape:?}", frames[t].dim())));
    }
    let (n, m) = shape;
    let mut data = CMatrix::zeros((n * m, frames.len()));
    for (t, f) in frames.iter().enumerate() {
        for j in 0..m {
            for i in 0..n {
                data[[i + j * n, t]] = f[[i, j]];
            }
        }
    }
    Ok(CasoratiMatrix { data, frame_shape: shape })
}

pub fn unbuild_casorati(y: &CasoratiMatrix) -> Result<Vec<Array2<Complex64>>> {
    let (n, m) = y.frame_shape;
    if y.data.nrows() != n * m {
        return Err(Error::ShapeMismatch(format!("{} rows for {n}x{m} frames", y.data.nrows())));
    }
    Ok((0..y.data.ncols())
        .map(|t| Array2::from_shape_fn((n, m), |(i, j)| y.data[[i + j * n, t]]))
        .collect())
}

/// Singular value soft thresholding, `U (s - lambda)_+ V^H`.
pub fn svt(y: &CMatrix, lambda: f64) -> Result<CMatrix> {
    Ok(svt_with_norm(y, lambda)?.0)
}

/// SVT result together with its nuclear norm.
fn svt_with_norm(y: &CMatrix, lambda: f64) -> Result<(CMatrix, f64)> {
    if !(lambda >= 0.0) {
        return Err(Error::InvalidArgument(format!("lambda must be nonnegative, got {lambda}")));
    }
    let d = svd(y)?;
    let s: Vec<f64> = d.singular_values.iter().map(|v| (v - lambda).max(0.0)).collect();
    let nuc = s.iter().sum();
    Ok((d.reconstruct_with(&s), nuc))
}

pub fn nuclear_norm(x: &CMatrix) -> Result<f64> {
    Ok(svd(x)?.singular_values.iter().sum())
}

/// Sum over rows of the row 2-norms.
pub fn l12_norm(x: &CMatrix) -> f64 {
    x.rows().into_iter().map(|r| r.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt()).sum()
}

/// Group soft threshold with one group per row (a pixel's time series).
pub fn mixed_l12_threshold(x: &CMatrix, lambda: f64) -> CMatrix {
    let (rows, cols) = x.dim();
    let scaled: Vec<Vec<Complex64>> = (0..rows)
        .into_par_iter()
        .map(|i| {
            let row = x.row(i);
            let nrm = row.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
            if nrm <= lambda {
                vec![Complex64::new(0.0, 0.0); cols]
            } else {
                let f = 1.0 - lambda / nrm;
                row.iter().map(|v| v * f).collect()
            }
        })
        .collect();
    Array2::from_shape_fn((rows, cols), |(i, j)| scaled[i][j])
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RpcaParams {
    pub lambda1: f64,
    pub lambda2: f64,
    pub mu1: f64,
    pub mu2: f64,
    pub max_iters: usize,
    /// Stop when both updates change by less than `tol * |Y|_F`.
    pub tol: f64,
}

impl RpcaParams {
    /// `lambda1 = s1(Y) / sqrt(max(NM, T))`, `lambda2 = lambda1 / 2`,
    /// `mu = 0.5`, `tol = 1e-6`, 500 iterations.
    pub fn defaults_for(y: &CasoratiMatrix) -> Result<Self> {
        let (rows, cols) = y.data.dim();
        let s1 = svd(&y.data)?.singular_values[0];
        let lambda1 = s1 / (rows.max(cols) as f64).sqrt();
        Ok(Self { lambda1, lambda2: 0.5 * lambda1, mu1: 0.5, mu2: 0.5, max_iters: 500, tol: 1e-6 })
    }

    fn validate(&self) -> Result<()> {
        if !(self.lambda1 > 0.0 && self.lambda2 > 0.0) {
            return Err(Error::InvalidArgument("rpca lambdas must be positive".into()));
        }
        if !(self.mu1 > 0.0 && self.mu1 <= 1.0 && self.mu2 > 0.0 && self.mu2 <= 1.0) {
            return Err(Error::InvalidArgument("rpca steps must lie in (0, 1]".into()));
        }
        if !(self.tol > 0.0) {
            return Err(Error::InvalidArgument("rpca tolerance must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct RpcaResult {
    pub tissue: CMatrix,
    pub blood: CMatrix,
    pub iterations: usize,
    pub objective_trace: Vec<f64>,
}

/// `1/2 |Y - Xt - Xb|_F^2 + l1 |Xt|_* + l2 |Xb|_{1,2}`.
pub fn rpca_objective(y: &CMatrix, tissue: &CMatrix, blood: &CMatrix, params: &RpcaParams) -> Result<f64> {
    let r = y - tissue - blood;
    let f = frobenius_norm(&r);
    Ok(0.5 * f * f + params.lambda1 * nuclear_norm(tissue)? + params.lambda2 * l12_norm(blood))
}

/// Proximal gradient on both components simultaneously from the current
/// residual `R = Y - Xt - Xb`:
/// `Xt <- SVT_{mu1 l1}(Xt + mu1 R)`, `Xb <- T_{mu2 l2}(Xb + mu2 R)`.
pub fn rpca(y: &CasoratiMatrix, params: &RpcaParams) -> Result<RpcaResult> {
    params.validate()?;
    let y = &y.data;
    let shape = y.dim();
    let ynorm = frobenius_norm(y);
    let mut tissue = CMatrix::zeros(shape);
    let mut blood = CMatrix::zeros(shape);
    let mut objective = 0.5 * ynorm * ynorm;
    let mut trace = vec![objective];
    let mut iterations = 0;
    while iterations < params.max_iters {
        iterations += 1;
        let r = y - &tissue - &blood;
        let (t_next, nuc) = svt_with_norm(&(&tissue + &(&r * params.mu1)), params.mu1 * params.lambda1)?;
        let b_next = mixed_l12_threshold(&(&blood + &(&r * params.mu2)), params.mu2 * params.lambda2);
        let dt = frobenius_norm(&(&t_next - &tissue));
        let db = frobenius_norm(&(&b_next - &blood));
        let res = frobenius_norm(&(y - &t_next - &b_next));
        let after = 0.5 * res * res + params.lambda1 * nuc + params.lambda2 * l12_norm(&b_next);
        if after > objective * (1.0 + 1e-10) + f64::MIN_POSITIVE {
            return Err(Error::StepTooLarge { iteration: iterations, before: objective, after });
        }
        tissue = t_next;
        blood = b_next;
        objective = after;
        trace.push(objective);
        if dt <= params.tol * ynorm && db <= params.tol * ynorm {
            break;
        }
    }
    Ok(RpcaResult { tissue, blood, iterations, objective_trace: trace })
}

/// Per-pixel temporal 2-norm of the blood component, as an `N x M` map.
pub fn power_doppler(blood: &CasoratiMatrix) -> Array2<f64> {
    let (n, m) = blood.frame_shape;
    Array2::from_shape_fn((n, m), |(i, j)| {
        blood.data.row(i + j * n).iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt()
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn c(v: f64) -> Complex64 {
        Complex64::new(v, 0.0)
    }

    fn random(rng: &mut ChaCha8Rng, m: usize, n: usize) -> CMatrix {
        CMatrix::from_shape_fn((m, n), |_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
    }

    #[test]
    fn casorati_layout_and_round_trip() {
        let f0 = Array2::from_shape_vec((2, 2), vec![c(1.0), c(2.0), c(3.0), c(4.0)]).unwrap();
        let f1 = f0.mapv(|v| v * 10.0);
        let y = build_casorati(&[f0.clone(), f1.clone()]).unwrap();
        let col: Vec<Complex64> = y.data.column(0).to_vec();
        assert_eq!(col, vec![c(1.0), c(3.0), c(2.0), c(4.0)]);
        assert_eq!(unbuild_casorati(&y).unwrap(), vec![f0.clone(), f1]);
        assert!(build_casorati(std::slice::from_ref(&f0)).is_err());
        assert!(build_casorati(&[f0, Array2::zeros((3, 2))]).is_err());
    }

    #[test]
    fn svt_examples() {
        let mut y = CMatrix::zeros((2, 2));
        y[[0, 0]] = c(5.0);
        y[[1, 1]] = c(1.0);
        let x = svt(&y, 2.0).unwrap();
        assert!((x[[0, 0]] - c(3.0)).norm() < 1e-12);
        assert!(x[[1, 1]].norm() < 1e-12 && x[[0, 1]].norm() < 1e-12);
        assert!(svt(&y, 5.0).unwrap().iter().all(|v| v.norm() < 1e-12));
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let r = random(&mut rng, 10, 6);
        let back = svt(&r, 0.0).unwrap();
        assert!(frobenius_norm(&(&back - &r)) <= 1e-10);
    }

    fn svt_obj(y: &CMatrix, x: &CMatrix, lambda: f64) -> f64 {
        let f = frobenius_norm(&(y - x));
        0.5 * f * f + lambda * nuclear_norm(x).unwrap()
    }

    #[test]
    fn svt_beats_perturbations() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..3 {
            let y = random(&mut rng, 8, 5);
            let lambda = 0.8;
            let x = svt(&y, lambda).unwrap();
            let best = svt_obj(&y, &x, lambda);
            for _ in 0..30 {
                let scale = rng.gen_range(1e-3..0.3);
                let d = random(&mut rng, 8, 5) * c(scale);
                assert!(best <= svt_obj(&y, &(&x + &d), lambda) + 1e-12);
            }
        }
    }

    #[test]
    fn l12_examples_and_optimality() {
        let x = CMatrix::from_shape_vec((2, 2), vec![c(3.0), c(4.0), c(0.1), c(0.1)]).unwrap();
        let t = mixed_l12_threshold(&x, 2.5);
        assert!((t[[0, 0]] - c(1.5)).norm() < 1e-15 && (t[[0, 1]] - c(2.0)).norm() < 1e-15);
        assert_eq!(t[[1, 0]], c(0.0));
        assert_eq!(mixed_l12_threshold(&x, 0.0), x);

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let y = random(&mut rng, 12, 4);
        let lambda = 1.0;
        let obj = |z: &CMatrix| {
            let f = frobenius_norm(&(&y - z));
            0.5 * f * f + lambda * l12_norm(z)
        };
        let p = mixed_l12_threshold(&y, lambda);
        let best = obj(&p);
        for _ in 0..100 {
            let d = random(&mut rng, 12, 4) * c(rng.gen_range(1e-3..0.3));
            assert!(best <= obj(&(&p + &d)) + 1e-12);
        }
    }

    fn wrap(data: CMatrix) -> CasoratiMatrix {
        let rows = data.nrows();
        CasoratiMatrix { data, frame_shape: (rows, 1) }
    }

    fn params(l1: f64, l2: f64) -> RpcaParams {
        RpcaParams { lambda1: l1, lambda2: l2, mu1: 0.5, mu2: 0.5, max_iters: 500, tol: 1e-9 }
    }

    #[test]
    fn rpca_zero_input() {
        let r = rpca(&wrap(CMatrix::zeros((6, 4))), &params(1.0, 1.0)).unwrap();
        assert_eq!(r.iterations, 1);
        assert!(r.tissue.iter().chain(r.blood.iter()).all(|v| v.norm() == 0.0));
    }

    #[test]
    fn rpca_rank_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let u: Vec<f64> = (0..30).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let v: Vec<f64> = (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let y = CMatrix::from_shape_fn((30, 8), |(i, j)| c(u[i] * v[j]));
        let s1 = frobenius_norm(&y);
        let l1 = 0.01 * s1;
        let r = rpca(&wrap(y.clone()), &RpcaParams { max_iters: 5000, ..params(l1, 1e6) }).unwrap();
        assert!(frobenius_norm(&r.blood) < 1e-12);
        let rel = frobenius_norm(&(&y - &r.tissue)) / s1;
        assert!(rel <= l1 / s1 + 1e-6, "{rel}");
        assert!(r.objective_trace.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-10)));
    }

    #[test]
    fn rpca_is_positively_homogeneous() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let y = random(&mut rng, 20, 6);
        let p = RpcaParams { max_iters: 40, ..params(0.5, 0.4) };
        let a = rpca(&wrap(y.clone()), &p).unwrap();
        let k = 3.5;
        let pk = RpcaParams { lambda1: k * p.lambda1, lambda2: k * p.lambda2, ..p };
        let b = rpca(&wrap(&y * c(k)), &pk).unwrap();
        assert_eq!(a.iterations, b.iterations);
        assert!(frobenius_norm(&(&a.tissue * c(k) - &b.tissue)) < 1e-9 * k * frobenius_norm(&y));
        assert!(frobenius_norm(&(&a.blood * c(k) - &b.blood)) < 1e-9 * k * frobenius_norm(&y));
    }

    #[test]
    fn rpca_rejects_bad_params() {
        let y = wrap(CMatrix::zeros((4, 3)));
        assert!(rpca(&y, &params(0.0, 1.0)).is_err());
        assert!(rpca(&y, &RpcaParams { mu1: 1.5, ..params(1.0, 1.0) }).is_err());
    }

    #[test]
    fn power_doppler_is_row_norm() {
        let f0 = Array2::from_shape_vec((1, 2), vec![c(3.0), c(0.0)]).unwrap();
        let f1 = Array2::from_shape_vec((1, 2), vec![c(4.0), c(1.0)]).unwrap();
        let pd = power_doppler(&build_casorati(&[f0, f1]).unwrap());
        assert!((pd[[0, 0]] - 5.0).abs() < 1e-15 && (pd[[0, 1]] - 1.0).abs() < 1e-15);
    }
}
