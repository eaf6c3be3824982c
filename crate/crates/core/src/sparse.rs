//! Sparse MAP recovery by ISTA: soft thresholding, the generic solver, a
//! sub-Nyquist Fourier scanline model, and 2-D deconvolution.

use ndarray::Array2;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::numerics::fft::fft;
use crate::numerics::operator::{norm, LinearOperator, Scalar};
use crate::numerics::operator_norm;

/// `x * max(1 - lambda/|x|, 0)` per entry.
pub fn soft_threshold<T: Scalar>(x: &[T], lambda: f64) -> Vec<T> {
    x.iter().map(|&v| shrink(v, lambda)).collect()
}

fn shrink<T: Scalar>(v: T, lambda: f64) -> T {
    let m = v.modulus();
    if m <= lambda {
        T::default()
    } else {
        v * (1.0 - lambda / m)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepSize {
    /// `1 / |A|^2` with the norm from power iteration (which already carries
    /// a 1.01 safety factor).
    Auto,
    Fixed(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IstaOptions {
    pub step: StepSize,
    pub max_iters: usize,
    /// Stop when `|x_{k+1} - x_k| / max(|x_k|, 1)` drops below this.
    pub tol: f64,
}

impl Default for IstaOptions {
    fn default() -> Self {
        Self { step: StepSize::Auto, max_iters: 5000, tol: 1e-8 }
    }
}

/// `min 1/2 |y - A x|^2 + lambda |x|_1`.
pub struct SparseProblem<'a, Op: LinearOperator> {
    pub operator: &'a Op,
    pub measurement: Vec<Op::Range>,
    pub lambda: f64,
    pub options: IstaOptions,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IstaResult<T> {
    pub x: Vec<T>,
    pub iterations: usize,
    pub objective: f64,
    pub step: f64,
    /// Objective at `x = 0` followed by the value after every iteration.
    pub objective_trace: Vec<f64>,
}

pub fn lasso_objective<Op: LinearOperator>(op: &Op, y: &[Op::Range], x: &[Op::Domain], lambda: f64) -> f64 {
    let ax = op.apply(x);
    let r: f64 = ax.iter().zip(y).map(|(a, b)| (*a - *b).modulus_sqr()).sum();
    0.5 * r + lambda * x.iter().map(|v| v.modulus()).sum::<f64>()
}

pub fn ista<Op: LinearOperator>(problem: &SparseProblem<'_, Op>) -> Result<IstaResult<Op::Domain>> {
    let op = problem.operator;
    let y = &problem.measurement;
    let lambda = problem.lambda;
    let opts = problem.options;
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(Error::InvalidArgument(format!("lambda must be nonnegative, got {lambda}")));
    }
    if y.len() != op.range_len() {
        return Err(Error::DimensionMismatch(format!(
            "measurement has {} entries, operator range is {}",
            y.len(),
            op.range_len()
        )));
    }
    if y.iter().any(|v| !v.modulus().is_finite()) {
        return Err(Error::NonFiniteSample("measurement".into()));
    }
    let step = match opts.step {
        StepSize::Fixed(s) if s > 0.0 && s.is_finite() => {
            crate::numerics::check_adjoint(op, 0x5eed)?;
            s
        }
        StepSize::Fixed(s) => return Err(Error::InvalidArgument(format!("step must be positive, got {s}"))),
        StepSize::Auto => {
            let l = operator_norm(op, 200)?;
            if l == 0.0 {
                1.0
            } else {
                1.0 / (l * l)
            }
        }
    };
    let mut x = vec![Op::Domain::default(); op.domain_len()];
    let mut objective = lasso_objective(op, y, &x, lambda);
    let mut trace = vec![objective];
    let mut iterations = 0;
    while iterations < opts.max_iters {
        iterations += 1;
        let ax = op.apply(&x);
        let r: Vec<Op::Range> = ax.iter().zip(y.iter()).map(|(a, b)| *a - *b).collect();
        let g = op.adjoint(&r);
        let next: Vec<Op::Domain> = x.iter().zip(&g).map(|(xi, gi)| shrink(*xi - *gi * step, step * lambda)).collect();
        let dx: f64 = next.iter().zip(&x).map(|(a, b)| (*a - *b).modulus_sqr()).sum::<f64>().sqrt();
        let rel = dx / norm(&x).max(1.0);
        let after = lasso_objective(op, y, &next, lambda);
        if after > objective + 1e-12 * objective.abs().max(1e-300) + f64::MIN_POSITIVE {
            return Err(Error::StepTooLarge { iteration: iterations, before: objective, after });
        }
        x = next;
        objective = after;
        trace.push(objective);
        if rel < opts.tol {
            break;
        }
    }
    Ok(IstaResult { x, iterations, objective, step, objective_trace: trace })
}

/// Pulse spectrum `H` sampled at the retained bins of a length-`N` DFT.
#[derive(Debug, Clone, PartialEq)]
pub struct ScanlineModel {
    pulse_spectrum: Vec<Complex64>,
    selected_bins: Vec<usize>,
    n: usize,
}

impl ScanlineModel {
    pub fn new(pulse_spectrum: Vec<Complex64>, selected_bins: Vec<usize>, n: usize) -> Result<Self> {
        if pulse_spectrum.len() != selected_bins.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} spectrum samples for {} bins",
                pulse_spectrum.len(),
                selected_bins.len()
            )));
        }
        if selected_bins.len() > n {
            return Err(Error::InvalidArgument(format!("{} bins exceed N = {n}", selected_bins.len())));
        }
        let mut seen = vec![false; n];
        for &k in &selected_bins {
            if k >= n || seen[k] {
                return Err(Error::InvalidArgument(format!("bin {k} out of range or repeated")));
            }
            seen[k] = true;
        }
        if pulse_spectrum.iter().any(|h| !h.re.is_finite() || !h.im.is_finite()) {
            return Err(Error::NonFiniteSample("pulse spectrum".into()));
        }
        Ok(Self { pulse_spectrum, selected_bins, n })
    }

    /// `H = I` on the given bins.
    pub fn unit(selected_bins: Vec<usize>, n: usize) -> Result<Self> {
        let h = vec![Complex64::new(1.0, 0.0); selected_bins.len()];
        Self::new(h, selected_bins, n)
    }

    pub fn pulse_spectrum(&self) -> &[Complex64] {
        &self.pulse_spectrum
    }

    pub fn selected_bins(&self) -> &[usize] {
        &self.selected_bins
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }
}

impl LinearOperator for ScanlineModel {
    type Domain = f64;
    type Range = Complex64;

    fn domain_len(&self) -> usize {
        self.n
    }

    fn range_len(&self) -> usize {
        self.selected_bins.len()
    }

    fn apply(&self, x: &[f64]) -> Vec<Complex64> {
        let spec = crate::numerics::fft_real(x);
        self.selected_bins.iter().zip(&self.pulse_spectrum).map(|(&k, h)| h * spec[k]).collect()
    }

    fn adjoint(&self, y: &[Complex64]) -> Vec<f64> {
        let mut z = vec![Complex64::new(0.0, 0.0); self.n];
        for ((&k, h), v) in self.selected_bins.iter().zip(&self.pulse_spectrum).zip(y) {
            z[k] = h.conj() * v;
        }
        let n = self.n as f64;
        fft(&z, true).into_iter().map(|v| v.re * n).collect()
    }
}

pub fn recover_scanline(model: &ScanlineModel, y: &[Complex64], lambda: f64) -> Result<Vec<f64>> {
    Ok(recover_scanline_with(model, y, lambda, IstaOptions::default())?.x)
}

pub fn recover_scanline_with(
    model: &ScanlineModel,
    y: &[Complex64],
    lambda: f64,
    options: IstaOptions,
) -> Result<IstaResult<f64>> {
    ista(&SparseProblem { operator: model, measurement: y.to_vec(), lambda, options })
}

/// Zero-padded "same" 2-D convolution with a fixed kernel, on row-major
/// flattened images. The kernel origin sits at `(kh/2, kw/2)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Convolution2d {
    psf: Array2<f64>,
    shape: (usize, usize),
}

impl Convolution2d {
    pub fn new(psf: Array2<f64>, shape: (usize, usize)) -> Result<Self> {
        let (kh, kw) = psf.dim();
        if kh == 0 || kw == 0 || kh > shape.0 || kw > shape.1 {
            return Err(Error::ShapeMismatch(format!("psf {kh}x{kw} does not fit image {}x{}", shape.0, shape.1)));
        }
        if psf.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteSample("psf".into()));
        }
        Ok(Self { psf, shape })
    }

    pub fn shape(&self) -> (usize, usize) {
        self.shape
    }

    fn correlate(&self, x: &[f64], flip: bool) -> Vec<f64> {
        let (h, w) = self.shape;
        let (kh, kw) = self.psf.dim();
        let (ch, cw) = ((kh / 2) as isize, (kw / 2) as isize);
        let mut out = vec![0.0; h * w];
        for i in 0..h as isize {
            for j in 0..w as isize {
                let mut acc = 0.0;
                for a in 0..kh as isize {
                    let si = if flip { i - (a - ch) } else { i + (a - ch) };
                    if si < 0 || si >= h as isize {
                        continue;
                    }
                    for b in 0..kw as isize {
                        let sj = if flip { j - (b - cw) } else { j + (b - cw) };
                        if sj < 0 || sj >= w as isize {
                            continue;
                        }
                        acc += self.psf[[a as usize, b as usize]] * x[si as usize * w + sj as usize];
                    }
                }
                out[i as usize * w + j as usize] = acc;
            }
        }
        out
    }
}

impl LinearOperator for Convolution2d {
    type Domain = f64;
    type Range = f64;

    fn domain_len(&self) -> usize {
        self.shape.0 * self.shape.1
    }

    fn range_len(&self) -> usize {
        self.shape.0 * self.shape.1
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        self.correlate(x, true)
    }

    fn adjoint(&self, y: &[f64]) -> Vec<f64> {
        self.correlate(y, false)
    }
}

pub fn deconvolve(y: &Array2<f64>, psf: &Array2<f64>, lambda: f64) -> Result<Array2<f64>> {
    Ok(deconvolve_with(y, psf, lambda, IstaOptions::default())?.0)
}

pub fn deconvolve_with(
    y: &Array2<f64>,
    psf: &Array2<f64>,
    lambda: f64,
    options: IstaOptions,
) -> Result<(Array2<f64>, IstaResult<f64>)> {
    let op = Convolution2d::new(psf.clone(), y.dim())?;
    let meas: Vec<f64> = y.iter().cloned().collect();
    let res = ista(&SparseProblem { operator: &op, measurement: meas, lambda, options })?;
    let img = Array2::from_shape_vec(y.dim(), res.x.clone()).map_err(|e| Error::ShapeMismatch(e.to_string()))?;
    Ok((img, res))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{check_adjoint, MatrixOperator};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn soft_threshold_examples() {
        assert_eq!(soft_threshold(&[3.0, -0.5, -3.0], 1.0), vec![2.0, 0.0, -2.0]);
        let z = soft_threshold(&[Complex64::new(3.0, 4.0)], 2.5);
        assert!((z[0] - Complex64::new(1.5, 2.0)).norm() < 1e-15);
    }

    fn identity_problem(y: f64, lambda: f64) -> f64 {
        let op = MatrixOperator::new(Array2::from_elem((1, 1), 1.0));
        ista(&SparseProblem { operator: &op, measurement: vec![y], lambda, options: IstaOptions::default() })
            .unwrap()
            .x[0]
    }

    #[test]
    fn identity_lasso() {
        assert!((identity_problem(3.0, 1.0) - 2.0).abs() < 1e-6);
        assert_eq!(identity_problem(3.0, 5.0), 0.0);
    }

    fn random_instance(seed: u64) -> (MatrixOperator<f64>, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = Array2::from_shape_fn((12, 30), |_| {
            let v: f64 = StandardNormal.sample(&mut rng);
            v / 12f64.sqrt()
        });
        let mut x = vec![0.0; 30];
        for _ in 0..3 {
            x[rng.gen_range(0..30)] = rng.gen_range(0.5..2.0) * if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
        }
        let op = MatrixOperator::new(a);
        let y = op.apply(&x);
        (op, y)
    }

    /// Largest violation of the lasso subgradient conditions.
    fn kkt_residual(op: &MatrixOperator<f64>, y: &[f64], x: &[f64], lambda: f64) -> f64 {
        let r: Vec<f64> = y.iter().zip(op.apply(x)).map(|(a, b)| a - b).collect();
        let g = op.adjoint(&r);
        g.iter()
            .zip(x)
            .map(|(gi, xi)| if *xi == 0.0 { (gi.abs() - lambda).max(0.0) } else { (gi - lambda * xi.signum()).abs() })
            .fold(0.0, f64::max)
    }

    #[test]
    fn kkt_on_random_lasso() {
        for seed in 0..5 {
            let (op, y) = random_instance(seed);
            let lambda = 0.01;
            let res = ista(&SparseProblem {
                operator: &op,
                measurement: y.clone(),
                lambda,
                options: IstaOptions { tol: 1e-13, max_iters: 200_000, ..Default::default() },
            })
            .unwrap();
            assert!(kkt_residual(&op, &y, &res.x, lambda) <= 1e-6 * lambda);
            // rounding can add a few ulps once the iterates have settled
            assert!(res.objective_trace.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-12)));
            assert!(res.iterations < 200_000);
        }
    }

    #[test]
    fn first_iterate_is_thresholded_backprojection() {
        let (op, y) = random_instance(11);
        let opts = IstaOptions { max_iters: 1, ..Default::default() };
        let res = ista(&SparseProblem { operator: &op, measurement: y.clone(), lambda: 0.05, options: opts }).unwrap();
        let back: Vec<f64> = op.adjoint(&y).into_iter().map(|v| v * res.step).collect();
        assert_eq!(res.x, soft_threshold(&back, res.step * 0.05));
    }

    #[test]
    fn lasso_null() {
        let (op, y) = random_instance(2);
        let lmax = op.adjoint(&y).iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let res = ista(&SparseProblem { operator: &op, measurement: y, lambda: lmax, options: IstaOptions::default() })
            .unwrap();
        assert!(res.x.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn oversized_step_is_rejected() {
        let (op, y) = random_instance(3);
        let opts = IstaOptions { step: StepSize::Fixed(50.0), ..Default::default() };
        let err = ista(&SparseProblem { operator: &op, measurement: y, lambda: 1e-3, options: opts }).unwrap_err();
        assert!(matches!(err, Error::StepTooLarge { .. }));
    }

    #[test]
    fn scanline_adjoint_and_trivial_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let bins: Vec<usize> = (0..20).map(|i| i * 3 + 1).collect();
        let h: Vec<Complex64> = bins.iter().map(|_| Complex64::new(rng.gen_range(0.5..1.5), rng.gen_range(-0.5..0.5))).collect();
        let m = ScanlineModel::new(h, bins, 64).unwrap();
        check_adjoint(&m, 1).unwrap();
        // a tighter inner-product check with fixed vectors
        let x: Vec<f64> = (0..64).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let y: Vec<Complex64> = (0..20).map(|_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).collect();
        let lhs: f64 = m.apply(&x).iter().zip(&y).map(|(a, b)| (a.conj() * b).re).sum();
        let rhs: f64 = x.iter().zip(m.adjoint(&y)).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10);

        assert!(recover_scanline(&m, &vec![Complex64::new(0.0, 0.0); 20], 0.1).unwrap().iter().all(|&v| v == 0.0));
        assert!(ScanlineModel::unit(vec![1, 1], 8).is_err());
        assert!(ScanlineModel::unit(vec![9], 8).is_err());
    }

    #[test]
    fn full_dft_recovers_a_spike() {
        let m = ScanlineModel::unit((0..64).collect(), 64).unwrap();
        let mut x = vec![0.0; 64];
        x[23] = 1.0;
        let y = m.apply(&x);
        let xh = recover_scanline(&m, &y, 1e-6).unwrap();
        let imax = xh.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
        assert_eq!(imax, 23);
        assert!((xh[23] - 1.0).abs() < 1e-4);
    }

    fn gaussian_psf(sigma: f64, r: usize) -> Array2<f64> {
        Array2::from_shape_fn((2 * r + 1, 2 * r + 1), |(i, j)| {
            let di = i as f64 - r as f64;
            let dj = j as f64 - r as f64;
            (-(di * di + dj * dj) / (2.0 * sigma * sigma)).exp()
        })
    }

    #[test]
    fn convolution_adjoint_and_delta() {
        let op = Convolution2d::new(gaussian_psf(1.3, 3), (12, 9)).unwrap();
        check_adjoint(&op, 2).unwrap();
        let mut delta = Array2::zeros((3, 3));
        delta[[1, 1]] = 1.0;
        let y = Array2::from_shape_fn((6, 5), |(i, j)| ((i * 5 + j) as f64 * 0.37).sin());
        let x = deconvolve(&y, &delta, 1e-9).unwrap();
        assert!(x.iter().zip(y.iter()).all(|(a, b)| (a - b).abs() < 1e-6));
        assert!(deconvolve(&Array2::zeros((6, 5)), &delta, 0.1).unwrap().iter().all(|&v| v == 0.0));
        assert!(Convolution2d::new(gaussian_psf(1.0, 4), (5, 5)).is_err());
    }

    #[test]
    fn deconvolution_locates_spikes() {
        let psf = gaussian_psf(1.5, 4);
        let spikes = [(6usize, 7usize), (14, 20), (22, 9)];
        let mut x = Array2::zeros((30, 30));
        for &(i, j) in &spikes {
            x[[i, j]] = 1.0;
        }
        let op = Convolution2d::new(psf.clone(), (30, 30)).unwrap();
        let y = Array2::from_shape_vec((30, 30), op.apply(&x.iter().cloned().collect::<Vec<_>>())).unwrap();
        let lmax = op.adjoint(&y.iter().cloned().collect::<Vec<_>>()).iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let xh = deconvolve(&y, &psf, 0.05 * lmax).unwrap();
        for &(i, j) in &spikes {
            let mut best = (0, 0, f64::MIN);
            for a in i.saturating_sub(3)..(i + 4).min(30) {
                for b in j.saturating_sub(3)..(j + 4).min(30) {
                    if xh[[a, b]] > best.2 {
                        best = (a, b, xh[[a, b]]);
                    }
                }
            }
            assert!((best.0 as i64 - i as i64).abs() <= 1 && (best.1 as i64 - j as i64).abs() <= 1);
        }
    }

    proptest! {
        #[test]
        fn soft_threshold_is_a_contraction(
            a in proptest::collection::vec(-5.0f64..5.0, 8),
            b in proptest::collection::vec(-5.0f64..5.0, 8),
            lambda in 0.0f64..3.0,
        ) {
            let ta = soft_threshold(&a, lambda);
            let tb = soft_threshold(&b, lambda);
            let d1: f64 = ta.iter().zip(&tb).map(|(x, y)| (x - y).powi(2)).sum();
            let d0: f64 = a.iter().zip(&b).map(|(x, y)| (x - y).powi(2)).sum();
            prop_assert!(d1 <= d0 + 1e-12);
        }
    }
}
