//! Localization microscopy: bubble frames on a low-resolution grid, sparse
//! coding on a finer grid, centroid detection, accumulation and scoring.
//!
//! Positions are in high-resolution pixel units with pixel centers at
//! integers; images are indexed `[x, z]`.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::numerics::LinearOperator;
use crate::simulator::BoxMuller;
use crate::sparse::{ista, IstaOptions, IstaResult, SparseProblem};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BubblePosition {
    pub x: f64,
    pub z: f64,
}

impl BubblePosition {
    pub fn distance(&self, x: f64, z: f64) -> f64 {
        ((self.x - x).powi(2) + (self.z - z).powi(2)).sqrt()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BubbleFrame {
    /// Low-resolution frame.
    pub image: Array2<f64>,
    pub truth: Vec<BubblePosition>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Detection {
    pub x: f64,
    pub z: f64,
    pub intensity: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct LocalizationSet {
    pub detections: Vec<Detection>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BubbleSimParams {
    pub hr_shape: (usize, usize),
    pub n_frames: usize,
    pub mean_bubbles_per_frame: f64,
    /// Gaussian PSF standard deviation in HR pixels.
    pub psf_sigma: f64,
    pub downsample_factor: usize,
    /// Noise level relative to a unit-amplitude bubble: `std = 10^(-snr/20)`.
    pub snr_db: f64,
    pub seed: u64,
}

impl BubbleSimParams {
    pub fn lr_shape(&self) -> (usize, usize) {
        (self.hr_shape.0 / self.downsample_factor, self.hr_shape.1 / self.downsample_factor)
    }

    fn validate(&self) -> Result<()> {
        let f = self.downsample_factor;
        if f == 0 || self.hr_shape.0 == 0 || self.hr_shape.0 % f != 0 || self.hr_shape.1 == 0 || self.hr_shape.1 % f != 0 {
            return Err(Error::InvalidArgument(format!(
                "HR shape {:?} must be a nonzero multiple of factor {f}",
                self.hr_shape
            )));
        }
        if !(self.psf_sigma > 0.0) {
            return Err(Error::InvalidArgument(format!("psf sigma must be positive, got {}", self.psf_sigma)));
        }
        if !(self.mean_bubbles_per_frame >= 0.0) || !self.mean_bubbles_per_frame.is_finite() {
            return Err(Error::InvalidArgument("mean bubble count must be finite and nonnegative".into()));
        }
        Ok(())
    }
}

/// Unit-peak Gaussian kernel of size `(2r+1) x (2r+1)`.
pub fn gaussian_psf(sigma: f64, radius: usize) -> Array2<f64> {
    let r = radius as f64;
    Array2::from_shape_fn((2 * radius + 1, 2 * radius + 1), |(i, j)| {
        let dx = i as f64 - r;
        let dz = j as f64 - r;
        (-(dx * dx + dz * dz) / (2.0 * sigma * sigma)).exp()
    })
}

/// `f x f` block mean.
pub fn block_average(hr: &Array2<f64>, factor: usize) -> Result<Array2<f64>> {
    let (h, w) = hr.dim();
    if factor == 0 || h % factor != 0 || w % factor != 0 {
        return Err(Error::ShapeMismatch(format!("{h}x{w} is not divisible by factor {factor}")));
    }
    let norm = (factor * factor) as f64;
    Ok(Array2::from_shape_fn((h / factor, w / factor), |(i, j)| {
        let mut s = 0.0;
        for a in 0..factor {
            for b in 0..factor {
                s += hr[[i * factor + a, j * factor + b]];
            }
        }
        s / norm
    }))
}

pub fn simulate_bubbles(params: &BubbleSimParams) -> Result<Vec<BubbleFrame>> {
    params.validate()?;
    let (h, w) = params.hr_shape;
    let sigma = params.psf_sigma;
    let noise_std = 10f64.powf(-params.snr_db / 20.0);
    let poisson = if params.mean_bubbles_per_frame > 0.0 {
        Some(Poisson::new(params.mean_bubbles_per_frame).map_err(|e| Error::InvalidArgument(e.to_string()))?)
    } else {
        None
    };
    (0..params.n_frames)
        .into_par_iter()
        .map(|t| {
            let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
            rng.set_stream(t as u64);
            let count = poisson.map(|p| p.sample(&mut rng) as usize).unwrap_or(0);
            let truth: Vec<BubblePosition> = (0..count)
                .map(|_| BubblePosition { x: rng.gen::<f64>() * (h - 1) as f64, z: rng.gen::<f64>() * (w - 1) as f64 })
                .collect();
            let hr = Array2::from_shape_fn((h, w), |(i, j)| {
                truth
                    .iter()
                    .map(|b| (-((i as f64 - b.x).powi(2) + (j as f64 - b.z).powi(2)) / (2.0 * sigma * sigma)).exp())
                    .sum::<f64>()
            });
            let mut image = block_average(&hr, params.downsample_factor)?;
            if noise_std > 0.0 {
                let mut gauss = BoxMuller::default();
                image.iter_mut().for_each(|v| *v += noise_std * gauss.next(&mut rng));
            }
            Ok(BubbleFrame { image, truth })
        })
        .collect()
}

/// HR convolution with the PSF followed by `f x f` block averaging, stored
/// as one weight table per sub-block phase.
#[derive(Debug, Clone)]
pub struct UlmOperator {
    hr_shape: (usize, usize),
    factor: usize,
    reach: isize,
    /// `weights[((ax * f + az) * span + dx) * span + dz]` with `span = 2 reach + 1`.
    weights: Vec<f64>,
}

impl UlmOperator {
    pub fn new(psf: &Array2<f64>, hr_shape: (usize, usize), factor: usize) -> Result<Self> {
        let (kh, kw) = psf.dim();
        if kh % 2 == 0 || kw % 2 == 0 {
            return Err(Error::ShapeMismatch(format!("psf must have odd size, got {kh}x{kw}")));
        }
        if factor == 0 || hr_shape.0 % factor != 0 || hr_shape.1 % factor != 0 || hr_shape.0 == 0 || hr_shape.1 == 0 {
            return Err(Error::ShapeMismatch(format!("HR shape {hr_shape:?} not divisible by factor {factor}")));
        }
        if kh > hr_shape.0 || kw > hr_shape.1 {
            return Err(Error::ShapeMismatch(format!("psf {kh}x{kw} larger than image {hr_shape:?}")));
        }
        let (rh, rw) = ((kh / 2) as isize, (kw / 2) as isize);
        let f = factor as isize;
        let reach = (rh.max(rw) + f - 1) / f + 1;
        let span = (2 * reach + 1) as usize;
        let mut weights = vec![0.0; factor * factor * span * span];
        let norm = (factor * factor) as f64;
        for ax in 0..f {
            for az in 0..f {
                for dx in -reach..=reach {
                    for dz in -reach..=reach {
                        let mut s = 0.0;
                        for bx in 0..f {
                            let ox = f * dx + bx - ax;
                            if ox.abs() > rh {
                                continue;
                            }
                            for bz in 0..f {
                                let oz = f * dz + bz - az;
                                if oz.abs() > rw {
                                    continue;
                                }
                                s += psf[[(ox + rh) as usize, (oz + rw) as usize]];
                            }
                        }
                        let idx = (((ax * f + az) as usize * span + (dx + reach) as usize) * span) + (dz + reach) as usize;
                        weights[idx] = s / norm;
                    }
                }
            }
        }
        Ok(Self { hr_shape, factor, reach, weights })
    }

    pub fn lr_shape(&self) -> (usize, usize) {
        (self.hr_shape.0 / self.factor, self.hr_shape.1 / self.factor)
    }

    fn for_each_link(&self, px: usize, pz: usize, mut visit: impl FnMut(usize, f64)) {
        let f = self.factor;
        let (lh, lw) = self.lr_shape();
        let span = (2 * self.reach + 1) as usize;
        let base = ((px % f) * f + pz % f) * span * span;
        let (qx0, qz0) = ((px / f) as isize, (pz / f) as isize);
        for dx in -self.reach..=self.reach {
            let qx = qx0 + dx;
            if qx < 0 || qx >= lh as isize {
                continue;
            }
            for dz in -self.reach..=self.reach {
                let qz = qz0 + dz;
                if qz < 0 || qz >= lw as isize {
                    continue;
                }
                let wgt = self.weights[base + (dx + self.reach) as usize * span + (dz + self.reach) as usize];
                if wgt != 0.0 {
                    visit(qx as usize * lw + qz as usize, wgt);
                }
            }
        }
    }
}

impl LinearOperator for UlmOperator {
    type Domain = f64;
    type Range = f64;

    fn domain_len(&self) -> usize {
        self.hr_shape.0 * self.hr_shape.1
    }

    fn range_len(&self) -> usize {
        let (a, b) = self.lr_shape();
        a * b
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.range_len()];
        let w = self.hr_shape.1;
        for (p, &v) in x.iter().enumerate() {
            if v != 0.0 {
                self.for_each_link(p / w, p % w, |q, wgt| y[q] += wgt * v);
            }
        }
        y
    }

    fn adjoint(&self, y: &[f64]) -> Vec<f64> {
        let w = self.hr_shape.1;
        (0..self.domain_len())
            .map(|p| {
                let mut s = 0.0;
                self.for_each_link(p / w, p % w, |q, wgt| s += wgt * y[q]);
                s
            })
            .collect()
    }
}

/// Sparse coding of one LR frame on the HR grid; negative coefficients are
/// clamped to zero afterwards.
pub fn localize_sparse(frame: &Array2<f64>, psf: &Array2<f64>, lambda: f64, factor: usize) -> Result<Array2<f64>> {
    Ok(localize_sparse_with(frame, psf, lambda, factor, IstaOptions::default())?.0)
}

pub fn localize_sparse_with(
    frame: &Array2<f64>,
    psf: &Array2<f64>,
    lambda: f64,
    factor: usize,
    options: IstaOptions,
) -> Result<(Array2<f64>, IstaResult<f64>)> {
    let peak = psf.iter().cloned().fold(f64::MIN, f64::max);
    if (peak - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidArgument(format!("psf must have unit peak, got {peak}")));
    }
    let (lh, lw) = frame.dim();
    let hr = (lh * factor, lw * factor);
    let op = UlmOperator::new(psf, hr, factor)?;
    let res = ista(&SparseProblem { operator: &op, measurement: frame.iter().cloned().collect(), lambda, options })?;
    let img = Array2::from_shape_vec(hr, res.x.iter().map(|v| v.max(0.0)).collect())
        .map_err(|e| Error::ShapeMismatch(e.to_string()))?;
    Ok((img, res))
}

/// Local maxima above `threshold_fraction * max`, merged when within
/// `window_radius` of a brighter one, each refined to the intensity-weighted
/// centroid of its `(2r+1)^2` window.
pub fn detect_centroids(frame: &Array2<f64>, threshold_fraction: f64, window_radius: usize) -> Vec<Detection> {
    let (h, w) = frame.dim();
    let max = frame.iter().cloned().fold(0.0f64, f64::max);
    if !(max > 0.0) || window_radius == 0 {
        return Vec::new();
    }
    let thr = threshold_fraction * max;
    let mut peaks = Vec::new();
    for i in 0..h {
        for j in 0..w {
            let v = frame[[i, j]];
            if v <= thr {
                continue;
            }
            let mut is_max = true;
            'nb: for a in i.saturating_sub(1)..(i + 2).min(h) {
                for b in j.saturating_sub(1)..(j + 2).min(w) {
                    if frame[[a, b]] > v {
                        is_max = false;
                        break 'nb;
                    }
                }
            }
            if is_max {
                peaks.push((i, j, v));
            }
        }
    }
    peaks.sort_by(|a, b| b.2.total_cmp(&a.2).then(a.0.cmp(&b.0)).then(a.1.cmp(&b.1)));
    let r = window_radius as f64;
    let mut kept: Vec<(usize, usize, f64)> = Vec::new();
    for p in peaks {
        let close = kept.iter().any(|k| {
            let d = ((k.0 as f64 - p.0 as f64).powi(2) + (k.1 as f64 - p.1 as f64).powi(2)).sqrt();
            d <= r
        });
        if !close {
            kept.push(p);
        }
    }
    kept.into_iter()
        .map(|(i, j, v)| {
            let (mut sx, mut sz, mut sw) = (0.0, 0.0, 0.0);
            for a in i.saturating_sub(window_radius)..(i + window_radius + 1).min(h) {
                for b in j.saturating_sub(window_radius)..(j + window_radius + 1).min(w) {
                    let wgt = frame[[a, b]].max(0.0);
                    sx += wgt * a as f64;
                    sz += wgt * b as f64;
                    sw += wgt;
                }
            }
            Detection { x: sx / sw, z: sz / sw, intensity: v }
        })
        .collect()
}

/// Maps a coordinate on the LR grid to HR pixel units.
pub fn lr_to_hr(coord: f64, factor: usize) -> f64 {
    (coord + 0.5) * factor as f64 - 0.5
}

/// 8-connected components of pixels above `threshold`.
pub fn support_clusters(image: &Array2<f64>, threshold: f64) -> Vec<Vec<(usize, usize)>> {
    let (h, w) = image.dim();
    let mut label = Array2::<bool>::from_elem((h, w), false);
    let mut clusters = Vec::new();
    for i in 0..h {
        for j in 0..w {
            if label[[i, j]] || image[[i, j]] <= threshold {
                continue;
            }
            let mut stack = vec![(i, j)];
            label[[i, j]] = true;
            let mut members = Vec::new();
            while let Some((a, b)) = stack.pop() {
                members.push((a, b));
                for na in a.saturating_sub(1)..(a + 2).min(h) {
                    for nb in b.saturating_sub(1)..(b + 2).min(w) {
                        if !label[[na, nb]] && image[[na, nb]] > threshold {
                            label[[na, nb]] = true;
                            stack.push((na, nb));
                        }
                    }
                }
            }
            members.sort_unstable();
            clusters.push(members);
        }
    }
    clusters
}

/// Histogram of detections on the HR grid. Detections are binned to the
/// nearest pixel and clamped to the grid so every detection is counted.
pub fn accumulate(sets: &[LocalizationSet], hr_shape: (usize, usize)) -> Array2<f64> {
    let mut map = Array2::zeros(hr_shape);
    if hr_shape.0 == 0 || hr_shape.1 == 0 {
        return map;
    }
    for d in sets.iter().flat_map(|s| &s.detections) {
        let i = (d.x.round().max(0.0) as usize).min(hr_shape.0 - 1);
        let j = (d.z.round().max(0.0) as usize).min(hr_shape.1 - 1);
        map[[i, j]] += 1.0;
    }
    map
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Score {
    pub precision: f64,
    pub recall: f64,
    /// Mean distance over matched pairs; zero when nothing matched.
    pub mean_error: f64,
    pub matched: usize,
}

/// Greedy one-to-one matching in ascending distance within `match_radius`.
/// No detections gives precision 1; no truth gives recall 1.
pub fn score(detections: &[Detection], truth: &[BubblePosition], match_radius: f64) -> Score {
    let mut pairs = Vec::new();
    for (di, d) in detections.iter().enumerate() {
        for (ti, t) in truth.iter().enumerate() {
            let dist = t.distance(d.x, d.z);
            if dist <= match_radius {
                pairs.push((dist, di, ti));
            }
        }
    }
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut used_d = vec![false; detections.len()];
    let mut used_t = vec![false; truth.len()];
    let mut matched = 0;
    let mut err = 0.0;
    for (dist, di, ti) in pairs {
        if !used_d[di] && !used_t[ti] {
            used_d[di] = true;
            used_t[ti] = true;
            matched += 1;
            err += dist;
        }
    }
    Score {
        precision: if detections.is_empty() { 1.0 } else { matched as f64 / detections.len() as f64 },
        recall: if truth.is_empty() { 1.0 } else { matched as f64 / truth.len() as f64 },
        mean_error: if matched == 0 { 0.0 } else { err / matched as f64 },
        matched,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::check_adjoint;

    fn params() -> BubbleSimParams {
        BubbleSimParams {
            hr_shape: (32, 32),
            n_frames: 3,
            mean_bubbles_per_frame: 4.0,
            psf_sigma: 2.0,
            downsample_factor: 4,
            snr_db: 30.0,
            seed: 11,
        }
    }

    #[test]
    fn simulation_basics() {
        let p = params();
        let a = simulate_bubbles(&p).unwrap();
        assert_eq!(a, simulate_bubbles(&p).unwrap());
        assert_eq!(a[0].image.dim(), (8, 8));
        for f in &a {
            assert!(f.truth.iter().all(|b| b.x >= 0.0 && b.x <= 31.0 && b.z >= 0.0 && b.z <= 31.0));
        }
        let empty = simulate_bubbles(&BubbleSimParams { mean_bubbles_per_frame: 0.0, ..p }).unwrap();
        assert!(empty.iter().all(|f| f.truth.is_empty()));
        assert!(empty[0].image.iter().any(|&v| v != 0.0));
        assert!(simulate_bubbles(&BubbleSimParams { downsample_factor: 3, ..p }).is_err());
    }

    #[test]
    fn single_bubble_without_noise_peaks_at_truth() {
        let p = BubbleSimParams {
            hr_shape: (24, 24),
            n_frames: 6,
            mean_bubbles_per_frame: 1.0,
            psf_sigma: 1.5,
            downsample_factor: 1,
            snr_db: f64::INFINITY,
            seed: 3,
        };
        for f in simulate_bubbles(&p).unwrap() {
            if f.truth.len() != 1 {
                continue;
            }
            let b = f.truth[0];
            let (i, j) = f.image.indexed_iter().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
            assert_eq!((i as f64, j as f64), (b.x.round(), b.z.round()));
            let expect = (-((i as f64 - b.x).powi(2) + (j as f64 - b.z).powi(2)) / 4.5).exp();
            assert!((f.image[[i, j]] - expect).abs() < 1e-15);
        }
    }

    #[test]
    fn operator_matches_explicit_blur_and_average() {
        let psf = gaussian_psf(1.2, 3);
        let op = UlmOperator::new(&psf, (16, 12), 4).unwrap();
        check_adjoint(&op, 4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x: Vec<f64> = (0..16 * 12).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let conv = crate::sparse::Convolution2d::new(psf, (16, 12)).unwrap();
        let hr = Array2::from_shape_vec((16, 12), conv.apply(&x)).unwrap();
        let expect = block_average(&hr, 4).unwrap();
        for (a, b) in op.apply(&x).iter().zip(expect.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn sparse_localization() {
        let psf = gaussian_psf(2.0, 6);
        assert!(localize_sparse(&Array2::zeros((8, 8)), &psf, 0.01, 4).unwrap().iter().all(|&v| v == 0.0));
        assert!(localize_sparse(&Array2::zeros((8, 8)), &(&psf * 2.0), 0.01, 4).is_err());

        let op = UlmOperator::new(&psf, (32, 32), 4).unwrap();
        let mut x = vec![0.0; 32 * 32];
        x[13 * 32 + 18] = 1.0;
        let y = Array2::from_shape_vec((8, 8), op.apply(&x)).unwrap();
        let out = localize_sparse(&y, &psf, 1e-4, 4).unwrap();
        assert!(out.iter().all(|&v| v >= 0.0));
        let (i, j) = out.indexed_iter().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
        assert!((i as i64 - 13).abs() <= 1 && (j as i64 - 18).abs() <= 1);
    }

    fn blob(h: usize, w: usize, centers: &[(f64, f64)]) -> Array2<f64> {
        Array2::from_shape_fn((h, w), |(i, j)| {
            centers.iter().map(|&(x, z)| (-((i as f64 - x).powi(2) + (j as f64 - z).powi(2)) / 4.0).exp()).sum()
        })
    }

    #[test]
    fn centroid_detection() {
        let one = detect_centroids(&blob(21, 21, &[(10.0, 10.0)]), 0.3, 3);
        assert_eq!(one.len(), 1);
        assert!((one[0].x - 10.0).abs() < 0.1 && (one[0].z - 10.0).abs() < 0.1);
        assert!(detect_centroids(&Array2::zeros((5, 5)), 0.3, 3).is_empty());
        let two = detect_centroids(&blob(30, 30, &[(10.0, 8.0), (10.0, 18.0)]), 0.3, 3);
        assert_eq!(two.len(), 2);
        let img = blob(40, 40, &[(10.0, 10.0), (30.0, 12.0), (20.0, 30.0)]) + &blob(40, 40, &[(30.0, 30.0)]).mapv(|v| 0.4 * v);
        let mut last = usize::MAX;
        for k in 1..10 {
            let n = detect_centroids(&img, k as f64 / 10.0, 2).len();
            assert!(n <= last);
            last = n;
        }
    }

    #[test]
    fn clusters() {
        let mut img = Array2::zeros((8, 8));
        img[[1, 1]] = 1.0;
        img[[2, 2]] = 1.0;
        img[[5, 6]] = 0.5;
        let c = support_clusters(&img, 0.0);
        assert_eq!(c.len(), 2);
        assert_eq!(c[0], vec![(1, 1), (2, 2)]);
    }

    #[test]
    fn accumulation_conserves_counts() {
        assert!(accumulate(&[], (4, 4)).iter().all(|&v| v == 0.0));
        let d = |x, z| Detection { x, z, intensity: 1.0 };
        let sets = vec![
            LocalizationSet { detections: vec![d(1.2, 2.0), d(0.8, 1.9), d(1.0, 2.4)] },
            LocalizationSet { detections: vec![d(-3.0, 9.0)] },
        ];
        let map = accumulate(&sets, (4, 4));
        assert_eq!(map[[1, 2]], 3.0);
        assert_eq!(map.sum(), 4.0);
    }

    #[test]
    fn scoring() {
        let truth = vec![BubblePosition { x: 1.0, z: 1.0 }, BubblePosition { x: 5.0, z: 5.0 }];
        let exact: Vec<Detection> = truth.iter().map(|t| Detection { x: t.x, z: t.z, intensity: 1.0 }).collect();
        let s = score(&exact, &truth, 1.0);
        assert_eq!((s.precision, s.recall, s.mean_error), (1.0, 1.0, 0.0));
        let s = score(&[], &truth, 1.0);
        assert_eq!((s.precision, s.recall), (1.0, 0.0));
        let far = [Detection { x: 3.0, z: 1.0, intensity: 1.0 }];
        let s = score(&far, &truth[..1], 1.0);
        assert_eq!((s.precision, s.recall), (0.0, 0.0));
        let mut rev = exact.clone();
        rev.reverse();
        rev[0].x += 0.3;
        let a = score(&rev, &truth, 1.0);
        rev.reverse();
        let b = score(&rev, &truth, 1.0);
        assert_eq!(a, b);
    }
}
