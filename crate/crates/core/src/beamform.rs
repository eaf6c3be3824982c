//! Per-pixel beamformers over a focused tensor: DAS, MV (Capon), Wiener,
//! coherence-factor weighting, iMAP, and transmit compounding.

use ndarray::Array2;
use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::numerics::{solve_hermitian, CMatrix};
use crate::types::{ApodizationWindow, BeamformedImage, FocusedTensor};

const ZERO: Complex64 = Complex64 { re: 0.0, im: 0.0 };

/// Sub-aperture and axial averaging plus diagonal loading for the sample
/// covariance used by MV and Wiener.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CovarianceConfig {
    pub subaperture_length: usize,
    pub temporal_half_window: usize,
    pub loading: f64,
}

impl CovarianceConfig {
    /// `L = C/2`, `K = 2`, `eps = 0.01`.
    pub fn default_for(num_channels: usize) -> Self {
        Self {
            subaperture_length: (num_channels / 2).max(1),
            temporal_half_window: 2,
            loading: 0.01,
        }
    }

    pub fn validate(&self, num_channels: usize) -> Result<()> {
        if self.subaperture_length == 0 || self.subaperture_length > num_channels {
            return Err(Error::InvalidArgument(format!(
                "subaperture length {} outside 1..={num_channels}",
                self.subaperture_length
            )));
        }
        if !(self.loading >= 0.0) || !self.loading.is_finite() {
            return Err(Error::InvalidArgument(format!("loading must be nonnegative, got {}", self.loading)));
        }
        Ok(())
    }
}

/// Whether MV uses the estimated covariance or the identity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CovarianceModel {
    #[default]
    Estimated,
    Identity,
}

fn is_zero(y: &[Complex64]) -> bool {
    y.iter().all(|v| *v == ZERO)
}

/// Evaluates `f(ix, iz, y_r)` for every pixel in parallel over lateral lines.
fn per_pixel<F>(focused: &FocusedTensor, f: F) -> Result<Array2<Complex64>>
where
    F: Fn(usize, usize, &[Complex64]) -> Result<Complex64> + Sync,
{
    let (rx, rz) = focused.grid.shape();
    let cols: Vec<Vec<Complex64>> = (0..rx)
        .into_par_iter()
        .map(|ix| {
            (0..rz)
                .map(|iz| {
                    let y = focused.channel_vector(ix, iz);
                    if is_zero(&y) {
                        Ok(ZERO)
                    } else {
                        f(ix, iz, &y)
                    }
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    let mut out = Array2::zeros((rx, rz));
    for (ix, col) in cols.into_iter().enumerate() {
        for (iz, v) in col.into_iter().enumerate() {
            out[[ix, iz]] = v;
        }
    }
    Ok(out)
}

fn das_pixel(y: &[Complex64], w: &[f64]) -> Complex64 {
    let s: Complex64 = y.iter().zip(w).map(|(v, w)| v * *w).sum();
    s / y.len() as f64
}

/// `x_r = (1/C) w^H y_r`.
pub fn das(focused: &FocusedTensor, apod: &ApodizationWindow) -> Result<BeamformedImage> {
    let c = focused.num_channels();
    if apod.len() != c {
        return Err(Error::ShapeMismatch(format!("apodization has {} weights, tensor has {c} channels", apod.len())));
    }
    let w = apod.weights();
    let rf = per_pixel(focused, |_, _, y| Ok(das_pixel(y, w)))?;
    BeamformedImage::from_rf(rf, focused.grid.clone())
}

/// Sample covariance from a set of channel snapshots (the `2K+1` axial
/// neighbors of a pixel), averaged over all length-`L` sub-apertures and
/// loaded with `eps * trace / L` on the diagonal.
pub fn estimate_covariance(neighborhood: &[Vec<Complex64>], cfg: &CovarianceConfig) -> Result<CMatrix> {
    let c = match neighborhood.first() {
        Some(y) => y.len(),
        None => return Err(Error::InvalidArgument("empty covariance neighborhood".into())),
    };
    if neighborhood.iter().any(|y| y.len() != c) {
        return Err(Error::DimensionMismatch("neighborhood snapshots differ in length".into()));
    }
    cfg.validate(c)?;
    let l = cfg.subaperture_length;
    let mut g = CMatrix::zeros((l, l));
    for y in neighborhood {
        for s in 0..=c - l {
            let sub = &y[s..s + l];
            for i in 0..l {
                for j in i..l {
                    g[[i, j]] += sub[i] * sub[j].conj();
                }
            }
        }
    }
    let count = (neighborhood.len() * (c - l + 1)) as f64;
    for i in 0..l {
        for j in i..l {
            let v = g[[i, j]] / count;
            g[[i, j]] = v;
            g[[j, i]] = v.conj();
        }
        g[[i, i]].im = 0.0;
    }
    let trace: f64 = (0..l).map(|i| g[[i, i]].re).sum();
    let load = cfg.loading * trace / l as f64;
    for i in 0..l {
        g[[i, i]] += load;
    }
    Ok(g)
}

/// `w = G^-1 1 / (1^H G^-1 1)`.
pub fn mv_weights(gamma: &CMatrix) -> Result<Vec<Complex64>> {
    let ones = vec![Complex64::new(1.0, 0.0); gamma.nrows()];
    let u = solve_hermitian(gamma, &ones, 0.0)?;
    let s: Complex64 = u.iter().sum();
    Ok(u.into_iter().map(|v| v / s).collect())
}

fn axial_neighborhood(focused: &FocusedTensor, ix: usize, iz: usize, k: usize) -> Vec<Vec<Complex64>> {
    let rz = focused.grid.shape().1;
    (0..=2 * k)
        .map(|d| {
            let j = (iz + d).saturating_sub(k).min(rz - 1);
            focused.channel_vector(ix, j)
        })
        .collect()
}

/// MV estimate at one pixel and the residual power `w^H G w`.
fn mv_pixel(
    focused: &FocusedTensor,
    ix: usize,
    iz: usize,
    y: &[Complex64],
    cfg: &CovarianceConfig,
    model: CovarianceModel,
) -> Result<(Complex64, f64)> {
    let l = cfg.subaperture_length;
    let gamma = match model {
        CovarianceModel::Identity => CMatrix::eye(l),
        CovarianceModel::Estimated => {
            estimate_covariance(&axial_neighborhood(focused, ix, iz, cfg.temporal_half_window), cfg)?
        }
    };
    let w = mv_weights(&gamma).map_err(|e| match e {
        Error::SingularMatrix { .. } => Error::SingularCovariance { ix, iz },
        other => other,
    })?;
    let subs = y.len() - l + 1;
    let mut x = ZERO;
    for s in 0..subs {
        x += w.iter().zip(&y[s..s + l]).map(|(w, v)| w.conj() * v).sum::<Complex64>();
    }
    x /= subs as f64;
    let gw: Vec<Complex64> = (0..l).map(|i| (0..l).map(|j| gamma[[i, j]] * w[j]).sum()).collect();
    let quad: f64 = w.iter().zip(&gw).map(|(a, b)| (a.conj() * b).re).sum();
    Ok((x, quad))
}

pub fn mv(focused: &FocusedTensor, cfg: &CovarianceConfig) -> Result<BeamformedImage> {
    mv_with_model(focused, cfg, CovarianceModel::Estimated)
}

pub fn mv_with_model(focused: &FocusedTensor, cfg: &CovarianceConfig, model: CovarianceModel) -> Result<BeamformedImage> {
    cfg.validate(focused.num_channels())?;
    let rf = per_pixel(focused, |ix, iz, y| Ok(mv_pixel(focused, ix, iz, y, cfg, model)?.0))?;
    BeamformedImage::from_rf(rf, focused.grid.clone())
}

/// MV output scaled by `H = s / (s + w^H G w)` with `s = |x_MV|^2`.
pub fn wiener(focused: &FocusedTensor, cfg: &CovarianceConfig) -> Result<BeamformedImage> {
    cfg.validate(focused.num_channels())?;
    let rf = per_pixel(focused, |ix, iz, y| {
        let (x, quad) = mv_pixel(focused, ix, iz, y, cfg, CovarianceModel::Estimated)?;
        Ok(x * wiener_gain(x.norm_sqr(), quad))
    })?;
    BeamformedImage::from_rf(rf, focused.grid.clone())
}

/// `s / (s + n)`, zero when the signal power is zero.
pub fn wiener_gain(signal_power: f64, noise_power: f64) -> f64 {
    if signal_power > 0.0 {
        signal_power / (signal_power + noise_power)
    } else {
        0.0
    }
}

/// DAS followed by the Wiener post-filter for white channel noise: with
/// `w = 1/C`, the residual power is `sigma_n^2 / C`. Variances are the
/// plug-in estimates `|x_DAS|^2` and `(1/C) |y - 1 x_DAS|^2`.
pub fn wiener_postfilter_das(focused: &FocusedTensor) -> Result<BeamformedImage> {
    let rf = per_pixel(focused, |_, _, y| {
        let c = y.len() as f64;
        let x = y.iter().sum::<Complex64>() / c;
        let sn2 = y.iter().map(|v| (v - x).norm_sqr()).sum::<f64>() / c;
        Ok(x * wiener_gain(x.norm_sqr(), sn2 / c))
    })?;
    BeamformedImage::from_rf(rf, focused.grid.clone())
}

fn cf_pixel(y: &[Complex64]) -> f64 {
    let coh = y.iter().sum::<Complex64>().norm_sqr();
    let energy: f64 = y.iter().map(|v| v.norm_sqr()).sum();
    if energy > 0.0 {
        (coh / (y.len() as f64 * energy)).min(1.0)
    } else {
        0.0
    }
}

/// `CF = |1^H y|^2 / (C y^H y)`, zero for an empty pixel.
pub fn coherence_factor(focused: &FocusedTensor) -> Array2<f64> {
    let (rx, rz) = focused.grid.shape();
    let mut out = Array2::zeros((rx, rz));
    for ix in 0..rx {
        for iz in 0..rz {
            out[[ix, iz]] = cf_pixel(&focused.channel_vector(ix, iz));
        }
    }
    out
}

pub fn cf_weighted_das(focused: &FocusedTensor, apod: &ApodizationWindow) -> Result<BeamformedImage> {
    let d = das(focused, apod)?;
    let cf = coherence_factor(focused);
    let rf = &d.rf * &cf.mapv(|v| Complex64::new(v, 0.0));
    BeamformedImage::from_rf(rf, focused.grid.clone())
}

fn imap_pixel(y: &[Complex64], iterations: usize) -> Complex64 {
    let c = y.len() as f64;
    let sum: Complex64 = y.iter().sum();
    let mut x = sum / c;
    for _ in 0..iterations {
        let sx2 = x.norm_sqr();
        let sn2 = y.iter().map(|v| (v - x).norm_sqr()).sum::<f64>() / c;
        let den = c * sx2 + sn2;
        x = if den > 0.0 { sum * (sx2 / den) } else { ZERO };
    }
    x
}

/// Iterative MAP: starts from DAS and alternates plug-in signal and noise
/// variances with the resulting shrinkage of `1^H y`.
pub fn imap(focused: &FocusedTensor, iterations: usize) -> Result<BeamformedImage> {
    if iterations == 0 {
        return Err(Error::InvalidArgument("iMAP needs at least one iteration".into()));
    }
    let rf = per_pixel(focused, |_, _, y| Ok(imap_pixel(y, iterations)))?;
    BeamformedImage::from_rf(rf, focused.grid.clone())
}

/// How beamformed images from several transmits are combined.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CompoundMode {
    Mean,
    /// MV weights across transmits; the covariance averages a
    /// `(2K+1) x (2K+1)` pixel neighborhood.
    Mv {
        half_window: usize,
        loading: f64,
        model: CovarianceModel,
    },
}

pub fn compound(images: &[BeamformedImage], mode: CompoundMode) -> Result<BeamformedImage> {
    let first = images.first().ok_or(Error::EmptyEvents)?;
    if let Some(bad) = images.iter().position(|im| im.grid != first.grid) {
        return Err(Error::GridMismatch(format!("image {bad} has a different grid")));
    }
    let (rx, rz) = first.grid.shape();
    let t = images.len();
    let rf = match mode {
        CompoundMode::Mean => {
            let mut acc = Array2::<Complex64>::zeros((rx, rz));
            for im in images {
                acc += &im.rf;
            }
            acc / t as f64
        }
        CompoundMode::Mv { half_window: k, loading, model } => {
            if !(loading >= 0.0) {
                return Err(Error::InvalidArgument(format!("loading must be nonnegative, got {loading}")));
            }
            let snap = |ix: usize, iz: usize| -> Vec<Complex64> { images.iter().map(|im| im.rf[[ix, iz]]).collect() };
            let cols: Vec<Vec<Complex64>> = (0..rx)
                .into_par_iter()
                .map(|ix| {
                    (0..rz)
                        .map(|iz| {
                            let z = snap(ix, iz);
                            if is_zero(&z) {
                                return Ok(ZERO);
                            }
                            let gamma = match model {
                                CovarianceModel::Identity => CMatrix::eye(t),
                                CovarianceModel::Estimated => {
                                    let mut hood = Vec::new();
                                    for dx in 0..=2 * k {
                                        for dz in 0..=2 * k {
                                            let jx = (ix + dx).saturating_sub(k).min(rx - 1);
                                            let jz = (iz + dz).saturating_sub(k).min(rz - 1);
                                            hood.push(snap(jx, jz));
                                        }
                                    }
                                    let cfg = CovarianceConfig {
                                        subaperture_length: t,
                                        temporal_half_window: 0,
                                        loading,
                                    };
                                    estimate_covariance(&hood, &cfg)?
                                }
                            };
                            let w = mv_weights(&gamma).map_err(|e| match e {
                                Error::SingularMatrix { .. } => Error::SingularCovariance { ix, iz },
                                other => other,
                            })?;
                            Ok(w.iter().zip(&z).map(|(w, v)| w.conj() * v).sum())
                        })
                        .collect::<Result<Vec<_>>>()
                })
                .collect::<Result<Vec<_>>>()?;
            Array2::from_shape_fn((rx, rz), |(ix, iz)| cols[ix][iz])
        }
    };
    BeamformedImage::from_rf(rf, first.grid.clone())
}
