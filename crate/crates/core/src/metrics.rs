//! Image-quality measurements: FWHM, contrast, CNR and NMSE.

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::types::ImagingGrid;

/// Axis-aligned rectangle in meters, bounds inclusive.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegionSpec {
    pub x0: f64,
    pub z0: f64,
    pub x1: f64,
    pub z1: f64,
}

impl RegionSpec {
    pub fn new(x0: f64, z0: f64, x1: f64, z1: f64) -> Self {
        Self { x0: x0.min(x1), z0: z0.min(z1), x1: x0.max(x1), z1: z0.max(z1) }
    }

    /// Envelope values whose pixel centers fall inside the rectangle.
    pub fn values(&self, envelope: &Array2<f64>, grid: &ImagingGrid) -> Result<Vec<f64>> {
        if envelope.dim() != grid.shape() {
            return Err(Error::ShapeMismatch(format!("image {:?} vs grid {:?}", envelope.dim(), grid.shape())));
        }
        let mut out = Vec::new();
        for (ix, &x) in grid.lateral().iter().enumerate() {
            if x < self.x0 || x > self.x1 {
                continue;
            }
            for (iz, &z) in grid.axial().iter().enumerate() {
                if z >= self.z0 && z <= self.z1 {
                    out.push(envelope[[ix, iz]]);
                }
            }
        }
        if out.is_empty() {
            return Err(Error::EmptyRegion(format!(
                "[{:.4e}, {:.4e}] x [{:.4e}, {:.4e}]",
                self.x0, self.x1, self.z0, self.z1
            )));
        }
        Ok(out)
    }
}

/// Width at half the peak, with linear interpolation between samples.
pub fn fwhm(profile: &[f64], spacing: f64) -> Result<f64> {
    let (imax, &peak) = profile
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1).then(b.0.cmp(&a.0)))
        .ok_or(Error::NoPeak)?;
    if !(peak > 0.0) || profile.iter().enumerate().any(|(i, &v)| i != imax && v == peak) {
        return Err(Error::NoPeak);
    }
    let half = 0.5 * peak;
    let mut left = None;
    for i in (0..imax).rev() {
        if profile[i] <= half {
            let f = (half - profile[i]) / (profile[i + 1] - profile[i]);
            left = Some(i as f64 + f);
            break;
        }
    }
    let mut right = None;
    for i in imax + 1..profile.len() {
        if profile[i] <= half {
            let f = (profile[i - 1] - half) / (profile[i - 1] - profile[i]);
            right = Some((i - 1) as f64 + f);
            break;
        }
    }
    let left = left.ok_or(Error::HalfLevelNotCrossed("left"))?;
    let right = right.ok_or(Error::HalfLevelNotCrossed("right"))?;
    Ok((right - left) * spacing)
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn variance(v: &[f64]) -> f64 {
    let m = mean(v);
    v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / v.len() as f64
}

/// `20 log10(mean_a / mean_b)` on the linear envelope.
pub fn contrast_db(envelope: &Array2<f64>, grid: &ImagingGrid, a: &RegionSpec, b: &RegionSpec) -> Result<f64> {
    let va = a.values(envelope, grid)?;
    let vb = b.values(envelope, grid)?;
    contrast_db_values(&va, &vb)
}

pub fn contrast_db_values(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptyRegion("no samples".into()));
    }
    let mb = mean(b);
    if mb == 0.0 {
        return Err(Error::ZeroMeanB);
    }
    Ok(20.0 * (mean(a) / mb).log10())
}

/// `|mu_a - mu_b| / sqrt(var_a + var_b)` (population variances).
pub fn cnr(envelope: &Array2<f64>, grid: &ImagingGrid, a: &RegionSpec, b: &RegionSpec) -> Result<f64> {
    let va = a.values(envelope, grid)?;
    let vb = b.values(envelope, grid)?;
    cnr_values(&va, &vb)
}

pub fn cnr_values(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptyRegion("no samples".into()));
    }
    let v = variance(a) + variance(b);
    if v == 0.0 {
        return Err(Error::ZeroVarianceBoth);
    }
    Ok((mean(a) - mean(b)).abs() / v.sqrt())
}

/// `|est - ref|^2 / |ref|^2`.
pub fn nmse(estimate: &[f64], reference: &[f64]) -> Result<f64> {
    if estimate.len() != reference.len() {
        return Err(Error::DimensionMismatch(format!("{} vs {} samples", estimate.len(), reference.len())));
    }
    let den: f64 = reference.iter().map(|v| v * v).sum();
    if den == 0.0 {
        return Err(Error::InvalidArgument("reference has zero norm".into()));
    }
    Ok(estimate.iter().zip(reference).map(|(e, r)| (e - r) * (e - r)).sum::<f64>() / den)
}

/// `10 log10(max(ref)^2 / MSE)`.
pub fn psnr(estimate: &[f64], reference: &[f64]) -> Result<f64> {
    let n = nmse(estimate, reference)?;
    let energy: f64 = reference.iter().map(|v| v * v).sum::<f64>() / reference.len() as f64;
    let peak = reference.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    Ok(10.0 * (peak * peak / (n * energy)).log10())
}
