//! Flat `key = value` pipeline configuration with documented defaults.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

/// Every recognized key, its default, and a one-line description.
pub const KEYS: &[(&str, &str, &str)] = &[
    ("sim.elements", "32", "number of array elements"),
    ("sim.pitch", "1.54e-4", "element pitch in meters"),
    ("sim.f0", "5e6", "center frequency in Hz"),
    ("sim.fs", "40e6", "sampling frequency in Hz"),
    ("sim.bandwidth", "0.6", "fractional -6 dB bandwidth of the pulse"),
    ("sim.speed", "1540", "speed of sound in m/s"),
    ("sim.samples", "1600", "samples per trace"),
    ("sim.noise_std", "0", "white noise standard deviation"),
    ("sim.seed", "0", "seed for every random draw"),
    ("sim.angles", "0", "plane-wave steering angles in degrees, comma separated"),
    ("sim.phantom", "cyst", "built-in phantom: cyst or point"),
    ("sim.speckle_count", "500", "scatterers in the cyst phantom"),
    ("sim.cyst_x", "0", "cyst center, lateral, meters"),
    ("sim.cyst_z", "20e-3", "cyst center, depth, meters"),
    ("sim.cyst_radius", "2e-3", "cyst radius in meters"),
    ("sim.region_x", "-6e-3,6e-3", "phantom lateral extent, meters"),
    ("sim.region_z", "14e-3,26e-3", "phantom depth extent, meters"),
    ("sim.point_x", "0", "point target lateral position, meters"),
    ("sim.point_z", "20e-3", "point target depth, meters"),
    ("tof.x_range", "-6e-3,6e-3", "image lateral extent, meters"),
    ("tof.z_range", "14e-3,26e-3", "image depth extent, meters"),
    ("tof.nx", "64", "lateral pixels"),
    ("tof.nz", "128", "axial pixels"),
    ("tof.analytic", "true", "focus the analytic signal (IQ) instead of raw RF"),
    ("bf.method", "das", "das, mv, wiener, cf or imap"),
    ("bf.apod", "rect", "rect, hanning or hamming"),
    ("bf.iters", "2", "iMAP iterations"),
    ("bf.sub_l", "0", "MV sub-aperture length; 0 means half the elements"),
    ("bf.k", "2", "MV axial half window"),
    ("bf.eps", "0.01", "MV diagonal loading fraction"),
    ("bf.dyn_range", "60", "display dynamic range in dB"),
    ("sparse.lambda", "0.1", "l1 weight"),
    ("sparse.max_iters", "5000", "ISTA iteration cap"),
    ("sparse.tol", "1e-8", "ISTA relative-change tolerance"),
    ("clutter.method", "rpca", "svt or rpca"),
    ("clutter.lambda1", "0", "nuclear-norm weight; 0 selects the data-driven default"),
    ("clutter.lambda2", "0", "row-sparsity weight; 0 selects half of lambda1"),
    ("clutter.mu1", "0.5", "tissue step"),
    ("clutter.mu2", "0.5", "blood step"),
    ("clutter.iters", "500", "RPCA iteration cap"),
    ("clutter.tol", "1e-6", "RPCA relative-change tolerance"),
    ("ulm.method", "sparse", "sparse or centroid"),
    ("ulm.factor", "4", "super-resolution factor"),
    ("ulm.lambda", "0.1", "l1 weight, relative to max |A^T y| of each frame"),
    ("ulm.psf_sigma", "2", "PSF standard deviation in HR pixels"),
    ("ulm.threshold", "0.2", "detection threshold as a fraction of the frame maximum"),
    ("ulm.radius", "1", "centroid window radius in pixels"),
    ("ulm.max_iters", "2000", "ISTA iteration cap per frame"),
    ("ulm.tol", "1e-6", "ISTA relative-change tolerance"),
];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PipelineConfig {
    values: BTreeMap<String, String>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self { values: KEYS.iter().map(|(k, v, _)| (k.to_string(), v.to_string())).collect() }
    }
}

impl PipelineConfig {
    pub fn set(&mut self, key: &str, value: impl Into<String>) -> Result<(), ConfigError> {
        match self.values.get_mut(key) {
            Some(slot) => {
                *slot = value.into();
                Ok(())
            }
            None => Err(ConfigError(format!("unknown config key `{key}`"))),
        }
    }

    /// Applies `key = value` lines; `#` starts a comment.
    pub fn merge_text(&mut self, text: &str) -> Result<(), ConfigError> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| ConfigError(format!("line {}: expected `key = value`", n + 1)))?;
            self.set(k.trim(), v.trim())?;
        }
        Ok(())
    }

    /// `key=value` as given to `--set`.
    pub fn merge_assignment(&mut self, text: &str) -> Result<(), ConfigError> {
        let (k, v) = text.split_once('=').ok_or_else(|| ConfigError(format!("`{text}` is not key=value")))?;
        self.set(k.trim(), v.trim())
    }

    pub fn raw(&self, key: &str) -> &str {
        self.values.get(key).map(String::as_str).unwrap_or_else(|| panic!("config key `{key}` is not declared"))
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<T, ConfigError> {
        let raw = self.raw(key);
        raw.parse().map_err(|_| ConfigError(format!("config key `{key}`: cannot parse `{raw}`")))
    }

    pub fn get_list(&self, key: &str) -> Result<Vec<f64>, ConfigError> {
        self.raw(key)
            .split(',')
            .map(|s| s.trim().parse::<f64>().map_err(|_| ConfigError(format!("config key `{key}`: bad list entry `{s}`"))))
            .collect()
    }

    pub fn get_range(&self, key: &str) -> Result<(f64, f64), ConfigError> {
        match self.get_list(key)?.as_slice() {
            [a, b] => Ok((*a, *b)),
            _ => Err(ConfigError(format!("config key `{key}`: expected `lo,hi`"))),
        }
    }

    /// Resolved configuration, one sorted `key = value` line per key.
    pub fn to_text(&self) -> String {
        let mut s = String::from("# resolved configuration\n");
        for (k, v) in &self.values {
            s.push_str(&format!("{k} = {v}\n"));
        }
        s
    }
}
