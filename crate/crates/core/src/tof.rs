//! Time-of-flight delays, delay-and-interpolate focusing, and the envelope
//! and log-compression steps of B-mode display.

use ndarray::{Array2, Array3, Array4, Axis};
use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::numerics::fft;
use crate::types::{FocusedTensor, ImagingGrid, Point, RfDataCube, TransducerArray, TransmitEvent, TransmitScheme};

/// Transmit leg in seconds. Plane waves use the arrival time of a wavefront
/// that crosses the array center at `t = 0`; every other scheme uses the
/// distance from the event origin.
pub fn transmit_delay(event: &TransmitEvent, pixel: Point, speed_of_sound: f64) -> f64 {
    match event.scheme {
        TransmitScheme::PlaneWave { angle } => {
            (pixel.x * angle.sin() + pixel.z * angle.cos()) / speed_of_sound
        }
        TransmitScheme::SyntheticAperture { .. } | TransmitScheme::FocusedLine { .. } => {
            event.origin.distance(pixel) / speed_of_sound
        }
    }
}

pub fn receive_delay(element: Point, pixel: Point, speed_of_sound: f64) -> f64 {
    element.distance(pixel) / speed_of_sound
}

/// `tau = (|r_e - r| + |r_c - r|) / v`, with the plane-wave transmit leg
/// substituted where applicable.
pub fn round_trip_delay(event: &TransmitEvent, element: Point, pixel: Point, speed_of_sound: f64) -> f64 {
    transmit_delay(event, pixel, speed_of_sound) + receive_delay(element, pixel, speed_of_sound)
}

/// Delays in seconds, shape `E x C x Rx x Rz`.
#[derive(Debug, Clone, PartialEq)]
pub struct DelayTensor {
    pub delays: Array4<f64>,
}

impl DelayTensor {
    pub fn dim(&self) -> (usize, usize, usize, usize) {
        self.delays.dim()
    }
}

pub fn compute_delays(
    array: &TransducerArray,
    events: &[TransmitEvent],
    grid: &ImagingGrid,
    speed_of_sound: f64,
) -> Result<DelayTensor> {
    if !(speed_of_sound > 0.0) || !speed_of_sound.is_finite() {
        return Err(Error::NonPositiveSpeed(speed_of_sound));
    }
    let (rx, rz) = grid.shape();
    let nc = array.num_elements();
    let mut delays = Array4::zeros((events.len(), nc, rx, rz));
    for (e, ev) in events.iter().enumerate() {
        for c in 0..nc {
            let el = array.element(c);
            for ix in 0..rx {
                for iz in 0..rz {
                    delays[[e, c, ix, iz]] = round_trip_delay(ev, el, grid.point(ix, iz), speed_of_sound);
                }
            }
        }
    }
    Ok(DelayTensor { delays })
}

/// Which events contribute to a focused tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FocusMode {
    /// Coherent sum over all events.
    Compounded,
    /// A single event.
    Event(usize),
}

/// Focuses raw RF samples: each channel trace is read at `t0 + tau` with
/// linear interpolation. Delays outside the recorded window contribute zero.
pub fn focus(cube: &RfDataCube, delays: &DelayTensor, grid: &ImagingGrid, mode: FocusMode) -> Result<FocusedTensor> {
    let traces = cube.samples.mapv(|v| Complex64::new(v, 0.0));
    focus_traces(cube, &traces, delays, grid, mode)
}

/// Like [`focus`], but interpolates the analytic signal of every trace, so
/// the focused values are complex and `|x|` is the envelope.
pub fn focus_analytic(
    cube: &RfDataCube,
    delays: &DelayTensor,
    grid: &ImagingGrid,
    mode: FocusMode,
) -> Result<FocusedTensor> {
    let (ne, nc, nt) = cube.samples.dim();
    let mut traces = Array3::zeros((ne, nc, nt));
    for e in 0..ne {
        for c in 0..nc {
            let line: Vec<f64> = cube.samples.slice(ndarray::s![e, c, ..]).to_vec();
            for (n, v) in analytic_signal(&line).into_iter().enumerate() {
                traces[[e, c, n]] = v;
            }
        }
    }
    focus_traces(cube, &traces, delays, grid, mode)
}

fn focus_traces(
    cube: &RfDataCube,
    traces: &Array3<Complex64>,
    delays: &DelayTensor,
    grid: &ImagingGrid,
    mode: FocusMode,
) -> Result<FocusedTensor> {
    let (ne, nc, nt) = traces.dim();
    let (de, dc, drx, drz) = delays.dim();
    let (rx, rz) = grid.shape();
    if (de, dc, drx, drz) != (ne, nc, rx, rz) {
        return Err(Error::ShapeMismatch(format!(
            "delays are {de}x{dc}x{drx}x{drz}, cube/grid need {ne}x{nc}x{rx}x{rz}"
        )));
    }
    if cube.events.len() != ne {
        return Err(Error::ShapeMismatch(format!(
            "cube has {ne} event slices but {} descriptors",
            cube.events.len()
        )));
    }
    let events: Vec<usize> = match mode {
        FocusMode::Compounded => (0..ne).collect(),
        FocusMode::Event(e) if e < ne => vec![e],
        FocusMode::Event(e) => {
            return Err(Error::ShapeMismatch(format!("event {e} out of range for {ne} events")))
        }
    };
    let fs = cube.sampling_frequency;
    let columns: Vec<Vec<Complex64>> = (0..rx)
        .into_par_iter()
        .map(|ix| {
            let mut col = vec![Complex64::new(0.0, 0.0); nc * rz];
            for &e in &events {
                let t0 = cube.events[e].t0;
                for c in 0..nc {
                    let trace = traces.slice(ndarray::s![e, c, ..]);
                    for iz in 0..rz {
                        let s = (t0 + delays.delays[[e, c, ix, iz]]) * fs;
                        col[c * rz + iz] += interpolate(trace.as_slice().unwrap_or(&trace.to_vec()), s, nt);
                    }
                }
            }
            col
        })
        .collect();
    let mut values = Array3::zeros((nc, rx, rz));
    for (ix, col) in columns.into_iter().enumerate() {
        for c in 0..nc {
            for iz in 0..rz {
                values[[c, ix, iz]] = col[c * rz + iz];
            }
        }
    }
    let event = match mode {
        FocusMode::Compounded if ne > 1 => None,
        FocusMode::Compounded => Some(0),
        FocusMode::Event(e) => Some(e),
    };
    FocusedTensor::new(values, grid.clone(), event)
}

/// Two-tap linear interpolation at fractional sample `s`; zero outside `[0, nt-1]`.
fn interpolate(trace: &[Complex64], s: f64, nt: usize) -> Complex64 {
    if !(s >= 0.0) || s > (nt - 1) as f64 {
        return Complex64::new(0.0, 0.0);
    }
    let i = s.floor() as usize;
    let frac = s - i as f64;
    if i + 1 >= nt || frac == 0.0 {
        return trace[i];
    }
    trace[i] * (1.0 - frac) + trace[i + 1] * frac
}

/// Analytic signal by one-sided spectrum: negative frequencies zeroed,
/// positive doubled, DC and Nyquist kept.
pub fn analytic_signal(x: &[f64]) -> Vec<Complex64> {
    let n = x.len();
    if n == 0 {
        return Vec::new();
    }
    let mut spec = fft::fft_real(x);
    let half = n / 2;
    for (k, v) in spec.iter_mut().enumerate() {
        let keep = k == 0 || (n % 2 == 0 && k == half);
        if keep {
            continue;
        }
        if k < n.div_ceil(2) {
            *v *= 2.0;
        } else {
            *v = Complex64::new(0.0, 0.0);
        }
    }
    fft::fft(&spec, true)
}

/// Envelope of a real RF image (`Rx x Rz`), computed per axial line.
pub fn envelope(rf_image: &Array2<f64>) -> Result<Array2<f64>> {
    let (rx, rz) = rf_image.dim();
    if rz < 4 {
        return Err(Error::InvalidArgument(format!("envelope needs at least 4 axial samples, got {rz}")));
    }
    let mut out = Array2::zeros((rx, rz));
    for (ix, line) in rf_image.axis_iter(Axis(0)).enumerate() {
        let a = analytic_signal(&line.to_vec());
        for (iz, v) in a.into_iter().enumerate() {
            out[[ix, iz]] = v.norm();
        }
    }
    Ok(out)
}

/// Envelope of an image that is already analytic (IQ): the modulus.
pub fn envelope_iq(image: &Array2<Complex64>) -> Array2<f64> {
    image.mapv(|v| v.norm())
}

/// `20 log10(envelope / max)` clamped to `[-dynamic_range_db, 0]`.
pub fn log_compress(envelope: &Array2<f64>, dynamic_range_db: f64) -> Result<Array2<f64>> {
    if !(dynamic_range_db > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "dynamic range must be positive, got {dynamic_range_db}"
        )));
    }
    if envelope.iter().any(|v| !(*v >= 0.0)) {
        return Err(Error::InvalidArgument("envelope must be nonnegative".into()));
    }
    let max = envelope.iter().cloned().fold(0.0, f64::max);
    if !(max > 0.0) {
        return Err(Error::AllZeroEnvelope);
    }
    Ok(envelope.mapv(|v| {
        if v == 0.0 {
            -dynamic_range_db
        } else {
            (20.0 * (v / max).log10()).clamp(-dynamic_range_db, 0.0)
        }
    }))
}
