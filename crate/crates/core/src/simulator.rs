//! Linear point-scatterer forward model.
//!
//! Each channel trace is a sum of delayed copies of an analytic Gaussian
//! pulse, one per scatterer, plus optional white Gaussian noise. There is no
//! attenuation, directivity or multiple scattering: the output is exactly the
//! linear model the beamformers assume.

use ndarray::Array3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::tof::round_trip_delay;
use crate::types::{Point, RfDataCube, Scatterer, ScattererField, TransducerArray, TransmitEvent};

/// Transmit pulse: Gaussian-windowed cosine.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PulseModel {
    pub center_frequency: f64,
    pub fractional_bandwidth: f64,
    pub amplitude: f64,
}

impl PulseModel {
    pub fn new(center_frequency: f64, fractional_bandwidth: f64, amplitude: f64) -> Result<Self> {
        if !(center_frequency > 0.0) || !center_frequency.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "pulse center frequency must be positive, got {center_frequency}"
            )));
        }
        if !(fractional_bandwidth > 0.0 && fractional_bandwidth < 2.0) {
            return Err(Error::InvalidArgument(format!(
                "fractional bandwidth must lie in (0, 2), got {fractional_bandwidth}"
            )));
        }
        Ok(Self {
            center_frequency,
            fractional_bandwidth,
            amplitude,
        })
    }

    /// Standard deviation of the Gaussian envelope in seconds.
    pub fn sigma_t(&self) -> f64 {
        (2.0 * std::f64::consts::LN_2).sqrt()
            / (std::f64::consts::PI * self.center_frequency * self.fractional_bandwidth)
    }
}

/// `amplitude * exp(-t^2 / (2 sigma_t^2)) * cos(2 pi f0 t)`.
pub fn gaussian_pulse(pulse: &PulseModel, t: f64) -> f64 {
    let s = pulse.sigma_t();
    pulse.amplitude
        * (-t * t / (2.0 * s * s)).exp()
        * (2.0 * std::f64::consts::PI * pulse.center_frequency * t).cos()
}

/// Acquisition settings that are not part of the array or the events.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimulationParams {
    pub speed_of_sound: f64,
    pub num_samples: usize,
    pub noise_std: f64,
    pub seed: u64,
}

/// Pulse support is truncated at this many envelope standard deviations.
const PULSE_SUPPORT_SIGMAS: f64 = 8.0;

/// Synthesizes an `E x C x Nt` cube.
///
/// Noise for trace `(e, c)` comes from its own ChaCha stream
/// (`stream = e * C + c`) so the result does not depend on how traces are
/// scheduled across threads.
pub fn simulate(
    array: &TransducerArray,
    events: &[TransmitEvent],
    field: &ScattererField,
    pulse: &PulseModel,
    params: &SimulationParams,
) -> Result<RfDataCube> {
    if events.is_empty() {
        return Err(Error::EmptyEvents);
    }
    for ev in events {
        ev.check(array)?;
    }
    let v = params.speed_of_sound;
    if !(v > 0.0) || !v.is_finite() {
        return Err(Error::NonPositiveSpeed(v));
    }
    if !(params.noise_std >= 0.0) || !params.noise_std.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "noise_std must be finite and nonnegative, got {}",
            params.noise_std
        )));
    }
    if params.num_samples == 0 {
        return Err(Error::InvalidArgument("num_samples must be at least 1".into()));
    }
    let fs = array.sampling_frequency();
    let nt = params.num_samples;
    let nc = array.num_elements();
    let ne = events.len();

    // arrival times per (event, channel, scatterer), checked against the window
    let mut arrivals = vec![0.0; ne * nc * field.len()];
    let mut latest: f64 = 0.0;
    for (e, ev) in events.iter().enumerate() {
        for c in 0..nc {
            for (s, sc) in field.scatterers().iter().enumerate() {
                let t = ev.t0 + round_trip_delay(ev, array.element(c), crate::types::Point::new(sc.x, sc.z), v);
                latest = latest.max(t * fs);
                arrivals[(e * nc + c) * field.len() + s] = t;
            }
        }
    }
    if latest > (nt - 1) as f64 {
        return Err(Error::DepthExceedsWindow {
            needed: latest,
            available: nt,
        });
    }

    let half_width = PULSE_SUPPORT_SIGMAS * pulse.sigma_t() * fs;
    let nscat = field.len();
    let traces: Vec<Vec<f64>> = (0..ne * nc)
        .into_par_iter()
        .map(|trace| {
            let mut out = vec![0.0; nt];
            let times = &arrivals[trace * nscat..(trace + 1) * nscat];
            for (sc, &t_arr) in field.scatterers().iter().zip(times) {
                let center = t_arr * fs;
                let lo = (center - half_width).ceil().max(0.0) as usize;
                let hi = ((center + half_width).floor() as isize).min(nt as isize - 1);
                if hi < lo as isize {
                    continue;
                }
                for (n, o) in out.iter_mut().enumerate().take(hi as usize + 1).skip(lo) {
                    *o += sc.amplitude * gaussian_pulse(pulse, n as f64 / fs - t_arr);
                }
            }
            if params.noise_std > 0.0 {
                let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
                rng.set_stream(trace as u64);
                let mut gauss = BoxMuller::default();
                for o in out.iter_mut() {
                    *o += params.noise_std * gauss.next(&mut rng);
                }
            }
            out
        })
        .collect();

    let mut samples = Array3::zeros((ne, nc, nt));
    for (trace, data) in traces.into_iter().enumerate() {
        let (e, c) = (trace / nc, trace % nc);
        for (n, x) in data.into_iter().enumerate() {
            samples[[e, c, n]] = x;
        }
    }
    Ok(RfDataCube {
        samples,
        sampling_frequency: fs,
        speed_of_sound: v,
        center_frequency: array.center_frequency(),
        events: events.to_vec(),
    })
}

/// Box-Muller transform producing standard normals in pairs.
#[derive(Debug, Default)]
pub struct BoxMuller {
    spare: Option<f64>,
}

impl BoxMuller {
    pub fn next<R: Rng>(&mut self, rng: &mut R) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        // u1 in (0, 1] keeps the log finite
        let u1 = 1.0 - rng.gen::<f64>();
        let u2 = rng.gen::<f64>();
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = 2.0 * std::f64::consts::PI * u2;
        self.spare = Some(r * theta.sin());
        r * theta.cos()
    }
}

/// Speckle: `count` scatterers with standard normal amplitudes, uniform in
/// the rectangle `[x0, x1] x [z0, z1]` but outside an anechoic disk.
pub fn cyst_phantom(
    x_range: (f64, f64),
    z_range: (f64, f64),
    count: usize,
    cyst_center: Point,
    cyst_radius: f64,
    seed: u64,
) -> Result<ScattererField> {
    let (x0, x1) = x_range;
    let (z0, z1) = z_range;
    if !(x1 > x0 && z1 > z0) {
        return Err(Error::InvalidArgument("phantom region must have positive extent".into()));
    }
    if !(cyst_radius >= 0.0) {
        return Err(Error::InvalidArgument(format!("cyst radius must be nonnegative, got {cyst_radius}")));
    }
    let disk = std::f64::consts::PI * cyst_radius * cyst_radius;
    if disk >= 0.9 * (x1 - x0) * (z1 - z0) {
        return Err(Error::InvalidArgument("cyst covers the phantom region".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut gauss = BoxMuller::default();
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let x = x0 + (x1 - x0) * rng.gen::<f64>();
        let z = z0 + (z1 - z0) * rng.gen::<f64>();
        if Point::new(x, z).distance(cyst_center) <= cyst_radius {
            continue;
        }
        out.push(Scatterer { x, z, amplitude: gauss.next(&mut rng) });
    }
    ScattererField::new(out)
}
