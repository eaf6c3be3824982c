//! Domain types shared by every stage of the pipeline.
//!
//! Coordinates are 2-D: `x` is lateral, `z` is axial (depth), both in meters.
//! The origin sits at the lateral center of the array face, so a pixel in
//! front of the array always has `z > 0`.

use ndarray::{Array2, Array3};
use num_complex::Complex64;

use crate::error::{Error, Result};

/// A point in the imaging plane (meters).
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Point {
    pub x: f64,
    pub z: f64,
}

impl Point {
    pub const fn new(x: f64, z: f64) -> Self {
        Self { x, z }
    }

    pub fn distance(self, other: Point) -> f64 {
        (self.x - other.x).hypot(self.z - other.z)
    }
}

/// Linear transducer array.
#[derive(Debug, Clone, PartialEq)]
pub struct TransducerArray {
    element_positions: Vec<Point>,
    pitch: f64,
    center_frequency: f64,
    sampling_frequency: f64,
}

impl TransducerArray {
    /// Builds an array from explicit element positions. The pitch is taken as
    /// the spacing of the first two elements.
    pub fn new(
        element_positions: Vec<Point>,
        center_frequency: f64,
        sampling_frequency: f64,
    ) -> Result<Self> {
        if element_positions.len() < 2 {
            return Err(Error::InvalidArgument(format!(
                "array needs at least 2 elements, got {}",
                element_positions.len()
            )));
        }
        if !(center_frequency > 0.0) || !(sampling_frequency > 2.0 * center_frequency) {
            return Err(Error::InvalidArgument(format!(
                "sampling frequency {sampling_frequency} must exceed twice the center frequency {center_frequency}"
            )));
        }
        if element_positions
            .iter()
            .any(|p| !p.x.is_finite() || !p.z.is_finite())
        {
            return Err(Error::InvalidArgument("non-finite element position".into()));
        }
        if element_positions.windows(2).any(|w| !(w[1].x > w[0].x)) {
            return Err(Error::InvalidArgument(
                "element positions must be strictly increasing laterally".into(),
            ));
        }
        let pitch = element_positions[1].x - element_positions[0].x;
        Ok(Self {
            element_positions,
            pitch,
            center_frequency,
            sampling_frequency,
        })
    }

    /// Uniform linear array centered on the lateral origin, elements on `z = 0`.
    pub fn linear(
        num_elements: usize,
        pitch: f64,
        center_frequency: f64,
        sampling_frequency: f64,
    ) -> Result<Self> {
        if !(pitch > 0.0) || !pitch.is_finite() {
            return Err(Error::InvalidArgument(format!("pitch must be positive, got {pitch}")));
        }
        let mid = (num_elements as f64 - 1.0) / 2.0;
        let positions = (0..num_elements)
            .map(|c| Point::new((c as f64 - mid) * pitch, 0.0))
            .collect();
        Self::new(positions, center_frequency, sampling_frequency)
    }

    pub fn num_elements(&self) -> usize {
        self.element_positions.len()
    }

    pub fn element_positions(&self) -> &[Point] {
        &self.element_positions
    }

    pub fn element(&self, c: usize) -> Point {
        self.element_positions[c]
    }

    pub fn pitch(&self) -> f64 {
        self.pitch
    }

    pub fn center_frequency(&self) -> f64 {
        self.center_frequency
    }

    pub fn sampling_frequency(&self) -> f64 {
        self.sampling_frequency
    }
}

/// How a transmit event insonifies the medium.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TransmitScheme {
    /// Steered plane wave; angle in radians from the axial direction.
    PlaneWave { angle: f64 },
    /// Single-element transmit.
    SyntheticAperture { element: usize },
    /// Focused line transmit towards `focus`.
    FocusedLine { focus: Point },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransmitEvent {
    pub scheme: TransmitScheme,
    /// Transmit origin `r_e`.
    pub origin: Point,
    /// Emission reference time in seconds; echoes arrive at `t0 + tau`.
    pub t0: f64,
}

impl TransmitEvent {
    /// Plane wave referenced to the array center.
    pub fn plane_wave(angle: f64) -> Result<Self> {
        if !(angle.abs() < std::f64::consts::FRAC_PI_2) {
            return Err(Error::InvalidArgument(format!(
                "plane-wave angle {angle} outside (-pi/2, pi/2)"
            )));
        }
        Ok(Self {
            scheme: TransmitScheme::PlaneWave { angle },
            origin: Point::default(),
            t0: 0.0,
        })
    }

    pub fn synthetic_aperture(array: &TransducerArray, element: usize) -> Result<Self> {
        if element >= array.num_elements() {
            return Err(Error::InvalidArgument(format!(
                "element index {element} out of range for {} elements",
                array.num_elements()
            )));
        }
        Ok(Self {
            scheme: TransmitScheme::SyntheticAperture { element },
            origin: array.element(element),
            t0: 0.0,
        })
    }

    pub fn focused_line(origin: Point, focus: Point) -> Self {
        Self {
            scheme: TransmitScheme::FocusedLine { focus },
            origin,
            t0: 0.0,
        }
    }

    pub fn with_t0(mut self, t0: f64) -> Self {
        self.t0 = t0;
        self
    }

    /// Checks the scheme against an array.
    pub fn check(&self, array: &TransducerArray) -> Result<()> {
        match self.scheme {
            TransmitScheme::PlaneWave { angle } if !(angle.abs() < std::f64::consts::FRAC_PI_2) => {
                Err(Error::InvalidArgument(format!("plane-wave angle {angle} outside (-pi/2, pi/2)")))
            }
            TransmitScheme::SyntheticAperture { element } if element >= array.num_elements() => {
                Err(Error::InvalidArgument(format!("element index {element} out of range")))
            }
            _ => Ok(()),
        }
    }
}

/// Raw channel recordings, shape `E x C x Nt` (event, channel, time).
#[derive(Debug, Clone, PartialEq)]
pub struct RfDataCube {
    pub samples: Array3<f64>,
    pub sampling_frequency: f64,
    pub speed_of_sound: f64,
    pub center_frequency: f64,
    pub events: Vec<TransmitEvent>,
}

impl RfDataCube {
    pub fn num_events(&self) -> usize {
        self.samples.dim().0
    }

    pub fn num_channels(&self) -> usize {
        self.samples.dim().1
    }

    pub fn num_samples(&self) -> usize {
        self.samples.dim().2
    }
}

/// Checks every cube invariant. Pure; calling it twice gives the same answer.
pub fn validate(cube: &RfDataCube) -> Result<()> {
    let (e, c, nt) = cube.samples.dim();
    if e != cube.events.len() {
        return Err(Error::DimensionMismatch(format!(
            "cube has {e} events but {} event descriptors",
            cube.events.len()
        )));
    }
    if nt == 0 || c == 0 {
        return Err(Error::DimensionMismatch(format!(
            "cube shape {e}x{c}x{nt} has an empty axis"
        )));
    }
    if !(cube.speed_of_sound > 0.0) || !cube.speed_of_sound.is_finite() {
        return Err(Error::NonPositiveSpeed(cube.speed_of_sound));
    }
    if !(cube.sampling_frequency > 0.0) || !cube.sampling_frequency.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "sampling frequency must be positive, got {}",
            cube.sampling_frequency
        )));
    }
    if let Some(((ie, ic, it), _)) = cube.samples.indexed_iter().find(|(_, v)| !v.is_finite()) {
        return Err(Error::NonFiniteSample(format!("[{ie}, {ic}, {it}]")));
    }
    Ok(())
}

/// Rectilinear pixel grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ImagingGrid {
    lateral: Vec<f64>,
    axial: Vec<f64>,
}

impl ImagingGrid {
    pub fn new(lateral: Vec<f64>, axial: Vec<f64>) -> Result<Self> {
        if lateral.is_empty() || axial.is_empty() {
            return Err(Error::InvalidArgument("grid needs at least one pixel per axis".into()));
        }
        let increasing = |v: &[f64]| v.windows(2).all(|w| w[1] > w[0]) && v.iter().all(|x| x.is_finite());
        if !increasing(&lateral) || !increasing(&axial) {
            return Err(Error::InvalidArgument("grid coordinates must be finite and strictly increasing".into()));
        }
        if axial[0] <= 0.0 {
            return Err(Error::InvalidArgument(format!(
                "axial coordinates must be positive, first is {}",
                axial[0]
            )));
        }
        Ok(Self { lateral, axial })
    }

    /// `nx` lateral points on `[x0, x1]`, `nz` axial points on `[z0, z1]`.
    pub fn uniform(x0: f64, x1: f64, nx: usize, z0: f64, z1: f64, nz: usize) -> Result<Self> {
        let span = |a: f64, b: f64, n: usize| -> Vec<f64> {
            if n == 1 {
                vec![a]
            } else {
                (0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect()
            }
        };
        Self::new(span(x0, x1, nx), span(z0, z1, nz))
    }

    pub fn lateral(&self) -> &[f64] {
        &self.lateral
    }

    pub fn axial(&self) -> &[f64] {
        &self.axial
    }

    /// `(Rx, Rz)`.
    pub fn shape(&self) -> (usize, usize) {
        (self.lateral.len(), self.axial.len())
    }

    pub fn point(&self, ix: usize, iz: usize) -> Point {
        Point::new(self.lateral[ix], self.axial[iz])
    }

    /// Lateral spacing, or zero for a single column.
    pub fn lateral_spacing(&self) -> f64 {
        if self.lateral.len() < 2 {
            0.0
        } else {
            self.lateral[1] - self.lateral[0]
        }
    }

    pub fn axial_spacing(&self) -> f64 {
        if self.axial.len() < 2 {
            0.0
        } else {
            self.axial[1] - self.axial[0]
        }
    }
}

/// Time-of-flight corrected channel vectors, shape `C x Rx x Rz`.
#[derive(Debug, Clone, PartialEq)]
pub struct FocusedTensor {
    pub values: Array3<Complex64>,
    pub grid: ImagingGrid,
    /// `Some(e)` for a single event, `None` when events were coherently summed.
    pub event: Option<usize>,
}

impl FocusedTensor {
    pub fn new(values: Array3<Complex64>, grid: ImagingGrid, event: Option<usize>) -> Result<Self> {
        let (_, rx, rz) = values.dim();
        if (rx, rz) != grid.shape() {
            return Err(Error::ShapeMismatch(format!(
                "focused values are {rx}x{rz}, grid is {:?}",
                grid.shape()
            )));
        }
        if values.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
            return Err(Error::NonFiniteSample("focused tensor".into()));
        }
        Ok(Self { values, grid, event })
    }

    pub fn num_channels(&self) -> usize {
        self.values.dim().0
    }

    /// Channel vector `y_r` at one pixel.
    pub fn channel_vector(&self, ix: usize, iz: usize) -> Vec<Complex64> {
        self.values.slice(ndarray::s![.., ix, iz]).to_vec()
    }
}

/// Per-pixel reflectivity estimate with its envelope and optional dB view.
#[derive(Debug, Clone, PartialEq)]
pub struct BeamformedImage {
    pub rf: Array2<Complex64>,
    pub envelope: Array2<f64>,
    pub log_db: Option<Array2<f64>>,
    pub grid: ImagingGrid,
}

impl BeamformedImage {
    pub fn from_rf(rf: Array2<Complex64>, grid: ImagingGrid) -> Result<Self> {
        if rf.dim() != grid.shape() {
            return Err(Error::ShapeMismatch(format!(
                "image is {:?}, grid is {:?}",
                rf.dim(),
                grid.shape()
            )));
        }
        let envelope = rf.mapv(|v| v.norm());
        Ok(Self {
            rf,
            envelope,
            log_db: None,
            grid,
        })
    }

    /// Adds the log-compressed view of the envelope.
    pub fn with_log(mut self, dynamic_range_db: f64) -> Result<Self> {
        self.log_db = Some(crate::tof::log_compress(&self.envelope, dynamic_range_db)?);
        Ok(self)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Scatterer {
    pub x: f64,
    pub z: f64,
    pub amplitude: f64,
}

/// Ground-truth point reflectors for the simulator.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ScattererField {
    scatterers: Vec<Scatterer>,
}

impl ScattererField {
    pub fn new(scatterers: Vec<Scatterer>) -> Result<Self> {
        for (i, s) in scatterers.iter().enumerate() {
            if !(s.z > 0.0) || !s.x.is_finite() || !s.z.is_finite() || !s.amplitude.is_finite() {
                return Err(Error::InvalidArgument(format!(
                    "scatterer {i} at ({}, {}) amplitude {} violates z > 0 / finiteness",
                    s.x, s.z, s.amplitude
                )));
            }
        }
        Ok(Self { scatterers })
    }

    pub fn scatterers(&self) -> &[Scatterer] {
        &self.scatterers
    }

    pub fn len(&self) -> usize {
        self.scatterers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scatterers.is_empty()
    }

    /// Union of two fields.
    pub fn union(&self, other: &ScattererField) -> ScattererField {
        let mut scatterers = self.scatterers.clone();
        scatterers.extend_from_slice(&other.scatterers);
        ScattererField { scatterers }
    }

    pub fn scaled(&self, k: f64) -> ScattererField {
        ScattererField {
            scatterers: self
                .scatterers
                .iter()
                .map(|s| Scatterer {
                    amplitude: s.amplitude * k,
                    ..*s
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WindowKind {
    Rectangular,
    Hanning,
    Hamming,
}

impl std::str::FromStr for WindowKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rect" | "rectangular" => Ok(Self::Rectangular),
            "hanning" | "hann" => Ok(Self::Hanning),
            "hamming" => Ok(Self::Hamming),
            other => Err(Error::Parse(format!("unknown apodization window {other:?}"))),
        }
    }
}

/// Receive apodization weights, peak-normalized to 1.
#[derive(Debug, Clone, PartialEq)]
pub struct ApodizationWindow {
    kind: WindowKind,
    weights: Vec<f64>,
}

impl ApodizationWindow {
    pub fn new(kind: WindowKind, num_channels: usize) -> Result<Self> {
        if num_channels < 2 {
            return Err(Error::InvalidArgument(format!(
                "apodization needs at least 2 channels, got {num_channels}"
            )));
        }
        let denom = (num_channels - 1) as f64;
        // evaluate on the mirrored index so both halves are bit-identical
        let phase = |c: usize| {
            let c = c.min(num_channels - 1 - c);
            (2.0 * std::f64::consts::PI * c as f64 / denom).cos()
        };
        let raw: Vec<f64> = match kind {
            WindowKind::Rectangular => vec![1.0; num_channels],
            WindowKind::Hanning => (0..num_channels).map(|c| 0.5 - 0.5 * phase(c)).collect(),
            WindowKind::Hamming => (0..num_channels).map(|c| 0.54 - 0.46 * phase(c)).collect(),
        };
        let peak = raw.iter().cloned().fold(0.0, f64::max);
        if peak == 0.0 {
            // a two-element Hanning window is identically zero
            return Ok(Self {
                kind,
                weights: vec![1.0; num_channels],
            });
        }
        let weights: Vec<f64> = raw.iter().map(|w| (w / peak).max(0.0)).collect();
        Ok(Self { kind, weights })
    }

    /// Wraps explicit weights (used for ad-hoc apodization profiles).
    pub fn custom(weights: Vec<f64>) -> Result<Self> {
        if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::InvalidArgument("apodization weights must be finite and nonnegative".into()));
        }
        Ok(Self {
            kind: WindowKind::Rectangular,
            weights,
        })
    }

    pub fn kind(&self) -> WindowKind {
        self.kind
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }
}
