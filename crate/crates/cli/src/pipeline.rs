//! Builds core objects from a resolved configuration and runs the stages
//! shared by several subcommands.

use std::fmt;

use usp_core::beamform::{self, CovarianceConfig};
use usp_core::simulator::{cyst_phantom, simulate, PulseModel, SimulationParams};
use usp_core::tof::{compute_delays, focus, focus_analytic, FocusMode};
use usp_core::{
    ApodizationWindow, BeamformedImage, FocusedTensor, ImagingGrid, Point, RfDataCube, Scatterer, ScattererField,
    TransducerArray, TransmitEvent, WindowKind,
};

use crate::config::{ConfigError, PipelineConfig};

#[derive(Debug)]
pub enum PipelineError {
    /// Bad flags or configuration; exit code 1.
    Usage(String),
    /// Invalid or unprocessable data; exit code 2.
    Data(usp_core::Error),
}

impl fmt::Display for PipelineError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PipelineError::Usage(m) => f.write_str(m),
            PipelineError::Data(e) => write!(f, "{e}"),
        }
    }
}

impl From<ConfigError> for PipelineError {
    fn from(e: ConfigError) -> Self {
        PipelineError::Usage(e.0)
    }
}

impl From<usp_core::Error> for PipelineError {
    fn from(e: usp_core::Error) -> Self {
        PipelineError::Data(e)
    }
}

pub type PResult<T> = Result<T, PipelineError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Das,
    Mv,
    Wiener,
    Cf,
    Imap,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Das => "das",
            Method::Mv => "mv",
            Method::Wiener => "wiener",
            Method::Cf => "cf",
            Method::Imap => "imap",
        }
    }

    pub fn parse(s: &str) -> PResult<Self> {
        Ok(match s {
            "das" => Method::Das,
            "mv" => Method::Mv,
            "wiener" => Method::Wiener,
            "cf" => Method::Cf,
            "imap" => Method::Imap,
            _ => return Err(PipelineError::Usage(format!("config key `bf.method`: unknown method `{s}`"))),
        })
    }
}

pub fn array(cfg: &PipelineConfig) -> PResult<TransducerArray> {
    Ok(TransducerArray::linear(cfg.get("sim.elements")?, cfg.get("sim.pitch")?, cfg.get("sim.f0")?, cfg.get("sim.fs")?)?)
}

pub fn events(cfg: &PipelineConfig) -> PResult<Vec<TransmitEvent>> {
    cfg.get_list("sim.angles")?
        .into_iter()
        .map(|deg| TransmitEvent::plane_wave(deg.to_radians()).map_err(PipelineError::from))
        .collect()
}

pub fn pulse(cfg: &PipelineConfig) -> PResult<PulseModel> {
    Ok(PulseModel::new(cfg.get("sim.f0")?, cfg.get("sim.bandwidth")?, 1.0)?)
}

pub fn grid(cfg: &PipelineConfig) -> PResult<ImagingGrid> {
    let (x0, x1) = cfg.get_range("tof.x_range")?;
    let (z0, z1) = cfg.get_range("tof.z_range")?;
    Ok(ImagingGrid::uniform(x0, x1, cfg.get("tof.nx")?, z0, z1, cfg.get("tof.nz")?)?)
}

pub fn phantom(cfg: &PipelineConfig) -> PResult<ScattererField> {
    match cfg.raw("sim.phantom") {
        "cyst" => Ok(cyst_phantom(
            cfg.get_range("sim.region_x")?,
            cfg.get_range("sim.region_z")?,
            cfg.get("sim.speckle_count")?,
            Point::new(cfg.get("sim.cyst_x")?, cfg.get("sim.cyst_z")?),
            cfg.get("sim.cyst_radius")?,
            cfg.get("sim.seed")?,
        )?),
        "point" => Ok(ScattererField::new(vec![Scatterer {
            x: cfg.get("sim.point_x")?,
            z: cfg.get("sim.point_z")?,
            amplitude: 1.0,
        }])?),
        other => Err(PipelineError::Usage(format!("config key `sim.phantom`: unknown phantom `{other}`"))),
    }
}

pub fn simulate_cube(cfg: &PipelineConfig, field: &ScattererField) -> PResult<RfDataCube> {
    let params = SimulationParams {
        speed_of_sound: cfg.get("sim.speed")?,
        num_samples: cfg.get("sim.samples")?,
        noise_std: cfg.get("sim.noise_std")?,
        // the noise streams are decorrelated from the phantom draw
        seed: cfg.get::<u64>("sim.seed")?.wrapping_add(0x9e37_79b9_7f4a_7c15),
    };
    Ok(simulate(&array(cfg)?, &events(cfg)?, field, &pulse(cfg)?, &params)?)
}

/// Time-of-flight correction of all events, coherently summed.
pub fn focus_cube(cfg: &PipelineConfig, array: &TransducerArray, cube: &RfDataCube) -> PResult<FocusedTensor> {
    let grid = grid(cfg)?;
    let delays = compute_delays(array, &cube.events, &grid, cube.speed_of_sound)?;
    let f = if cfg.get::<bool>("tof.analytic")? {
        focus_analytic(cube, &delays, &grid, FocusMode::Compounded)?
    } else {
        focus(cube, &delays, &grid, FocusMode::Compounded)?
    };
    Ok(f)
}

pub fn covariance_config(cfg: &PipelineConfig, channels: usize) -> PResult<CovarianceConfig> {
    let l: usize = cfg.get("bf.sub_l")?;
    let mut c = CovarianceConfig::default_for(channels);
    if l > 0 {
        c.subaperture_length = l;
    }
    c.temporal_half_window = cfg.get("bf.k")?;
    c.loading = cfg.get("bf.eps")?;
    Ok(c)
}

pub fn apodization(cfg: &PipelineConfig, channels: usize) -> PResult<ApodizationWindow> {
    let kind: WindowKind = cfg
        .raw("bf.apod")
        .parse()
        .map_err(|_| PipelineError::Usage(format!("config key `bf.apod`: unknown window `{}`", cfg.raw("bf.apod"))))?;
    Ok(ApodizationWindow::new(kind, channels)?)
}

pub fn beamform_with(cfg: &PipelineConfig, focused: &FocusedTensor, method: Method) -> PResult<BeamformedImage> {
    let c = focused.num_channels();
    let img = match method {
        Method::Das => beamform::das(focused, &apodization(cfg, c)?)?,
        Method::Mv => beamform::mv(focused, &covariance_config(cfg, c)?)?,
        Method::Wiener => beamform::wiener(focused, &covariance_config(cfg, c)?)?,
        Method::Cf => beamform::cf_weighted_das(focused, &apodization(cfg, c)?)?,
        Method::Imap => beamform::imap(focused, cfg.get("bf.iters")?)?,
    };
    Ok(img.with_log(cfg.get("bf.dyn_range")?)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(pairs: &[(&str, &str)]) -> PipelineConfig {
        let mut c = PipelineConfig::default();
        for (k, v) in pairs {
            c.set(k, *v).unwrap();
        }
        c
    }

    #[test]
    fn method_names_round_trip() {
        for m in [Method::Das, Method::Mv, Method::Wiener, Method::Cf, Method::Imap] {
            assert_eq!(Method::parse(m.name()).unwrap(), m);
        }
        assert!(matches!(Method::parse("capon"), Err(PipelineError::Usage(_))));
    }

    #[test]
    fn angles_are_degrees() {
        let ev = events(&cfg(&[("sim.angles", "-10,0,10")])).unwrap();
        assert_eq!(ev.len(), 3);
        let pw = TransmitEvent::plane_wave(10f64.to_radians()).unwrap();
        assert_eq!(ev[2], pw);
    }

    #[test]
    fn unknown_phantom_and_window_are_usage_errors() {
        assert!(matches!(phantom(&cfg(&[("sim.phantom", "heart")])), Err(PipelineError::Usage(_))));
        assert!(matches!(apodization(&cfg(&[("bf.apod", "kaiser")]), 8), Err(PipelineError::Usage(_))));
    }

    #[test]
    fn covariance_overrides() {
        let c = covariance_config(&cfg(&[("bf.sub_l", "5"), ("bf.k", "0"), ("bf.eps", "0.1")]), 16).unwrap();
        assert_eq!((c.subaperture_length, c.temporal_half_window), (5, 0));
        assert_eq!(c.loading, 0.1);
        let d = covariance_config(&PipelineConfig::default(), 16).unwrap();
        assert_eq!(d.subaperture_length, CovarianceConfig::default_for(16).subaperture_length);
    }

    #[test]
    fn cyst_phantom_respects_the_cyst() {
        let c = PipelineConfig::default();
        let field = phantom(&c).unwrap();
        let (cx, cz, r): (f64, f64, f64) =
            (c.get("sim.cyst_x").unwrap(), c.get("sim.cyst_z").unwrap(), c.get("sim.cyst_radius").unwrap());
        assert_eq!(field.len(), c.get::<usize>("sim.speckle_count").unwrap());
        assert!(field.scatterers().iter().all(|s| (s.x - cx).hypot(s.z - cz) >= r));
    }
}
