//! `usp` command-line front end.
//!
//! Every subcommand resolves a [`config::PipelineConfig`] from defaults, an
//! optional `--config` file, `--set key=value` overrides and its own flags,
//! in that order, and writes the result next to its outputs as
//! `<command>.config.txt`.

pub mod config;
pub mod pipeline;

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use ndarray::Array2;
use num_complex::Complex64;

use usp_core::clutter::{build_casorati, power_doppler, rpca, svt, unbuild_casorati, CasoratiMatrix, RpcaParams};
use usp_core::io;
use usp_core::metrics::{cnr, contrast_db, fwhm, RegionSpec};
use usp_core::numerics::LinearOperator;
use usp_core::sparse::{deconvolve_with, recover_scanline_with, IstaOptions, ScanlineModel};
use usp_core::ulm::{accumulate, detect_centroids, gaussian_psf, localize_sparse_with, lr_to_hr, Detection, LocalizationSet, UlmOperator};
use usp_core::ImagingGrid;

use config::PipelineConfig;
use pipeline::{Method, PResult, PipelineError};

#[derive(Parser, Debug)]
#[command(name = "usp", version, about = "Model-based ultrasound reconstruction toolkit")]
pub struct Cli {
    /// Worker threads for pixel and frame loops; outputs do not depend on it.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// Output directory (created if missing).
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
    /// Configuration file of `key = value` lines.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override a single configuration key, `key=value`; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    /// Seed for all random draws (`sim.seed`).
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Simulate an RF cube from a phantom or a scatterer file; writes rf.urf.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Scatterer file (`x z amplitude` per line) instead of the built-in phantom.
        #[arg(long)]
        scatterers: Option<PathBuf>,
        #[arg(long, value_enum)]
        phantom: Option<Phantom>,
        #[arg(long)]
        noise_std: Option<f64>,
    },
    /// Beamform a URF1 cube; writes image.uim (envelope) and image.pgm.
    Beamform {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_enum)]
        method: Option<BfMethod>,
        #[arg(long, value_enum)]
        apod: Option<Apod>,
        #[arg(long)]
        iters: Option<usize>,
        #[arg(long = "sub-L")]
        sub_l: Option<usize>,
        #[arg(long)]
        eps: Option<f64>,
        #[arg(long)]
        dyn_range: Option<f64>,
    },
    /// Sub-Nyquist scanline recovery from a bin list; writes scanline.csv.
    Recover {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        bins: PathBuf,
        #[arg(long)]
        lambda: Option<f64>,
    },
    /// l1 deconvolution of a UIM1 image by a PSF matrix; writes deconv.uim/.pgm.
    Deconvolve {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        psf: PathBuf,
        #[arg(long)]
        lambda: Option<f64>,
    },
    /// Tissue/blood separation of a UIM1 sequence.
    Clutter {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_enum)]
        method: Option<ClutterMethod>,
        #[arg(long)]
        lambda1: Option<f64>,
        #[arg(long)]
        lambda2: Option<f64>,
        #[arg(long)]
        iters: Option<usize>,
    },
    /// Localization microscopy on a UIM1 sequence of low-resolution frames.
    Ulm {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        frames: PathBuf,
        #[arg(long)]
        lambda: Option<f64>,
        #[arg(long)]
        factor: Option<usize>,
        #[arg(long, value_enum)]
        method: Option<UlmMethod>,
    },
    /// Contrast, CNR and FWHM of a UIM1 envelope image; writes metrics.csv.
    Metrics {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        input: PathBuf,
        /// Target region `x0,z0,x1,z1` in meters.
        #[arg(long, allow_hyphen_values = true)]
        region_a: Option<String>,
        /// Reference region `x0,z0,x1,z1` in meters.
        #[arg(long, allow_hyphen_values = true)]
        region_b: Option<String>,
        /// Depth in meters of the lateral profile used for FWHM.
        #[arg(long)]
        fwhm_depth: Option<f64>,
    },
    /// Cyst phantom through DAS, MV, CF and iMAP, with a metrics table.
    Demo {
        #[command(flatten)]
        common: Common,
    },
}

#[derive(ValueEnum, Clone, Copy, Debug)]
pub enum Phantom {
    Cyst,
    Point,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
pub enum BfMethod {
    Das,
    Mv,
    Wiener,
    Cf,
    Imap,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
pub enum Apod {
    Rect,
    Hanning,
    Hamming,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
pub enum ClutterMethod {
    Svt,
    Rpca,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
pub enum UlmMethod {
    Sparse,
    Centroid,
}

fn value_name<T: ValueEnum>(v: T) -> String {
    v.to_possible_value().map(|p| p.get_name().to_string()).unwrap_or_default()
}

/// Parses `argv` (program name first), runs the command, prints any error to
/// stderr and returns the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let result = match cli.threads {
        Some(0) => Err(PipelineError::Usage("--threads must be at least 1".into())),
        Some(n) => match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
            Ok(pool) => pool.install(|| execute(&cli.command)),
            Err(e) => Err(PipelineError::Usage(format!("--threads: {e}"))),
        },
        None => execute(&cli.command),
    };
    match result {
        Ok(()) => 0,
        Err(PipelineError::Usage(m)) => {
            eprintln!("usage error: {m}");
            1
        }
        Err(PipelineError::Data(e)) => {
            eprintln!("error: {e}");
            2
        }
    }
}

fn resolve(common: &Common, flags: &[(&str, Option<String>)]) -> PResult<PipelineConfig> {
    let mut cfg = PipelineConfig::default();
    if let Some(path) = &common.config {
        let text = std::fs::read_to_string(path)
            .map_err(|e| PipelineError::Usage(format!("--config {}: {e}", path.display())))?;
        cfg.merge_text(&text).map_err(|e| PipelineError::Usage(format!("--config {}: {e}", path.display())))?;
    }
    for s in &common.set {
        cfg.merge_assignment(s).map_err(|e| PipelineError::Usage(format!("--set: {e}")))?;
    }
    if let Some(seed) = common.seed {
        cfg.set("sim.seed", seed.to_string())?;
    }
    for (key, value) in flags {
        if let Some(v) = value {
            cfg.set(key, v.clone())?;
        }
    }
    Ok(cfg)
}

fn prepare_out(common: &Common, name: &str, cfg: &PipelineConfig) -> PResult<PathBuf> {
    std::fs::create_dir_all(&common.out)
        .map_err(|e| PipelineError::Data(usp_core::Error::Io(format!("{}: {e}", common.out.display()))))?;
    io::write_file(&common.out.join(format!("{name}.config.txt")), cfg.to_text().as_bytes())?;
    Ok(common.out.clone())
}

fn read_input(path: &Path, flag: &str) -> PResult<Vec<u8>> {
    std::fs::read(path).map_err(|e| PipelineError::Usage(format!("{flag} {}: {e}", path.display())))
}

fn read_text(path: &Path, flag: &str) -> PResult<String> {
    String::from_utf8(read_input(path, flag)?)
        .map_err(|_| PipelineError::Data(usp_core::Error::Parse(format!("{} is not UTF-8 text", path.display()))))
}

fn write(dir: &Path, name: &str, bytes: &[u8]) -> PResult<()> {
    Ok(io::write_file(&dir.join(name), bytes)?)
}

fn s<T: ToString>(v: Option<T>) -> Option<String> {
    v.map(|v| v.to_string())
}

fn execute(cmd: &Command) -> PResult<()> {
    match cmd {
        Command::Simulate { common, scatterers, phantom, noise_std } => {
            let cfg = resolve(common, &[("sim.phantom", phantom.map(value_name)), ("sim.noise_std", s(*noise_std))])?;
            let out = prepare_out(common, "simulate", &cfg)?;
            let field = match scatterers {
                Some(p) => io::parse_scatterers(&read_text(p, "--scatterers")?)?,
                None => pipeline::phantom(&cfg)?,
            };
            let cube = pipeline::simulate_cube(&cfg, &field)?;
            write(&out, "rf.urf", &io::encode_urf(&io::UrfData::from_cube(&cube)))?;
            write(&out, "scatterers.txt", io::format_scatterers(&field).as_bytes())
        }
        Command::Beamform { common, input, method, apod, iters, sub_l, eps, dyn_range } => {
            let cfg = resolve(
                common,
                &[
                    ("bf.method", method.map(value_name)),
                    ("bf.apod", apod.map(value_name)),
                    ("bf.iters", s(*iters)),
                    ("bf.sub_l", s(*sub_l)),
                    ("bf.eps", s(*eps)),
                    ("bf.dyn_range", s(*dyn_range)),
                ],
            )?;
            let method = Method::parse(cfg.raw("bf.method"))?;
            let bytes = read_input(input, "--input")?;
            let out = prepare_out(common, "beamform", &cfg)?;
            let data = io::decode_urf(&bytes)?;
            let array = pipeline::array(&cfg)?;
            if data.samples.dim().1 != array.num_elements() {
                return Err(PipelineError::Data(usp_core::Error::DimensionMismatch(format!(
                    "file has {} channels, sim.elements is {}",
                    data.samples.dim().1,
                    array.num_elements()
                ))));
            }
            let cube = data.into_cube(pipeline::events(&cfg)?)?;
            let focused = pipeline::focus_cube(&cfg, &array, &cube)?;
            let img = pipeline::beamform_with(&cfg, &focused, method)?;
            write(&out, "image.uim", &io::encode_uim(&img.envelope))?;
            let db = img.log_db.as_ref().expect("log view requested");
            write(&out, "image.pgm", &io::encode_pgm_db(db, cfg.get("bf.dyn_range")?))
        }
        Command::Recover { common, bins, lambda } => {
            let cfg = resolve(common, &[("sparse.lambda", s(*lambda))])?;
            let text = read_text(bins, "--bins")?;
            let out = prepare_out(common, "recover", &cfg)?;
            let file = io::parse_bins(&text)?;
            let model = ScanlineModel::new(file.pulse_spectrum.clone(), file.bins.clone(), file.n)?;
            let res = recover_scanline_with(&model, &file.measurements, cfg.get("sparse.lambda")?, ista_options(&cfg, "sparse")?)?;
            let rows: Vec<Vec<String>> = res.x.iter().enumerate().map(|(i, v)| vec![i.to_string(), v.to_string()]).collect();
            write(&out, "scanline.csv", io::format_csv(&["index", "value"], &rows).as_bytes())
        }
        Command::Deconvolve { common, input, psf, lambda } => {
            let cfg = resolve(common, &[("sparse.lambda", s(*lambda))])?;
            let bytes = read_input(input, "--input")?;
            let psf_text = read_text(psf, "--psf")?;
            let out = prepare_out(common, "deconvolve", &cfg)?;
            let image = single_frame(io::decode_uim(&bytes)?)?;
            let psf = io::parse_matrix(&psf_text)?;
            let (x, _) = deconvolve_with(&image, &psf, cfg.get("sparse.lambda")?, ista_options(&cfg, "sparse")?)?;
            write(&out, "deconv.uim", &io::encode_uim(&x))?;
            write(&out, "deconv.pgm", &io::encode_pgm_linear(&x.mapv(f64::abs)))
        }
        Command::Clutter { common, input, method, lambda1, lambda2, iters } => {
            let cfg = resolve(
                common,
                &[
                    ("clutter.method", method.map(value_name)),
                    ("clutter.lambda1", s(*lambda1)),
                    ("clutter.lambda2", s(*lambda2)),
                    ("clutter.iters", s(*iters)),
                ],
            )?;
            let bytes = read_input(input, "--input")?;
            let out = prepare_out(common, "clutter", &cfg)?;
            let frames: Vec<Array2<Complex64>> =
                io::decode_uim(&bytes)?.into_iter().map(|f| f.mapv(|v| Complex64::new(v, 0.0))).collect();
            let y = build_casorati(&frames)?;
            let mut params = RpcaParams::defaults_for(&y)?;
            let l1: f64 = cfg.get("clutter.lambda1")?;
            let l2: f64 = cfg.get("clutter.lambda2")?;
            if l1 > 0.0 {
                params.lambda1 = l1;
                params.lambda2 = 0.5 * l1;
            }
            if l2 > 0.0 {
                params.lambda2 = l2;
            }
            params.mu1 = cfg.get("clutter.mu1")?;
            params.mu2 = cfg.get("clutter.mu2")?;
            params.max_iters = cfg.get("clutter.iters")?;
            params.tol = cfg.get("clutter.tol")?;
            let (tissue, blood) = match cfg.raw("clutter.method") {
                "svt" => {
                    let t = svt(&y.data, params.lambda1)?;
                    let b = &y.data - &t;
                    (t, b)
                }
                "rpca" => {
                    let r = rpca(&y, &params)?;
                    (r.tissue, r.blood)
                }
                other => return Err(PipelineError::Usage(format!("config key `clutter.method`: unknown method `{other}`"))),
            };
            let wrap = |data| CasoratiMatrix { data, frame_shape: y.frame_shape };
            let real = |m: CasoratiMatrix| -> PResult<Vec<Array2<f64>>> {
                Ok(unbuild_casorati(&m)?.into_iter().map(|f| f.mapv(|v| v.re)).collect())
            };
            let blood = wrap(blood);
            let pd = power_doppler(&blood);
            write(&out, "tissue.uim", &io::encode_uim_frames(&real(wrap(tissue))?)?)?;
            write(&out, "blood.uim", &io::encode_uim_frames(&real(blood)?)?)?;
            write(&out, "power_doppler.uim", &io::encode_uim(&pd))?;
            write(&out, "power_doppler.pgm", &io::encode_pgm_linear(&pd))
        }
        Command::Ulm { common, frames, lambda, factor, method } => {
            let cfg = resolve(
                common,
                &[("ulm.lambda", s(*lambda)), ("ulm.factor", s(*factor)), ("ulm.method", method.map(value_name))],
            )?;
            let bytes = read_input(frames, "--frames")?;
            let out = prepare_out(common, "ulm", &cfg)?;
            let frames = io::decode_uim(&bytes)?;
            let f: usize = cfg.get("ulm.factor")?;
            if f == 0 {
                return Err(PipelineError::Usage("config key `ulm.factor` must be at least 1".into()));
            }
            let (lh, lw) = frames[0].dim();
            let hr = (lh * f, lw * f);
            let sets = localize_frames(&cfg, &frames)?;
            let density = accumulate(&sets, hr);
            let mut rows = Vec::new();
            for (t, set) in sets.iter().enumerate() {
                for d in &set.detections {
                    rows.push(vec![t.to_string(), d.x.to_string(), d.z.to_string(), d.intensity.to_string()]);
                }
            }
            write(&out, "density.uim", &io::encode_uim(&density))?;
            write(&out, "density.pgm", &io::encode_pgm_linear(&density))?;
            write(&out, "detections.csv", io::format_csv(&["frame", "x", "z", "intensity"], &rows).as_bytes())
        }
        Command::Metrics { common, input, region_a, region_b, fwhm_depth } => {
            let cfg = resolve(common, &[])?;
            let bytes = read_input(input, "--input")?;
            let out = prepare_out(common, "metrics", &cfg)?;
            let env = single_frame(io::decode_uim(&bytes)?)?;
            let grid = pipeline::grid(&cfg)?;
            let name = input.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            let mut rows = Vec::new();
            match (region_a, region_b) {
                (Some(a), Some(b)) => {
                    let a = parse_region(a, "--region-a")?;
                    let b = parse_region(b, "--region-b")?;
                    rows.push(vec!["contrast_db".into(), name.clone(), contrast_db(&env, &grid, &a, &b)?.to_string()]);
                    rows.push(vec!["cnr".into(), name.clone(), cnr(&env, &grid, &a, &b)?.to_string()]);
                }
                (None, None) => {}
                _ => return Err(PipelineError::Usage("--region-a and --region-b must be given together".into())),
            }
            if let Some(z) = fwhm_depth {
                let w = lateral_fwhm(&env, &grid, *z)?;
                rows.push(vec!["fwhm_m".into(), name.clone(), w.to_string()]);
            }
            let csv = io::format_csv(&["metric", "name", "value"], &rows);
            print!("{csv}");
            write(&out, "metrics.csv", csv.as_bytes())
        }
        Command::Demo { common } => {
            let cfg = resolve(common, &[])?;
            let out = prepare_out(common, "demo", &cfg)?;
            let csv = run_demo(&cfg, &out)?;
            print!("{csv}");
            Ok(())
        }
    }
}

fn single_frame(mut frames: Vec<Array2<f64>>) -> PResult<Array2<f64>> {
    if frames.len() != 1 {
        return Err(PipelineError::Data(usp_core::Error::ShapeMismatch(format!(
            "expected a single image, found {} frames",
            frames.len()
        ))));
    }
    Ok(frames.remove(0))
}

fn ista_options(cfg: &PipelineConfig, ns: &str) -> PResult<IstaOptions> {
    Ok(IstaOptions {
        max_iters: cfg.get(&format!("{ns}.max_iters"))?,
        tol: cfg.get(&format!("{ns}.tol"))?,
        ..IstaOptions::default()
    })
}

fn parse_region(text: &str, flag: &str) -> PResult<RegionSpec> {
    let v: Result<Vec<f64>, _> = text.split(',').map(|s| s.trim().parse::<f64>()).collect();
    match v.as_deref() {
        Ok([x0, z0, x1, z1]) => Ok(RegionSpec::new(*x0, *z0, *x1, *z1)),
        _ => Err(PipelineError::Usage(format!("{flag}: expected x0,z0,x1,z1 in meters, got `{text}`"))),
    }
}

/// FWHM of the lateral profile at the axial row nearest `depth`.
pub fn lateral_fwhm(env: &Array2<f64>, grid: &ImagingGrid, depth: f64) -> PResult<f64> {
    let iz = grid
        .axial()
        .iter()
        .enumerate()
        .min_by(|a, b| (a.1 - depth).abs().total_cmp(&(b.1 - depth).abs()))
        .map(|(i, _)| i)
        .unwrap_or(0);
    let profile: Vec<f64> = (0..grid.shape().0).map(|ix| env[[ix, iz]]).collect();
    Ok(fwhm(&profile, grid.lateral_spacing())?)
}

/// Per-frame detections in HR pixel units.
pub fn localize_frames(cfg: &PipelineConfig, frames: &[Array2<f64>]) -> PResult<Vec<LocalizationSet>> {
    use rayon::prelude::*;
    let f: usize = cfg.get("ulm.factor")?;
    let sigma: f64 = cfg.get("ulm.psf_sigma")?;
    let rel_lambda: f64 = cfg.get("ulm.lambda")?;
    let threshold: f64 = cfg.get("ulm.threshold")?;
    let radius: usize = cfg.get("ulm.radius")?;
    let options = ista_options(cfg, "ulm")?;
    let sparse = match cfg.raw("ulm.method") {
        "sparse" => true,
        "centroid" => false,
        other => return Err(PipelineError::Usage(format!("config key `ulm.method`: unknown method `{other}`"))),
    };
    let psf = gaussian_psf(sigma, (3.0 * sigma).ceil() as usize);
    frames
        .par_iter()
        .map(|frame| -> PResult<LocalizationSet> {
            let detections: Vec<Detection> = if sparse {
                let (lh, lw) = frame.dim();
                let op = UlmOperator::new(&psf, (lh * f, lw * f), f)?;
                let back = op.adjoint(&frame.iter().cloned().collect::<Vec<_>>());
                let scale = back.iter().fold(0.0f64, |m, v| m.max(v.abs()));
                let (x, _) = localize_sparse_with(frame, &psf, rel_lambda * scale, f, options)?;
                detect_centroids(&x, threshold, radius)
            } else {
                detect_centroids(frame, threshold, radius)
                    .into_iter()
                    .map(|d| Detection { x: lr_to_hr(d.x, f), z: lr_to_hr(d.z, f), intensity: d.intensity })
                    .collect()
            };
            Ok(LocalizationSet { detections })
        })
        .collect()
}

/// Regions used by the demo: inside the cyst and a speckle patch beside it.
pub fn demo_regions(cfg: &PipelineConfig) -> PResult<(RegionSpec, RegionSpec)> {
    let cx: f64 = cfg.get("sim.cyst_x")?;
    let cz: f64 = cfg.get("sim.cyst_z")?;
    let r: f64 = cfg.get("sim.cyst_radius")?;
    let h = 0.7 * r;
    Ok((RegionSpec::new(cx - h, cz - h, cx + h, cz + h), RegionSpec::new(cx + 1.5 * r, cz - h, cx + 2.9 * r, cz + h)))
}

/// Simulates the configured phantom, beamforms it with DAS, MV, CF and
/// iMAP, and writes every artifact to `out`. Returns the metrics CSV.
pub fn run_demo(cfg: &PipelineConfig, out: &Path) -> PResult<String> {
    let field = pipeline::phantom(cfg)?;
    let cube = pipeline::simulate_cube(cfg, &field)?;
    write(out, "rf.urf", &io::encode_urf(&io::UrfData::from_cube(&cube)))?;
    let array = pipeline::array(cfg)?;
    let focused = pipeline::focus_cube(cfg, &array, &cube)?;
    let grid = pipeline::grid(cfg)?;
    let (cyst, background) = demo_regions(cfg)?;
    let dr: f64 = cfg.get("bf.dyn_range")?;
    let mut rows = Vec::new();
    for method in [Method::Das, Method::Mv, Method::Cf, Method::Imap] {
        let img = pipeline::beamform_with(cfg, &focused, method)?;
        write(out, &format!("{}.uim", method.name()), &io::encode_uim(&img.envelope))?;
        let db = img.log_db.as_ref().expect("log view requested");
        write(out, &format!("{}.pgm", method.name()), &io::encode_pgm_db(db, dr))?;
        let c = contrast_db(&img.envelope, &grid, &background, &cyst)?;
        let n = cnr(&img.envelope, &grid, &background, &cyst)?;
        rows.push(vec!["contrast_db".to_string(), method.name().to_string(), format!("{c:.6}")]);
        rows.push(vec!["cnr".to_string(), method.name().to_string(), format!("{n:.6}")]);
    }
    let csv = io::format_csv(&["metric", "name", "value"], &rows);
    write(out, "metrics.csv", csv.as_bytes())?;
    Ok(csv)
}
