use std::path::Path;
use std::process::{Command, Output};

use ndarray::Array2;
use num_complex::Complex64;
use usp_core::io::{self, BinsFile};

fn usp(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_usp")).args(args).arg("--out").arg(out).output().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

// keeps simulation and beamforming fast in debug builds
const SMALL: [&str; 8] = ["--set", "sim.elements=16", "--set", "tof.nx=25", "--set", "tof.nz=32", "--set", "sim.samples=1400"];

#[test]
fn unknown_flag_is_a_usage_error() {
    let o = Command::new(env!("CARGO_BIN_EXE_usp")).args(["beamform", "--bogus"]).output().unwrap();
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("--bogus"));
}

#[test]
fn unknown_config_key_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = usp(&["simulate", "--set", "sim.nope=3"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("sim.nope"));
}

#[test]
fn truncated_cube_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.urf");
    std::fs::write(&path, b"URF1\x02\x00\x00\x00\x04").unwrap();
    let o = usp(&["beamform", "--input", path.to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("truncated payload"), "{}", stderr(&o));
}

#[test]
fn simulate_beamform_metrics_chain() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let mut args = vec!["simulate", "--phantom", "point", "--seed", "3"];
    args.extend(SMALL);
    assert!(usp(&args, d).status.success());
    let rf = d.join("rf.urf");
    let mut args = vec!["beamform", "--method", "mv", "--input", rf.to_str().unwrap()];
    args.extend(SMALL);
    let o = usp(&args, d);
    assert!(o.status.success(), "{}", stderr(&o));
    let img = io::decode_uim(&std::fs::read(d.join("image.uim")).unwrap()).unwrap();
    assert_eq!(img[0].dim(), (25, 32));
    assert!(img[0].iter().all(|v| v.is_finite() && *v >= 0.0));
    assert!(d.join("image.pgm").exists());
    assert!(d.join("beamform.config.txt").exists());

    let image = d.join("image.uim");
    let mut args = vec![
        "metrics",
        "--input",
        image.to_str().unwrap(),
        "--region-a",
        "-1e-3,19e-3,1e-3,21e-3",
        "--region-b",
        "-6e-3,14e-3,-4e-3,16e-3",
        "--fwhm-depth",
        "20e-3",
    ];
    args.extend(SMALL);
    let o = usp(&args, d);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = std::fs::read_to_string(d.join("metrics.csv")).unwrap();
    assert!(csv.contains("fwhm"), "{csv}");
}

#[test]
fn config_sidecar_reproduces_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let mut args = vec!["simulate", "--seed", "11", "--noise-std", "0.1", "--set", "sim.speckle_count=40"];
    args.extend(SMALL);
    assert!(usp(&args, &a).status.success());
    let cfg = a.join("simulate.config.txt");
    assert!(usp(&["simulate", "--config", cfg.to_str().unwrap()], &b).status.success());
    assert_eq!(std::fs::read(a.join("rf.urf")).unwrap(), std::fs::read(b.join("rf.urf")).unwrap());
    assert_eq!(std::fs::read(&cfg).unwrap(), std::fs::read(b.join("simulate.config.txt")).unwrap());
}

#[test]
fn recover_writes_the_scanline() {
    let dir = tempfile::tempdir().unwrap();
    let n = 32;
    let bins: Vec<usize> = (0..=16).collect();
    // spike of height 2 at sample 5: X_k = 2 exp(-2 pi i k 5 / n)
    let measurements: Vec<Complex64> =
        bins.iter().map(|&k| 2.0 * Complex64::from_polar(1.0, -2.0 * std::f64::consts::PI * (k * 5) as f64 / n as f64)).collect();
    let pulse_spectrum = vec![Complex64::new(1.0, 0.0); bins.len()];
    let file = BinsFile { n, bins, measurements, pulse_spectrum };
    let path = dir.path().join("bins.txt");
    std::fs::write(&path, io::format_bins(&file)).unwrap();
    let o = usp(&["recover", "--bins", path.to_str().unwrap(), "--lambda", "0.01"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = std::fs::read_to_string(dir.path().join("scanline.csv")).unwrap();
    let values: Vec<f64> = csv.lines().skip(1).map(|l| l.rsplit(',').next().unwrap().parse().unwrap()).collect();
    assert_eq!(values.len(), n);
    let peak = (0..n).max_by(|&a, &b| values[a].total_cmp(&values[b])).unwrap();
    assert_eq!(peak, 5);
}

#[test]
fn clutter_and_ulm_accept_frame_sequences() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let frames: Vec<Array2<f64>> = (0..8)
        .map(|t| Array2::from_shape_fn((6, 5), |(i, j)| 1.0 + 0.1 * i as f64 + if (i, j) == (2, 2) { (t as f64).sin() } else { 0.0 }))
        .collect();
    let seq = d.join("seq.uim");
    std::fs::write(&seq, io::encode_uim_frames(&frames).unwrap()).unwrap();
    let o = usp(&["clutter", "--input", seq.to_str().unwrap(), "--method", "svt"], d);
    assert!(o.status.success(), "{}", stderr(&o));
    for f in ["tissue.uim", "blood.uim", "power_doppler.uim", "power_doppler.pgm"] {
        assert!(d.join(f).exists(), "{f}");
    }
    let blood = io::decode_uim(&std::fs::read(d.join("blood.uim")).unwrap()).unwrap();
    assert_eq!(blood.len(), 8);

    let lr: Vec<Array2<f64>> = (0..3)
        .map(|_| Array2::from_shape_fn((8, 8), |(i, j)| (-(((i as f64 - 3.4).powi(2) + (j as f64 - 4.1).powi(2)) / 1.0)).exp()))
        .collect();
    let seq = d.join("lr.uim");
    std::fs::write(&seq, io::encode_uim_frames(&lr).unwrap()).unwrap();
    let o = usp(&["ulm", "--frames", seq.to_str().unwrap(), "--method", "centroid"], d);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = std::fs::read_to_string(d.join("detections.csv")).unwrap();
    assert_eq!(csv.lines().count(), 4, "{csv}");
}
