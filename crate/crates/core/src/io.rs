//! Binary and text formats: URF1 RF cubes, UIM1 images and sequences,
//! binary PGM, and the small whitespace-separated text inputs.
//!
//! All binary integers and floats are little-endian.

use std::fmt::Write as _;
use std::path::Path;

use ndarray::{Array2, Array3};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::types::{RfDataCube, Scatterer, ScattererField, TransmitEvent};

const URF_MAGIC: &[u8; 4] = b"URF1";
const UIM_MAGIC: &[u8; 4] = b"UIM1";

/// Contents of a URF1 file. Event geometry is not stored in the format.
#[derive(Debug, Clone, PartialEq)]
pub struct UrfData {
    /// `E x C x Nt`.
    pub samples: Array3<f64>,
    pub sampling_frequency: f64,
    pub speed_of_sound: f64,
    pub center_frequency: f64,
}

impl UrfData {
    pub fn from_cube(cube: &RfDataCube) -> Self {
        Self {
            samples: cube.samples.clone(),
            sampling_frequency: cube.sampling_frequency,
            speed_of_sound: cube.speed_of_sound,
            center_frequency: cube.center_frequency,
        }
    }

    pub fn into_cube(self, events: Vec<TransmitEvent>) -> Result<RfDataCube> {
        if events.len() != self.samples.dim().0 {
            return Err(Error::DimensionMismatch(format!(
                "file has {} events, configuration describes {}",
                self.samples.dim().0,
                events.len()
            )));
        }
        let cube = RfDataCube {
            samples: self.samples,
            sampling_frequency: self.sampling_frequency,
            speed_of_sound: self.speed_of_sound,
            center_frequency: self.center_frequency,
            events,
        };
        crate::types::validate(&cube)?;
        Ok(cube)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take<const N: usize>(&mut self) -> Result<[u8; N]> {
        let end = self.pos + N;
        if end > self.bytes.len() {
            return Err(Error::TruncatedPayload { expected: end, found: self.bytes.len() });
        }
        let mut out = [0u8; N];
        out.copy_from_slice(&self.bytes[self.pos..end]);
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take()?))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take()?))
    }

    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take()?))
    }
}

fn check_magic(bytes: &[u8], magic: &[u8; 4]) -> Result<()> {
    if bytes.len() < 4 {
        return Err(Error::TruncatedPayload { expected: 4, found: bytes.len() });
    }
    if &bytes[..4] != magic {
        return Err(Error::BadMagic {
            expected: String::from_utf8_lossy(magic).into_owned(),
            found: String::from_utf8_lossy(&bytes[..4]).into_owned(),
        });
    }
    Ok(())
}

fn payload_len(count: usize, header: usize, found: usize) -> Result<usize> {
    let expected = count
        .checked_mul(4)
        .and_then(|v| v.checked_add(header))
        .ok_or_else(|| Error::Parse("header dimensions overflow".into()))?;
    if found < expected {
        return Err(Error::TruncatedPayload { expected, found });
    }
    if found > expected {
        return Err(Error::Parse(format!("{} trailing bytes after payload", found - expected)));
    }
    Ok(expected)
}

pub fn encode_urf(data: &UrfData) -> Vec<u8> {
    let (e, c, nt) = data.samples.dim();
    let mut out = Vec::with_capacity(40 + 4 * e * c * nt);
    out.extend_from_slice(URF_MAGIC);
    for d in [e, c, nt] {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for v in [data.sampling_frequency, data.speed_of_sound, data.center_frequency] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for v in data.samples.iter() {
        out.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    out
}

pub fn decode_urf(bytes: &[u8]) -> Result<UrfData> {
    check_magic(bytes, URF_MAGIC)?;
    let mut r = Reader { bytes, pos: 4 };
    let e = r.u32()? as usize;
    let c = r.u32()? as usize;
    let nt = r.u32()? as usize;
    let fs = r.f64()?;
    let v = r.f64()?;
    let f0 = r.f64()?;
    let count = e.checked_mul(c).and_then(|v| v.checked_mul(nt)).ok_or_else(|| Error::Parse("dimensions overflow".into()))?;
    payload_len(count, r.pos, bytes.len())?;
    let mut samples = Vec::with_capacity(count);
    for _ in 0..count {
        samples.push(r.f32()? as f64);
    }
    let samples = Array3::from_shape_vec((e, c, nt), samples).map_err(|e| Error::Parse(e.to_string()))?;
    Ok(UrfData { samples, sampling_frequency: fs, speed_of_sound: v, center_frequency: f0 })
}

/// Single image: magic, `u32 Rx`, `u32 Rz`, then `Rx*Rz` f32 values with
/// index `ix * Rz + iz`.
pub fn encode_uim(image: &Array2<f64>) -> Vec<u8> {
    let (rx, rz) = image.dim();
    let mut out = Vec::with_capacity(12 + 4 * rx * rz);
    out.extend_from_slice(UIM_MAGIC);
    out.extend_from_slice(&(rx as u32).to_le_bytes());
    out.extend_from_slice(&(rz as u32).to_le_bytes());
    for v in image.iter() {
        out.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    out
}

/// Sequence: the single-image header followed by `u32 T`, then `T` frames.
pub fn encode_uim_frames(frames: &[Array2<f64>]) -> Result<Vec<u8>> {
    let first = frames.first().ok_or_else(|| Error::InvalidArgument("no frames to write".into()))?;
    let (rx, rz) = first.dim();
    if frames.iter().any(|f| f.dim() != (rx, rz)) {
        return Err(Error::ShapeMismatch("frames differ in shape".into()));
    }
    let mut out = Vec::with_capacity(16 + 4 * rx * rz * frames.len());
    out.extend_from_slice(UIM_MAGIC);
    for d in [rx, rz, frames.len()] {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for f in frames {
        for v in f.iter() {
            out.extend_from_slice(&(*v as f32).to_le_bytes());
        }
    }
    Ok(out)
}

/// Decodes a single image or a sequence, telling them apart by length.
pub fn decode_uim(bytes: &[u8]) -> Result<Vec<Array2<f64>>> {
    check_magic(bytes, UIM_MAGIC)?;
    let mut r = Reader { bytes, pos: 4 };
    let rx = r.u32()? as usize;
    let rz = r.u32()? as usize;
    let per = rx.checked_mul(rz).ok_or_else(|| Error::Parse("dimensions overflow".into()))?;
    let single = per.checked_mul(4).map(|v| v + 12);
    let frames = if single == Some(bytes.len()) {
        1
    } else {
        let t = r.u32()? as usize;
        let count = per.checked_mul(t).ok_or_else(|| Error::Parse("dimensions overflow".into()))?;
        payload_len(count, 16, bytes.len())?;
        t
    };
    let mut out = Vec::with_capacity(frames);
    for _ in 0..frames {
        let mut v = Vec::with_capacity(per);
        for _ in 0..per {
            v.push(r.f32()? as f64);
        }
        out.push(Array2::from_shape_vec((rx, rz), v).map_err(|e| Error::Parse(e.to_string()))?);
    }
    Ok(out)
}

/// Binary PGM of a dB image in `[-dynamic_range_db, 0]`: width is the
/// lateral axis, rows run down in depth.
pub fn encode_pgm_db(log_db: &Array2<f64>, dynamic_range_db: f64) -> Vec<u8> {
    let gray = log_db.mapv(|v| (((v + dynamic_range_db) / dynamic_range_db).clamp(0.0, 1.0) * 255.0).round());
    encode_pgm(&gray)
}

/// Binary PGM of an image scaled linearly so its maximum is 255.
pub fn encode_pgm_linear(image: &Array2<f64>) -> Vec<u8> {
    let max = image.iter().cloned().fold(0.0f64, f64::max);
    let gray = if max > 0.0 {
        image.mapv(|v| (v.max(0.0) / max * 255.0).round())
    } else {
        Array2::zeros(image.dim())
    };
    encode_pgm(&gray)
}

fn encode_pgm(gray: &Array2<f64>) -> Vec<u8> {
    let (rx, rz) = gray.dim();
    let mut out = format!("P5\n{rx} {rz}\n255\n").into_bytes();
    for iz in 0..rz {
        for ix in 0..rx {
            out.push(gray[[ix, iz]] as u8);
        }
    }
    out
}

fn data_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines().enumerate().filter_map(|(i, l)| {
        let l = l.split('#').next().unwrap_or("").trim();
        (!l.is_empty()).then_some((i + 1, l))
    })
}

fn numbers(line: &str, lineno: usize) -> Result<Vec<f64>> {
    line.split(|c: char| c.is_whitespace() || c == ',')
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<f64>().map_err(|_| Error::Parse(format!("line {lineno}: bad number {s:?}"))))
        .collect()
}

/// `x z amplitude` per line, meters.
pub fn parse_scatterers(text: &str) -> Result<ScattererField> {
    let mut out = Vec::new();
    for (n, line) in data_lines(text) {
        let v = numbers(line, n)?;
        if v.len() != 3 {
            return Err(Error::Parse(format!("line {n}: expected x z amplitude")));
        }
        out.push(Scatterer { x: v[0], z: v[1], amplitude: v[2] });
    }
    ScattererField::new(out)
}

pub fn format_scatterers(field: &ScattererField) -> String {
    let mut s = String::from("# x_m z_m amplitude\n");
    for p in field.scatterers() {
        let _ = writeln!(s, "{:e} {:e} {:e}", p.x, p.z, p.amplitude);
    }
    s
}

/// Scanline measurements: a line `N <len>` followed by
/// `bin y_re y_im [h_re h_im]` rows (pulse spectrum defaults to 1).
#[derive(Debug, Clone, PartialEq)]
pub struct BinsFile {
    pub n: usize,
    pub bins: Vec<usize>,
    pub measurements: Vec<Complex64>,
    pub pulse_spectrum: Vec<Complex64>,
}

pub fn parse_bins(text: &str) -> Result<BinsFile> {
    let mut n = None;
    let mut out = BinsFile { n: 0, bins: Vec::new(), measurements: Vec::new(), pulse_spectrum: Vec::new() };
    for (ln, line) in data_lines(text) {
        if let Some(rest) = line.strip_prefix('N') {
            let v = rest.trim().parse::<usize>().map_err(|_| Error::Parse(format!("line {ln}: bad length")))?;
            n = Some(v);
            continue;
        }
        let v = numbers(line, ln)?;
        if v.len() != 3 && v.len() != 5 {
            return Err(Error::Parse(format!("line {ln}: expected bin y_re y_im [h_re h_im]")));
        }
        if v[0] < 0.0 || v[0].fract() != 0.0 {
            return Err(Error::Parse(format!("line {ln}: bin index must be a nonnegative integer")));
        }
        out.bins.push(v[0] as usize);
        out.measurements.push(Complex64::new(v[1], v[2]));
        out.pulse_spectrum.push(if v.len() == 5 { Complex64::new(v[3], v[4]) } else { Complex64::new(1.0, 0.0) });
    }
    out.n = n.ok_or_else(|| Error::Parse("missing `N <length>` line".into()))?;
    Ok(out)
}

pub fn format_bins(file: &BinsFile) -> String {
    let mut s = format!("N {}\n# bin y_re y_im h_re h_im\n", file.n);
    for ((k, y), h) in file.bins.iter().zip(&file.measurements).zip(&file.pulse_spectrum) {
        let _ = writeln!(s, "{k} {:e} {:e} {:e} {:e}", y.re, y.im, h.re, h.im);
    }
    s
}

/// Whitespace-separated matrix, one row per line.
pub fn parse_matrix(text: &str) -> Result<Array2<f64>> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (n, line) in data_lines(text) {
        rows.push(numbers(line, n)?);
    }
    let w = rows.first().map(|r| r.len()).ok_or_else(|| Error::Parse("empty matrix".into()))?;
    if rows.iter().any(|r| r.len() != w) {
        return Err(Error::Parse("ragged matrix rows".into()));
    }
    let h = rows.len();
    Array2::from_shape_vec((h, w), rows.concat()).map_err(|e| Error::Parse(e.to_string()))
}

pub fn format_matrix(m: &Array2<f64>) -> String {
    let mut s = String::new();
    for row in m.rows() {
        let line: Vec<String> = row.iter().map(|v| format!("{v:e}")).collect();
        s.push_str(&line.join(" "));
        s.push('\n');
    }
    s
}

/// CSV with a header row; fields containing commas or quotes are quoted.
pub fn format_csv(header: &[&str], rows: &[Vec<String>]) -> String {
    let field = |f: &str| {
        if f.contains([',', '"', '\n']) {
            format!("\"{}\"", f.replace('"', "\"\""))
        } else {
            f.to_string()
        }
    };
    let mut s = header.iter().map(|h| field(h)).collect::<Vec<_>>().join(",");
    s.push('\n');
    for r in rows {
        s.push_str(&r.iter().map(|f| field(f)).collect::<Vec<_>>().join(","));
        s.push('\n');
    }
    s
}

pub fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}
