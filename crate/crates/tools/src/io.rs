//! On-disk formats.
//!
//! * Channel frames: one `tx_NNN.sosc` file per transmit. Little-endian
//!   header `"SOSC"`, version `u16`, tx element `u16`, num_rx `u32`,
//!   num_samples `u32`, fs `f64`, t0 `f64` (32 bytes), then row-major `f32`
//!   samples (`num_rx × num_samples`).
//! * `manifest.toml` next to the frames: frame list, phantom and acquisition
//!   settings.
//! * Maps on a grid: `<stem>.csv` (first row lateral positions, first column
//!   depth), `<stem>.f32` (row-major, depth-major) and `<stem>.toml` sidecar.
//! * Tables: plain CSV with a header row.
//! * Calibration model: TOML, coefficients in shortest round-trip decimal.

use std::fs;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use sos_core::calibrate::{CalibrationDataset, CalibrationModel, SweepMetadata};
use sos_core::synthsim::ChannelFrame;
use sos_core::ImagingGrid;

use crate::config::{ArrayConfig, MediumConfig, PulseConfig, ScattererConfig};
use crate::error::{ToolError, ToolResult};

pub const FRAME_MAGIC: &[u8; 4] = b"SOSC";
pub const FRAME_VERSION: u16 = 1;
const HEADER_LEN: usize = 32;
pub const MANIFEST_FILE: &str = "manifest.toml";
pub const MODEL_CONVENTION: &str = "delta_c = c_bf - c_true [m/s]; slope of median delay vs angle [s/rad]";

pub fn create_dir(dir: &Path) -> ToolResult<()> {
    fs::create_dir_all(dir).map_err(|e| ToolError::Io { context: format!("cannot create {}", dir.display()), source: e })
}

fn create_file(path: &Path) -> ToolResult<BufWriter<fs::File>> {
    fs::File::create(path)
        .map(BufWriter::new)
        .map_err(|e| ToolError::Io { context: format!("cannot write {}", path.display()), source: e })
}

fn finish(mut w: BufWriter<fs::File>, path: &Path) -> ToolResult<()> {
    w.flush().map_err(|e| ToolError::io(format!("cannot write {}", path.display()), e))
}

pub fn read_text(path: &Path) -> ToolResult<String> {
    fs::read_to_string(path).map_err(|e| ToolError::io(format!("cannot read {}", path.display()), e))
}

pub fn write_text(path: &Path, text: &str) -> ToolResult<()> {
    fs::write(path, text).map_err(|e| ToolError::Io { context: format!("cannot write {}", path.display()), source: e })
}

pub fn write_toml<T: Serialize>(path: &Path, value: &T) -> ToolResult<()> {
    let text = toml::to_string_pretty(value).map_err(|e| ToolError::format(path.display().to_string(), e.to_string()))?;
    write_text(path, &text)
}

pub fn read_toml<T: DeserializeOwned>(path: &Path) -> ToolResult<T> {
    toml::from_str(&read_text(path)?).map_err(|e| ToolError::format(path.display().to_string(), e.message().to_string()))
}

// ---------------------------------------------------------------- frames

pub fn encode_frame(frame: &ChannelFrame) -> ToolResult<Vec<u8>> {
    let tx = u16::try_from(frame.tx_element)
        .map_err(|_| ToolError::format("channel frame", format!("tx element {} exceeds u16", frame.tx_element)))?;
    let num_rx = u32::try_from(frame.num_rx).map_err(|_| ToolError::format("channel frame", "num_rx exceeds u32"))?;
    let ns = u32::try_from(frame.num_samples).map_err(|_| ToolError::format("channel frame", "num_samples exceeds u32"))?;
    if frame.samples.len() != frame.num_rx * frame.num_samples {
        return Err(ToolError::format("channel frame", "sample count does not match num_rx × num_samples"));
    }
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * frame.samples.len());
    out.extend_from_slice(FRAME_MAGIC);
    out.extend_from_slice(&FRAME_VERSION.to_le_bytes());
    out.extend_from_slice(&tx.to_le_bytes());
    out.extend_from_slice(&num_rx.to_le_bytes());
    out.extend_from_slice(&ns.to_le_bytes());
    out.extend_from_slice(&frame.fs.to_le_bytes());
    out.extend_from_slice(&frame.t0.to_le_bytes());
    for s in &frame.samples {
        out.extend_from_slice(&s.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_frame(bytes: &[u8], what: &str) -> ToolResult<ChannelFrame> {
    let bad = |detail: String| ToolError::format(what.to_string(), detail);
    if bytes.len() < HEADER_LEN {
        return Err(bad(format!("{} bytes is shorter than the {HEADER_LEN}-byte header", bytes.len())));
    }
    if &bytes[0..4] != FRAME_MAGIC {
        return Err(bad("bad magic (expected \"SOSC\")".into()));
    }
    let u16_at = |i: usize| u16::from_le_bytes([bytes[i], bytes[i + 1]]);
    let u32_at = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap());
    let f64_at = |i: usize| f64::from_le_bytes(bytes[i..i + 8].try_into().unwrap());
    let version = u16_at(4);
    if version != FRAME_VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    let tx_element = u16_at(6) as usize;
    let num_rx = u32_at(8) as usize;
    let num_samples = u32_at(12) as usize;
    let fs = f64_at(16);
    let t0 = f64_at(24);
    let payload = &bytes[HEADER_LEN..];
    let expected = num_rx.checked_mul(num_samples).and_then(|n| n.checked_mul(4));
    if expected != Some(payload.len()) {
        return Err(bad(format!("payload is {} bytes, header implies {num_rx} × {num_samples} f32", payload.len())));
    }
    if !(fs > 0.0) || !t0.is_finite() {
        return Err(bad(format!("invalid sampling (fs {fs}, t0 {t0})")));
    }
    let samples = payload.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
    Ok(ChannelFrame { tx_element, num_rx, num_samples, samples, t0, fs })
}

pub fn write_frame(path: &Path, frame: &ChannelFrame) -> ToolResult<()> {
    let bytes = encode_frame(frame)?;
    fs::write(path, bytes).map_err(|e| ToolError::Io { context: format!("cannot write {}", path.display()), source: e })
}

pub fn read_frame(path: &Path) -> ToolResult<ChannelFrame> {
    let mut bytes = Vec::new();
    fs::File::open(path)
        .and_then(|f| BufReader::new(f).read_to_end(&mut bytes))
        .map_err(|e| ToolError::io(format!("cannot read {}", path.display()), e))?;
    decode_frame(&bytes, &path.display().to_string())
}

pub fn frame_file_name(tx: usize) -> String {
    format!("tx_{tx:03}.sosc")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameEntry {
    pub tx_element: usize,
    pub file: String,
    pub num_rx: usize,
    pub num_samples: usize,
}

/// Describes a channel-data directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format_version: u16,
    pub seed: u64,
    pub num_scatterers: usize,
    pub snr_db: Option<f64>,
    /// Ground-truth SoS on the slowness grid (map stem in this directory).
    pub truth_map: String,
    pub frames: Vec<FrameEntry>,
    pub array: ArrayConfig,
    pub pulse: PulseConfig,
    pub scatterers: ScattererConfig,
    pub medium: MediumConfig,
}

impl Manifest {
    pub fn homogeneous(&self) -> bool {
        self.medium.inclusions.iter().all(|i| i.sos == self.medium.background_sos)
    }
}

/// Writes every frame plus the manifest into `dir`.
pub fn write_channel_set(dir: &Path, manifest: &Manifest, frames: &[ChannelFrame]) -> ToolResult<()> {
    create_dir(dir)?;
    for (entry, frame) in manifest.frames.iter().zip(frames) {
        write_frame(&dir.join(&entry.file), frame)?;
    }
    write_toml(&dir.join(MANIFEST_FILE), manifest)
}

/// Reads the manifest and the listed frames; every frame must match its
/// manifest entry.
pub fn read_channel_set(dir: &Path) -> ToolResult<(Manifest, Vec<ChannelFrame>)> {
    let manifest: Manifest = read_toml(&dir.join(MANIFEST_FILE))?;
    let mut frames = Vec::with_capacity(manifest.frames.len());
    for entry in &manifest.frames {
        let frame = read_frame(&dir.join(&entry.file))?;
        if frame.tx_element != entry.tx_element || frame.num_rx != entry.num_rx || frame.num_samples != entry.num_samples
        {
            return Err(ToolError::format(entry.file.clone(), "frame header disagrees with the manifest"));
        }
        frames.push(frame);
    }
    Ok((manifest, frames))
}

// ------------------------------------------------------------------ maps

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MapSidecar {
    pub quantity: String,
    pub unit: String,
    pub nx: usize,
    pub nz: usize,
    pub x0: f64,
    pub z0: f64,
    pub dx: f64,
    pub dz: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub c_bf: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub tx_element: Option<usize>,
}

impl MapSidecar {
    pub fn new(quantity: &str, unit: &str, grid: &ImagingGrid) -> Self {
        Self {
            quantity: quantity.into(),
            unit: unit.into(),
            nx: grid.nx,
            nz: grid.nz,
            x0: grid.x0,
            z0: grid.z0,
            dx: grid.dx,
            dz: grid.dz,
            c_bf: None,
            tx_element: None,
        }
    }

    pub fn grid(&self) -> ToolResult<ImagingGrid> {
        Ok(ImagingGrid::new(self.x0, self.z0, self.dx, self.dz, self.nx, self.nz)?)
    }
}

/// `<stem>.csv`, `<stem>.f32` and `<stem>.toml` for a row-major grid map.
pub fn write_map(dir: &Path, stem: &str, sidecar: &MapSidecar, values: &[f64]) -> ToolResult<()> {
    let grid = sidecar.grid()?;
    if values.len() != grid.len() {
        return Err(ToolError::format(stem.to_string(), "map size does not match its grid"));
    }
    let csv_path = dir.join(format!("{stem}.csv"));
    let mut w = create_file(&csv_path)?;
    let mut line = String::from("z_m\\x_m");
    for ix in 0..grid.nx {
        line.push_str(&format!(",{}", grid.x(ix)));
    }
    line.push('\n');
    for iz in 0..grid.nz {
        line.push_str(&grid.z(iz).to_string());
        for ix in 0..grid.nx {
            line.push_str(&format!(",{}", values[grid.index(ix, iz)]));
        }
        line.push('\n');
    }
    w.write_all(line.as_bytes()).map_err(|e| ToolError::io(format!("cannot write {}", csv_path.display()), e))?;
    finish(w, &csv_path)?;

    let bin_path = dir.join(format!("{stem}.f32"));
    let bytes: Vec<u8> = values.iter().flat_map(|v| (*v as f32).to_le_bytes()).collect();
    fs::write(&bin_path, bytes).map_err(|e| ToolError::io(format!("cannot write {}", bin_path.display()), e))?;
    write_toml(&dir.join(format!("{stem}.toml")), sidecar)
}

/// Reads a map back from its sidecar and `.f32` payload.
pub fn read_map(dir: &Path, stem: &str) -> ToolResult<(MapSidecar, Vec<f64>)> {
    let sidecar: MapSidecar = read_toml(&dir.join(format!("{stem}.toml")))?;
    let path = dir.join(format!("{stem}.f32"));
    let bytes = fs::read(&path).map_err(|e| ToolError::io(format!("cannot read {}", path.display()), e))?;
    if bytes.len() != 4 * sidecar.nx * sidecar.nz {
        return Err(ToolError::format(path.display().to_string(), "payload size does not match the sidecar grid"));
    }
    let values = bytes.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64).collect();
    Ok((sidecar, values))
}

/// 8-bit grayscale PNG of a row-major map, linearly scaled over `[lo, hi]`.
pub fn write_png(path: &Path, nx: usize, nz: usize, values: &[f64], lo: f64, hi: f64) -> ToolResult<()> {
    let span = if hi > lo { hi - lo } else { 1.0 };
    let pixels: Vec<u8> =
        values.iter().map(|v| (((v - lo) / span).clamp(0.0, 1.0) * 255.0).round() as u8).collect();
    let img = image::GrayImage::from_raw(nx as u32, nz as u32, pixels)
        .ok_or_else(|| ToolError::format(path.display().to_string(), "image size does not match the map"))?;
    img.save(path).map_err(|e| ToolError::format(path.display().to_string(), e.to_string()))
}

// ---------------------------------------------------------------- tables

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> ToolResult<()> {
    let mut w = csv::Writer::from_path(path)
        .map_err(|e| ToolError::format(path.display().to_string(), format!("cannot write: {e}")))?;
    for row in rows {
        w.serialize(row).map_err(|e| ToolError::format(path.display().to_string(), e.to_string()))?;
    }
    w.flush().map_err(|e| ToolError::io(format!("cannot write {}", path.display()), e))
}

pub fn read_csv<T: DeserializeOwned>(path: &Path) -> ToolResult<Vec<T>> {
    if !path.exists() {
        return Err(ToolError::MissingInput(path.display().to_string()));
    }
    let mut r = csv::Reader::from_path(path).map_err(|e| ToolError::format(path.display().to_string(), e.to_string()))?;
    r.deserialize()
        .collect::<Result<Vec<T>, _>>()
        .map_err(|e| ToolError::format(path.display().to_string(), e.to_string()))
}

// ----------------------------------------------------------------- model

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub convention: String,
    pub c_true: f64,
    pub degree: usize,
    pub domain: [f64; 2],
    pub coefficients: Vec<f64>,
    pub training_indices: Vec<usize>,
    pub test_indices: Vec<usize>,
    /// SHA-256 over the sweep settings and measured slopes.
    pub sweep_hash: String,
}

impl ModelFile {
    pub fn new(model: &CalibrationModel, dataset: &CalibrationDataset) -> Self {
        Self {
            convention: MODEL_CONVENTION.into(),
            c_true: dataset.metadata.c_true,
            degree: model.degree,
            domain: [model.domain.0, model.domain.1],
            coefficients: model.coefficients.clone(),
            training_indices: model.training_indices.clone(),
            test_indices: model.test_indices.clone(),
            sweep_hash: sweep_hash(dataset),
        }
    }

    pub fn model(&self) -> ToolResult<CalibrationModel> {
        if self.convention != MODEL_CONVENTION {
            return Err(ToolError::format("calibration model", format!("unknown convention {:?}", self.convention)));
        }
        if self.coefficients.len() != self.degree + 1 || !self.coefficients.iter().all(|c| c.is_finite()) {
            return Err(ToolError::format("calibration model", "coefficients do not match the degree"));
        }
        if !(self.domain[0] < self.domain[1]) {
            return Err(ToolError::format("calibration model", "empty domain"));
        }
        Ok(CalibrationModel {
            degree: self.degree,
            coefficients: self.coefficients.clone(),
            domain: (self.domain[0], self.domain[1]),
            training_indices: self.training_indices.clone(),
            test_indices: self.test_indices.clone(),
        })
    }
}

pub fn sweep_hash(dataset: &CalibrationDataset) -> String {
    let SweepMetadata { c_true, tx_pair, roi, track, method } = dataset.metadata;
    let mut h = Sha256::new();
    h.update(format!("{c_true:?}|{tx_pair:?}|{roi:?}|{track:?}|{method:?}").as_bytes());
    for e in &dataset.entries {
        h.update(e.delta_c.to_le_bytes());
        h.update(e.slope.to_le_bytes());
    }
    format!("{:x}", h.finalize())
}

pub fn write_model(path: &Path, model: &CalibrationModel, dataset: &CalibrationDataset) -> ToolResult<()> {
    write_toml(path, &ModelFile::new(model, dataset))
}

pub fn read_model(path: &Path) -> ToolResult<(ModelFile, CalibrationModel)> {
    let file: ModelFile = read_toml(path)?;
    let model = file.model()?;
    Ok((file, model))
}

/// Lists the regular files of `dir` (sorted), for error messages.
pub fn list_dir(dir: &Path) -> Vec<PathBuf> {
    let mut v: Vec<PathBuf> = fs::read_dir(dir)
        .map(|it| it.filter_map(|e| e.ok().map(|e| e.path())).collect())
        .unwrap_or_default();
    v.sort();
    v
}
