//! In-memory processing stages: simulate → beamform → track → fit →
//! calibrate / estimate, and the tomographic reconstruction.
//!
//! The command layer wraps these with file IO; tests call them directly.

use std::collections::BTreeMap;

use rayon::prelude::*;
use sos_core::beamform::{das_beamform, BeamformedFrame, BfConfig};
use sos_core::calibrate::{
    build_calibration, corrected_sos, estimate_offset, CalibrationDataset, CalibrationEntry, CalibrationModel,
    SweepMetadata, TrainSelector,
};
use sos_core::delaytrack::{track_delays, DelayMap};
use sos_core::regress::{extract_pattern, fit, DelayPattern, RegressionResult};
use sos_core::synthsim::{
    gen_scatterers, required_samples, simulate_frame_with_table, ChannelFrame, Inclusion, MediumSpec, PulseSpec,
    ScattererField, TravelTimeTable,
};
use sos_core::tomo::{self, build_path_matrix, stack_delays, tv_operator, PathMatrix, Reconstruction};
use sos_core::geometry::pixel_to_polar;
use sos_core::{ImagingGrid, PolarRoi, TransducerArray};

use crate::config::PipelineConfig;
use crate::error::{ToolError, ToolResult};

/// Noise seeds are kept apart from scatterer seeds.
const NOISE_SEED_SALT: u64 = 0x5eed_0f_0015e;

/// Medium, scatterers and acquisition hardware of one simulated phantom.
#[derive(Debug, Clone)]
pub struct Scene {
    pub array: TransducerArray,
    pub pulse: PulseSpec,
    pub medium: MediumSpec,
    pub field: ScattererField,
}

impl Scene {
    /// The phantom described by the configuration.
    pub fn from_config(cfg: &PipelineConfig) -> ToolResult<Self> {
        let inclusions: Vec<Inclusion> = cfg.medium.inclusions.iter().map(|i| i.to_core()).collect();
        Self::build(cfg, cfg.medium.background_sos, inclusions, cfg.scatterers.x_range, cfg.scatterers.z_range, cfg.seed)
    }

    /// Homogeneous calibration phantom at `calibration.c_true`, with
    /// scatterers only around the estimation image.
    pub fn calibration(cfg: &PipelineConfig) -> ToolResult<Self> {
        let g = estimation_grid(cfg)?;
        let (x0, x1, z0, z1) = g.cell_bounds();
        let pad = 1.5e-3;
        Self::build(cfg, cfg.calibration.c_true, Vec::new(), [x0 - pad, x1 + pad], [(z0 - pad).max(1e-4), z1 + pad], cfg.seed)
    }

    pub fn build(
        cfg: &PipelineConfig,
        background_sos: f64,
        inclusions: Vec<Inclusion>,
        x_range: [f64; 2],
        z_range: [f64; 2],
        seed: u64,
    ) -> ToolResult<Self> {
        let [x0, x1] = x_range;
        let [z0, z1] = z_range;
        let region = ImagingGrid::from_extent(x0, x1, z0, z1, 1, 1)?;
        let h = cfg.medium.raster_spacing;
        let nx = ((x1 - x0) / h).ceil().max(1.0) as usize;
        let nz = ((z1 - z0) / h).ceil().max(1.0) as usize;
        let raster = ImagingGrid::from_extent(x0, x1, z0, z1, nx, nz)?;
        let medium = MediumSpec { background_sos, inclusions, grid: raster };
        medium.validate()?;
        Ok(Self {
            array: cfg.array()?,
            pulse: cfg.pulse(),
            medium,
            field: gen_scatterers(&region, cfg.scatterers.density_per_mm2, seed)?,
        })
    }
}

/// Channel data of every transmit in `txs`, all with the same record length
/// (long enough for the slowest transmit). Frames come back in `txs` order.
pub fn simulate(scene: &Scene, txs: &[usize], snr_db: Option<f64>, seed: u64) -> ToolResult<Vec<ChannelFrame>> {
    let table = TravelTimeTable::new(&scene.array, &scene.field, &scene.medium);
    let mut num_samples = 1;
    for &tx in txs {
        scene.array.element_position(tx)?;
        num_samples = num_samples.max(required_samples(&table, tx, &scene.pulse));
    }
    txs.par_iter()
        .map(|&tx| {
            let mut frame = simulate_frame_with_table(tx, &scene.field, &table, &scene.pulse, &scene.array, num_samples)?;
            if let Some(snr) = snr_db {
                frame.add_white_noise(snr, seed ^ NOISE_SEED_SALT);
            }
            Ok(frame)
        })
        .collect()
}

/// Beamforming grid covering the polar ROI plus the tracking margin.
pub fn estimation_grid(cfg: &PipelineConfig) -> ToolResult<ImagingGrid> {
    let roi = cfg.roi()?;
    let dz = cfg.beamform.dz;
    let dx = cfg.beamform.estimation_dx;
    let margin = (cfg.track.estimation().margin() + 2) as f64 * dz;
    let max_theta = roi.theta_min.abs().max(roi.theta_max.abs());
    let half_width = roi.depth_max * max_theta.sin() + dx;
    let z_min = (roi.depth_min * max_theta.cos() - margin).max(dz);
    let z_max = roi.depth_max + margin;
    Ok(ImagingGrid::from_spacing(
        roi.reference_x - half_width,
        roi.reference_x + half_width,
        z_min,
        z_max,
        dx,
        dz,
    )?)
}

pub fn bf_config(cfg: &PipelineConfig, c_bf: f64, grid: ImagingGrid) -> BfConfig {
    BfConfig { c_bf, grid, apodization: cfg.beamform.apodization(), f_number: cfg.beamform.f_number }
}

/// Tracked delays, angular pattern and line fit of one transmit pair.
#[derive(Debug, Clone)]
pub struct PairMeasurement {
    pub c_bf: f64,
    pub map: DelayMap,
    pub pattern: DelayPattern,
    pub fit: RegressionResult,
}

/// Beamforms `frame_a` and `frame_b` at `c_bf` on the estimation grid,
/// tracks `a` against `b` and fits the ROI delay pattern.
pub fn measure_pair(
    cfg: &PipelineConfig,
    frame_a: &ChannelFrame,
    frame_b: &ChannelFrame,
    c_bf: f64,
) -> ToolResult<PairMeasurement> {
    let array = cfg.array()?;
    let bf = bf_config(cfg, c_bf, estimation_grid(cfg)?);
    let ia = das_beamform(frame_a, &array, &bf)?;
    let ib = das_beamform(frame_b, &array, &bf)?;
    let map = track_delays(&ia, &ib, &cfg.track.estimation())?;
    let pattern = extract_pattern(&map, &cfg.roi()?)?;
    let fit = fit(&pattern, cfg.regression.method.into())?;
    Ok(PairMeasurement { c_bf, map, pattern, fit })
}

/// Picks the frames of `pair` out of `frames`.
pub fn pair_frames<'a>(frames: &'a [ChannelFrame], pair: [usize; 2]) -> ToolResult<(&'a ChannelFrame, &'a ChannelFrame)> {
    let find = |tx: usize| {
        frames
            .iter()
            .find(|f| f.tx_element == tx)
            .ok_or_else(|| ToolError::MissingInput(format!("no channel data for Tx {tx}")))
    };
    Ok((find(pair[0])?, find(pair[1])?))
}

/// Slope per sweep offset `Δc = c_bf − c_true` over the configured sweep.
pub fn calibration_sweep(cfg: &PipelineConfig, frames: &[ChannelFrame]) -> ToolResult<(CalibrationDataset, Vec<PairMeasurement>)> {
    let (fa, fb) = pair_frames(frames, cfg.estimation_pair)?;
    let offsets = cfg.calibration.offsets()?;
    let c_true = cfg.calibration.c_true;
    let runs: Vec<PairMeasurement> = offsets
        .par_iter()
        .map(|dc| measure_pair(cfg, fa, fb, c_true + dc))
        .collect::<ToolResult<_>>()?;
    let entries = offsets
        .iter()
        .zip(&runs)
        .map(|(&delta_c, m)| CalibrationEntry { delta_c, slope: m.fit.slope, r_squared: m.fit.r_squared })
        .collect();
    let [a, b] = cfg.estimation_pair;
    let dataset = CalibrationDataset {
        entries,
        metadata: SweepMetadata {
            c_true,
            tx_pair: (a, b),
            roi: cfg.roi()?,
            track: cfg.track.estimation(),
            method: cfg.regression.method.into(),
        },
    };
    Ok((dataset, runs))
}

pub fn fit_model(cfg: &PipelineConfig, dataset: &CalibrationDataset, degree: usize) -> ToolResult<CalibrationModel> {
    Ok(build_calibration(dataset, degree, &TrainSelector::EveryK(cfg.calibration.train_every))?)
}

/// Simulates the calibration phantom and runs the sweep.
pub fn run_calibration(cfg: &PipelineConfig) -> ToolResult<(CalibrationDataset, CalibrationModel)> {
    let scene = Scene::calibration(cfg)?;
    let frames = simulate(&scene, &cfg.estimation_pair, cfg.medium.snr_db, cfg.seed)?;
    let (dataset, _) = calibration_sweep(cfg, &frames)?;
    let model = fit_model(cfg, &dataset, cfg.calibration.degree)?;
    Ok((dataset, model))
}

/// Below this fraction of tracked ROI nodes the pattern is dominated by
/// delays beyond the tracker's search range (assumed SoS far off, roughly
/// |Δc| > 80 m/s), and its slope is no longer monotone in the offset.
pub const MIN_ROI_COVERAGE: f64 = 0.5;

/// Fraction of measurement nodes inside `roi` that tracked validly.
pub fn roi_coverage(map: &DelayMap, roi: &PolarRoi) -> f64 {
    let g = map.grid;
    let (mut inside, mut valid) = (0usize, 0usize);
    for iz in 0..g.nz {
        for ix in 0..g.nx {
            let Ok((r, theta)) = pixel_to_polar(g.pixel(ix, iz), roi) else { continue };
            if roi.contains(r, theta) {
                inside += 1;
                valid += usize::from(map.valid[g.index(ix, iz)]);
            }
        }
    }
    if inside == 0 {
        0.0
    } else {
        valid as f64 / inside as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub c_bf: f64,
    pub slope: f64,
    pub fit_r_squared: f64,
    /// Tracked fraction of the ROI nodes.
    pub roi_coverage: f64,
    pub delta_c: f64,
    pub corrected_sos: f64,
}

/// Average-SoS estimate from the estimation pair beamformed at `c_bf`.
pub fn estimate(
    cfg: &PipelineConfig,
    frames: &[ChannelFrame],
    model: &CalibrationModel,
    c_bf: f64,
) -> ToolResult<(Estimate, PairMeasurement)> {
    let (fa, fb) = pair_frames(frames, cfg.estimation_pair)?;
    let m = measure_pair(cfg, fa, fb, c_bf)?;
    let coverage = roi_coverage(&m.map, &cfg.roi()?);
    if coverage < MIN_ROI_COVERAGE {
        return Err(ToolError::Core(sos_core::Error::Numerical(format!(
            "only {:.0}% of the ROI tracked at {c_bf} m/s, the delays exceed the search range; \
             rerun with an assumed SoS closer to the true value",
            100.0 * coverage
        ))));
    }
    let delta_c = estimate_offset(model, m.fit.slope).map_err(|e| match e {
        sos_core::Error::OutOfRange { nearest_delta_c, .. } => ToolError::Core(sos_core::Error::Numerical(format!(
            "{e}; rerun with an assumed SoS closer to {:.1} m/s",
            c_bf - nearest_delta_c
        ))),
        other => other.into(),
    })?;
    let est = Estimate {
        c_bf,
        slope: m.fit.slope,
        fit_r_squared: m.fit.r_squared,
        roi_coverage: coverage,
        delta_c,
        corrected_sos: corrected_sos(c_bf, delta_c),
    };
    Ok((est, m))
}

#[derive(Debug, Clone)]
pub struct ReconOutput {
    pub c_bf: f64,
    pub delay_maps: Vec<DelayMap>,
    pub path: PathMatrix,
    pub recon: Reconstruction,
    /// Absolute SoS on the slowness grid, clamped to the sanity band.
    pub sos: Vec<f64>,
    pub clamped: usize,
}

/// Beamforms every reconstruction transmit at `c_bf`, tracks the pairs and
/// solves for the slowness map.
pub fn reconstruct(cfg: &PipelineConfig, frames: &[ChannelFrame], c_bf: f64) -> ToolResult<ReconOutput> {
    let array = cfg.array()?;
    let pairs = cfg.recon_pairs();
    let bf = bf_config(cfg, c_bf, cfg.beamform.recon_grid()?);
    let mut txs: Vec<usize> = pairs.iter().flat_map(|&(a, b)| [a, b]).collect();
    txs.sort_unstable();
    txs.dedup();
    let images: BTreeMap<usize, BeamformedFrame> = txs
        .par_iter()
        .map(|&tx| {
            let frame = frames
                .iter()
                .find(|f| f.tx_element == tx)
                .ok_or_else(|| ToolError::MissingInput(format!("no channel data for Tx {tx}")))?;
            Ok((tx, das_beamform(frame, &array, &bf)?))
        })
        .collect::<ToolResult<_>>()?;

    let track = cfg.track.recon();
    let delay_maps: Vec<DelayMap> = pairs
        .par_iter()
        .map(|&(a, b)| Ok(track_delays(&images[&a], &images[&b], &track)?))
        .collect::<ToolResult<_>>()?;
    drop(images);

    let slow_grid = cfg.recon.slowness_grid(&array)?;
    let masks: Vec<&[bool]> = delay_maps.iter().map(|m| m.valid.as_slice()).collect();
    let path = build_path_matrix(&array, &pairs, &delay_maps[0].grid, &slow_grid, &masks)?;
    let delays = stack_delays(&delay_maps);
    let rc = cfg.recon.to_core();
    let d = tv_operator(&slow_grid, rc.tv_axial_weight, rc.tv_lateral_weight)?;
    let recon = tomo::reconstruct(&path, &delays, &d, &rc, c_bf)?;
    let (sos, clamped) = recon.map.sos();
    Ok(ReconOutput { c_bf, delay_maps, path, recon, sos, clamped })
}

/// Ground-truth SoS sampled at the slowness-grid cell centers.
pub fn truth_on_slowness_grid(cfg: &PipelineConfig, medium: &MediumSpec) -> ToolResult<Vec<f64>> {
    Ok(medium.rasterize(&cfg.recon.slowness_grid(&cfg.array()?)?))
}
