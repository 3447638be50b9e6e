//! TOML pipeline configuration.
//!
//! Every section has defaults, so an empty file is a valid configuration.
//! Unknown keys are rejected. Lengths are in meters, times in seconds and
//! SoS values in m/s.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sos_core::beamform::Apodization;
use sos_core::delaytrack::TrackConfig;
use sos_core::regress::FitMethod;
use sos_core::synthsim::{Inclusion, PulseSpec, Shape};
use sos_core::tomo::{LbfgsConfig, ReconConfig, DEFAULT_PAIRS};
use sos_core::{ImagingGrid, Point, PolarRoi, TransducerArray};

use crate::error::{ToolError, ToolResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    /// Master seed; scatterer and noise seeds derive from it.
    pub seed: u64,
    /// Assumed SoS for `estimate` and `reconstruct`.
    pub c_bf: f64,
    pub estimation_pair: [usize; 2],
    pub recon_pairs: Vec<[usize; 2]>,
    pub array: ArrayConfig,
    pub pulse: PulseConfig,
    pub medium: MediumConfig,
    pub scatterers: ScattererConfig,
    pub beamform: BeamformConfig,
    pub track: TrackSection,
    pub roi: RoiConfig,
    pub regression: RegressionConfig,
    pub calibration: CalibrationConfig,
    pub recon: ReconSection,
    pub output_dir: PathBuf,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            c_bf: 1500.0,
            estimation_pair: [55, 65],
            recon_pairs: DEFAULT_PAIRS.iter().map(|&(a, b)| [a, b]).collect(),
            array: ArrayConfig::default(),
            pulse: PulseConfig::default(),
            medium: MediumConfig::default(),
            scatterers: ScattererConfig::default(),
            beamform: BeamformConfig::default(),
            track: TrackSection::default(),
            roi: RoiConfig::default(),
            regression: RegressionConfig::default(),
            calibration: CalibrationConfig::default(),
            recon: ReconSection::default(),
            output_dir: PathBuf::from("out"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ArrayConfig {
    pub num_elements: usize,
    pub pitch: f64,
}

impl Default for ArrayConfig {
    fn default() -> Self {
        Self { num_elements: 128, pitch: 3.0e-4 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PulseConfig {
    pub center_frequency: f64,
    pub half_cycles: u32,
    pub sampling_frequency: f64,
}

impl Default for PulseConfig {
    fn default() -> Self {
        let p = PulseSpec::default();
        Self {
            center_frequency: p.center_frequency,
            half_cycles: p.half_cycles,
            sampling_frequency: p.sampling_frequency,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShapeKind {
    Ellipse,
    Rectangle,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InclusionConfig {
    pub shape: ShapeKind,
    /// `[x, z]`
    pub center: [f64; 2],
    /// Half axes (ellipse) or half sizes (rectangle), `[x, z]`.
    pub half_size: [f64; 2],
    pub sos: f64,
}

impl InclusionConfig {
    pub fn to_core(&self) -> Inclusion {
        let center = Point::new(self.center[0], self.center[1]);
        let half = (self.half_size[0], self.half_size[1]);
        let shape = match self.shape {
            ShapeKind::Ellipse => Shape::Ellipse { center, half_axes: half },
            ShapeKind::Rectangle => Shape::Rectangle { center, half_sizes: half },
        };
        Inclusion { shape, sos: self.sos }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MediumConfig {
    pub background_sos: f64,
    pub inclusions: Vec<InclusionConfig>,
    /// Raster spacing of the ground-truth map; also bounds the travel-time
    /// quadrature step (half of it).
    pub raster_spacing: f64,
    /// Optional additive white noise, dB relative to the frame RMS.
    pub snr_db: Option<f64>,
}

impl Default for MediumConfig {
    fn default() -> Self {
        Self { background_sos: 1500.0, inclusions: Vec::new(), raster_spacing: 1.0e-4, snr_db: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScattererConfig {
    pub density_per_mm2: f64,
    /// Scatterer region `[x_min, x_max]`, `[z_min, z_max]`.
    pub x_range: [f64; 2],
    pub z_range: [f64; 2],
}

impl Default for ScattererConfig {
    fn default() -> Self {
        Self { density_per_mm2: 20.0, x_range: [-0.0155, 0.0185], z_range: [0.002, 0.037] }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ApodizationKind {
    None,
    Hann,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BeamformConfig {
    pub apodization: ApodizationKind,
    pub f_number: f64,
    /// Axial pixel spacing of every beamformed image.
    pub dz: f64,
    /// Lateral spacing of the estimation image (ROI plus tracking margin).
    pub estimation_dx: f64,
    /// Reconstruction image: lateral spacing and extent.
    pub recon_dx: f64,
    pub recon_x_range: [f64; 2],
    pub recon_z_range: [f64; 2],
}

impl Default for BeamformConfig {
    fn default() -> Self {
        Self {
            apodization: ApodizationKind::None,
            f_number: 1.0,
            dz: 1.875e-5,
            estimation_dx: 1.5e-4,
            recon_dx: 3.0e-4,
            recon_x_range: [-0.0135, 0.0165],
            recon_z_range: [0.004, 0.035],
        }
    }
}

impl BeamformConfig {
    pub fn apodization(&self) -> Apodization {
        match self.apodization {
            ApodizationKind::None => Apodization::None,
            ApodizationKind::Hann => Apodization::Hann,
        }
    }

    pub fn recon_grid(&self) -> ToolResult<ImagingGrid> {
        let [x0, x1] = self.recon_x_range;
        let [z0, z1] = self.recon_z_range;
        Ok(ImagingGrid::from_spacing(x0, x1, z0, z1, self.recon_dx, self.dz)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrackSection {
    pub window_len: usize,
    pub search_radius: usize,
    pub axial_step: usize,
    pub lateral_step: usize,
    pub lateral_halfwidth: usize,
    pub min_ncc: f64,
    /// Lateral node step for the reconstruction delay maps.
    pub recon_lateral_step: usize,
}

impl Default for TrackSection {
    fn default() -> Self {
        let t = TrackConfig::default();
        Self {
            window_len: t.window_len,
            search_radius: t.search_radius,
            axial_step: t.axial_step,
            lateral_step: t.lateral_step,
            lateral_halfwidth: t.lateral_halfwidth,
            min_ncc: t.min_ncc,
            recon_lateral_step: 2,
        }
    }
}

impl TrackSection {
    pub fn estimation(&self) -> TrackConfig {
        TrackConfig {
            window_len: self.window_len,
            search_radius: self.search_radius,
            axial_step: self.axial_step,
            lateral_step: self.lateral_step,
            lateral_halfwidth: self.lateral_halfwidth,
            min_ncc: self.min_ncc,
        }
    }

    pub fn recon(&self) -> TrackConfig {
        TrackConfig { lateral_step: self.recon_lateral_step, ..self.estimation() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RoiConfig {
    pub depth_min: f64,
    pub depth_max: f64,
    pub theta_min: f64,
    pub theta_max: f64,
    pub num_bins: usize,
    /// Polar origin; defaults to the midpoint of the estimation pair.
    pub reference_x: Option<f64>,
}

impl Default for RoiConfig {
    fn default() -> Self {
        let r = PolarRoi::default();
        Self {
            depth_min: r.depth_min,
            depth_max: r.depth_max,
            theta_min: r.theta_min,
            theta_max: r.theta_max,
            num_bins: r.num_bins,
            reference_x: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MethodKind {
    Ols,
    Robust,
    Weighted,
}

impl From<MethodKind> for FitMethod {
    fn from(m: MethodKind) -> Self {
        match m {
            MethodKind::Ols => FitMethod::Ols,
            MethodKind::Robust => FitMethod::Robust,
            MethodKind::Weighted => FitMethod::Weighted,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RegressionConfig {
    pub method: MethodKind,
}

impl Default for RegressionConfig {
    fn default() -> Self {
        Self { method: MethodKind::Robust }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CalibrationConfig {
    /// SoS of the homogeneous calibration phantom.
    pub c_true: f64,
    pub delta_min: f64,
    pub delta_max: f64,
    pub delta_step: f64,
    pub degree: usize,
    /// Every k-th sweep point trains the model; the rest test it.
    pub train_every: usize,
    /// Existing model file; `estimate` and `experiment` load it instead of
    /// running a sweep.
    pub model: Option<PathBuf>,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        Self {
            c_true: 1500.0,
            delta_min: -40.0,
            delta_max: 40.0,
            delta_step: 1.0,
            degree: 1,
            train_every: 4,
            model: None,
        }
    }
}

impl CalibrationConfig {
    /// Sweep offsets `delta_min, delta_min + step, …, delta_max`.
    pub fn offsets(&self) -> ToolResult<Vec<f64>> {
        if !(self.delta_step > 0.0) || !(self.delta_max >= self.delta_min) {
            return Err(ToolError::Config("calibration sweep needs delta_step > 0 and delta_max >= delta_min".into()));
        }
        let n = ((self.delta_max - self.delta_min) / self.delta_step + 1e-9).floor() as usize + 1;
        Ok((0..n).map(|i| self.delta_min + i as f64 * self.delta_step).collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReconSection {
    pub lambda: f64,
    pub tv_axial_weight: f64,
    pub tv_lateral_weight: f64,
    pub l1_epsilon: f64,
    pub lbfgs_memory: usize,
    pub max_iter: usize,
    pub grad_tol: f64,
    /// Slowness grid: `nx × nz` cells over the aperture width and
    /// `[0, depth]`.
    pub slowness_nx: usize,
    pub slowness_nz: usize,
    pub slowness_depth: f64,
}

impl Default for ReconSection {
    fn default() -> Self {
        let r = ReconConfig::default();
        Self {
            // Tracking jitter on simulated speckle needs far more smoothing
            // than the core default: 0.05 leaves ~20 m/s spikes in a
            // homogeneous map.
            lambda: 2.0,
            tv_axial_weight: r.tv_axial_weight,
            tv_lateral_weight: r.tv_lateral_weight,
            l1_epsilon: r.l1_epsilon,
            lbfgs_memory: r.lbfgs.memory,
            max_iter: r.lbfgs.max_iter,
            grad_tol: r.lbfgs.grad_tol,
            slowness_nx: 32,
            slowness_nz: 32,
            slowness_depth: 0.035,
        }
    }
}

impl ReconSection {
    pub fn to_core(&self) -> ReconConfig {
        ReconConfig {
            lambda: self.lambda,
            tv_axial_weight: self.tv_axial_weight,
            tv_lateral_weight: self.tv_lateral_weight,
            l1_epsilon: self.l1_epsilon,
            lbfgs: LbfgsConfig { memory: self.lbfgs_memory, max_iter: self.max_iter, grad_tol: self.grad_tol },
        }
    }

    pub fn slowness_grid(&self, array: &TransducerArray) -> ToolResult<ImagingGrid> {
        let half = array.aperture() / 2.0 + array.pitch() / 2.0;
        Ok(ImagingGrid::from_extent(-half, half, 0.0, self.slowness_depth, self.slowness_nx, self.slowness_nz)?)
    }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> ToolResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ToolError::MissingInput(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn from_toml(text: &str) -> ToolResult<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| ToolError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("configuration always serializes")
    }

    /// Coarser settings for CI-scale runs.
    pub fn quick(mut self) -> Self {
        self.calibration.delta_step = 10.0;
        self.calibration.degree = 1;
        self.beamform.recon_dx = 6.0e-4;
        self.track.recon_lateral_step = 1;
        self.scatterers.density_per_mm2 = self.scatterers.density_per_mm2.min(10.0);
        self.recon.max_iter = self.recon.max_iter.min(300);
        self
    }

    pub fn validate(&self) -> ToolResult<()> {
        self.array()?;
        self.pulse().validate()?;
        self.track.estimation().validate()?;
        self.recon.to_core().validate()?;
        self.roi()?;
        self.calibration.offsets()?;
        if ![1, 3, 5].contains(&self.calibration.degree) {
            return Err(ToolError::Config(format!(
                "calibration degree must be 1, 3 or 5, got {}",
                self.calibration.degree
            )));
        }
        if self.calibration.train_every == 0 {
            return Err(ToolError::Config("calibration train_every must be positive".into()));
        }
        let n = self.array.num_elements;
        for &[a, b] in self.recon_pairs.iter().chain(std::iter::once(&self.estimation_pair)) {
            if a >= n || b >= n {
                return Err(ToolError::Config(format!("Tx pair ({a}, {b}) outside the {n}-element array")));
            }
        }
        if self.recon_pairs.is_empty() {
            return Err(ToolError::Config("at least one reconstruction pair is required".into()));
        }
        if !(self.c_bf > 0.0) || !(self.scatterers.density_per_mm2 > 0.0) || !(self.medium.raster_spacing > 0.0) {
            return Err(ToolError::Config("c_bf, scatterer density and raster spacing must be positive".into()));
        }
        self.beamform.recon_grid()?;
        self.recon.slowness_grid(&self.array()?)?;
        Ok(())
    }

    pub fn array(&self) -> ToolResult<TransducerArray> {
        Ok(TransducerArray::new(self.array.num_elements, self.array.pitch)?)
    }

    pub fn pulse(&self) -> PulseSpec {
        PulseSpec {
            center_frequency: self.pulse.center_frequency,
            half_cycles: self.pulse.half_cycles,
            sampling_frequency: self.pulse.sampling_frequency,
        }
    }

    pub fn roi(&self) -> ToolResult<PolarRoi> {
        let reference_x = match self.roi.reference_x {
            Some(x) => x,
            None => {
                let array = self.array()?;
                let [a, b] = self.estimation_pair;
                (array.element_position(a)?.x + array.element_position(b)?.x) / 2.0
            }
        };
        let roi = PolarRoi {
            depth_min: self.roi.depth_min,
            depth_max: self.roi.depth_max,
            theta_min: self.roi.theta_min,
            theta_max: self.roi.theta_max,
            num_bins: self.roi.num_bins,
            reference_x,
        };
        roi.validate()?;
        Ok(roi)
    }

    /// Transmit elements needed by estimation and reconstruction, sorted.
    pub fn transmit_elements(&self) -> Vec<usize> {
        let mut tx: Vec<usize> = self
            .recon_pairs
            .iter()
            .chain(std::iter::once(&self.estimation_pair))
            .flat_map(|p| p.iter().copied())
            .collect();
        tx.sort_unstable();
        tx.dedup();
        tx
    }

    pub fn recon_pairs(&self) -> Vec<(usize, usize)> {
        self.recon_pairs.iter().map(|&[a, b]| (a, b)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let cfg = PipelineConfig::from_toml("").unwrap();
        assert_eq!(cfg, PipelineConfig::default());
        assert_eq!(cfg.transmit_elements(), vec![24, 40, 55, 56, 65, 72, 88, 104, 120]);
        assert_eq!(cfg.calibration.offsets().unwrap().len(), 81);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(matches!(PipelineConfig::from_toml("sed = 3"), Err(ToolError::Config(_))));
        assert!(matches!(PipelineConfig::from_toml("[track]\nwindow = 3"), Err(ToolError::Config(_))));
    }

    #[test]
    fn round_trip_through_toml() {
        let mut cfg = PipelineConfig::default();
        cfg.medium.inclusions.push(InclusionConfig {
            shape: ShapeKind::Rectangle,
            center: [0.001, 0.02],
            half_size: [0.004, 0.003],
            sos: 1540.0,
        });
        cfg.medium.snr_db = Some(20.0);
        let back = PipelineConfig::from_toml(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn quick_sweep_has_nine_points() {
        let cfg = PipelineConfig::default().quick();
        assert_eq!(cfg.calibration.offsets().unwrap(), vec![-40.0, -30.0, -20.0, -10.0, 0.0, 10.0, 20.0, 30.0, 40.0]);
    }

    #[test]
    fn roi_reference_defaults_to_pair_midpoint() {
        let roi = PipelineConfig::default().roi().unwrap();
        assert!((roi.reference_x - (-1.05e-3)).abs() < 1e-12);
    }

    #[test]
    fn bad_degree_and_pairs() {
        assert!(PipelineConfig::from_toml("[calibration]\ndegree = 2").is_err());
        assert!(PipelineConfig::from_toml("estimation_pair = [55, 128]").is_err());
    }
}
