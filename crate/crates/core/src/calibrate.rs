//! Polynomial calibration of delay-pattern slope against beamforming SoS
//! offset, and its inverse.
//!
//! Convention throughout: `Δc = c_bf − c` (positive when the beamformer
//! overestimates the SoS).

use alloc::format;
use alloc::vec::Vec;

use crate::delaytrack::TrackConfig;
use crate::error::{bail, Error, Result};
use crate::geometry::PolarRoi;
use crate::regress::{r_squared, rmse, FitMethod};
use crate::linalg;

pub const CONVENTION: &str = "delta_c = c_bf - c";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CalibrationEntry {
    /// m/s
    pub delta_c: f64,
    /// s/rad
    pub slope: f64,
    /// Goodness of the line fit that produced `slope`.
    pub r_squared: f64,
}

/// How the sweep that produced a dataset was acquired.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepMetadata {
    pub c_true: f64,
    pub tx_pair: (usize, usize),
    pub roi: PolarRoi,
    pub track: TrackConfig,
    pub method: FitMethod,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationDataset {
    pub entries: Vec<CalibrationEntry>,
    pub metadata: SweepMetadata,
}

impl CalibrationDataset {
    pub fn validate(&self) -> Result<()> {
        for (i, e) in self.entries.iter().enumerate() {
            if !e.slope.is_finite() || !e.delta_c.is_finite() {
                bail!(InvalidArgument, "calibration entry {i} is not finite");
            }
            if self.entries[..i].iter().any(|o| o.delta_c == e.delta_c) {
                bail!(InvalidArgument, "duplicate Δc = {} m/s in calibration dataset", e.delta_c);
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TrainSelector {
    /// Entries `0, k, 2k, …` in dataset order.
    EveryK(usize),
    Indices(Vec<usize>),
}

impl TrainSelector {
    fn indices(&self, n: usize) -> Result<Vec<usize>> {
        match self {
            TrainSelector::EveryK(0) => bail!(InvalidArgument, "every-k selector needs k ≥ 1"),
            TrainSelector::EveryK(k) => Ok((0..n).step_by(*k).collect()),
            TrainSelector::Indices(idx) => {
                if let Some(bad) = idx.iter().find(|&&i| i >= n) {
                    bail!(InvalidArgument, "training index {bad} out of range for {n} entries");
                }
                let mut v = idx.clone();
                v.sort_unstable();
                v.dedup();
                Ok(v)
            }
        }
    }
}

/// Step of the monotonicity check, m/s.
pub const MONOTONICITY_STEP: f64 = 0.1;
/// Bisection stops once the bracket is this narrow, m/s.
const BISECTION_WIDTH: f64 = 1e-4;
/// Relative slope-range extension tolerated by degree-1 inversion.
pub const EXTRAPOLATION: f64 = 0.1;

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationModel {
    pub degree: usize,
    /// `slope(Δc) = Σ coefficients[k]·Δc^k`.
    pub coefficients: Vec<f64>,
    /// `(Δc_min, Δc_max)`, m/s.
    pub domain: (f64, f64),
    pub training_indices: Vec<usize>,
    pub test_indices: Vec<usize>,
}

impl CalibrationModel {
    pub fn eval(&self, delta_c: f64) -> f64 {
        self.coefficients.iter().rev().fold(0.0, |acc, &c| acc * delta_c + c)
    }

    fn increasing(&self) -> bool {
        self.eval(self.domain.1) > self.eval(self.domain.0)
    }

    /// Slopes at the two domain ends, `(min, max)`.
    pub fn slope_range(&self) -> (f64, f64) {
        let (a, b) = (self.eval(self.domain.0), self.eval(self.domain.1));
        (a.min(b), a.max(b))
    }

    /// Checks strict monotonicity on a [`MONOTONICITY_STEP`] grid over the
    /// domain.
    pub fn validate_monotonic(&self) -> Result<()> {
        let (lo, hi) = self.domain;
        let steps = libm::ceil((hi - lo) / MONOTONICITY_STEP) as usize;
        let at = |i: usize| (lo + i as f64 * MONOTONICITY_STEP).min(hi);
        let sign = (self.eval(hi) - self.eval(lo)).signum();
        if sign == 0.0 {
            bail!(Calibration, "calibration polynomial is flat over [{lo}, {hi}] m/s");
        }
        let mut prev = self.eval(at(0));
        for i in 1..=steps {
            let v = self.eval(at(i));
            if (v - prev) * sign <= 0.0 {
                bail!(
                    Calibration,
                    "degree-{} calibration is not monotonic on Δc ∈ [{:.1}, {:.1}] m/s",
                    self.degree,
                    at(i - 1),
                    at(i)
                );
            }
            prev = v;
        }
        Ok(())
    }
}

/// Least-squares polynomial fit of slope against `Δc` on the selected
/// training entries.
pub fn build_calibration(
    dataset: &CalibrationDataset,
    degree: usize,
    selector: &TrainSelector,
) -> Result<CalibrationModel> {
    if !matches!(degree, 1 | 3 | 5) {
        bail!(InvalidArgument, "calibration degree must be 1, 3 or 5, got {degree}");
    }
    dataset.validate()?;
    let train = selector.indices(dataset.entries.len())?;
    if train.len() < degree + 1 {
        bail!(
            InsufficientData,
            "degree-{degree} calibration needs {} training points, got {}",
            degree + 1,
            train.len()
        );
    }
    let dc: Vec<f64> = train.iter().map(|&i| dataset.entries[i].delta_c).collect();
    let slope: Vec<f64> = train.iter().map(|&i| dataset.entries[i].slope).collect();
    let sc = dc.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
    let sy = slope.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);

    // Vandermonde in scaled Δc, column-major.
    let rows = dc.len();
    let cols = degree + 1;
    let mut a = Vec::with_capacity(rows * cols);
    for k in 0..cols {
        a.extend(dc.iter().map(|v| libm::pow(v / sc, k as f64)));
    }
    let b: Vec<f64> = slope.iter().map(|v| v / sy).collect();
    let scaled = linalg::lstsq(&a, rows, cols, &b).map_err(|e| match e {
        Error::RankDeficient(m) => Error::Calibration(format!("training Δc values are degenerate: {m}")),
        other => other,
    })?;
    let coefficients: Vec<f64> =
        scaled.iter().enumerate().map(|(k, c)| c * sy / libm::pow(sc, k as f64)).collect();

    let lo = dc.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = dc.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let test_indices = (0..dataset.entries.len()).filter(|i| !train.contains(i)).collect();
    let model = CalibrationModel { degree, coefficients, domain: (lo, hi), training_indices: train, test_indices };
    model.validate_monotonic()?;
    Ok(model)
}

/// Inverse lookup: the offset `Δc` whose modeled slope equals `observed_slope`.
///
/// Degree 1 inverts analytically and tolerates slopes up to 10 % of the
/// slope range beyond the domain ends; higher degrees bisect inside the
/// domain only.
pub fn estimate_offset(model: &CalibrationModel, observed_slope: f64) -> Result<f64> {
    if !observed_slope.is_finite() {
        bail!(InvalidArgument, "observed slope is not finite");
    }
    let (s_min, s_max) = model.slope_range();
    let slack = if model.degree == 1 { EXTRAPOLATION * (s_max - s_min) } else { 0.0 };
    if observed_slope < s_min - slack || observed_slope > s_max + slack {
        let at_min_end = observed_slope < s_min;
        let nearest = if at_min_end == model.increasing() { model.domain.0 } else { model.domain.1 };
        return Err(Error::OutOfRange { slope: observed_slope, nearest_delta_c: nearest });
    }
    if model.degree == 1 {
        return Ok((observed_slope - model.coefficients[0]) / model.coefficients[1]);
    }
    let (mut lo, mut hi) = model.domain;
    let sign = if model.increasing() { 1.0 } else { -1.0 };
    while hi - lo > BISECTION_WIDTH {
        let mid = 0.5 * (lo + hi);
        if sign * (model.eval(mid) - observed_slope) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Inverse lookup that answers out-of-range slopes with the nearest domain
/// end instead of an error (used when scoring held-out points).
pub fn estimate_offset_clamped(model: &CalibrationModel, observed_slope: f64) -> f64 {
    match estimate_offset(model, observed_slope) {
        Ok(v) => v,
        Err(Error::OutOfRange { nearest_delta_c, .. }) => nearest_delta_c,
        Err(_) => f64::NAN,
    }
}

/// SoS after removing the estimated offset: `c_bf − Δĉ`.
pub fn corrected_sos(c_bf_assumed: f64, delta_c_hat: f64) -> f64 {
    c_bf_assumed - delta_c_hat
}

/// Held-out scoring of a calibration model.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationScore {
    pub degree: usize,
    /// `(true Δc, estimated Δc)` per test entry.
    pub estimates: Vec<(f64, f64)>,
    /// Offset RMSE over the test entries, m/s.
    pub rmse: f64,
    /// `R²` of estimated against true offsets.
    pub r_squared: f64,
}

pub fn score(model: &CalibrationModel, dataset: &CalibrationDataset) -> CalibrationScore {
    let estimates: Vec<(f64, f64)> = model
        .test_indices
        .iter()
        .map(|&i| {
            let e = dataset.entries[i];
            (e.delta_c, estimate_offset_clamped(model, e.slope))
        })
        .collect();
    let truth: Vec<f64> = estimates.iter().map(|e| e.0).collect();
    let est: Vec<f64> = estimates.iter().map(|e| e.1).collect();
    CalibrationScore { degree: model.degree, rmse: rmse(&truth, &est), r_squared: r_squared(&truth, &est), estimates }
}
