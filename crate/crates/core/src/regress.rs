//! Angular delay patterns and straight-line fits to them.
//!
//! A pattern is the median node delay per angular bin of a polar region of
//! interest. Its slope against `θ` carries the sign and size of the
//! beamforming SoS error; three line fitters are offered: ordinary least
//! squares, NCC-weighted least squares and a robust Tukey-bisquare IRLS fit.

use alloc::vec;
use alloc::vec::Vec;

use crate::delaytrack::DelayMap;
use crate::error::{bail, Result};
use crate::geometry::{pixel_to_polar, PolarRoi};
use crate::{math, stats};

#[derive(Debug, Clone, PartialEq)]
pub struct DelayPattern {
    /// Bin centers, radians, strictly increasing.
    pub thetas: Vec<f64>,
    /// Seconds.
    pub median_delays: Vec<f64>,
    /// Mean peak NCC of the nodes in each bin.
    pub weights: Vec<f64>,
    pub bin_counts: Vec<usize>,
    pub roi: PolarRoi,
}

impl DelayPattern {
    pub fn len(&self) -> usize {
        self.thetas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.thetas.is_empty()
    }
}

/// Median delay per angular bin over the valid nodes of `map` inside `roi`.
/// Empty bins are left out.
pub fn extract_pattern(map: &DelayMap, roi: &PolarRoi) -> Result<DelayPattern> {
    roi.validate()?;
    let mut bin_delays: Vec<Vec<f64>> = vec![Vec::new(); roi.num_bins];
    let mut bin_ncc: Vec<Vec<f64>> = vec![Vec::new(); roi.num_bins];
    for iz in 0..map.grid.nz {
        for ix in 0..map.grid.nx {
            let k = map.grid.index(ix, iz);
            if !map.valid[k] {
                continue;
            }
            let p = map.grid.pixel(ix, iz);
            if p.z <= 0.0 {
                continue;
            }
            let (r, theta) = pixel_to_polar(p, roi)?;
            if !roi.contains(r, theta) {
                continue;
            }
            if let Some(b) = roi.bin_of(theta) {
                bin_delays[b].push(map.delays[k]);
                bin_ncc[b].push(map.ncc[k]);
            }
        }
    }

    let mut pattern = DelayPattern {
        thetas: Vec::new(),
        median_delays: Vec::new(),
        weights: Vec::new(),
        bin_counts: Vec::new(),
        roi: *roi,
    };
    for (b, delays) in bin_delays.iter().enumerate() {
        if let (Some(median), Some(w)) = (stats::median(delays), stats::mean(&bin_ncc[b])) {
            pattern.thetas.push(roi.bin_center(b));
            pattern.median_delays.push(median);
            pattern.weights.push(w.clamp(0.0, 1.0));
            pattern.bin_counts.push(delays.len());
        }
    }
    if pattern.is_empty() {
        bail!(
            InsufficientData,
            "no valid delay nodes inside the ROI (depth {:.4}..{:.4} m, θ {:.3}..{:.3} rad); widen the ROI or lower min_ncc",
            roi.depth_min,
            roi.depth_max,
            roi.theta_min,
            roi.theta_max
        );
    }
    Ok(pattern)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FitMethod {
    Ols,
    #[default]
    Robust,
    Weighted,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegressionResult {
    /// Seconds per radian.
    pub slope: f64,
    /// Seconds.
    pub intercept: f64,
    pub r_squared: f64,
    /// Root-mean-square residual over the fitted points, seconds.
    pub rmse: f64,
    pub method: FitMethod,
    /// IRLS iterations (0 for closed-form fits).
    pub iterations: usize,
    /// `false` when IRLS stopped at its iteration cap.
    pub converged: bool,
}

impl RegressionResult {
    pub fn predict(&self, theta: f64) -> f64 {
        self.intercept + self.slope * theta
    }
}

/// Coefficient of determination `1 − SS_res / SS_tot`; `0` when the
/// observations have no variance.
pub fn r_squared(y: &[f64], y_hat: &[f64]) -> f64 {
    debug_assert_eq!(y.len(), y_hat.len());
    let Some(mean) = stats::mean(y) else { return 0.0 };
    let ss_tot: f64 = y.iter().map(|v| (v - mean) * (v - mean)).sum();
    if ss_tot == 0.0 {
        return 0.0;
    }
    let ss_res: f64 = y.iter().zip(y_hat).map(|(a, b)| (a - b) * (a - b)).sum();
    1.0 - ss_res / ss_tot
}

/// Weighted least-squares line `(intercept, slope)` in centered form.
fn weighted_line(x: &[f64], y: &[f64], w: &[f64]) -> Result<(f64, f64)> {
    let sw: f64 = w.iter().sum();
    if !(sw > 0.0) {
        bail!(RankDeficient, "all weights are zero");
    }
    let xm = x.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() / sw;
    let ym = y.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() / sw;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    let mut x_scale = 0.0f64;
    for i in 0..x.len() {
        let dx = x[i] - xm;
        sxx += w[i] * dx * dx;
        sxy += w[i] * dx * (y[i] - ym);
        if w[i] > 0.0 {
            x_scale = x_scale.max(x[i].abs());
        }
    }
    if !(sxx > 1e-24 * sw * x_scale.max(1e-300) * x_scale.max(1e-300)) {
        bail!(RankDeficient, "the weighted design has no spread in θ");
    }
    let slope = sxy / sxx;
    Ok((ym - slope * xm, slope))
}

fn summarize(x: &[f64], y: &[f64], mask: &[bool], coef: (f64, f64)) -> (f64, f64) {
    let (mut obs, mut pred) = (Vec::new(), Vec::new());
    for i in 0..x.len() {
        if mask[i] {
            obs.push(y[i]);
            pred.push(coef.0 + coef.1 * x[i]);
        }
    }
    let res: Vec<f64> = obs.iter().zip(&pred).map(|(a, b)| a - b).collect();
    (r_squared(&obs, &pred), stats::rms(&res).unwrap_or(0.0))
}

/// Ordinary least-squares line through `(x, y)`.
pub fn fit_line_ols(x: &[f64], y: &[f64]) -> Result<RegressionResult> {
    if x.len() != y.len() {
        bail!(InvalidArgument, "x and y lengths differ");
    }
    if x.len() < 2 {
        bail!(InsufficientData, "a line fit needs at least 2 points, got {}", x.len());
    }
    let w = vec![1.0; x.len()];
    let coef = weighted_line(x, y, &w)?;
    let (r2, rmse) = summarize(x, y, &vec![true; x.len()], coef);
    Ok(RegressionResult {
        slope: coef.1,
        intercept: coef.0,
        r_squared: r2,
        rmse,
        method: FitMethod::Ols,
        iterations: 0,
        converged: true,
    })
}

/// Weighted least squares `b = (XᵀWX)⁻¹XᵀWy` with `W = diag(w)`.
/// Goodness of fit is reported over the points with positive weight.
pub fn fit_line_weighted(x: &[f64], y: &[f64], w: &[f64]) -> Result<RegressionResult> {
    if x.len() != y.len() || x.len() != w.len() {
        bail!(InvalidArgument, "x, y and weight lengths differ");
    }
    if w.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
        bail!(InvalidArgument, "weights must be finite and non-negative");
    }
    let active = w.iter().filter(|&&v| v > 0.0).count();
    if active < 2 {
        bail!(InsufficientData, "weighted fit needs 2 points with positive weight, got {active}");
    }
    let coef = weighted_line(x, y, w)?;
    let mask: Vec<bool> = w.iter().map(|&v| v > 0.0).collect();
    let (r2, rmse) = summarize(x, y, &mask, coef);
    Ok(RegressionResult {
        slope: coef.1,
        intercept: coef.0,
        r_squared: r2,
        rmse,
        method: FitMethod::Weighted,
        iterations: 0,
        converged: true,
    })
}

/// Tukey bisquare tuning constant (95 % Gaussian efficiency).
pub const BISQUARE_C: f64 = 4.685;
/// MAD-to-σ factor for Gaussian residuals.
pub const MAD_SCALE: f64 = 1.4826;
pub const IRLS_MAX_ITER: usize = 50;
/// Convergence threshold on the coefficient update, relative to the
/// largest coefficient magnitude.
pub const IRLS_REL_TOL: f64 = 1e-10;

/// Robust line fit: IRLS with Tukey bisquare weights at
/// `4.685 × 1.4826 × MAD(residuals)`, started from OLS.
pub fn fit_line_robust(x: &[f64], y: &[f64]) -> Result<RegressionResult> {
    if x.len() < 3 {
        bail!(InsufficientData, "robust fit needs at least 3 points, got {}", x.len());
    }
    let ols = fit_line_ols(x, y)?;
    let mut coef = (ols.intercept, ols.slope);
    let y_scale = y.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let mut weights = vec![1.0; x.len()];
    let mut iterations = 0;
    let mut converged = false;

    while iterations < IRLS_MAX_ITER {
        let residuals: Vec<f64> = x.iter().zip(y).map(|(a, b)| b - coef.0 - coef.1 * a).collect();
        let scale = MAD_SCALE * stats::mad(&residuals).unwrap_or(0.0);
        if scale <= 1e-13 * y_scale {
            // Residuals vanish at machine precision: the current fit is exact.
            converged = true;
            break;
        }
        let cutoff = BISQUARE_C * scale;
        for (w, r) in weights.iter_mut().zip(&residuals) {
            let u = r / cutoff;
            *w = if u.abs() < 1.0 { (1.0 - u * u) * (1.0 - u * u) } else { 0.0 };
        }
        iterations += 1;
        let next = match weighted_line(x, y, &weights) {
            Ok(c) => c,
            // Bisquare rejected too many points; keep the last iterate.
            Err(_) => break,
        };
        let change = (next.0 - coef.0).abs().max((next.1 - coef.1).abs());
        let magnitude = next.0.abs().max(next.1.abs());
        coef = next;
        if change <= IRLS_REL_TOL * magnitude {
            converged = true;
            break;
        }
    }

    let (r2, rmse) = summarize(x, y, &vec![true; x.len()], coef);
    Ok(RegressionResult {
        slope: coef.1,
        intercept: coef.0,
        r_squared: r2,
        rmse,
        method: FitMethod::Robust,
        iterations,
        converged,
    })
}

pub fn fit_ols(pattern: &DelayPattern) -> Result<RegressionResult> {
    fit_line_ols(&pattern.thetas, &pattern.median_delays)
}

pub fn fit_weighted(pattern: &DelayPattern) -> Result<RegressionResult> {
    fit_line_weighted(&pattern.thetas, &pattern.median_delays, &pattern.weights)
}

pub fn fit_robust(pattern: &DelayPattern) -> Result<RegressionResult> {
    fit_line_robust(&pattern.thetas, &pattern.median_delays)
}

pub fn fit(pattern: &DelayPattern, method: FitMethod) -> Result<RegressionResult> {
    match method {
        FitMethod::Ols => fit_ols(pattern),
        FitMethod::Robust => fit_robust(pattern),
        FitMethod::Weighted => fit_weighted(pattern),
    }
}

/// Root-mean-square of `a − b`.
pub fn rmse(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    if n == 0 {
        return 0.0;
    }
    math::sqrt(a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / n as f64)
}
