//! Axial normalized cross-correlation (NCC) delay tracking between two
//! beamformed frames.
//!
//! Sign convention: `track_delays(a, b)` reports how much later (deeper) the
//! content of frame `a` appears than that of frame `b`, in seconds. For a
//! transmit pair this is `shift(a) − shift(b)` with the per-transmit echo
//! shifts of [`crate::beamform::echo_shift_model`].
//!
//! Lags convert at `dz / c_bf` per pixel, not the two-way `2·dz / c_bf`: a
//! transmit-path time error `Δτ` moves the focused echo by `c_bf·Δτ` in depth
//! (receive geometry `(d + z)/(1 + z/d) = d`), so one axial pixel carries
//! `dz / c_bf` of transmit-path delay.

use alloc::vec;
use alloc::vec::Vec;

use crate::beamform::BeamformedFrame;
use crate::error::{bail, Result};
use crate::geometry::ImagingGrid;
use crate::math;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackConfig {
    /// Reference window length, axial pixels.
    pub window_len: usize,
    /// Largest tested lag in either direction, axial pixels.
    pub search_radius: usize,
    /// Measurement-node spacing in beamforming pixels.
    pub axial_step: usize,
    pub lateral_step: usize,
    /// Kernel columns on each side of the node column; all share one lag.
    pub lateral_halfwidth: usize,
    /// Nodes whose peak NCC falls below this are masked.
    pub min_ncc: f64,
}

impl Default for TrackConfig {
    fn default() -> Self {
        Self { window_len: 64, search_radius: 4, axial_step: 8, lateral_step: 1, lateral_halfwidth: 2, min_ncc: 0.2 }
    }
}

impl TrackConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window_len < 8 {
            bail!(InvalidArgument, "tracking window must be at least 8 samples");
        }
        if self.search_radius < 1 {
            bail!(InvalidArgument, "tracking search radius must be at least 1 sample");
        }
        if self.axial_step == 0 || self.lateral_step == 0 {
            bail!(InvalidArgument, "tracking steps must be positive");
        }
        if !(0.0..=1.0).contains(&self.min_ncc) {
            bail!(InvalidArgument, "min_ncc must lie in [0, 1]");
        }
        Ok(())
    }

    /// Rows lost at the top (and, up to one, at the bottom) of a frame.
    pub fn margin(&self) -> usize {
        self.window_len / 2 + self.search_radius
    }
}

/// Correlation peak of a window within a search region.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NccPeak {
    /// Fractional lag in samples; positive when the search region's content
    /// sits later than the window's.
    pub lag: f64,
    /// NCC at the best integer lag.
    pub peak_ncc: f64,
    /// `false` for degenerate (zero-variance) windows.
    pub valid: bool,
    /// The maximum sits on the first or last tested lag, so the true peak
    /// may lie outside the search range.
    pub at_edge: bool,
}

/// NCC of window `a` against every placement inside `b`, integer peak
/// refined by a 3-point parabola.
///
/// Lag 0 is `a` centered in `b`.
pub fn ncc_delay_1d(a: &[f64], b: &[f64]) -> Result<NccPeak> {
    ncc_delay_kernel(&[a], &[b])
}

/// [`ncc_delay_1d`] over a multi-column kernel: column `c` of the window is
/// `a[c]`, searched for in `b[c]`, and all columns share one axial lag.
pub fn ncc_delay_kernel(a: &[&[f64]], b: &[&[f64]]) -> Result<NccPeak> {
    let w = a.first().map_or(0, |c| c.len());
    let lb = b.first().map_or(0, |c| c.len());
    if a.is_empty() || a.len() != b.len() || a.iter().any(|c| c.len() != w) || b.iter().any(|c| c.len() != lb) {
        bail!(InvalidArgument, "kernel columns must be non-empty and of equal length");
    }
    if w == 0 || lb < w + 2 {
        bail!(
            InvalidArgument,
            "search region ({}) must exceed the window ({}) by at least 2 samples",
            lb,
            w
        );
    }
    let centered: Vec<Vec<f64>> = a
        .iter()
        .map(|col| {
            let mean = col.iter().sum::<f64>() / w as f64;
            col.iter().map(|v| v - mean).collect()
        })
        .collect();
    let energy_a: f64 = centered.iter().flatten().map(|v| v * v).sum();
    let scale_a = a.iter().flat_map(|c| c.iter()).fold(0.0f64, |m, v| m.max(v.abs()));
    if energy_a <= 1e-24 * scale_a * scale_a * (w * a.len()) as f64 || energy_a == 0.0 {
        return Ok(NccPeak { lag: 0.0, peak_ncc: 0.0, valid: false, at_edge: false });
    }

    let placements = lb - w + 1;
    let mut ncc = vec![0.0; placements];
    for (o, out) in ncc.iter_mut().enumerate() {
        let (mut dot, mut energy_b) = (0.0, 0.0);
        for (ca, cb) in centered.iter().zip(b) {
            let win = &cb[o..o + w];
            let mean_b = win.iter().sum::<f64>() / w as f64;
            for (x, y) in ca.iter().zip(win) {
                let yc = y - mean_b;
                dot += x * yc;
                energy_b += yc * yc;
            }
        }
        if energy_b > 0.0 {
            *out = (dot / math::sqrt(energy_a * energy_b)).clamp(-1.0, 1.0);
        }
    }

    let best = (0..placements).fold(0, |best, o| if ncc[o] > ncc[best] { o } else { best });
    let mut frac = 0.0;
    // An exact match pins the lag to the integer; the parabola through
    // unequal neighbours would only add bias.
    let exact = ncc[best] >= 1.0 - 1e-12;
    if !exact && best > 0 && best + 1 < placements {
        let (l, c, r) = (ncc[best - 1], ncc[best], ncc[best + 1]);
        let curvature = l - 2.0 * c + r;
        if curvature < 0.0 {
            frac = (0.5 * (l - r) / curvature).clamp(-0.5, 0.5);
        }
    }
    let center = (lb - w) as f64 / 2.0;
    Ok(NccPeak {
        lag: best as f64 + frac - center,
        peak_ncc: ncc[best],
        valid: true,
        at_edge: best == 0 || best + 1 == placements,
    })
}

/// Per-node delays between two frames of a transmit pair.
#[derive(Debug, Clone, PartialEq)]
pub struct DelayMap {
    /// Seconds, row-major on `grid`; zero where invalid.
    pub delays: Vec<f64>,
    pub ncc: Vec<f64>,
    pub valid: Vec<bool>,
    /// Measurement grid (node centers).
    pub grid: ImagingGrid,
    /// `(tx_a, tx_b)`: delays are `shift(tx_a) − shift(tx_b)`.
    pub frame_pair: (usize, usize),
}

impl DelayMap {
    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }

    /// Valid node delays in grid order.
    pub fn valid_delays(&self) -> Vec<f64> {
        self.delays.iter().zip(&self.valid).filter(|(_, &v)| v).map(|(d, _)| *d).collect()
    }
}

/// Tracks axial delays of `frame_a` relative to `frame_b` on a decimated
/// node grid.
///
/// At each node the reference window is taken from `frame_b` and searched
/// for in `frame_a`; lags convert to seconds at `dz / c_bf` per pixel.
/// Nodes are masked when the peak NCC is below `min_ncc` or the peak sits
/// on the edge of the search range.
pub fn track_delays(frame_a: &BeamformedFrame, frame_b: &BeamformedFrame, cfg: &TrackConfig) -> Result<DelayMap> {
    cfg.validate()?;
    if !frame_a.grid.approx_eq(&frame_b.grid) {
        bail!(InvalidArgument, "frames to track are on different grids");
    }
    if frame_a.c_bf_used != frame_b.c_bf_used {
        bail!(
            InvalidArgument,
            "frames were beamformed at different SoS ({} vs {} m/s)",
            frame_a.c_bf_used,
            frame_b.c_bf_used
        );
    }
    let grid = frame_a.grid;
    let (w, r) = (cfg.window_len, cfg.search_radius);
    let first = cfg.margin();
    if grid.nz < w + 2 * r + 1 {
        bail!(
            InvalidArgument,
            "frame depth ({} px) too short for window {} and search radius {}",
            grid.nz,
            w,
            r
        );
    }
    let last = grid.nz - (w - w / 2) - r;
    let nz_nodes = (last - first) / cfg.axial_step + 1;
    let nx_nodes = (grid.nx - 1) / cfg.lateral_step + 1;
    let meas = grid.subgrid(0, first, cfg.lateral_step, cfg.axial_step, nx_nodes, nz_nodes)?;
    let seconds_per_pixel = grid.dz / frame_a.c_bf_used;

    let n = meas.len();
    let (mut delays, mut ncc, mut valid) = (vec![0.0; n], vec![0.0; n], vec![false; n]);
    let columns_a: Vec<Vec<f64>> = (0..grid.nx).map(|ix| frame_a.column(ix)).collect();
    let columns_b: Vec<Vec<f64>> = (0..grid.nx).map(|ix| frame_b.column(ix)).collect();
    let m = cfg.lateral_halfwidth;
    for jx in 0..nx_nodes {
        let ix = jx * cfg.lateral_step;
        let cols = ix.saturating_sub(m)..(ix + m + 1).min(grid.nx);
        for jz in 0..nz_nodes {
            let iz = first + jz * cfg.axial_step;
            let start = iz - w / 2;
            let windows: Vec<&[f64]> = cols.clone().map(|c| &columns_b[c][start..start + w]).collect();
            let searches: Vec<&[f64]> = cols.clone().map(|c| &columns_a[c][start - r..start + w + r]).collect();
            let peak = ncc_delay_kernel(&windows, &searches)?;
            let k = meas.index(jx, jz);
            ncc[k] = peak.peak_ncc;
            if peak.valid && !peak.at_edge && peak.peak_ncc >= cfg.min_ncc {
                delays[k] = peak.lag * seconds_per_pixel;
                valid[k] = true;
            }
        }
    }
    Ok(DelayMap { delays, ncc, valid, grid: meas, frame_pair: (frame_a.tx_element, frame_b.tx_element) })
}
