//! Local slowness tomography from differential transmit-path delays.
//!
//! Unknown: the slowness deviation `δσ = σ − 1/c_bf` on a coarse grid. A
//! delay measured between the images of transmits `a` and `b` at node `p`
//! is modeled as `∫_{a→p} δσ − ∫_{b→p} δσ` (the receive paths are common to
//! both images and cancel). The reconstruction minimizes
//!
//! ```text
//! Σ φ(L·δσ − Δτ) + λ_eff · Σ φ(D·δσ),   φ(t) = √(t² + ε²) − ε
//! ```
//!
//! with `D` the anisotropically weighted forward-difference operator, by
//! L-BFGS from `δσ = 0`.
//!
//! Internally delays are in nanoseconds, lengths in millimeters and
//! slownesses in ns/mm (= 1e-6 s/m), which keeps all quantities near unity.

pub mod lbfgs;
mod ray;
mod sparse;

use alloc::vec;
use alloc::vec::Vec;

pub use lbfgs::{LbfgsConfig, StopReason, TraceEntry};
pub use ray::ray_weights;
pub use sparse::{row_difference, CsrMatrix, SparseRow};

use crate::delaytrack::DelayMap;
use crate::error::{bail, Result};
use crate::geometry::{ImagingGrid, TransducerArray};
use crate::math;
use crate::synthsim::{SOS_MAX, SOS_MIN};

/// Seconds per internal time unit.
pub const TIME_UNIT: f64 = 1e-9;
/// Meters per internal length unit.
pub const LENGTH_UNIT: f64 = 1e-3;
/// s/m per internal slowness unit.
pub const SLOWNESS_UNIT: f64 = TIME_UNIT / LENGTH_UNIT;

/// Six pairs spanning the aperture of a 128-element array with a
/// 16-element separation.
pub const DEFAULT_PAIRS: [(usize, usize); 6] = [(24, 40), (40, 56), (56, 72), (72, 88), (88, 104), (104, 120)];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RowMeta {
    /// Index into the pair list.
    pub pair: usize,
    /// Node index on the measurement grid.
    pub node: usize,
}

/// Differential path operator; entries in meters.
#[derive(Debug, Clone, PartialEq)]
pub struct PathMatrix {
    pub matrix: CsrMatrix,
    pub rows: Vec<RowMeta>,
    pub pairs: Vec<(usize, usize)>,
    pub slow_grid: ImagingGrid,
}

/// Rows `ray(tx_a → p) − ray(tx_b → p)` for every pair and every node whose
/// mask entry is set; masked nodes produce no row.
pub fn build_path_matrix(
    array: &TransducerArray,
    pairs: &[(usize, usize)],
    meas_grid: &ImagingGrid,
    slow_grid: &ImagingGrid,
    masks: &[&[bool]],
) -> Result<PathMatrix> {
    if masks.len() != pairs.len() {
        bail!(InvalidArgument, "{} masks given for {} pairs", masks.len(), pairs.len());
    }
    if let Some(m) = masks.iter().find(|m| m.len() != meas_grid.len()) {
        bail!(InvalidArgument, "mask of length {} does not match the {}-node measurement grid", m.len(), meas_grid.len());
    }
    let mut matrix = CsrMatrix::new(slow_grid.len());
    let mut rows = Vec::new();
    for (pi, &(a, b)) in pairs.iter().enumerate() {
        let pa = array.element_position(a)?;
        let pb = array.element_position(b)?;
        for iz in 0..meas_grid.nz {
            for ix in 0..meas_grid.nx {
                let node = meas_grid.index(ix, iz);
                if !masks[pi][node] {
                    continue;
                }
                let p = meas_grid.pixel(ix, iz);
                let row = if a == b {
                    SparseRow::new()
                } else {
                    row_difference(&ray_weights(pa, p, slow_grid), &ray_weights(pb, p, slow_grid))
                };
                matrix.push_row(&row);
                rows.push(RowMeta { pair: pi, node });
            }
        }
    }
    Ok(PathMatrix { matrix, rows, pairs: pairs.to_vec(), slow_grid: *slow_grid })
}

/// Valid delays of `maps`, stacked in the row order of [`build_path_matrix`].
pub fn stack_delays(maps: &[DelayMap]) -> Vec<f64> {
    maps.iter().flat_map(|m| m.valid_delays()).collect()
}

/// Forward differences: all axial rows (scaled by `w_axial`) then all
/// lateral rows (scaled by `w_lateral`). No wraparound rows.
pub fn tv_operator(grid: &ImagingGrid, w_axial: f64, w_lateral: f64) -> Result<CsrMatrix> {
    if !(w_axial >= 0.0 && w_lateral >= 0.0) {
        bail!(InvalidArgument, "TV weights must be non-negative");
    }
    let mut d = CsrMatrix::new(grid.len());
    let push = |d: &mut CsrMatrix, from: usize, to: usize, w: f64| {
        if w == 0.0 {
            d.push_row(&[]);
        } else {
            d.push_row(&[(from, -w), (to, w)]);
        }
    };
    for iz in 0..grid.nz.saturating_sub(1) {
        for ix in 0..grid.nx {
            push(&mut d, grid.index(ix, iz), grid.index(ix, iz + 1), w_axial);
        }
    }
    for iz in 0..grid.nz {
        for ix in 0..grid.nx.saturating_sub(1) {
            push(&mut d, grid.index(ix, iz), grid.index(ix + 1, iz), w_lateral);
        }
    }
    Ok(d)
}

/// Smoothed absolute value `√(t² + ε²) − ε`.
#[inline]
pub fn charbonnier(t: f64, eps: f64) -> f64 {
    math::sqrt(t * t + eps * eps) - eps
}

#[inline]
fn charbonnier_derivative(t: f64, eps: f64) -> f64 {
    t / math::sqrt(t * t + eps * eps)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReconConfig {
    /// Regularization strength before normalization by the row counts.
    pub lambda: f64,
    pub tv_axial_weight: f64,
    pub tv_lateral_weight: f64,
    /// Smoothing of the absolute values, seconds (applied in the same
    /// internal units to the TV term).
    pub l1_epsilon: f64,
    pub lbfgs: LbfgsConfig,
}

impl Default for ReconConfig {
    fn default() -> Self {
        Self {
            lambda: 0.05,
            tv_axial_weight: 1.0,
            tv_lateral_weight: 0.5,
            l1_epsilon: 1e-10,
            lbfgs: LbfgsConfig::default(),
        }
    }
}

impl ReconConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0) {
            bail!(InvalidArgument, "lambda must be non-negative");
        }
        if !(self.l1_epsilon > 0.0) {
            bail!(InvalidArgument, "l1_epsilon must be positive");
        }
        if !(self.tv_axial_weight >= 0.0 && self.tv_lateral_weight >= 0.0) {
            bail!(InvalidArgument, "TV weights must be non-negative");
        }
        if self.lbfgs.max_iter == 0 {
            bail!(InvalidArgument, "L-BFGS needs at least one iteration");
        }
        Ok(())
    }

    /// `λ · (#measurements / #TV rows)`.
    pub fn effective_lambda(&self, num_measurements: usize, num_tv_rows: usize) -> f64 {
        if num_tv_rows == 0 {
            self.lambda
        } else {
            self.lambda * num_measurements as f64 / num_tv_rows as f64
        }
    }
}

/// Smoothed-L1 objective in internal units.
#[derive(Debug, Clone)]
pub struct Objective {
    l: CsrMatrix,
    d: CsrMatrix,
    data: Vec<f64>,
    lambda: f64,
    eps: f64,
}

impl Objective {
    pub fn new(path: &PathMatrix, delays: &[f64], d: &CsrMatrix, cfg: &ReconConfig) -> Result<Self> {
        cfg.validate()?;
        if delays.len() != path.matrix.nrows() {
            bail!(
                InvalidArgument,
                "{} delays for a path matrix with {} rows",
                delays.len(),
                path.matrix.nrows()
            );
        }
        if d.ncols() != path.matrix.ncols() {
            bail!(InvalidArgument, "regularization operator and path matrix disagree on the unknowns");
        }
        if delays.iter().any(|v| !v.is_finite()) {
            bail!(InvalidArgument, "delay vector holds non-finite values");
        }
        let mut l = path.matrix.clone();
        l.scale(1.0 / LENGTH_UNIT);
        Ok(Self {
            l,
            d: d.clone(),
            data: delays.iter().map(|v| v / TIME_UNIT).collect(),
            lambda: cfg.effective_lambda(path.matrix.nrows(), d.nrows()),
            eps: cfg.l1_epsilon / TIME_UNIT,
        })
    }

    pub fn num_unknowns(&self) -> usize {
        self.l.ncols()
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// Data term `Σ φ(Lx − Δτ)` alone.
    pub fn data_term(&self, x: &[f64]) -> f64 {
        let mut r = vec![0.0; self.l.nrows()];
        self.l.mul_vec(x, &mut r);
        r.iter().zip(&self.data).map(|(a, b)| charbonnier(a - b, self.eps)).sum()
    }

    pub fn value_and_gradient(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        grad.iter_mut().for_each(|g| *g = 0.0);
        let mut r = vec![0.0; self.l.nrows()];
        self.l.mul_vec(x, &mut r);
        let mut value = 0.0;
        for (ri, di) in r.iter_mut().zip(&self.data) {
            let t = *ri - di;
            value += charbonnier(t, self.eps);
            *ri = charbonnier_derivative(t, self.eps);
        }
        self.l.mul_t_vec_add(&r, grad);

        if self.lambda > 0.0 && self.d.nrows() > 0 {
            let mut q = vec![0.0; self.d.nrows()];
            self.d.mul_vec(x, &mut q);
            let mut tv = 0.0;
            for qi in q.iter_mut() {
                tv += charbonnier(*qi, self.eps);
                *qi = self.lambda * charbonnier_derivative(*qi, self.eps);
            }
            value += self.lambda * tv;
            self.d.mul_t_vec_add(&q, grad);
        }
        value
    }
}

/// Slowness deviation from `1/c_bf`, s/m.
#[derive(Debug, Clone, PartialEq)]
pub struct SlownessMap {
    pub values: Vec<f64>,
    pub grid: ImagingGrid,
    pub c_bf: f64,
}

impl SlownessMap {
    /// Absolute SoS `1/(1/c_bf + δσ)` clamped to the SoS sanity band, and
    /// the number of clamped pixels.
    pub fn sos(&self) -> (Vec<f64>, usize) {
        let mut clamped = 0;
        let sos = self
            .values
            .iter()
            .map(|d| {
                let s = 1.0 / (1.0 / self.c_bf + d);
                if s.is_finite() && s > 0.0 && (SOS_MIN..=SOS_MAX).contains(&s) {
                    s
                } else {
                    clamped += 1;
                    if s.is_finite() && s > 0.0 { s.clamp(SOS_MIN, SOS_MAX) } else { SOS_MAX }
                }
            })
            .collect();
        (sos, clamped)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Reconstruction {
    pub map: SlownessMap,
    /// Objective per accepted iteration, internal units.
    pub trace: Vec<TraceEntry>,
    pub iterations: usize,
    pub reason: StopReason,
    pub lambda_effective: f64,
}

impl Reconstruction {
    pub fn converged(&self) -> bool {
        self.reason != StopReason::MaxIterations
    }
}

/// Solves for the slowness deviation from `δσ = 0`.
pub fn reconstruct(
    path: &PathMatrix,
    delays: &[f64],
    d: &CsrMatrix,
    cfg: &ReconConfig,
    c_bf: f64,
) -> Result<Reconstruction> {
    let objective = Objective::new(path, delays, d, cfg)?;
    let x0 = vec![0.0; objective.num_unknowns()];
    let result = lbfgs::minimize(|x, g| objective.value_and_gradient(x, g), &x0, &cfg.lbfgs)?;
    Ok(Reconstruction {
        map: SlownessMap {
            values: result.x.iter().map(|v| v * SLOWNESS_UNIT).collect(),
            grid: path.slow_grid,
            c_bf,
        },
        trace: result.trace,
        iterations: result.iterations,
        reason: result.reason,
        lambda_effective: objective.lambda(),
    })
}
