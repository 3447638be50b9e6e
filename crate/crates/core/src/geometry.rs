//! Array, pixel-grid and polar-frame bookkeeping shared by every stage.
//!
//! Coordinates are in meters: `x` is lateral (along the array), `z` is depth
//! with the transducer face at `z = 0` and the medium at `z > 0`.

use crate::error::{bail, Result};
use crate::math;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point {
    pub x: f64,
    pub z: f64,
}

impl Point {
    pub const fn new(x: f64, z: f64) -> Self {
        Self { x, z }
    }

    pub fn distance(self, other: Point) -> f64 {
        math::hypot(other.x - self.x, other.z - self.z)
    }
}

/// Linear array centered on `x = 0`, elements on the face `z = 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransducerArray {
    num_elements: usize,
    pitch: f64,
}

impl Default for TransducerArray {
    fn default() -> Self {
        Self { num_elements: 128, pitch: 3.0e-4 }
    }
}

impl TransducerArray {
    pub fn new(num_elements: usize, pitch: f64) -> Result<Self> {
        if num_elements < 2 {
            bail!(InvalidArgument, "array needs at least 2 elements, got {num_elements}");
        }
        if !(pitch > 0.0 && pitch.is_finite()) {
            bail!(InvalidArgument, "pitch must be positive, got {pitch}");
        }
        Ok(Self { num_elements, pitch })
    }

    pub fn num_elements(&self) -> usize {
        self.num_elements
    }

    pub fn pitch(&self) -> f64 {
        self.pitch
    }

    /// Distance between the outer element centers.
    pub fn aperture(&self) -> f64 {
        (self.num_elements - 1) as f64 * self.pitch
    }

    pub fn element_position(&self, i: usize) -> Result<Point> {
        if i >= self.num_elements {
            bail!(
                InvalidArgument,
                "element index {i} out of range for a {}-element array",
                self.num_elements
            );
        }
        Ok(self.element_x_unchecked(i))
    }

    #[inline]
    pub(crate) fn element_x_unchecked(&self, i: usize) -> Point {
        let center = (self.num_elements as f64 - 1.0) / 2.0;
        Point::new((i as f64 - center) * self.pitch, 0.0)
    }

    /// Positions of all elements, index order.
    pub fn positions(&self) -> alloc::vec::Vec<Point> {
        (0..self.num_elements).map(|i| self.element_x_unchecked(i)).collect()
    }
}

/// Regular Cartesian grid of pixel centers.
///
/// Pixel `(ix, iz)` sits at `(x0 + ix·dx, z0 + iz·dz)`. Images on a grid are
/// stored row-major with depth as the slow axis: `index = iz·nx + ix`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImagingGrid {
    pub x0: f64,
    pub z0: f64,
    pub dx: f64,
    pub dz: f64,
    pub nx: usize,
    pub nz: usize,
}

impl ImagingGrid {
    pub fn new(x0: f64, z0: f64, dx: f64, dz: f64, nx: usize, nz: usize) -> Result<Self> {
        let grid = Self { x0, z0, dx, dz, nx, nz };
        grid.validate()?;
        Ok(grid)
    }

    /// Grid whose cells exactly tile `[x_min, x_max] × [z_min, z_max]`.
    pub fn from_extent(
        x_min: f64,
        x_max: f64,
        z_min: f64,
        z_max: f64,
        nx: usize,
        nz: usize,
    ) -> Result<Self> {
        if nx == 0 || nz == 0 || !(x_max > x_min) || !(z_max > z_min) {
            bail!(
                InvalidArgument,
                "degenerate extent [{x_min}, {x_max}] × [{z_min}, {z_max}] with {nx}×{nz} cells"
            );
        }
        let dx = (x_max - x_min) / nx as f64;
        let dz = (z_max - z_min) / nz as f64;
        Self::new(x_min + dx / 2.0, z_min + dz / 2.0, dx, dz, nx, nz)
    }

    /// Grid of pixel centers with the given spacing covering `[x_min, x_max] × [z_min, z_max]`
    /// (both ends included up to rounding).
    pub fn from_spacing(
        x_min: f64,
        x_max: f64,
        z_min: f64,
        z_max: f64,
        dx: f64,
        dz: f64,
    ) -> Result<Self> {
        if !(dx > 0.0 && dz > 0.0) || !(x_max >= x_min) || !(z_max >= z_min) {
            bail!(InvalidArgument, "bad grid spacing or extent");
        }
        let nx = math::floor((x_max - x_min) / dx + 1e-9) as usize + 1;
        let nz = math::floor((z_max - z_min) / dz + 1e-9) as usize + 1;
        Self::new(x_min, z_min, dx, dz, nx, nz)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dx > 0.0 && self.dz > 0.0) {
            bail!(InvalidArgument, "grid spacing must be positive (dx={}, dz={})", self.dx, self.dz);
        }
        if !(self.z0 >= 0.0) {
            bail!(InvalidArgument, "grid must start at or below the transducer face (z0={})", self.z0);
        }
        if self.nx == 0 || self.nz == 0 {
            bail!(InvalidArgument, "grid must have at least one pixel ({}×{})", self.nx, self.nz);
        }
        if !(self.x0.is_finite() && self.z0.is_finite()) {
            bail!(InvalidArgument, "grid origin must be finite");
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.nx * self.nz
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, ix: usize, iz: usize) -> usize {
        iz * self.nx + ix
    }

    #[inline]
    pub fn x(&self, ix: usize) -> f64 {
        self.x0 + ix as f64 * self.dx
    }

    #[inline]
    pub fn z(&self, iz: usize) -> f64 {
        self.z0 + iz as f64 * self.dz
    }

    #[inline]
    pub fn pixel(&self, ix: usize, iz: usize) -> Point {
        Point::new(self.x(ix), self.z(iz))
    }

    /// Cell boundaries: `(x_min, x_max, z_min, z_max)` of the area tiled by
    /// the pixels when each pixel is read as a `dx × dz` cell.
    pub fn cell_bounds(&self) -> (f64, f64, f64, f64) {
        (
            self.x0 - self.dx / 2.0,
            self.x0 + (self.nx as f64 - 0.5) * self.dx,
            self.z0 - self.dz / 2.0,
            self.z0 + (self.nz as f64 - 0.5) * self.dz,
        )
    }

    /// Cell containing `p`, if any.
    pub fn cell_of(&self, p: Point) -> Option<(usize, usize)> {
        let fx = (p.x - self.x0) / self.dx + 0.5;
        let fz = (p.z - self.z0) / self.dz + 0.5;
        if fx < 0.0 || fz < 0.0 {
            return None;
        }
        let (ix, iz) = (math::floor(fx) as usize, math::floor(fz) as usize);
        (ix < self.nx && iz < self.nz).then_some((ix, iz))
    }

    /// Decimated grid taking every `step_x`-th column and `step_z`-th row,
    /// starting at `(ix0, iz0)`, with `nx × nz` nodes.
    pub fn subgrid(
        &self,
        ix0: usize,
        iz0: usize,
        step_x: usize,
        step_z: usize,
        nx: usize,
        nz: usize,
    ) -> Result<Self> {
        Self::new(
            self.x(ix0),
            self.z(iz0),
            self.dx * step_x as f64,
            self.dz * step_z as f64,
            nx,
            nz,
        )
    }

    /// Same extent, tolerance-aware equality (grids rebuilt from text files
    /// differ in the last bits).
    pub fn approx_eq(&self, other: &Self) -> bool {
        let close = |a: f64, b: f64, scale: f64| (a - b).abs() <= 1e-9 * scale;
        let s = self.dx.max(self.dz);
        self.nx == other.nx
            && self.nz == other.nz
            && close(self.x0, other.x0, s)
            && close(self.z0, other.z0, s)
            && close(self.dx, other.dx, s)
            && close(self.dz, other.dz, s)
    }
}

/// Angular region of interest in the polar frame whose apex is
/// `(reference_x, 0)` on the transducer face.
///
/// `θ` is measured from the depth axis, positive towards `+x`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolarRoi {
    pub depth_min: f64,
    pub depth_max: f64,
    pub theta_min: f64,
    pub theta_max: f64,
    pub num_bins: usize,
    pub reference_x: f64,
}

impl Default for PolarRoi {
    fn default() -> Self {
        Self {
            depth_min: 7.5e-3,
            depth_max: 15.0e-3,
            theta_min: -0.4,
            theta_max: 0.4,
            num_bins: 40,
            reference_x: 0.0,
        }
    }
}

impl PolarRoi {
    pub fn validate(&self) -> Result<()> {
        if !(self.depth_min < self.depth_max) {
            bail!(InvalidArgument, "ROI depth_min must be below depth_max");
        }
        if !(self.theta_min < self.theta_max) {
            bail!(InvalidArgument, "ROI theta_min must be below theta_max");
        }
        if self.num_bins < 2 {
            bail!(InvalidArgument, "ROI needs at least 2 angular bins");
        }
        if !self.reference_x.is_finite() {
            bail!(InvalidArgument, "ROI reference_x must be finite");
        }
        Ok(())
    }

    pub fn bin_width(&self) -> f64 {
        (self.theta_max - self.theta_min) / self.num_bins as f64
    }

    pub fn bin_center(&self, b: usize) -> f64 {
        self.theta_min + (b as f64 + 0.5) * self.bin_width()
    }

    /// Angular bin of `theta`; `theta_max` itself falls in the last bin.
    pub fn bin_of(&self, theta: f64) -> Option<usize> {
        if theta < self.theta_min || theta > self.theta_max {
            return None;
        }
        let b = math::floor((theta - self.theta_min) / self.bin_width()) as usize;
        Some(b.min(self.num_bins - 1))
    }

    pub fn contains(&self, r: f64, theta: f64) -> bool {
        r >= self.depth_min && r <= self.depth_max && theta >= self.theta_min && theta <= self.theta_max
    }
}

/// Polar coordinates `(r, θ)` of `p` in the frame of `roi`.
pub fn pixel_to_polar(p: Point, roi: &PolarRoi) -> Result<(f64, f64)> {
    if !(p.z > 0.0) {
        bail!(InvalidArgument, "polar conversion needs z > 0, got z = {}", p.z);
    }
    let lateral = p.x - roi.reference_x;
    Ok((math::hypot(lateral, p.z), math::atan2(lateral, p.z)))
}

/// Inverse of [`pixel_to_polar`].
pub fn polar_to_pixel(r: f64, theta: f64, roi: &PolarRoi) -> Point {
    Point::new(roi.reference_x + r * math::sin(theta), r * math::cos(theta))
}
