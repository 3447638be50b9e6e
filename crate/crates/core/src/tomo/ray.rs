//! Exact straight-ray / grid intersection lengths.

use alloc::vec::Vec;

use super::sparse::SparseRow;
use crate::geometry::{ImagingGrid, Point};
use crate::math;

/// Per-cell intersection lengths (meters) of the segment `from → to` with
/// the cells of `grid`, sorted by cell index.
///
/// All crossings of the segment with cell boundaries are collected as ray
/// parameters, merged, and each sub-segment is charged to the cell holding
/// its midpoint. Parts of the segment outside the grid are dropped.
pub fn ray_weights(from: Point, to: Point, grid: &ImagingGrid) -> SparseRow {
    let (dxr, dzr) = (to.x - from.x, to.z - from.z);
    let length = math::hypot(dxr, dzr);
    if length == 0.0 {
        return SparseRow::new();
    }
    let (x_min, x_max, z_min, z_max) = grid.cell_bounds();

    // Clip to the grid box (slab method).
    let (mut a_lo, mut a_hi) = (0.0f64, 1.0f64);
    for (start, delta, lo, hi) in [(from.x, dxr, x_min, x_max), (from.z, dzr, z_min, z_max)] {
        if delta == 0.0 {
            if start < lo || start > hi {
                return SparseRow::new();
            }
        } else {
            let (t0, t1) = ((lo - start) / delta, (hi - start) / delta);
            a_lo = a_lo.max(t0.min(t1));
            a_hi = a_hi.min(t0.max(t1));
        }
    }
    if a_hi <= a_lo {
        return SparseRow::new();
    }

    let mut alphas: Vec<f64> = Vec::with_capacity(grid.nx + grid.nz + 3);
    alphas.push(a_lo);
    alphas.push(a_hi);
    for (start, delta, lo, step, n) in [(from.x, dxr, x_min, grid.dx, grid.nx), (from.z, dzr, z_min, grid.dz, grid.nz)] {
        if delta == 0.0 {
            continue;
        }
        for i in 1..n {
            let a = (lo + i as f64 * step - start) / delta;
            if a > a_lo && a < a_hi {
                alphas.push(a);
            }
        }
    }
    alphas.sort_unstable_by(f64::total_cmp);

    let mut row: SparseRow = Vec::with_capacity(alphas.len());
    for pair in alphas.windows(2) {
        let span = pair[1] - pair[0];
        if span <= 0.0 {
            continue;
        }
        let mid = 0.5 * (pair[0] + pair[1]);
        let px = from.x + mid * dxr;
        let pz = from.z + mid * dzr;
        let ix = (math::floor((px - x_min) / grid.dx) as isize).clamp(0, grid.nx as isize - 1) as usize;
        let iz = (math::floor((pz - z_min) / grid.dz) as isize).clamp(0, grid.nz as isize - 1) as usize;
        row.push((grid.index(ix, iz), span * length));
    }
    row.sort_unstable_by_key(|e| e.0);
    // Sub-segments split by a crossing at a cell corner can land in one cell.
    let mut merged: SparseRow = Vec::with_capacity(row.len());
    for (j, v) in row {
        match merged.last_mut() {
            Some(last) if last.0 == j => last.1 += v,
            _ => merged.push((j, v)),
        }
    }
    merged
}
