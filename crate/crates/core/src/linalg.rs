//! Small dense linear least squares.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{bail, Result};
use crate::math;

/// Solves `min ‖A·x − b‖₂` for a column-major `rows × cols` matrix `a` with
/// `rows ≥ cols`, by Householder QR.
///
/// Fails with [`crate::Error::RankDeficient`] when a diagonal entry of `R`
/// falls below `1e-12` of the largest column norm.
pub fn lstsq(a: &[f64], rows: usize, cols: usize, b: &[f64]) -> Result<Vec<f64>> {
    if a.len() != rows * cols || b.len() != rows {
        bail!(InvalidArgument, "lstsq: inconsistent dimensions");
    }
    if rows < cols {
        bail!(InsufficientData, "lstsq: {rows} equations for {cols} unknowns");
    }
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    let col = |j: usize| j * rows;
    let scale = (0..cols)
        .map(|j| math::sqrt(a[col(j)..col(j) + rows].iter().map(|v| v * v).sum()))
        .fold(0.0, f64::max);
    if scale == 0.0 {
        bail!(RankDeficient, "lstsq: zero design matrix");
    }

    let mut diag = vec![0.0; cols];
    for k in 0..cols {
        let norm = math::sqrt(a[col(k) + k..col(k) + rows].iter().map(|v| v * v).sum());
        if norm <= 1e-12 * scale {
            bail!(RankDeficient, "lstsq: column {k} is (numerically) dependent on earlier columns");
        }
        let alpha = if a[col(k) + k] > 0.0 { -norm } else { norm };
        // v = x − alpha·e1, stored in place of column k below the diagonal.
        a[col(k) + k] -= alpha;
        let vnorm2: f64 = a[col(k) + k..col(k) + rows].iter().map(|v| v * v).sum();
        for j in k + 1..cols {
            let dot: f64 = (k..rows).map(|i| a[col(k) + i] * a[col(j) + i]).sum();
            let f = 2.0 * dot / vnorm2;
            for i in k..rows {
                a[col(j) + i] -= f * a[col(k) + i];
            }
        }
        let dot: f64 = (k..rows).map(|i| a[col(k) + i] * b[i]).sum();
        let f = 2.0 * dot / vnorm2;
        for i in k..rows {
            b[i] -= f * a[col(k) + i];
        }
        diag[k] = alpha;
    }

    let mut x = vec![0.0; cols];
    for k in (0..cols).rev() {
        let mut s = b[k];
        for j in k + 1..cols {
            s -= a[col(j) + k] * x[j];
        }
        x[k] = s / diag[k];
    }
    Ok(x)
}
