use alloc::vec;
use alloc::vec::Vec;

/// One sparse row as `(column, value)` pairs.
pub type SparseRow = Vec<(usize, f64)>;

/// Compressed sparse row matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    ncols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    pub fn new(ncols: usize) -> Self {
        Self { ncols, indptr: vec![0], indices: Vec::new(), values: Vec::new() }
    }

    /// Appends a row; entries need not be sorted but columns must be unique.
    pub fn push_row(&mut self, row: &[(usize, f64)]) {
        for &(j, v) in row {
            debug_assert!(j < self.ncols);
            self.indices.push(j);
            self.values.push(v);
        }
        self.indptr.push(self.indices.len());
    }

    pub fn nrows(&self) -> usize {
        self.indptr.len() - 1
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let span = self.indptr[i]..self.indptr[i + 1];
        (&self.indices[span.clone()], &self.values[span])
    }

    pub fn row_dot(&self, i: usize, x: &[f64]) -> f64 {
        let (idx, val) = self.row(i);
        idx.iter().zip(val).map(|(&j, v)| v * x[j]).sum()
    }

    /// `out = A·x`
    pub fn mul_vec(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.ncols);
        for (i, o) in out.iter_mut().enumerate().take(self.nrows()) {
            *o = self.row_dot(i, x);
        }
    }

    /// `out += Aᵀ·y`
    pub fn mul_t_vec_add(&self, y: &[f64], out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.ncols);
        for (i, &yi) in y.iter().enumerate().take(self.nrows()) {
            if yi == 0.0 {
                continue;
            }
            let (idx, val) = self.row(i);
            for (&j, v) in idx.iter().zip(val) {
                out[j] += v * yi;
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        self.values.iter_mut().for_each(|v| *v *= factor);
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// `a − b` for rows sorted by column, dropping exact cancellations.
pub fn row_difference(a: &[(usize, f64)], b: &[(usize, f64)]) -> SparseRow {
    let mut out = Vec::with_capacity(a.len() + b.len());
    let (mut i, mut j) = (0, 0);
    while i < a.len() || j < b.len() {
        let next = match (a.get(i), b.get(j)) {
            (Some(&(ca, va)), Some(&(cb, vb))) if ca == cb => {
                i += 1;
                j += 1;
                (ca, va - vb)
            }
            (Some(&(ca, va)), Some(&(cb, _))) if ca < cb => {
                i += 1;
                (ca, va)
            }
            (Some(&(ca, va)), None) => {
                i += 1;
                (ca, va)
            }
            (_, Some(&(cb, vb))) => {
                j += 1;
                (cb, -vb)
            }
            (None, None) => unreachable!(),
        };
        if next.1 != 0.0 {
            out.push(next);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn products() {
        let mut m = CsrMatrix::new(3);
        m.push_row(&[(0, 1.0), (2, 2.0)]);
        m.push_row(&[]);
        m.push_row(&[(1, -1.0)]);
        let mut y = [0.0; 3];
        m.mul_vec(&[1.0, 2.0, 3.0], &mut y);
        assert_eq!(y, [7.0, 0.0, -2.0]);
        let mut g = [0.0; 3];
        m.mul_t_vec_add(&[1.0, 5.0, 2.0], &mut g);
        assert_eq!(g, [1.0, -2.0, 2.0]);
        assert_eq!((m.nrows(), m.nnz()), (3, 3));
    }

    #[test]
    fn difference_merges_columns() {
        let d = row_difference(&[(0, 1.0), (3, 2.0), (5, 1.0)], &[(3, 2.0), (4, 1.5)]);
        assert_eq!(d, vec![(0, 1.0), (4, -1.5), (5, 1.0)]);
    }
}
