//! Minimal dense row-major f64 matrix used for batches and activations.
//!
//! The MLP hot path only needs three product shapes (`A·Bᵀ`, `Aᵀ·B`, `A·B`),
//! so those are provided as explicit kernels instead of pulling in a linear
//! algebra crate. All loops accumulate in a fixed order so results are
//! bitwise reproducible.

use crate::error::{Error, Result};

/// Dense row-major matrix of f64.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    /// All-zero matrix of the given shape.
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    /// Build from a flat row-major buffer.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::ShapeMismatch {
                context: "Matrix::from_vec buffer length",
                expected: rows * cols,
                actual: data.len(),
            });
        }
        Ok(Self { rows, cols, data })
    }

    /// Build from nested rows; every row must have the same width.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let height = rows.len();
        let width = rows.first().map_or(0, |r| r.len());
        let mut data = Vec::with_capacity(height * width);
        for row in rows {
            if row.len() != width {
                return Err(Error::ShapeMismatch {
                    context: "Matrix::from_rows row width",
                    expected: width,
                    actual: row.len(),
                });
            }
            data.extend_from_slice(row);
        }
        Self::from_vec(height, width, data)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    /// Borrow row `r` as a slice.
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// Mutable row access.
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// Flat row-major view of the whole buffer.
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    /// True if every entry is finite.
    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// `out = a · bᵀ` where `a` is `[m×k]` and `b` is `[n×k]`; `out` is `[m×n]`.
///
/// This is the layout-friendly product for row-major weight matrices stored
/// as `[out_dim × in_dim]`: both operands are traversed along contiguous rows.
pub fn matmul_nt(a: &Matrix, b: &Matrix, out: &mut Matrix) {
    debug_assert_eq!(a.cols, b.cols);
    debug_assert_eq!(out.rows, a.rows);
    debug_assert_eq!(out.cols, b.rows);
    let k = a.cols;
    for i in 0..a.rows {
        let arow = a.row(i);
        let orow = out.row_mut(i);
        for (j, o) in orow.iter_mut().enumerate() {
            let brow = &b.data[j * k..(j + 1) * k];
            let mut acc = 0.0;
            for t in 0..k {
                acc += arow[t] * brow[t];
            }
            *o = acc;
        }
    }
}

/// `out = aᵀ · b` where `a` is `[k×m]` and `b` is `[k×n]`; `out` is `[m×n]`.
pub fn matmul_tn(a: &Matrix, b: &Matrix, out: &mut Matrix) {
    debug_assert_eq!(a.rows, b.rows);
    debug_assert_eq!(out.rows, a.cols);
    debug_assert_eq!(out.cols, b.cols);
    for v in out.data.iter_mut() {
        *v = 0.0;
    }
    let n = b.cols;
    for t in 0..a.rows {
        let arow = a.row(t);
        let brow = &b.data[t * n..(t + 1) * n];
        for (i, &av) in arow.iter().enumerate() {
            let orow = &mut out.data[i * n..(i + 1) * n];
            for j in 0..n {
                orow[j] += av * brow[j];
            }
        }
    }
}

/// `out = a · b` where `a` is `[m×k]` and `b` is `[k×n]`; `out` is `[m×n]`.
pub fn matmul_nn(a: &Matrix, b: &Matrix, out: &mut Matrix) {
    debug_assert_eq!(a.cols, b.rows);
    debug_assert_eq!(out.rows, a.rows);
    debug_assert_eq!(out.cols, b.cols);
    for v in out.data.iter_mut() {
        *v = 0.0;
    }
    let n = b.cols;
    for i in 0..a.rows {
        let arow = a.row(i);
        for (t, &av) in arow.iter().enumerate() {
            let brow = &b.data[t * n..(t + 1) * n];
            let orow = &mut out.data[i * n..(i + 1) * n];
            for j in 0..n {
                orow[j] += av * brow[j];
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn from_vec_rejects_bad_length() {
        assert!(Matrix::from_vec(2, 3, vec![0.0; 5]).is_err());
    }

    #[test]
    fn products_agree_on_small_case() {
        // a = [[1,2],[3,4]], b = [[5,6],[7,8]]
        let a = Matrix::from_vec(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let b = Matrix::from_vec(2, 2, vec![5.0, 6.0, 7.0, 8.0]).unwrap();

        let mut nn = Matrix::zeros(2, 2);
        matmul_nn(&a, &b, &mut nn);
        assert_eq!(nn.as_slice(), &[19.0, 22.0, 43.0, 50.0]);

        // a · bᵀ
        let mut nt = Matrix::zeros(2, 2);
        matmul_nt(&a, &b, &mut nt);
        assert_eq!(nt.as_slice(), &[17.0, 23.0, 39.0, 53.0]);

        // aᵀ · b
        let mut tn = Matrix::zeros(2, 2);
        matmul_tn(&a, &b, &mut tn);
        assert_eq!(tn.as_slice(), &[26.0, 30.0, 38.0, 44.0]);
    }
}
