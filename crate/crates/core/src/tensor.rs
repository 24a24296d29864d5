//! Dense row-major 2-D matrix with 64-bit elements.
//!
//! All reductions use a fixed left-to-right summation order so results are
//! bit-identical across runs and thread counts. Tensors are immutable once
//! built (mutation requires exclusive ownership) and safe to share.

use crate::error::{Error, Result};

/// Dense matrix, row-major, `f64` storage.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Tensor {
    /// Build from a row-major buffer. Fails if the length does not match.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::InvalidShape {
                rows,
                cols,
                len: data.len(),
            });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Self::zeros(n, n);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    /// Build element-by-element from a function of (row, col).
    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    /// Row `i` as a contiguous slice.
    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Error out when any element is NaN or infinite.
    pub fn ensure_finite(&self, context: &'static str) -> Result<()> {
        if self.is_finite() {
            Ok(())
        } else {
            Err(Error::NonFinite { context })
        }
    }

    /// Matrix product with 64-bit accumulation. For each output element the
    /// inner sum runs over `k` in ascending order, so the result is
    /// deterministic independent of loop blocking.
    pub fn matmul(&self, rhs: &Tensor) -> Result<Tensor> {
        if self.cols != rhs.rows {
            return Err(Error::DimensionMismatch {
                op: "matmul",
                left_rows: self.rows,
                left_cols: self.cols,
                right_rows: rhs.rows,
                right_cols: rhs.cols,
            });
        }
        let (p, q, s) = (self.rows, self.cols, rhs.cols);
        let mut out = vec![0.0; p * s];
        // i-k-j order: cache-friendly and sums each output in ascending k.
        for i in 0..p {
            let a_row = &self.data[i * q..(i + 1) * q];
            let o_row = &mut out[i * s..(i + 1) * s];
            for (k, &a) in a_row.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let b_row = &rhs.data[k * s..(k + 1) * s];
                for j in 0..s {
                    o_row[j] += a * b_row[j];
                }
            }
        }
        Ok(Tensor {
            rows: p,
            cols: s,
            data: out,
        })
    }

    /// Frobenius norm: sqrt of the sum of squares, summed left-to-right.
    pub fn fro_norm(&self) -> f64 {
        let mut acc = 0.0;
        for &x in &self.data {
            acc += x * x;
        }
        acc.sqrt()
    }

    /// Largest absolute value over the whole tensor (0 for empty).
    pub fn absmax(&self) -> f64 {
        let mut m = 0.0f64;
        for &x in &self.data {
            let a = x.abs();
            if a > m {
                m = a;
            }
        }
        m
    }

    /// Largest absolute value of each row.
    pub fn row_absmax(&self) -> Vec<f64> {
        (0..self.rows)
            .map(|i| {
                let mut m = 0.0f64;
                for &x in self.row(i) {
                    let a = x.abs();
                    if a > m {
                        m = a;
                    }
                }
                m
            })
            .collect()
    }

    /// Largest absolute value of each column.
    pub fn col_absmax(&self) -> Vec<f64> {
        let mut m = vec![0.0f64; self.cols];
        for i in 0..self.rows {
            for (j, &x) in self.row(i).iter().enumerate() {
                let a = x.abs();
                if a > m[j] {
                    m[j] = a;
                }
            }
        }
        m
    }

    pub fn transpose(&self) -> Tensor {
        let mut out = Tensor::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        out
    }

    pub fn add(&self, rhs: &Tensor) -> Result<Tensor> {
        self.zip_with(rhs, "add", |a, b| a + b)
    }

    pub fn sub(&self, rhs: &Tensor) -> Result<Tensor> {
        self.zip_with(rhs, "sub", |a, b| a - b)
    }

    fn zip_with(&self, rhs: &Tensor, op: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        if self.shape() != rhs.shape() {
            return Err(Error::DimensionMismatch {
                op,
                left_rows: self.rows,
                left_cols: self.cols,
                right_rows: rhs.rows,
                right_cols: rhs.cols,
            });
        }
        let data = self
            .data
            .iter()
            .zip(&rhs.data)
            .map(|(&a, &b)| f(a, b))
            .collect();
        Ok(Tensor {
            rows: self.rows,
            cols: self.cols,
            data,
        })
    }

    pub fn scale(&self, c: f64) -> Tensor {
        Tensor {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&x| x * c).collect(),
        }
    }

    /// Multiply row `i` by `factors[i]`.
    pub fn scale_rows(&self, factors: &[f64]) -> Result<Tensor> {
        if factors.len() != self.rows {
            return Err(Error::InvalidShape {
                rows: self.rows,
                cols: 1,
                len: factors.len(),
            });
        }
        let mut out = self.clone();
        for (chunk, &f) in out.data.chunks_mut(self.cols).zip(factors) {
            for x in chunk {
                *x *= f;
            }
        }
        Ok(out)
    }

    /// Multiply column `j` by `factors[j]`.
    pub fn scale_cols(&self, factors: &[f64]) -> Result<Tensor> {
        if factors.len() != self.cols {
            return Err(Error::InvalidShape {
                rows: 1,
                cols: self.cols,
                len: factors.len(),
            });
        }
        let mut out = self.clone();
        for i in 0..self.rows {
            for (j, x) in out.data[i * self.cols..(i + 1) * self.cols].iter_mut().enumerate() {
                *x *= factors[j];
            }
        }
        Ok(out)
    }

    /// Concatenate columns: `[self | rhs]`.
    pub fn hstack(&self, rhs: &Tensor) -> Result<Tensor> {
        if self.rows != rhs.rows {
            return Err(Error::DimensionMismatch {
                op: "hstack",
                left_rows: self.rows,
                left_cols: self.cols,
                right_rows: rhs.rows,
                right_cols: rhs.cols,
            });
        }
        let cols = self.cols + rhs.cols;
        let mut data = Vec::with_capacity(self.rows * cols);
        for i in 0..self.rows {
            data.extend_from_slice(self.row(i));
            data.extend_from_slice(rhs.row(i));
        }
        Ok(Tensor {
            rows: self.rows,
            cols,
            data,
        })
    }

    /// Concatenate rows: `[self ; rhs]`.
    pub fn vstack(&self, rhs: &Tensor) -> Result<Tensor> {
        if self.cols != rhs.cols {
            return Err(Error::DimensionMismatch {
                op: "vstack",
                left_rows: self.rows,
                left_cols: self.cols,
                right_rows: rhs.rows,
                right_cols: rhs.cols,
            });
        }
        let mut data = self.data.clone();
        data.extend_from_slice(&rhs.data);
        Ok(Tensor {
            rows: self.rows + rhs.rows,
            cols: self.cols,
            data,
        })
    }
}
