//! Uniform batched matrix multiplication of differently sized members.
//!
//! Every member is zero-padded up to the element-wise maximum extents so the
//! whole batch can be processed as a single uniform batch. The padded entries
//! contribute exact zeros to every dot-product accumulation, so the cropped
//! results match the per-member products.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{invalid, shape, Result};

/// Dense row-major `f64` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(shape(format!(
                "{rows}x{cols} matrix needs {} entries, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn transpose(&self) -> Matrix {
        let mut t = Matrix::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                t.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        t
    }

    /// Copy of `self` embedded in the top-left corner of a zero `rows x cols` matrix.
    fn padded(&self, rows: usize, cols: usize) -> Matrix {
        let mut p = Matrix::zeros(rows, cols);
        for r in 0..self.rows {
            p.data[r * cols..r * cols + self.cols].copy_from_slice(self.row(r));
        }
        p
    }

    fn cropped(&self, rows: usize, cols: usize) -> Matrix {
        let mut c = Matrix::zeros(rows, cols);
        for r in 0..rows {
            c.data[r * cols..(r + 1) * cols].copy_from_slice(&self.data[r * self.cols..r * self.cols + cols]);
        }
        c
    }
}

/// `a * b` with the inner index accumulated in ascending order.
pub fn multiply(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.cols != b.rows {
        return Err(shape(format!(
            "cannot multiply {}x{} by {}x{}",
            a.rows, a.cols, b.rows, b.cols
        )));
    }
    let mut c = Matrix::zeros(a.rows, b.cols);
    for r in 0..a.rows {
        let arow = a.row(r);
        for col in 0..b.cols {
            let mut sum = 0.0;
            for (k, &av) in arow.iter().enumerate() {
                sum += av * b.data[k * b.cols + col];
            }
            c.data[r * b.cols + col] = sum;
        }
    }
    Ok(c)
}

/// Member extents `(rows_A, cols_A, cols_B)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct GemmDims {
    pub rows: usize,
    pub inner: usize,
    pub cols: usize,
}

impl GemmDims {
    fn flops(&self) -> u64 {
        2 * (self.rows * self.inner * self.cols) as u64
    }
}

/// How the uniform batch computes each product.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Layout {
    /// `C = A B`.
    #[default]
    Direct,
    /// `C^T = B^T A^T`, transposed back on output.
    Transposed,
}

/// A batch of `(A_i, B_i)` pairs padded with zeros to uniform extents.
#[derive(Debug, Clone)]
pub struct PaddedBatch {
    dims: Vec<GemmDims>,
    pad_dims: GemmDims,
    a_store: Vec<Matrix>,
    b_store: Vec<Matrix>,
}

/// Useful versus executed flop counts of a padded batch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PaddingOverhead {
    pub useful_flops: u64,
    pub padded_flops: u64,
    pub overhead_ratio: f64,
}

impl PaddedBatch {
    pub fn count(&self) -> usize {
        self.dims.len()
    }

    pub fn dims(&self) -> &[GemmDims] {
        &self.dims
    }

    pub fn pad_dims(&self) -> GemmDims {
        self.pad_dims
    }

    pub fn a_store(&self) -> &[Matrix] {
        &self.a_store
    }

    pub fn b_store(&self) -> &[Matrix] {
        &self.b_store
    }

    /// Multiplies every member at the padded size and crops each product back
    /// to its original extent.
    pub fn batched_multiply(&self, layout: Layout) -> Vec<Matrix> {
        let pad = self.pad_dims;
        (0..self.count())
            .into_par_iter()
            .map(|i| {
                let d = self.dims[i];
                let full = match layout {
                    Layout::Direct => uniform_product(&self.a_store[i], &self.b_store[i], pad),
                    Layout::Transposed => {
                        let bt = self.b_store[i].transpose();
                        let at = self.a_store[i].transpose();
                        let ct = uniform_product(
                            &bt,
                            &at,
                            GemmDims {
                                rows: pad.cols,
                                inner: pad.inner,
                                cols: pad.rows,
                            },
                        );
                        ct.transpose()
                    }
                };
                full.cropped(d.rows, d.cols)
            })
            .collect()
    }

    pub fn padding_overhead(&self) -> PaddingOverhead {
        let useful_flops: u64 = self.dims.iter().map(GemmDims::flops).sum();
        let padded_flops = self.count() as u64 * self.pad_dims.flops();
        let overhead_ratio = if useful_flops == 0 {
            // Only reachable with empty members; nothing useful is computed.
            if padded_flops == 0 {
                1.0
            } else {
                f64::INFINITY
            }
        } else {
            padded_flops as f64 / useful_flops as f64
        };
        PaddingOverhead {
            useful_flops,
            padded_flops,
            overhead_ratio,
        }
    }
}

/// Fixed-extent kernel shared by every member of a uniform batch.
fn uniform_product(a: &Matrix, b: &Matrix, d: GemmDims) -> Matrix {
    debug_assert_eq!((a.rows, a.cols), (d.rows, d.inner));
    debug_assert_eq!((b.rows, b.cols), (d.inner, d.cols));
    let mut c = Matrix::zeros(d.rows, d.cols);
    for r in 0..d.rows {
        for col in 0..d.cols {
            let mut sum = 0.0;
            for k in 0..d.inner {
                sum += a.data[r * d.inner + k] * b.data[k * d.cols + col];
            }
            c.data[r * d.cols + col] = sum;
        }
    }
    c
}

/// Pads every member to the element-wise maximum `(R, K, C)` extents.
pub fn pad_batch(members: &[(Matrix, Matrix)]) -> Result<PaddedBatch> {
    if members.is_empty() {
        return Err(invalid("batch must contain at least one member"));
    }
    let mut dims = Vec::with_capacity(members.len());
    for (i, (a, b)) in members.iter().enumerate() {
        if a.cols != b.rows {
            return Err(invalid(format!(
                "member {i}: A is {}x{} but B is {}x{}",
                a.rows, a.cols, b.rows, b.cols
            )));
        }
        dims.push(GemmDims {
            rows: a.rows,
            inner: a.cols,
            cols: b.cols,
        });
    }
    let pad_dims = dims.iter().fold(
        GemmDims {
            rows: 0,
            inner: 0,
            cols: 0,
        },
        |acc, d| GemmDims {
            rows: acc.rows.max(d.rows),
            inner: acc.inner.max(d.inner),
            cols: acc.cols.max(d.cols),
        },
    );
    let a_store = members
        .iter()
        .map(|(a, _)| a.padded(pad_dims.rows, pad_dims.inner))
        .collect();
    let b_store = members
        .iter()
        .map(|(_, b)| b.padded(pad_dims.inner, pad_dims.cols))
        .collect();
    Ok(PaddedBatch {
        dims,
        pad_dims,
        a_store,
        b_store,
    })
}
