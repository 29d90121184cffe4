//! Row-major 2-D tensors of f64 and the few dense kernels the model needs.

use rand::Rng;
use serde::{Deserialize, Serialize};

/// Dense row-major matrix, `rows x cols`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn randn<R: Rng>(rows: usize, cols: usize, std: f64, rng: &mut R) -> Self {
        let data = (0..rows * cols).map(|_| gauss(rng) * std).collect();
        Self { rows, cols, data }
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Self {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn same_shape(&self, other: &Tensor) -> bool {
        self.rows == other.rows && self.cols == other.cols
    }

    /// `self += other`, shapes must match.
    pub fn add_assign(&mut self, other: &Tensor) {
        assert!(self.same_shape(other), "tensor shape mismatch in add");
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn scale(&mut self, k: f64) {
        for v in &mut self.data {
            *v *= k;
        }
    }

    pub fn l2_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Box-Muller standard normal.
fn gauss<R: Rng>(rng: &mut R) -> f64 {
    let u1: f64 = rng.random::<f64>().max(1e-300);
    let u2: f64 = rng.random();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// `y = x @ W^T` for one activation row; `w` is `[out, in]` row-major.
pub fn linear(x: &[f64], w: &Tensor) -> Vec<f64> {
    debug_assert_eq!(x.len(), w.cols);
    (0..w.rows)
        .map(|o| {
            let row = w.row(o);
            dot(x, row)
        })
        .collect()
}

/// Accumulate `dW += dy^T x` for one row pair.
pub fn linear_backward_w(dw: &mut Tensor, dy: &[f64], x: &[f64]) {
    debug_assert_eq!(dy.len(), dw.rows);
    debug_assert_eq!(x.len(), dw.cols);
    for (o, &dyo) in dy.iter().enumerate() {
        if dyo == 0.0 {
            continue;
        }
        let row = dw.row_mut(o);
        for (i, &xi) in x.iter().enumerate() {
            row[i] += dyo * xi;
        }
    }
}

/// Accumulate `dx += dy @ W`.
pub fn linear_backward_x(dx: &mut [f64], dy: &[f64], w: &Tensor) {
    debug_assert_eq!(dy.len(), w.rows);
    debug_assert_eq!(dx.len(), w.cols);
    for (o, &dyo) in dy.iter().enumerate() {
        if dyo == 0.0 {
            continue;
        }
        let row = w.row(o);
        for (i, &wi) in row.iter().enumerate() {
            dx[i] += dyo * wi;
        }
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Numerically stable in-place softmax over the leading `n` entries;
/// the rest of `row` is zeroed.
pub fn softmax_prefix(row: &mut [f64], n: usize) {
    let m = row[..n].iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in &mut row[..n] {
        *v = (*v - m).exp();
        sum += *v;
    }
    for v in &mut row[..n] {
        *v /= sum;
    }
    for v in &mut row[n..] {
        *v = 0.0;
    }
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let mut out = logits.to_vec();
    let n = out.len();
    softmax_prefix(&mut out, n);
    out
}
