//! Small dense row-major matrices and the induced norms used by certification.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row-major dense matrix of `f64`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
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

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.set(i, i, 1.0);
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::shape(
                "matrix",
                format!("{} values for a {rows}x{cols} matrix", data.len()),
            ));
        }
        Ok(Self { rows, cols, data })
    }

    /// Builds a matrix from nested rows; all rows must have equal length.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::shape("matrix", "ragged rows"));
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data: rows.concat(),
        })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
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
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn transpose(&self) -> Matrix {
        Matrix::from_fn(self.cols, self.rows, |r, c| self.get(c, r))
    }

    pub fn scale(&self, s: f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v * s).collect(),
        }
    }

    /// `self * other`.
    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(Error::shape(
                "matmul",
                format!("{:?} x {:?}", self.shape(), other.shape()),
            ));
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        for r in 0..self.rows {
            for k in 0..self.cols {
                let a = self.get(r, k);
                if a == 0.0 {
                    continue;
                }
                for c in 0..other.cols {
                    out.data[r * other.cols + c] += a * other.get(k, c);
                }
            }
        }
        Ok(out)
    }

    /// `self * v`.
    pub fn mul_vec(&self, v: &[f64]) -> Vec<f64> {
        debug_assert_eq!(v.len(), self.cols);
        (0..self.rows)
            .map(|r| self.row(r).iter().zip(v).map(|(a, b)| a * b).sum())
            .collect()
    }

    /// `self^T * v`.
    pub fn tr_mul_vec(&self, v: &[f64]) -> Vec<f64> {
        debug_assert_eq!(v.len(), self.rows);
        let mut out = vec![0.0; self.cols];
        for (r, &vr) in v.iter().enumerate() {
            for (o, &a) in out.iter_mut().zip(self.row(r)) {
                *o += a * vr;
            }
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs_row_sum(&self) -> f64 {
        (0..self.rows)
            .map(|r| self.row(r).iter().map(|v| v.abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    pub fn max_abs_col_sum(&self) -> f64 {
        (0..self.cols)
            .map(|c| (0..self.rows).map(|r| self.get(r, c).abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }
}

/// Order of a vector norm, or of the operator norm it induces.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NormOrder {
    L1,
    L2,
    Linf,
}

impl NormOrder {
    pub fn vector_norm(self, v: &[f64]) -> f64 {
        match self {
            NormOrder::L1 => v.iter().map(|x| x.abs()).sum(),
            NormOrder::L2 => v.iter().map(|x| x * x).sum::<f64>().sqrt(),
            NormOrder::Linf => v.iter().fold(0.0, |m, x| f64::max(m, x.abs())),
        }
    }
}

const POWER_TOL: f64 = 1e-10;
const POWER_MAX_ITERS: usize = 10_000;

/// Operator norm of `w` (acting as `v -> w v`) induced by the given vector norm.
///
/// `L1` is the max absolute column sum, `Linf` the max absolute row sum and
/// `L2` the spectral norm, computed by power iteration on the Gram matrix.
pub fn induced_norm(w: &Matrix, order: NormOrder) -> Result<f64> {
    if !w.is_finite() {
        return Err(Error::NonFinite("matrix passed to induced_norm".into()));
    }
    Ok(match order {
        NormOrder::L1 => w.max_abs_col_sum(),
        NormOrder::Linf => w.max_abs_row_sum(),
        NormOrder::L2 => spectral_norm(w),
    })
}

/// Largest singular value by power iteration on `WᵀW` (or `WWᵀ`, whichever is smaller),
/// read off as `‖Wv‖ / ‖v‖` at the converged vector.
pub fn spectral_norm(w: &Matrix) -> f64 {
    if w.rows() == 0 || w.cols() == 0 || w.as_slice().iter().all(|&v| v == 0.0) {
        return 0.0;
    }
    let gram = if w.cols() <= w.rows() {
        w.transpose().matmul(w)
    } else {
        w.matmul(&w.transpose())
    }
    .expect("gram shapes agree");
    let n = gram.rows();

    let mut v: Vec<f64> = (0..n)
        .map(|i| 1.0 + (i as f64 + 1.0).sqrt() * 1e-3)
        .collect();
    normalize(&mut v);
    let mut restarts = ChaCha8Rng::seed_from_u64(0x5eed_5eed);
    let mut lambda = 0.0;
    for _ in 0..POWER_MAX_ITERS {
        let mut y = gram.mul_vec(&v);
        let norm = NormOrder::L2.vector_norm(&y);
        if norm == 0.0 {
            // start vector landed in the null space
            v = (0..n).map(|_| restarts.random_range(-1.0..1.0)).collect();
            normalize(&mut v);
            continue;
        }
        let next = v.iter().zip(&y).map(|(a, b)| a * b).sum::<f64>();
        y.iter_mut().for_each(|e| *e /= norm);
        v = y;
        if (next - lambda).abs() <= POWER_TOL * next.abs() {
            lambda = next;
            break;
        }
        lambda = next;
    }
    let image = if w.cols() <= w.rows() {
        w.mul_vec(&v)
    } else {
        w.tr_mul_vec(&v)
    };
    let vn = NormOrder::L2.vector_norm(&v);
    if vn == 0.0 {
        return lambda.max(0.0).sqrt();
    }
    NormOrder::L2.vector_norm(&image) / vn
}

fn normalize(v: &mut [f64]) {
    let n = NormOrder::L2.vector_norm(v);
    if n > 0.0 {
        v.iter_mut().for_each(|e| *e /= n);
    }
}
