//! Dense f64 kernels: vectors, row-major matrices, cosine similarity,
//! temperature softmax and affine maps. Everything is f64; no SIMD, no
//! blocking, just the handful of operations the rest of the crate needs.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Norms at or below this are treated as zero for cosine purposes.
pub const NORM_EPS: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("{op}: dimension mismatch ({left} vs {right})")]
    DimMismatch {
        op: &'static str,
        left: usize,
        right: usize,
    },
    #[error("cosine undefined: vector norm {norm:e} is below {NORM_EPS:e}")]
    ZeroNorm { norm: f64 },
    #[error("temperature must be strictly positive, got {tau}")]
    NonPositiveTemperature { tau: f64 },
    #[error("{what} must contain only finite values")]
    NonFinite { what: &'static str },
    #[error("{what} must be non-empty")]
    Empty { what: &'static str },
    #[error("matrix data length {len} does not match {rows}x{cols}")]
    BadShape { rows: usize, cols: usize, len: usize },
}

/// Dense f64 vector. Invariant: non-empty, all entries finite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Vector {
    data: Vec<f64>,
}

impl Vector {
    pub fn new(data: Vec<f64>) -> Result<Self, TensorError> {
        if data.is_empty() {
            return Err(TensorError::Empty { what: "vector" });
        }
        if !data.iter().all(|x| x.is_finite()) {
            return Err(TensorError::NonFinite { what: "vector" });
        }
        Ok(Self { data })
    }

    pub fn zeros(dim: usize) -> Self {
        debug_assert!(dim > 0);
        Self {
            data: vec![0.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.data.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn dot(&self, other: &Vector) -> Result<f64, TensorError> {
        if self.dim() != other.dim() {
            return Err(TensorError::DimMismatch {
                op: "dot",
                left: self.dim(),
                right: other.dim(),
            });
        }
        Ok(dot(&self.data, &other.data))
    }

    pub fn norm(&self) -> f64 {
        dot(&self.data, &self.data).sqrt()
    }

    /// self + scale * other, used by the gradient-descent harness.
    pub fn add_scaled(&mut self, scale: f64, other: &Vector) -> Result<(), TensorError> {
        if self.dim() != other.dim() {
            return Err(TensorError::DimMismatch {
                op: "add_scaled",
                left: self.dim(),
                right: other.dim(),
            });
        }
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += scale * b;
        }
        Ok(())
    }

    pub fn normalized(&self) -> Result<Vector, TensorError> {
        let n = self.norm();
        if n <= NORM_EPS {
            return Err(TensorError::ZeroNorm { norm: n });
        }
        Ok(Vector {
            data: self.data.iter().map(|x| x / n).collect(),
        })
    }
}

impl std::ops::Index<usize> for Vector {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.data[i]
    }
}

impl std::ops::IndexMut<usize> for Vector {
    fn index_mut(&mut self, i: usize) -> &mut f64 {
        &mut self.data[i]
    }
}

/// Dense row-major f64 matrix. Invariant: rows*cols == data.len(), rows and
/// cols positive, all entries finite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, TensorError> {
        if rows == 0 || cols == 0 {
            return Err(TensorError::Empty { what: "matrix" });
        }
        if data.len() != rows * cols {
            return Err(TensorError::BadShape {
                rows,
                cols,
                len: data.len(),
            });
        }
        if !data.iter().all(|x| x.is_finite()) {
            return Err(TensorError::NonFinite { what: "matrix" });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        debug_assert!(rows > 0 && cols > 0);
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_rows(rows: &[Vector]) -> Result<Self, TensorError> {
        if rows.is_empty() {
            return Err(TensorError::Empty { what: "matrix rows" });
        }
        let cols = rows[0].dim();
        for r in rows {
            if r.dim() != cols {
                return Err(TensorError::DimMismatch {
                    op: "from_rows",
                    left: cols,
                    right: r.dim(),
                });
            }
        }
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            data.extend_from_slice(r.as_slice());
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        debug_assert!(r < self.rows && c < self.cols);
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        debug_assert!(r < self.rows && c < self.cols);
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        debug_assert!(r < self.rows);
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        debug_assert!(r < self.rows);
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn transpose(&self) -> Matrix {
        let mut out = Matrix::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        out
    }

    /// self (m x n) times other (n x p).
    pub fn matmul(&self, other: &Matrix) -> Result<Matrix, TensorError> {
        if self.cols != other.rows {
            return Err(TensorError::DimMismatch {
                op: "matmul",
                left: self.cols,
                right: other.rows,
            });
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        for r in 0..self.rows {
            for k in 0..self.cols {
                let a = self.data[r * self.cols + k];
                if a == 0.0 {
                    continue;
                }
                let orow = &other.data[k * other.cols..(k + 1) * other.cols];
                let out_row = &mut out.data[r * other.cols..(r + 1) * other.cols];
                for (o, b) in out_row.iter_mut().zip(orow) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    /// Matrix-vector product: self (m x n) times x (n).
    pub fn matvec(&self, x: &[f64]) -> Result<Vec<f64>, TensorError> {
        if self.cols != x.len() {
            return Err(TensorError::DimMismatch {
                op: "matvec",
                left: self.cols,
                right: x.len(),
            });
        }
        Ok((0..self.rows).map(|r| dot(self.row(r), x)).collect())
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Cosine similarity <a,b> / (|a||b|). Rejects mismatched dims and vectors
/// whose norm is at or below `NORM_EPS`.
pub fn cosine_sim(a: &Vector, b: &Vector) -> Result<f64, TensorError> {
    if a.dim() != b.dim() {
        return Err(TensorError::DimMismatch {
            op: "cosine_sim",
            left: a.dim(),
            right: b.dim(),
        });
    }
    let na = a.norm();
    if na <= NORM_EPS {
        return Err(TensorError::ZeroNorm { norm: na });
    }
    let nb = b.norm();
    if nb <= NORM_EPS {
        return Err(TensorError::ZeroNorm { norm: nb });
    }
    Ok(dot(a.as_slice(), b.as_slice()) / (na * nb))
}

/// Temperature softmax with max subtraction: p_i = exp((v_i - m)/tau) / sum.
pub fn softmax_temp(v: &Vector, tau: f64) -> Result<Vector, TensorError> {
    let mut out = vec![0.0; v.dim()];
    softmax_temp_into(v.as_slice(), tau, &mut out)?;
    Ok(Vector { data: out })
}

/// Slice-level softmax shared with the hot paths. `out.len() == v.len()`.
pub(crate) fn softmax_temp_into(v: &[f64], tau: f64, out: &mut [f64]) -> Result<(), TensorError> {
    if v.is_empty() {
        return Err(TensorError::Empty { what: "softmax input" });
    }
    if !(tau > 0.0) {
        return Err(TensorError::NonPositiveTemperature { tau });
    }
    debug_assert_eq!(v.len(), out.len());
    let m = v.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let mut sum = 0.0;
    for (o, &x) in out.iter_mut().zip(v) {
        let e = ((x - m) / tau).exp();
        *o = e;
        sum += e;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
    Ok(())
}

/// Affine map w x + b where w is (rows x cols), x has dim cols, b has dim rows.
pub fn affine(x: &Vector, w: &Matrix, b: &Vector) -> Result<Vector, TensorError> {
    if w.cols() != x.dim() {
        return Err(TensorError::DimMismatch {
            op: "affine",
            left: w.cols(),
            right: x.dim(),
        });
    }
    if w.rows() != b.dim() {
        return Err(TensorError::DimMismatch {
            op: "affine",
            left: w.rows(),
            right: b.dim(),
        });
    }
    let mut y = w.matvec(x.as_slice())?;
    for (yi, bi) in y.iter_mut().zip(b.as_slice()) {
        *yi += bi;
    }
    Ok(Vector { data: y })
}

/// log(sum(exp(v))) with max subtraction.
pub(crate) fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    if m == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    let s: f64 = v.iter().map(|&x| (x - m).exp()).sum();
    m + s.ln()
}
