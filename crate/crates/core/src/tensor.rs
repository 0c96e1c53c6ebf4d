//! Dense row-major containers: a general [`Matrix`] for attention kernels and
//! the finite-valued [`LatentSequence`] (frames × channels) the editor operates on.

use crate::error::{MlvError, Result};
use crate::scalar::Scalar;

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix<S> {
    rows: usize,
    cols: usize,
    data: Vec<S>,
}

impl<S: Scalar> Matrix<S> {
    pub fn new(rows: usize, cols: usize, data: Vec<S>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(MlvError::shape(format!(
                "{rows}x{cols} matrix needs {} elements, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![S::zero(); rows * cols],
        }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> S) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self { rows, cols, data }
    }

    /// Builds a matrix from equal-length rows.
    pub fn from_rows(rows: &[Vec<S>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(MlvError::shape("ragged rows"));
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data: rows.concat(),
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn as_slice(&self) -> &[S] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<S> {
        self.data
    }

    pub fn row(&self, r: usize) -> &[S] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [S] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn get(&self, r: usize, c: usize) -> S {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: S) {
        self.data[r * self.cols + c] = v;
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// First `count` rows as a new matrix.
    pub fn head_rows(&self, count: usize) -> Result<Self> {
        if count > self.rows {
            return Err(MlvError::shape(format!(
                "cannot take {count} rows from a {}-row matrix",
                self.rows
            )));
        }
        Ok(Self {
            rows: count,
            cols: self.cols,
            data: self.data[..count * self.cols].to_vec(),
        })
    }

    /// Stacks `self` on top of `below`.
    pub fn vstack(&self, below: &Self) -> Result<Self> {
        if self.cols != below.cols {
            return Err(MlvError::shape(format!(
                "vstack column mismatch: {} vs {}",
                self.cols, below.cols
            )));
        }
        let mut data = Vec::with_capacity(self.data.len() + below.data.len());
        data.extend_from_slice(&self.data);
        data.extend_from_slice(&below.data);
        Ok(Self {
            rows: self.rows + below.rows,
            cols: self.cols,
            data,
        })
    }

    /// `self · rhs`
    pub fn matmul(&self, rhs: &Self) -> Result<Self> {
        if self.cols != rhs.rows {
            return Err(MlvError::shape(format!(
                "matmul {}x{} by {}x{}",
                self.rows, self.cols, rhs.rows, rhs.cols
            )));
        }
        let mut out = Self::zeros(self.rows, rhs.cols);
        for r in 0..self.rows {
            let lhs_row = self.row(r);
            let out_row = &mut out.data[r * rhs.cols..(r + 1) * rhs.cols];
            for (i, &a) in lhs_row.iter().enumerate() {
                if a == S::zero() {
                    continue;
                }
                for (o, &b) in out_row.iter_mut().zip(rhs.row(i)) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    /// `self · rhsᵀ`
    pub fn matmul_transposed(&self, rhs: &Self) -> Result<Self> {
        if self.cols != rhs.cols {
            return Err(MlvError::shape(format!(
                "matmul_transposed {}x{} by ({}x{})ᵀ",
                self.rows, self.cols, rhs.rows, rhs.cols
            )));
        }
        Ok(Self::from_fn(self.rows, rhs.rows, |r, c| {
            self.row(r)
                .iter()
                .zip(rhs.row(c))
                .fold(S::zero(), |acc, (&a, &b)| acc + a * b)
        }))
    }

    pub fn map(&self, f: impl Fn(S) -> S) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn add(&self, rhs: &Self) -> Result<Self> {
        if (self.rows, self.cols) != (rhs.rows, rhs.cols) {
            return Err(MlvError::shape(format!(
                "add {}x{} and {}x{}",
                self.rows, self.cols, rhs.rows, rhs.cols
            )));
        }
        Ok(Self {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&rhs.data)
                .map(|(&a, &b)| a + b)
                .collect(),
        })
    }
}

/// `frames × channels` latent values, all finite.
///
/// Every latent quantity in the editor (source latent, noisy source/target
/// latents, velocities and their differences) is a `LatentSequence`.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentSequence<S> {
    inner: Matrix<S>,
}

impl<S: Scalar> LatentSequence<S> {
    pub fn new(frames: usize, channels: usize, data: Vec<S>) -> Result<Self> {
        Self::from_matrix(Matrix::new(frames, channels, data)?)
    }

    pub fn from_matrix(inner: Matrix<S>) -> Result<Self> {
        if inner.rows() == 0 || inner.cols() == 0 {
            return Err(MlvError::shape(format!(
                "latent sequence must be non-empty, got {}x{}",
                inner.rows(),
                inner.cols()
            )));
        }
        if let Some(pos) = inner.as_slice().iter().position(|v| !v.is_finite()) {
            return Err(MlvError::NumericDomain(format!(
                "non-finite latent value at frame {}, channel {}",
                pos / inner.cols(),
                pos % inner.cols()
            )));
        }
        Ok(Self { inner })
    }

    pub fn from_fn(
        frames: usize,
        channels: usize,
        f: impl FnMut(usize, usize) -> S,
    ) -> Result<Self> {
        Self::from_matrix(Matrix::from_fn(frames, channels, f))
    }

    pub fn filled(frames: usize, channels: usize, value: S) -> Result<Self> {
        Self::from_fn(frames, channels, |_, _| value)
    }

    pub fn zeros(frames: usize, channels: usize) -> Result<Self> {
        Self::filled(frames, channels, S::zero())
    }

    pub fn frames(&self) -> usize {
        self.inner.rows()
    }

    pub fn channels(&self) -> usize {
        self.inner.cols()
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.frames(), self.channels())
    }

    pub fn frame(&self, f: usize) -> &[S] {
        self.inner.row(f)
    }

    pub fn get(&self, f: usize, c: usize) -> S {
        self.inner.get(f, c)
    }

    pub fn as_slice(&self) -> &[S] {
        self.inner.as_slice()
    }

    pub fn as_matrix(&self) -> &Matrix<S> {
        &self.inner
    }

    pub fn into_matrix(self) -> Matrix<S> {
        self.inner
    }

    /// Frames `[start, end)` as a new sequence.
    pub fn slice_frames(&self, start: usize, end: usize) -> Result<Self> {
        if start >= end || end > self.frames() {
            return Err(MlvError::shape(format!(
                "frame range [{start}, {end}) invalid for {} frames",
                self.frames()
            )));
        }
        let c = self.channels();
        Self::new(end - start, c, self.as_slice()[start * c..end * c].to_vec())
    }

    pub fn check_same_shape(&self, other: &Self, what: &str) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(MlvError::shape(format!(
                "{what}: {:?} vs {:?}",
                self.shape(),
                other.shape()
            )));
        }
        Ok(())
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(S, S) -> S) -> Result<Self> {
        self.check_same_shape(other, "elementwise operands")?;
        let data = self
            .as_slice()
            .iter()
            .zip(other.as_slice())
            .map(|(&a, &b)| f(a, b))
            .collect();
        Self::new(self.frames(), self.channels(), data)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn scale(&self, alpha: S) -> Result<Self> {
        Self::from_matrix(self.inner.map(|v| v * alpha))
    }

    /// Root-mean-square over all elements.
    pub fn rms(&self) -> S {
        let n = S::from_usize_exact(self.as_slice().len());
        (self.as_slice().iter().map(|&v| v * v).sum::<S>() / n).sqrt()
    }

    pub fn max_abs_diff(&self, other: &Self) -> S {
        self.as_slice()
            .iter()
            .zip(other.as_slice())
            .fold(S::zero(), |m, (&a, &b)| m.max((a - b).abs()))
    }
}
