// SPDX-License-Identifier: MIT OR Apache-2.0

//! Small dense tensors used as oracles for the TT algebra.

use crate::error::{Error, Result};

/// Largest number of entries a dense tensor may hold.
pub const DENSE_LIMIT: usize = 10_000_000;

/// Row-major dense tensor (last index varies fastest).
#[derive(Debug, Clone, PartialEq)]
pub struct DenseTensor {
    mode_sizes: Vec<usize>,
    entries: Vec<f64>,
}

/// Checked product of mode sizes against [`DENSE_LIMIT`].
pub(crate) fn checked_size(mode_sizes: &[usize]) -> Result<usize> {
    let mut size: usize = 1;
    for &n in mode_sizes {
        size = size.checked_mul(n).unwrap_or(usize::MAX);
        if size > DENSE_LIMIT {
            return Err(Error::SizeGuard {
                size,
                limit: DENSE_LIMIT,
            });
        }
    }
    Ok(size)
}

impl DenseTensor {
    /// Wraps row-major entries; the entry count must equal the product of mode sizes.
    pub fn new(mode_sizes: Vec<usize>, entries: Vec<f64>) -> Result<Self> {
        if mode_sizes.is_empty() || mode_sizes.contains(&0) {
            return Err(Error::InvalidInput(
                "mode sizes must be non-empty and positive".into(),
            ));
        }
        let size = checked_size(&mode_sizes)?;
        if size != entries.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} entries for mode sizes {:?}",
                entries.len(),
                mode_sizes
            )));
        }
        Ok(Self {
            mode_sizes,
            entries,
        })
    }

    /// All-zero tensor.
    pub fn zeros(mode_sizes: Vec<usize>) -> Result<Self> {
        let size = checked_size(&mode_sizes)?;
        Self::new(mode_sizes, vec![0.0; size])
    }

    /// Builds a tensor by evaluating `f` at every multi-index.
    pub fn from_fn(mode_sizes: Vec<usize>, mut f: impl FnMut(&[usize]) -> f64) -> Result<Self> {
        let mut t = Self::zeros(mode_sizes)?;
        let mut idx = vec![0usize; t.mode_sizes.len()];
        for flat in 0..t.entries.len() {
            t.unflatten_into(flat, &mut idx);
            t.entries[flat] = f(&idx);
        }
        Ok(t)
    }

    pub fn mode_sizes(&self) -> &[usize] {
        &self.mode_sizes
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    pub fn entries_mut(&mut self) -> &mut [f64] {
        &mut self.entries
    }

    pub fn ndim(&self) -> usize {
        self.mode_sizes.len()
    }

    /// Flat offset of a multi-index.
    pub fn flatten(&self, idx: &[usize]) -> usize {
        idx.iter()
            .zip(&self.mode_sizes)
            .fold(0, |acc, (&i, &n)| acc * n + i)
    }

    /// Multi-index of a flat offset.
    pub fn unflatten_into(&self, mut flat: usize, idx: &mut [usize]) {
        for k in (0..self.mode_sizes.len()).rev() {
            idx[k] = flat % self.mode_sizes[k];
            flat /= self.mode_sizes[k];
        }
    }

    pub fn get(&self, idx: &[usize]) -> f64 {
        self.entries[self.flatten(idx)]
    }

    /// Frobenius norm.
    pub fn norm(&self) -> f64 {
        self.entries.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    /// Frobenius inner product.
    pub fn dot(&self, other: &Self) -> f64 {
        self.entries
            .iter()
            .zip(&other.entries)
            .map(|(a, b)| a * b)
            .sum()
    }

    /// `self + c * other`.
    pub fn add_scaled(&self, other: &Self, c: f64) -> Result<Self> {
        if self.mode_sizes != other.mode_sizes {
            return Err(Error::ShapeMismatch(format!(
                "{:?} vs {:?}",
                self.mode_sizes, other.mode_sizes
            )));
        }
        let entries = self
            .entries
            .iter()
            .zip(&other.entries)
            .map(|(a, b)| a + c * b)
            .collect();
        Self::new(self.mode_sizes.clone(), entries)
    }

    /// Relative Frobenius distance `‖self − other‖ / ‖other‖` (absolute when `other` is zero).
    pub fn rel_dist(&self, other: &Self) -> f64 {
        let diff = self
            .entries
            .iter()
            .zip(&other.entries)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        let n = other.norm();
        if n > 0.0 {
            diff / n
        } else {
            diff
        }
    }

    /// Applies the matrix `m` (rows × mode_sizes\[k\], row-major) along mode `k`.
    pub fn mode_product(&self, k: usize, m: &nalgebra::DMatrix<f64>) -> Result<Self> {
        let n = self.mode_sizes[k];
        if m.ncols() != n {
            return Err(Error::ShapeMismatch(format!(
                "matrix with {} columns on mode of size {n}",
                m.ncols()
            )));
        }
        let left: usize = self.mode_sizes[..k].iter().product();
        let right: usize = self.mode_sizes[k + 1..].iter().product();
        let rows = m.nrows();
        let mut sizes = self.mode_sizes.clone();
        sizes[k] = rows;
        let mut out = Self::zeros(sizes)?;
        for l in 0..left {
            for beta in 0..rows {
                for alpha in 0..n {
                    let w = m[(beta, alpha)];
                    if w == 0.0 {
                        continue;
                    }
                    let src = (l * n + alpha) * right;
                    let dst = (l * rows + beta) * right;
                    for r in 0..right {
                        out.entries[dst + r] += w * self.entries[src + r];
                    }
                }
            }
        }
        Ok(out)
    }
}
