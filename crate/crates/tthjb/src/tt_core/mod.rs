// SPDX-License-Identifier: MIT OR Apache-2.0

//! Tensor Train container and the rank-aware algebra built on it.
//!
//! A tensor `A ∈ ℝ^{n_1×…×n_d}` is stored as a chain of order-3 cores
//! `A_k ∈ ℝ^{r_{k-1}×n_k×r_k}` with `r_0 = r_d = 1`, so that
//!
//! ```text
//! A[α_1,…,α_d] = A_1[α_1] · A_2[α_2] ⋯ A_d[α_d]
//! ```
//!
//! where `A_k[α]` is the `r_{k-1}×r_k` slice of core `k`. All operations are
//! pure functions of their inputs.

pub mod checkpoint;
pub mod dense;

use nalgebra::{DMatrix, DVector};

pub use dense::{DenseTensor, DENSE_LIMIT};

use crate::error::{Error, Result};

/// One order-3 core, stored row-major as `(left rank, mode, right rank)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Core {
    r0: usize,
    n: usize,
    r1: usize,
    data: Vec<f64>,
}

impl Core {
    /// Zero core of the given shape.
    pub fn zeros(r0: usize, n: usize, r1: usize) -> Self {
        Self {
            r0,
            n,
            r1,
            data: vec![0.0; r0 * n * r1],
        }
    }

    /// Wraps row-major data of shape `r0 × n × r1`.
    pub fn from_vec(r0: usize, n: usize, r1: usize, data: Vec<f64>) -> Result<Self> {
        if r0 == 0 || n == 0 || r1 == 0 {
            return Err(Error::InvalidInput(format!(
                "core shape {r0}×{n}×{r1} has a zero extent"
            )));
        }
        if data.len() != r0 * n * r1 {
            return Err(Error::ShapeMismatch(format!(
                "core shape {r0}×{n}×{r1} needs {} entries, got {}",
                r0 * n * r1,
                data.len()
            )));
        }
        Ok(Self { r0, n, r1, data })
    }

    /// Rank-one core `1 × n × 1` holding a vector.
    pub fn from_vector(v: &[f64]) -> Self {
        Self {
            r0: 1,
            n: v.len(),
            r1: 1,
            data: v.to_vec(),
        }
    }

    pub fn left_rank(&self) -> usize {
        self.r0
    }

    pub fn mode_size(&self) -> usize {
        self.n
    }

    pub fn right_rank(&self) -> usize {
        self.r1
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn index(&self, a: usize, i: usize, b: usize) -> usize {
        (a * self.n + i) * self.r1 + b
    }

    #[inline]
    pub fn get(&self, a: usize, i: usize, b: usize) -> f64 {
        self.data[self.index(a, i, b)]
    }

    #[inline]
    pub fn set(&mut self, a: usize, i: usize, b: usize, v: f64) {
        let k = self.index(a, i, b);
        self.data[k] = v;
    }

    /// `(r0·n) × r1` unfolding.
    pub fn left_unfolding(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.r0 * self.n, self.r1, &self.data)
    }

    /// `r0 × (n·r1)` unfolding.
    pub fn right_unfolding(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.r0, self.n * self.r1, &self.data)
    }

    /// Inverse of [`Core::left_unfolding`].
    pub fn from_left_unfolding(m: &DMatrix<f64>, r0: usize, n: usize) -> Self {
        debug_assert_eq!(m.nrows(), r0 * n);
        Self {
            r0,
            n,
            r1: m.ncols(),
            data: row_major(m),
        }
    }

    /// Inverse of [`Core::right_unfolding`].
    pub fn from_right_unfolding(m: &DMatrix<f64>, n: usize, r1: usize) -> Self {
        debug_assert_eq!(m.ncols(), n * r1);
        Self {
            r0: m.nrows(),
            n,
            r1,
            data: row_major(m),
        }
    }

    /// The `r0 × r1` matrix slice at mode index `i`.
    pub fn slice(&self, i: usize) -> DMatrix<f64> {
        DMatrix::from_fn(self.r0, self.r1, |a, b| self.get(a, i, b))
    }

    /// Keeps only mode indices `0..m`.
    pub fn truncate_modes(&self, m: usize) -> Self {
        let m = m.min(self.n);
        let mut out = Self::zeros(self.r0, m, self.r1);
        for a in 0..self.r0 {
            let src = a * self.n * self.r1;
            let dst = a * m * self.r1;
            out.data[dst..dst + m * self.r1].copy_from_slice(&self.data[src..src + m * self.r1]);
        }
        out
    }

    /// Applies a matrix along the mode index: `out[a,β,b] = Σ_α m[β,α]·self[a,α,b]`.
    pub fn mode_multiply(&self, m: &DMatrix<f64>) -> Result<Self> {
        if m.ncols() != self.n {
            return Err(Error::ShapeMismatch(format!(
                "mode matrix has {} columns, core mode size is {}",
                m.ncols(),
                self.n
            )));
        }
        let rows = m.nrows();
        let mut out = Self::zeros(self.r0, rows, self.r1);
        for a in 0..self.r0 {
            for beta in 0..rows {
                let dst = (a * rows + beta) * self.r1;
                for alpha in 0..self.n {
                    let w = m[(beta, alpha)];
                    if w == 0.0 {
                        continue;
                    }
                    let src = (a * self.n + alpha) * self.r1;
                    for b in 0..self.r1 {
                        out.data[dst + b] += w * self.data[src + b];
                    }
                }
            }
        }
        Ok(out)
    }

    fn scale(&mut self, c: f64) {
        self.data.iter_mut().for_each(|x| *x *= c);
    }

    fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}

/// Row-major copy of a matrix.
pub(crate) fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    m.transpose().as_slice().to_vec()
}

/// Orthogonality marker carried by a [`TensorTrain`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Ortho {
    /// No known orthogonality.
    None,
    /// Cores `0..k` are left-orthogonal.
    LeftUpTo(usize),
    /// Cores `k+1..d` are right-orthogonal.
    RightFrom(usize),
}

/// Rounding target for [`TensorTrain::round`].
#[derive(Debug, Clone, PartialEq)]
pub enum RoundMode {
    /// Relative Frobenius accuracy.
    Tol(f64),
    /// Upper bounds on the interior ranks (`d − 1` entries).
    MaxRanks(Vec<usize>),
    /// Both criteria; the smaller admissible rank wins.
    Both(f64, Vec<usize>),
}

/// Result of a rounding sweep.
#[derive(Debug, Clone)]
pub struct Rounded {
    /// The recompressed tensor.
    pub tt: TensorTrain,
    /// Frobenius norm of the discarded part, `‖in − out‖_F`.
    pub error: f64,
    /// Frobenius norm of the input.
    pub norm: f64,
}

/// Coefficient tensor in Tensor Train format.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorTrain {
    cores: Vec<Core>,
    ortho: Ortho,
}

impl TensorTrain {
    /// Validates a chain of cores.
    pub fn new(cores: Vec<Core>) -> Result<Self> {
        if cores.is_empty() {
            return Err(Error::InvalidInput("a tensor train needs at least one core".into()));
        }
        if cores[0].r0 != 1 || cores[cores.len() - 1].r1 != 1 {
            return Err(Error::ShapeMismatch("boundary ranks must be 1".into()));
        }
        for k in 1..cores.len() {
            if cores[k - 1].r1 != cores[k].r0 {
                return Err(Error::ShapeMismatch(format!(
                    "rank mismatch between cores {} and {}: {} vs {}",
                    k - 1,
                    k,
                    cores[k - 1].r1,
                    cores[k].r0
                )));
            }
        }
        if let Some(k) = cores.iter().position(|c| !c.is_finite()) {
            return Err(Error::NonFinite(format!("core {k}")));
        }
        Ok(Self {
            cores,
            ortho: Ortho::None,
        })
    }

    fn from_cores_unchecked(cores: Vec<Core>, ortho: Ortho) -> Self {
        Self { cores, ortho }
    }

    /// Zero tensor: all ranks 1 and zero cores.
    pub fn zeros(mode_sizes: &[usize]) -> Self {
        Self::from_cores_unchecked(
            mode_sizes.iter().map(|&n| Core::zeros(1, n, 1)).collect(),
            Ortho::None,
        )
    }

    /// Rank-one tensor `v_1 ⊗ … ⊗ v_d`.
    pub fn rank_one(vectors: &[Vec<f64>]) -> Result<Self> {
        Self::new(vectors.iter().map(|v| Core::from_vector(v)).collect())
    }

    pub fn d(&self) -> usize {
        self.cores.len()
    }

    pub fn cores(&self) -> &[Core] {
        &self.cores
    }

    pub fn core(&self, k: usize) -> &Core {
        &self.cores[k]
    }

    pub fn into_cores(self) -> Vec<Core> {
        self.cores
    }

    pub fn ortho(&self) -> Ortho {
        self.ortho
    }

    pub fn mode_sizes(&self) -> Vec<usize> {
        self.cores.iter().map(|c| c.n).collect()
    }

    /// All `d + 1` ranks including the boundary ones.
    pub fn ranks(&self) -> Vec<usize> {
        let mut r = Vec::with_capacity(self.d() + 1);
        r.push(1);
        r.extend(self.cores.iter().map(|c| c.r1));
        r
    }

    /// The `d − 1` interior ranks.
    pub fn interior_ranks(&self) -> Vec<usize> {
        self.cores[..self.d() - 1].iter().map(|c| c.r1).collect()
    }

    /// True when every entry of every core is finite.
    pub fn is_finite(&self) -> bool {
        self.cores.iter().all(Core::is_finite)
    }

    /// Returns `c · self`.
    pub fn scaled(&self, c: f64) -> Self {
        let mut out = self.clone();
        out.cores[0].scale(c);
        out.ortho = Ortho::None;
        out
    }

    fn check_same_shape(&self, other: &Self) -> Result<()> {
        if self.mode_sizes() != other.mode_sizes() {
            return Err(Error::ShapeMismatch(format!(
                "mode sizes {:?} vs {:?}",
                self.mode_sizes(),
                other.mode_sizes()
            )));
        }
        Ok(())
    }

    /// Dense reconstruction (guarded by [`DENSE_LIMIT`]).
    pub fn to_dense(&self) -> Result<DenseTensor> {
        let sizes = self.mode_sizes();
        dense::checked_size(&sizes)?;
        // acc is (∏ n_left) × r, row-major
        let mut acc = DMatrix::from_element(1, 1, 1.0);
        for core in &self.cores {
            let prod = &acc * core.right_unfolding();
            // prod is (∏ n_left) × (n·r1); rows·n then r1 keeps row-major order
            let rows = prod.nrows() * core.n;
            let data = row_major(&prod);
            acc = DMatrix::from_row_slice(rows, core.r1, &data);
        }
        DenseTensor::new(sizes, acc.as_slice().to_vec())
    }

    /// TT-SVD of a dense tensor with relative accuracy `tol`.
    pub fn from_dense(t: &DenseTensor, tol: f64) -> Result<Self> {
        if !(tol >= 0.0) {
            return Err(Error::InvalidInput(format!("tolerance {tol} must be ≥ 0")));
        }
        let sizes = t.mode_sizes().to_vec();
        dense::checked_size(&sizes)?;
        let d = sizes.len();
        let norm = t.norm();
        if norm == 0.0 {
            return Ok(Self::zeros(&sizes));
        }
        let delta = if d > 1 {
            tol * norm / ((d - 1) as f64).sqrt()
        } else {
            0.0
        };
        let mut cores = Vec::with_capacity(d);
        let mut rest = t.entries().to_vec();
        let mut r_prev = 1;
        for k in 0..d - 1 {
            let rows = r_prev * sizes[k];
            let cols = rest.len() / rows;
            let m = DMatrix::from_row_slice(rows, cols, &rest);
            let svd = Svd::compute(m)?;
            let r = svd.rank_for(delta, usize::MAX);
            cores.push(Core::from_left_unfolding(&svd.u_trunc(r), r_prev, sizes[k]));
            rest = row_major(&svd.sv_trunc(r));
            r_prev = r;
        }
        cores.push(Core::from_vec(r_prev, sizes[d - 1], 1, rest)?);
        Self::new(cores)
    }

    /// Exact sum `self + c·other` with block-diagonal cores.
    pub fn add_scaled(&self, other: &Self, c: f64) -> Result<Self> {
        self.check_same_shape(other)?;
        let d = self.d();
        if d == 1 {
            let data = self.cores[0]
                .data
                .iter()
                .zip(&other.cores[0].data)
                .map(|(a, b)| a + c * b)
                .collect();
            return Self::new(vec![Core::from_vec(1, self.cores[0].n, 1, data)?]);
        }
        let mut cores = Vec::with_capacity(d);
        for k in 0..d {
            let (a, b) = (&self.cores[k], &other.cores[k]);
            let n = a.n;
            let r0 = if k == 0 { 1 } else { a.r0 + b.r0 };
            let r1 = if k == d - 1 { 1 } else { a.r1 + b.r1 };
            let mut out = Core::zeros(r0, n, r1);
            // b's block is offset by a's ranks except at the boundaries
            let (ob0, ob1) = (
                if k == 0 { 0 } else { a.r0 },
                if k == d - 1 { 0 } else { a.r1 },
            );
            let cb = if k == 0 { c } else { 1.0 };
            for i in 0..n {
                for x in 0..a.r0 {
                    for y in 0..a.r1 {
                        out.set(x, i, y, a.get(x, i, y));
                    }
                }
                for x in 0..b.r0 {
                    for y in 0..b.r1 {
                        out.set(ob0 + x, i, ob1 + y, cb * b.get(x, i, y));
                    }
                }
            }
            cores.push(out);
        }
        Self::new(cores)
    }

    /// Frobenius inner product.
    pub fn inner(&self, other: &Self) -> Result<f64> {
        self.check_same_shape(other)?;
        let mut w = DMatrix::from_element(1, 1, 1.0);
        for (a, b) in self.cores.iter().zip(&other.cores) {
            w = contract_step(&w, a, b);
        }
        Ok(w[(0, 0)])
    }

    /// Frobenius norm, computed after right-orthogonalization.
    pub fn norm(&self) -> f64 {
        let o = self.right_orthogonalized();
        frobenius(&o.cores[0].data)
    }

    /// Right-orthogonalizes cores `1..d`; the norm is carried by core 0.
    pub fn right_orthogonalized(&self) -> Self {
        let mut cores = self.cores.clone();
        for k in (1..cores.len()).rev() {
            let (q, r) = lq(&cores[k].right_unfolding());
            let n = cores[k].n;
            let r1 = cores[k].r1;
            cores[k] = Core::from_right_unfolding(&q, n, r1);
            let left = cores[k - 1].left_unfolding() * r;
            let (r0, n0) = (cores[k - 1].r0, cores[k - 1].n);
            cores[k - 1] = Core::from_left_unfolding(&left, r0, n0);
        }
        Self::from_cores_unchecked(cores, Ortho::RightFrom(0))
    }

    /// Left-orthogonalizes cores `0..k` and right-orthogonalizes cores `k+1..d`,
    /// leaving the whole norm in core `k`.
    pub fn orthogonalized_at(&self, k: usize) -> Self {
        let mut cores = self.cores.clone();
        let d = cores.len();
        for j in 0..k {
            let (q, r) = qr(&cores[j].left_unfolding());
            let (r0, n) = (cores[j].r0, cores[j].n);
            cores[j] = Core::from_left_unfolding(&q, r0, n);
            let right = r * cores[j + 1].right_unfolding();
            let (n1, r1) = (cores[j + 1].n, cores[j + 1].r1);
            cores[j + 1] = Core::from_right_unfolding(&right, n1, r1);
        }
        for j in (k + 1..d).rev() {
            let (q, r) = lq(&cores[j].right_unfolding());
            let (n, r1) = (cores[j].n, cores[j].r1);
            cores[j] = Core::from_right_unfolding(&q, n, r1);
            let left = cores[j - 1].left_unfolding() * r;
            let (r0, n0) = (cores[j - 1].r0, cores[j - 1].n);
            cores[j - 1] = Core::from_left_unfolding(&left, r0, n0);
        }
        Self::from_cores_unchecked(cores, Ortho::LeftUpTo(k))
    }

    /// TT rounding: right-to-left orthogonalization followed by a left-to-right
    /// truncated-SVD sweep.
    pub fn round(&self, mode: &RoundMode) -> Result<Self> {
        Ok(self.round_with_error(mode)?.tt)
    }

    /// As [`TensorTrain::round`], also reporting the discarded norm.
    pub fn round_with_error(&self, mode: &RoundMode) -> Result<Rounded> {
        let d = self.d();
        let (tol, max_ranks) = match mode {
            RoundMode::Tol(t) => (*t, None),
            RoundMode::MaxRanks(r) => (0.0, Some(r)),
            RoundMode::Both(t, r) => (*t, Some(r)),
        };
        if !(tol >= 0.0) {
            return Err(Error::InvalidInput(format!("tolerance {tol} must be ≥ 0")));
        }
        if let Some(r) = max_ranks {
            if r.len() != d - 1 || r.contains(&0) {
                return Err(Error::InvalidInput(format!(
                    "max_ranks {r:?} must hold {} positive entries",
                    d - 1
                )));
            }
        }
        let o = self.right_orthogonalized();
        let norm = frobenius(&o.cores[0].data);
        if norm == 0.0 {
            return Ok(Rounded {
                tt: Self::zeros(&self.mode_sizes()),
                error: 0.0,
                norm,
            });
        }
        let delta = if d > 1 {
            tol * norm / ((d - 1) as f64).sqrt()
        } else {
            0.0
        };
        let mut cores = o.cores;
        let mut err2 = 0.0;
        for k in 0..d.saturating_sub(1) {
            let (r0, n) = (cores[k].r0, cores[k].n);
            let svd = Svd::compute(cores[k].left_unfolding())?;
            let cap = max_ranks.map_or(usize::MAX, |m| m[k]);
            let r = svd.rank_for(delta, cap);
            err2 += svd.s.iter().skip(r).map(|s| s * s).sum::<f64>();
            cores[k] = Core::from_left_unfolding(&svd.u_trunc(r), r0, n);
            let next = svd.sv_trunc(r) * cores[k + 1].right_unfolding();
            let (n1, r2) = (cores[k + 1].n, cores[k + 1].r1);
            cores[k + 1] = Core::from_right_unfolding(&next, n1, r2);
        }
        Ok(Rounded {
            tt: Self::from_cores_unchecked(cores, Ortho::LeftUpTo(d - 1)),
            error: err2.sqrt(),
            norm,
        })
    }

    /// `Σ_α A[α] ∏_i vs_i[α_i]` as a left-to-right chain of vector–matrix products.
    pub fn contract_mode_vectors(&self, vs: &[&[f64]]) -> Result<f64> {
        if vs.len() != self.d() {
            return Err(Error::ShapeMismatch(format!(
                "{} vectors for {} modes",
                vs.len(),
                self.d()
            )));
        }
        let mut acc = vec![1.0];
        for (core, v) in self.cores.iter().zip(vs) {
            if v.len() != core.n {
                return Err(Error::ShapeMismatch(format!(
                    "vector of length {} for mode size {}",
                    v.len(),
                    core.n
                )));
            }
            acc = core.contract_left(&acc, v);
        }
        Ok(acc[0])
    }

    /// Applies `m` on mode `i`; the mode size becomes `m.nrows()`.
    pub fn apply_mode_matrix(&self, i: usize, m: &DMatrix<f64>) -> Result<Self> {
        if i >= self.d() {
            return Err(Error::ShapeMismatch(format!(
                "mode {i} out of range for d = {}",
                self.d()
            )));
        }
        let mut cores = self.cores.clone();
        cores[i] = cores[i].mode_multiply(m)?;
        Ok(Self::from_cores_unchecked(cores, Ortho::None))
    }

    /// `Σ_i (I⊗…⊗ms[i]⊗…⊗I) A` with doubled interior ranks.
    pub fn laplace_like_apply(&self, ms: &[DMatrix<f64>]) -> Result<Self> {
        if ms.len() != self.d() {
            return Err(Error::ShapeMismatch(format!(
                "{} matrices for {} modes",
                ms.len(),
                self.d()
            )));
        }
        let mut modified = Vec::with_capacity(self.d());
        for (core, m) in self.cores.iter().zip(ms) {
            if m.nrows() != core.n || m.ncols() != core.n {
                return Err(Error::ShapeMismatch(format!(
                    "{}×{} matrix on mode of size {}",
                    m.nrows(),
                    m.ncols(),
                    core.n
                )));
            }
            modified.push(core.mode_multiply(m)?);
        }
        laplace_like_sum(&self.cores, &modified)
    }

    /// Keeps mode indices `0..=degrees[i]` in every core.
    pub fn truncate_modes(&self, sizes: &[usize]) -> Result<Self> {
        if sizes.len() != self.d() {
            return Err(Error::ShapeMismatch("one size per mode required".into()));
        }
        let cores = self
            .cores
            .iter()
            .zip(sizes)
            .map(|(c, &m)| {
                if m == 0 || m > c.n {
                    Err(Error::InvalidInput(format!(
                        "cannot truncate mode of size {} to {m}",
                        c.n
                    )))
                } else {
                    Ok(c.truncate_modes(m))
                }
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self::from_cores_unchecked(cores, Ortho::None))
    }
}

impl Core {
    /// `out[b] = Σ_{a,i} acc[a]·v[i]·self[a,i,b]`.
    pub(crate) fn contract_left(&self, acc: &[f64], v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.r1];
        self.contract_left_into(acc, v, &mut out);
        out
    }

    /// As [`Core::contract_left`] into `out` (length `r1`).
    pub(crate) fn contract_left_into(&self, acc: &[f64], v: &[f64], out: &mut [f64]) {
        out.fill(0.0);
        for a in 0..self.r0 {
            let wa = acc[a];
            if wa == 0.0 {
                continue;
            }
            for i in 0..self.n {
                let w = wa * v[i];
                if w == 0.0 {
                    continue;
                }
                let off = (a * self.n + i) * self.r1;
                for (o, c) in out.iter_mut().zip(&self.data[off..off + self.r1]) {
                    *o += w * c;
                }
            }
        }
    }


    /// As [`Core::contract_right`] into `out` (length `r0`).
    pub(crate) fn contract_right_into(&self, acc: &[f64], v: &[f64], out: &mut [f64]) {
        for (a, o) in out.iter_mut().enumerate().take(self.r0) {
            let mut s = 0.0;
            for i in 0..self.n {
                if v[i] == 0.0 {
                    continue;
                }
                let off = (a * self.n + i) * self.r1;
                let t: f64 = self.data[off..off + self.r1].iter().zip(acc).map(|(c, b)| c * b).sum();
                s += v[i] * t;
            }
            *o = s;
        }
    }
}

/// Laplace-like sum `Σ_i B_1 ⊗ … ⊗ M_i ⊗ … ⊗ B_d` of a base chain `B` in which the
/// `i`-th core is replaced by `M_i`, using 2×2 block cores. Interior ranks double.
pub fn laplace_like_sum(base: &[Core], modified: &[Core]) -> Result<TensorTrain> {
    let d = base.len();
    if modified.len() != d || d == 0 {
        return Err(Error::ShapeMismatch("base and modified chains differ in length".into()));
    }
    for (b, m) in base.iter().zip(modified) {
        if (b.r0, b.n, b.r1) != (m.r0, m.n, m.r1) {
            return Err(Error::ShapeMismatch(format!(
                "base core {}×{}×{} vs modified core {}×{}×{}",
                b.r0, b.n, b.r1, m.r0, m.n, m.r1
            )));
        }
    }
    if d == 1 {
        return TensorTrain::new(vec![modified[0].clone()]);
    }
    let mut cores = Vec::with_capacity(d);
    for k in 0..d {
        let (b, m) = (&base[k], &modified[k]);
        let n = b.n;
        let core = if k == 0 {
            let mut c = Core::zeros(1, n, 2 * b.r1);
            for i in 0..n {
                for y in 0..b.r1 {
                    c.set(0, i, y, m.get(0, i, y));
                    c.set(0, i, b.r1 + y, b.get(0, i, y));
                }
            }
            c
        } else if k == d - 1 {
            let mut c = Core::zeros(2 * b.r0, n, 1);
            for i in 0..n {
                for x in 0..b.r0 {
                    c.set(x, i, 0, b.get(x, i, 0));
                    c.set(b.r0 + x, i, 0, m.get(x, i, 0));
                }
            }
            c
        } else {
            let mut c = Core::zeros(2 * b.r0, n, 2 * b.r1);
            for x in 0..b.r0 {
                for i in 0..n {
                    for y in 0..b.r1 {
                        let bv = b.get(x, i, y);
                        c.set(x, i, y, bv);
                        c.set(b.r0 + x, i, y, m.get(x, i, y));
                        c.set(b.r0 + x, i, b.r1 + y, bv);
                    }
                }
            }
            c
        };
        cores.push(core);
    }
    TensorTrain::new(cores)
}

/// One step of the left-to-right inner-product contraction:
/// `W'[b_a, b_b] = Σ_{a_a, a_b, i} W[a_a, a_b]·A[a_a, i, b_a]·B[a_b, i, b_b]`.
fn contract_step(w: &DMatrix<f64>, a: &Core, b: &Core) -> DMatrix<f64> {
    // P[(i, b_a), a_b] = Σ_{a_a} A[a_a, i, b_a] W[a_a, a_b]
    let p = a.right_unfolding().transpose() * w;
    // Rearrange to P'[b_a, (a_b, i)] to match B's left unfolding
    let (n, ra1, rb0) = (a.n, a.r1, b.r0);
    let perm = DMatrix::from_fn(ra1, rb0 * n, |ba, col| {
        let (ab, i) = (col / n, col % n);
        p[(i * ra1 + ba, ab)]
    });
    perm * b.left_unfolding()
}

fn frobenius(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Thin QR `m = q·r` with `q` having orthonormal columns.
fn qr(m: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    let f = m.clone().qr();
    (f.q(), f.r())
}

/// Thin LQ `m = l·q` with `q` having orthonormal rows; returns `(q, l)`.
fn lq(m: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    let f = m.transpose().qr();
    (f.q().transpose(), f.r().transpose())
}

/// Singular value decomposition with a deterministic sign convention.
pub(crate) struct Svd {
    pub u: DMatrix<f64>,
    pub s: DVector<f64>,
    pub vt: DMatrix<f64>,
}

impl Svd {
    /// Thin SVD with singular values in descending order; each left singular vector
    /// has its first non-negligible entry positive.
    ///
    /// Computed with faer: nalgebra's implicit-shift SVD returns inaccurate factors
    /// for some exactly rank-deficient inputs (zero rows, rank-one blocks), which
    /// are routine in TT sums.
    pub fn compute(m: DMatrix<f64>) -> Result<Self> {
        let (rows, cols) = m.shape();
        let k = rows.min(cols);
        let fm = faer::Mat::<f64>::from_fn(rows, cols, |i, j| m[(i, j)]);
        let svd = fm
            .thin_svd()
            .map_err(|e| Error::NonFinite(format!("SVD of a {rows}×{cols} unfolding did not converge: {e:?}")))?;
        let (fu, fs, fv) = (svd.U(), svd.S(), svd.V());
        let mut u = DMatrix::from_fn(rows, k, |i, j| fu[(i, j)]);
        let mut vt = DMatrix::from_fn(k, cols, |i, j| fv[(j, i)]);
        let s = DVector::from_fn(k, |i, _| fs[i]);
        for j in 0..k {
            let first = u.column(j).iter().copied().find(|x| x.abs() > 1e-14);
            if matches!(first, Some(x) if x < 0.0) {
                u.column_mut(j).neg_mut();
                vt.row_mut(j).neg_mut();
            }
        }
        Ok(Self { u, s, vt })
    }

    /// Smallest rank whose discarded tail norm is ≤ `delta`, capped by `cap`, at least 1.
    pub fn rank_for(&self, delta: f64, cap: usize) -> usize {
        let len = self.s.len();
        let mut tail2 = 0.0;
        let mut r = len;
        let d2 = delta * delta;
        while r > 1 {
            let s = self.s[r - 1];
            if tail2 + s * s > d2 {
                break;
            }
            tail2 += s * s;
            r -= 1;
        }
        r.min(cap).max(1)
    }

    pub fn u_trunc(&self, r: usize) -> DMatrix<f64> {
        self.u.columns(0, r).into_owned()
    }

    /// `diag(s[..r]) · vt[..r, :]`.
    pub fn sv_trunc(&self, r: usize) -> DMatrix<f64> {
        let mut out = self.vt.rows(0, r).into_owned();
        for j in 0..r {
            out.row_mut(j).scale_mut(self.s[j]);
        }
        out
    }
}
