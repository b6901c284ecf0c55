// SPDX-License-Identifier: MIT OR Apache-2.0

//! Independent reference solutions.
//!
//! * the closed-form Gaussian flow of the OU process and its exact scores;
//! * the eigenvalue bound of the linearized operator for diagonal Gaussians;
//! * an explicit low-rank TT of a quadratic form;
//! * a quadrature score for low-dimensional polynomial targets;
//! * dense right-hand sides computed on nodal values (Gauss–Legendre grids and
//!   pointwise arithmetic), sharing nothing with the coefficient-space TT route
//!   except the basis definition;
//! * sample-based statistics (energy distance, random-walk Metropolis reference,
//!   kernel-density mode count).

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::hjb_operators::potential::{Poly, PotentialSpec};
use crate::poly_basis::{gauss_legendre, LegendreBasis, PolySpace};
use crate::sampler::ScoreField;
use crate::tt_core::{Core, DenseTensor, TensorTrain};

// ---------------------------------------------------------------------------
// Gaussian flow
// ---------------------------------------------------------------------------

fn check_spd(q: &DMatrix<f64>) -> Result<()> {
    if !q.is_square() {
        return Err(Error::InvalidInput("matrix must be square".into()));
    }
    let asym = (q - q.transpose()).abs().max();
    if asym > 1e-12 * q.abs().max().max(1.0) {
        return Err(Error::InvalidInput("matrix must be symmetric".into()));
    }
    if q.clone().cholesky().is_none() {
        return Err(Error::InvalidInput("matrix must be positive definite".into()));
    }
    Ok(())
}

fn spd_inverse(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let inv = m
        .clone()
        .cholesky()
        .ok_or_else(|| Error::InvalidInput("matrix must be positive definite".into()))?
        .inverse();
    Ok((&inv + inv.transpose()) * 0.5)
}

/// Quadratic coefficient matrix `Q_t` of `v_t` for `Φ(x) = xᵀQ₀x`:
/// `C₀ = (2Q₀)⁻¹`, `C_t = e^{−2t}C₀ + (1 − e^{−2t})I`, `Q_t = (2C_t)⁻¹`.
pub fn riccati_reference(q0: &DMatrix<f64>, t: f64) -> Result<DMatrix<f64>> {
    check_spd(q0)?;
    if !(t >= 0.0) {
        return Err(Error::InvalidInput(format!("t = {t} must be non-negative")));
    }
    let d = q0.nrows();
    let c0 = spd_inverse(&(q0 * 2.0))?;
    let e = (-2.0 * t).exp();
    let ct = c0 * e + DMatrix::identity(d, d) * (-(-2.0 * t).exp_m1());
    spd_inverse(&(ct * 2.0))
}

/// `2Σ_i|1 − 2a_ii|`.
pub fn gaussian_eigen_bound(a_diag: &[f64]) -> f64 {
    2.0 * a_diag.iter().map(|a| (1.0 - 2.0 * a).abs()).sum::<f64>()
}

/// `|q̇ − (2q − 4q²)|` for the scalar flow from `q0` at time `t`, with `q̇` from a
/// central difference of [`riccati_reference`].
pub fn hopf_cole_check(q0: f64, t: f64) -> Result<f64> {
    let q = |s: f64| -> Result<f64> { Ok(riccati_reference(&DMatrix::from_element(1, 1, q0), s)?[(0, 0)]) };
    let h = 1e-5 * t.max(1.0);
    let lo = (t - h).max(0.0);
    let qdot = (q(t + h)? - q(lo)?) / (t + h - lo);
    let qt = q(t)?;
    Ok((qdot - (2.0 * qt - 4.0 * qt * qt)).abs())
}

/// Exact scores `∇v_t(x) = 2Q_t x` of the Gaussian flow.
pub struct GaussianScore {
    q0: DMatrix<f64>,
    /// `(t, 2Q_t)` precomputed on a grid, sorted by `t`.
    cache: Vec<(f64, DMatrix<f64>)>,
}

impl GaussianScore {
    pub fn new(q0: DMatrix<f64>) -> Result<Self> {
        check_spd(&q0)?;
        Ok(Self { q0, cache: Vec::new() })
    }

    /// As [`GaussianScore::new`], precomputing `Q_t` at `times` so that lookups at
    /// those times skip the closed-form evaluation.
    pub fn with_times(q0: DMatrix<f64>, times: &[f64]) -> Result<Self> {
        let mut s = Self::new(q0)?;
        let mut ts = times.to_vec();
        ts.sort_by(f64::total_cmp);
        ts.dedup();
        s.cache = ts
            .into_iter()
            .map(|t| Ok((t, riccati_reference(&s.q0, t)? * 2.0)))
            .collect::<Result<_>>()?;
        Ok(s)
    }
}

impl ScoreField for GaussianScore {
    fn dim(&self) -> usize {
        self.q0.nrows()
    }

    fn grad(&self, t: f64, x: &[f64], out: &mut [f64]) -> Result<u64> {
        let computed;
        let m = match self.cache.binary_search_by(|(s, _)| s.total_cmp(&t)) {
            Ok(i) => &self.cache[i].1,
            Err(_) => {
                computed = riccati_reference(&self.q0, t)? * 2.0;
                &computed
            }
        };
        for (i, o) in out.iter_mut().enumerate() {
            *o = (0..x.len()).map(|j| m[(i, j)] * x[j]).sum();
        }
        Ok(0)
    }
}

// ---------------------------------------------------------------------------
// Quadratic forms in TT format
// ---------------------------------------------------------------------------

/// Rank states at a cut: either left functions `(1, x_1…x_k, q_{≤k})` or right-form
/// functions `(q_{≤k}, s_{k+1}…s_d, 1)` with `s_j = 2Σ_{i≤k} m_ij x_i`.
#[derive(Clone, Copy)]
enum Cut {
    Left(usize),
    Right(usize),
}

impl Cut {
    fn size(self, d: usize) -> usize {
        match self {
            Cut::Left(0) => 1,
            Cut::Left(k) => k + 2,
            Cut::Right(k) if k == d => 1,
            Cut::Right(k) => d - k + 2,
        }
    }
}

/// TT (monomial mode index `e ∈ {0,1,2}`) of `xᵀMx` with interior ranks
/// `2 + min(k, d−k)`.
fn quadratic_monomial_cores(m: &DMatrix<f64>) -> Vec<Core> {
    let d = m.nrows();
    let h = d / 2;
    let cut = |k: usize| -> Cut {
        if k <= h && k < d {
            Cut::Left(k)
        } else {
            Cut::Right(k)
        }
    };
    let mut cores = Vec::with_capacity(d);
    for k in 1..=d {
        // variable x_k is index k-1
        let xk = k - 1;
        let (from, to) = (cut(k - 1), cut(k));
        let mut c = Core::zeros(from.size(d), 3, to.size(d));
        let mut add = |a: usize, e: usize, b: usize, v: f64| {
            let old = c.get(a, e, b);
            c.set(a, e, b, old + v);
        };
        match (from, to) {
            (Cut::Left(p), Cut::Left(q)) => {
                // (1, x_1..x_p, q_p) → (1, x_1..x_q, q_q), q = p + 1
                add(0, 0, 0, 1.0);
                for i in 1..=p {
                    add(i, 0, i, 1.0);
                    add(i, 1, q + 1, 2.0 * m[(i - 1, xk)]);
                }
                add(0, 1, q, 1.0);
                if p >= 1 {
                    add(p + 1, 0, q + 1, 1.0);
                }
                add(0, 2, q + 1, m[(xk, xk)]);
            }
            (Cut::Left(p), Cut::Right(q)) => {
                // → (q_q, s_{q+1}..s_d, 1)
                let qsum = 0;
                if p >= 1 {
                    add(p + 1, 0, qsum, 1.0);
                }
                for i in 1..=p {
                    add(i, 1, qsum, 2.0 * m[(i - 1, xk)]);
                }
                add(0, 2, qsum, m[(xk, xk)]);
                if q < d {
                    for (slot, j) in (q + 1..=d).enumerate() {
                        let b = slot + 1;
                        for i in 1..=p {
                            add(i, 0, b, 2.0 * m[(i - 1, j - 1)]);
                        }
                        add(0, 1, b, 2.0 * m[(xk, j - 1)]);
                    }
                    add(0, 0, d - q + 1, 1.0);
                }
            }
            (Cut::Right(p), Cut::Right(q)) => {
                // (q_p, s_{p+1}..s_d, 1) → (q_q, s_{q+1}..s_d, 1), x_k = x_{p+1}
                let one_from = d - p + 1;
                add(0, 0, 0, 1.0);
                add(1, 1, 0, 1.0); // s_{p+1}·x_{p+1}
                add(one_from, 2, 0, m[(xk, xk)]);
                if q < d {
                    for (slot, j) in (q + 1..=d).enumerate() {
                        let b = slot + 1;
                        // s_j at cut p is slot j - p
                        add(j - p, 0, b, 1.0);
                        add(one_from, 1, b, 2.0 * m[(xk, j - 1)]);
                    }
                    add(one_from, 0, d - q + 1, 1.0);
                }
            }
            (Cut::Right(_), Cut::Left(_)) => unreachable!("cuts switch from left to right form once"),
        }
        cores.push(c);
    }
    cores
}

/// TT of the Legendre coefficients of `f(x) = xᵀMx` on `space` (every degree ≥ 2)
/// with interior ranks `2 + min(k, d−k)`, from an explicit block construction in the
/// monomial basis.
pub fn quadratic_tt_cores(m: &DMatrix<f64>, space: &PolySpace) -> Result<TensorTrain> {
    let d = m.nrows();
    if !m.is_square() || d != space.d() {
        return Err(Error::ShapeMismatch(format!("{}×{} matrix for d = {}", m.nrows(), m.ncols(), space.d())));
    }
    if (m - m.transpose()).abs().max() > 1e-12 * m.abs().max().max(1.0) {
        return Err(Error::InvalidInput("matrix must be symmetric".into()));
    }
    if space.degrees().iter().any(|&n| n < 2) {
        return Err(Error::InvalidInput("quadratic forms need degree ≥ 2 in every dimension".into()));
    }
    if d == 1 {
        let c: Vec<f64> = space.basis(0).monomial_coefficients(2).iter().map(|v| v * m[(0, 0)]).collect();
        return TensorTrain::rank_one(&[c]);
    }
    let mono = quadratic_monomial_cores(m);
    let cores = mono
        .iter()
        .zip(space.bases())
        .map(|(c, b)| {
            // column e of the conversion = Legendre coefficients of x^e
            let conv = DMatrix::from_fn(b.size(), 3, |alpha, e| b.monomial_coefficients(e)[alpha]);
            c.mode_multiply(&conv)
        })
        .collect::<Result<Vec<_>>>()?;
    TensorTrain::new(cores)
}

/// Lemma-style interior rank bound `2 + min(k, d−k)` for `xᵀMx`.
pub fn quadratic_rank_bound(d: usize) -> Vec<usize> {
    (1..d).map(|k| 2 + k.min(d - k)).collect()
}

// ---------------------------------------------------------------------------
// Quadrature score
// ---------------------------------------------------------------------------

fn eval_poly(p: &Poly, x: &[f64]) -> f64 {
    p.iter()
        .map(|(e, c)| c * e.iter().zip(x).map(|(&k, &xi)| xi.powi(k as i32)).product::<f64>())
        .sum()
}

fn grad_poly(p: &Poly, x: &[f64], out: &mut [f64]) {
    out.iter_mut().for_each(|g| *g = 0.0);
    for (e, c) in p {
        for i in 0..x.len() {
            if e[i] == 0 {
                continue;
            }
            let mut term = c * e[i] as f64 * x[i].powi(e[i] as i32 - 1);
            for (j, (&k, &xj)) in e.iter().zip(x).enumerate() {
                if j != i {
                    term *= xj.powi(k as i32);
                }
            }
            out[i] += term;
        }
    }
}

/// Score of `π_t(x) = ∫ N(x; e^{−t}y, (1−e^{−2t})I) π*(y) dy` with `π* ∝ e^{−Φ}`,
/// the integral replaced by a tensor Gauss–Legendre rule of order `Q` per dimension
/// on a box and evaluated with log-sum-exp. At `t = 0` the exact `Φ` is returned.
pub struct QuadratureScore {
    dim: usize,
    phi: Poly,
    nodes: Vec<f64>,
    /// `log w_j − Φ(y_j)`
    log_mass: Vec<f64>,
}

impl QuadratureScore {
    pub fn new(spec: &PotentialSpec, dim: usize, order: usize, domain: &[(f64, f64)]) -> Result<Self> {
        if order < 2 {
            return Err(Error::InvalidInput("quadrature order must be ≥ 2".into()));
        }
        if domain.len() != dim {
            return Err(Error::ShapeMismatch("one interval per dimension required".into()));
        }
        let phi = spec.expand(dim)?;
        let rules: Vec<_> = domain.iter().map(|&(a, b)| gauss_legendre(order, a, b)).collect();
        let count = order.checked_pow(dim as u32).filter(|&c| c <= 10_000_000).ok_or(Error::SizeGuard {
            size: usize::MAX,
            limit: 10_000_000,
        })?;
        let mut nodes = Vec::with_capacity(count * dim);
        let mut log_mass = Vec::with_capacity(count);
        let mut idx = vec![0usize; dim];
        let mut y = vec![0.0; dim];
        for _ in 0..count {
            let mut lw = 0.0;
            for k in 0..dim {
                y[k] = rules[k].0[idx[k]];
                lw += rules[k].1[idx[k]].ln();
            }
            nodes.extend_from_slice(&y);
            log_mass.push(lw - eval_poly(&phi, &y));
            for k in (0..dim).rev() {
                idx[k] += 1;
                if idx[k] < order {
                    break;
                }
                idx[k] = 0;
            }
        }
        Ok(Self {
            dim,
            phi,
            nodes,
            log_mass,
        })
    }

    /// `(v_t(x), ∇v_t(x))` with `v_t = −log π_t` (unnormalized target).
    pub fn value_and_grad(&self, t: f64, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        let d = self.dim;
        if t == 0.0 {
            let mut g = vec![0.0; d];
            grad_poly(&self.phi, x, &mut g);
            return Ok((eval_poly(&self.phi, x), g));
        }
        if !(t > 0.0) {
            return Err(Error::InvalidInput(format!("t = {t} must be non-negative")));
        }
        let decay = (-t).exp();
        let s = -(-2.0 * t).exp_m1();
        let mut logs = Vec::with_capacity(self.log_mass.len());
        let mut mx = f64::NEG_INFINITY;
        for (j, lm) in self.log_mass.iter().enumerate() {
            let y = &self.nodes[j * d..(j + 1) * d];
            let r2: f64 = x.iter().zip(y).map(|(xi, yi)| (xi - decay * yi).powi(2)).sum();
            let l = lm - r2 / (2.0 * s);
            mx = mx.max(l);
            logs.push(l);
        }
        if !mx.is_finite() {
            return Err(Error::NonFinite("quadrature density underflow".into()));
        }
        let mut z = 0.0;
        let mut g = vec![0.0; d];
        for (j, l) in logs.iter().enumerate() {
            let w = (l - mx).exp();
            z += w;
            let y = &self.nodes[j * d..(j + 1) * d];
            for k in 0..d {
                g[k] += w * (x[k] - decay * y[k]);
            }
        }
        g.iter_mut().for_each(|gk| *gk /= z * s);
        let v = -(mx + z.ln()) + 0.5 * d as f64 * (2.0 * std::f64::consts::PI * s).ln();
        Ok((v, g))
    }
}

impl ScoreField for QuadratureScore {
    fn dim(&self) -> usize {
        self.dim
    }

    fn grad(&self, t: f64, x: &[f64], out: &mut [f64]) -> Result<u64> {
        let (_, g) = self.value_and_grad(t, x)?;
        out.copy_from_slice(&g);
        Ok(0)
    }
}

/// `(v, ∇v)` of the two-dimensional quadrature score of `spec` at `(t, x)`.
pub fn quadrature_score_2d(
    spec: &PotentialSpec,
    order: usize,
    domain: [(f64, f64); 2],
    t: f64,
    x: [f64; 2],
) -> Result<(f64, [f64; 2])> {
    let q = QuadratureScore::new(spec, 2, order, &domain)?;
    let (v, g) = q.value_and_grad(t, &x)?;
    Ok((v, [g[0], g[1]]))
}

// ---------------------------------------------------------------------------
// Dense right-hand-side references on nodal values
// ---------------------------------------------------------------------------

/// Values of `p_α^{(order)}` (order ≤ 2) at `x`, from the Legendre recurrences.
fn basis_derivs(b: &LegendreBasis, n: usize, x: f64, order: usize) -> Vec<f64> {
    let h = b.b() - b.a();
    let s = (2.0 * x - b.a() - b.b()) / h;
    let ds = 2.0 / h;
    let (mut p0, mut p1) = (0.0, 1.0);
    let (mut d0, mut d1) = (0.0, 0.0);
    let (mut e0, mut e1) = (0.0, 0.0);
    let mut out = Vec::with_capacity(n + 1);
    for k in 0..=n {
        let scale = ((2 * k + 1) as f64 / h).sqrt();
        out.push(
            scale
                * match order {
                    0 => p1,
                    1 => d1 * ds,
                    _ => e1 * ds * ds,
                },
        );
        let kf = k as f64;
        let p2 = ((2.0 * kf + 1.0) * s * p1 - kf * p0) / (kf + 1.0);
        let d2 = d0 + (2.0 * kf + 1.0) * p1;
        let e2 = e0 + (2.0 * kf + 1.0) * d1;
        (p0, p1, d0, d1, e0, e1) = (p1, p2, d1, d2, e1, e2);
    }
    out
}

/// Nodal grid for one dimension: nodes, weights, interval.
struct Grid1 {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

fn grid_for(b: &LegendreBasis, m: usize) -> Grid1 {
    let (nodes, weights) = gauss_legendre(m, b.a(), b.b());
    Grid1 { nodes, weights }
}

/// Coefficients → nodal values (with `derivs[k]`-th derivative in mode `k`).
fn to_values(a: &DenseTensor, space: &PolySpace, grids: &[Grid1], derivs: &[usize]) -> Result<DenseTensor> {
    let mut v = a.clone();
    for (k, (b, g)) in space.bases().iter().zip(grids).enumerate() {
        let n = a.mode_sizes()[k] - 1;
        let m = DMatrix::from_fn(g.nodes.len(), n + 1, |j, alpha| basis_derivs(b, n, g.nodes[j], derivs[k])[alpha]);
        v = v.mode_product(k, &m)?;
    }
    Ok(v)
}

/// Nodal values → Legendre coefficients at `degrees` by Gauss quadrature.
fn to_coeffs(v: &DenseTensor, space: &PolySpace, grids: &[Grid1], degrees: &[usize]) -> Result<DenseTensor> {
    let mut c = v.clone();
    for (k, (b, g)) in space.bases().iter().zip(grids).enumerate() {
        let n = degrees[k];
        let m = DMatrix::from_fn(n + 1, g.nodes.len(), |alpha, j| g.weights[j] * basis_derivs(b, n, g.nodes[j], 0)[alpha]);
        c = c.mode_product(k, &m)?;
    }
    Ok(c)
}

fn pointwise(a: &DenseTensor, b: &DenseTensor) -> Result<DenseTensor> {
    let e = a.entries().iter().zip(b.entries()).map(|(x, y)| x * y).collect();
    DenseTensor::new(a.mode_sizes().to_vec(), e)
}

fn check_dense(a: &DenseTensor, space: &PolySpace) -> Result<()> {
    if a.mode_sizes() != space.mode_sizes().as_slice() {
        return Err(Error::ShapeMismatch(format!(
            "dense mode sizes {:?} vs space {:?}",
            a.mode_sizes(),
            space.mode_sizes()
        )));
    }
    Ok(())
}

fn grids(space: &PolySpace, out_degrees: &[usize]) -> Vec<Grid1> {
    space.bases().iter().zip(out_degrees).map(|(b, &n)| grid_for(b, n + 2)).collect()
}

/// `Δv + x·∇v` at the degrees of `a`.
pub fn dense_lin(a: &DenseTensor, space: &PolySpace) -> Result<DenseTensor> {
    check_dense(a, space)?;
    let d = space.d();
    let deg = space.degrees();
    let g = grids(space, &deg);
    let mut total = DenseTensor::zeros(g.iter().map(|g| g.nodes.len()).collect())?;
    for i in 0..d {
        let mut order = vec![0; d];
        order[i] = 2;
        total = total.add_scaled(&to_values(a, space, &g, &order)?, 1.0)?;
        order[i] = 1;
        let dv = to_values(a, space, &g, &order)?;
        let xi = DenseTensor::from_fn(total.mode_sizes().to_vec(), |idx| g[i].nodes[idx[i]])?;
        total = total.add_scaled(&pointwise(&dv, &xi)?, 1.0)?;
    }
    to_coeffs(&total, space, &g, &deg)
}

/// `∂_{x_i} v` at the degrees of `a`.
pub fn dense_partial(a: &DenseTensor, i: usize, space: &PolySpace) -> Result<DenseTensor> {
    check_dense(a, space)?;
    let deg = space.degrees();
    let g = grids(space, &deg);
    let mut order = vec![0; space.d()];
    order[i] = 1;
    to_coeffs(&to_values(a, space, &g, &order)?, space, &g, &deg)
}

/// `v_a·v_b` at degrees `n_a + n_b` (both factors given on `space`'s intervals).
pub fn dense_product(a: &DenseTensor, b: &DenseTensor, space: &PolySpace) -> Result<DenseTensor> {
    check_dense(a, space)?;
    check_dense(b, space)?;
    let out: Vec<usize> = space.degrees().iter().map(|n| 2 * n).collect();
    let g = grids(space, &out);
    let zero = vec![0; space.d()];
    let v = pointwise(&to_values(a, space, &g, &zero)?, &to_values(b, space, &g, &zero)?)?;
    to_coeffs(&v, space, &g, &out)
}

/// `−⟨∇v_b, ∇v_a⟩` at degrees `2n`.
pub fn dense_nonlin_linearized(b: &DenseTensor, a: &DenseTensor, space: &PolySpace) -> Result<DenseTensor> {
    check_dense(a, space)?;
    check_dense(b, space)?;
    let d = space.d();
    let out: Vec<usize> = space.degrees().iter().map(|n| 2 * n).collect();
    let g = grids(space, &out);
    let mut total = DenseTensor::zeros(g.iter().map(|g| g.nodes.len()).collect())?;
    for i in 0..d {
        let mut order = vec![0; d];
        order[i] = 1;
        let da = to_values(a, space, &g, &order)?;
        let db = to_values(b, space, &g, &order)?;
        total = total.add_scaled(&pointwise(&da, &db)?, -1.0)?;
    }
    to_coeffs(&total, space, &g, &out)
}

/// `−‖∇v_a‖²` at degrees `2n`.
pub fn dense_nonlin(a: &DenseTensor, space: &PolySpace) -> Result<DenseTensor> {
    dense_nonlin_linearized(a, a, space)
}

/// Keeps coefficients `0..=degrees[k]`.
pub fn dense_project(a: &DenseTensor, degrees: &[usize]) -> Result<DenseTensor> {
    let sizes: Vec<usize> = degrees.iter().map(|n| n + 1).collect();
    if sizes.len() != a.ndim() || sizes.iter().zip(a.mode_sizes()).any(|(s, n)| s > n) {
        return Err(Error::ShapeMismatch("projection degrees exceed the tensor".into()));
    }
    DenseTensor::from_fn(sizes, |idx| a.get(idx))
}

/// `L·a + P·NL(a)`.
pub fn dense_rhs_reference(a: &DenseTensor, space: &PolySpace) -> Result<DenseTensor> {
    let lin = dense_lin(a, space)?;
    let nl = dense_project(&dense_nonlin(a, space)?, &space.degrees())?;
    lin.add_scaled(&nl, 1.0)
}

/// Matrix of `H_B = L + 2·P·NL_B` on the flattened coefficient space.
pub fn dense_stiffness_matrix(b: &DenseTensor, space: &PolySpace) -> Result<DMatrix<f64>> {
    check_dense(b, space)?;
    let sizes = space.mode_sizes();
    let n: usize = sizes.iter().product();
    if n > 4096 {
        return Err(Error::SizeGuard { size: n, limit: 4096 });
    }
    let deg = space.degrees();
    let mut h = DMatrix::zeros(n, n);
    for col in 0..n {
        let mut e = DenseTensor::zeros(sizes.clone())?;
        e.entries_mut()[col] = 1.0;
        let lin = dense_lin(&e, space)?;
        let nl = dense_project(&dense_nonlin_linearized(b, &e, space)?, &deg)?;
        let he = lin.add_scaled(&nl, 2.0)?;
        for (row, v) in he.entries().iter().enumerate() {
            h[(row, col)] = *v;
        }
    }
    Ok(h)
}

/// Largest eigenvalue magnitude of a real square matrix.
pub fn spectral_radius(m: &DMatrix<f64>) -> f64 {
    m.complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max)
}

// ---------------------------------------------------------------------------
// Sample statistics
// ---------------------------------------------------------------------------

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn mean_cross(x: &[f64], y: &[f64], d: usize) -> f64 {
    let (nx, ny) = (x.len() / d, y.len() / d);
    let s: f64 = (0..nx)
        .into_par_iter()
        .map(|i| {
            let xi = &x[i * d..(i + 1) * d];
            (0..ny).map(|j| dist(xi, &y[j * d..(j + 1) * d])).sum::<f64>()
        })
        .sum();
    s / (nx * ny) as f64
}

fn mean_within(x: &[f64], d: usize) -> f64 {
    let n = x.len() / d;
    let s: f64 = (0..n)
        .into_par_iter()
        .map(|i| {
            let xi = &x[i * d..(i + 1) * d];
            (i + 1..n).map(|j| dist(xi, &x[j * d..(j + 1) * d])).sum::<f64>()
        })
        .sum();
    2.0 * s / (n * (n - 1)) as f64
}

/// Energy distance `2E‖X−Y‖ − E‖X−X'‖ − E‖Y−Y'‖` (unbiased within-sample terms)
/// between two row-major samples of dimension `d`.
pub fn energy_distance(x: &[f64], y: &[f64], d: usize) -> f64 {
    2.0 * mean_cross(x, y, d) - mean_within(x, d) - mean_within(y, d)
}

/// Random-walk Metropolis samples of `π ∝ e^{−Φ}` for the potential `spec`: one
/// sample per chain after `steps` proposals of scale `step`, chains started from
/// `N(0, I)`.
pub fn metropolis_reference(spec: &PotentialSpec, d: usize, chains: usize, steps: usize, step: f64, seed: u64) -> Result<Vec<f64>> {
    let phi = spec.expand(d)?;
    let mut out = vec![0.0; chains * d];
    out.par_chunks_mut(d).enumerate().for_each(|(c, z)| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(c as u64);
        for zi in z.iter_mut() {
            *zi = StandardNormal.sample(&mut rng);
        }
        let mut e = eval_poly(&phi, z);
        let mut prop = vec![0.0; d];
        for _ in 0..steps {
            for (p, zi) in prop.iter_mut().zip(z.iter()) {
                let xi: f64 = StandardNormal.sample(&mut rng);
                *p = zi + step * xi;
            }
            let ep = eval_poly(&phi, &prop);
            let u: f64 = rng.random();
            if u.ln() < e - ep {
                z.copy_from_slice(&prop);
                e = ep;
            }
        }
    });
    Ok(out)
}

/// Number of local maxima of a Gaussian kernel density estimate (Silverman
/// bandwidth) of `xs`, evaluated on 512 points over the sample range.
pub fn kde_mode_count(xs: &[f64]) -> usize {
    let n = xs.len() as f64;
    if xs.len() < 2 {
        return xs.len();
    }
    let mean = xs.iter().sum::<f64>() / n;
    let sd = (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    let bw = 1.06 * sd * n.powf(-0.2);
    let lo = xs.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let m = 512;
    let dens: Vec<f64> = (0..m)
        .into_par_iter()
        .map(|k| {
            let g = lo + (hi - lo) * k as f64 / (m - 1) as f64;
            xs.iter().map(|x| (-0.5 * ((g - x) / bw).powi(2)).exp()).sum::<f64>()
        })
        .collect();
    let peak = dens.iter().copied().fold(0.0, f64::max);
    (1..m - 1)
        .filter(|&k| dens[k] > dens[k - 1] && dens[k] >= dens[k + 1] && dens[k] > 0.01 * peak)
        .count()
}

/// Seeded TT with standard-normal core entries and the given interior ranks.
pub fn random_tt(mode_sizes: &[usize], ranks: &[usize], seed: u64) -> Result<TensorTrain> {
    if ranks.len() + 1 != mode_sizes.len() {
        return Err(Error::ShapeMismatch("need d − 1 interior ranks".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut full = vec![1];
    full.extend_from_slice(ranks);
    full.push(1);
    let cores = mode_sizes
        .iter()
        .enumerate()
        .map(|(k, &n)| {
            let len = full[k] * n * full[k + 1];
            let data = (0..len).map(|_| StandardNormal.sample(&mut rng)).collect();
            Core::from_vec(full[k], n, full[k + 1], data)
        })
        .collect::<Result<Vec<_>>>()?;
    TensorTrain::new(cores)
}

/// Seeded SPD matrix `AᵀA + 0.1·I` with standard-normal `A`.
pub fn random_spd(d: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a: DMatrix<f64> = DMatrix::from_fn(d, d, |_, _| StandardNormal.sample(&mut rng));
    let m = a.transpose() * a + DMatrix::identity(d, d) * 0.1;
    (&m + m.transpose()) * 0.5
}
