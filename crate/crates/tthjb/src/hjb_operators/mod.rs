// SPDX-License-Identifier: MIT OR Apache-2.0

//! Discretized right-hand side of the shifted HJB equation
//!
//! ```text
//! ∂_t v = Δv + x·∇v − ‖∇v‖²
//! ```
//!
//! acting on Legendre coefficient tensors in TT format: the linear OU operator
//! `L`, partial derivatives, polynomial products with degree doubling, degree
//! projection, the nonlinear term and its linearization, and the stiffness
//! operator `H_B = L + 2·P·NL_B`.

pub mod potential;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::poly_basis::{LegendreBasis, PolySpace};
use crate::tt_core::{laplace_like_sum, Core, TensorTrain};

pub use potential::{build_potential_tt, Builtin, Monomial, PotentialSpec, Term};

fn check_space(a: &TensorTrain, space: &PolySpace) -> Result<()> {
    if a.mode_sizes() != space.mode_sizes() {
        return Err(Error::ShapeMismatch(format!(
            "tensor mode sizes {:?} do not match space {:?}",
            a.mode_sizes(),
            space.mode_sizes()
        )));
    }
    Ok(())
}

/// `L·A`: Laplace-like application of the per-dimension OU generator matrices.
/// Interior ranks double; degrees are unchanged.
pub fn apply_lin(a: &TensorTrain, space: &PolySpace) -> Result<TensorTrain> {
    check_space(a, space)?;
    let ms: Vec<_> = space.bases().iter().map(|b| b.ou_generator_matrix()).collect();
    a.laplace_like_apply(&ms)
}

/// `L_{x_i}·A`: coefficients of `∂_{x_i} v_A`. Ranks are unchanged.
pub fn apply_partial(a: &TensorTrain, i: usize, space: &PolySpace) -> Result<TensorTrain> {
    check_space(a, space)?;
    if i >= space.d() {
        return Err(Error::ShapeMismatch(format!("dimension {i} out of range")));
    }
    a.apply_mode_matrix(i, &space.basis(i).derivative_matrix())
}

/// Bilinear map taking Legendre coefficients of two univariate polynomials to the
/// leading `rows` Legendre coefficients of their product.
///
/// It composes the three linear steps of the product construction: conversion of
/// both factors to monomial coefficients (`T`), the shift-and-add convolution of
/// monomial coefficient vectors, and the conversion back to the Legendre basis of
/// the doubled degree (`T_{2n}⁻¹`).
///
/// The monomials are taken in the reference variable `ξ ∈ [−1, 1]` of the interval:
/// raw-variable monomials are badly conditioned on short intervals away from the
/// origin. Orthonormal bases on `[a, b]` are `√(2/(b−a))` times the reference ones,
/// so the reference map is rescaled by that factor.
#[derive(Debug, Clone)]
pub struct ProductMap {
    na: usize,
    nb: usize,
    rows: usize,
    /// `g[(γ·na + α)·nb + β]`
    g: Vec<f64>,
}

impl ProductMap {
    /// Map for degree-`deg_a` and degree-`deg_b` factors on `space`'s interval `i`,
    /// keeping the first `rows` output coefficients (`None` keeps all `deg_a + deg_b + 1`).
    pub fn new(space: &PolySpace, i: usize, deg_a: usize, deg_b: usize, rows: Option<usize>) -> Result<Self> {
        let base = space.basis(i);
        let scale = (2.0 / (base.b() - base.a())).sqrt();
        let ba = LegendreBasis::new(-1.0, 1.0, deg_a)?;
        let bb = LegendreBasis::new(-1.0, 1.0, deg_b)?;
        let bc = LegendreBasis::new(-1.0, 1.0, deg_a + deg_b)?;
        let (na, nb, nc) = (deg_a + 1, deg_b + 1, deg_a + deg_b + 1);
        let rows = rows.unwrap_or(nc).min(nc);
        let (ta, tb, back) = (ba.t(), bb.t(), bc.t_inv());
        let mut g = vec![0.0; rows * na * nb];
        for alpha in 0..na {
            for beta in 0..nb {
                // monomial convolution of columns alpha and beta
                let mut conv = vec![0.0; nc];
                for k in 0..=alpha {
                    let tk = ta[(k, alpha)];
                    if tk == 0.0 {
                        continue;
                    }
                    for l in 0..=beta {
                        conv[k + l] += tk * tb[(l, beta)];
                    }
                }
                for gamma in 0..rows {
                    let mut s = 0.0;
                    for (j, &c) in conv.iter().enumerate().skip(gamma) {
                        s += back[(gamma, j)] * c;
                    }
                    g[(gamma * na + alpha) * nb + beta] = scale * s;
                }
            }
        }
        Ok(Self { na, nb, rows, g })
    }

    /// Merged core `C[(a0,b0), γ, (a1,b1)] = Σ_{α,β} g[γ,α,β]·A[a0,α,a1]·B[b0,β,b1]`.
    pub fn product_core(&self, a: &Core, b: &Core) -> Core {
        let (ra0, ra1, rb0, rb1) = (a.left_rank(), a.right_rank(), b.left_rank(), b.right_rank());
        let (na, nb, rows) = (self.na, self.nb, self.rows);
        let mut out = Core::zeros(ra0 * rb0, rows, ra1 * rb1);
        let mut h = vec![0.0; rows * nb];
        let mut u = vec![0.0; na];
        let mut w = vec![0.0; nb];
        for a0 in 0..ra0 {
            for a1 in 0..ra1 {
                for (alpha, ua) in u.iter_mut().enumerate() {
                    *ua = a.get(a0, alpha, a1);
                }
                h.iter_mut().for_each(|x| *x = 0.0);
                for gamma in 0..rows {
                    for alpha in 0..na {
                        if u[alpha] == 0.0 {
                            continue;
                        }
                        let off = (gamma * na + alpha) * nb;
                        for beta in 0..nb {
                            h[gamma * nb + beta] += self.g[off + beta] * u[alpha];
                        }
                    }
                }
                for b0 in 0..rb0 {
                    for b1 in 0..rb1 {
                        for (beta, wb) in w.iter_mut().enumerate() {
                            *wb = b.get(b0, beta, b1);
                        }
                        for gamma in 0..rows {
                            let s: f64 = h[gamma * nb..(gamma + 1) * nb]
                                .iter()
                                .zip(&w)
                                .map(|(x, y)| x * y)
                                .sum();
                            out.set(a0 * rb0 + b0, gamma, a1 * rb1 + b1, s);
                        }
                    }
                }
            }
        }
        out
    }
}

/// Product maps for every dimension, for factors living in `space`.
fn product_maps(space: &PolySpace, project: bool) -> Result<Vec<ProductMap>> {
    (0..space.d())
        .map(|i| {
            let n = space.basis(i).degree();
            ProductMap::new(space, i, n, n, project.then_some(n + 1))
        })
        .collect()
}

/// Space with every degree doubled.
pub fn doubled_space(space: &PolySpace) -> Result<PolySpace> {
    let deg: Vec<_> = space.degrees().iter().map(|n| 2 * n).collect();
    space.with_degrees(&deg)
}

/// Coefficients (degrees `2n`) of the pointwise product `v_A·v_B`, with the
/// doubled space. Interior ranks are exactly `r_a·r_b`.
pub fn poly_multiply(a: &TensorTrain, b: &TensorTrain, space: &PolySpace) -> Result<(TensorTrain, PolySpace)> {
    check_space(a, space)?;
    check_space(b, space)?;
    let out_space = doubled_space(space)?;
    let maps = product_maps(space, false)?;
    let cores = maps
        .iter()
        .zip(a.cores().iter().zip(b.cores()))
        .map(|(m, (ca, cb))| m.product_core(ca, cb))
        .collect();
    Ok((TensorTrain::new(cores)?, out_space))
}

/// `NL_B(A) = −Σ_i M_{L_{x_i}B}(L_{x_i}A)` built as one Laplace-like sum whose
/// base cores are products `B_j ⊙ A_j` and whose modified cores are `D B_i ⊙ D A_i`.
fn nonlin_pair(b: &TensorTrain, a: &TensorTrain, space: &PolySpace, project: bool) -> Result<TensorTrain> {
    check_space(a, space)?;
    check_space(b, space)?;
    let maps = product_maps(space, project)?;
    let mut base = Vec::with_capacity(space.d());
    let mut modified = Vec::with_capacity(space.d());
    for (i, map) in maps.iter().enumerate() {
        let dx = space.basis(i).derivative_matrix();
        let (ca, cb) = (a.core(i), b.core(i));
        base.push(map.product_core(cb, ca));
        modified.push(map.product_core(&cb.mode_multiply(&dx)?, &ca.mode_multiply(&dx)?));
    }
    Ok(laplace_like_sum(&base, &modified)?.scaled(-1.0))
}

/// `NL(A) = −Σ_i (L_{x_i}A)²`, i.e. the coefficients (degrees `2n`) of `−‖∇v_A‖²`,
/// with the doubled space. Interior ranks are `2r²` before rounding.
pub fn apply_nonlin(a: &TensorTrain, space: &PolySpace) -> Result<(TensorTrain, PolySpace)> {
    let out_space = doubled_space(space)?;
    Ok((nonlin_pair(a, a, space, false)?, out_space))
}

/// `NL_B(A)`: coefficients (degrees `2n`) of `−⟨∇v_B, ∇v_A⟩`, with the doubled space.
pub fn apply_nonlin_linearized(b: &TensorTrain, a: &TensorTrain, space: &PolySpace) -> Result<(TensorTrain, PolySpace)> {
    let out_space = doubled_space(space)?;
    Ok((nonlin_pair(b, a, space, false)?, out_space))
}

/// `P·NL(A)` computed directly at degrees `n` (only the retained coefficients are formed).
pub fn apply_nonlin_projected(a: &TensorTrain, space: &PolySpace) -> Result<TensorTrain> {
    nonlin_pair(a, a, space, true)
}

/// Degree projection: keeps coefficients `0..=n_i` in every dimension.
pub fn project_degree(a: &TensorTrain, degrees: &[usize]) -> Result<TensorTrain> {
    let sizes: Vec<_> = degrees.iter().map(|n| n + 1).collect();
    a.truncate_modes(&sizes)
}

/// Stiffness operator `H_B·A = L·A + 2·P·NL_B(A)`; degrees are preserved.
pub fn apply_stiffness(b: &TensorTrain, a: &TensorTrain, space: &PolySpace) -> Result<TensorTrain> {
    let lin = apply_lin(a, space)?;
    let nl = nonlin_pair(b, a, space, true)?;
    lin.add_scaled(&nl, 2.0)
}

/// Constant, linear and quadratic monomial coefficients of `v_A`:
/// `v = a0 + bᵀx + xᵀQx + (other monomials)` with `Q` symmetric.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticPart {
    pub a0: f64,
    pub b: Vec<f64>,
    /// Row-major `d × d`.
    pub q: Vec<f64>,
}

impl QuadraticPart {
    pub fn q_entry(&self, i: usize, j: usize) -> f64 {
        self.q[i * self.b.len() + j]
    }
}

/// Reads the monomials of total degree ≤ 2 from the TT by converting every core to
/// monomial coefficients and contracting selector vectors (prefix/suffix products
/// of the degree-0 slices), at cost `O(d² r²)`.
pub fn extract_quadratic(a: &TensorTrain, space: &PolySpace) -> Result<QuadraticPart> {
    check_space(a, space)?;
    let d = a.d();
    let mono: Vec<Core> = a
        .cores()
        .iter()
        .zip(space.bases())
        .map(|(c, b)| c.mode_multiply(b.t()))
        .collect::<Result<_>>()?;
    let slice = |k: usize, e: usize| -> Option<DMatrix<f64>> {
        (e < mono[k].mode_size()).then(|| mono[k].slice(e))
    };
    let zero_slices: Vec<DMatrix<f64>> = (0..d).map(|k| mono[k].slice(0)).collect();
    // prefix[k] = S_0[0]⋯S_{k-1}[0] (1 × r_k), suffix[k] = S_k[0]⋯S_{d-1}[0] (r_k × 1)
    let mut prefix = vec![DMatrix::from_element(1, 1, 1.0)];
    for k in 0..d {
        let next = &prefix[k] * &zero_slices[k];
        prefix.push(next);
    }
    let mut suffix = vec![DMatrix::from_element(1, 1, 1.0); d + 1];
    for k in (0..d).rev() {
        suffix[k] = &zero_slices[k] * &suffix[k + 1];
    }
    let a0 = prefix[d][(0, 0)];
    let mut b = vec![0.0; d];
    let mut q = vec![0.0; d * d];
    for i in 0..d {
        if let Some(s1) = slice(i, 1) {
            b[i] = (&prefix[i] * &s1 * &suffix[i + 1])[(0, 0)];
            // walk j > i accumulating the degree-0 slices in between
            let mut mid = &prefix[i] * &s1;
            for j in i + 1..d {
                if let Some(sj) = slice(j, 1) {
                    let c = (&mid * &sj * &suffix[j + 1])[(0, 0)];
                    q[i * d + j] = 0.5 * c;
                    q[j * d + i] = 0.5 * c;
                }
                mid = &mid * &zero_slices[j];
            }
        }
        if let Some(s2) = slice(i, 2) {
            q[i * d + i] = (&prefix[i] * &s2 * &suffix[i + 1])[(0, 0)];
        }
    }
    Ok(QuadraticPart { a0, b, q })
}

/// Constant function with value `c` on `space`.
pub fn constant_tt(space: &PolySpace, c: f64) -> TensorTrain {
    let vectors: Vec<Vec<f64>> = space
        .bases()
        .iter()
        .enumerate()
        .map(|(k, b)| {
            let mut v = b.monomial_coefficients(0);
            v.resize(b.size(), 0.0);
            if k == 0 {
                v.iter_mut().for_each(|x| *x *= c);
            }
            v
        })
        .collect();
    TensorTrain::rank_one(&vectors).expect("constant cores are well-formed")
}
