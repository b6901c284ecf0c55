// SPDX-License-Identifier: MIT OR Apache-2.0

//! Orthonormal Legendre bases on intervals and their operator matrices.
//!
//! On `[a, b]` the basis functions are
//!
//! ```text
//! p_α(x) = sqrt((2α+1)/(b−a)) · P_α(2(x−a)/(b−a) − 1)
//! ```
//!
//! with `P_α` the classical Legendre polynomials. The transform `T` maps Legendre
//! coefficients to coefficients of the raw monomials `1, x, x², …` (not of the
//! mapped variable), so the monomial operator matrices below are independent of
//! the interval.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Largest supported degree; the monomial transform is exponentially ill-conditioned.
pub const MAX_DEGREE: usize = 12;

/// Orthonormal Legendre basis of degree `n` on `[a, b]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LegendreBasis {
    a: f64,
    b: f64,
    n: usize,
    t: DMatrix<f64>,
    t_inv: DMatrix<f64>,
}

impl LegendreBasis {
    /// Builds the basis and its monomial transforms.
    pub fn new(a: f64, b: f64, n: usize) -> Result<Self> {
        if !(a < b) || !a.is_finite() || !b.is_finite() {
            return Err(Error::InvalidInput(format!("interval [{a}, {b}] is not ordered")));
        }
        if n > MAX_DEGREE {
            return Err(Error::DegreeCap {
                degree: n,
                cap: MAX_DEGREE,
            });
        }
        let t = transform(a, b, n);
        let t_inv = upper_triangular_inverse(&t);
        Ok(Self { a, b, n, t, t_inv })
    }

    pub fn a(&self) -> f64 {
        self.a
    }

    pub fn b(&self) -> f64 {
        self.b
    }

    /// Maximum degree.
    pub fn degree(&self) -> usize {
        self.n
    }

    /// Number of coefficients `n + 1`.
    pub fn size(&self) -> usize {
        self.n + 1
    }

    /// Legendre → monomial transform `T`.
    pub fn t(&self) -> &DMatrix<f64> {
        &self.t
    }

    /// Monomial → Legendre transform `T⁻¹`.
    pub fn t_inv(&self) -> &DMatrix<f64> {
        &self.t_inv
    }

    /// Same interval, different degree.
    pub fn with_degree(&self, n: usize) -> Result<Self> {
        Self::new(self.a, self.b, n)
    }

    fn mapped(&self, x: f64) -> f64 {
        (2.0 * x - (self.a + self.b)) / (self.b - self.a)
    }

    /// True when `x ∈ [a, b]`.
    pub fn contains(&self, x: f64) -> bool {
        x >= self.a && x <= self.b
    }

    /// `(p_0(x), …, p_n(x))` by the three-term recurrence.
    pub fn evaluate(&self, x: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.n + 1];
        self.evaluate_into(x, &mut out);
        out
    }

    /// As [`LegendreBasis::evaluate`] into a caller-provided buffer of length `n + 1`.
    pub fn evaluate_into(&self, x: f64, out: &mut [f64]) {
        let s = self.mapped(x);
        let h = self.b - self.a;
        let (mut p_prev, mut p) = (0.0, 1.0);
        for k in 0..=self.n {
            out[k] = ((2 * k + 1) as f64 / h).sqrt() * p;
            let next = ((2 * k + 1) as f64 * s * p - k as f64 * p_prev) / (k + 1) as f64;
            p_prev = p;
            p = next;
        }
    }

    /// `(p_0'(x), …, p_n'(x))` via `P'_{k+1} = P'_{k−1} + (2k+1)P_k`.
    pub fn evaluate_derivative(&self, x: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.n + 1];
        self.evaluate_derivative_into(x, &mut out);
        out
    }

    /// As [`LegendreBasis::evaluate_derivative`] into a caller-provided buffer.
    pub fn evaluate_derivative_into(&self, x: f64, out: &mut [f64]) {
        let s = self.mapped(x);
        let h = self.b - self.a;
        let ds = 2.0 / h;
        // P_k and P'_k for k-1 and k
        let (mut p_prev, mut p) = (0.0, 1.0);
        let (mut dp_prev, mut dp) = (0.0, 0.0);
        for k in 0..=self.n {
            out[k] = ((2 * k + 1) as f64 / h).sqrt() * dp * ds;
            let next = ((2 * k + 1) as f64 * s * p - k as f64 * p_prev) / (k + 1) as f64;
            let dnext = dp_prev + (2 * k + 1) as f64 * p;
            p_prev = p;
            p = next;
            dp_prev = dp;
            dp = dnext;
        }
    }

    /// Value of `Σ c_α p_α` at `x`.
    pub fn eval_series(&self, c: &[f64], x: f64) -> f64 {
        self.evaluate(x).iter().zip(c).map(|(p, c)| p * c).sum()
    }

    /// Coefficients of the OU generator `∂² + x∂`: `D = T⁻¹ (M_dd + M_xd) T`.
    pub fn ou_generator_matrix(&self) -> DMatrix<f64> {
        let m = monomial_second_derivative(self.n) + monomial_x_derivative(self.n);
        &self.t_inv * m * &self.t
    }

    /// Coefficients of `∂`: `D_x = T⁻¹ M_d T`.
    pub fn derivative_matrix(&self) -> DMatrix<f64> {
        &self.t_inv * monomial_derivative(self.n) * &self.t
    }

    /// Legendre coefficients of the monomial `x^k` (`k ≤ n`).
    pub fn monomial_coefficients(&self, k: usize) -> Vec<f64> {
        self.t_inv.column(k).iter().copied().collect()
    }

    /// Gauss–Legendre nodes and weights with `m` points on `[a, b]`.
    pub fn gauss_nodes(&self, m: usize) -> (Vec<f64>, Vec<f64>) {
        gauss_legendre(m, self.a, self.b)
    }
}

/// Legendre → monomial matrix built from the three-term recurrence on coefficient vectors.
fn transform(a: f64, b: f64, n: usize) -> DMatrix<f64> {
    let h = b - a;
    // s = α x + β; adding +0.0 turns the −0.0 of symmetric intervals into +0.0 so
    // the parity zeros are positive zeros
    let (alpha, beta) = (2.0 / h, -(a + b) / h + 0.0);
    let mut polys: Vec<Vec<f64>> = Vec::with_capacity(n + 1);
    polys.push(vec![1.0]);
    if n >= 1 {
        polys.push(vec![beta, alpha]);
    }
    for k in 1..n {
        let (pk, pkm1) = (&polys[k], &polys[k - 1]);
        let mut next = vec![0.0; k + 2];
        let c1 = (2 * k + 1) as f64 / (k + 1) as f64;
        let c0 = k as f64 / (k + 1) as f64;
        for (j, &c) in pk.iter().enumerate() {
            next[j] += c1 * beta * c;
            next[j + 1] += c1 * alpha * c;
        }
        for (j, &c) in pkm1.iter().enumerate() {
            next[j] -= c0 * c;
        }
        polys.push(next);
    }
    let mut t = DMatrix::zeros(n + 1, n + 1);
    for (k, p) in polys.iter().enumerate() {
        let scale = ((2 * k + 1) as f64 / h).sqrt();
        for (j, &c) in p.iter().enumerate() {
            t[(j, k)] = scale * c;
        }
    }
    t
}

/// Inverse of an upper-triangular matrix by back substitution; exact zeros of `t`
/// propagate, so the parity pattern of symmetric intervals is preserved bitwise.
fn upper_triangular_inverse(t: &DMatrix<f64>) -> DMatrix<f64> {
    let m = t.nrows();
    let mut x = DMatrix::zeros(m, m);
    for col in 0..m {
        for i in (0..=col).rev() {
            let mut s = if i == col { 1.0 } else { 0.0 };
            for k in i + 1..=col {
                let tik = t[(i, k)];
                if tik != 0.0 {
                    s -= tik * x[(k, col)];
                }
            }
            x[(i, col)] = if s == 0.0 { 0.0 } else { s / t[(i, i)] };
        }
    }
    x
}

/// Monomial matrix of `∂²`: entry `(α−2, α) = α(α−1)`.
pub fn monomial_second_derivative(n: usize) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(n + 1, n + 1);
    for alpha in 2..=n {
        m[(alpha - 2, alpha)] = (alpha * (alpha - 1)) as f64;
    }
    m
}

/// Monomial matrix of `x∂`: `diag(0, 1, …, n)`.
pub fn monomial_x_derivative(n: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n + 1, n + 1, |i, j| if i == j { i as f64 } else { 0.0 })
}

/// Monomial matrix of `∂`: entry `(α−1, α) = α`.
pub fn monomial_derivative(n: usize) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(n + 1, n + 1);
    for alpha in 1..=n {
        m[(alpha - 1, alpha)] = alpha as f64;
    }
    m
}

/// Gauss–Legendre quadrature with `m` nodes on `[a, b]` (Newton iteration on `P_m`).
pub fn gauss_legendre(m: usize, a: f64, b: f64) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; m];
    let mut weights = vec![0.0; m];
    let mf = m as f64;
    for i in 0..m.div_ceil(2) {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (mf + 0.5)).cos();
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, 0.0);
            for k in 0..m {
                let p2 = p1;
                p1 = p0;
                p0 = ((2 * k + 1) as f64 * z * p1 - k as f64 * p2) / (k + 1) as f64;
            }
            // p0 = P_m(z), p1 = P_{m-1}(z)
            let dp = mf * (z * p0 - p1) / (z * z - 1.0);
            let dz = p0 / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        let (mut p0, mut p1) = (1.0, 0.0);
        for k in 0..m {
            let p2 = p1;
            p1 = p0;
            p0 = ((2 * k + 1) as f64 * z * p1 - k as f64 * p2) / (k + 1) as f64;
        }
        let dp = mf * (z * p0 - p1) / (z * z - 1.0);
        let w = 2.0 / ((1.0 - z * z) * dp * dp);
        nodes[i] = -z;
        nodes[m - 1 - i] = z;
        weights[i] = w;
        weights[m - 1 - i] = w;
    }
    if m % 2 == 1 {
        nodes[m / 2] = 0.0;
    }
    let (c, h) = (0.5 * (a + b), 0.5 * (b - a));
    (
        nodes.iter().map(|z| c + h * z).collect(),
        weights.iter().map(|w| h * w).collect(),
    )
}

/// Tensor-product polynomial space `K = ×[a_i, b_i]` with per-dimension degrees.
#[derive(Debug, Clone, PartialEq)]
pub struct PolySpace {
    bases: Vec<LegendreBasis>,
}

impl PolySpace {
    /// Builds one basis per `(interval, degree)` pair.
    pub fn new(intervals: &[(f64, f64)], degrees: &[usize]) -> Result<Self> {
        if intervals.is_empty() || intervals.len() != degrees.len() {
            return Err(Error::InvalidInput(format!(
                "{} intervals and {} degrees",
                intervals.len(),
                degrees.len()
            )));
        }
        let bases = intervals
            .iter()
            .zip(degrees)
            .map(|(&(a, b), &n)| LegendreBasis::new(a, b, n))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { bases })
    }

    /// The same intervals with new degrees.
    pub fn with_degrees(&self, degrees: &[usize]) -> Result<Self> {
        Self::new(&self.intervals(), degrees)
    }

    pub fn d(&self) -> usize {
        self.bases.len()
    }

    pub fn bases(&self) -> &[LegendreBasis] {
        &self.bases
    }

    pub fn basis(&self, i: usize) -> &LegendreBasis {
        &self.bases[i]
    }

    pub fn degrees(&self) -> Vec<usize> {
        self.bases.iter().map(LegendreBasis::degree).collect()
    }

    /// Mode sizes `n_i + 1`.
    pub fn mode_sizes(&self) -> Vec<usize> {
        self.bases.iter().map(LegendreBasis::size).collect()
    }

    pub fn intervals(&self) -> Vec<(f64, f64)> {
        self.bases.iter().map(|b| (b.a, b.b)).collect()
    }

    /// True when `x ∈ K`.
    pub fn contains(&self, x: &[f64]) -> bool {
        self.bases.iter().zip(x).all(|(b, &xi)| b.contains(xi))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn recurrence_matches_transform_on_shifted_interval() {
        let b = LegendreBasis::new(0.0, 2.0, 5).unwrap();
        for &x in &[0.1, 0.7, 1.3, 1.9] {
            let p = b.evaluate(x);
            for k in 0..=5 {
                let mono: f64 = (0..=5).map(|j| b.t()[(j, k)] * x.powi(j as i32)).sum();
                assert!((mono - p[k]).abs() < 1e-12, "k={k} x={x}");
            }
        }
    }

    #[test]
    fn gauss_rule_integrates_polynomials_exactly() {
        let (x, w) = gauss_legendre(5, -1.0, 3.0);
        let integral: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(9)).sum();
        let exact = (3f64.powi(10) - 1.0) / 10.0;
        assert!((integral - exact).abs() < 1e-9 * exact);
    }
}
