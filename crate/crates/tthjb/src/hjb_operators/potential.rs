// SPDX-License-Identifier: MIT OR Apache-2.0

//! Declarative polynomial potentials and their TT coefficients.
//!
//! A potential is a sum of low-dimensional polynomial terms given in the monomial
//! basis of the raw coordinates, plus named built-ins:
//!
//! | name         | coordinates | definition |
//! |--------------|-------------|------------|
//! | `gaussian`   | any `m`     | `xᵀQx` with `params.Q` an `m×m` matrix |
//! | `banana`     | `(x, y)`    | `½‖S⁻¹(x, y + x² + 1)‖²`, `params.sigma` defaults to `[[1, 0.9], [0.9, 1]]` |
//! | `doublewell` | `(x, y)`    | `x⁴ + y⁴ − 4x² − 4y² − 0.4x + 0.1y + 8` |
//! | `sextic`     | `(x, y)`    | `x⁶ + y⁶ + 3xy` |
//! | `iso_tail`   | any         | `Σ x_i²` |

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::poly_basis::PolySpace;
use crate::tt_core::{RoundMode, TensorTrain};

/// One monomial `coef · ∏ x_{coords[k]}^{exps[k]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Monomial {
    pub exps: Vec<usize>,
    pub coef: f64,
}

/// Polynomial term over an ordered subset of coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Term {
    pub coords: Vec<usize>,
    pub poly: Vec<Monomial>,
}

/// Named built-in potential.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Builtin {
    pub name: String,
    pub coords: Vec<usize>,
    #[serde(default)]
    pub params: serde_json::Map<String, serde_json::Value>,
}

/// Sum of polynomial terms and built-ins.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PotentialSpec {
    #[serde(default)]
    pub terms: Vec<Term>,
    #[serde(default)]
    pub builtins: Vec<Builtin>,
}

/// Sparse polynomial: full exponent vector → coefficient.
pub type Poly = BTreeMap<Vec<usize>, f64>;

fn poly_add(p: &mut Poly, q: &Poly, c: f64) {
    for (e, v) in q {
        *p.entry(e.clone()).or_insert(0.0) += c * v;
    }
}

fn poly_mul(p: &Poly, q: &Poly) -> Poly {
    let mut out = Poly::new();
    for (e1, v1) in p {
        for (e2, v2) in q {
            let e: Vec<usize> = e1.iter().zip(e2).map(|(a, b)| a + b).collect();
            *out.entry(e).or_insert(0.0) += v1 * v2;
        }
    }
    out
}

fn mono(d: usize, pairs: &[(usize, usize)], c: f64) -> Poly {
    let mut e = vec![0; d];
    for &(k, p) in pairs {
        e[k] += p;
    }
    Poly::from([(e, c)])
}

fn matrix_param(b: &Builtin, key: &str) -> Result<Option<Vec<Vec<f64>>>> {
    match b.params.get(key) {
        None => Ok(None),
        Some(v) => serde_json::from_value(v.clone())
            .map(Some)
            .map_err(|e| Error::InvalidInput(format!("builtin {}: parameter {key}: {e}", b.name))),
    }
}

fn check_square(m: &[Vec<f64>], size: usize, what: &str) -> Result<()> {
    if m.len() != size || m.iter().any(|r| r.len() != size) {
        return Err(Error::InvalidInput(format!("{what} must be {size}×{size}")));
    }
    Ok(())
}

impl Builtin {
    /// Expands the built-in into monomials over `d` coordinates.
    pub fn expand(&self, d: usize) -> Result<Poly> {
        if let Some(&k) = self.coords.iter().find(|&&k| k >= d) {
            return Err(Error::InvalidInput(format!("builtin {}: coordinate {k} ≥ d = {d}", self.name)));
        }
        let c = &self.coords;
        let need2 = || {
            if c.len() == 2 {
                Ok((c[0], c[1]))
            } else {
                Err(Error::InvalidInput(format!("builtin {} takes exactly 2 coordinates", self.name)))
            }
        };
        let mut p = Poly::new();
        match self.name.as_str() {
            "gaussian" => {
                let q = matrix_param(self, "Q")?
                    .ok_or_else(|| Error::InvalidInput("builtin gaussian needs params.Q".into()))?;
                check_square(&q, c.len(), "gaussian Q")?;
                for (i, row) in q.iter().enumerate() {
                    for (j, &v) in row.iter().enumerate() {
                        poly_add(&mut p, &mono(d, &[(c[i], 1), (c[j], 1)], v), 1.0);
                    }
                }
            }
            "banana" => {
                let (x, y) = need2()?;
                let s = matrix_param(self, "sigma")?.unwrap_or(vec![vec![1.0, 0.9], vec![0.9, 1.0]]);
                check_square(&s, 2, "banana sigma")?;
                let det = s[0][0] * s[1][1] - s[0][1] * s[1][0];
                if det == 0.0 {
                    return Err(Error::InvalidInput("banana sigma is singular".into()));
                }
                let inv = [[s[1][1] / det, -s[0][1] / det], [-s[1][0] / det, s[0][0] / det]];
                // w = y + x² + 1
                let mut w = mono(d, &[(y, 1)], 1.0);
                poly_add(&mut w, &mono(d, &[(x, 2)], 1.0), 1.0);
                poly_add(&mut w, &mono(d, &[], 1.0), 1.0);
                let xv = mono(d, &[(x, 1)], 1.0);
                for row in inv {
                    let mut z = Poly::new();
                    poly_add(&mut z, &xv, row[0]);
                    poly_add(&mut z, &w, row[1]);
                    poly_add(&mut p, &poly_mul(&z, &z), 0.5);
                }
            }
            "doublewell" => {
                let (x, y) = need2()?;
                for (pairs, v) in [
                    (vec![(x, 4)], 1.0),
                    (vec![(y, 4)], 1.0),
                    (vec![(x, 2)], -4.0),
                    (vec![(y, 2)], -4.0),
                    (vec![(x, 1)], -0.4),
                    (vec![(y, 1)], 0.1),
                    (vec![], 8.0),
                ] {
                    poly_add(&mut p, &mono(d, &pairs, v), 1.0);
                }
            }
            "sextic" => {
                let (x, y) = need2()?;
                poly_add(&mut p, &mono(d, &[(x, 6)], 1.0), 1.0);
                poly_add(&mut p, &mono(d, &[(y, 6)], 1.0), 1.0);
                poly_add(&mut p, &mono(d, &[(x, 1), (y, 1)], 3.0), 1.0);
            }
            "iso_tail" => {
                for &k in c {
                    poly_add(&mut p, &mono(d, &[(k, 2)], 1.0), 1.0);
                }
            }
            other => return Err(Error::InvalidInput(format!("unknown builtin potential '{other}'"))),
        }
        Ok(p)
    }
}

impl PotentialSpec {
    /// Expands every term and built-in into one sparse polynomial over `d` coordinates.
    pub fn expand(&self, d: usize) -> Result<Poly> {
        let mut p = Poly::new();
        for term in &self.terms {
            if let Some(&k) = term.coords.iter().find(|&&k| k >= d) {
                return Err(Error::InvalidInput(format!("term coordinate {k} ≥ d = {d}")));
            }
            for m in &term.poly {
                if m.exps.len() != term.coords.len() {
                    return Err(Error::InvalidInput(format!(
                        "monomial has {} exponents for {} coordinates",
                        m.exps.len(),
                        term.coords.len()
                    )));
                }
                let pairs: Vec<_> = term.coords.iter().copied().zip(m.exps.iter().copied()).collect();
                poly_add(&mut p, &mono(d, &pairs, m.coef), 1.0);
            }
        }
        for b in &self.builtins {
            poly_add(&mut p, &b.expand(d)?, 1.0);
        }
        p.retain(|_, v| *v != 0.0);
        Ok(p)
    }

    /// Built-in Gaussian `xᵀQx` over all `d` coordinates.
    pub fn gaussian(q: &[Vec<f64>]) -> Self {
        let mut params = serde_json::Map::new();
        params.insert("Q".into(), serde_json::to_value(q).expect("finite matrix"));
        Self {
            terms: vec![],
            builtins: vec![Builtin {
                name: "gaussian".into(),
                coords: (0..q.len()).collect(),
                params,
            }],
        }
    }

    /// Shorthand for a parameter-free built-in.
    pub fn builtin(name: &str, coords: Vec<usize>) -> Builtin {
        Builtin {
            name: name.into(),
            coords,
            params: serde_json::Map::new(),
        }
    }
}

/// TT coefficients of `Φ` in the orthonormal Legendre basis of `space`.
///
/// Each monomial becomes a rank-one TT whose cores are the Legendre coefficients
/// of the univariate monomials; the terms are summed and rounded at relative
/// tolerance `delta` after every addition to keep intermediate ranks small.
pub fn build_potential_tt(spec: &PotentialSpec, space: &PolySpace, delta: f64) -> Result<TensorTrain> {
    let d = space.d();
    let poly = spec.expand(d)?;
    for e in poly.keys() {
        for (k, (&p, b)) in e.iter().zip(space.bases()).enumerate() {
            if p > b.degree() {
                return Err(Error::InvalidInput(format!(
                    "exponent {p} in dimension {k} exceeds the space degree {}",
                    b.degree()
                )));
            }
        }
    }
    let mut acc = TensorTrain::zeros(&space.mode_sizes());
    for (e, &c) in &poly {
        let vectors: Vec<Vec<f64>> = e
            .iter()
            .zip(space.bases())
            .enumerate()
            .map(|(k, (&p, b))| {
                let v = b.monomial_coefficients(p);
                if k == 0 {
                    v.iter().map(|x| x * c).collect()
                } else {
                    v
                }
            })
            .collect();
        let term = TensorTrain::rank_one(&vectors)?;
        acc = acc.add_scaled(&term, 1.0)?.round(&RoundMode::Tol(delta))?;
    }
    Ok(acc)
}
