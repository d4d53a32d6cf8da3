//! Data-driven monic orthogonal polynomials and tensor-product bases.

use std::cmp::Ordering;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::transforms::MomentTable;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OrthoError {
    #[error("moment matrix for degree {degree} is singular")]
    SingularMomentMatrix { degree: usize },
    #[error("need moments through order {needed}, got {got}")]
    MissingMoments { needed: usize, got: usize },
    #[error("dimension {dim} has {distinct} distinct values, degree {degree} needs at least {needed}")]
    InsufficientDistinctValues { dim: usize, distinct: usize, degree: usize, needed: usize },
    #[error("candidate set has more than {cap} entries (M={dims}, D={degree}, q={q_norm}, r={max_interaction})")]
    CandidateExplosion { cap: usize, dims: usize, degree: usize, q_norm: f64, max_interaction: usize },
    #[error("basis term {index} has non-positive norm {value}")]
    NonPositiveNorm { index: usize, value: f64 },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid parameters: {0}")]
    InvalidParameters(String),
}

const SINGULAR_CONDITION: f64 = 1e15;
const WARN_CONDITION: f64 = 1e12;

/// Coefficients (ascending powers) of the monic degree-`l` polynomial
/// orthogonal to all lower degrees under the moment sequence, with a
/// 1-norm condition estimate of the Hankel block.
pub fn monic_orthogonal_coeffs(moments: &[f64], l: usize) -> Result<(Vec<f64>, f64), OrthoError> {
    if l == 0 {
        return Ok((vec![1.0], 1.0));
    }
    if moments.len() < 2 * l {
        return Err(OrthoError::MissingMoments { needed: 2 * l - 1, got: moments.len().saturating_sub(1) });
    }
    if moments[..2 * l].iter().any(|m| !m.is_finite()) {
        return Err(OrthoError::SingularMomentMatrix { degree: l });
    }
    let h = DMatrix::from_fn(l, l, |i, k| moments[i + k]);
    let rhs = DVector::from_fn(l, |i, _| -moments[i + l]);
    let lu = h.clone().lu();
    let inv = lu.try_inverse().ok_or(OrthoError::SingularMomentMatrix { degree: l })?;
    let cond = one_norm(&h) * one_norm(&inv);
    if !cond.is_finite() || cond > SINGULAR_CONDITION {
        return Err(OrthoError::SingularMomentMatrix { degree: l });
    }
    if cond > WARN_CONDITION {
        log::warn!("moment matrix for degree {l} is ill-conditioned (cond ~ {cond:.3e})");
    }
    let sol = lu.solve(&rhs).ok_or(OrthoError::SingularMomentMatrix { degree: l })?;
    let mut coeffs: Vec<f64> = sol.iter().copied().collect();
    coeffs.push(1.0);
    Ok((coeffs, cond))
}

fn one_norm(m: &DMatrix<f64>) -> f64 {
    m.column_iter().map(|c| c.iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max)
}

/// Monic orthogonal family `phi^(0..=degree)` for one input dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnivariateBasis {
    /// `coeffs[l]` has `l + 1` entries, constant term first, last entry 1.
    pub coeffs: Vec<Vec<f64>>,
    /// Raw moments `mu_0..=mu_{2*degree}`.
    pub moments: Vec<f64>,
    pub conditions: Vec<f64>,
}

impl UnivariateBasis {
    pub fn from_moments(moments: &[f64], degree: usize) -> Result<Self, OrthoError> {
        if moments.len() < 2 * degree + 1 {
            return Err(OrthoError::MissingMoments { needed: 2 * degree, got: moments.len().saturating_sub(1) });
        }
        let mut coeffs = Vec::with_capacity(degree + 1);
        let mut conditions = Vec::with_capacity(degree + 1);
        for l in 0..=degree {
            let (c, k) = monic_orthogonal_coeffs(moments, l)?;
            coeffs.push(c);
            conditions.push(k);
        }
        Ok(Self { coeffs, moments: moments[..=2 * degree].to_vec(), conditions })
    }

    pub fn degree(&self) -> usize {
        self.coeffs.len() - 1
    }

    pub fn eval(&self, l: usize, x: f64) -> f64 {
        self.coeffs[l].iter().rev().fold(0.0, |acc, c| acc * x + c)
    }

    /// `phi^(0..=degree)(x)` written into `out`.
    pub fn eval_all(&self, x: f64, out: &mut [f64]) {
        for (l, o) in out.iter_mut().enumerate().take(self.coeffs.len()) {
            *o = self.eval(l, x);
        }
    }

    /// `E[phi^(l)^2]` by expanding the square against the raw moments.
    pub fn norm_sq(&self, l: usize) -> f64 {
        let p = &self.coeffs[l];
        let mut s = 0.0;
        for (a, pa) in p.iter().enumerate() {
            for (b, pb) in p.iter().enumerate() {
                s += pa * pb * self.moments[a + b];
            }
        }
        s
    }
}

/// Build one basis per dimension from a moment table.
pub fn build_bases(table: &MomentTable, degree: usize) -> Result<Vec<UnivariateBasis>, OrthoError> {
    if table.max_order() < 2 * degree {
        return Err(OrthoError::MissingMoments { needed: 2 * degree, got: table.max_order() });
    }
    table
        .moments
        .iter()
        .zip(&table.distinct)
        .enumerate()
        .map(|(j, (m, &distinct))| {
            if distinct < degree + 1 {
                return Err(OrthoError::InsufficientDistinctValues { dim: j, distinct, degree, needed: degree + 1 });
            }
            UnivariateBasis::from_moments(m, degree)
        })
        .collect()
}

/// Sparse multi-index: `(dimension, degree)` pairs with degree > 0, sorted by dimension.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MultiIndex(pub Vec<(usize, usize)>);

impl MultiIndex {
    pub fn zero() -> Self {
        Self(Vec::new())
    }

    pub fn from_dense(alpha: &[usize]) -> Self {
        Self(alpha.iter().enumerate().filter(|(_, &a)| a > 0).map(|(j, &a)| (j, a)).collect())
    }

    pub fn to_dense(&self, dims: usize) -> Vec<usize> {
        let mut v = vec![0; dims];
        for &(j, a) in &self.0 {
            v[j] = a;
        }
        v
    }

    pub fn is_zero(&self) -> bool {
        self.0.is_empty()
    }

    pub fn total_degree(&self) -> usize {
        self.0.iter().map(|t| t.1).sum()
    }

    pub fn interaction(&self) -> usize {
        self.0.len()
    }

    pub fn q_norm(&self, q: f64) -> f64 {
        self.0.iter().map(|&(_, a)| (a as f64).powf(q)).sum::<f64>().powf(1.0 / q)
    }

    pub fn max_dim(&self) -> Option<usize> {
        self.0.last().map(|t| t.0)
    }

    /// Graded order: total degree ascending, then lexicographically descending.
    pub fn graded_cmp(&self, other: &Self) -> Ordering {
        self.total_degree().cmp(&other.total_degree()).then_with(|| {
            let (a, b) = (&self.0, &other.0);
            let (mut i, mut j) = (0, 0);
            loop {
                match (a.get(i), b.get(j)) {
                    (None, None) => return Ordering::Equal,
                    (Some(_), None) => return Ordering::Less,
                    (None, Some(_)) => return Ordering::Greater,
                    (Some(&(da, xa)), Some(&(db, xb))) => {
                        if da < db {
                            return Ordering::Less;
                        }
                        if db < da {
                            return Ordering::Greater;
                        }
                        if xa != xb {
                            return xb.cmp(&xa);
                        }
                        i += 1;
                        j += 1;
                    }
                }
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiIndexSet {
    pub dims: usize,
    pub degree: usize,
    pub q_norm: f64,
    pub max_interaction: usize,
    pub indices: Vec<MultiIndex>,
}

pub const DEFAULT_CANDIDATE_CAP: usize = 200_000;

impl MultiIndexSet {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

pub fn build_multi_index_set(
    dims: usize,
    degree: usize,
    q_norm: f64,
    max_interaction: usize,
) -> Result<MultiIndexSet, OrthoError> {
    build_multi_index_set_capped(dims, degree, q_norm, max_interaction, DEFAULT_CANDIDATE_CAP)
}

pub fn build_multi_index_set_capped(
    dims: usize,
    degree: usize,
    q_norm: f64,
    max_interaction: usize,
    cap: usize,
) -> Result<MultiIndexSet, OrthoError> {
    if dims == 0 {
        return Err(OrthoError::InvalidParameters("need at least one dimension".into()));
    }
    if degree == 0 {
        return Err(OrthoError::InvalidParameters("degree must be at least 1".into()));
    }
    if !(q_norm > 0.0 && q_norm <= 1.0) {
        return Err(OrthoError::InvalidParameters(format!("q-norm {q_norm} outside (0, 1]")));
    }
    if max_interaction == 0 {
        return Err(OrthoError::InvalidParameters("max interaction must be at least 1".into()));
    }
    let budget = (degree as f64 + 1e-10).powf(q_norm);
    let explode =
        || OrthoError::CandidateExplosion { cap, dims, degree, q_norm, max_interaction };

    let mut out = vec![MultiIndex::zero()];
    let mut stack: Vec<(usize, usize)> = Vec::new();

    #[allow(clippy::too_many_arguments)]
    fn walk(
        start: usize,
        used: f64,
        dims: usize,
        degree: usize,
        q: f64,
        r: usize,
        budget: f64,
        cap: usize,
        stack: &mut Vec<(usize, usize)>,
        out: &mut Vec<MultiIndex>,
    ) -> bool {
        for d in start..dims {
            for a in 1..=degree {
                let cost = used + (a as f64).powf(q);
                if cost > budget {
                    break;
                }
                stack.push((d, a));
                out.push(MultiIndex(stack.clone()));
                if out.len() > cap {
                    return false;
                }
                if stack.len() < r && !walk(d + 1, cost, dims, degree, q, r, budget, cap, stack, out) {
                    return false;
                }
                stack.pop();
            }
        }
        true
    }

    if !walk(0, 0.0, dims, degree, q_norm, max_interaction, budget, cap, &mut stack, &mut out) {
        return Err(explode());
    }
    out.sort_by(|a, b| a.graded_cmp(b));
    Ok(MultiIndexSet { dims, degree, q_norm, max_interaction, indices: out })
}

/// `Phi_i(xi)` for each index in `indices`.
pub fn eval_terms(bases: &[UnivariateBasis], indices: &[MultiIndex], xi: &[f64]) -> Result<Vec<f64>, OrthoError> {
    if xi.len() != bases.len() {
        return Err(OrthoError::DimensionMismatch { expected: bases.len(), got: xi.len() });
    }
    let width = bases.iter().map(|b| b.degree() + 1).max().unwrap_or(1);
    let mut table = vec![0.0; bases.len() * width];
    for (j, b) in bases.iter().enumerate() {
        b.eval_all(xi[j], &mut table[j * width..j * width + b.degree() + 1]);
    }
    indices
        .iter()
        .map(|idx| {
            let mut v = 1.0;
            for &(j, a) in &idx.0 {
                if j >= bases.len() || a > bases[j].degree() {
                    return Err(OrthoError::DimensionMismatch { expected: bases.len(), got: j + 1 });
                }
                v *= table[j * width + a];
            }
            Ok(v)
        })
        .collect()
}

pub fn eval_basis_row(bases: &[UnivariateBasis], set: &MultiIndexSet, xi: &[f64]) -> Result<Vec<f64>, OrthoError> {
    eval_terms(bases, &set.indices, xi)
}

/// `E[Phi_i^2]` as the product of univariate squared norms.
pub fn basis_norms(bases: &[UnivariateBasis], indices: &[MultiIndex]) -> Result<Vec<f64>, OrthoError> {
    indices
        .iter()
        .enumerate()
        .map(|(i, idx)| {
            let mut v = 1.0;
            for &(j, a) in &idx.0 {
                if j >= bases.len() || a > bases[j].degree() {
                    return Err(OrthoError::DimensionMismatch { expected: bases.len(), got: j + 1 });
                }
                v *= bases[j].norm_sq(a);
            }
            if v > 0.0 && v.is_finite() {
                Ok(v)
            } else {
                Err(OrthoError::NonPositiveNorm { index: i, value: v })
            }
        })
        .collect()
}
