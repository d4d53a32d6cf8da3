//! Orthogonal matching pursuit with leave-one-out model selection.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::orthopoly::{
    basis_norms, build_bases, build_multi_index_set_capped, eval_terms, MultiIndex, OrthoError, UnivariateBasis,
    DEFAULT_CANDIDATE_CAP,
};
use crate::transforms::MomentTable;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FitError {
    #[error("invalid design: {0}")]
    InvalidDesign(String),
    #[error("invalid fit configuration: {0}")]
    InvalidConfig(String),
    #[error("row {row} has leverage 1; leave-one-out error undefined")]
    LeverageOne { row: usize },
    #[error("active columns are rank deficient")]
    RankDeficientActiveSet,
    #[error("no degree could be fitted: {0}")]
    AllDegreesFailed(String),
    #[error(transparent)]
    Ortho(#[from] OrthoError),
}

/// Training design: `columns[k][i]` is basis `k` evaluated at row `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct RegressionDesign {
    pub columns: Vec<Vec<f64>>,
    pub response: Vec<f64>,
    pub indices: Vec<MultiIndex>,
}

impl RegressionDesign {
    pub fn new(columns: Vec<Vec<f64>>, response: Vec<f64>, indices: Vec<MultiIndex>) -> Result<Self, FitError> {
        let n = response.len();
        if n < 2 {
            return Err(FitError::InvalidDesign(format!("need at least 2 rows, got {n}")));
        }
        if columns.is_empty() || columns.len() != indices.len() {
            return Err(FitError::InvalidDesign(format!(
                "{} columns for {} indices",
                columns.len(),
                indices.len()
            )));
        }
        if let Some(k) = columns.iter().position(|c| c.len() != n) {
            return Err(FitError::InvalidDesign(format!("column {k} has {} rows, expected {n}", columns[k].len())));
        }
        if response.iter().any(|v| !v.is_finite()) || columns.iter().flatten().any(|v| !v.is_finite()) {
            return Err(FitError::InvalidDesign("non-finite value".into()));
        }
        Ok(Self { columns, response, indices })
    }

    /// Evaluate every candidate index at every row of `xi`.
    pub fn from_bases(
        bases: &[UnivariateBasis],
        indices: Vec<MultiIndex>,
        xi: &[Vec<f64>],
        response: Vec<f64>,
    ) -> Result<Self, FitError> {
        if xi.len() != response.len() {
            return Err(FitError::InvalidDesign(format!("{} inputs for {} outputs", xi.len(), response.len())));
        }
        let rows: Vec<Vec<f64>> = xi.iter().map(|x| eval_terms(bases, &indices, x)).collect::<Result<_, _>>()?;
        let columns = (0..indices.len()).map(|k| rows.iter().map(|r| r[k]).collect()).collect();
        Self::new(columns, response, indices)
    }

    pub fn rows(&self) -> usize {
        self.response.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparseExpansion {
    pub indices: Vec<MultiIndex>,
    pub coefficients: Vec<f64>,
    /// Leave-one-out error relative to the response variance.
    pub loo: f64,
    /// Training mean squared residual relative to the response variance.
    pub training_error: f64,
    pub degree: usize,
    pub loo_trace: Vec<f64>,
    pub residual_trace: Vec<f64>,
    pub stop_reason: StopReason,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    TargetReached,
    MaxTerms,
    NoImprovement,
    Interpolating,
    Exhausted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    pub degree_min: usize,
    pub degree_max: usize,
    pub q_norm: f64,
    pub max_interaction: usize,
    pub loo_target: f64,
    pub max_terms: Option<usize>,
    /// Stop after this many iterations without a new LOO minimum.
    pub patience: usize,
    pub candidate_cap: usize,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            degree_min: 1,
            degree_max: 3,
            q_norm: 0.75,
            max_interaction: 2,
            loo_target: 1e-14,
            max_terms: None,
            patience: 10,
            candidate_cap: DEFAULT_CANDIDATE_CAP,
        }
    }
}

pub const MAX_DEGREE: usize = 5;

impl FitConfig {
    pub fn validate(&self) -> Result<(), FitError> {
        if self.degree_min == 0 || self.degree_min > self.degree_max {
            return Err(FitError::InvalidConfig(format!(
                "degree range {}..={} is empty or starts at 0",
                self.degree_min, self.degree_max
            )));
        }
        if self.degree_max > MAX_DEGREE {
            return Err(FitError::InvalidConfig(format!("degree {} exceeds cap {MAX_DEGREE}", self.degree_max)));
        }
        if !(self.q_norm > 0.0 && self.q_norm <= 1.0) {
            return Err(FitError::InvalidConfig(format!("q-norm {} outside (0, 1]", self.q_norm)));
        }
        if self.max_interaction == 0 {
            return Err(FitError::InvalidConfig("max interaction must be at least 1".into()));
        }
        if !(self.loo_target >= 0.0) {
            return Err(FitError::InvalidConfig("loo target must be non-negative".into()));
        }
        Ok(())
    }

    pub fn default_max_terms(rows: usize) -> usize {
        (rows / 2).clamp(1, 200)
    }
}

fn population_variance(y: &[f64]) -> f64 {
    let n = y.len() as f64;
    let mean = y.iter().sum::<f64>() / n;
    y.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n
}

fn normalise(mse: f64, var: f64) -> f64 {
    if var > 0.0 {
        mse / var
    } else {
        mse
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Orthonormal basis for the span of `columns` by modified Gram-Schmidt
/// with one reorthogonalisation pass.
fn orthonormalise(columns: &[&[f64]]) -> Result<Vec<Vec<f64>>, FitError> {
    let mut q: Vec<Vec<f64>> = Vec::with_capacity(columns.len());
    for col in columns {
        let v = project_out(&q, col);
        let norm = dot(&v, &v).sqrt();
        let scale = dot(col, col).sqrt();
        if norm <= 1e-10 * scale.max(f64::MIN_POSITIVE) {
            return Err(FitError::RankDeficientActiveSet);
        }
        q.push(v.into_iter().map(|x| x / norm).collect());
    }
    Ok(q)
}

fn project_out(q: &[Vec<f64>], col: &[f64]) -> Vec<f64> {
    let mut v = col.to_vec();
    for _ in 0..2 {
        for qk in q {
            let c = dot(qk, &v);
            for (vi, qi) in v.iter_mut().zip(qk) {
                *vi -= c * qi;
            }
        }
    }
    v
}

fn leverage_loo(q: &[Vec<f64>], residual: &[f64]) -> Result<f64, FitError> {
    let n = residual.len();
    let mut sum = 0.0;
    for i in 0..n {
        let h: f64 = q.iter().map(|c| c[i] * c[i]).sum();
        if h >= 1.0 - 1e-12 {
            return Err(FitError::LeverageOne { row: i });
        }
        let e = residual[i] / (1.0 - h);
        sum += e * e;
    }
    Ok(sum / n as f64)
}

/// Unnormalised leave-one-out mean squared error of the least-squares fit of
/// `y` on `columns`, via hat-matrix leverages.
pub fn loo_mse(columns: &[Vec<f64>], y: &[f64]) -> Result<f64, FitError> {
    if columns.is_empty() || columns.len() >= y.len() {
        return Err(FitError::InvalidDesign(format!("{} columns for {} rows", columns.len(), y.len())));
    }
    let refs: Vec<&[f64]> = columns.iter().map(|c| c.as_slice()).collect();
    let q = orthonormalise(&refs)?;
    let mut r = y.to_vec();
    for qk in &q {
        let c = dot(qk, &r);
        for (ri, qi) in r.iter_mut().zip(qk) {
            *ri -= c * qi;
        }
    }
    leverage_loo(&q, &r)
}

/// Leave-one-out error normalised by the population variance of `y`.
pub fn loo_error(columns: &[Vec<f64>], y: &[f64]) -> Result<f64, FitError> {
    Ok(normalise(loo_mse(columns, y)?, population_variance(y)))
}

/// Least-squares coefficients of `y` on `columns`.
pub fn least_squares(columns: &[Vec<f64>], y: &[f64]) -> Result<Vec<f64>, FitError> {
    let refs: Vec<&[f64]> = columns.iter().map(|c| c.as_slice()).collect();
    let q = orthonormalise(&refs)?;
    let p = columns.len();
    // R = Q^T A, upper triangular
    let mut r = vec![vec![0.0; p]; p];
    for i in 0..p {
        for j in i..p {
            r[i][j] = dot(&q[i], &columns[j]);
        }
    }
    let qty: Vec<f64> = q.iter().map(|qk| dot(qk, y)).collect();
    Ok(back_substitute(&r, &qty))
}

fn back_substitute(r: &[Vec<f64>], b: &[f64]) -> Vec<f64> {
    let p = b.len();
    let mut x = vec![0.0; p];
    for i in (0..p).rev() {
        let s: f64 = (i + 1..p).map(|j| r[i][j] * x[j]).sum();
        x[i] = (b[i] - s) / r[i][i];
    }
    x
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OmpOptions {
    pub max_terms: usize,
    pub loo_target: f64,
    pub patience: usize,
}

/// Greedy forward selection with a full least-squares refit per step.
/// Returns the iteration with the lowest LOO error.
pub fn omp_fit(design: &RegressionDesign, opts: &OmpOptions) -> Result<SparseExpansion, FitError> {
    let n = design.rows();
    let k = design.columns.len();
    let max_terms = opts.max_terms.min(n - 1).min(k);
    if max_terms == 0 {
        return Err(FitError::InvalidDesign("no terms can be fitted".into()));
    }
    let y = &design.response;
    let var = population_variance(y);
    let norms: Vec<f64> = design.columns.iter().map(|c| dot(c, c).sqrt()).collect();
    let mut usable: Vec<bool> = norms.iter().map(|&v| v > 0.0).collect();

    let mut q: Vec<Vec<f64>> = Vec::new();
    let mut r_rows: Vec<Vec<f64>> = Vec::new();
    let mut qty: Vec<f64> = Vec::new();
    let mut active: Vec<usize> = Vec::new();
    let mut residual = y.clone();

    let mut best: Option<(f64, Vec<usize>, Vec<f64>, f64)> = None;
    let mut loo_trace = Vec::new();
    let mut residual_trace = Vec::new();
    let mut since_best = 0;
    let mut stop = StopReason::Exhausted;

    while active.len() < max_terms {
        let mut pick = None;
        let mut best_score = -1.0;
        for c in 0..k {
            if !usable[c] {
                continue;
            }
            let s = dot(&design.columns[c], &residual).abs() / norms[c];
            if s > best_score {
                best_score = s;
                pick = Some(c);
            }
        }
        let Some(c) = pick else {
            stop = StopReason::Exhausted;
            break;
        };
        usable[c] = false;
        let col = &design.columns[c];
        let v = project_out(&q, col);
        let vn = dot(&v, &v).sqrt();
        if vn <= 1e-10 * norms[c] {
            log::warn!("skipping column {c}: numerically dependent on the active set");
            continue;
        }
        let qn: Vec<f64> = v.into_iter().map(|x| x / vn).collect();
        for (row, qk) in r_rows.iter_mut().zip(&q) {
            row.push(dot(qk, col));
        }
        let mut new_row = vec![0.0; active.len()];
        new_row.push(vn);
        r_rows.push(new_row);
        let proj = dot(&qn, y);
        qty.push(proj);
        let step = dot(&qn, &residual);
        for (ri, qi) in residual.iter_mut().zip(&qn) {
            *ri -= step * qi;
        }
        q.push(qn);
        active.push(c);

        let loo = match leverage_loo(&q, &residual) {
            Ok(v) => normalise(v, var),
            Err(FitError::LeverageOne { .. }) => {
                stop = StopReason::Interpolating;
                break;
            }
            Err(e) => return Err(e),
        };
        loo_trace.push(loo);
        residual_trace.push(normalise(dot(&residual, &residual) / n as f64, var));
        if best.as_ref().is_none_or(|b| loo < b.0) {
            let coeffs = back_substitute(&r_rows, &qty);
            let train = normalise(dot(&residual, &residual) / n as f64, var);
            best = Some((loo, active.clone(), coeffs, train));
            since_best = 0;
        } else {
            since_best += 1;
        }
        if loo <= opts.loo_target {
            stop = StopReason::TargetReached;
            break;
        }
        if opts.patience > 0 && since_best >= opts.patience {
            stop = StopReason::NoImprovement;
            break;
        }
        if active.len() >= max_terms {
            stop = StopReason::MaxTerms;
        }
    }

    let (loo, cols, coefficients, training_error) =
        best.ok_or_else(|| FitError::InvalidDesign("no column could be selected".into()))?;
    Ok(SparseExpansion {
        indices: cols.iter().map(|&c| design.indices[c].clone()).collect(),
        coefficients,
        loo,
        training_error,
        degree: 0,
        loo_trace,
        residual_trace,
        stop_reason: stop,
    })
}

/// Result of the degree-adaptive fit.
#[derive(Debug, Clone, PartialEq)]
pub struct AdaptiveFit {
    pub degree: usize,
    pub bases: Vec<UnivariateBasis>,
    pub expansion: SparseExpansion,
    pub norms: Vec<f64>,
    pub candidates: usize,
    /// `(degree, loo)` for every degree that produced a fit.
    pub loo_by_degree: Vec<(usize, f64)>,
}

fn fit_degree(
    xi: &[Vec<f64>],
    y: &[f64],
    moments: &MomentTable,
    cfg: &FitConfig,
    degree: usize,
) -> Result<AdaptiveFit, FitError> {
    let bases = build_bases(moments, degree)?;
    let set = build_multi_index_set_capped(moments.dims(), degree, cfg.q_norm, cfg.max_interaction, cfg.candidate_cap)?;
    let candidates = set.len();
    let design = RegressionDesign::from_bases(&bases, set.indices, xi, y.to_vec())?;
    let opts = OmpOptions {
        max_terms: cfg.max_terms.unwrap_or_else(|| FitConfig::default_max_terms(y.len())),
        loo_target: cfg.loo_target,
        patience: cfg.patience,
    };
    let mut expansion = omp_fit(&design, &opts)?;
    expansion.degree = degree;
    let norms = basis_norms(&bases, &expansion.indices)?;
    Ok(AdaptiveFit { degree, bases, expansion, norms, candidates, loo_by_degree: Vec::new() })
}

/// Fit each degree in the configured range and keep the lowest LOO error.
/// `moments` must cover order `2 * degree_max` in every input dimension.
pub fn adaptive_fit(
    xi: &[Vec<f64>],
    y: &[f64],
    moments: &MomentTable,
    cfg: &FitConfig,
) -> Result<AdaptiveFit, FitError> {
    cfg.validate()?;
    if let Some(i) = xi.iter().position(|r| r.len() != moments.dims()) {
        return Err(FitError::InvalidDesign(format!(
            "input row {i} has {} values, expected {}",
            xi[i].len(),
            moments.dims()
        )));
    }
    let degrees: Vec<usize> = (cfg.degree_min..=cfg.degree_max).collect();
    let results: Vec<Result<AdaptiveFit, FitError>> =
        degrees.par_iter().map(|&d| fit_degree(xi, y, moments, cfg, d)).collect();

    let mut best: Option<AdaptiveFit> = None;
    let mut trace = Vec::new();
    let mut failures = Vec::new();
    for (d, res) in degrees.iter().zip(results) {
        match res {
            Ok(fit) => {
                trace.push((*d, fit.expansion.loo));
                // once a lower degree meets the target, higher degrees cannot displace it
                let settled = best.as_ref().is_some_and(|b| b.expansion.loo <= cfg.loo_target);
                let better = best.as_ref().is_none_or(|b| fit.expansion.loo < b.expansion.loo);
                if better && !settled {
                    best = Some(fit);
                }
            }
            Err(e) => {
                log::warn!("degree {d} failed: {e}");
                failures.push(format!("degree {d}: {e}"));
            }
        }
    }
    let mut best = best.ok_or_else(|| FitError::AllDegreesFailed(failures.join("; ")))?;
    best.loo_by_degree = trace;
    Ok(best)
}
