//! Input decorrelation and raw moment estimation.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TransformError {
    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("sample contains a non-finite value at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },
    #[error("degenerate sample: all rows identical")]
    DegenerateSample,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("empty sample")]
    EmptySample,
}

/// PCA whitening map `xi = Lambda^{-1/2} V^T (x - mean)` restricted to the
/// leading `retained` components.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Whitener {
    pub mean: Vec<f64>,
    /// `eigenvectors[k]` is the k-th principal direction (length P).
    pub eigenvectors: Vec<Vec<f64>>,
    /// Sample covariance eigenvalues, descending.
    pub eigenvalues: Vec<f64>,
    pub retained: usize,
    pub retained_variance: f64,
}

const EIGEN_FLOOR: f64 = 1e-12;

pub fn fit_whitener(samples: &[Vec<f64>], variance_keep: f64) -> Result<Whitener, TransformError> {
    let n = samples.len();
    if n < 2 {
        return Err(TransformError::TooFewSamples { needed: 2, got: n });
    }
    let p = samples[0].len();
    for (i, row) in samples.iter().enumerate() {
        if row.len() != p {
            return Err(TransformError::DimensionMismatch { expected: p, got: row.len() });
        }
        if let Some(j) = row.iter().position(|v| !v.is_finite()) {
            return Err(TransformError::NonFinite { row: i, col: j });
        }
    }
    let mut mean = vec![0.0; p];
    for row in samples {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= n as f64;
    }
    let mut cov = DMatrix::<f64>::zeros(p, p);
    let mut centered = vec![0.0; p];
    for row in samples {
        for j in 0..p {
            centered[j] = row[j] - mean[j];
        }
        for a in 0..p {
            for b in a..p {
                cov[(a, b)] += centered[a] * centered[b];
            }
        }
    }
    for a in 0..p {
        for b in a..p {
            let v = cov[(a, b)] / (n as f64 - 1.0);
            cov[(a, b)] = v;
            cov[(b, a)] = v;
        }
    }
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..p).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let eigenvalues: Vec<f64> = order.iter().map(|&k| eig.eigenvalues[k].max(0.0)).collect();
    let top = eigenvalues.first().copied().unwrap_or(0.0);
    if top <= 0.0 {
        return Err(TransformError::DegenerateSample);
    }
    let eigenvectors: Vec<Vec<f64>> = order
        .iter()
        .map(|&k| {
            let mut v: Vec<f64> = eig.eigenvectors.column(k).iter().copied().collect();
            // Sign convention: largest-magnitude entry positive.
            let lead = v
                .iter()
                .enumerate()
                .fold((0, 0.0f64), |acc, (i, x)| if x.abs() > acc.1.abs() + 1e-14 { (i, *x) } else { acc })
                .0;
            if v[lead] < 0.0 {
                v.iter_mut().for_each(|x| *x = -*x);
            }
            v
        })
        .collect();

    let total: f64 = eigenvalues.iter().sum();
    let usable = eigenvalues.iter().take_while(|&&l| l > EIGEN_FLOOR * top).count();
    let mut retained = usable;
    let mut acc = 0.0;
    for (k, l) in eigenvalues.iter().take(usable).enumerate() {
        acc += l;
        if acc / total >= variance_keep - 1e-12 {
            retained = k + 1;
            break;
        }
    }
    let retained_variance = eigenvalues[..retained].iter().sum::<f64>() / total;
    Ok(Whitener { mean, eigenvectors, eigenvalues, retained, retained_variance })
}

impl Whitener {
    pub fn input_dim(&self) -> usize {
        self.mean.len()
    }

    pub fn output_dim(&self) -> usize {
        self.retained
    }

    pub fn transform(&self, x: &[f64]) -> Result<Vec<f64>, TransformError> {
        if x.len() != self.mean.len() {
            return Err(TransformError::DimensionMismatch { expected: self.mean.len(), got: x.len() });
        }
        Ok((0..self.retained)
            .map(|k| {
                let v = &self.eigenvectors[k];
                let proj: f64 = v.iter().zip(x).zip(&self.mean).map(|((a, xi), m)| a * (xi - m)).sum();
                proj / self.eigenvalues[k].sqrt()
            })
            .collect())
    }

    pub fn inverse_transform(&self, xi: &[f64]) -> Result<Vec<f64>, TransformError> {
        if xi.len() != self.retained {
            return Err(TransformError::DimensionMismatch { expected: self.retained, got: xi.len() });
        }
        let mut x = self.mean.clone();
        for (k, &z) in xi.iter().enumerate() {
            let s = self.eigenvalues[k].sqrt() * z;
            for (xj, vj) in x.iter_mut().zip(&self.eigenvectors[k]) {
                *xj += vj * s;
            }
        }
        Ok(x)
    }

    pub fn transform_all(&self, rows: &[Vec<f64>]) -> Result<Vec<Vec<f64>>, TransformError> {
        rows.iter().map(|r| self.transform(r)).collect()
    }
}

/// `mu_k = mean(x^k)` for `k = 0..=max_order`.
pub fn raw_moments(sample: &[f64], max_order: usize) -> Result<Vec<f64>, TransformError> {
    if sample.is_empty() {
        return Err(TransformError::EmptySample);
    }
    let mut sums = vec![0.0; max_order + 1];
    for &x in sample {
        let mut p = 1.0;
        for s in sums.iter_mut() {
            *s += p;
            p *= x;
        }
    }
    let n = sample.len() as f64;
    Ok(sums.into_iter().map(|s| s / n).collect())
}

/// Per-dimension raw moments of a (whitened) sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentTable {
    /// `moments[j][k]` for dimension `j` and order `k`.
    pub moments: Vec<Vec<f64>>,
    pub samples: usize,
    pub distinct: Vec<usize>,
}

impl MomentTable {
    pub fn from_rows(rows: &[Vec<f64>], max_order: usize) -> Result<Self, TransformError> {
        if rows.is_empty() {
            return Err(TransformError::EmptySample);
        }
        let dim = rows[0].len();
        let mut moments = Vec::with_capacity(dim);
        let mut distinct = Vec::with_capacity(dim);
        for j in 0..dim {
            let mut column: Vec<f64> = rows.iter().map(|r| r[j]).collect();
            moments.push(raw_moments(&column, max_order)?);
            column.sort_by(f64::total_cmp);
            column.dedup();
            distinct.push(column.len());
        }
        Ok(Self { moments, samples: rows.len(), distinct })
    }

    pub fn dims(&self) -> usize {
        self.moments.len()
    }

    pub fn max_order(&self) -> usize {
        self.moments.first().map_or(0, |m| m.len().saturating_sub(1))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_distr::{Distribution, StandardNormal};

    fn rng(seed: u64) -> rand_chacha::ChaCha8Rng {
        rand_chacha::ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn collinear_data_keeps_one_component() {
        let rows: Vec<Vec<f64>> = (0..50).map(|i| vec![i as f64, 2.0 * i as f64]).collect();
        let w = fit_whitener(&rows, 0.99).unwrap();
        assert_eq!(w.retained, 1);
    }

    #[test]
    fn identity_covariance_sample() {
        let mut r = rng(3);
        let rows: Vec<Vec<f64>> = (0..100_000)
            .map(|_| (0..4).map(|_| StandardNormal.sample(&mut r)).collect())
            .collect();
        let w = fit_whitener(&rows, 1.0).unwrap();
        assert_eq!(w.retained, 4);
        for l in &w.eigenvalues {
            assert!((l - 1.0).abs() < 0.05, "eigenvalue {l}");
        }
    }

    #[test]
    fn round_trip_and_zero_row() {
        let mut r = rng(5);
        let rows: Vec<Vec<f64>> = (0..200)
            .map(|_| {
                let a: f64 = StandardNormal.sample(&mut r);
                let b: f64 = StandardNormal.sample(&mut r);
                let c: f64 = StandardNormal.sample(&mut r);
                vec![3.0 + a, 1.0 + a + 0.5 * b, -2.0 + b + 0.1 * c]
            })
            .collect();
        let w = fit_whitener(&rows, 1.0).unwrap();
        for row in rows.iter().take(20) {
            let back = w.inverse_transform(&w.transform(row).unwrap()).unwrap();
            for (x, y) in row.iter().zip(&back) {
                assert!((x - y).abs() < 1e-10);
            }
        }
        let z = w.transform(&[0.0, 0.0, 0.0]).unwrap();
        for k in 0..3 {
            let expect: f64 =
                -w.eigenvectors[k].iter().zip(&w.mean).map(|(v, m)| v * m).sum::<f64>() / w.eigenvalues[k].sqrt();
            assert!((z[k] - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn whitened_training_sample_is_standardised() {
        let mut r = rng(8);
        let rows: Vec<Vec<f64>> = (0..500)
            .map(|_| {
                let a: f64 = StandardNormal.sample(&mut r);
                let b: f64 = StandardNormal.sample(&mut r);
                vec![10.0 * a, a + b, 0.2 * b * b]
            })
            .collect();
        let w = fit_whitener(&rows, 1.0).unwrap();
        let xi = w.transform_all(&rows).unwrap();
        let n = xi.len() as f64;
        for a in 0..3 {
            let mean: f64 = xi.iter().map(|r| r[a]).sum::<f64>() / n;
            assert!(mean.abs() < 1e-10);
            for b in 0..3 {
                let c: f64 = xi.iter().map(|r| r[a] * r[b]).sum::<f64>() / (n - 1.0);
                let target = if a == b { 1.0 } else { 0.0 };
                assert!((c - target).abs() < 1e-8, "cov[{a},{b}] = {c}");
            }
        }
    }

    #[test]
    fn degenerate_and_short_samples() {
        let rows = vec![vec![1.0, 2.0]; 5];
        assert_eq!(fit_whitener(&rows, 1.0), Err(TransformError::DegenerateSample));
        assert!(matches!(fit_whitener(&rows[..1], 1.0), Err(TransformError::TooFewSamples { .. })));
        let w = fit_whitener(&[vec![0.0, 1.0], vec![1.0, 0.0]], 1.0).unwrap();
        assert!(matches!(w.transform(&[1.0]), Err(TransformError::DimensionMismatch { .. })));
    }

    #[test]
    fn moment_examples() {
        let m = raw_moments(&[-1.0, 0.0, 1.0], 2).unwrap();
        assert_eq!(m[0], 1.0);
        assert_eq!(m[1], 0.0);
        assert!((m[2] - 2.0 / 3.0).abs() < 1e-15);
        let c = raw_moments(&[1.5; 7], 4).unwrap();
        for (k, v) in c.iter().enumerate() {
            assert!((v - 1.5f64.powi(k as i32)).abs() < 1e-12);
        }
        assert_eq!(raw_moments(&[], 2), Err(TransformError::EmptySample));
    }

    #[test]
    fn gaussian_fourth_moment() {
        let mut r = rng(21);
        let xs: Vec<f64> = (0..1_000_000).map(|_| StandardNormal.sample(&mut r)).collect();
        let m = raw_moments(&xs, 4).unwrap();
        assert!((m[4] - 3.0).abs() < 0.05, "mu4 = {}", m[4]);
    }

    #[test]
    fn moment_table_counts_distinct_values() {
        let rows = vec![vec![0.0, 1.0], vec![1.0, 1.0], vec![0.0, 1.0]];
        let t = MomentTable::from_rows(&rows, 3).unwrap();
        assert_eq!(t.distinct, vec![2, 1]);
        assert_eq!(t.max_order(), 3);
        assert_eq!(t.moments[1], vec![1.0; 4]);
    }

    proptest::proptest! {
        #[test]
        fn moments_permutation_invariant_and_homogeneous(
            xs in proptest::collection::vec(-3.0f64..3.0, 1..40),
            c in -2.0f64..2.0,
        ) {
            let m = raw_moments(&xs, 5).unwrap();
            let mut rev = xs.clone();
            rev.reverse();
            let mr = raw_moments(&rev, 5).unwrap();
            let scaled: Vec<f64> = xs.iter().map(|x| c * x).collect();
            let ms = raw_moments(&scaled, 5).unwrap();
            for k in 0..=5 {
                proptest::prop_assert!((m[k] - mr[k]).abs() <= 1e-12 * (1.0 + m[k].abs()));
                let expect = c.powi(k as i32) * m[k];
                proptest::prop_assert!((ms[k] - expect).abs() <= 1e-10 * (1.0 + expect.abs()));
            }
        }
    }
}
