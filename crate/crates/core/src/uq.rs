//! Surrogate assembly, prediction and distribution statistics.

use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::orthopoly::{eval_terms, OrthoError, UnivariateBasis};
use crate::sparse_fit::{adaptive_fit, FitConfig, FitError, SparseExpansion};
use crate::transforms::{fit_whitener, MomentTable, TransformError, Whitener};

#[derive(Debug, Error)]
pub enum UqError {
    #[error("requested {requested} training rows but only {available} are available")]
    InsufficientData { requested: usize, available: usize },
    #[error("need at least 2 values, got {0}")]
    TooFewValues(usize),
    #[error("value {index} is not finite")]
    NonFinite { index: usize },
    #[error("baseline {0} is zero")]
    ZeroBaseline(&'static str),
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error("report check failed: {0}")]
    ReportInvariant(String),
    #[error(transparent)]
    Transform(#[from] TransformError),
    #[error(transparent)]
    Fit(#[from] FitError),
    #[error(transparent)]
    Ortho(#[from] OrthoError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Uniform without-replacement split of `available` rows; both parts ascending.
pub fn sample_training_design(available: usize, train: usize, seed: u64) -> Result<(Vec<usize>, Vec<usize>), UqError> {
    if train > available {
        return Err(UqError::InsufficientData { requested: train, available });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = rand::seq::index::sample(&mut rng, available, train).into_vec();
    picked.sort_unstable();
    let mut mask = vec![false; available];
    for &i in &picked {
        mask[i] = true;
    }
    let holdout = (0..available).filter(|&i| !mask[i]).collect();
    Ok((picked, holdout))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelProvenance {
    pub seed: u64,
    pub training_size: usize,
    pub moment_rows: usize,
    pub variance_keep: f64,
    pub candidates: usize,
    pub loo_by_degree: Vec<(usize, f64)>,
    pub tool_version: String,
    /// Invocation details when fitted from the command line.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub run: Option<serde_json::Value>,
}

/// Self-contained surrogate: whitening map, univariate bases, sparse expansion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurrogateModel {
    pub whitener: Whitener,
    pub bases: Vec<UnivariateBasis>,
    pub expansion: SparseExpansion,
    pub norms: Vec<f64>,
    pub config: FitConfig,
    pub provenance: ModelProvenance,
}

impl SurrogateModel {
    /// Whiten `inputs`, build moments from all rows, and fit on the `train` subset.
    pub fn fit(
        inputs: &[Vec<f64>],
        train: &[usize],
        outputs: &[f64],
        config: &FitConfig,
        variance_keep: f64,
        seed: u64,
    ) -> Result<Self, UqError> {
        if train.len() != outputs.len() {
            return Err(UqError::InvalidModel(format!("{} training rows for {} outputs", train.len(), outputs.len())));
        }
        if let Some(i) = outputs.iter().position(|v| !v.is_finite()) {
            return Err(UqError::NonFinite { index: i });
        }
        config.validate()?;
        let whitener = fit_whitener(inputs, variance_keep)?;
        let xi_all = whitener.transform_all(inputs)?;
        let moments = MomentTable::from_rows(&xi_all, 2 * config.degree_max)?;
        let xi_train: Vec<Vec<f64>> = train.iter().map(|&i| xi_all[i].clone()).collect();
        let fit = adaptive_fit(&xi_train, outputs, &moments, config)?;
        let model = Self {
            whitener,
            bases: fit.bases,
            expansion: fit.expansion,
            norms: fit.norms,
            config: config.clone(),
            provenance: ModelProvenance {
                seed,
                training_size: train.len(),
                moment_rows: inputs.len(),
                variance_keep,
                candidates: fit.candidates,
                loo_by_degree: fit.loo_by_degree,
                tool_version: env!("CARGO_PKG_VERSION").to_string(),
                run: None,
            },
        };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<(), UqError> {
        let m = self.whitener.output_dim();
        if self.bases.len() != m {
            return Err(UqError::InvalidModel(format!("{} bases for {m} whitened inputs", self.bases.len())));
        }
        let k = self.expansion.indices.len();
        if self.expansion.coefficients.len() != k || self.norms.len() != k {
            return Err(UqError::InvalidModel(format!(
                "{k} terms with {} coefficients and {} norms",
                self.expansion.coefficients.len(),
                self.norms.len()
            )));
        }
        if self.norms.iter().any(|v| !(*v > 0.0)) {
            return Err(UqError::InvalidModel("basis norms must be positive".into()));
        }
        if self.expansion.coefficients.iter().any(|v| !v.is_finite()) {
            return Err(UqError::InvalidModel("non-finite coefficient".into()));
        }
        for idx in &self.expansion.indices {
            for &(j, a) in &idx.0 {
                if j >= m || a > self.bases[j].degree() {
                    return Err(UqError::InvalidModel(format!("term references dimension {j} degree {a}")));
                }
            }
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.whitener.input_dim()
    }

    pub fn predict_one(&self, x: &[f64]) -> Result<f64, UqError> {
        let xi = self.whitener.transform(x)?;
        let phi = eval_terms(&self.bases, &self.expansion.indices, &xi)?;
        Ok(phi.iter().zip(&self.expansion.coefficients).map(|(p, c)| p * c).sum())
    }

    /// Evaluate every row; output order matches input order.
    pub fn predict(&self, rows: &[Vec<f64>]) -> Result<Vec<f64>, UqError> {
        rows.par_iter().map(|r| self.predict_one(r)).collect()
    }

    /// `(mean, variance)` from the coefficients and basis norms.
    pub fn analytic_moments(&self) -> (f64, f64) {
        let mut mean = 0.0;
        let mut var = 0.0;
        for ((idx, c), n) in self.expansion.indices.iter().zip(&self.expansion.coefficients).zip(&self.norms) {
            if idx.is_zero() {
                mean += c;
            } else {
                var += c * c * n;
            }
        }
        (mean, var)
    }
}

fn check_values(values: &[f64]) -> Result<(), UqError> {
    if values.len() < 2 {
        return Err(UqError::TooFewValues(values.len()));
    }
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(UqError::NonFinite { index: i });
    }
    Ok(())
}

/// Sample mean and standard deviation (divisor `n - 1`).
pub fn empirical_stats(values: &[f64]) -> Result<(f64, f64), UqError> {
    check_values(values)?;
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
    Ok((mean, (ss / (n - 1.0)).sqrt()))
}

fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let pos = p * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

pub const GRID_POINTS: usize = 512;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PdfCurve {
    pub grid: Vec<f64>,
    pub density: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CdfCurve {
    pub grid: Vec<f64>,
    pub prob: Vec<f64>,
}

/// Silverman rule-of-thumb bandwidth with a floor for constant samples.
pub fn silverman_bandwidth(values: &[f64]) -> Result<f64, UqError> {
    let (mean, sd) = empirical_stats(values)?;
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let iqr = quantile_sorted(&sorted, 0.75) - quantile_sorted(&sorted, 0.25);
    let spread = if iqr > 0.0 { sd.min(iqr / 1.34) } else { sd };
    let h = 0.9 * spread * (values.len() as f64).powf(-0.2);
    if h > 0.0 {
        Ok(h)
    } else {
        let floor = 1e-6 * mean.abs().max(1.0);
        log::warn!("degenerate sample: all values equal, bandwidth floored to {floor:e}");
        Ok(floor)
    }
}

/// Gaussian kernel density on 512 points spanning `[min - 3h, max + 3h]`.
pub fn kde_pdf(values: &[f64]) -> Result<PdfCurve, UqError> {
    let h = silverman_bandwidth(values)?;
    let (lo, hi) = values.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let grid = linspace(lo - 3.0 * h, hi + 3.0 * h, GRID_POINTS);
    let norm = 1.0 / (values.len() as f64 * h * (2.0 * std::f64::consts::PI).sqrt());
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    // kernels beyond 8.5 bandwidths contribute below 1e-15 relative
    let reach = 8.5 * h;
    let density = grid
        .par_iter()
        .map(|&g| {
            let start = sorted.partition_point(|&v| v < g - reach);
            let end = sorted.partition_point(|&v| v <= g + reach);
            sorted[start..end].iter().map(|&v| (-0.5 * ((g - v) / h).powi(2)).exp()).sum::<f64>() * norm
        })
        .collect();
    Ok(PdfCurve { grid, density })
}

fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    let step = (b - a) / (n - 1) as f64;
    (0..n).map(|i| if i == n - 1 { b } else { a + step * i as f64 }).collect()
}

/// Fraction of values `<= g` at each grid point.
pub fn empirical_cdf(values: &[f64], grid: &[f64]) -> CdfCurve {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let prob = grid.iter().map(|&g| sorted.partition_point(|&v| v <= g) as f64 / n).collect();
    CdfCurve { grid: grid.to_vec(), prob }
}

fn trapezoid(x: &[f64], y: &[f64]) -> f64 {
    x.windows(2).zip(y.windows(2)).map(|(xs, ys)| 0.5 * (xs[1] - xs[0]) * (ys[0] + ys[1])).sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MomentPair {
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UqReport {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
    pub pdf: PdfCurve,
    pub cdf: CdfCurve,
    pub wall_seconds: f64,
    /// Scenarios whose cost could not be computed (excluded from the statistics).
    #[serde(default)]
    pub failed: usize,
    /// Moments read off the expansion coefficients, for surrogate reports.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub analytic: Option<MomentPair>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<serde_json::Value>,
}

impl UqReport {
    pub fn from_values(values: &[f64], wall_seconds: f64) -> Result<Self, UqError> {
        let (mean, std) = empirical_stats(values)?;
        let pdf = kde_pdf(values)?;
        let cdf = empirical_cdf(values, &pdf.grid);
        Ok(Self { mean, std, n: values.len(), pdf, cdf, wall_seconds, failed: 0, analytic: None, provenance: None })
    }

    pub fn pdf_integral(&self) -> f64 {
        trapezoid(&self.pdf.grid, &self.pdf.density)
    }

    /// CDF nondecreasing within [0, 1], PDF non-negative with unit mass.
    pub fn check(&self) -> Result<(), UqError> {
        if !(self.std >= 0.0) {
            return Err(UqError::ReportInvariant(format!("negative std {}", self.std)));
        }
        if self.cdf.prob.windows(2).any(|w| w[1] < w[0]) {
            return Err(UqError::ReportInvariant("cdf decreases".into()));
        }
        if self.cdf.prob.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(UqError::ReportInvariant("cdf outside [0, 1]".into()));
        }
        if self.pdf.density.iter().any(|d| !(*d >= 0.0)) {
            return Err(UqError::ReportInvariant("negative density".into()));
        }
        let mass = self.pdf_integral();
        if !(0.98..=1.02).contains(&mass) {
            return Err(UqError::ReportInvariant(format!("pdf integrates to {mass}")));
        }
        Ok(())
    }

    /// Step-function CDF value at `x` from the stored curve.
    pub fn cdf_at(&self, x: f64) -> f64 {
        let i = self.cdf.grid.partition_point(|&g| g <= x);
        if i == 0 {
            0.0
        } else {
            self.cdf.prob[i - 1]
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub mean_error_pct: f64,
    pub std_error_pct: f64,
    pub ks_distance: f64,
}

pub fn compare_reports(baseline: &UqReport, candidate: &UqReport) -> Result<Comparison, UqError> {
    compare_moments(baseline.mean, baseline.std, candidate.mean, candidate.std).map(|(m, s)| {
        let ks = baseline
            .cdf
            .grid
            .iter()
            .chain(&candidate.cdf.grid)
            .map(|&x| (baseline.cdf_at(x) - candidate.cdf_at(x)).abs())
            .fold(0.0, f64::max);
        Comparison { mean_error_pct: m, std_error_pct: s, ks_distance: ks }
    })
}

/// Relative errors in percent: `100 |dmu| / mu_base`, `100 |dsigma| / sigma_base`.
pub fn compare_moments(base_mean: f64, base_std: f64, mean: f64, std: f64) -> Result<(f64, f64), UqError> {
    if base_mean == 0.0 {
        return Err(UqError::ZeroBaseline("mean"));
    }
    if base_std == 0.0 {
        return Err(UqError::ZeroBaseline("std"));
    }
    Ok((100.0 * (mean - base_mean).abs() / base_mean.abs(), 100.0 * (std - base_std).abs() / base_std))
}

/// Two-column CSV with a header row.
pub fn write_curve_csv<W: Write>(out: W, header: [&str; 2], x: &[f64], y: &[f64]) -> Result<(), UqError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(header).map_err(csv_io)?;
    for (a, b) in x.iter().zip(y) {
        w.write_record([format!("{a:.10e}"), format!("{b:.10e}")]).map_err(csv_io)?;
    }
    w.flush()?;
    Ok(())
}

fn csv_io(e: csv::Error) -> UqError {
    UqError::Io(std::io::Error::other(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::orthopoly::MultiIndex;
    use crate::sparse_fit::StopReason;
    use rand_distr::{Distribution, StandardNormal};

    fn normal_draws(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| StandardNormal.sample(&mut rng)).collect()
    }

    fn constant_model(c: f64) -> SurrogateModel {
        let rows = vec![vec![0.0], vec![1.0], vec![2.0]];
        let whitener = fit_whitener(&rows, 1.0).unwrap();
        let xi = whitener.transform_all(&rows).unwrap();
        let t = MomentTable::from_rows(&xi, 2).unwrap();
        let bases = crate::orthopoly::build_bases(&t, 1).unwrap();
        SurrogateModel {
            whitener,
            bases,
            expansion: SparseExpansion {
                indices: vec![MultiIndex::zero()],
                coefficients: vec![c],
                loo: 0.0,
                training_error: 0.0,
                degree: 1,
                loo_trace: vec![0.0],
                residual_trace: vec![0.0],
                stop_reason: StopReason::TargetReached,
            },
            norms: vec![1.0],
            config: FitConfig::default(),
            provenance: ModelProvenance {
                seed: 0,
                training_size: 3,
                moment_rows: 3,
                variance_keep: 1.0,
                candidates: 2,
                loo_by_degree: vec![],
                tool_version: "test".into(),
                run: None,
            },
        }
    }

    #[test]
    fn training_split() {
        let (t, h) = sample_training_design(10, 10, 3).unwrap();
        assert_eq!(t, (0..10).collect::<Vec<_>>());
        assert!(h.is_empty());
        let a = sample_training_design(100, 20, 5).unwrap();
        let b = sample_training_design(100, 20, 5).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.0.len() + a.1.len(), 100);
        assert!(matches!(sample_training_design(5, 6, 0), Err(UqError::InsufficientData { .. })));
    }

    #[test]
    fn constant_model_predicts_constant() {
        let m = constant_model(5.0);
        assert_eq!(m.predict(&[vec![3.0], vec![-7.0]]).unwrap(), vec![5.0, 5.0]);
        let m = constant_model(7.0);
        assert_eq!(m.analytic_moments(), (7.0, 0.0));
        assert!(m.predict(&[vec![1.0, 2.0]]).is_err());
    }

    #[test]
    fn cdf_example() {
        let c = empirical_cdf(&[1.0, 2.0, 3.0], &[0.5, 2.0, 3.5]);
        assert_eq!(c.prob[0], 0.0);
        assert!((c.prob[1] - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(c.prob[2], 1.0);
    }

    #[test]
    fn kde_matches_normal_density() {
        let xs = normal_draws(100_000, 17);
        let pdf = kde_pdf(&xs).unwrap();
        let i = pdf.grid.iter().enumerate().min_by(|a, b| a.1.abs().total_cmp(&b.1.abs())).unwrap().0;
        // interpolate to zero
        let (x0, x1) = (pdf.grid[i], pdf.grid[i + 1]);
        let d = pdf.density[i] + (pdf.density[i + 1] - pdf.density[i]) * (0.0 - x0) / (x1 - x0);
        assert!((d - 0.398_942_280_4).abs() < 0.02, "density at 0 = {d}");
        assert_eq!(pdf.grid.len(), GRID_POINTS);
    }

    #[test]
    fn report_checks_and_self_comparison() {
        let xs: Vec<f64> = normal_draws(500, 2).iter().map(|v| 1000.0 + 50.0 * v).collect();
        let r = UqReport::from_values(&xs, 0.0).unwrap();
        r.check().unwrap();
        let c = compare_reports(&r, &r).unwrap();
        assert_eq!(c, Comparison { mean_error_pct: 0.0, std_error_pct: 0.0, ks_distance: 0.0 });
    }

    #[test]
    fn degenerate_sample_gets_floor() {
        let r = UqReport::from_values(&[4.0; 10], 0.0).unwrap();
        assert_eq!(r.std, 0.0);
        r.check().unwrap();
    }

    #[test]
    fn std_error_examples() {
        let (_, s) = compare_moments(1.0, 4.7069e4, 1.0, 4.7159e4).unwrap();
        assert!((s - 0.1912).abs() < 1e-3, "{s}");
        let (_, s) = compare_moments(1.0, 4.7069e4, 1.0, 5.0379e4).unwrap();
        assert!((s - 7.032).abs() < 1e-2, "{s}");
        assert!(matches!(compare_moments(0.0, 1.0, 1.0, 1.0), Err(UqError::ZeroBaseline("mean"))));
    }

    #[test]
    fn too_few_values() {
        assert!(matches!(empirical_stats(&[1.0]), Err(UqError::TooFewValues(1))));
        assert!(matches!(empirical_stats(&[1.0, f64::NAN]), Err(UqError::NonFinite { index: 1 })));
    }

    #[test]
    fn curve_csv() {
        let mut buf = Vec::new();
        write_curve_csv(&mut buf, ["x", "density"], &[0.0, 1.0], &[0.5, 0.25]).unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert!(s.starts_with("x,density\n"));
        assert_eq!(s.lines().count(), 3);
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(64))]
        #[test]
        fn report_invariants_hold(xs in proptest::collection::vec(-1e3f64..1e3, 2..200)) {
            let r = UqReport::from_values(&xs, 0.0).unwrap();
            proptest::prop_assert!(r.check().is_ok(), "{:?}", r.check());
            proptest::prop_assert_eq!(compare_reports(&r, &r).map(|c| c.ks_distance).unwrap_or(0.0), 0.0);
        }
    }
}
