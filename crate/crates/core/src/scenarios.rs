//! Wind scenario matrices and a synthetic multimodal generator.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::PowerSystem;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScenarioError {
    #[error("column {column} is labelled `{found}`, expected `{expected}`")]
    Label { column: usize, expected: String, found: String },
    #[error("expected {expected} columns, got {got}")]
    Width { expected: usize, got: usize },
    #[error("row {row}, column {column} ({label}): value {value} must be finite and non-negative")]
    Value { row: usize, column: usize, label: String, value: f64 },
    #[error("row {row} has {got} values, expected {expected}")]
    Ragged { row: usize, expected: usize, got: usize },
    #[error("invalid generator settings: {0}")]
    Config(String),
}

/// `rows[i][c]` is the wind output in MW for scenario `i`, column `labels[c]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioMatrix {
    pub labels: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl ScenarioMatrix {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn width(&self) -> usize {
        self.labels.len()
    }

    /// Check labels and values against the system's wind farms and horizon.
    pub fn validate(&self, system: &PowerSystem) -> Result<(), ScenarioError> {
        let expected = system.scenario_labels();
        if self.labels.len() != expected.len() {
            return Err(ScenarioError::Width { expected: expected.len(), got: self.labels.len() });
        }
        for (column, (have, want)) in self.labels.iter().zip(&expected).enumerate() {
            if have != want {
                return Err(ScenarioError::Label { column, expected: want.clone(), found: have.clone() });
            }
        }
        for (row, r) in self.rows.iter().enumerate() {
            if r.len() != expected.len() {
                return Err(ScenarioError::Ragged { row, expected: expected.len(), got: r.len() });
            }
            if let Some((column, &value)) = r.iter().enumerate().find(|(_, v)| !(v.is_finite() && **v >= 0.0)) {
                return Err(ScenarioError::Value { row, column, label: self.labels[column].clone(), value });
            }
        }
        Ok(())
    }
}

/// One weather regime: probability weight and a shift of the latent wind level.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Regime {
    pub weight: f64,
    pub level: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub regimes: Vec<Regime>,
    /// Lag-one autocorrelation of the hourly latent noise.
    pub persistence: f64,
    pub noise_sd: f64,
    /// Share of the noise variance common to all farms.
    pub common_share: f64,
    /// Capacity used for farms that do not declare one (MW).
    pub default_capacity: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            regimes: vec![Regime { weight: 0.55, level: -1.3 }, Regime { weight: 0.45, level: 1.1 }],
            persistence: 0.8,
            noise_sd: 0.6,
            common_share: 0.5,
            default_capacity: 100.0,
        }
    }
}

impl SynthConfig {
    fn validate(&self) -> Result<(), ScenarioError> {
        if self.regimes.is_empty() || self.regimes.iter().any(|r| !(r.weight > 0.0) || !r.level.is_finite()) {
            return Err(ScenarioError::Config("regimes need positive weights and finite levels".into()));
        }
        if !(-1.0 < self.persistence && self.persistence < 1.0) {
            return Err(ScenarioError::Config(format!("persistence {} outside (-1, 1)", self.persistence)));
        }
        if !(self.noise_sd >= 0.0) || !(0.0..=1.0).contains(&self.common_share) || !(self.default_capacity >= 0.0) {
            return Err(ScenarioError::Config("noise, common share and capacity must be non-negative".into()));
        }
        Ok(())
    }
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Draw `n` scenarios: a regime per scenario shared by all farms, AR(1)
/// noise over the horizon, mapped to `[0, capacity]` by a logistic curve.
pub fn synthesize(system: &PowerSystem, n: usize, cfg: &SynthConfig, seed: u64) -> Result<ScenarioMatrix, ScenarioError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let t_max = system.periods;
    let farms = &system.wind_farms;
    let total: f64 = cfg.regimes.iter().map(|r| r.weight).sum();
    let innov = (1.0 - cfg.persistence * cfg.persistence).sqrt();
    let (common, own) = (cfg.common_share.sqrt(), (1.0 - cfg.common_share).sqrt());
    let mut rows = Vec::with_capacity(n);
    for _ in 0..n {
        let u: f64 = rng.random::<f64>() * total;
        let mut acc = 0.0;
        let mut level = cfg.regimes[cfg.regimes.len() - 1].level;
        for r in &cfg.regimes {
            acc += r.weight;
            if u < acc {
                level = r.level;
                break;
            }
        }
        let mut shared = vec![0.0; t_max];
        let mut prev = StandardNormal.sample(&mut rng);
        for s in shared.iter_mut() {
            *s = prev;
            let e: f64 = StandardNormal.sample(&mut rng);
            prev = cfg.persistence * prev + innov * e;
        }
        let mut row = Vec::with_capacity(farms.len() * t_max);
        for farm in farms {
            let cap = farm.capacity.unwrap_or(cfg.default_capacity);
            let mut local: f64 = StandardNormal.sample(&mut rng);
            for s in &shared {
                let z = level + cfg.noise_sd * (common * s + own * local);
                row.push(cap * sigmoid(z));
                let e: f64 = StandardNormal.sample(&mut rng);
                local = cfg.persistence * local + innov * e;
            }
        }
        rows.push(row);
    }
    Ok(ScenarioMatrix { labels: system.scenario_labels(), rows })
}
