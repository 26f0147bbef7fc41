//! Forecast compensation: a regressor over `[y, y_upp, y_low, e_1..e_m]`
//! trained to map a raw forecast to the realized count.

mod boosted;
mod dataset;
mod linear;
mod ring;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use boosted::{fit_boosted, BoostParams, BoostedModel, Node, Tree};
pub use dataset::{build_training_set, dataset_from_forecasts, feature_names, feature_vector, Dataset};
pub use linear::{fit_linear, LinearModel, RIDGE_PENALTY};
pub use ring::{ErrorRing, DEFAULT_RING_SIZE};

use crate::forecaster::{Forecast, ForecastError};
use crate::stats::mean_absolute_error;

pub const MIN_ROWS_LINEAR: usize = 9;
pub const MIN_ROWS_BOOSTED: usize = 100;
const CV_FOLDS: usize = 5;
const TRAIN_FRACTION: f64 = 0.8;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CompensatorError {
    #[error("cannot build a training set: need more than {needed} forecast points to fill the error ring, have {available}")]
    EmptySet { needed: usize, available: usize },
    #[error("range ends at {end} but only {len} intervals are available")]
    Range { end: usize, len: usize },
    #[error("{kind} compensator needs at least {min} rows, got {rows}")]
    InsufficientRows { kind: CompensatorKind, rows: usize, min: usize },
    #[error("feature layout mismatch: expected {expected:?}, found {found:?}")]
    FeatureMismatch { expected: Vec<String>, found: Vec<String> },
    #[error("invalid hyperparameters: {0}")]
    InvalidParams(String),
    #[error(transparent)]
    Forecast(#[from] ForecastError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CompensatorKind {
    Identity,
    Linear,
    BoostedTrees,
}

impl fmt::Display for CompensatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CompensatorKind::Identity => "identity",
            CompensatorKind::Linear => "linear",
            CompensatorKind::BoostedTrees => "boosted_trees",
        })
    }
}

impl FromStr for CompensatorKind {
    type Err = CompensatorError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "identity" | "none" => Ok(CompensatorKind::Identity),
            "linear" => Ok(CompensatorKind::Linear),
            "boosted_trees" | "boosted-trees" | "boosted" => Ok(CompensatorKind::BoostedTrees),
            other => Err(CompensatorError::InvalidParams(format!("unknown compensator kind `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainingReport {
    pub rows_train: usize,
    pub rows_test: usize,
    pub mae_train: f64,
    /// Mean MAE over contiguous folds of the training part.
    pub mae_cv: Option<f64>,
    pub mae_test: Option<f64>,
    /// MAE of the raw forecast on the test part, for comparison.
    pub mae_test_raw: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "parameters", rename_all = "snake_case")]
pub enum Regressor {
    Identity,
    Linear(LinearModel),
    BoostedTrees(BoostedModel),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ModelJson")]
pub struct CompensatorModel {
    pub features: Vec<String>,
    pub regressor: Regressor,
    pub training_report: Option<TrainingReport>,
}

#[derive(Deserialize)]
struct ModelJson {
    features: Vec<String>,
    regressor: Regressor,
    training_report: Option<TrainingReport>,
}

impl TryFrom<ModelJson> for CompensatorModel {
    type Error = CompensatorError;

    fn try_from(j: ModelJson) -> Result<Self, Self::Error> {
        let ring = j.features.len().saturating_sub(3);
        let expected = feature_names(ring);
        if ring == 0 || j.features != expected {
            return Err(CompensatorError::FeatureMismatch {
                expected,
                found: j.features,
            });
        }
        let width = match &j.regressor {
            Regressor::Linear(m) => Some(m.coefficients.len()),
            _ => None,
        };
        if width.is_some_and(|w| w != j.features.len()) {
            return Err(CompensatorError::InvalidParams("coefficient count differs from feature count".into()));
        }
        Ok(Self {
            features: j.features,
            regressor: j.regressor,
            training_report: j.training_report,
        })
    }
}

/// Output of [`compensate`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Compensated {
    pub y: f64,
    /// False when the error ring was not yet full and the raw forecast was used.
    pub compensated: bool,
}

impl CompensatorModel {
    pub fn identity(ring_size: usize) -> Self {
        Self {
            features: feature_names(ring_size),
            regressor: Regressor::Identity,
            training_report: None,
        }
    }

    pub fn kind(&self) -> CompensatorKind {
        match self.regressor {
            Regressor::Identity => CompensatorKind::Identity,
            Regressor::Linear(_) => CompensatorKind::Linear,
            Regressor::BoostedTrees(_) => CompensatorKind::BoostedTrees,
        }
    }

    pub fn ring_size(&self) -> usize {
        self.features.len() - 3
    }

    /// Unclamped regressor output on a full feature vector.
    pub fn evaluate(&self, x: &[f64]) -> f64 {
        match &self.regressor {
            Regressor::Identity => x[0],
            Regressor::Linear(m) => m.predict(x),
            Regressor::BoostedTrees(m) => m.predict(x),
        }
    }

    pub fn ridge_fallback(&self) -> bool {
        matches!(&self.regressor, Regressor::Linear(m) if m.ridge_fallback)
    }
}

/// `y′ = max(0, c(y, y_upp, y_low, E))`; with a partially filled ring the raw
/// forecast is returned and flagged.
pub fn compensate(model: &CompensatorModel, forecast: &Forecast, ring: &ErrorRing) -> Compensated {
    if model.kind() == CompensatorKind::Identity {
        return Compensated {
            y: forecast.y,
            compensated: true,
        };
    }
    if !ring.is_full() || ring.capacity() != model.ring_size() {
        return Compensated {
            y: forecast.y,
            compensated: false,
        };
    }
    let x = feature_vector(forecast, ring.errors());
    Compensated {
        y: model.evaluate(&x).max(0.0),
        compensated: true,
    }
}

fn fit_regressor(kind: CompensatorKind, data: &Dataset, boost: &BoostParams) -> Regressor {
    match kind {
        CompensatorKind::Identity => Regressor::Identity,
        CompensatorKind::Linear => Regressor::Linear(fit_linear(data)),
        CompensatorKind::BoostedTrees => Regressor::BoostedTrees(fit_boosted(data, boost)),
    }
}

fn mae_of(model: &CompensatorModel, data: &Dataset) -> f64 {
    let pred: Vec<f64> = data.features.iter().map(|x| model.evaluate(x).max(0.0)).collect();
    mean_absolute_error(&data.targets, &pred)
}

/// Train on the first 80% of rows (time order); the remaining 20% give the
/// test MAE, and contiguous 5-fold CV on the training part gives `mae_cv`.
pub fn train(data: &Dataset, kind: CompensatorKind, boost: &BoostParams) -> Result<CompensatorModel, CompensatorError> {
    boost.validate().map_err(CompensatorError::InvalidParams)?;
    let min = match kind {
        CompensatorKind::Identity => 0,
        CompensatorKind::Linear => MIN_ROWS_LINEAR,
        CompensatorKind::BoostedTrees => MIN_ROWS_BOOSTED,
    };
    if data.len() < min.max(1) {
        return Err(CompensatorError::InsufficientRows {
            kind,
            rows: data.len(),
            min,
        });
    }
    let features = feature_names(data.ring_size);
    let cut = ((data.len() as f64 * TRAIN_FRACTION).round() as usize).clamp(1, data.len());
    let train_part = data.slice(0..cut);
    let test_part = data.slice(cut..data.len());

    let model = CompensatorModel {
        features: features.clone(),
        regressor: fit_regressor(kind, &train_part, boost),
        training_report: None,
    };

    let folds = CV_FOLDS.min(train_part.len());
    let mut cv = Vec::with_capacity(folds);
    if folds >= 2 {
        for k in 0..folds {
            let lo = k * train_part.len() / folds;
            let hi = (k + 1) * train_part.len() / folds;
            let fold_model = CompensatorModel {
                features: features.clone(),
                regressor: fit_regressor(kind, &train_part.without(lo..hi), boost),
                training_report: None,
            };
            cv.push(mae_of(&fold_model, &train_part.slice(lo..hi)));
        }
    }
    let report = TrainingReport {
        rows_train: train_part.len(),
        rows_test: test_part.len(),
        mae_train: mae_of(&model, &train_part),
        mae_cv: (!cv.is_empty()).then(|| cv.iter().sum::<f64>() / cv.len() as f64),
        mae_test: (!test_part.is_empty()).then(|| mae_of(&model, &test_part)),
        mae_test_raw: (!test_part.is_empty())
            .then(|| mean_absolute_error(&test_part.targets, &test_part.raw_forecasts())),
    };
    Ok(CompensatorModel {
        training_report: Some(report),
        ..model
    })
}
