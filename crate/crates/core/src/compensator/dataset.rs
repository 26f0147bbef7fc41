use std::ops::Range;

use serde::{Deserialize, Serialize};

use super::CompensatorError;
use crate::forecaster::{Forecast, RollingForecaster};
use crate::trace::WorkloadTrace;

/// Names of the feature columns for a ring of `ring_size` errors:
/// `y, y_upp, y_low, e1..em`.
pub fn feature_names(ring_size: usize) -> Vec<String> {
    ["y", "y_upp", "y_low"]
        .iter()
        .map(|s| s.to_string())
        .chain((1..=ring_size).map(|i| format!("e{i}")))
        .collect()
}

/// Feature vector `[y, y_upp, y_low, e_1..e_m]`.
pub fn feature_vector(forecast: &Forecast, errors: impl IntoIterator<Item = f64>) -> Vec<f64> {
    let mut v = vec![forecast.y, forecast.y_upp, forecast.y_low];
    v.extend(errors);
    v
}

/// Rows of features and targets, in time order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub ring_size: usize,
    /// Interval index of each row's target.
    pub targets_at: Vec<usize>,
    pub features: Vec<Vec<f64>>,
    pub targets: Vec<f64>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn n_features(&self) -> usize {
        3 + self.ring_size
    }

    /// Rows `range` as a new dataset.
    pub fn slice(&self, range: Range<usize>) -> Dataset {
        Dataset {
            ring_size: self.ring_size,
            targets_at: self.targets_at[range.clone()].to_vec(),
            features: self.features[range.clone()].to_vec(),
            targets: self.targets[range].to_vec(),
        }
    }

    /// All rows except `range`.
    pub fn without(&self, range: Range<usize>) -> Dataset {
        let keep = |i: &usize| !range.contains(i);
        let idx: Vec<usize> = (0..self.len()).filter(keep).collect();
        Dataset {
            ring_size: self.ring_size,
            targets_at: idx.iter().map(|&i| self.targets_at[i]).collect(),
            features: idx.iter().map(|&i| self.features[i].clone()).collect(),
            targets: idx.iter().map(|&i| self.targets[i]).collect(),
        }
    }

    /// The raw forecast column `y`.
    pub fn raw_forecasts(&self) -> Vec<f64> {
        self.features.iter().map(|f| f[0]).collect()
    }
}

/// Assemble rows from forecasts aligned with observed values.
///
/// `forecasts[j]` targets `actual[j]`, and was issued `lag` intervals earlier;
/// at issue time the newest known error is for position `j − lag − 1`. Row
/// `j` therefore uses errors at `j−lag−1 … j−lag−m`, and the first `lag + m`
/// positions produce no row.
pub fn dataset_from_forecasts(
    actual: &[f64],
    forecasts: &[Forecast],
    lag: usize,
    ring_size: usize,
) -> Result<Dataset, CompensatorError> {
    assert_eq!(actual.len(), forecasts.len(), "forecasts must align with observations");
    let skip = lag + ring_size;
    if actual.len() <= skip {
        return Err(CompensatorError::EmptySet {
            needed: skip + 1,
            available: actual.len(),
        });
    }
    let errors: Vec<f64> = actual.iter().zip(forecasts).map(|(a, f)| a - f.y).collect();
    let mut ds = Dataset {
        ring_size,
        targets_at: Vec::with_capacity(actual.len() - skip),
        features: Vec::with_capacity(actual.len() - skip),
        targets: Vec::with_capacity(actual.len() - skip),
    };
    for j in skip..actual.len() {
        let newest = j - lag - 1;
        let es = (0..ring_size).map(|i| errors[newest - i]);
        ds.features.push(feature_vector(&forecasts[j], es));
        ds.targets.push(actual[j]);
        ds.targets_at.push(forecasts[j].t_target);
    }
    Ok(ds)
}

/// Forecast every interval of `range` `horizon` intervals ahead with a rolling
/// forecaster and turn the results into a training set. The first
/// `horizon + ring_size` intervals of the range only seed the error ring.
pub fn build_training_set(
    trace: &WorkloadTrace,
    forecaster: &mut RollingForecaster,
    range: Range<usize>,
    horizon: usize,
    ring_size: usize,
) -> Result<Dataset, CompensatorError> {
    if range.end > trace.len() {
        return Err(CompensatorError::Range {
            end: range.end,
            len: trace.len(),
        });
    }
    if range.start < horizon {
        return Err(CompensatorError::Range {
            end: range.start,
            len: horizon,
        });
    }
    let counts = trace.counts();
    let mut actual = Vec::with_capacity(range.len());
    let mut forecasts = Vec::with_capacity(range.len());
    for t in range {
        forecasts.push(forecaster.forecast(t - horizon, t)?);
        actual.push(counts[t] as f64);
    }
    dataset_from_forecasts(&actual, &forecasts, horizon, ring_size)
}
