use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::dataset::Dataset;
use crate::linalg::{ols, ridge};

pub const RIDGE_PENALTY: f64 = 1e-6;

/// `y′ = intercept + Σ coefficients[j]·x_j`, stored in raw feature units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub intercept: f64,
    pub coefficients: Vec<f64>,
    /// Set when the design was rank deficient and ridge was used instead.
    pub ridge_fallback: bool,
}

impl LinearModel {
    pub fn predict(&self, x: &[f64]) -> f64 {
        self.intercept + self.coefficients.iter().zip(x).map(|(c, v)| c * v).sum::<f64>()
    }
}

/// OLS with an intercept on standardized features; falls back to ridge
/// (intercept unpenalized) when the design is singular.
pub fn fit_linear(data: &Dataset) -> LinearModel {
    let n = data.len();
    let p = data.n_features();
    let mut center = vec![0.0; p];
    let mut scale = vec![1.0; p];
    for j in 0..p {
        let m = data.features.iter().map(|r| r[j]).sum::<f64>() / n as f64;
        let sd = (data.features.iter().map(|r| (r[j] - m).powi(2)).sum::<f64>() / n as f64).sqrt();
        center[j] = m;
        if sd > 0.0 {
            scale[j] = sd;
        }
    }
    let design = DMatrix::from_fn(n, p + 1, |i, j| {
        if j == 0 {
            1.0
        } else {
            (data.features[i][j - 1] - center[j - 1]) / scale[j - 1]
        }
    });
    let target = DVector::from_column_slice(&data.targets);
    let (beta, ridge_fallback) = match ols(&design, &target) {
        Ok(b) => (b, false),
        Err(_) => (
            ridge(&design, &target, RIDGE_PENALTY, &[0]).unwrap_or_else(|| DVector::zeros(p + 1)),
            true,
        ),
    };
    let coefficients: Vec<f64> = (0..p).map(|j| beta[j + 1] / scale[j]).collect();
    let intercept = beta[0] - coefficients.iter().zip(&center).map(|(c, m)| c * m).sum::<f64>();
    LinearModel {
        intercept,
        coefficients,
        ridge_fallback,
    }
}
