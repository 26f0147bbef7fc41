use serde::{Deserialize, Serialize};
use statrs::function::gamma::digamma;

use super::distribution::{Distribution, Family};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitConfig {
    /// Minimum number of samples accepted for a fit.
    pub min_samples: usize,
    pub tolerance: f64,
    pub max_iterations: usize,
    /// K-S statistics within `ks_tie / √n` of the best count as tied, so a
    /// nested family does not win on fitting noise alone.
    #[serde(default = "default_ks_tie")]
    pub ks_tie: f64,
}

fn default_ks_tie() -> f64 {
    1.0
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            min_samples: 30,
            tolerance: 1e-9,
            max_iterations: 200,
            ks_tie: default_ks_tie(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum FitError {
    #[error("{family}: {n} samples is below the fitting floor of {min}")]
    TooFewSamples { family: Family, n: usize, min: usize },
    #[error("{family}: samples are degenerate (zero spread)")]
    Degenerate { family: Family },
    #[error("{family}: Newton iteration did not converge after {} steps", iterates.len())]
    NoConvergence { family: Family, iterates: Vec<f64> },
}

/// Maximum-likelihood fit of `family` to strictly positive samples.
pub fn fit_mle(data: &[f64], family: Family, config: &FitConfig) -> Result<Distribution, FitError> {
    let n = data.len();
    if n < config.min_samples.max(1) {
        return Err(FitError::TooFewSamples {
            family,
            n,
            min: config.min_samples,
        });
    }
    let nf = n as f64;
    let mean = data.iter().sum::<f64>() / nf;
    let all_equal = data.iter().all(|&x| x == data[0]);
    match family {
        Family::Exponential => Ok(Distribution::Exponential { rate: 1.0 / mean }),
        Family::Normal => {
            let var = data.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / nf;
            if all_equal || !(var > 0.0) {
                return Err(FitError::Degenerate { family });
            }
            Ok(Distribution::Normal {
                mean,
                std_dev: var.sqrt(),
            })
        }
        Family::LogNormal => {
            let logs: Vec<f64> = data.iter().map(|x| x.ln()).collect();
            let mu = logs.iter().sum::<f64>() / nf;
            let var = logs.iter().map(|l| (l - mu).powi(2)).sum::<f64>() / nf;
            if all_equal || !(var > 0.0) {
                return Err(FitError::Degenerate { family });
            }
            Ok(Distribution::LogNormal { mu, sigma: var.sqrt() })
        }
        Family::Gamma => {
            if all_equal {
                return Err(FitError::Degenerate { family });
            }
            let mean_log = data.iter().map(|x| x.ln()).sum::<f64>() / nf;
            let s = mean.ln() - mean_log;
            if !(s > 0.0) {
                return Err(FitError::Degenerate { family });
            }
            let shape = gamma_shape(s, config)?;
            Ok(Distribution::Gamma {
                shape,
                scale: mean / shape,
            })
        }
        Family::Weibull => {
            if all_equal {
                return Err(FitError::Degenerate { family });
            }
            weibull_mle(data, config)
        }
    }
}

/// Solve `ln k - ψ(k) = s` by Newton's method from the usual closed-form
/// starting point.
fn gamma_shape(s: f64, config: &FitConfig) -> Result<f64, FitError> {
    let mut k = (3.0 - s + ((s - 3.0).powi(2) + 24.0 * s).sqrt()) / (12.0 * s);
    let mut iterates = Vec::with_capacity(config.max_iterations);
    for _ in 0..config.max_iterations {
        let f = k.ln() - digamma(k) - s;
        let df = 1.0 / k - trigamma(k);
        let mut next = k - f / df;
        if !(next > 0.0) || !next.is_finite() {
            next = k / 2.0;
        }
        iterates.push(next);
        if (next - k).abs() <= config.tolerance * k {
            return Ok(next);
        }
        k = next;
    }
    Err(FitError::NoConvergence {
        family: Family::Gamma,
        iterates,
    })
}

/// Weibull MLE: Newton on the profile-likelihood equation for the shape,
/// `Σ x^k ln x / Σ x^k - 1/k - mean(ln x) = 0`, then the closed-form scale.
fn weibull_mle(data: &[f64], config: &FitConfig) -> Result<Distribution, FitError> {
    let nf = data.len() as f64;
    let logs: Vec<f64> = data.iter().map(|x| x.ln()).collect();
    let mean_log = logs.iter().sum::<f64>() / nf;
    let max_log = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sd_log = (logs.iter().map(|l| (l - mean_log).powi(2)).sum::<f64>() / nf).sqrt();
    if !(sd_log > 0.0) {
        return Err(FitError::Degenerate { family: Family::Weibull });
    }
    // Moments of ln x weighted by x^k, shifted by max(ln x) to avoid overflow.
    let moments = |k: f64| {
        let (mut b, mut a, mut c) = (0.0, 0.0, 0.0);
        for &u in &logs {
            let w = (k * (u - max_log)).exp();
            b += w;
            a += w * u;
            c += w * u * u;
        }
        (b, a / b, c / b)
    };
    let mut k = std::f64::consts::PI / (6f64.sqrt() * sd_log);
    let mut iterates = Vec::with_capacity(config.max_iterations);
    for _ in 0..config.max_iterations {
        let (_, m1, m2) = moments(k);
        let h = m1 - 1.0 / k - mean_log;
        let dh = (m2 - m1 * m1) + 1.0 / (k * k);
        let mut next = k - h / dh;
        if !(next > 0.0) || !next.is_finite() {
            next = k / 2.0;
        }
        iterates.push(next);
        if (next - k).abs() <= config.tolerance * k {
            let (b, _, _) = moments(next);
            let scale = max_log.exp() * (b / nf).powf(1.0 / next);
            return Ok(Distribution::Weibull { shape: next, scale });
        }
        k = next;
    }
    Err(FitError::NoConvergence {
        family: Family::Weibull,
        iterates,
    })
}

/// ψ'(x) for x > 0, by upward recurrence into the asymptotic series.
pub(crate) fn trigamma(mut x: f64) -> f64 {
    let mut acc = 0.0;
    while x < 12.0 {
        acc += 1.0 / (x * x);
        x += 1.0;
    }
    let x2 = 1.0 / (x * x);
    acc + 1.0 / x
        + x2 / 2.0
        + (1.0 / x) * x2 * (1.0 / 6.0 - x2 * (1.0 / 30.0 - x2 * (1.0 / 42.0 - x2 / 30.0)))
}
