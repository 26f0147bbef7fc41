use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution as _, Exp, Gamma, LogNormal, Normal, Weibull};
use serde::{Deserialize, Serialize};
use statrs::function::erf::{erf_inv, erfc};
use statrs::function::gamma::gamma_lr;

use super::ProfileError;

/// Candidate distribution families, in alphabetical order of their names.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    Exponential,
    Gamma,
    LogNormal,
    Normal,
    Weibull,
}

impl Family {
    pub const ALL: [Family; 5] = [
        Family::Exponential,
        Family::Gamma,
        Family::LogNormal,
        Family::Normal,
        Family::Weibull,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Family::Exponential => "exponential",
            Family::Gamma => "gamma",
            Family::LogNormal => "log-normal",
            Family::Normal => "normal",
            Family::Weibull => "weibull",
        }
    }

    pub fn n_params(self) -> usize {
        match self {
            Family::Exponential => 1,
            _ => 2,
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Family {
    type Err = ProfileError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "exponential" | "exp" => Ok(Family::Exponential),
            "gamma" => Ok(Family::Gamma),
            "log-normal" | "lognormal" => Ok(Family::LogNormal),
            "normal" | "gaussian" => Ok(Family::Normal),
            "weibull" => Ok(Family::Weibull),
            other => Err(ProfileError::UnknownFamily(other.to_string())),
        }
    }
}

/// A fully parameterised member of one of the supported families.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Distribution {
    Normal { mean: f64, std_dev: f64 },
    /// Parameters of the underlying normal of `ln X`.
    LogNormal { mu: f64, sigma: f64 },
    Gamma { shape: f64, scale: f64 },
    Weibull { shape: f64, scale: f64 },
    Exponential { rate: f64 },
}

fn std_normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

fn std_normal_quantile(q: f64) -> f64 {
    std::f64::consts::SQRT_2 * erf_inv(2.0 * q - 1.0)
}

impl Distribution {
    pub fn family(&self) -> Family {
        match self {
            Distribution::Normal { .. } => Family::Normal,
            Distribution::LogNormal { .. } => Family::LogNormal,
            Distribution::Gamma { .. } => Family::Gamma,
            Distribution::Weibull { .. } => Family::Weibull,
            Distribution::Exponential { .. } => Family::Exponential,
        }
    }

    pub fn params(&self) -> Vec<f64> {
        match *self {
            Distribution::Normal { mean, std_dev } => vec![mean, std_dev],
            Distribution::LogNormal { mu, sigma } => vec![mu, sigma],
            Distribution::Gamma { shape, scale } => vec![shape, scale],
            Distribution::Weibull { shape, scale } => vec![shape, scale],
            Distribution::Exponential { rate } => vec![rate],
        }
    }

    pub fn from_params(family: Family, params: &[f64]) -> Result<Self, ProfileError> {
        if params.len() != family.n_params() {
            return Err(ProfileError::InvalidParams(format!(
                "{family} takes {} parameters, got {}",
                family.n_params(),
                params.len()
            )));
        }
        let d = match family {
            Family::Normal => Distribution::Normal {
                mean: params[0],
                std_dev: params[1],
            },
            Family::LogNormal => Distribution::LogNormal {
                mu: params[0],
                sigma: params[1],
            },
            Family::Gamma => Distribution::Gamma {
                shape: params[0],
                scale: params[1],
            },
            Family::Weibull => Distribution::Weibull {
                shape: params[0],
                scale: params[1],
            },
            Family::Exponential => Distribution::Exponential { rate: params[0] },
        };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<(), ProfileError> {
        let ok = match *self {
            Distribution::Normal { mean, std_dev } => mean.is_finite() && std_dev > 0.0 && std_dev.is_finite(),
            Distribution::LogNormal { mu, sigma } => mu.is_finite() && sigma > 0.0 && sigma.is_finite(),
            Distribution::Gamma { shape, scale } | Distribution::Weibull { shape, scale } => {
                shape > 0.0 && scale > 0.0 && shape.is_finite() && scale.is_finite()
            }
            Distribution::Exponential { rate } => rate > 0.0 && rate.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(ProfileError::InvalidParams(format!("{self:?} violates family constraints")))
        }
    }

    pub fn cdf(&self, x: f64) -> f64 {
        match *self {
            Distribution::Normal { mean, std_dev } => std_normal_cdf((x - mean) / std_dev),
            Distribution::LogNormal { mu, sigma } => {
                if x <= 0.0 {
                    0.0
                } else {
                    std_normal_cdf((x.ln() - mu) / sigma)
                }
            }
            Distribution::Gamma { shape, scale } => {
                if x <= 0.0 {
                    0.0
                } else {
                    gamma_lr(shape, x / scale)
                }
            }
            Distribution::Weibull { shape, scale } => {
                if x <= 0.0 {
                    0.0
                } else {
                    -(-(x / scale).powf(shape)).exp_m1()
                }
            }
            Distribution::Exponential { rate } => {
                if x <= 0.0 {
                    0.0
                } else {
                    -(-rate * x).exp_m1()
                }
            }
        }
    }

    pub fn mean(&self) -> f64 {
        match *self {
            Distribution::Normal { mean, .. } => mean,
            Distribution::LogNormal { mu, sigma } => (mu + 0.5 * sigma * sigma).exp(),
            Distribution::Gamma { shape, scale } => shape * scale,
            Distribution::Weibull { shape, scale } => {
                scale * statrs::function::gamma::gamma(1.0 + 1.0 / shape)
            }
            Distribution::Exponential { rate } => 1.0 / rate,
        }
    }

    /// Inverse CDF at `q ∈ (0, 1)`; closed form except for the gamma family,
    /// which is solved by bisection to a relative tolerance of 1e-9 or better.
    pub fn quantile(&self, q: f64) -> Result<f64, ProfileError> {
        if !(q > 0.0 && q < 1.0) {
            return Err(ProfileError::PercentileRange(q));
        }
        Ok(match *self {
            Distribution::Normal { mean, std_dev } => mean + std_dev * std_normal_quantile(q),
            Distribution::LogNormal { mu, sigma } => (mu + sigma * std_normal_quantile(q)).exp(),
            Distribution::Exponential { rate } => -(-q).ln_1p() / rate,
            Distribution::Weibull { shape, scale } => scale * (-(-q).ln_1p()).powf(1.0 / shape),
            Distribution::Gamma { .. } => self.bisect_quantile(q),
        })
    }

    fn bisect_quantile(&self, q: f64) -> f64 {
        let mut lo = 0.0;
        let mut hi = self.mean().max(f64::MIN_POSITIVE);
        while self.cdf(hi) < q {
            lo = hi;
            hi *= 2.0;
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if self.cdf(mid) < q {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo <= 1e-12 * hi {
                break;
            }
        }
        0.5 * (lo + hi)
    }

    /// One draw. Normal draws are floored at zero since latencies are
    /// non-negative.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            Distribution::Normal { mean, std_dev } => Normal::new(mean, std_dev)
                .expect("validated parameters")
                .sample(rng)
                .max(0.0),
            Distribution::LogNormal { mu, sigma } => {
                LogNormal::new(mu, sigma).expect("validated parameters").sample(rng)
            }
            Distribution::Gamma { shape, scale } => {
                Gamma::new(shape, scale).expect("validated parameters").sample(rng)
            }
            Distribution::Weibull { shape, scale } => {
                Weibull::new(scale, shape).expect("validated parameters").sample(rng)
            }
            Distribution::Exponential { rate } => Exp::new(rate).expect("validated parameters").sample(rng),
        }
    }
}
