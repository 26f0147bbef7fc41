//! Execution-time profiling: MLE fits of candidate families per core count,
//! ranked by the one-sample Kolmogorov-Smirnov statistic, and the resulting
//! percentile latency `t_p`.

mod distribution;
mod fit;

use std::collections::BTreeMap;
use std::io::Read;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use distribution::{Distribution, Family};
pub use fit::{fit_mle, FitConfig, FitError};

use crate::rng::{stream_rng, SAMPLES_STREAM};

#[derive(Debug, thiserror::Error)]
pub enum ProfileError {
    #[error("unknown distribution family `{0}`")]
    UnknownFamily(String),
    #[error("invalid distribution parameters: {0}")]
    InvalidParams(String),
    #[error("percentile {0} must lie strictly between 0 and 1")]
    PercentileRange(f64),
    #[error("invalid latency samples: {0}")]
    InvalidSamples(String),
    #[error("no family could be fitted for {service} on {cores} cores: {}", describe_failures(.failures))]
    AllFamiliesFailed {
        service: String,
        cores: u32,
        failures: Vec<FitError>,
    },
    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("profile JSON: {0}")]
    Json(#[from] serde_json::Error),
}

fn describe_failures(failures: &[FitError]) -> String {
    failures.iter().map(|f| f.to_string()).collect::<Vec<_>>().join("; ")
}

/// Observed latencies (seconds) of one service on `cores` cores.
#[derive(Debug, Clone, PartialEq)]
pub struct LatencySamples {
    pub service: String,
    pub cores: u32,
    samples: Vec<f64>,
}

impl LatencySamples {
    pub fn new(service: impl Into<String>, cores: u32, samples: Vec<f64>) -> Result<Self, ProfileError> {
        if cores == 0 {
            return Err(ProfileError::InvalidSamples("core count must be positive".into()));
        }
        if samples.is_empty() {
            return Err(ProfileError::InvalidSamples("no samples".into()));
        }
        if let Some(bad) = samples.iter().find(|&&x| !(x > 0.0 && x.is_finite())) {
            return Err(ProfileError::InvalidSamples(format!(
                "latency samples must be positive and finite, got {bad}"
            )));
        }
        Ok(Self {
            service: service.into(),
            cores,
            samples,
        })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// A fitted distribution together with its K-S distance to the data.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FittedDistribution {
    pub distribution: Distribution,
    pub ks_statistic: f64,
}

/// Exact one-sample K-S statistic of ascending-sorted data against `cdf`:
/// the largest gap on either side of every step of the empirical CDF.
pub fn ks_statistic_sorted(sorted: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let n = sorted.len() as f64;
    sorted
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            let above = (f - (i + 1) as f64 / n).abs();
            let below = (f - i as f64 / n).abs();
            above.max(below)
        })
        .fold(0.0, f64::max)
}

pub fn ks_statistic(samples: &LatencySamples, distribution: &Distribution) -> f64 {
    let mut sorted = samples.samples.clone();
    sorted.sort_by(f64::total_cmp);
    ks_statistic_sorted(&sorted, |x| distribution.cdf(x))
}

/// Outcome of fitting one family.
#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub family: Family,
    pub result: Result<FittedDistribution, FitError>,
}

/// Fit every family, in parallel, and return the candidates in family order.
pub fn fit_all(samples: &LatencySamples, config: &FitConfig) -> Vec<Candidate> {
    let mut sorted = samples.samples.clone();
    sorted.sort_by(f64::total_cmp);
    Family::ALL
        .par_iter()
        .map(|&family| Candidate {
            family,
            result: fit_mle(&sorted, family, config).map(|distribution| FittedDistribution {
                distribution,
                ks_statistic: ks_statistic_sorted(&sorted, |x| distribution.cdf(x)),
            }),
        })
        .collect()
}

/// Pick the fit with the smallest K-S statistic. Fits within `tie` of the
/// smallest count as tied; ties go to fewer parameters, then to the smaller
/// statistic, then to the alphabetically first family name.
pub fn select_best(candidates: &[Candidate], tie: f64) -> Option<FittedDistribution> {
    let fits: Vec<&FittedDistribution> = candidates
        .iter()
        .filter_map(|c| c.result.as_ref().ok())
        .filter(|f| f.ks_statistic.is_finite())
        .collect();
    let best = fits.iter().map(|f| f.ks_statistic).fold(f64::INFINITY, f64::min);
    fits.into_iter()
        .filter(|f| f.ks_statistic <= best + tie.max(0.0))
        .min_by(|a, b| {
            let (fa, fb) = (a.distribution.family(), b.distribution.family());
            fa.n_params()
                .cmp(&fb.n_params())
                .then(a.ks_statistic.total_cmp(&b.ks_statistic))
                .then(fa.name().cmp(fb.name()))
        })
        .copied()
}

pub fn rank_and_select(samples: &LatencySamples, config: &FitConfig) -> Result<FittedDistribution, ProfileError> {
    let candidates = fit_all(samples, config);
    let tie = config.ks_tie / (samples.len() as f64).sqrt();
    select_best(&candidates, tie).ok_or_else(|| ProfileError::AllFamiliesFailed {
        service: samples.service.clone(),
        cores: samples.cores,
        failures: candidates.into_iter().filter_map(|c| c.result.err()).collect(),
    })
}

pub fn percentile_latency(fitted: &FittedDistribution, q: f64) -> Result<f64, ProfileError> {
    fitted.distribution.quantile(q)
}

/// Lifecycle transition durations in seconds.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SetupTimes {
    /// VM deployment.
    pub vm: f64,
    /// Container download.
    pub cd: f64,
    /// Model load.
    pub ml: f64,
    /// Model unload.
    #[serde(default)]
    pub mu: f64,
}

impl SetupTimes {
    pub fn validate(&self) -> Result<(), String> {
        for (name, v) in [("vm", self.vm), ("cd", self.cd), ("ml", self.ml), ("mu", self.mu)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(format!("setup time `{name}` must be finite and >= 0, got {v}"));
            }
        }
        Ok(())
    }

    /// Time from deployment until the model is ready to serve.
    pub fn total(&self) -> f64 {
        self.vm + self.cd + self.ml
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoreProfile {
    pub fitted: FittedDistribution,
    /// Latency at the profile percentile, seconds.
    pub t_p: f64,
}

/// Per-core-count latency model of one prediction service.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "ProfileJson", try_from = "ProfileJson")]
pub struct ExecutionProfile {
    pub service: String,
    pub percentile: f64,
    pub min_mem_gb: f64,
    pub setup_times: SetupTimes,
    pub per_core: BTreeMap<u32, CoreProfile>,
}

impl ExecutionProfile {
    pub fn profiled_cores(&self) -> Vec<u32> {
        self.per_core.keys().copied().collect()
    }

    pub fn t_p(&self, cores: u32) -> Option<f64> {
        self.per_core.get(&cores).map(|c| c.t_p)
    }

    pub fn distribution(&self, cores: u32) -> Option<&Distribution> {
        self.per_core.get(&cores).map(|c| &c.fitted.distribution)
    }

    /// Latency at percentile `q` on `cores` cores, re-evaluated from the fit.
    pub fn latency_at(&self, cores: u32, q: f64) -> Option<Result<f64, ProfileError>> {
        self.per_core.get(&cores).map(|c| {
            if q == self.percentile {
                Ok(c.t_p)
            } else {
                c.fitted.distribution.quantile(q)
            }
        })
    }

    /// Core counts where adding cores made the percentile latency worse.
    pub fn speedup_violations(&self) -> Vec<(u32, u32)> {
        let entries: Vec<(u32, f64)> = self.per_core.iter().map(|(&c, p)| (c, p.t_p)).collect();
        entries
            .windows(2)
            .filter(|w| w[1].1 > w[0].1)
            .map(|w| (w[0].0, w[1].0))
            .collect()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CoreEntry {
    cores: u32,
    family: Family,
    params: Vec<f64>,
    ks: f64,
    t_p_s: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ProfileJson {
    service: String,
    q: f64,
    min_mem_gb: f64,
    setup_times_s: SetupTimes,
    per_core: Vec<CoreEntry>,
}

impl From<ExecutionProfile> for ProfileJson {
    fn from(p: ExecutionProfile) -> Self {
        Self {
            service: p.service,
            q: p.percentile,
            min_mem_gb: p.min_mem_gb,
            setup_times_s: p.setup_times,
            per_core: p
                .per_core
                .into_iter()
                .map(|(cores, c)| CoreEntry {
                    cores,
                    family: c.fitted.distribution.family(),
                    params: c.fitted.distribution.params(),
                    ks: c.fitted.ks_statistic,
                    t_p_s: c.t_p,
                })
                .collect(),
        }
    }
}

impl TryFrom<ProfileJson> for ExecutionProfile {
    type Error = ProfileError;

    fn try_from(j: ProfileJson) -> Result<Self, Self::Error> {
        if !(j.q > 0.0 && j.q < 1.0) {
            return Err(ProfileError::PercentileRange(j.q));
        }
        j.setup_times_s.validate().map_err(ProfileError::InvalidParams)?;
        let mut per_core = BTreeMap::new();
        for e in j.per_core {
            let distribution = Distribution::from_params(e.family, &e.params)?;
            if !(0.0..=1.0).contains(&e.ks) {
                return Err(ProfileError::InvalidParams(format!("K-S statistic {} outside [0,1]", e.ks)));
            }
            per_core.insert(
                e.cores,
                CoreProfile {
                    fitted: FittedDistribution {
                        distribution,
                        ks_statistic: e.ks,
                    },
                    t_p: e.t_p_s,
                },
            );
        }
        Ok(Self {
            service: j.service,
            percentile: j.q,
            min_mem_gb: j.min_mem_gb,
            setup_times: j.setup_times_s,
            per_core,
        })
    }
}

/// Fit every core count and assemble a profile. Returned warnings list
/// speedup-monotonicity violations.
pub fn build_profile(
    service: &str,
    samples_by_core: &BTreeMap<u32, Vec<f64>>,
    percentile: f64,
    min_mem_gb: f64,
    setup_times: SetupTimes,
    config: &FitConfig,
) -> Result<(ExecutionProfile, Vec<String>), ProfileError> {
    if !(percentile > 0.0 && percentile < 1.0) {
        return Err(ProfileError::PercentileRange(percentile));
    }
    setup_times.validate().map_err(ProfileError::InvalidParams)?;
    if samples_by_core.is_empty() {
        return Err(ProfileError::InvalidSamples("no core counts profiled".into()));
    }
    let mut per_core = BTreeMap::new();
    for (&cores, data) in samples_by_core {
        let samples = LatencySamples::new(service, cores, data.clone())?;
        let fitted = rank_and_select(&samples, config)?;
        let t_p = percentile_latency(&fitted, percentile)?;
        per_core.insert(cores, CoreProfile { fitted, t_p });
    }
    let profile = ExecutionProfile {
        service: service.to_string(),
        percentile,
        min_mem_gb,
        setup_times,
        per_core,
    };
    let warnings = profile
        .speedup_violations()
        .into_iter()
        .map(|(a, b)| format!("t_p increases from {a} to {b} cores"))
        .collect();
    Ok((profile, warnings))
}

/// Read a `cores,latency_seconds` CSV into per-core sample vectors.
pub fn read_samples_csv<R: Read>(reader: R) -> Result<BTreeMap<u32, Vec<f64>>, ProfileError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| ProfileError::Parse {
            line: 1,
            message: e.to_string(),
        })?
        .clone();
    let col = |name: &str| {
        headers.iter().position(|h| h == name).ok_or_else(|| ProfileError::Parse {
            line: 1,
            message: format!("missing column `{name}`"),
        })
    };
    let cores_col = col("cores")?;
    let lat_col = col("latency_seconds")?;
    let mut out: BTreeMap<u32, Vec<f64>> = BTreeMap::new();
    for record in rdr.records() {
        let record = record.map_err(|e| ProfileError::Parse {
            line: e.position().map(|p| p.line()).unwrap_or(0),
            message: e.to_string(),
        })?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let cores = record
            .get(cores_col)
            .and_then(|v| v.parse::<u32>().ok())
            .filter(|&c| c > 0)
            .ok_or_else(|| ProfileError::Parse {
                line,
                message: "cores must be a positive integer".into(),
            })?;
        let latency = record
            .get(lat_col)
            .and_then(|v| v.parse::<f64>().ok())
            .filter(|v| *v > 0.0 && v.is_finite())
            .ok_or_else(|| ProfileError::Parse {
                line,
                message: format!(
                    "latency must be a positive number, got {:?}",
                    record.get(lat_col).unwrap_or("")
                ),
            })?;
        out.entry(cores).or_default().push(latency);
    }
    if out.is_empty() {
        return Err(ProfileError::InvalidSamples("samples file has no rows".into()));
    }
    Ok(out)
}

/// Draw `n` latencies from `distribution` on a stream fixed by `seed`.
pub fn synthetic_samples(distribution: &Distribution, n: usize, seed: u64) -> Vec<f64> {
    let mut rng = stream_rng(seed, SAMPLES_STREAM);
    (0..n)
        .map(|_| distribution.sample(&mut rng).max(f64::MIN_POSITIVE))
        .collect()
}

#[cfg(test)]
mod tests;
