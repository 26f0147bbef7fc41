//! Shared fixtures for unit tests.

use std::collections::BTreeMap;

use crate::profiler::{CoreProfile, Distribution, ExecutionProfile, FittedDistribution, SetupTimes};

/// Profile with exponential latencies whose 95th percentile is `t_p[c]`.
pub fn profile_with(t_ps: &[(u32, f64)]) -> ExecutionProfile {
    let q: f64 = 0.95;
    let per_core: BTreeMap<u32, CoreProfile> = t_ps
        .iter()
        .map(|&(c, t_p)| {
            let rate = -(-q).ln_1p() / t_p;
            (
                c,
                CoreProfile {
                    fitted: FittedDistribution {
                        distribution: Distribution::Exponential { rate },
                        ks_statistic: 0.0,
                    },
                    t_p,
                },
            )
        })
        .collect();
    ExecutionProfile {
        service: "svc".into(),
        percentile: q,
        min_mem_gb: 2.0,
        setup_times: SetupTimes::default(),
        per_core,
    }
}

/// Profile from explicit per-core distributions, t_p at the 95th percentile.
pub fn profile_from(dists: &[(u32, Distribution)], setup: SetupTimes) -> ExecutionProfile {
    let per_core = dists
        .iter()
        .map(|&(c, d)| {
            let t_p = d.quantile(0.95).unwrap();
            (
                c,
                CoreProfile {
                    fitted: FittedDistribution {
                        distribution: d,
                        ks_statistic: 0.0,
                    },
                    t_p,
                },
            )
        })
        .collect();
    ExecutionProfile {
        service: "svc".into(),
        percentile: 0.95,
        min_mem_gb: 1.0,
        setup_times: setup,
        per_core,
    }
}
