use super::*;
use proptest::prelude::*;

fn quantile_grid(d: &Distribution, n: usize) -> Vec<f64> {
    // Deterministic "perfect" sample: the (i - 0.5)/n quantiles.
    (1..=n)
        .map(|i| d.quantile((i as f64 - 0.5) / n as f64).unwrap())
        .collect()
}

#[test]
fn ks_statistic_against_hand_computed_values() {
    // Uniform(0,1) cdf on {0.1, 0.5, 0.9}: gaps are 0.1/0.233/0.1/0.167/0.233/0.1.
    let d = ks_statistic_sorted(&[0.1, 0.5, 0.9], |x| x.clamp(0.0, 1.0));
    let oracle: f64 = [0.1f64, 1.0 / 3.0 - 0.1, 0.5 - 1.0 / 3.0, 2.0 / 3.0 - 0.5, 0.9 - 2.0 / 3.0, 0.1]
        .into_iter()
        .fold(0.0, f64::max);
    assert!((d - oracle).abs() < 1e-15);
    assert!((d - 0.2333333333333333).abs() < 1e-12);
}

#[test]
fn ks_statistic_of_quantile_grid_is_half_step() {
    let d = Distribution::Exponential { rate: 3.0 };
    let xs = quantile_grid(&d, 200);
    let ks = ks_statistic_sorted(&xs, |x| d.cdf(x));
    assert!((ks - 0.5 / 200.0).abs() < 1e-9);
}

#[test]
fn selects_generating_family_on_large_samples() {
    let truths = [
        Distribution::Gamma { shape: 2.0, scale: 0.1 },
        Distribution::LogNormal { mu: -1.0, sigma: 0.5 },
        Distribution::Weibull { shape: 1.5, scale: 0.4 },
        Distribution::Exponential { rate: 5.0 },
    ];
    for (i, truth) in truths.iter().enumerate() {
        let samples = LatencySamples::new("svc", 1, synthetic_samples(truth, 5000, 100 + i as u64)).unwrap();
        let best = rank_and_select(&samples, &FitConfig::default()).unwrap();
        let tp = percentile_latency(&best, 0.95).unwrap();
        let true_tp = truth.quantile(0.95).unwrap();
        assert!(
            ((tp - true_tp) / true_tp).abs() < 0.05,
            "{truth:?}: fitted {best:?} t_p {tp} vs {true_tp}"
        );
    }
}

#[test]
fn gamma_mle_recovers_parameters() {
    let truth = Distribution::Gamma { shape: 2.0, scale: 0.1 };
    let data = synthetic_samples(&truth, 20_000, 7);
    match fit_mle(&data, Family::Gamma, &FitConfig::default()).unwrap() {
        Distribution::Gamma { shape, scale } => {
            assert!((shape - 2.0).abs() < 0.08, "shape {shape}");
            assert!((scale - 0.1).abs() < 0.005, "scale {scale}");
        }
        other => panic!("{other:?}"),
    }
}

#[test]
fn weibull_mle_satisfies_score_equations() {
    let truth = Distribution::Weibull { shape: 2.5, scale: 0.3 };
    let data = synthetic_samples(&truth, 3000, 11);
    let Distribution::Weibull { shape: k, scale: lam } = fit_mle(&data, Family::Weibull, &FitConfig::default()).unwrap() else {
        panic!()
    };
    // Independent check of the two score equations at the optimum.
    let n = data.len() as f64;
    let s_k: f64 = data
        .iter()
        .map(|&x| 1.0 / k + (x / lam).ln() - (x / lam).powf(k) * (x / lam).ln())
        .sum::<f64>()
        / n;
    let s_l: f64 = data.iter().map(|&x| (x / lam).powf(k) - 1.0).sum::<f64>() / n;
    assert!(s_k.abs() < 1e-6, "{s_k}");
    assert!(s_l.abs() < 1e-6, "{s_l}");
}

#[test]
fn tie_breaks_on_parameter_count_then_name() {
    let fitted = |d: Distribution, ks: f64| Candidate {
        family: d.family(),
        result: Ok(FittedDistribution { distribution: d, ks_statistic: ks }),
    };
    let c = vec![
        fitted(Distribution::Gamma { shape: 1.0, scale: 1.0 }, 0.05),
        fitted(Distribution::Exponential { rate: 1.0 }, 0.05),
        fitted(Distribution::Normal { mean: 1.0, std_dev: 1.0 }, 0.05),
    ];
    assert_eq!(select_best(&c, 0.0).unwrap().distribution.family(), Family::Exponential);
    let c = vec![
        fitted(Distribution::Weibull { shape: 1.0, scale: 1.0 }, 0.05),
        fitted(Distribution::Normal { mean: 1.0, std_dev: 1.0 }, 0.05),
        fitted(Distribution::Gamma { shape: 1.0, scale: 1.0 }, 0.05),
    ];
    assert_eq!(select_best(&c, 0.0).unwrap().distribution.family(), Family::Gamma);
    // Within the tie band the one-parameter family wins; outside it, the
    // smaller statistic does.
    let c = vec![
        fitted(Distribution::Weibull { shape: 1.0, scale: 1.0 }, 0.040),
        fitted(Distribution::Exponential { rate: 1.0 }, 0.045),
    ];
    assert_eq!(select_best(&c, 0.01).unwrap().distribution.family(), Family::Exponential);
    assert_eq!(select_best(&c, 0.001).unwrap().distribution.family(), Family::Weibull);
}

#[test]
fn too_few_samples_fails_every_family() {
    let s = LatencySamples::new("svc", 2, vec![0.1, 0.2, 0.3]).unwrap();
    match rank_and_select(&s, &FitConfig::default()) {
        Err(ProfileError::AllFamiliesFailed { cores: 2, failures, .. }) => assert_eq!(failures.len(), 5),
        other => panic!("{other:?}"),
    }
}

#[test]
fn rejects_non_positive_samples() {
    assert!(LatencySamples::new("svc", 1, vec![0.1, -0.2]).is_err());
    assert!(LatencySamples::new("svc", 1, vec![0.1, f64::NAN]).is_err());
    assert!(LatencySamples::new("svc", 0, vec![0.1]).is_err());
}

#[test]
fn samples_csv_parsing() {
    let text = "cores,latency_seconds\n1,0.5\n2,0.25\n1,0.6\n";
    let m = read_samples_csv(text.as_bytes()).unwrap();
    assert_eq!(m[&1], vec![0.5, 0.6]);
    assert_eq!(m[&2], vec![0.25]);

    let bad = "cores,latency_seconds\n1,0.5\n2,-0.25\n";
    match read_samples_csv(bad.as_bytes()) {
        Err(ProfileError::Parse { line, .. }) => assert_eq!(line, 3),
        other => panic!("{other:?}"),
    }
}

#[test]
fn profile_json_round_trip_and_monotonicity_warning() {
    let mut by_core = BTreeMap::new();
    by_core.insert(1, synthetic_samples(&Distribution::Gamma { shape: 4.0, scale: 0.1 }, 500, 1));
    by_core.insert(2, synthetic_samples(&Distribution::Gamma { shape: 4.0, scale: 0.05 }, 500, 2));
    by_core.insert(4, synthetic_samples(&Distribution::Gamma { shape: 4.0, scale: 0.08 }, 500, 3));
    let times = SetupTimes { vm: 60.0, cd: 20.0, ml: 10.0, mu: 2.0 };
    let (profile, warnings) = build_profile("svc", &by_core, 0.95, 2.0, times, &FitConfig::default()).unwrap();
    assert_eq!(profile.profiled_cores(), vec![1, 2, 4]);
    assert_eq!(warnings.len(), 1, "{warnings:?}");

    let json = serde_json::to_string(&profile).unwrap();
    assert!(json.contains("\"setup_times_s\""));
    assert!(json.contains("\"t_p_s\""));
    let back: ExecutionProfile = serde_json::from_str(&json).unwrap();
    assert_eq!(back, profile);
    for c in [1, 2, 4] {
        let re = back.distribution(c).unwrap().quantile(0.95).unwrap();
        assert!((re - back.t_p(c).unwrap()).abs() <= 1e-9 * re);
    }
}

#[test]
fn profile_json_rejects_bad_params() {
    let json = r#"{"service":"s","q":0.95,"min_mem_gb":1,"setup_times_s":{"vm":1,"cd":1,"ml":1},
        "per_core":[{"cores":1,"family":"gamma","params":[-1,1],"ks":0.1,"t_p_s":1}]}"#;
    assert!(serde_json::from_str::<ExecutionProfile>(json).is_err());
    let json = r#"{"service":"s","q":0.95,"min_mem_gb":1,"setup_times_s":{"vm":1,"cd":1,"ml":1},
        "per_core":[{"cores":1,"family":"cauchy","params":[1,1],"ks":0.1,"t_p_s":1}]}"#;
    assert!(serde_json::from_str::<ExecutionProfile>(json).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn ks_in_unit_interval_and_quantile_monotone(
        shape in 0.5f64..8.0, scale in 0.01f64..2.0, seed in 0u64..1000,
    ) {
        let d = Distribution::Gamma { shape, scale };
        let s = LatencySamples::new("p", 1, synthetic_samples(&d, 60, seed)).unwrap();
        for c in fit_all(&s, &FitConfig::default()) {
            if let Ok(f) = c.result {
                prop_assert!((0.0..=1.0).contains(&f.ks_statistic));
                let q90 = f.distribution.quantile(0.90).unwrap();
                let q95 = f.distribution.quantile(0.95).unwrap();
                let q99 = f.distribution.quantile(0.99).unwrap();
                prop_assert!(q90 <= q95 && q95 <= q99);
            }
        }
    }
}
