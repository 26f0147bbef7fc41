//! Cross-module checks through the public API: samples → profile → plan → replay.

use std::collections::BTreeMap;

use proptest::prelude::*;

use autoscale_core::estimator::estimate;
use autoscale_core::forecaster::{FitOptions, SeasonalityParams};
use autoscale_core::profiler::{build_profile, synthetic_samples, Distribution, FitConfig, SetupTimes};
use autoscale_core::scenario::{CompensatorSettings, ForecastMode, ForecasterSettings, Scenario};
use autoscale_core::simulator::billed_periods;
use autoscale_core::trace::{generate_synthetic, read_trace, write_trace_to, SyntheticSpec, TraceSchema};
use autoscale_core::{ExecutionProfile, Family, FlavorCatalog, SimulationConfig, SloSpec, VmFlavor, WorkloadTrace};

const SETUP: SetupTimes = SetupTimes {
    vm: 40.0,
    cd: 20.0,
    ml: 30.0,
    mu: 0.0,
};

fn fitted_profile() -> ExecutionProfile {
    let mut by_core = BTreeMap::new();
    for (cores, mean, sd) in [(2, 0.5, 0.04), (4, 0.3, 0.03), (8, 0.2, 0.02)] {
        let d = Distribution::from_params(Family::Normal, &[mean, sd]).unwrap();
        by_core.insert(cores, synthetic_samples(&d, 2000, u64::from(cores)));
    }
    build_profile("svc", &by_core, 0.95, 0.0, SETUP, &FitConfig::default()).unwrap().0
}

fn catalog() -> FlavorCatalog {
    FlavorCatalog::new(vec![
        VmFlavor::new("small", 2, 4.0, 0.10),
        VmFlavor::new("medium", 4, 8.0, 0.18),
        VmFlavor::new("large", 8, 16.0, 0.40),
    ])
    .unwrap()
}

fn wave(len: usize, base: f64, amp: f64, seed: u64) -> WorkloadTrace {
    generate_synthetic(&SyntheticSpec {
        base_level: base,
        harmonics: vec![SeasonalityParams {
            period: 120.0,
            order: 1,
            a: vec![0.0, 0.0],
            b: vec![amp],
        }],
        noise_sigma: base * 0.05,
        seed,
        ..SyntheticSpec::constant(0.0, len)
    })
    .unwrap()
}

fn oracle_scenario(trace: WorkloadTrace, seed: u64) -> Scenario {
    let mut simulation = SimulationConfig::default();
    simulation.vertical.enabled = false;
    simulation.seed = seed;
    Scenario {
        range: 0..trace.len(),
        trace,
        profile: fitted_profile(),
        catalog: catalog(),
        slo: SloSpec::new(1.0, 0.0),
        fit: FitOptions::new(120.0, 2),
        forecaster: ForecasterSettings::default(),
        compensator: CompensatorSettings::default(),
        simulation,
    }
}

#[test]
fn fitted_profile_plans_and_replays_within_the_slo() {
    let sc = oracle_scenario(wave(300, 200.0, 80.0, 1), 3);
    let r = sc.run(ForecastMode::Oracle).unwrap().report;
    let s = &r.summary;

    assert_eq!(s.requests, sc.trace.total());
    assert_eq!(s.requests as usize, r.requests.len());
    assert!(s.slo_hits <= s.served && s.served <= s.requests);
    assert!(s.slo_compliance >= 0.99, "compliance {}", s.slo_compliance);
    assert_eq!(s.illegal_transitions, 0);

    // Cost is exactly the sum of started lease periods.
    let tau = sc.simulation.provisioner.tau_vm_s;
    let periods: u64 = r.deployments.iter().map(|d| billed_periods(d, tau)).sum();
    let cost: f64 = r.deployments.iter().map(|d| billed_periods(d, tau) as f64 * d.cost_per_period).sum();
    assert_eq!(s.vm_periods_billed, periods);
    assert!((s.total_cost - cost).abs() < 1e-9);
    assert_eq!(s.vms_deployed as usize, r.deployments.len());
}

#[test]
fn trace_csv_round_trips() {
    let trace = wave(200, 50.0, 20.0, 4);
    let mut buf = Vec::new();
    write_trace_to(&trace, &mut buf).unwrap();
    let (back, report) = read_trace(buf.as_slice(), &TraceSchema::default()).unwrap();
    assert_eq!(back, trace);
    assert_eq!(report.rows, 200);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn plan_covers_demand_with_no_spare_vm(y in 0.0f64..500.0) {
        let (profile, catalog, slo) = (fitted_profile(), catalog(), SloSpec::new(1.0, 0.0));
        let r = estimate(&catalog, &profile, &slo, y).unwrap();
        let flavor = catalog.get(r.i_star);
        prop_assert!((r.alpha * r.n_req) as f64 >= y - 1e-9);
        if r.alpha > 0 {
            prop_assert!((((r.alpha - 1) * r.n_req) as f64) < y);
        }
        prop_assert!((r.total_cost - r.alpha as f64 * flavor.cost).abs() < 1e-9);
        prop_assert!(r.lower_bound_cost <= r.total_cost + 1e-9);
    }

    #[test]
    fn catalog_csv_round_trips(rows in prop::collection::vec((1u32..=64, 0.5f64..256.0, 0.01f64..10.0), 1..6)) {
        let flavors = rows
            .iter()
            .enumerate()
            .map(|(i, &(c, m, k))| VmFlavor::new(format!("f{i}"), c, m, k))
            .collect();
        let catalog = FlavorCatalog::new(flavors).unwrap();
        let back = FlavorCatalog::read(catalog.to_csv().as_bytes()).unwrap();
        prop_assert_eq!(back, catalog);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn every_request_is_accounted_for(seed in 0u64..1000, base in 20.0f64..120.0) {
        let sc = oracle_scenario(wave(120, base, base * 0.4, seed), seed);
        let r = sc.run(ForecastMode::Oracle).unwrap().report;
        prop_assert_eq!(r.summary.requests, sc.trace.total());
        let served = r.requests.iter().filter(|q| q.end_s.is_some()).count() as u64;
        prop_assert_eq!(served, r.summary.served);
        for q in &r.requests {
            if let (Some(start), Some(end)) = (q.start_s, q.end_s) {
                prop_assert!(q.arrival_s <= start && start <= end);
            }
        }
    }
}
