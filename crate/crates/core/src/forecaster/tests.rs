use super::*;
use crate::stats::mean_absolute_error;
use crate::trace::{generate_synthetic, split, synthetic_signal, LevelShift, SyntheticSpec, WorkloadTrace};
use proptest::prelude::*;

fn series(values: &[f64], start_index: usize) -> Series<'_> {
    Series {
        values,
        start_index,
        start_epoch: 0,
        resolution_s: 60,
    }
}

fn harmonic(period: f64, a: &[f64], b: &[f64]) -> SeasonalityParams {
    SeasonalityParams {
        period,
        order: b.len(),
        a: a.to_vec(),
        b: b.to_vec(),
    }
}

fn assert_identities(m: &ForecastModel) {
    let g = m.trend;
    assert!((g.eval(g.offset) - g.capacity / 2.0).abs() < 1e-9, "{g:?}");
    for t in [0.0, 13.0, 777.0, 5000.5] {
        let p = m.seasonality.period;
        assert!((m.seasonal_at(t) - m.seasonal_at(t + p)).abs() < 1e-9 || !m.extra_seasonality.is_empty());
        assert!((m.seasonality.eval(t) - m.seasonality.eval(t + p)).abs() < 1e-9);
    }
}

#[test]
fn constant_series_forecasts_constant() {
    let values = vec![100.0; 600];
    let m = fit_series(series(&values, 0), &FitOptions::new(240.0, 1)).unwrap();
    assert_identities(&m);
    assert_eq!(m.trend.capacity, 120.0);
    for t in [600, 700, 5000] {
        let f = m.predict(t).unwrap();
        assert!((f.y - 100.0).abs() < 1e-6, "{f:?}");
        assert!(f.y_upp - f.y_low < 1e-6);
    }
}

#[test]
fn flat_fit_on_constant_50() {
    let values = vec![50.0; 300];
    let m = fit_series(series(&values, 0), &FitOptions::new(100.0, 2)).unwrap();
    let f = m.predict(300).unwrap();
    assert!((f.y - 50.0).abs() < 1e-6);
}

#[test]
fn noiseless_sinusoid_one_period_ahead() {
    let period = 240.0;
    let amplitude = 50.0;
    let values: Vec<f64> = (0..960)
        .map(|t| 200.0 + amplitude * (2.0 * std::f64::consts::PI * t as f64 / period).sin())
        .collect();
    let m = fit_series(series(&values, 0), &FitOptions::new(period, 3)).unwrap();
    assert_identities(&m);
    for t in 960..1200 {
        let truth = 200.0 + amplitude * (2.0 * std::f64::consts::PI * t as f64 / period).sin();
        let err = (m.predict(t).unwrap().y - truth).abs();
        assert!(err < 0.01 * amplitude, "t={t} err={err}");
    }
}

#[test]
fn seasonal_coefficients_recovered_given_true_trend() {
    let trend = TrendParams {
        capacity: 400.0,
        growth: 0.002,
        offset: 800.0,
    };
    let truth = harmonic(240.0, &[60.0, 30.0, -10.0, 4.0], &[20.0, 5.0, -3.0]);
    let spec = SyntheticSpec {
        trend: Some(trend),
        harmonics: vec![truth.clone()],
        ..SyntheticSpec::constant(0.0, 1440)
    };
    let signal = synthetic_signal(&spec).unwrap();
    let m = fit_with_trend(series(&signal, 0), &FitOptions::new(240.0, 3), trend).unwrap();
    for (got, want) in m.seasonality.a.iter().zip(&truth.a) {
        assert!((got - want).abs() < 1e-3, "a: {got} vs {want}");
    }
    for (got, want) in m.seasonality.b.iter().zip(&truth.b) {
        assert!((got - want).abs() < 1e-3, "b: {got} vs {want}");
    }

    // Full two-stage fit on the same data: trend RMSE within 1% of the signal scale.
    let full = fit_series(series(&signal, 0), &FitOptions::new(240.0, 3)).unwrap();
    assert_identities(&full);
    let scale = signal.iter().copied().fold(0.0, f64::max);
    let rmse = ((0..signal.len())
        .map(|t| (full.raw_value(t) - signal[t]).powi(2))
        .sum::<f64>()
        / signal.len() as f64)
        .sqrt();
    assert!(rmse < 0.01 * scale, "rmse {rmse} scale {scale}");
}

/// Noiseless signal whose capacity equals the fitter's `1.2·max` rule on the
/// first `train` intervals, so it lies inside the fitted model family.
fn in_family_signal(capacity: f64, growth: f64, offset: f64, seasonal: SeasonalityParams, len: usize, train: usize) -> Vec<f64> {
    let trend = TrendParams { capacity, growth, offset };
    let shape = synthetic_signal(&SyntheticSpec {
        trend: Some(trend),
        harmonics: vec![seasonal.clone()],
        ..SyntheticSpec::constant(0.0, len)
    })
    .unwrap();
    let max = shape[..train].iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let level = capacity / CAPACITY_HEADROOM - max;
    let signal: Vec<f64> = shape.iter().map(|v| v + level).collect();
    assert!(signal.iter().all(|&v| v > 0.0));
    signal
}

#[test]
fn noiseless_model_family_heldout_mape_below_one_percent() {
    let cases = [
        (3000.0, 0.0008, 2100.0, harmonic(240.0, &[0.0, 300.0, 80.0, -40.0], &[150.0, -60.0, 25.0])),
        (900.0, 0.0015, 2000.0, harmonic(240.0, &[0.0, 60.0, 10.0, 0.0], &[30.0, -15.0, 5.0])),
        (1500.0, -0.0005, 1200.0, harmonic(240.0, &[0.0, 40.0, 0.0, 5.0], &[0.0, 20.0, -8.0])),
    ];
    for (capacity, growth, offset, seasonal) in cases {
        let signal = in_family_signal(capacity, growth, offset, seasonal, 3000, 2400);
        let m = fit_series(series(&signal[..2400], 0), &FitOptions::new(240.0, 3)).unwrap();
        assert_identities(&m);
        assert_eq!(m.trend.capacity, capacity);
        let ape: Vec<f64> = (2400..3000)
            .map(|t| (m.predict(t).unwrap().y - signal[t]).abs() / signal[t])
            .collect();
        let mape = ape.iter().sum::<f64>() / ape.len() as f64 * 100.0;
        assert!(mape < 1.0, "k={growth}: MAPE {mape}%");
    }
}

#[test]
fn holiday_spike_coefficient() {
    // Six days at 60 s resolution with P = 1440, a +200 spike on day 3.
    let day = 1440usize;
    let values: Vec<f64> = (0..6 * day)
        .map(|t| {
            let base = 300.0 + 80.0 * (2.0 * std::f64::consts::PI * t as f64 / 1440.0).cos();
            if t / day == 3 {
                base + 200.0
            } else {
                base
            }
        })
        .collect();
    let holidays = HolidaySpec::new(vec![Holiday::new(3, 1), Holiday::new(40, 1)]).unwrap();
    let m = fit_series(series(&values, 0), &FitOptions::new(1440.0, 2).with_holidays(&holidays)).unwrap();
    assert!((m.holidays.holidays[0].kappa - 200.0).abs() < 1.0, "{:?}", m.holidays);
    // The unsupported holiday gets a zero effect and a warning.
    assert_eq!(m.holidays.holidays[1].kappa, 0.0);
    assert!(m.warnings.iter().any(|w| w.contains("no support")));
}

#[test]
fn holiday_file_parsing() {
    let spec = HolidaySpec::parse("# days\n19000\n19010, 3\n\n").unwrap();
    assert_eq!(spec.holidays.len(), 2);
    assert_eq!(spec.holidays[1].window_days, 3);
    assert!(HolidaySpec::parse("19000\n19000\n").is_err());
    assert!(HolidaySpec::parse("19000,0\n").is_err());
}

#[test]
fn fit_errors() {
    let values = vec![10.0; 20];
    assert!(matches!(
        fit_series(series(&values, 0), &FitOptions::new(240.0, 10)),
        Err(ForecastError::InsufficientData { .. })
    ));
    assert!(matches!(
        fit_series(series(&values, 0), &FitOptions::new(6.0, 4)),
        Err(ForecastError::InvalidOrder { .. })
    ));
    let values = vec![10.0; 100];
    let m = fit_series(series(&values, 0), &FitOptions::new(20.0, 2)).unwrap();
    assert!(matches!(m.predict(50), Err(ForecastError::Direction { .. })));
}

#[test]
fn short_window_warns() {
    let values = vec![10.0; 300];
    let m = fit_series(series(&values, 0), &FitOptions::new(240.0, 2)).unwrap();
    assert!(m.warnings.iter().any(|w| w.contains("shorter than two periods")));
}

#[test]
fn predict_bounds_bracket_and_clamp() {
    let values: Vec<f64> = (0..480).map(|t| if t % 2 == 0 { 0.0 } else { 8.0 }).collect();
    let m = fit_series(series(&values, 0), &FitOptions::new(240.0, 2)).unwrap();
    assert!(m.residual_q05 <= m.residual_q95);
    for t in 480..600 {
        let f = m.predict(t).unwrap();
        assert!(0.0 <= f.y_low && f.y_low <= f.y && f.y <= f.y_upp, "{f:?}");
    }
}

#[test]
fn retrain_is_deterministic_and_updates_capacity() {
    let trace = WorkloadTrace::from_counts([vec![50u64; 600], vec![100u64; 600]].concat()).unwrap();
    let values = trace.values();
    let options = FitOptions::new(240.0, 2);
    let m = fit_series(series(&values[..600], 0), &options).unwrap();
    assert_eq!(m.trend.capacity, 60.0);

    let again = fit_series(series(&values[..600], 0), &options).unwrap();
    assert_eq!(serde_json::to_string(&m).unwrap(), serde_json::to_string(&again).unwrap());

    let r = retrain_rolling(&m, &trace, 1200).unwrap();
    assert_eq!(r.trained_window, (600, 1200));
    assert_eq!(r.trend.capacity, 120.0);
    assert_eq!(r.seasonality.order, 2);
    assert_eq!(r.seasonality.period, 240.0);
    assert!(matches!(retrain_rolling(&m, &trace, 600), Err(ForecastError::NotAdvanced { .. })));
    assert!(matches!(retrain_rolling(&m, &trace, 5000), Err(ForecastError::OutOfRange { .. })));
}

#[test]
fn rolling_tracks_regime_shift_within_two_windows() {
    let w = 480;
    let spec = SyntheticSpec {
        base_level: 200.0,
        harmonics: vec![harmonic(240.0, &[0.0, 40.0], &[20.0])],
        level_shifts: vec![LevelShift { at: 1500, delta: 150.0 }],
        ..SyntheticSpec::constant(200.0, 3000)
    };
    let trace = generate_synthetic(&spec).unwrap();
    let signal = synthetic_signal(&spec).unwrap();
    let mut rf = RollingForecaster::start(&trace, FitOptions::new(240.0, 1), w, 1, 1000).unwrap();
    for now in 1000..(1500 + 2 * w) {
        rf.forecast(now, now).unwrap();
    }
    let now = 1500 + 2 * w;
    for target in now..now + 60 {
        let f = rf.forecast(now, target).unwrap();
        assert!((f.y - signal[target]).abs() < 0.05 * signal[target], "{target}: {} vs {}", f.y, signal[target]);
    }
}

#[test]
fn rolling_forecaster_retrains_on_schedule() {
    let trace = WorkloadTrace::from_counts(vec![30; 1000]).unwrap();
    let mut rf = RollingForecaster::start(&trace, FitOptions::new(60.0, 1), 200, 10, 300).unwrap();
    for now in 300..400 {
        rf.forecast(now, now + 2).unwrap();
    }
    assert_eq!(rf.retrains(), 9);
    assert_eq!(rf.model().trained_window, (190, 390));
}

#[test]
fn tune_single_cell_and_grid() {
    let spec = SyntheticSpec {
        harmonics: vec![harmonic(120.0, &[0.0, 40.0, 10.0], &[20.0, 5.0])],
        noise_sigma: 2.0,
        seed: 3,
        ..SyntheticSpec::constant(300.0, 2000)
    };
    let trace = generate_synthetic(&spec).unwrap();
    let window = split(&trace, 1200, 200, 200).unwrap();
    let base = FitOptions::new(120.0, 1);
    let one = tune(&window, &base, &[2], &[600]).unwrap();
    assert_eq!((one.best_order, one.best_window), (2, 600));
    assert_eq!(one.cells.len(), 1);

    let grid = tune(&window, &base, &[1, 2, 3], &[480, 720, 1500]).unwrap();
    assert_eq!(grid.cells.len(), 9);
    // W = 1500 exceeds the available history and is excluded.
    assert!(grid.cells.iter().filter(|c| c.window == 1500).all(|c| c.error.is_some()));
    assert!(grid.best_order >= 2);
}

#[test]
fn tune_recovers_generating_order() {
    // True order 10. Windows are short relative to the parameter count of the
    // larger orders, so those overfit the training noise.
    let a: Vec<f64> = std::iter::once(0.0)
        .chain((1..=10).map(|n| 40.0 / n as f64))
        .collect();
    let b: Vec<f64> = (1..=10).map(|n| 25.0 / n as f64).collect();
    let spec = SyntheticSpec {
        harmonics: vec![harmonic(100.0, &a, &b)],
        noise_sigma: 3.0,
        seed: 11,
        ..SyntheticSpec::constant(400.0, 1000)
    };
    let trace = generate_synthetic(&spec).unwrap();
    let window = split(&trace, 600, 200, 200).unwrap();
    let report = tune(&window, &FitOptions::new(100.0, 10), &[10, 15, 20, 25, 30], &[150, 200, 300]).unwrap();
    assert_eq!(report.cells.len(), 15);
    assert_eq!(report.best_order, 10, "{:#?}", report.cells);
}

#[test]
fn model_json_round_trip() {
    let values: Vec<f64> = (0..480).map(|t| 100.0 + (t % 7) as f64).collect();
    let m = fit_series(series(&values, 0), &FitOptions::new(240.0, 2)).unwrap();
    let json = serde_json::to_string(&m).unwrap();
    let back: ForecastModel = serde_json::from_str(&json).unwrap();
    assert_eq!(back, m);
}

#[test]
fn regime_shift_raw_error_is_material() {
    // Sanity check for the compensator experiments: a rolling forecaster lags a
    // level shift, so its MAE right after the shift is well above zero.
    let spec = SyntheticSpec {
        level_shifts: vec![LevelShift { at: 800, delta: 100.0 }],
        ..SyntheticSpec::constant(100.0, 1200)
    };
    let trace = generate_synthetic(&spec).unwrap();
    let mut rf = RollingForecaster::start(&trace, FitOptions::new(60.0, 1), 400, 1, 700).unwrap();
    let (mut pred, mut act) = (Vec::new(), Vec::new());
    for now in 700..1100 {
        pred.push(rf.forecast(now, now + 3).unwrap().y);
        act.push(trace.counts()[now + 3] as f64);
    }
    assert!(mean_absolute_error(&act, &pred) > 5.0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn identities_hold_on_random_fits(
        level in 10.0f64..500.0,
        amp in 0.0f64..0.9,
        phase in 0.0f64..6.28,
        order in 1usize..4,
        sigma in 0.0f64..5.0,
        seed in 0u64..1000,
    ) {
        let spec = SyntheticSpec {
            harmonics: vec![harmonic(120.0, &[0.0, amp * level * phase.cos()], &[amp * level * phase.sin()])],
            noise_sigma: sigma,
            seed,
            ..SyntheticSpec::constant(level, 480)
        };
        let trace = generate_synthetic(&spec).unwrap();
        let values = trace.values();
        let m = fit_series(series(&values, 0), &FitOptions::new(120.0, order)).unwrap();
        let g = m.trend;
        prop_assert!((g.eval(g.offset) - g.capacity / 2.0).abs() < 1e-9);
        for t in [480usize, 500, 611] {
            let tf = t as f64;
            prop_assert!((m.seasonality.eval(tf) - m.seasonality.eval(tf + 120.0)).abs() < 1e-9);
            let f = m.predict(t).unwrap();
            prop_assert!(0.0 <= f.y_low && f.y_low <= f.y && f.y <= f.y_upp);
            prop_assert_eq!(f, m.predict(t).unwrap());
        }
        prop_assert!(m.residual_q05 <= m.residual_q95);
    }
}

