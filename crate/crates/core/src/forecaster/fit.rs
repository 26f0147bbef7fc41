use nalgebra::{DMatrix, DVector, Matrix2, Vector2};
use serde::{Deserialize, Serialize};

use super::model::{ForecastModel, Holiday, HolidaySpec, SeasonalityParams, TrendParams};
use super::ForecastError;
use crate::linalg::QrDesign;
use crate::stats::quantile;
use crate::trace::TraceWindow;

/// Headroom multiplier applied to the training maximum to obtain `C`.
pub const CAPACITY_HEADROOM: f64 = 1.2;
const GRID_POINTS: usize = 21;
const GROWTH_MIN: f64 = 1e-5;
const GROWTH_MAX: f64 = 1.0;
const REFINE_TOL: f64 = 1e-8;
const REFINE_MAX_ITERS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeasonalBlock {
    pub period: f64,
    pub order: usize,
}

/// Structural choices for a fit: primary seasonality, optional extra blocks,
/// and the holiday calendar (coefficients are learned).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    pub period: f64,
    pub order: usize,
    #[serde(default)]
    pub extra_seasonality: Vec<SeasonalBlock>,
    #[serde(default)]
    pub holidays: Vec<Holiday>,
    #[serde(default)]
    pub t_forecast_s: f64,
}

impl FitOptions {
    pub fn new(period: f64, order: usize) -> Self {
        Self {
            period,
            order,
            extra_seasonality: Vec::new(),
            holidays: Vec::new(),
            t_forecast_s: 0.0,
        }
    }

    pub fn with_holidays(mut self, holidays: &HolidaySpec) -> Self {
        self.holidays = holidays
            .holidays
            .iter()
            .map(|h| Holiday::new(h.epoch_day, h.window_days))
            .collect();
        self
    }

    /// Options that reproduce the structure of an already fitted model.
    pub fn from_model(model: &ForecastModel) -> Self {
        Self {
            period: model.seasonality.period,
            order: model.seasonality.order,
            extra_seasonality: model
                .extra_seasonality
                .iter()
                .map(|s| SeasonalBlock {
                    period: s.period,
                    order: s.order,
                })
                .collect(),
            holidays: model
                .holidays
                .holidays
                .iter()
                .map(|h| Holiday::new(h.epoch_day, h.window_days))
                .collect(),
            t_forecast_s: model.t_forecast_s,
        }
    }

    fn validate(&self, window: usize) -> Result<(), ForecastError> {
        SeasonalityParams::zeros(self.period, self.order).validate()?;
        for block in &self.extra_seasonality {
            SeasonalityParams::zeros(block.period, block.order).validate()?;
        }
        HolidaySpec {
            holidays: self.holidays.clone(),
        }
        .validate()?;
        for (period, order) in std::iter::once((self.period, self.order))
            .chain(self.extra_seasonality.iter().map(|b| (b.period, b.order)))
        {
            if order as f64 > period / 2.0 {
                return Err(ForecastError::InvalidOrder { order, period });
            }
        }
        let needed = 2 * self.order + 2;
        if window < needed {
            return Err(ForecastError::InsufficientData {
                needed,
                available: window,
            });
        }
        Ok(())
    }
}

/// A contiguous slice of an interval series positioned in absolute time.
#[derive(Debug, Clone, Copy)]
pub struct Series<'a> {
    pub values: &'a [f64],
    /// Absolute interval index of `values[0]`.
    pub start_index: usize,
    pub start_epoch: i64,
    pub resolution_s: u32,
}

impl Series<'_> {
    fn epoch_of(&self, t: usize) -> i64 {
        self.start_epoch + t as i64 * self.resolution_s as i64
    }
}

/// Fit on the training segment of a trace window.
pub fn fit(window: &TraceWindow<'_>, options: &FitOptions) -> Result<ForecastModel, ForecastError> {
    let values = window.train_values();
    fit_series(
        Series {
            values: &values,
            start_index: window.train_range().start,
            start_epoch: window.trace().start_epoch(),
            resolution_s: window.trace().resolution(),
        },
        options,
    )
}

/// Full fit: logistic trend with `C = 1.2·max`, then seasonality/holiday OLS on
/// the detrended series, then residual quantiles.
///
/// The trend's `(k, m)` are chosen to minimise the squared error of the full
/// model: for each candidate trend the linear seasonal/holiday part is
/// projected out, so the trend is not distorted by seasonal swings that do not
/// cancel over the window.
pub fn fit_series(series: Series<'_>, options: &FitOptions) -> Result<ForecastModel, ForecastError> {
    let n = series.values.len();
    options.validate(n)?;
    let design = Design::build(&series, options);
    let qr = QrDesign::new(&design.matrix).map_err(|_| ForecastError::Singular {
        order: options.order,
    })?;
    let max = series.values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let capacity = CAPACITY_HEADROOM * if max > 0.0 { max } else { 1.0 };
    let trend = search_trend(&series, &qr, capacity);
    finish(series, options, design, &qr, trend)
}

/// Fit seasonality, holidays and residual quantiles for a given trend.
pub fn fit_with_trend(
    series: Series<'_>,
    options: &FitOptions,
    trend: TrendParams,
) -> Result<ForecastModel, ForecastError> {
    options.validate(series.values.len())?;
    trend.validate()?;
    let design = Design::build(&series, options);
    let qr = QrDesign::new(&design.matrix).map_err(|_| ForecastError::Singular {
        order: options.order,
    })?;
    finish(series, options, design, &qr, trend)
}

fn finish(
    series: Series<'_>,
    options: &FitOptions,
    design: Design,
    qr: &QrDesign,
    trend: TrendParams,
) -> Result<ForecastModel, ForecastError> {
    let n = series.values.len();
    let detrended = DVector::from_fn(n, |i, _| {
        series.values[i] - trend.eval((series.start_index + i) as f64)
    });
    let beta = qr.solve(&detrended);
    let fitted = &design.matrix * &beta;
    let residuals: Vec<f64> = (0..n).map(|i| detrended[i] - fitted[i]).collect();

    let mut col = 0;
    let mut take_block = |period: f64, order: usize, with_level: bool| {
        let mut s = SeasonalityParams::zeros(period, order);
        if with_level {
            s.a[0] = beta[col];
            col += 1;
        }
        for k in 1..=order {
            s.a[k] = beta[col];
            s.b[k - 1] = beta[col + 1];
            col += 2;
        }
        s
    };
    let seasonality = take_block(options.period, options.order, true);
    let extra_seasonality: Vec<SeasonalityParams> = options
        .extra_seasonality
        .iter()
        .map(|b| take_block(b.period, b.order, false))
        .collect();

    let mut warnings = Vec::new();
    if (n as f64) < 2.0 * options.period {
        warnings.push(format!(
            "training window of {n} intervals is shorter than two periods ({})",
            2.0 * options.period
        ));
    }
    let mut holidays = Vec::with_capacity(options.holidays.len());
    for (h, column) in options.holidays.iter().zip(&design.holiday_columns) {
        let kappa = match column {
            Some(c) => beta[*c],
            None => {
                warnings.push(format!(
                    "holiday on epoch day {} has no support in the training window; effect set to 0",
                    h.epoch_day
                ));
                0.0
            }
        };
        holidays.push(Holiday { kappa, ..*h });
    }

    Ok(ForecastModel {
        trend,
        seasonality,
        extra_seasonality,
        holidays: HolidaySpec { holidays },
        residual_q05: quantile(&residuals, 0.05),
        residual_q95: quantile(&residuals, 0.95),
        trained_window: (series.start_index, series.start_index + n),
        start_epoch: series.start_epoch,
        resolution_s: series.resolution_s,
        t_forecast_s: options.t_forecast_s,
        warnings,
    })
}

struct Design {
    matrix: DMatrix<f64>,
    /// Column of each holiday indicator, `None` when the holiday does not
    /// touch the window.
    holiday_columns: Vec<Option<usize>>,
}

impl Design {
    fn build(series: &Series<'_>, options: &FitOptions) -> Self {
        let n = series.values.len();
        let ts: Vec<usize> = (series.start_index..series.start_index + n).collect();
        let mut columns: Vec<Vec<f64>> = vec![vec![0.5; n]];
        let mut push_fourier = |period: f64, order: usize| {
            for k in 1..=order {
                let (c, s): (Vec<f64>, Vec<f64>) = ts
                    .iter()
                    .map(|&t| {
                        let x = 2.0 * std::f64::consts::PI * k as f64 * (t as f64).rem_euclid(period)
                            / period;
                        (x.cos(), x.sin())
                    })
                    .unzip();
                columns.push(c);
                columns.push(s);
            }
        };
        push_fourier(options.period, options.order);
        for block in &options.extra_seasonality {
            push_fourier(block.period, block.order);
        }
        let mut holiday_columns = Vec::with_capacity(options.holidays.len());
        for h in &options.holidays {
            let indicator: Vec<f64> = ts
                .iter()
                .map(|&t| if h.covers(series.epoch_of(t)) { 1.0 } else { 0.0 })
                .collect();
            if indicator.iter().any(|&v| v > 0.0) {
                holiday_columns.push(Some(columns.len()));
                columns.push(indicator);
            } else {
                holiday_columns.push(None);
            }
        }
        let matrix = DMatrix::from_fn(n, columns.len(), |i, j| columns[j][i]);
        Self {
            matrix,
            holiday_columns,
        }
    }
}

/// Residual of the full model for a given trend, with the linear part
/// projected out.
fn projected_residual(series: &Series<'_>, qr: &QrDesign, trend: &TrendParams) -> DVector<f64> {
    let r = DVector::from_fn(series.values.len(), |i, _| {
        series.values[i] - trend.eval((series.start_index + i) as f64)
    });
    qr.residual(&r)
}

fn search_trend(series: &Series<'_>, qr: &QrDesign, capacity: f64) -> TrendParams {
    let n = series.values.len();
    let t0 = series.start_index as f64;
    let t1 = (series.start_index + n - 1) as f64;
    let log_lo = GROWTH_MIN.ln();
    let log_hi = GROWTH_MAX.ln();
    let growths: Vec<f64> = (0..GRID_POINTS)
        .map(|i| (log_lo + (log_hi - log_lo) * i as f64 / (GRID_POINTS - 1) as f64).exp())
        .flat_map(|k| [k, -k])
        .collect();
    let offsets: Vec<f64> = (0..GRID_POINTS)
        .map(|i| t0 + (t1 - t0) * i as f64 / (GRID_POINTS - 1) as f64)
        .collect();

    let mut best = TrendParams {
        capacity,
        growth: growths[0],
        offset: offsets[0],
    };
    let mut best_cost = f64::INFINITY;
    for &growth in &growths {
        for &offset in &offsets {
            let cand = TrendParams {
                capacity,
                growth,
                offset,
            };
            let cost = projected_residual(series, qr, &cand).norm_squared();
            if cost < best_cost {
                best_cost = cost;
                best = cand;
            }
        }
    }
    refine_trend(series, qr, best, best_cost)
}

/// Damped Gauss-Newton (Levenberg-Marquardt) refinement of `(k, m)`.
fn refine_trend(
    series: &Series<'_>,
    qr: &QrDesign,
    start: TrendParams,
    start_cost: f64,
) -> TrendParams {
    let n = series.values.len();
    // Refinement stays inside the search box: a growth beyond the grid or an
    // offset outside the window only buys an exponential tail that chases
    // noise at the window edge and extrapolates explosively.
    let t0 = series.start_index as f64;
    let t1 = (series.start_index + n - 1) as f64;
    let mut current = start;
    let mut residual = projected_residual(series, qr, &current);
    let mut cost = start_cost;
    let mut damping = 1e-3;

    for _ in 0..REFINE_MAX_ITERS {
        let c = current.capacity;
        let mut d_growth = DVector::zeros(n);
        let mut d_offset = DVector::zeros(n);
        for i in 0..n {
            let t = (series.start_index + i) as f64;
            let sig = 1.0 / (1.0 + (-current.growth * (t - current.offset)).exp());
            let slope = c * sig * (1.0 - sig);
            d_growth[i] = slope * (t - current.offset);
            d_offset[i] = -slope * current.growth;
        }
        // residual = P⊥(y - g), so its Jacobian is -P⊥ ∂g.
        let j_growth = -qr.residual(&d_growth);
        let j_offset = -qr.residual(&d_offset);
        let a = Matrix2::new(
            j_growth.dot(&j_growth),
            j_growth.dot(&j_offset),
            j_offset.dot(&j_growth),
            j_offset.dot(&j_offset),
        );
        let grad = Vector2::new(j_growth.dot(&residual), j_offset.dot(&residual));
        // Damping is relative to each diagonal entry: k and m differ in scale
        // by many orders of magnitude, so an absolute floor would swamp one.
        let diag = |v: f64| if v > 0.0 { v } else { f64::MIN_POSITIVE };
        let (d0, d1) = (diag(a[(0, 0)]), diag(a[(1, 1)]));

        let mut improved = false;
        let mut small_step = false;
        while damping < 1e12 {
            let mut lhs = a;
            lhs[(0, 0)] += damping * d0;
            lhs[(1, 1)] += damping * d1;
            let Some(step) = lhs.lu().solve(&(-grad)) else {
                damping *= 10.0;
                continue;
            };
            let cand = TrendParams {
                capacity: c,
                growth: (current.growth + step[0]).clamp(-GROWTH_MAX, GROWTH_MAX),
                offset: (current.offset + step[1]).clamp(t0, t1),
            };
            let step = Vector2::new(cand.growth - current.growth, cand.offset - current.offset);
            if !cand.growth.is_finite() || !cand.offset.is_finite() {
                damping *= 10.0;
                continue;
            }
            let cand_residual = projected_residual(series, qr, &cand);
            let cand_cost = cand_residual.norm_squared();
            if cand_cost < cost {
                let rel_gain = (cost - cand_cost) / cost.max(f64::MIN_POSITIVE);
                small_step = rel_gain < REFINE_TOL
                    || (step[0].abs() <= REFINE_TOL * (current.growth.abs() + REFINE_TOL)
                        && step[1].abs() <= REFINE_TOL * (current.offset.abs() + 1.0));
                current = cand;
                residual = cand_residual;
                cost = cand_cost;
                damping = (damping / 10.0).max(1e-12);
                improved = true;
                break;
            }
            damping *= 10.0;
        }
        if !improved || small_step {
            break;
        }
    }
    current
}
