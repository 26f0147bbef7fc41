//! Workload forecasting: `y(t) = g(t) + s(t) + h(t) + ε_t` with a logistic
//! trend, Fourier seasonality and holiday indicators, refitted on a rolling
//! window.

mod fit;
mod model;
mod tune;

pub use fit::{fit, fit_series, fit_with_trend, FitOptions, SeasonalBlock, Series, CAPACITY_HEADROOM};
pub use model::{
    Forecast, ForecastModel, Holiday, HolidaySpec, SeasonalityParams, TrendParams,
};
pub use tune::{tune, TuneCell, TuneReport};

use crate::trace::WorkloadTrace;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ForecastError {
    #[error("insufficient data: need at least {needed} intervals, have {available}")]
    InsufficientData { needed: usize, available: usize },
    #[error("Fourier order {order} exceeds half the period {period}")]
    InvalidOrder { order: usize, period: f64 },
    #[error("regression matrix is singular at Fourier order {order}; try a smaller order")]
    Singular { order: usize },
    #[error("invalid forecaster parameters: {0}")]
    InvalidParams(String),
    #[error("cannot forecast interval {target}: it precedes the end of the training window ({window_end})")]
    Direction { target: usize, window_end: usize },
    #[error("rolling retrain at {now} requires advancing past the trained window end {trained_end}")]
    NotAdvanced { now: usize, trained_end: usize },
    #[error("interval {index} lies beyond the trace ({len} intervals)")]
    OutOfRange { index: usize, len: usize },
    #[error("no tuning cell produced a usable model: {0}")]
    NoViableCell(String),
}

/// Refit `model` on the `W` intervals ending at `now` (exclusive), keeping its
/// period, order and holiday calendar.
pub fn retrain_rolling(
    model: &ForecastModel,
    trace: &WorkloadTrace,
    now: usize,
) -> Result<ForecastModel, ForecastError> {
    if now <= model.trained_window.1 {
        return Err(ForecastError::NotAdvanced {
            now,
            trained_end: model.trained_window.1,
        });
    }
    let values = trace.values();
    refit_ending_at(&values, trace, model.window_len(), now, &FitOptions::from_model(model))
}

fn refit_ending_at(
    values: &[f64],
    trace: &WorkloadTrace,
    window: usize,
    now: usize,
    options: &FitOptions,
) -> Result<ForecastModel, ForecastError> {
    if now > values.len() {
        return Err(ForecastError::OutOfRange {
            index: now,
            len: values.len(),
        });
    }
    if window > now {
        return Err(ForecastError::InsufficientData {
            needed: window,
            available: now,
        });
    }
    fit_series(
        Series {
            values: &values[now - window..now],
            start_index: now - window,
            start_epoch: trace.start_epoch(),
            resolution_s: trace.resolution(),
        },
        options,
    )
}

/// Forecaster that refits every `retrain_every` intervals on the most recent
/// `window` observations. Shared by training-set construction and the
/// simulator so both see identically produced forecasts.
#[derive(Debug, Clone)]
pub struct RollingForecaster {
    trace: WorkloadTrace,
    values: Vec<f64>,
    options: FitOptions,
    window: usize,
    retrain_every: usize,
    model: ForecastModel,
    retrains: usize,
}

impl RollingForecaster {
    /// Fit the first model on `[now - window, now)`.
    pub fn start(
        trace: &WorkloadTrace,
        options: FitOptions,
        window: usize,
        retrain_every: usize,
        now: usize,
    ) -> Result<Self, ForecastError> {
        let values = trace.values();
        let model = refit_ending_at(&values, trace, window, now, &options)?;
        Ok(Self {
            trace: trace.clone(),
            values,
            options,
            window,
            retrain_every: retrain_every.max(1),
            model,
            retrains: 0,
        })
    }

    pub fn model(&self) -> &ForecastModel {
        &self.model
    }

    pub fn retrains(&self) -> usize {
        self.retrains
    }

    /// Observations up to (excluding) `now` are known. Refits when the model
    /// is `retrain_every` intervals stale, then forecasts `target`.
    pub fn forecast(&mut self, now: usize, target: usize) -> Result<Forecast, ForecastError> {
        let trained_end = self.model.trained_window.1;
        if now >= trained_end + self.retrain_every {
            self.model = refit_ending_at(&self.values, &self.trace, self.window, now, &self.options)?;
            self.retrains += 1;
        }
        self.model.predict(target)
    }
}

#[cfg(test)]
mod tests;
