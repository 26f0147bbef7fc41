use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::ForecastError;

const SECONDS_PER_DAY: i64 = 86_400;

/// Logistic trend `g(t) = C / (1 + exp(-k (t - m)))`, with `t` in intervals.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrendParams {
    /// Carrying capacity `C` (requests per interval).
    pub capacity: f64,
    /// Growth rate `k` (per interval).
    pub growth: f64,
    /// Offset `m` (interval index where the curve crosses `C/2`).
    pub offset: f64,
}

impl TrendParams {
    pub fn eval(&self, t: f64) -> f64 {
        self.capacity / (1.0 + (-self.growth * (t - self.offset)).exp())
    }

    pub fn validate(&self) -> Result<(), ForecastError> {
        if !(self.capacity > 0.0 && self.capacity.is_finite()) {
            return Err(ForecastError::InvalidParams(format!(
                "trend capacity must be positive, got {}",
                self.capacity
            )));
        }
        if !self.growth.is_finite() || !self.offset.is_finite() {
            return Err(ForecastError::InvalidParams(
                "trend growth and offset must be finite".into(),
            ));
        }
        Ok(())
    }
}

/// Fourier seasonality of period `P` and order `N`:
/// `s(t) = a0/2 + Σ_n a_n cos(2πnt/P) + b_n sin(2πnt/P)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeasonalityParams {
    pub period: f64,
    pub order: usize,
    /// `a_0 ..= a_N` (length `N + 1`).
    pub a: Vec<f64>,
    /// `b_1 ..= b_N` (length `N`).
    pub b: Vec<f64>,
}

impl SeasonalityParams {
    pub fn zeros(period: f64, order: usize) -> Self {
        Self {
            period,
            order,
            a: vec![0.0; order + 1],
            b: vec![0.0; order],
        }
    }

    pub fn validate(&self) -> Result<(), ForecastError> {
        if !(self.period > 0.0 && self.period.is_finite()) {
            return Err(ForecastError::InvalidParams(format!(
                "seasonal period must be positive, got {}",
                self.period
            )));
        }
        if self.order == 0 {
            return Err(ForecastError::InvalidParams(
                "Fourier order must be at least 1".into(),
            ));
        }
        if self.a.len() != self.order + 1 || self.b.len() != self.order {
            return Err(ForecastError::InvalidParams(format!(
                "order {} needs {} cosine and {} sine coefficients, got {} and {}",
                self.order,
                self.order + 1,
                self.order,
                self.a.len(),
                self.b.len()
            )));
        }
        Ok(())
    }

    pub fn eval(&self, t: f64) -> f64 {
        let phase = 2.0 * PI * t.rem_euclid(self.period) / self.period;
        let mut s = 0.5 * self.a[0];
        for n in 1..=self.order {
            let x = n as f64 * phase;
            s += self.a[n] * x.cos() + self.b[n - 1] * x.sin();
        }
        s
    }
}

/// One holiday: an indicator over `window_days` consecutive days starting at
/// `epoch_day`, scaled by a single coefficient `kappa`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Holiday {
    pub epoch_day: i64,
    pub window_days: u32,
    #[serde(default)]
    pub kappa: f64,
}

impl Holiday {
    pub fn new(epoch_day: i64, window_days: u32) -> Self {
        Self {
            epoch_day,
            window_days,
            kappa: 0.0,
        }
    }

    pub fn covers(&self, epoch_seconds: i64) -> bool {
        let day = epoch_seconds.div_euclid(SECONDS_PER_DAY);
        day >= self.epoch_day && day < self.epoch_day + self.window_days as i64
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct HolidaySpec {
    pub holidays: Vec<Holiday>,
}

impl HolidaySpec {
    pub fn new(holidays: Vec<Holiday>) -> Result<Self, ForecastError> {
        let spec = Self { holidays };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), ForecastError> {
        let mut days: Vec<i64> = self.holidays.iter().map(|h| h.epoch_day).collect();
        days.sort_unstable();
        if days.windows(2).any(|w| w[0] == w[1]) {
            return Err(ForecastError::InvalidParams(
                "holiday days must be pairwise distinct".into(),
            ));
        }
        if self.holidays.iter().any(|h| h.window_days == 0) {
            return Err(ForecastError::InvalidParams(
                "holiday effect window must be at least one day".into(),
            ));
        }
        Ok(())
    }

    /// Parse the holiday list format: one epoch-day per line, optionally
    /// followed by `,window_days`. Blank lines and `#` comments are ignored.
    pub fn parse(text: &str) -> Result<Self, ForecastError> {
        let mut holidays = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let mut parts = line.split(',').map(str::trim);
            let bad = |what: &str| {
                ForecastError::InvalidParams(format!("holiday line {}: {what}", lineno + 1))
            };
            let day = parts
                .next()
                .and_then(|d| d.parse::<i64>().ok())
                .ok_or_else(|| bad("expected an integer epoch day"))?;
            let window = match parts.next() {
                Some(w) => w.parse::<u32>().map_err(|_| bad("bad window length"))?,
                None => 1,
            };
            holidays.push(Holiday::new(day, window));
        }
        Self::new(holidays)
    }

    pub fn effect(&self, epoch_seconds: i64) -> f64 {
        self.holidays
            .iter()
            .filter(|h| h.covers(epoch_seconds))
            .map(|h| h.kappa)
            .sum()
    }
}

/// Point forecast and bounds for one target interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Forecast {
    pub t_target: usize,
    pub y: f64,
    pub y_low: f64,
    pub y_upp: f64,
}

/// Fitted trend + seasonality + holiday model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastModel {
    pub trend: TrendParams,
    pub seasonality: SeasonalityParams,
    /// Additional seasonal blocks (e.g. weekly), summed into `s(t)`; their
    /// `a_0` is pinned to zero since the primary block carries the level.
    #[serde(default)]
    pub extra_seasonality: Vec<SeasonalityParams>,
    #[serde(default)]
    pub holidays: HolidaySpec,
    pub residual_q05: f64,
    pub residual_q95: f64,
    /// Training window `[start, end)` in trace interval indices.
    pub trained_window: (usize, usize),
    pub start_epoch: i64,
    pub resolution_s: u32,
    /// Time taken to obtain a forecast, as used for the setup horizon.
    pub t_forecast_s: f64,
    #[serde(default)]
    pub warnings: Vec<String>,
}

impl ForecastModel {
    pub fn trend_at(&self, t: f64) -> f64 {
        self.trend.eval(t)
    }

    pub fn seasonal_at(&self, t: f64) -> f64 {
        self.seasonality.eval(t) + self.extra_seasonality.iter().map(|s| s.eval(t)).sum::<f64>()
    }

    pub fn holiday_at(&self, t: usize) -> f64 {
        self.holidays.effect(self.epoch_of(t))
    }

    pub fn epoch_of(&self, t: usize) -> i64 {
        self.start_epoch + t as i64 * self.resolution_s as i64
    }

    /// Unclamped model value `g(t) + s(t) + h(t)`.
    pub fn raw_value(&self, t: usize) -> f64 {
        let tf = t as f64;
        self.trend_at(tf) + self.seasonal_at(tf) + self.holiday_at(t)
    }

    pub fn window_len(&self) -> usize {
        self.trained_window.1 - self.trained_window.0
    }

    /// Forecast for interval `t_target`, which must not precede the end of the
    /// training window.
    pub fn predict(&self, t_target: usize) -> Result<Forecast, ForecastError> {
        if t_target < self.trained_window.1 {
            return Err(ForecastError::Direction {
                target: t_target,
                window_end: self.trained_window.1,
            });
        }
        Ok(self.predict_unchecked(t_target))
    }

    /// Same as [`predict`](Self::predict) without the direction check; used for
    /// in-sample diagnostics.
    pub fn predict_unchecked(&self, t_target: usize) -> Forecast {
        let raw = self.raw_value(t_target);
        let y = raw.max(0.0);
        let y_low = (raw + self.residual_q05).max(0.0).min(y);
        let y_upp = (raw + self.residual_q95).max(y);
        Forecast {
            t_target,
            y,
            y_low,
            y_upp,
        }
    }
}
