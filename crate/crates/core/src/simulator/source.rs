use std::collections::BTreeMap;

use crate::compensator::{compensate, CompensatorModel, ErrorRing};
use crate::forecaster::{ForecastError, RollingForecaster};
use crate::trace::WorkloadTrace;

/// A forecast as used by the provisioner, in requests per interval.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ForecastValue {
    pub raw: f64,
    /// After compensation; equals `raw` when no compensator is active.
    pub adjusted: f64,
}

/// Workload forecasts driving the provisioning loop. Indices are absolute
/// trace intervals.
pub trait WorkloadSource {
    /// Forecast interval `target` knowing intervals before `now`. `None`
    /// marks the tick as degraded.
    fn forecast(&mut self, now: usize, target: usize) -> Option<ForecastValue>;

    /// Interval `index` has been observed with `actual` requests.
    fn observe(&mut self, _index: usize, _actual: f64) {}
}

/// Perfect foresight: the true future count.
#[derive(Debug, Clone)]
pub struct OracleSource {
    counts: Vec<u64>,
}

impl OracleSource {
    pub fn new(trace: &WorkloadTrace) -> Self {
        Self {
            counts: trace.counts().to_vec(),
        }
    }
}

impl WorkloadSource for OracleSource {
    fn forecast(&mut self, _now: usize, target: usize) -> Option<ForecastValue> {
        self.counts.get(target).map(|&c| ForecastValue {
            raw: c as f64,
            adjusted: c as f64,
        })
    }
}

/// Rolling forecaster followed by a compensator fed with realized errors.
#[derive(Debug, Clone)]
pub struct CompensatedSource {
    forecaster: RollingForecaster,
    model: CompensatorModel,
    ring: ErrorRing,
    /// Raw forecasts awaiting their actual value, by target interval.
    pending: BTreeMap<usize, f64>,
    last_error: Option<ForecastError>,
}

impl CompensatedSource {
    pub fn new(forecaster: RollingForecaster, model: CompensatorModel) -> Self {
        let ring = ErrorRing::new(model.ring_size());
        Self {
            forecaster,
            model,
            ring,
            pending: BTreeMap::new(),
            last_error: None,
        }
    }

    pub fn ring(&self) -> &ErrorRing {
        &self.ring
    }

    pub fn forecaster(&self) -> &RollingForecaster {
        &self.forecaster
    }

    /// Most recent forecaster failure (the tick that hit it was degraded).
    pub fn last_error(&self) -> Option<&ForecastError> {
        self.last_error.as_ref()
    }

    /// Fill the error ring from the intervals just before `start`, forecasting
    /// each one `horizon` intervals ahead as the live loop would.
    pub fn prime(&mut self, trace: &WorkloadTrace, start: usize, horizon: usize) {
        let first = start.saturating_sub(self.ring.capacity());
        for target in first..start {
            let Some(now) = target.checked_sub(horizon) else { continue };
            if let Ok(f) = self.forecaster.forecast(now, target) {
                self.ring.push_error(trace.counts()[target] as f64, f.y);
            }
        }
    }
}

impl WorkloadSource for CompensatedSource {
    fn forecast(&mut self, now: usize, target: usize) -> Option<ForecastValue> {
        match self.forecaster.forecast(now, target) {
            Ok(f) => {
                self.pending.insert(target, f.y);
                let adjusted = compensate(&self.model, &f, &self.ring).y;
                Some(ForecastValue { raw: f.y, adjusted })
            }
            Err(e) => {
                self.last_error = Some(e);
                None
            }
        }
    }

    fn observe(&mut self, index: usize, actual: f64) {
        if let Some(raw) = self.pending.remove(&index) {
            self.ring.push_error(actual, raw);
        }
        // Forecasts for intervals already past can no longer be scored.
        self.pending = self.pending.split_off(&(index + 1));
    }
}
