//! End-to-end experiments: forecaster training, compensator training, and
//! simulation over a trace segment.

use std::ops::Range;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::compensator::{build_training_set, train, BoostParams, CompensatorError, CompensatorKind, CompensatorModel, TrainingReport};
use crate::estimator::{select_flavor, EstimatorError, FlavorCatalog, SloSpec};
use crate::forecaster::{FitOptions, ForecastError, RollingForecaster};
use crate::profiler::ExecutionProfile;
use crate::provisioner::setup_horizon;
use crate::simulator::{run, CompensatedSource, OracleSource, SimError, SimulationConfig, SimulationReport};
use crate::trace::WorkloadTrace;

#[derive(Debug, thiserror::Error)]
pub enum ScenarioError {
    #[error(transparent)]
    Estimator(#[from] EstimatorError),
    #[error(transparent)]
    Forecast(#[from] ForecastError),
    #[error(transparent)]
    Compensator(#[from] CompensatorError),
    #[error(transparent)]
    Simulation(#[from] SimError),
    #[error("invalid scenario: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ForecastMode {
    /// Perfect foresight: the provisioner sees the true future counts.
    Oracle,
    /// Rolling forecaster followed by the trained compensator.
    Forecaster,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForecasterSettings {
    /// Rolling training window in intervals.
    pub window: usize,
    /// Refit cadence in intervals.
    pub retrain_every: usize,
}

impl Default for ForecasterSettings {
    fn default() -> Self {
        Self {
            window: 2880,
            retrain_every: 60,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CompensatorSettings {
    pub kind: CompensatorKind,
    pub ring_size: usize,
    /// Intervals right before the simulated range used to build the training set.
    pub training_intervals: usize,
    pub boost: BoostParams,
}

impl Default for CompensatorSettings {
    fn default() -> Self {
        Self {
            kind: CompensatorKind::BoostedTrees,
            ring_size: 5,
            training_intervals: 1440,
            boost: BoostParams::default(),
        }
    }
}

/// Everything one experiment needs, already loaded.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub trace: WorkloadTrace,
    pub profile: ExecutionProfile,
    pub catalog: FlavorCatalog,
    pub slo: SloSpec,
    /// Period, Fourier order and holidays of every refit.
    pub fit: FitOptions,
    pub forecaster: ForecasterSettings,
    pub compensator: CompensatorSettings,
    pub simulation: SimulationConfig,
    /// Simulated trace intervals.
    pub range: Range<usize>,
}

#[derive(Debug, Clone)]
pub struct ScenarioOutcome {
    pub report: SimulationReport,
    pub compensator: Option<TrainingReport>,
    pub forecaster_retrains: usize,
}

/// One row of the flavor sweep: a catalog restricted to `flavor`, or the
/// full catalog (`greedy`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlavorCost {
    pub policy: String,
    pub flavor: Option<String>,
    pub total_cost: Option<f64>,
    pub slo_compliance: Option<f64>,
    /// `1 − greedy / this`, when both are known.
    pub greedy_savings: Option<f64>,
    /// Why the flavor could not host the service.
    pub error: Option<String>,
}

impl Scenario {
    /// Provisioning horizon in intervals.
    pub fn horizon(&self) -> usize {
        setup_horizon(
            &self.profile.setup_times,
            self.simulation.provisioner.t_forecast_s,
            self.simulation.provisioner.resolution_s,
        )
    }

    pub fn validate(&self, mode: ForecastMode) -> Result<(), ScenarioError> {
        self.slo.validate()?;
        self.simulation.validate()?;
        if self.range.is_empty() || self.range.end > self.trace.len() {
            return Err(ScenarioError::Invalid(format!(
                "range {:?} must be non-empty and within the trace ({} intervals)",
                self.range,
                self.trace.len()
            )));
        }
        if f64::from(self.trace.resolution()) != self.simulation.provisioner.resolution_s {
            return Err(ScenarioError::Invalid(format!(
                "trace resolution {} s differs from the provisioner resolution {} s",
                self.trace.resolution(),
                self.simulation.provisioner.resolution_s
            )));
        }
        if mode == ForecastMode::Forecaster {
            let f = &self.forecaster;
            if f.window == 0 || f.retrain_every == 0 || self.compensator.ring_size == 0 {
                return Err(ScenarioError::Invalid(
                    "forecaster window, retrain cadence and ring size must be positive".into(),
                ));
            }
            let needed = self.history_needed();
            if self.range.start < needed {
                return Err(ScenarioError::Invalid(format!(
                    "forecaster mode needs {needed} intervals of history before the simulated range, got {}",
                    self.range.start
                )));
            }
        }
        Ok(())
    }

    /// Window, horizon and compensator training span preceding `range`.
    pub fn history_needed(&self) -> usize {
        self.forecaster.window + self.horizon() + self.compensator.training_intervals.max(self.compensator.ring_size)
    }

    fn forecaster_at(&self, now: usize) -> Result<RollingForecaster, ForecastError> {
        RollingForecaster::start(
            &self.trace,
            self.fit.clone(),
            self.forecaster.window,
            self.forecaster.retrain_every,
            now,
        )
    }

    /// Train the compensator on the intervals before `range` and return a
    /// primed source for the simulated range.
    pub fn compensated_source(&self) -> Result<(CompensatedSource, Option<TrainingReport>), ScenarioError> {
        let h = self.horizon();
        let c = &self.compensator;
        let train_start = self.range.start - c.training_intervals;
        let model = if c.kind == CompensatorKind::Identity {
            CompensatorModel::identity(c.ring_size)
        } else {
            let mut f = self.forecaster_at(train_start - h)?;
            let data = build_training_set(&self.trace, &mut f, train_start..self.range.start, h, c.ring_size)?;
            train(&data, c.kind, &c.boost)?
        };
        let report = model.training_report;
        let prime_from = self.range.start - c.ring_size - h;
        let mut source = CompensatedSource::new(self.forecaster_at(prime_from)?, model);
        source.prime(&self.trace, self.range.start, h);
        Ok((source, report))
    }

    pub fn run(&self, mode: ForecastMode) -> Result<ScenarioOutcome, ScenarioError> {
        self.validate(mode)?;
        select_flavor(&self.catalog, &self.profile, &self.slo)?;
        match mode {
            ForecastMode::Oracle => {
                let report = self.simulate(&self.catalog, &mut OracleSource::new(&self.trace))?;
                Ok(ScenarioOutcome {
                    report,
                    compensator: None,
                    forecaster_retrains: 0,
                })
            }
            ForecastMode::Forecaster => {
                let (mut source, compensator) = self.compensated_source()?;
                let report = self.simulate(&self.catalog, &mut source)?;
                Ok(ScenarioOutcome {
                    report,
                    compensator,
                    forecaster_retrains: source.forecaster().retrains(),
                })
            }
        }
    }

    fn simulate(
        &self,
        catalog: &FlavorCatalog,
        source: &mut dyn crate::simulator::WorkloadSource,
    ) -> Result<SimulationReport, ScenarioError> {
        Ok(run(
            &self.trace,
            self.range.clone(),
            &self.profile,
            catalog,
            &self.slo,
            source,
            &self.simulation,
        )?)
    }

    /// One simulation per catalog flavor plus the greedy choice over the full
    /// catalog, all on identical forecasts. The greedy row comes first.
    pub fn sweep_flavors(&self, mode: ForecastMode) -> Result<Vec<FlavorCost>, ScenarioError> {
        self.validate(mode)?;
        select_flavor(&self.catalog, &self.profile, &self.slo)?;
        let primed = match mode {
            ForecastMode::Oracle => None,
            ForecastMode::Forecaster => Some(self.compensated_source()?.0),
        };
        let mut policies: Vec<(String, Option<String>, FlavorCatalog)> =
            vec![("greedy".to_string(), None, self.catalog.clone())];
        for (i, f) in self.catalog.flavors().iter().enumerate() {
            policies.push((format!("only:{}", f.name), Some(f.name.clone()), self.catalog.only(i)));
        }
        let mut rows: Vec<FlavorCost> = policies
            .into_par_iter()
            .map(|(policy, flavor, catalog)| {
                let result = match &primed {
                    None => self.simulate(&catalog, &mut OracleSource::new(&self.trace)),
                    Some(src) => self.simulate(&catalog, &mut src.clone()),
                };
                match result {
                    Ok(r) => FlavorCost {
                        policy,
                        flavor: flavor.or(Some(r.summary.flavor.clone())),
                        total_cost: Some(r.summary.total_cost),
                        slo_compliance: Some(r.summary.slo_compliance),
                        greedy_savings: None,
                        error: None,
                    },
                    Err(e) => FlavorCost {
                        policy,
                        flavor,
                        total_cost: None,
                        slo_compliance: None,
                        greedy_savings: None,
                        error: Some(e.to_string()),
                    },
                }
            })
            .collect();
        let greedy = rows[0].total_cost;
        for row in &mut rows[1..] {
            row.greedy_savings = match (greedy, row.total_cost) {
                (Some(g), Some(c)) if c > 0.0 => Some(1.0 - g / c),
                _ => None,
            };
        }
        Ok(rows)
    }
}
