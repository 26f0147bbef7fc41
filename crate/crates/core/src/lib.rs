//! Forecast-driven autoscaling for SLO-bounded, parallelizable prediction services.
//!
//! The crate is organised as a pipeline:
//!
//! * [`trace`] ingests and generates per-minute request workloads.
//! * [`profiler`] fits execution-time distributions per core count and ranks them
//!   with the one-sample Kolmogorov-Smirnov statistic.
//! * [`forecaster`] fits a logistic trend + Fourier seasonality + holiday model on a
//!   rolling window, and [`compensator`] corrects its output from recent errors.
//! * [`estimator`] picks the cost-per-request minimal VM flavor and the VM count.
//! * [`provisioner`] drives the four-state VM lifecycle and the tick-based
//!   provisioning loop.
//! * [`simulator`] replays a trace against the provisioned cluster and reports SLO
//!   compliance, latency percentiles and hosting cost.
//! * [`scenario`] wires everything together for end-to-end experiments.

pub mod compensator;
pub mod estimator;
pub mod forecaster;
pub mod linalg;
pub mod profiler;
pub mod provisioner;
pub mod rng;
pub mod scenario;
pub mod simulator;
pub mod stats;
pub mod trace;

#[cfg(test)]
mod testutil;

pub use compensator::{CompensatorKind, CompensatorModel, ErrorRing};
pub use estimator::{FlavorCatalog, SloSpec, VmFlavor};
pub use forecaster::{Forecast, ForecastModel};
pub use profiler::{Distribution, ExecutionProfile, Family, FittedDistribution, LatencySamples};
pub use provisioner::{Provisioner, ProvisionerConfig, VmState};
pub use simulator::{SimulationConfig, SimulationReport};
pub use trace::{TraceWindow, WorkloadTrace};
