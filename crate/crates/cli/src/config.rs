//! Scenario configuration file: TOML, paths relative to the file, with
//! `--set key.path=value` overrides applied before deserialization.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use autoscale_core::forecaster::{FitOptions, HolidaySpec};
use autoscale_core::profiler::{build_profile, read_samples_csv, ExecutionProfile, FitConfig, SetupTimes};
use autoscale_core::provisioner::ProvisionerConfig;
use autoscale_core::scenario::{CompensatorSettings, ForecastMode, ForecasterSettings, Scenario};
use autoscale_core::simulator::{SimulationConfig, VerticalPolicy};
use autoscale_core::trace::{generate_synthetic, load_trace, SyntheticSpec, TraceSchema, WorkloadTrace};
use autoscale_core::{FlavorCatalog, SloSpec};

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Paths {
    pub trace: Option<PathBuf>,
    /// `cores,latency_seconds` CSV, fitted on load.
    pub samples: Option<PathBuf>,
    /// Previously fitted profile JSON (alternative to `samples`).
    pub profile: Option<PathBuf>,
    pub catalog: Option<PathBuf>,
    pub holidays: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SloConfig {
    pub lambda_s: f64,
    pub percentile: f64,
    pub min_mem_gb: f64,
}

impl Default for SloConfig {
    fn default() -> Self {
        Self {
            lambda_s: 1.0,
            percentile: 0.95,
            min_mem_gb: 0.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForecasterConfig {
    /// Seasonal period in intervals.
    pub period: f64,
    /// Fourier order N.
    pub order: usize,
    /// Training window W in intervals.
    pub window: usize,
    pub retrain_every: usize,
    /// Grids for `forecast --tune`.
    pub tune_orders: Vec<usize>,
    pub tune_windows: Vec<usize>,
    /// Validation segment length for tuning, in intervals.
    pub tune_validation: usize,
}

impl Default for ForecasterConfig {
    fn default() -> Self {
        Self {
            period: 1440.0,
            order: 10,
            window: 2880,
            retrain_every: 60,
            tune_orders: vec![5, 10, 15, 20, 25],
            tune_windows: vec![1440, 2880, 4320],
            tune_validation: 1440,
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RangeConfig {
    /// First simulated interval; defaults to 0 with the oracle forecast and
    /// to the history the forecaster needs otherwise.
    pub start: Option<usize>,
    pub end: Option<usize>,
    pub prewarm: Option<bool>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub paths: Paths,
    /// Generated trace, used when `paths.trace` is absent.
    pub synthetic: Option<SyntheticSpec>,
    #[serde(default)]
    pub slo: SloConfig,
    #[serde(default)]
    pub setup_times_s: SetupTimes,
    #[serde(default)]
    pub provisioner: ProvisionerConfig,
    #[serde(default)]
    pub forecaster: ForecasterConfig,
    #[serde(default)]
    pub compensator: CompensatorSettings,
    #[serde(default)]
    pub vertical: VerticalPolicy,
    #[serde(default)]
    pub simulation: RangeConfig,
    #[serde(default)]
    pub profiler: FitConfig,
}

/// Parse `value` as a TOML value, falling back to a bare string.
fn parse_value(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

pub fn apply_override(table: &mut toml::Table, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .with_context(|| format!("override `{assignment}` must look like key.path=value"))?;
    let parts: Vec<&str> = key.trim().split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        bail!("override key `{key}` has an empty component");
    }
    let mut cur = table;
    for part in &parts[..parts.len() - 1] {
        let entry = cur
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .with_context(|| format!("override `{key}`: `{part}` is not a table"))?;
    }
    cur.insert(parts[parts.len() - 1].to_string(), parse_value(raw.trim()));
    Ok(())
}

impl ScenarioConfig {
    pub fn parse(text: &str, overrides: &[String]) -> Result<Self> {
        let mut table: toml::Table = toml::from_str(text).context("config is not valid TOML")?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let config: Self = table.try_into().context("invalid config")?;
        Ok(config)
    }

    /// Read `path` and resolve every relative path against its directory.
    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let mut config = Self::parse(&text, overrides)?;
        let base = path.parent().unwrap_or(Path::new("."));
        let p = &mut config.paths;
        for slot in [&mut p.trace, &mut p.samples, &mut p.profile, &mut p.catalog, &mut p.holidays] {
            if let Some(rel) = slot.as_mut() {
                if rel.is_relative() {
                    *rel = base.join(&*rel);
                }
            }
        }
        Ok(config)
    }

    /// Checks that need no heavy work: referenced files and exclusive options.
    pub fn validate(&self) -> Result<()> {
        let p = &self.paths;
        for (name, path) in [
            ("trace", &p.trace),
            ("samples", &p.samples),
            ("profile", &p.profile),
            ("catalog", &p.catalog),
            ("holidays", &p.holidays),
        ] {
            if let Some(path) = path {
                if !path.is_file() {
                    bail!("paths.{name}: {} does not exist", path.display());
                }
            }
        }
        match (&p.trace, &self.synthetic) {
            (Some(_), Some(_)) => bail!("set either paths.trace or [synthetic], not both"),
            (None, None) => bail!("a trace is required: set paths.trace or a [synthetic] block"),
            _ => {}
        }
        match (&p.samples, &p.profile) {
            (Some(_), Some(_)) => bail!("set either paths.samples or paths.profile, not both"),
            (None, None) => bail!("a latency profile is required: set paths.samples or paths.profile"),
            _ => {}
        }
        if p.catalog.is_none() {
            bail!("paths.catalog is required");
        }
        self.setup_times_s.validate().map_err(anyhow::Error::msg)?;
        let f = &self.forecaster;
        if !(f.period > 0.0 && f.period.is_finite()) || f.order == 0 {
            bail!("forecaster.period and forecaster.order must be positive");
        }
        Ok(())
    }

    pub fn trace(&self) -> Result<WorkloadTrace> {
        match (&self.paths.trace, &self.synthetic) {
            (Some(path), _) => Ok(load_trace(path, &TraceSchema::default())
                .with_context(|| format!("loading trace {}", path.display()))?
                .0),
            (None, Some(spec)) => Ok(generate_synthetic(spec)?),
            (None, None) => bail!("no trace configured"),
        }
    }

    pub fn profile(&self) -> Result<(ExecutionProfile, Vec<String>)> {
        if let Some(path) = &self.paths.profile {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            let profile: ExecutionProfile =
                serde_json::from_str(&text).with_context(|| format!("parsing profile {}", path.display()))?;
            return Ok((profile, Vec::new()));
        }
        let path = self.paths.samples.as_ref().context("no samples configured")?;
        let file = std::fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
        let samples = read_samples_csv(file).with_context(|| format!("reading samples {}", path.display()))?;
        let service = path.file_stem().and_then(|s| s.to_str()).unwrap_or("service");
        Ok(build_profile(
            service,
            &samples,
            self.slo.percentile,
            self.slo.min_mem_gb,
            self.setup_times_s,
            &self.profiler,
        )?)
    }

    pub fn fit_options(&self) -> Result<FitOptions> {
        let mut fit = FitOptions::new(self.forecaster.period, self.forecaster.order);
        fit.t_forecast_s = self.provisioner.t_forecast_s;
        if let Some(path) = &self.paths.holidays {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            fit = fit.with_holidays(&HolidaySpec::parse(&text)?);
        }
        Ok(fit)
    }

    /// Load every input and assemble the scenario for `mode`.
    pub fn scenario(&self, mode: ForecastMode) -> Result<Loaded> {
        self.validate()?;
        let trace = self.trace()?;
        let (mut profile, warnings) = self.profile()?;
        // Setup times always come from the config, also for stored profiles.
        profile.setup_times = self.setup_times_s;
        let catalog = FlavorCatalog::load(self.paths.catalog.as_ref().expect("validated"))?;
        let mut slo = SloSpec::new(self.slo.lambda_s, self.slo.min_mem_gb);
        slo.percentile = self.slo.percentile;

        let mut provisioner = self.provisioner;
        provisioner.resolution_s = f64::from(trace.resolution());
        let simulation = SimulationConfig {
            seed: self.seed,
            provisioner,
            vertical: self.vertical,
            prewarm: self.simulation.prewarm.unwrap_or(true),
        };
        let mut scenario = Scenario {
            range: 0..trace.len(),
            trace,
            profile,
            catalog,
            slo,
            fit: self.fit_options()?,
            forecaster: ForecasterSettings {
                window: self.forecaster.window,
                retrain_every: self.forecaster.retrain_every,
            },
            compensator: self.compensator,
            simulation,
        };
        let start = match (self.simulation.start, mode) {
            (Some(s), _) => s,
            (None, ForecastMode::Oracle) => 0,
            (None, ForecastMode::Forecaster) => scenario.history_needed(),
        };
        let end = self.simulation.end.unwrap_or(scenario.trace.len());
        scenario.range = start..end;
        scenario.validate(mode)?;
        Ok(Loaded { scenario, warnings })
    }
}

pub struct Loaded {
    pub scenario: Scenario,
    pub warnings: Vec<String>,
}
