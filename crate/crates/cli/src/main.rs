//! `autoscale`: profile, forecast, estimate and simulate from the command line.
//!
//! Exit codes: 0 success, 1 compliance below `--require-compliance`,
//! 2 invalid input or failed fit, 3 no flavor can meet the SLO.

mod config;
mod output;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use autoscale_core::estimator::{brute_force_optimal, estimate, EstimatorError, FlavorCatalog, SloSpec};
use autoscale_core::forecaster::tune;
use autoscale_core::profiler::{
    build_profile, read_samples_csv, synthetic_samples, Distribution, ExecutionProfile, Family, FitConfig, SetupTimes,
};
use autoscale_core::provisioner::ProvisionError;
use autoscale_core::scenario::{ForecastMode, ScenarioError};
use autoscale_core::simulator::{render_svg, write_requests_csv, write_ticks_csv, SimError, WorkloadSource};
use autoscale_core::stats::{absolute_percentage_errors, mean_absolute_error, quantile};
use autoscale_core::trace::{generate_synthetic, split_at, write_trace, SyntheticSpec};

use config::ScenarioConfig;
use output::OutDir;

#[derive(Debug, Parser)]
#[command(name = "autoscale", version, about = "Forecast-driven autoscaling for SLO-bound prediction services")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fit latency distributions per core count and write a profile JSON
    Profile(ProfileArgs),
    /// Rolling forecasts over a trace segment, raw and compensated
    Forecast(ForecastArgs),
    /// Cheapest flavor and VM count for a demand
    Estimate(EstimateArgs),
    /// Replay a trace against the provisioned cluster
    Simulate(SimulateArgs),
    /// Write a synthetic trace CSV from a TOML spec
    GenTrace(GenTraceArgs),
    /// Write synthetic latency samples as `cores,latency_seconds`
    GenSamples(GenSamplesArgs),
}

#[derive(Debug, Args)]
struct ProfileArgs {
    /// `cores,latency_seconds` CSV
    #[arg(long)]
    samples: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Latency percentile for t_p
    #[arg(long, default_value_t = 0.95)]
    percentile: f64,
    /// Minimum memory of the service, in GB
    #[arg(long, default_value_t = 0.0)]
    min_mem: f64,
    /// Service name; defaults to the samples file stem
    #[arg(long)]
    service: Option<String>,
    /// VM deployment time, in s
    #[arg(long, default_value_t = 0.0)]
    setup_vm: f64,
    /// Container download time, in s
    #[arg(long, default_value_t = 0.0)]
    setup_cd: f64,
    /// Model load time, in s
    #[arg(long, default_value_t = 0.0)]
    setup_ml: f64,
    /// Model unload time, in s
    #[arg(long, default_value_t = 0.0)]
    setup_mu: f64,
    /// K-S tie band, in units of 1/sqrt(n)
    #[arg(long)]
    ks_tie: Option<f64>,
}

#[derive(Debug, Args)]
struct ScenarioArgs {
    /// Scenario TOML; relative paths resolve against its directory
    #[arg(long)]
    config: PathBuf,
    /// Override a config key, e.g. `--set slo.lambda_s=2`
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Shorthand for `--set seed=N`
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out_dir: PathBuf,
}

impl ScenarioArgs {
    fn load(&self) -> Result<ScenarioConfig> {
        let mut overrides = self.overrides.clone();
        if let Some(seed) = self.seed {
            overrides.push(format!("seed={seed}"));
        }
        ScenarioConfig::load(&self.config, &overrides)
    }
}

#[derive(Debug, Args)]
struct ForecastArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    /// Grid-search Fourier order and window before forecasting
    #[arg(long)]
    tune: bool,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    /// Feed the provisioner the true future counts
    #[arg(long)]
    oracle_forecast: bool,
    /// One run per catalog flavor plus the greedy choice; writes a cost table
    #[arg(long)]
    sweep_flavors: bool,
    /// Exit with status 1 when SLO compliance is below this fraction
    #[arg(long)]
    require_compliance: Option<f64>,
}

#[derive(Debug, Args)]
struct EstimateArgs {
    #[arg(long)]
    profile: PathBuf,
    /// `name,cores,mem_gb,cost_per_period` CSV
    #[arg(long)]
    catalog: PathBuf,
    /// SLO latency bound, in s
    #[arg(long)]
    lambda: f64,
    #[arg(long)]
    percentile: Option<f64>,
    #[arg(long, default_value_t = 0.0)]
    min_mem: f64,
    /// Requests per λ-window
    #[arg(long, conflicts_with = "forecast", required_unless_present = "forecast")]
    demand: Option<f64>,
    /// Requests per interval, converted to λ-window demand
    #[arg(long)]
    forecast: Option<f64>,
    /// Interval length for `--forecast`, in s
    #[arg(long, default_value_t = 60.0)]
    resolution: f64,
    /// Also report the exact optimum over flavor mixes
    #[arg(long)]
    brute_force: bool,
}

#[derive(Debug, Args)]
struct GenTraceArgs {
    /// TOML synthetic trace spec
    #[arg(long)]
    spec: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct GenSamplesArgs {
    /// `CORES:FAMILY:P1[,P2]`, e.g. `4:normal:0.2,0.02`; repeatable
    #[arg(long = "dist", required = true)]
    dists: Vec<String>,
    /// Samples per core count
    #[arg(long, default_value_t = 1000)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

/// SLO compliance under the requested threshold.
#[derive(Debug, thiserror::Error)]
#[error("SLO compliance {got:.4} is below the required {want}")]
struct Unmet {
    got: f64,
    want: f64,
}

fn is_infeasible(err: &anyhow::Error) -> bool {
    fn estimator(e: &EstimatorError) -> bool {
        matches!(e, EstimatorError::Infeasible { .. })
    }
    fn provision(e: &ProvisionError) -> bool {
        matches!(e, ProvisionError::Estimator(e) if estimator(e))
    }
    err.chain().any(|e| {
        if let Some(e) = e.downcast_ref::<EstimatorError>() {
            return estimator(e);
        }
        if let Some(e) = e.downcast_ref::<ProvisionError>() {
            return provision(e);
        }
        match e.downcast_ref::<ScenarioError>() {
            Some(ScenarioError::Estimator(e)) => estimator(e),
            Some(ScenarioError::Simulation(SimError::Provision(e))) => provision(e),
            _ => false,
        }
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Profile(a) => cmd_profile(a),
        Command::Forecast(a) => cmd_forecast(a),
        Command::Estimate(a) => cmd_estimate(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::GenTrace(a) => cmd_gen_trace(a),
        Command::GenSamples(a) => cmd_gen_samples(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<Unmet>().is_some() {
                ExitCode::from(1)
            } else if is_infeasible(&e) {
                ExitCode::from(3)
            } else {
                ExitCode::from(2)
            }
        }
    }
}

fn cmd_profile(a: ProfileArgs) -> Result<()> {
    let file = std::fs::File::open(&a.samples).with_context(|| format!("opening {}", a.samples.display()))?;
    let samples = read_samples_csv(file).with_context(|| format!("reading {}", a.samples.display()))?;
    let setup = SetupTimes {
        vm: a.setup_vm,
        cd: a.setup_cd,
        ml: a.setup_ml,
        mu: a.setup_mu,
    };
    let mut fit = FitConfig::default();
    if let Some(tie) = a.ks_tie {
        fit.ks_tie = tie;
    }
    let service = a
        .service
        .clone()
        .unwrap_or_else(|| a.samples.file_stem().and_then(|s| s.to_str()).unwrap_or("service").to_string());
    let (profile, warnings) = build_profile(&service, &samples, a.percentile, a.min_mem, setup, &fit)?;
    for w in &warnings {
        eprintln!("warning: {w}");
    }
    println!("{:>6}  {:<12} {:>10} {:>12}", "cores", "family", "D_n", format!("t_p@{}", a.percentile));
    for (cores, c) in &profile.per_core {
        println!(
            "{cores:>6}  {:<12} {:>10.6} {:>12.6}",
            c.fitted.distribution.family().name(),
            c.fitted.ks_statistic,
            c.t_p
        );
    }
    write_text(&a.out, &(serde_json::to_string_pretty(&profile)? + "\n"))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn load_profile(path: &Path) -> Result<ExecutionProfile> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing profile {}", path.display()))
}

fn cmd_estimate(a: EstimateArgs) -> Result<()> {
    let profile = load_profile(&a.profile)?;
    let catalog = FlavorCatalog::load(&a.catalog)?;
    let mut slo = SloSpec::new(a.lambda, a.min_mem);
    slo.percentile = a.percentile.unwrap_or(profile.percentile);
    let y = match (a.demand, a.forecast) {
        (Some(y), _) => y,
        (None, Some(f)) => f * a.lambda / a.resolution,
        (None, None) => bail!("either --demand or --forecast is required"),
    };
    let r = estimate(&catalog, &profile, &slo, y)?;
    #[derive(Serialize)]
    struct Out<'a> {
        demand_per_window: f64,
        flavor: &'a str,
        #[serde(flatten)]
        result: &'a autoscale_core::estimator::EstimationResult,
        brute_force_cost: Option<f64>,
    }
    let brute_force_cost = if a.brute_force {
        Some(brute_force_optimal(&catalog, &profile, &slo, y, None)?)
    } else {
        None
    };
    let out = Out {
        demand_per_window: y,
        flavor: &catalog.flavors()[r.i_star].name,
        result: &r,
        brute_force_cost,
    };
    println!("{}", serde_json::to_string_pretty(&out)?);
    Ok(())
}

fn cmd_gen_trace(a: GenTraceArgs) -> Result<()> {
    let text = std::fs::read_to_string(&a.spec).with_context(|| format!("reading {}", a.spec.display()))?;
    let mut spec: SyntheticSpec = toml::from_str(&text).with_context(|| format!("parsing {}", a.spec.display()))?;
    if let Some(seed) = a.seed {
        spec.seed = seed;
    }
    let trace = generate_synthetic(&spec)?;
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    write_trace(&trace, &a.out)?;
    println!("{} intervals, {} requests", trace.len(), trace.total());
    Ok(())
}

fn parse_dist(raw: &str) -> Result<(u32, Distribution)> {
    let mut parts = raw.splitn(3, ':');
    let (Some(cores), Some(family), Some(params)) = (parts.next(), parts.next(), parts.next()) else {
        bail!("distribution `{raw}` must look like CORES:FAMILY:P1[,P2]");
    };
    let cores: u32 = cores.trim().parse().with_context(|| format!("bad core count in `{raw}`"))?;
    let family: Family = family.trim().parse()?;
    let params = params
        .split(',')
        .map(|p| p.trim().parse::<f64>())
        .collect::<Result<Vec<_>, _>>()
        .with_context(|| format!("bad parameters in `{raw}`"))?;
    Ok((cores, Distribution::from_params(family, &params)?))
}

fn cmd_gen_samples(a: GenSamplesArgs) -> Result<()> {
    let mut by_core = BTreeMap::new();
    for raw in &a.dists {
        let (cores, d) = parse_dist(raw)?;
        if by_core.insert(cores, d).is_some() {
            bail!("core count {cores} given twice");
        }
    }
    let mut text = String::from("cores,latency_seconds\n");
    for (&cores, d) in &by_core {
        // One stream per core count keeps each column independent of the others.
        for x in synthetic_samples(d, a.n, a.seed.wrapping_add(u64::from(cores))) {
            text.push_str(&format!("{cores},{x}\n"));
        }
    }
    write_text(&a.out, &text)
}

#[derive(Serialize)]
struct ForecastMetrics {
    intervals: usize,
    horizon: usize,
    order: usize,
    window: usize,
    mae_raw: f64,
    mae_compensated: f64,
    /// `1 − compensated / raw`.
    mae_improvement: f64,
    ape_p95_raw: Option<f64>,
    ape_p95_compensated: Option<f64>,
    compensator: String,
    compensator_training: Option<autoscale_core::compensator::TrainingReport>,
}

fn p95(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| quantile(v, 0.95))
}

fn cmd_forecast(a: ForecastArgs) -> Result<()> {
    let config = a.scenario.load()?;
    let mut sc = config.scenario(ForecastMode::Forecaster)?.scenario;
    let mut out = OutDir::create(&a.scenario.out_dir)?;

    if a.tune {
        let f = &config.forecaster;
        let widest = f.tune_windows.iter().copied().max().context("forecaster.tune_windows is empty")?;
        let offset = sc
            .range
            .start
            .checked_sub(f.tune_validation + widest)
            .with_context(|| format!("tuning needs {} intervals before the forecast range", f.tune_validation + widest))?;
        let window = split_at(&sc.trace, offset, widest, f.tune_validation, 0)?;
        let report = tune(&window, &sc.fit, &f.tune_orders, &f.tune_windows)?;
        println!("tuned: order {} window {}", report.best_order, report.best_window);
        let mut csv = String::from("order,window,ape95,error\n");
        for c in &report.cells {
            csv.push_str(&format!(
                "{},{},{},{}\n",
                c.order,
                c.window,
                c.ape95.map(|v| v.to_string()).unwrap_or_default(),
                c.error.as_deref().unwrap_or("").replace(',', ";")
            ));
        }
        out.write("tune.csv", csv)?;
        out.write_json("tune.json", &report)?;
        sc.fit.order = report.best_order;
        sc.forecaster.window = report.best_window;
        sc.validate(ForecastMode::Forecaster)?;
    }

    let h = sc.horizon();
    let (mut source, training) = sc.compensated_source()?;
    let counts = sc.trace.counts();
    let mut csv = String::from("interval,actual,forecast_raw,forecast_compensated\n");
    let (mut actual, mut raw, mut adjusted) = (Vec::new(), Vec::new(), Vec::new());
    for t in sc.range.clone() {
        let f = source
            .forecast(t - h, t)
            .with_context(|| format!("forecasting interval {t}: {:?}", source.last_error()))?;
        let adj = f.adjusted.max(0.0);
        csv.push_str(&format!("{t},{},{},{}\n", counts[t], f.raw, adj));
        actual.push(counts[t] as f64);
        raw.push(f.raw);
        adjusted.push(adj);
        source.observe(t - h, counts[t - h] as f64);
    }
    out.write("forecast.csv", csv)?;

    let ape_raw = absolute_percentage_errors(&actual, &raw);
    let ape_comp = absolute_percentage_errors(&actual, &adjusted);
    let mut cdf = String::from("series,ape,cumulative_fraction\n");
    for (name, ape) in [("raw", &ape_raw), ("compensated", &ape_comp)] {
        let mut sorted = ape.clone();
        sorted.sort_by(f64::total_cmp);
        for (i, v) in sorted.iter().enumerate() {
            cdf.push_str(&format!("{name},{v},{}\n", (i + 1) as f64 / sorted.len() as f64));
        }
    }
    out.write("ape_cdf.csv", cdf)?;

    let mae_raw = mean_absolute_error(&actual, &raw);
    let mae_compensated = mean_absolute_error(&actual, &adjusted);
    let metrics = ForecastMetrics {
        intervals: actual.len(),
        horizon: h,
        order: sc.fit.order,
        window: sc.forecaster.window,
        mae_raw,
        mae_compensated,
        mae_improvement: if mae_raw > 0.0 { 1.0 - mae_compensated / mae_raw } else { 0.0 },
        ape_p95_raw: p95(&ape_raw),
        ape_p95_compensated: p95(&ape_comp),
        compensator: sc.compensator.kind.to_string(),
        compensator_training: training,
    };
    println!(
        "{} intervals, horizon {h}: MAE raw {:.3} compensated {:.3}; APE p95 raw {} compensated {}",
        metrics.intervals,
        mae_raw,
        mae_compensated,
        fmt_opt(metrics.ape_p95_raw),
        fmt_opt(metrics.ape_p95_compensated)
    );
    out.write_json("metrics.json", &metrics)?;
    out.finish("forecast")?;
    Ok(())
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|v| format!("{v:.3}")).unwrap_or_else(|| "-".into())
}

fn cmd_simulate(a: SimulateArgs) -> Result<()> {
    if let Some(want) = a.require_compliance {
        if !(0.0..=1.0).contains(&want) {
            bail!("--require-compliance must be a fraction in [0, 1], got {want}");
        }
    }
    let config = a.scenario.load()?;
    let mode = if a.oracle_forecast {
        ForecastMode::Oracle
    } else {
        ForecastMode::Forecaster
    };
    let loaded = config.scenario(mode)?;
    for w in &loaded.warnings {
        eprintln!("warning: {w}");
    }
    let sc = loaded.scenario;
    let mut out = OutDir::create(&a.scenario.out_dir)?;
    out.write_json("scenario.json", &config)?;

    let compliance = if a.sweep_flavors {
        let rows = sc.sweep_flavors(mode)?;
        let mut csv = String::from("policy,flavor,total_cost,slo_compliance,greedy_savings,error\n");
        println!("{:<20} {:>12} {:>11} {:>9}", "policy", "cost", "compliance", "savings");
        for r in &rows {
            csv.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.policy,
                r.flavor.as_deref().unwrap_or(""),
                r.total_cost.map(|v| v.to_string()).unwrap_or_default(),
                r.slo_compliance.map(|v| v.to_string()).unwrap_or_default(),
                r.greedy_savings.map(|v| v.to_string()).unwrap_or_default(),
                r.error.as_deref().unwrap_or("").replace(',', ";")
            ));
            println!(
                "{:<20} {:>12} {:>11} {:>9}",
                r.policy,
                fmt_opt(r.total_cost),
                fmt_opt(r.slo_compliance),
                r.greedy_savings.map(|s| format!("{:.1}%", s * 100.0)).unwrap_or_else(|| "-".into())
            );
        }
        out.write("flavors.csv", csv)?;
        out.write_json("flavors.json", &rows)?;
        rows[0].slo_compliance
    } else {
        let outcome = sc.run(mode)?;
        let r = &outcome.report;
        out.write("report.json", r.to_json() + "\n")?;
        let mut requests = Vec::new();
        write_requests_csv(&r.requests, sc.slo.lambda_s, &mut requests)?;
        out.write("requests.csv", requests)?;
        let mut ticks = Vec::new();
        write_ticks_csv(&r.ticks, &mut ticks)?;
        out.write("ticks.csv", ticks)?;
        let title = format!(
            "{} on {} ({})",
            sc.profile.service,
            r.summary.flavor,
            if a.oracle_forecast { "oracle forecast" } else { "forecaster + compensator" }
        );
        out.write("timeseries.svg", render_svg(&r.ticks, &title))?;
        if let Some(t) = &outcome.compensator {
            out.write_json("compensator.json", t)?;
        }
        let s = &r.summary;
        println!(
            "flavor {} (n_req {}), {} intervals, {} requests",
            s.flavor, s.n_req, s.intervals, s.requests
        );
        println!(
            "SLO compliance {:.4}, p50/p95/p99 latency {}/{}/{} s",
            s.slo_compliance,
            fmt_opt(s.latency_p50_s),
            fmt_opt(s.latency_p95_s),
            fmt_opt(s.latency_p99_s)
        );
        println!(
            "cost {:.4} ({} VMs, {} periods), {:.0} core-seconds released",
            s.total_cost, s.vms_deployed, s.vm_periods_billed, s.core_seconds_released
        );
        Some(s.slo_compliance)
    };
    out.finish("simulate")?;

    if let Some(want) = a.require_compliance {
        let got = compliance.unwrap_or(0.0);
        if got < want {
            return Err(Unmet { got, want }.into());
        }
    }
    Ok(())
}
