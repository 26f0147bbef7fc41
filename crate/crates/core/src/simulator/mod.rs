//! Deterministic discrete-event replay of a workload trace against the
//! provisioned cluster.
//!
//! Per-interval counts are spread uniformly over the interval at 1 s
//! granularity. Each arrival goes to the serving VM with the fewest queued
//! plus in-flight requests (lowest id on ties); each VM serves one request at
//! a time in FIFO order. With no serving VM, requests wait in a global queue.

mod cost;
mod output;
mod source;

use std::cmp::Ordering;
use std::collections::{BTreeSet, BinaryHeap, VecDeque};
use std::ops::Range;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use cost::{account_cost, billed_periods, Deployment};
pub use output::{render_svg, write_requests_csv, write_ticks_csv};
pub use source::{CompensatedSource, ForecastValue, OracleSource, WorkloadSource};

use crate::estimator::{vm_count, FlavorCatalog, SloSpec};
use crate::profiler::ExecutionProfile;
use crate::provisioner::{Phase, ProvisionError, Provisioner, ProvisionerConfig, VmId, VmState};
use crate::rng::{stream_rng, VM_STREAM_LIMIT};
use crate::stats::quantile_sorted;
use crate::trace::WorkloadTrace;

#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error(transparent)]
    Provision(#[from] ProvisionError),
    #[error("no latency profile for {cores} active cores on VM {vm}")]
    Unprofiled { vm: VmId, cores: u32 },
    #[error("invalid simulation configuration: {0}")]
    InvalidConfig(String),
}

/// Reactive per-VM core scaling.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerticalPolicy {
    pub enabled: bool,
    pub check_interval_s: f64,
    /// Release one core step when the window p95 is below `margin · λ`.
    pub margin: f64,
    /// Service-time multiplier while batch jobs share the VM.
    pub interference_factor: f64,
    /// Released cores run batch jobs (and so cause interference).
    pub batch_on_released_cores: bool,
}

impl Default for VerticalPolicy {
    fn default() -> Self {
        Self {
            enabled: true,
            check_interval_s: 5.0,
            margin: 0.7,
            interference_factor: 1.2,
            batch_on_released_cores: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimulationConfig {
    pub seed: u64,
    pub provisioner: ProvisionerConfig,
    pub vertical: VerticalPolicy,
    /// Start with the VMs the first `h` intervals need already serving.
    pub prewarm: bool,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            provisioner: ProvisionerConfig::default(),
            vertical: VerticalPolicy::default(),
            prewarm: true,
        }
    }
}

impl SimulationConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        self.provisioner.validate()?;
        let v = &self.vertical;
        if !(v.check_interval_s > 0.0 && v.check_interval_s.is_finite()) {
            return Err(SimError::InvalidConfig("vertical check interval must be positive".into()));
        }
        if !(v.margin > 0.0 && v.margin <= 1.0) {
            return Err(SimError::InvalidConfig(format!("margin must be in (0, 1], got {}", v.margin)));
        }
        if !(v.interference_factor >= 1.0 && v.interference_factor.is_finite()) {
            return Err(SimError::InvalidConfig(format!(
                "interference factor must be >= 1, got {}",
                v.interference_factor
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RequestRecord {
    pub id: u64,
    pub arrival_s: f64,
    pub start_s: Option<f64>,
    pub end_s: Option<f64>,
    pub vm: Option<VmId>,
    /// Sampled service time (before it is known, `None`).
    pub service_s: Option<f64>,
}

impl RequestRecord {
    pub fn latency_s(&self) -> Option<f64> {
        self.end_s.map(|e| e - self.arrival_s)
    }

    /// Unserved requests count as misses.
    pub fn slo_hit(&self, lambda_s: f64) -> bool {
        self.latency_s().is_some_and(|l| l <= lambda_s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TickSummary {
    pub tick: u64,
    pub now_s: f64,
    /// Absolute trace interval starting at `now_s`.
    pub interval: usize,
    pub actual: u64,
    /// Forecast target interval (`interval + h`).
    pub target: usize,
    pub raw_forecast: Option<f64>,
    pub forecast: Option<f64>,
    pub alpha: u64,
    pub delta: i64,
    pub deploys: u64,
    pub recalls: u64,
    pub parks: u64,
    pub expiries: u64,
    pub serving_vms: usize,
    pub live_vms: usize,
    pub active_cores: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationSummary {
    pub flavor: String,
    pub n_req: u64,
    pub horizon_intervals: usize,
    pub intervals: usize,
    pub duration_s: f64,
    pub requests: u64,
    pub served: u64,
    pub slo_hits: u64,
    pub slo_compliance: f64,
    pub latency_p50_s: Option<f64>,
    pub latency_p95_s: Option<f64>,
    pub latency_p99_s: Option<f64>,
    pub total_cost: f64,
    pub vms_deployed: u64,
    pub vm_periods_billed: u64,
    pub core_seconds_released: f64,
    pub vertical_scale_ups: u64,
    pub vertical_scale_downs: u64,
    pub degraded_ticks: u64,
    pub illegal_transitions: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationReport {
    pub summary: SimulationSummary,
    pub ticks: Vec<TickSummary>,
    pub deployments: Vec<Deployment>,
    /// Per-request records; written as CSV rather than JSON.
    #[serde(skip)]
    pub requests: Vec<RequestRecord>,
}

impl SimulationReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Core count after one vertical check of a VM's latency window: double
/// (snapped up to a profiled count) on any SLO miss, release one profiled
/// step when the window p95 is below `margin · λ`, otherwise keep.
/// `levels` are the profiled counts up to the flavor size, ascending.
pub fn vertical_target(levels: &[u32], active: u32, mut window: Vec<f64>, lambda_s: f64, margin: f64) -> u32 {
    if window.is_empty() {
        return active;
    }
    if window.iter().any(|&l| l > lambda_s) {
        let want = active.saturating_mul(2);
        let snapped = levels
            .iter()
            .copied()
            .find(|&c| c >= want)
            .or(levels.last().copied())
            .unwrap_or(active);
        return snapped.max(active);
    }
    window.sort_by(f64::total_cmp);
    if quantile_sorted(&window, 0.95) < margin * lambda_s {
        levels.iter().copied().rev().find(|&c| c < active).unwrap_or(active)
    } else {
        active
    }
}

/// Service time on `cores` active cores, scaled by `interference`.
pub fn sample_service_time<R: Rng + ?Sized>(
    profile: &ExecutionProfile,
    cores: u32,
    interference: f64,
    rng: &mut R,
) -> Option<f64> {
    profile.distribution(cores).map(|d| d.sample(rng) * interference)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Prio {
    Completion,
    Tick,
    Vertical,
    Interval,
    Arrival,
}

#[derive(Debug, Clone, Copy)]
enum Kind {
    Completion { vm: VmId, req: usize },
    Tick(u64),
    Vertical,
    Interval(usize),
    Arrival(usize),
}

#[derive(Debug, Clone, Copy)]
struct Event {
    time: f64,
    prio: Prio,
    seq: u64,
    kind: Kind,
}

impl PartialEq for Event {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Event {}

impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Event {
    // Reversed: BinaryHeap pops the earliest (time, prio, seq) first.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .time
            .total_cmp(&self.time)
            .then(other.prio.cmp(&self.prio))
            .then(other.seq.cmp(&self.seq))
    }
}

struct VmRun {
    queue: VecDeque<usize>,
    in_service: Option<usize>,
    rng: ChaCha8Rng,
    /// Latencies completed since the last vertical check.
    window: Vec<f64>,
    released_since: f64,
}

struct Engine<'a> {
    trace: &'a WorkloadTrace,
    range: Range<usize>,
    profile: &'a ExecutionProfile,
    slo: SloSpec,
    config: SimulationConfig,
    prov: Provisioner,
    flavor_cores: u32,
    core_levels: Vec<u32>,
    end_s: f64,
    runs: Vec<VmRun>,
    serving: BTreeSet<VmId>,
    warm: BTreeSet<VmId>,
    global: VecDeque<usize>,
    requests: Vec<RequestRecord>,
    heap: BinaryHeap<Event>,
    seq: u64,
    ticks: Vec<TickSummary>,
    observed_to: usize,
    core_seconds_released: f64,
    ups: u64,
    downs: u64,
}

impl<'a> Engine<'a> {
    fn push(&mut self, time: f64, prio: Prio, kind: Kind) {
        self.seq += 1;
        self.heap.push(Event {
            time,
            prio,
            seq: self.seq,
            kind,
        });
    }

    fn ensure_run(&mut self, id: VmId) {
        while self.runs.len() as u64 <= id {
            let vm = self.runs.len() as u64;
            assert!(vm < VM_STREAM_LIMIT, "VM id exhausts the per-VM stream space");
            self.runs.push(VmRun {
                queue: VecDeque::new(),
                in_service: None,
                rng: stream_rng(self.config.seed, vm),
                window: Vec::new(),
                released_since: 0.0,
            });
        }
    }

    fn is_busy(runs: &[VmRun], id: VmId) -> bool {
        runs.get(id as usize)
            .is_some_and(|r| r.in_service.is_some() || !r.queue.is_empty())
    }

    fn load(&self, id: VmId) -> usize {
        let r = &self.runs[id as usize];
        r.queue.len() + usize::from(r.in_service.is_some())
    }

    /// Least-loaded serving VM, lowest id on ties.
    fn pick(&self) -> Option<VmId> {
        self.serving.iter().copied().min_by_key(|&id| (self.load(id), id))
    }

    fn dispatch(&mut self, req: usize, now: f64) -> Result<(), SimError> {
        match self.pick() {
            Some(id) => {
                self.runs[id as usize].queue.push_back(req);
                self.start_next(id, now)
            }
            None => {
                self.global.push_back(req);
                Ok(())
            }
        }
    }

    fn flush_global(&mut self, now: f64) -> Result<(), SimError> {
        while !self.serving.is_empty() {
            let Some(req) = self.global.pop_front() else { break };
            self.dispatch(req, now)?;
        }
        Ok(())
    }

    fn interference(&self, id: VmId) -> f64 {
        let v = &self.config.vertical;
        if v.batch_on_released_cores && self.prov.vm(id).active_cores < self.flavor_cores {
            v.interference_factor
        } else {
            1.0
        }
    }

    fn start_next(&mut self, id: VmId, now: f64) -> Result<(), SimError> {
        if self.runs[id as usize].in_service.is_some() {
            return Ok(());
        }
        let Some(req) = self.runs[id as usize].queue.pop_front() else {
            return Ok(());
        };
        let cores = self.prov.vm(id).active_cores;
        let factor = self.interference(id);
        let service = sample_service_time(self.profile, cores, factor, &mut self.runs[id as usize].rng)
            .ok_or(SimError::Unprofiled { vm: id, cores })?;
        let rec = &mut self.requests[req];
        rec.start_s = Some(now);
        rec.vm = Some(id);
        rec.service_s = Some(service);
        self.runs[id as usize].in_service = Some(req);
        self.push(now + service, Prio::Completion, Kind::Completion { vm: id, req });
        Ok(())
    }

    /// Accrue released core-seconds of a warm VM up to `now`.
    fn settle(&mut self, id: VmId, now: f64) {
        let vm = self.prov.vm(id);
        let run = &mut self.runs[id as usize];
        if vm.state == VmState::ContainerWarm {
            let freed = (self.flavor_cores - vm.active_cores) as f64;
            self.core_seconds_released += freed * (now - run.released_since).max(0.0);
        }
        run.released_since = now;
    }

    fn leave_warm(&mut self, id: VmId, now: f64) {
        self.serving.remove(&id);
        self.warm.remove(&id);
        self.runs[id as usize].released_since = now;
    }

    fn on_warm(&mut self, ids: Vec<VmId>, now: f64) -> Result<(), SimError> {
        for id in ids {
            self.ensure_run(id);
            // A recalled VM comes back with all of its cores.
            if self.prov.vm(id).active_cores != self.flavor_cores {
                self.prov.set_active_cores(id, self.flavor_cores)?;
            }
            self.runs[id as usize].released_since = now;
            self.runs[id as usize].window.clear();
            self.serving.insert(id);
            self.warm.insert(id);
        }
        self.flush_global(now)
    }

    fn on_completion(&mut self, id: VmId, req: usize, now: f64) -> Result<(), SimError> {
        let rec = &mut self.requests[req];
        rec.end_s = Some(now);
        let latency = now - rec.arrival_s;
        let run = &mut self.runs[id as usize];
        run.in_service = None;
        if self.config.vertical.enabled {
            run.window.push(latency);
        }
        self.start_next(id, now)?;
        if Self::is_busy(&self.runs, id) {
            return Ok(());
        }
        match self.prov.vm(id).phase {
            Phase::Draining => {
                self.settle(id, now);
                self.prov.finish_drain(id, now)?;
                self.leave_warm(id, now);
            }
            Phase::Terminating => {
                self.settle(id, now);
                self.prov.finish_termination(id, now)?;
                self.leave_warm(id, now);
            }
            _ => {}
        }
        Ok(())
    }

    fn on_tick(&mut self, k: u64, now: f64, source: &mut dyn WorkloadSource) -> Result<(), SimError> {
        let res = self.config.provisioner.resolution_s;
        let interval = self.range.start + (now / res + 1e-9).floor() as usize;
        while self.observed_to < interval {
            source.observe(self.observed_to, self.trace.counts()[self.observed_to] as f64);
            self.observed_to += 1;
        }
        let target = interval + self.prov.horizon();
        let fc = source.forecast(interval, target);
        let runs = &self.runs;
        let out = self
            .prov
            .tick(now, fc.map(|f| f.adjusted), |id| Self::is_busy(runs, id))?;

        for &id in &out.deployed {
            self.ensure_run(id);
        }
        for &id in &out.recalled {
            // Draining VMs rejoin at once; parked ones warm after the reload.
            if self.prov.vm(id).phase == Phase::Serving {
                self.serving.insert(id);
            }
        }
        for &id in out.parked.iter().chain(&out.terminated) {
            if self.warm.contains(&id) {
                // Park and terminate happen after the state change; settle
                // with the pre-change core count, which is unchanged.
                let since = self.runs[id as usize].released_since;
                let freed = (self.flavor_cores - self.prov.vm(id).active_cores) as f64;
                self.core_seconds_released += freed * (now - since).max(0.0);
            }
            self.leave_warm(id, now);
        }
        for &id in &out.draining {
            self.serving.remove(&id);
        }
        for &id in &out.terminating {
            self.serving.remove(&id);
            let queued: Vec<usize> = self.runs[id as usize].queue.drain(..).collect();
            for req in queued {
                self.dispatch(req, now)?;
            }
        }
        self.flush_global(now)?;

        let rec = self.prov.log().last().expect("tick recorded").clone();
        let active_cores = self.warm.iter().map(|&id| self.prov.vm(id).active_cores as u64).sum();
        self.ticks.push(TickSummary {
            tick: k,
            now_s: now,
            interval,
            actual: self.trace.counts().get(interval).copied().unwrap_or(0),
            target,
            raw_forecast: fc.map(|f| f.raw),
            forecast: rec.forecast,
            alpha: rec.alpha,
            delta: rec.delta,
            deploys: rec.deploys,
            recalls: rec.recalls,
            parks: rec.parks,
            expiries: rec.expiries,
            serving_vms: self.serving.len(),
            live_vms: self.prov.live_count(),
            active_cores,
        });
        Ok(())
    }

    fn on_vertical(&mut self, now: f64) -> Result<(), SimError> {
        let ids: Vec<VmId> = self.warm.iter().copied().collect();
        for id in ids {
            let window = std::mem::take(&mut self.runs[id as usize].window);
            let active = self.prov.vm(id).active_cores;
            let target = vertical_target(
                &self.core_levels,
                active,
                window,
                self.slo.lambda_s,
                self.config.vertical.margin,
            );
            if target != active {
                self.settle(id, now);
                self.prov.set_active_cores(id, target)?;
                if target > active {
                    self.ups += 1;
                } else {
                    self.downs += 1;
                }
            }
        }
        let next = now + self.config.vertical.check_interval_s;
        if next < self.end_s {
            self.push(next, Prio::Vertical, Kind::Vertical);
        }
        Ok(())
    }

    fn on_interval(&mut self, k: usize, now: f64) {
        let c = self.trace.counts()[self.range.start + k];
        let res = self.config.provisioner.resolution_s;
        for j in 0..c {
            let offset = (j as f64 * res / c as f64).floor();
            let id = self.requests.len();
            self.requests.push(RequestRecord {
                id: id as u64,
                arrival_s: now + offset,
                start_s: None,
                end_s: None,
                vm: None,
                service_s: None,
            });
            self.push(now + offset, Prio::Arrival, Kind::Arrival(id));
        }
    }

    fn prewarm(&mut self, source: &mut dyn WorkloadSource) -> Result<(), SimError> {
        let h = self.prov.horizon();
        let start = self.range.start;
        let mut count = 0;
        for j in 0..h {
            if let Some(f) = source.forecast(start, start + j) {
                let demand = self.prov.window_demand(f.adjusted);
                count = count.max(vm_count(demand, self.prov.choice().n_req));
            }
        }
        let ids = self.prov.prewarm(count, 0.0)?;
        self.on_warm(ids, 0.0)
    }
}

/// Replay `trace[range]` (interval `range.start` begins at time 0).
pub fn run(
    trace: &WorkloadTrace,
    range: Range<usize>,
    profile: &ExecutionProfile,
    catalog: &FlavorCatalog,
    slo: &SloSpec,
    source: &mut dyn WorkloadSource,
    config: &SimulationConfig,
) -> Result<SimulationReport, SimError> {
    config.validate()?;
    if range.is_empty() || range.end > trace.len() {
        return Err(SimError::InvalidConfig(format!(
            "simulation range {range:?} must be non-empty and within the trace ({} intervals)",
            trace.len()
        )));
    }
    let res = config.provisioner.resolution_s;
    if trace.resolution() as f64 != res {
        return Err(SimError::InvalidConfig(format!(
            "trace resolution {} s differs from the configured {res} s",
            trace.resolution()
        )));
    }
    let prov = Provisioner::new(config.provisioner, catalog.clone(), profile, *slo)?;
    let flavor = catalog.get(prov.choice().i_star).clone();
    let core_levels: Vec<u32> = profile.profiled_cores().into_iter().filter(|&c| c <= flavor.cores).collect();
    let n = range.len();
    let end_s = n as f64 * res;
    let mut e = Engine {
        trace,
        range: range.clone(),
        profile,
        slo: *slo,
        config: *config,
        prov,
        flavor_cores: flavor.cores,
        core_levels,
        end_s,
        runs: Vec::new(),
        serving: BTreeSet::new(),
        warm: BTreeSet::new(),
        global: VecDeque::new(),
        requests: Vec::new(),
        heap: BinaryHeap::new(),
        seq: 0,
        ticks: Vec::new(),
        observed_to: range.start,
        core_seconds_released: 0.0,
        ups: 0,
        downs: 0,
    };

    for k in 0..n {
        e.push(k as f64 * res, Prio::Interval, Kind::Interval(k));
    }
    let tick_s = config.provisioner.tick_s;
    let mut k = 0u64;
    while (k as f64) * tick_s < end_s {
        e.push(k as f64 * tick_s, Prio::Tick, Kind::Tick(k));
        k += 1;
    }
    if config.vertical.enabled && config.vertical.check_interval_s < end_s {
        e.push(config.vertical.check_interval_s, Prio::Vertical, Kind::Vertical);
    }
    if config.prewarm {
        e.prewarm(source)?;
    }

    let mut now = 0.0f64;
    loop {
        let next_event = e.heap.peek().map(|ev| ev.time);
        if let Some(due) = e.prov.next_due() {
            let run_registry = match next_event {
                Some(t) => due <= t,
                // After the last event only a stranded global queue needs more VMs.
                None => !e.global.is_empty(),
            };
            if run_registry {
                now = due;
                let warmed = e.prov.process_due(due)?;
                e.on_warm(warmed, due)?;
                continue;
            }
        }
        let Some(ev) = e.heap.pop() else { break };
        now = ev.time;
        match ev.kind {
            Kind::Completion { vm, req } => e.on_completion(vm, req, now)?,
            Kind::Tick(k) => e.on_tick(k, now, source)?,
            Kind::Vertical => e.on_vertical(now)?,
            Kind::Interval(k) => e.on_interval(k, now),
            Kind::Arrival(req) => e.dispatch(req, now)?,
        }
    }
    let final_s = now.max(end_s);
    let warm: Vec<VmId> = e.warm.iter().copied().collect();
    for id in warm {
        e.settle(id, final_s);
    }

    let deployments: Vec<Deployment> = e
        .prov
        .vms()
        .iter()
        .map(|v| Deployment {
            vm: v.id,
            flavor: catalog.get(v.flavor).name.clone(),
            cost_per_period: catalog.get(v.flavor).cost,
            deployed_at_s: v.deployed_at,
            ended_at_s: v.terminated_at.unwrap_or(end_s).max(v.deployed_at),
        })
        .collect();
    let tau = config.provisioner.tau_vm_s;
    let total_cost = account_cost(&deployments, tau);
    let periods = deployments.iter().map(|d| billed_periods(d, tau)).sum();

    let lambda = slo.lambda_s;
    let mut latencies: Vec<f64> = e.requests.iter().filter_map(|r| r.latency_s()).collect();
    latencies.sort_by(f64::total_cmp);
    let pct = |q: f64| (!latencies.is_empty()).then(|| quantile_sorted(&latencies, q));
    let hits = e.requests.iter().filter(|r| r.slo_hit(lambda)).count() as u64;
    let total = e.requests.len() as u64;
    let summary = SimulationSummary {
        flavor: flavor.name.clone(),
        n_req: e.prov.choice().n_req,
        horizon_intervals: e.prov.horizon(),
        intervals: n,
        duration_s: final_s,
        requests: total,
        served: latencies.len() as u64,
        slo_hits: hits,
        slo_compliance: if total == 0 { 1.0 } else { hits as f64 / total as f64 },
        latency_p50_s: pct(0.5),
        latency_p95_s: pct(0.95),
        latency_p99_s: pct(0.99),
        total_cost,
        vms_deployed: deployments.len() as u64,
        vm_periods_billed: periods,
        core_seconds_released: e.core_seconds_released,
        vertical_scale_ups: e.ups,
        vertical_scale_downs: e.downs,
        degraded_ticks: e.ticks.iter().filter(|t| t.forecast.is_none()).count() as u64,
        illegal_transitions: e.prov.illegal_transitions(),
    };
    Ok(SimulationReport {
        summary,
        ticks: e.ticks,
        deployments,
        requests: e.requests,
    })
}
