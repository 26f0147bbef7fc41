//! Four-state VM lifecycle and the tick-based provisioning loop.
//!
//! The provisioner owns the VM fleet and the pending-action registries. The
//! simulator drives it: `tick` once per provisioning interval, `process_due`
//! whenever a registered download or model load falls due, and the
//! `finish_*` hooks when a draining or expiring VM becomes idle.

mod registry;

use std::collections::BTreeSet;
use std::fmt;
use std::io::Write;
use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

pub use registry::{ActionRegistry, Due};

use crate::estimator::{
    requests_per_vm, select_from, vm_count, EstimatorError, FlavorCatalog, FlavorChoice, SloSpec,
};
use crate::profiler::{ExecutionProfile, SetupTimes};

pub type VmId = u64;

static ILLEGAL_TRANSITIONS: AtomicU64 = AtomicU64::new(0);

/// Illegal lifecycle transitions attempted by any provisioner in this process.
pub fn illegal_transitions_total() -> u64 {
    ILLEGAL_TRANSITIONS.load(Ordering::Relaxed)
}

#[derive(Debug, thiserror::Error)]
pub enum ProvisionError {
    #[error(transparent)]
    Estimator(#[from] EstimatorError),
    #[error("invalid provisioner configuration: {0}")]
    InvalidConfig(String),
    #[error("illegal transition of VM {vm}: {from} -> {to}")]
    IllegalTransition { vm: VmId, from: VmState, to: VmState },
    #[error("contract violation: {0}")]
    Contract(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum VmState {
    VmCold,
    VmWarm,
    ContainerCold,
    ContainerWarm,
}

impl VmState {
    /// The lifecycle edge set; termination (`any -> VmCold`) is always allowed.
    pub fn can_transition(self, to: VmState) -> bool {
        use VmState::*;
        matches!(
            (self, to),
            (VmCold, VmWarm) | (VmWarm, ContainerCold) | (ContainerCold, ContainerWarm) | (ContainerWarm, ContainerCold)
        ) || (to == VmCold && self != VmCold)
    }
}

impl fmt::Display for VmState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            VmState::VmCold => "VmCold",
            VmState::VmWarm => "VmWarm",
            VmState::ContainerCold => "ContainerCold",
            VmState::ContainerWarm => "ContainerWarm",
        })
    }
}

/// What the VM is doing, on top of its lifecycle state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    /// Booting or downloading the container.
    Deploying,
    /// ContainerCold with a model load in progress.
    Loading,
    /// ContainerWarm and in the load balancer.
    Serving,
    /// ContainerWarm, out of the balancer, parks once idle.
    Draining,
    /// ContainerCold in the recallable pool, running batch work.
    Parked,
    /// Lease expired while busy; terminates once idle.
    Terminating,
    Terminated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VmInstance {
    pub id: VmId,
    pub flavor: usize,
    pub state: VmState,
    pub phase: Phase,
    pub state_since: f64,
    pub deployed_at: f64,
    pub lease_expiry: f64,
    pub active_cores: u32,
    pub serving_batch: bool,
    pub terminated_at: Option<f64>,
}

impl VmInstance {
    pub fn is_live(&self) -> bool {
        self.phase != Phase::Terminated
    }

    pub fn accepts_requests(&self) -> bool {
        self.phase == Phase::Serving
    }
}

/// What to do with parked VMs when new VMs are needed.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecallPolicy {
    /// Deploy δ new VMs and recall the whole parked pool.
    #[default]
    Full,
    /// Recall up to δ parked VMs first and deploy only the remainder.
    Partial,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProvisionerConfig {
    pub tick_s: f64,
    /// Lease period τ_vm.
    pub tau_vm_s: f64,
    /// Forecasting overhead added to the setup horizon.
    pub t_forecast_s: f64,
    /// Trace resolution; forecasts are requests per this interval.
    pub resolution_s: f64,
    pub recall: RecallPolicy,
}

impl Default for ProvisionerConfig {
    fn default() -> Self {
        Self {
            tick_s: 60.0,
            tau_vm_s: 3600.0,
            t_forecast_s: 0.0,
            resolution_s: 60.0,
            recall: RecallPolicy::Full,
        }
    }
}

impl ProvisionerConfig {
    pub fn validate(&self) -> Result<(), ProvisionError> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(ProvisionError::InvalidConfig(format!("{name} must be positive, got {v}")))
            }
        };
        positive("tick_s", self.tick_s)?;
        positive("tau_vm_s", self.tau_vm_s)?;
        positive("resolution_s", self.resolution_s)?;
        if !(self.t_forecast_s >= 0.0 && self.t_forecast_s.is_finite()) {
            return Err(ProvisionError::InvalidConfig("t_forecast_s must be >= 0".into()));
        }
        Ok(())
    }
}

/// `t′_setup = t_vm + t_cd + t_ml + t_forecast` rounded up to whole intervals.
pub fn setup_horizon(setup: &SetupTimes, t_forecast_s: f64, resolution_s: f64) -> usize {
    let total = setup.total() + t_forecast_s;
    // Tolerate rounding in sums such as 100.1 + 19.9.
    (total / resolution_s - 1e-9).ceil().max(0.0) as usize
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TickRecord {
    pub tick: u64,
    pub now_s: f64,
    /// Forecast in requests per interval; `None` on a degraded tick.
    pub forecast: Option<f64>,
    pub alpha: u64,
    pub delta: i64,
    pub deploys: u64,
    pub recalls: u64,
    pub parks: u64,
    /// Parks requested but impossible for lack of serving VMs.
    pub parks_deferred: u64,
    pub expiries: u64,
}

/// Side effects of one tick that the simulator must act on.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TickOutcome {
    pub deployed: Vec<VmId>,
    pub recalled: Vec<VmId>,
    pub parked: Vec<VmId>,
    /// Busy VMs that will park once idle.
    pub draining: Vec<VmId>,
    pub terminated: Vec<VmId>,
    /// Busy VMs whose lease expired; their queued requests must move.
    pub terminating: Vec<VmId>,
}

#[derive(Debug, Clone)]
pub struct Provisioner {
    config: ProvisionerConfig,
    catalog: FlavorCatalog,
    setup: SetupTimes,
    slo: SloSpec,
    choice: FlavorChoice,
    horizon: usize,
    vms: Vec<VmInstance>,
    scaled: BTreeSet<VmId>,
    draining: BTreeSet<VmId>,
    registry: ActionRegistry,
    prev_alpha: u64,
    last_tick_s: Option<f64>,
    ticks: u64,
    log: Vec<TickRecord>,
    illegal: u64,
}

impl Provisioner {
    /// Selects the flavor once (the choice depends only on SLO and costs).
    pub fn new(
        config: ProvisionerConfig,
        catalog: FlavorCatalog,
        profile: &ExecutionProfile,
        slo: SloSpec,
    ) -> Result<Self, ProvisionError> {
        config.validate()?;
        slo.validate()?;
        profile.setup_times.validate().map_err(ProvisionError::InvalidConfig)?;
        let n_reqs: Vec<_> = catalog.flavors().iter().map(|f| requests_per_vm(f, profile, &slo)).collect();
        let choice = select_from(&catalog, &n_reqs)?;
        let horizon = setup_horizon(&profile.setup_times, config.t_forecast_s, config.resolution_s);
        Ok(Self {
            config,
            catalog,
            setup: profile.setup_times,
            slo,
            choice,
            horizon,
            vms: Vec::new(),
            scaled: BTreeSet::new(),
            draining: BTreeSet::new(),
            registry: ActionRegistry::default(),
            prev_alpha: 0,
            last_tick_s: None,
            ticks: 0,
            log: Vec::new(),
            illegal: 0,
        })
    }

    pub fn config(&self) -> &ProvisionerConfig {
        &self.config
    }

    pub fn catalog(&self) -> &FlavorCatalog {
        &self.catalog
    }

    pub fn choice(&self) -> &FlavorChoice {
        &self.choice
    }

    /// Setup horizon in intervals.
    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn horizon_s(&self) -> f64 {
        self.horizon as f64 * self.config.resolution_s
    }

    pub fn vms(&self) -> &[VmInstance] {
        &self.vms
    }

    pub fn vm(&self, id: VmId) -> &VmInstance {
        &self.vms[id as usize]
    }

    pub fn scaled_vms(&self) -> &BTreeSet<VmId> {
        &self.scaled
    }

    pub fn registry(&self) -> &ActionRegistry {
        &self.registry
    }

    pub fn prev_step_vm_count(&self) -> u64 {
        self.prev_alpha
    }

    pub fn log(&self) -> &[TickRecord] {
        &self.log
    }

    pub fn illegal_transitions(&self) -> u64 {
        self.illegal
    }

    pub fn live_count(&self) -> usize {
        self.vms.iter().filter(|v| v.is_live()).count()
    }

    pub fn serving_ids(&self) -> impl Iterator<Item = VmId> + '_ {
        self.vms.iter().filter(|v| v.accepts_requests()).map(|v| v.id)
    }

    /// Requests per λ-window corresponding to a per-interval forecast.
    pub fn window_demand(&self, per_interval: f64) -> f64 {
        per_interval * self.slo.lambda_s / self.config.resolution_s
    }

    fn transition(&mut self, id: VmId, to: VmState, now: f64) -> Result<(), ProvisionError> {
        let vm = &mut self.vms[id as usize];
        let from = vm.state;
        if !from.can_transition(to) {
            self.illegal += 1;
            ILLEGAL_TRANSITIONS.fetch_add(1, Ordering::Relaxed);
            return Err(ProvisionError::IllegalTransition { vm: id, from, to });
        }
        vm.state = to;
        vm.state_since = now;
        Ok(())
    }

    fn deploy(&mut self, now: f64) -> VmId {
        let id = self.vms.len() as VmId;
        let flavor = self.catalog.get(self.choice.i_star);
        self.vms.push(VmInstance {
            id,
            flavor: self.choice.i_star,
            state: VmState::VmCold,
            phase: Phase::Deploying,
            state_since: now,
            deployed_at: now,
            lease_expiry: now + self.config.tau_vm_s,
            active_cores: flavor.cores,
            serving_batch: false,
            terminated_at: None,
        });
        let t_download = now + self.setup.vm;
        self.registry.container_download.entry(Due(t_download)).or_default().push(id);
        self.registry
            .model_load
            .entry(Due(t_download + self.setup.cd))
            .or_default()
            .push(id);
        self.registry
            .vm_expire
            .entry(Due(now + self.config.tau_vm_s))
            .or_default()
            .push(id);
        id
    }

    /// Deploy `count` VMs that are serving immediately (a pre-warmed cluster
    /// at the start of a run). Their lease starts at `now`.
    pub fn prewarm(&mut self, count: u64, now: f64) -> Result<Vec<VmId>, ProvisionError> {
        let mut ids = Vec::new();
        for _ in 0..count {
            let id = self.vms.len() as VmId;
            let flavor = self.catalog.get(self.choice.i_star);
            self.vms.push(VmInstance {
                id,
                flavor: self.choice.i_star,
                state: VmState::VmCold,
                phase: Phase::Deploying,
                state_since: now,
                deployed_at: now,
                lease_expiry: now + self.config.tau_vm_s,
                active_cores: flavor.cores,
                serving_batch: false,
                terminated_at: None,
            });
            self.registry
                .vm_expire
                .entry(Due(now + self.config.tau_vm_s))
                .or_default()
                .push(id);
            self.transition(id, VmState::VmWarm, now)?;
            self.transition(id, VmState::ContainerCold, now)?;
            self.transition(id, VmState::ContainerWarm, now)?;
            self.vms[id as usize].phase = Phase::Serving;
            ids.push(id);
        }
        self.prev_alpha = self.prev_alpha.max(count);
        Ok(ids)
    }

    /// Earliest pending download, model load or load completion.
    pub fn next_due(&self) -> Option<f64> {
        self.registry.next_lifecycle_due().map(|d| d.0)
    }

    /// Execute every download / model load / load completion due by `now`.
    /// Returns the VMs that entered the load balancer.
    pub fn process_due(&mut self, now: f64) -> Result<Vec<VmId>, ProvisionError> {
        let mut warmed = Vec::new();
        while let Some((kind, due, ids)) = self.registry.pop_lifecycle_due(now) {
            for id in ids {
                if !self.vms[id as usize].is_live() {
                    continue;
                }
                match kind {
                    registry::Kind::Download => self.transition(id, VmState::VmWarm, due.0)?,
                    registry::Kind::ModelLoad => {
                        self.transition(id, VmState::ContainerCold, due.0)?;
                        self.vms[id as usize].phase = Phase::Loading;
                        self.registry
                            .load_complete
                            .entry(Due(due.0 + self.setup.ml))
                            .or_default()
                            .push(id);
                    }
                    registry::Kind::LoadComplete => {
                        self.transition(id, VmState::ContainerWarm, due.0)?;
                        self.vms[id as usize].phase = Phase::Serving;
                        warmed.push(id);
                    }
                }
            }
        }
        Ok(warmed)
    }

    /// Expiring VMs that need a replacement: leases ending inside the part
    /// of the horizon that became visible since the previous tick,
    /// `(last + H, now + H]`, capped at the shortfall of the VMs that outlive
    /// the horizon against the previous α. Surplus VMs are not replaced.
    pub fn expire_vm_count(&self, now: f64) -> u64 {
        let h = self.horizon_s();
        let hi = now + h;
        let lo = self.last_tick_s.map(|t| t + h);
        let entering = self
            .vms
            .iter()
            .filter(|v| v.lease_expiry <= hi && lo.is_none_or(|lo| v.lease_expiry > lo))
            .count() as u64;
        let covered = self
            .vms
            .iter()
            .filter(|v| v.is_live() && v.phase != Phase::Terminating && v.lease_expiry > hi)
            .count() as u64;
        entering.min(self.prev_alpha.saturating_sub(covered))
    }

    /// One provisioning step. `forecast` is the (compensated) request count
    /// per interval for `now + t′_setup`; `None` reuses the previous α and
    /// marks the tick degraded. `busy(id)` reports in-flight or queued work.
    pub fn tick(
        &mut self,
        now: f64,
        forecast: Option<f64>,
        busy: impl Fn(VmId) -> bool,
    ) -> Result<TickOutcome, ProvisionError> {
        let forecast = forecast.filter(|y| y.is_finite());
        let alpha = match forecast {
            Some(y) => vm_count(self.window_demand(y), self.choice.n_req),
            None => self.prev_alpha,
        };
        let expiring = self.expire_vm_count(now);
        let delta = alpha as i64 - self.prev_alpha as i64 + expiring as i64;

        let mut out = TickOutcome::default();
        let mut deferred = 0;
        if delta > 0 {
            let pool = (self.scaled.len() + self.draining.len()) as u64;
            let (deploys, recalls) = match self.config.recall {
                RecallPolicy::Full => (delta as u64, pool),
                RecallPolicy::Partial => {
                    let r = pool.min(delta as u64);
                    (delta as u64 - r, r)
                }
            };
            for _ in 0..deploys {
                out.deployed.push(self.deploy(now));
            }
            out.recalled = self.scale_up(recalls, now)?;
        } else {
            let pool = (self.scaled.len() + self.draining.len()) as i64;
            let delta_prime = delta + pool;
            if delta_prime >= 0 {
                out.recalled = self.scale_up(delta_prime as u64, now)?;
            } else {
                let (parked, draining, short) = self.scale_down(delta_prime.unsigned_abs(), now, &busy)?;
                out.parked = parked;
                out.draining = draining;
                deferred = short;
            }
        }
        let (terminated, terminating) = self.expire(now, &busy)?;
        out.terminated = terminated;
        out.terminating = terminating;

        self.log.push(TickRecord {
            tick: self.ticks,
            now_s: now,
            forecast,
            alpha,
            delta,
            deploys: out.deployed.len() as u64,
            recalls: out.recalled.len() as u64,
            parks: (out.parked.len() + out.draining.len()) as u64,
            parks_deferred: deferred,
            expiries: (out.terminated.len() + out.terminating.len()) as u64,
        });
        self.prev_alpha = alpha;
        self.last_tick_s = Some(now);
        self.ticks += 1;
        Ok(out)
    }

    /// Recall `k` VMs: draining ones rejoin the balancer at once, parked
    /// ones (latest lease first) reload the model, taking t_ml.
    pub fn scale_up(&mut self, k: u64, now: f64) -> Result<Vec<VmId>, ProvisionError> {
        let pool = (self.scaled.len() + self.draining.len()) as u64;
        if k > pool {
            return Err(ProvisionError::Contract(format!("scale_up({k}) with only {pool} recallable VMs")));
        }
        let mut out = Vec::new();
        let draining: Vec<VmId> = self.draining.iter().copied().take(k as usize).collect();
        for id in draining {
            self.draining.remove(&id);
            self.vms[id as usize].phase = Phase::Serving;
            out.push(id);
        }
        let mut parked: Vec<VmId> = self.scaled.iter().copied().collect();
        parked.sort_by(|a, b| {
            let (va, vb) = (&self.vms[*a as usize], &self.vms[*b as usize]);
            vb.lease_expiry.total_cmp(&va.lease_expiry).then(a.cmp(b))
        });
        for id in parked.into_iter().take(k as usize - out.len()) {
            self.scaled.remove(&id);
            let vm = &mut self.vms[id as usize];
            vm.serving_batch = false;
            vm.phase = Phase::Loading;
            self.registry
                .load_complete
                .entry(Due(now + self.setup.ml))
                .or_default()
                .push(id);
            out.push(id);
        }
        Ok(out)
    }

    /// Park `k` serving VMs, idle ones first and then those whose lease ends
    /// soonest. Busy VMs drain before parking. Returns (parked, draining,
    /// shortfall).
    pub fn scale_down(
        &mut self,
        k: u64,
        now: f64,
        busy: impl Fn(VmId) -> bool,
    ) -> Result<(Vec<VmId>, Vec<VmId>, u64), ProvisionError> {
        let mut candidates: Vec<(bool, f64, VmId)> = self
            .vms
            .iter()
            .filter(|v| v.phase == Phase::Serving)
            .map(|v| (busy(v.id), v.lease_expiry, v.id))
            .collect();
        candidates.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.total_cmp(&b.1)).then(a.2.cmp(&b.2)));
        let take = (k as usize).min(candidates.len());
        let (mut parked, mut draining) = (Vec::new(), Vec::new());
        for &(is_busy, _, id) in &candidates[..take] {
            if is_busy {
                self.vms[id as usize].phase = Phase::Draining;
                self.draining.insert(id);
                draining.push(id);
            } else {
                self.park(id, now)?;
                parked.push(id);
            }
        }
        Ok((parked, draining, k - take as u64))
    }

    fn park(&mut self, id: VmId, now: f64) -> Result<(), ProvisionError> {
        self.transition(id, VmState::ContainerCold, now)?;
        let vm = &mut self.vms[id as usize];
        vm.phase = Phase::Parked;
        vm.serving_batch = true;
        self.scaled.insert(id);
        Ok(())
    }

    /// A draining VM ran out of work.
    pub fn finish_drain(&mut self, id: VmId, now: f64) -> Result<(), ProvisionError> {
        if self.vms[id as usize].phase != Phase::Draining {
            return Ok(());
        }
        self.draining.remove(&id);
        self.park(id, now)
    }

    /// Terminate every VM whose lease ended by `now`; busy serving VMs finish
    /// their in-flight request first.
    pub fn expire(
        &mut self,
        now: f64,
        busy: impl Fn(VmId) -> bool,
    ) -> Result<(Vec<VmId>, Vec<VmId>), ProvisionError> {
        let (mut terminated, mut terminating) = (Vec::new(), Vec::new());
        for (_, ids) in self.registry.pop_expired(now) {
            for id in ids {
                let vm = &self.vms[id as usize];
                if !vm.is_live() {
                    continue;
                }
                self.scaled.remove(&id);
                self.draining.remove(&id);
                if vm.state == VmState::ContainerWarm && busy(id) {
                    self.vms[id as usize].phase = Phase::Terminating;
                    terminating.push(id);
                } else {
                    self.terminate(id, now)?;
                    terminated.push(id);
                }
            }
        }
        Ok((terminated, terminating))
    }

    /// An expiring VM finished its last request.
    pub fn finish_termination(&mut self, id: VmId, now: f64) -> Result<(), ProvisionError> {
        if self.vms[id as usize].phase == Phase::Terminating {
            self.terminate(id, now)?;
        }
        Ok(())
    }

    fn terminate(&mut self, id: VmId, now: f64) -> Result<(), ProvisionError> {
        if self.vms[id as usize].state == VmState::ContainerWarm {
            // Unload the model before shutting down.
            self.transition(id, VmState::ContainerCold, now)?;
        }
        if self.vms[id as usize].state != VmState::VmCold {
            self.transition(id, VmState::VmCold, now)?;
        }
        self.registry.forget(id);
        let vm = &mut self.vms[id as usize];
        vm.phase = Phase::Terminated;
        vm.serving_batch = false;
        vm.terminated_at = Some(now);
        Ok(())
    }

    /// Change the active core count of a warm VM; returns the previous count.
    pub fn set_active_cores(&mut self, id: VmId, cores: u32) -> Result<u32, ProvisionError> {
        let max = self.catalog.get(self.vms[id as usize].flavor).cores;
        let vm = &mut self.vms[id as usize];
        if vm.state != VmState::ContainerWarm || cores == 0 || cores > max {
            return Err(ProvisionError::Contract(format!(
                "cannot set {cores} cores on VM {id} in {} with {max} cores",
                vm.state
            )));
        }
        Ok(std::mem::replace(&mut vm.active_cores, cores))
    }

    /// JSON snapshot of the fleet.
    pub fn snapshot_json(&self) -> String {
        serde_json::to_string_pretty(&self.vms).expect("VM records serialize")
    }
}

pub fn write_tick_log<W: Write>(records: &[TickRecord], out: W) -> std::io::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["tick", "now_s", "forecast", "alpha", "delta", "deploys", "recalls", "parks", "expiries"])?;
    for r in records {
        w.write_record([
            r.tick.to_string(),
            r.now_s.to_string(),
            r.forecast.map(|f| f.to_string()).unwrap_or_default(),
            r.alpha.to_string(),
            r.delta.to_string(),
            r.deploys.to_string(),
            r.recalls.to_string(),
            r.parks.to_string(),
            r.expiries.to_string(),
        ])?;
    }
    w.flush()
}
