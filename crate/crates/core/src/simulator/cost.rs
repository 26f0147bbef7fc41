use serde::{Deserialize, Serialize};

use crate::provisioner::VmId;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Deployment {
    pub vm: VmId,
    pub flavor: String,
    pub cost_per_period: f64,
    pub deployed_at_s: f64,
    /// Termination, or the end of the billing horizon for VMs still alive.
    pub ended_at_s: f64,
}

/// `⌈span / τ⌉` lease periods, at least one (a lease is paid once started).
pub fn billed_periods(d: &Deployment, tau_vm_s: f64) -> u64 {
    let span = (d.ended_at_s - d.deployed_at_s).max(0.0);
    // Spans that are whole multiples of τ up to rounding bill exactly.
    ((span / tau_vm_s - 1e-9).ceil() as u64).max(1)
}

/// Total hosting cost; parked time is billed like serving time.
pub fn account_cost(deployments: &[Deployment], tau_vm_s: f64) -> f64 {
    deployments
        .iter()
        .map(|d| billed_periods(d, tau_vm_s) as f64 * d.cost_per_period)
        .sum()
}
