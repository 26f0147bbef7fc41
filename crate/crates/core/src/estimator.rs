//! Cost-per-request flavor selection and VM counts.

use std::collections::HashSet;
use std::fmt;
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::profiler::ExecutionProfile;

/// Relative slack applied before flooring `λ / t_p` so that exact ratios such
/// as 2.0 / 0.5 are not lost to rounding.
const FLOOR_RTOL: f64 = 1e-12;
/// Cost-per-request values this close (relative) are ties.
const CPR_RTOL: f64 = 1e-12;
/// Largest enumeration the brute-force oracle accepts.
pub const ORACLE_SPACE_LIMIT: f64 = 1e7;

#[derive(Debug, thiserror::Error)]
pub enum EstimatorError {
    #[error("no flavor can meet the SLO: {}", describe(.reasons))]
    Infeasible { reasons: Vec<(String, Infeasibility)> },
    #[error("brute-force search space of {space:.3e} exceeds the oracle limit")]
    OracleScale { space: f64 },
    #[error("invalid catalog: {0}")]
    InvalidCatalog(String),
    #[error("invalid SLO: {0}")]
    InvalidSlo(String),
    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
}

fn describe(reasons: &[(String, Infeasibility)]) -> String {
    reasons
        .iter()
        .map(|(name, why)| format!("{name}: {why}"))
        .collect::<Vec<_>>()
        .join("; ")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VmFlavor {
    pub name: String,
    pub cores: u32,
    pub mem_gb: f64,
    /// Cost per lease period.
    pub cost: f64,
}

impl VmFlavor {
    pub fn new(name: impl Into<String>, cores: u32, mem_gb: f64, cost: f64) -> Self {
        Self {
            name: name.into(),
            cores,
            mem_gb,
            cost,
        }
    }

    fn validate(&self) -> Result<(), EstimatorError> {
        if self.cores == 0 || !(self.mem_gb > 0.0) || !(self.cost > 0.0) || !self.cost.is_finite() {
            return Err(EstimatorError::InvalidCatalog(format!(
                "flavor `{}` needs cores >= 1, mem_gb > 0 and cost > 0",
                self.name
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<VmFlavor>", into = "Vec<VmFlavor>")]
pub struct FlavorCatalog {
    flavors: Vec<VmFlavor>,
}

impl TryFrom<Vec<VmFlavor>> for FlavorCatalog {
    type Error = EstimatorError;

    fn try_from(flavors: Vec<VmFlavor>) -> Result<Self, Self::Error> {
        Self::new(flavors)
    }
}

impl From<FlavorCatalog> for Vec<VmFlavor> {
    fn from(c: FlavorCatalog) -> Self {
        c.flavors
    }
}

impl FlavorCatalog {
    pub fn new(flavors: Vec<VmFlavor>) -> Result<Self, EstimatorError> {
        if flavors.is_empty() {
            return Err(EstimatorError::InvalidCatalog("catalog is empty".into()));
        }
        let mut names = HashSet::new();
        for f in &flavors {
            f.validate()?;
            if !names.insert(f.name.as_str()) {
                return Err(EstimatorError::InvalidCatalog(format!("duplicate flavor name `{}`", f.name)));
            }
        }
        Ok(Self { flavors })
    }

    pub fn flavors(&self) -> &[VmFlavor] {
        &self.flavors
    }

    pub fn get(&self, i: usize) -> &VmFlavor {
        &self.flavors[i]
    }

    pub fn len(&self) -> usize {
        self.flavors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.flavors.is_empty()
    }

    /// Catalog with only flavor `i` (for single-flavor policies).
    pub fn only(&self, i: usize) -> FlavorCatalog {
        FlavorCatalog {
            flavors: vec![self.flavors[i].clone()],
        }
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.flavors.iter().position(|f| f.name == name)
    }

    pub fn load(path: &Path) -> Result<Self, EstimatorError> {
        Self::read(std::fs::File::open(path)?)
    }

    /// Parse a `name,cores,mem_gb,cost_per_period` CSV.
    pub fn read<R: Read>(reader: R) -> Result<Self, EstimatorError> {
        #[derive(Deserialize)]
        struct Row {
            name: String,
            cores: u32,
            mem_gb: f64,
            cost_per_period: f64,
        }
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let mut flavors = Vec::new();
        for row in rdr.deserialize::<Row>() {
            let row = row.map_err(|e| EstimatorError::Parse {
                line: e.position().map(|p| p.line()).unwrap_or(0),
                message: e.to_string(),
            })?;
            flavors.push(VmFlavor::new(row.name, row.cores, row.mem_gb, row.cost_per_period));
        }
        Self::new(flavors)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("name,cores,mem_gb,cost_per_period\n");
        for f in &self.flavors {
            out.push_str(&format!("{},{},{},{}\n", f.name, f.cores, f.mem_gb, f.cost));
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SloSpec {
    /// Latency bound λ in seconds.
    pub lambda_s: f64,
    #[serde(default = "default_percentile")]
    pub percentile: f64,
    #[serde(default)]
    pub min_mem_gb: f64,
}

fn default_percentile() -> f64 {
    0.95
}

impl SloSpec {
    pub fn new(lambda_s: f64, min_mem_gb: f64) -> Self {
        Self {
            lambda_s,
            percentile: default_percentile(),
            min_mem_gb,
        }
    }

    pub fn validate(&self) -> Result<(), EstimatorError> {
        if !(self.lambda_s > 0.0 && self.lambda_s.is_finite()) {
            return Err(EstimatorError::InvalidSlo(format!("lambda must be positive, got {}", self.lambda_s)));
        }
        if !(self.percentile > 0.0 && self.percentile < 1.0) {
            return Err(EstimatorError::InvalidSlo(format!(
                "percentile must be in (0, 1), got {}",
                self.percentile
            )));
        }
        if !(self.min_mem_gb >= 0.0) {
            return Err(EstimatorError::InvalidSlo("min_mem_gb must be >= 0".into()));
        }
        Ok(())
    }
}

/// Why a flavor cannot serve even one request within the SLO.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "reason", rename_all = "snake_case")]
pub enum Infeasibility {
    Memory { mem_gb: f64, min_mem_gb: f64 },
    Latency { t_p: f64, lambda_s: f64 },
    Unprofiled { cores: u32 },
}

impl fmt::Display for Infeasibility {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Infeasibility::Memory { mem_gb, min_mem_gb } => {
                write!(f, "memory {mem_gb} GB below the required {min_mem_gb} GB")
            }
            Infeasibility::Latency { t_p, lambda_s } => {
                write!(f, "percentile latency {t_p:.4} s exceeds the SLO of {lambda_s} s")
            }
            Infeasibility::Unprofiled { cores } => write!(f, "no profile for {cores} cores"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RequestsPerVm {
    pub n_req: u64,
    pub infeasible: Option<Infeasibility>,
}

/// `⌊λ / t_p⌋` requests per λ-window, or 0 with the reason when infeasible.
pub fn requests_per_vm(flavor: &VmFlavor, profile: &ExecutionProfile, slo: &SloSpec) -> RequestsPerVm {
    let t_p = profile
        .latency_at(flavor.cores, slo.percentile)
        .and_then(|r| r.ok());
    requests_per_vm_with(flavor, t_p, slo)
}

/// Same as [`requests_per_vm`] with the percentile latency given directly
/// (`None` = unprofiled core count).
pub fn requests_per_vm_with(flavor: &VmFlavor, t_p: Option<f64>, slo: &SloSpec) -> RequestsPerVm {
    let infeasible = |why| RequestsPerVm {
        n_req: 0,
        infeasible: Some(why),
    };
    if flavor.mem_gb < slo.min_mem_gb {
        return infeasible(Infeasibility::Memory {
            mem_gb: flavor.mem_gb,
            min_mem_gb: slo.min_mem_gb,
        });
    }
    let Some(t_p) = t_p.filter(|t| *t > 0.0 && t.is_finite()) else {
        return infeasible(Infeasibility::Unprofiled { cores: flavor.cores });
    };
    let n = (slo.lambda_s / t_p * (1.0 + FLOOR_RTOL)).floor();
    if n < 1.0 {
        return infeasible(Infeasibility::Latency {
            t_p,
            lambda_s: slo.lambda_s,
        });
    }
    RequestsPerVm {
        n_req: n as u64,
        infeasible: None,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlavorChoice {
    pub i_star: usize,
    pub n_req: u64,
    /// Cost per request.
    pub cpr: f64,
}

/// Minimum cost per request over feasible flavors; ties go to the smaller
/// cost, then the smaller index.
pub fn select_flavor(
    catalog: &FlavorCatalog,
    profile: &ExecutionProfile,
    slo: &SloSpec,
) -> Result<FlavorChoice, EstimatorError> {
    let n_reqs: Vec<RequestsPerVm> = catalog
        .flavors
        .iter()
        .map(|f| requests_per_vm(f, profile, slo))
        .collect();
    select_from(catalog, &n_reqs)
}

/// Selection over precomputed per-flavor request capacities.
pub fn select_from(catalog: &FlavorCatalog, n_reqs: &[RequestsPerVm]) -> Result<FlavorChoice, EstimatorError> {
    let mut best: Option<FlavorChoice> = None;
    for (i, (f, r)) in catalog.flavors.iter().zip(n_reqs).enumerate() {
        if r.n_req == 0 {
            continue;
        }
        let cpr = f.cost / r.n_req as f64;
        let better = match &best {
            None => true,
            Some(b) => {
                let tie = (cpr - b.cpr).abs() <= CPR_RTOL * cpr.max(b.cpr);
                if tie {
                    f.cost < catalog.flavors[b.i_star].cost
                } else {
                    cpr < b.cpr
                }
            }
        };
        if better {
            best = Some(FlavorChoice {
                i_star: i,
                n_req: r.n_req,
                cpr,
            });
        }
    }
    best.ok_or_else(|| EstimatorError::Infeasible {
        reasons: catalog
            .flavors
            .iter()
            .zip(n_reqs)
            .map(|(f, r)| (f.name.clone(), r.infeasible.unwrap_or(Infeasibility::Unprofiled { cores: f.cores })))
            .collect(),
    })
}

/// `α = ⌈y′ / n_req⌉`, with `y′` requests per λ-window.
pub fn vm_count(y: f64, n_req: u64) -> u64 {
    assert!(n_req >= 1, "vm_count needs a feasible flavor");
    let y = if y.is_finite() { y.max(0.0) } else { 0.0 };
    (y / n_req as f64).ceil() as u64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimationResult {
    pub i_star: usize,
    pub n_req: u64,
    pub cpr: f64,
    pub alpha: u64,
    /// Rational optimum `y′ · cpr_min`: a lower bound on any integral plan.
    pub lower_bound_cost: f64,
    pub total_cost: f64,
}

pub fn estimate(
    catalog: &FlavorCatalog,
    profile: &ExecutionProfile,
    slo: &SloSpec,
    y: f64,
) -> Result<EstimationResult, EstimatorError> {
    let choice = select_flavor(catalog, profile, slo)?;
    Ok(estimate_with(catalog, &choice, y))
}

pub fn estimate_with(catalog: &FlavorCatalog, choice: &FlavorChoice, y: f64) -> EstimationResult {
    let alpha = vm_count(y, choice.n_req);
    let cost = catalog.flavors[choice.i_star].cost;
    EstimationResult {
        i_star: choice.i_star,
        n_req: choice.n_req,
        cpr: choice.cpr,
        alpha,
        lower_bound_cost: y.max(0.0) * choice.cpr,
        total_cost: alpha as f64 * cost,
    }
}

/// Exhaustive minimum of `Σ α_i·cost_i` subject to `Σ α_i·n_req_i ≥ y′`.
/// `bounds[i]` caps `α_i`; by default `⌈y′ / n_req_i⌉` (more is never needed).
pub fn brute_force_optimal(
    catalog: &FlavorCatalog,
    profile: &ExecutionProfile,
    slo: &SloSpec,
    y: f64,
    bounds: Option<&[u64]>,
) -> Result<f64, EstimatorError> {
    let n_reqs: Vec<u64> = catalog
        .flavors
        .iter()
        .map(|f| requests_per_vm(f, profile, slo).n_req)
        .collect();
    let costs: Vec<f64> = catalog.flavors.iter().map(|f| f.cost).collect();
    brute_force_with(&costs, &n_reqs, y, bounds)
}

/// Oracle over raw `(cost_i, n_req_i)` pairs.
pub fn brute_force_with(costs: &[f64], n_reqs: &[u64], y: f64, bounds: Option<&[u64]>) -> Result<f64, EstimatorError> {
    let need = y.max(0.0).ceil() as u64;
    if need == 0 {
        return Ok(0.0);
    }
    let caps: Vec<u64> = match bounds {
        Some(b) => b.iter().zip(n_reqs).map(|(&b, &n)| if n == 0 { 0 } else { b }).collect(),
        None => n_reqs
            .iter()
            .map(|&n| if n == 0 { 0 } else { need.div_ceil(n) })
            .collect(),
    };
    let space: f64 = caps.iter().map(|&c| (c + 1) as f64).product();
    if space > ORACLE_SPACE_LIMIT {
        return Err(EstimatorError::OracleScale { space });
    }
    let mut best = f64::INFINITY;
    let mut alpha = vec![0u64; caps.len()];
    enumerate(0, &caps, costs, n_reqs, need, 0, 0.0, &mut alpha, &mut best);
    if best.is_infinite() {
        return Err(EstimatorError::Infeasible { reasons: Vec::new() });
    }
    Ok(best)
}

#[allow(clippy::too_many_arguments)]
fn enumerate(
    i: usize,
    caps: &[u64],
    costs: &[f64],
    n_reqs: &[u64],
    need: u64,
    capacity: u64,
    cost: f64,
    alpha: &mut [u64],
    best: &mut f64,
) {
    if i == caps.len() {
        if capacity >= need && cost < *best {
            *best = cost;
        }
        return;
    }
    for a in 0..=caps[i] {
        alpha[i] = a;
        enumerate(
            i + 1,
            caps,
            costs,
            n_reqs,
            need,
            capacity + a * n_reqs[i],
            cost + a as f64 * costs[i],
            alpha,
            best,
        );
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::profile_with;

    #[test]
    fn requests_per_vm_examples() {
        let slo = SloSpec::new(2.0, 2.0);
        let p = profile_with(&[(1, 0.5), (2, 2.5)]);
        assert_eq!(requests_per_vm(&VmFlavor::new("a", 1, 4.0, 1.0), &p, &slo).n_req, 4);
        let mem = requests_per_vm(&VmFlavor::new("b", 1, 1.0, 1.0), &p, &slo);
        assert_eq!(mem.n_req, 0);
        assert!(matches!(mem.infeasible, Some(Infeasibility::Memory { .. })));
        let slow = requests_per_vm(&VmFlavor::new("c", 2, 4.0, 1.0), &p, &slo);
        assert!(matches!(slow.infeasible, Some(Infeasibility::Latency { .. })));
        let unprof = requests_per_vm(&VmFlavor::new("d", 8, 4.0, 1.0), &p, &slo);
        assert!(matches!(unprof.infeasible, Some(Infeasibility::Unprofiled { cores: 8 })));
    }

    #[test]
    fn selection_and_tie_breaks() {
        let slo = SloSpec::new(2.0, 0.0);
        // A: cost 4, n_req 4 (cpr 1.0); B: cost 3, n_req 2 (cpr 1.5) -> A.
        let p = profile_with(&[(4, 0.5), (2, 1.0)]);
        let cat = FlavorCatalog::new(vec![VmFlavor::new("A", 4, 8.0, 4.0), VmFlavor::new("B", 2, 8.0, 3.0)]).unwrap();
        let c = select_flavor(&cat, &p, &slo).unwrap();
        assert_eq!((c.i_star, c.n_req, c.cpr), (0, 4, 1.0));
        // A: cost 4, n_req 4; B: cost 2, n_req 2 -> equal cpr, B is cheaper.
        let cat = FlavorCatalog::new(vec![VmFlavor::new("A", 4, 8.0, 4.0), VmFlavor::new("B", 2, 8.0, 2.0)]).unwrap();
        assert_eq!(select_flavor(&cat, &p, &slo).unwrap().i_star, 1);
        // Full tie -> smaller index.
        let cat = FlavorCatalog::new(vec![VmFlavor::new("A", 2, 8.0, 2.0), VmFlavor::new("B", 2, 9.0, 2.0)]).unwrap();
        assert_eq!(select_flavor(&cat, &p, &slo).unwrap().i_star, 0);
        // Everything too slow.
        let slow = profile_with(&[(4, 3.0), (2, 5.0)]);
        let cat = FlavorCatalog::new(vec![VmFlavor::new("A", 4, 8.0, 4.0), VmFlavor::new("B", 2, 8.0, 3.0)]).unwrap();
        match select_flavor(&cat, &slow, &slo) {
            Err(EstimatorError::Infeasible { reasons }) => assert_eq!(reasons.len(), 2),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn vm_count_examples() {
        assert_eq!(vm_count(10.0, 4), 3);
        assert_eq!(vm_count(0.0, 4), 0);
        assert_eq!(vm_count(8.0, 4), 2);
        assert!(2.0 * 1.0 < (8.0 / 4.0) * 1.0 + 1.0);
        assert_eq!(vm_count(-3.0, 4), 0);
    }

    #[test]
    fn brute_force_examples() {
        // A(cost 5, n_req 3), B(cost 2, n_req 1), y' = 4 -> 1A + 1B = 7.
        assert_eq!(brute_force_with(&[5.0, 2.0], &[3, 1], 4.0, None).unwrap(), 7.0);
        assert_eq!(brute_force_with(&[5.0, 2.0], &[3, 1], 0.0, None).unwrap(), 0.0);
        let greedy = vm_count(4.0, 3) as f64 * 5.0;
        assert_eq!(greedy, 10.0);
        assert!(greedy < 4.0 * (5.0 / 3.0) + 5.0);
        // Single feasible flavor: brute force equals the greedy count.
        assert_eq!(brute_force_with(&[3.0, 1.0], &[4, 0], 10.0, None).unwrap(), 9.0);
        assert!(matches!(
            brute_force_with(&[1.0; 6], &[1; 6], 200.0, None),
            Err(EstimatorError::OracleScale { .. })
        ));
    }

    #[test]
    fn catalog_csv_round_trip_and_validation() {
        let text = "name,cores,mem_gb,cost_per_period\nsmall,2,4,0.1\nlarge, 8, 16, 0.4\n";
        let cat = FlavorCatalog::read(text.as_bytes()).unwrap();
        assert_eq!(cat.len(), 2);
        assert_eq!(cat.get(1).cores, 8);
        assert_eq!(FlavorCatalog::read(cat.to_csv().as_bytes()).unwrap(), cat);
        assert!(FlavorCatalog::read("name,cores,mem_gb,cost_per_period\na,1,1,1\na,2,2,2\n".as_bytes()).is_err());
        assert!(FlavorCatalog::read("name,cores,mem_gb,cost_per_period\na,0,1,1\n".as_bytes()).is_err());
        assert!(FlavorCatalog::read("name,cores,mem_gb,cost_per_period\n".as_bytes()).is_err());
        assert!(matches!(
            FlavorCatalog::read("name,cores,mem_gb,cost_per_period\na,x,1,1\n".as_bytes()),
            Err(EstimatorError::Parse { line: 2, .. })
        ));
    }

    use proptest::prelude::*;

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(128))]

        #[test]
        fn alpha_monotone_and_bound_holds(
            n_req in 1u64..50, cost in 0.01f64..10.0, y1 in 0.0f64..500.0, y2 in 0.0f64..500.0,
        ) {
            let (lo, hi) = if y1 <= y2 { (y1, y2) } else { (y2, y1) };
            prop_assert!(vm_count(lo, n_req) <= vm_count(hi, n_req));
            let greedy = vm_count(hi, n_req) as f64 * cost;
            prop_assert!(greedy < hi / n_req as f64 * cost + cost);
        }

        #[test]
        fn selection_independent_of_workload(
            t1 in 0.05f64..3.0, t2 in 0.05f64..3.0, c1 in 0.1f64..5.0, c2 in 0.1f64..5.0, y in 0.0f64..300.0,
        ) {
            let p = profile_with(&[(1, t1), (2, t2)]);
            let cat = FlavorCatalog::new(vec![VmFlavor::new("a", 1, 4.0, c1), VmFlavor::new("b", 2, 4.0, c2)]).unwrap();
            let slo = SloSpec::new(2.0, 0.0);
            let a = estimate(&cat, &p, &slo, y);
            let b = estimate(&cat, &p, &slo, y + 50.0);
            match (a, b) {
                (Ok(a), Ok(b)) => prop_assert_eq!(a.i_star, b.i_star),
                (Err(_), Err(_)) => {}
                _ => prop_assert!(false),
            }
        }
    }
}
