//! Loss-minimizing optimal power flow on the branch flow (DistFlow) model
//! with the second-order cone relaxation `P² + Q² ≤ v·l`.
//!
//! Every branch is indexed by its child bus. For a non-root bus `j` with
//! parent `i`, children `C(j)` and net injection `s_j = p_j + i q_j`
//! (generation minus load):
//!
//! ```text
//! P_ij − r_ij·l_ij − Σ_{k∈C(j)} P_jk + p_j = 0
//! Q_ij − x_ij·l_ij − Σ_{k∈C(j)} Q_jk + q_j = 0
//! v_j = v_i − 2(r_ij·P_ij + x_ij·Q_ij) + (r_ij² + x_ij²)·l_ij
//! P_ij² + Q_ij² ≤ v_i·l_ij
//! ```
//!
//! The root voltage is fixed and the root injection is the slack. The loss
//! objective is `F = Σ r_ij·l_ij`.

use std::io::Write;
use std::sync::Arc;

use thiserror::Error;

use crate::grid::{FeederNetwork, GridError, RadialTree};
use crate::scheduler::DayAheadSchedule;

/// Relative exactness gap below which a branch counts as tight.
pub const TIGHT_REL_GAP: f64 = 1e-4;

/// Branches whose `v·l` falls below this (a current under 1e-5 per-unit)
/// carry no measurable current; their gap is scaled by this floor instead
/// of by `v·l`, so rounding noise on idle branches does not count.
pub const GAP_ABS_FLOOR: f64 = 1e-10;

#[derive(Debug, Error)]
pub enum OpfError {
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("hour {hour} not covered by the schedule ({len} hours)")]
    Hour { hour: usize, len: usize },
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// How the scheduled renewable energy is spread over the network.
#[derive(Debug, Clone, PartialEq)]
pub struct InjectionOptions {
    /// Buses receiving renewable output. `None` means every bus with
    /// installed capacity.
    pub pv_buses: Option<Vec<u32>>,
    /// Power factor of the renewable injection (1.0 = no reactive output).
    pub pv_power_factor: f64,
    /// Squared root voltage, per-unit².
    pub v_root: f64,
}

impl Default for InjectionOptions {
    fn default() -> Self {
        Self {
            pv_buses: None,
            pv_power_factor: 1.0,
            v_root: 1.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct OpfProblem {
    pub network: Arc<FeederNetwork>,
    pub tree: RadialTree,
    pub hour: usize,
    /// Net injection per bus (generation − load), per-unit, indexed like
    /// [`FeederNetwork::buses`]. Zero for de-energized buses.
    pub injection_p: Vec<f64>,
    pub injection_q: Vec<f64>,
    /// Renewable generation per bus, per-unit.
    pub generation_p: Vec<f64>,
    pub v_root: f64,
}

impl OpfProblem {
    /// Builds a problem from explicit renewable outputs `(bus id, kW, kvar)`.
    pub fn from_generation(
        network: Arc<FeederNetwork>,
        hour: usize,
        generation: &[(u32, f64, f64)],
        v_root: f64,
    ) -> Result<Self, OpfError> {
        let tree = network.tree()?;
        let n = network.buses().len();
        let kw_to_pu = 1.0 / (1000.0 * network.base_mva);
        let mut injection_p = vec![0.0; n];
        let mut injection_q = vec![0.0; n];
        let mut generation_p = vec![0.0; n];
        for &i in &tree.order {
            let (p, q) = network.bus_demand(i, hour)?;
            let cap = network.buses()[i].cap_kvar;
            injection_p[i] = -p * kw_to_pu;
            injection_q[i] = (cap - q) * kw_to_pu;
        }
        for &(id, p_kw, q_kvar) in generation {
            let i = network
                .bus_index(id)
                .ok_or_else(|| OpfError::Config(format!("generation at unknown bus {id}")))?;
            if network.buses()[i].pv_capacity <= 0.0 {
                return Err(OpfError::Config(format!(
                    "bus {id} has no renewable capacity"
                )));
            }
            if !tree.is_energized(i) {
                return Err(OpfError::Config(format!("bus {id} is de-energized")));
            }
            injection_p[i] += p_kw * kw_to_pu;
            injection_q[i] += q_kvar * kw_to_pu;
            generation_p[i] += p_kw * kw_to_pu;
        }
        let root = &network.buses()[tree.root];
        if !(root.v_min_sq() <= v_root && v_root <= root.v_max_sq()) {
            return Err(OpfError::Config(format!(
                "root voltage {v_root} outside [{}, {}]",
                root.v_min_sq(),
                root.v_max_sq()
            )));
        }
        Ok(Self {
            network,
            tree,
            hour,
            injection_p,
            injection_q,
            generation_p,
            v_root,
        })
    }

    pub fn n_buses(&self) -> usize {
        self.injection_p.len()
    }

    /// `(r, x, l_max)` of the branch feeding `bus`.
    pub fn branch_params(&self, bus: usize) -> Option<(f64, f64, f64)> {
        self.tree.parent_branch[bus].map(|k| {
            let br = &self.network.branches()[k];
            (br.r, br.x, br.l_max)
        })
    }

    /// Non-root energized buses, i.e. the branches, in breadth-first order.
    pub fn branch_buses(&self) -> impl Iterator<Item = usize> + '_ {
        self.tree
            .order
            .iter()
            .copied()
            .filter(move |&j| j != self.tree.root)
    }

    /// Total load minus renewable output over energized buses, per-unit.
    pub fn net_demand_p(&self) -> f64 {
        self.tree.order.iter().map(|&i| -self.injection_p[i]).sum()
    }
}

/// Spreads `g_pv` kW of renewable output over the renewable buses in
/// proportion to capacity, as `(bus id, kW, kvar)`.
pub fn allocate_renewable(
    network: &FeederNetwork,
    g_pv: f64,
    opts: &InjectionOptions,
) -> Result<Vec<(u32, f64, f64)>, OpfError> {
    let sites: Vec<(u32, f64)> = match &opts.pv_buses {
        Some(ids) => ids
            .iter()
            .map(|&id| {
                let bus = network
                    .bus(id)
                    .ok_or_else(|| OpfError::Config(format!("renewable bus {id} not in feeder")))?;
                if bus.pv_capacity <= 0.0 {
                    return Err(OpfError::Config(format!(
                        "renewable assigned to bus {id} with zero capacity"
                    )));
                }
                Ok((id, bus.pv_capacity))
            })
            .collect::<Result<_, _>>()?,
        None => network
            .buses()
            .iter()
            .filter(|b| b.pv_capacity > 0.0)
            .map(|b| (b.id, b.pv_capacity))
            .collect(),
    };
    let total_cap: f64 = sites.iter().map(|s| s.1).sum();
    if g_pv > 0.0 && total_cap <= 0.0 {
        return Err(OpfError::Config(
            "renewable energy scheduled but no renewable buses".into(),
        ));
    }
    let pf = opts.pv_power_factor;
    if !(pf > 0.0 && pf <= 1.0) {
        return Err(OpfError::Config(format!(
            "power factor must be in (0, 1], got {pf}"
        )));
    }
    let tan_phi = (1.0 - pf * pf).sqrt() / pf;
    Ok(sites
        .iter()
        .map(|&(id, cap)| {
            let p = (g_pv * cap / total_cap).min(cap);
            (id, p, p * tan_phi)
        })
        .filter(|g| g.1 > 0.0)
        .collect())
}

/// Builds the problem for one hour of a schedule, placing its renewable
/// energy with [`allocate_renewable`].
pub fn build_problem(
    network: Arc<FeederNetwork>,
    schedule: &DayAheadSchedule,
    hour: usize,
    opts: &InjectionOptions,
) -> Result<OpfProblem, OpfError> {
    let len = schedule.hours.len();
    let slot = schedule
        .hours
        .get(hour)
        .ok_or(OpfError::Hour { hour, len })?;
    let generation = allocate_renewable(&network, slot.g_pv, opts)?;
    OpfProblem::from_generation(network, hour, &generation, opts.v_root)
}

/// Branch and bus quantities, indexed by bus like [`OpfProblem`]. The branch
/// entries of a bus describe the branch from its parent; root and
/// de-energized entries stay zero.
#[derive(Debug, Clone, PartialEq)]
pub struct OpfSolution {
    pub p: Vec<f64>,
    pub q: Vec<f64>,
    pub l: Vec<f64>,
    pub v: Vec<f64>,
    pub objective: f64,
}

impl OpfSolution {
    pub fn zeros(n: usize) -> Self {
        Self {
            p: vec![0.0; n],
            q: vec![0.0; n],
            l: vec![0.0; n],
            v: vec![0.0; n],
            objective: 0.0,
        }
    }

    pub fn recompute_objective(&self, prob: &OpfProblem) -> f64 {
        prob.branch_buses()
            .map(|j| prob.branch_params(j).expect("branch bus").0 * self.l[j])
            .sum()
    }

    /// Power drawn from the substation: flows on the root's branches minus
    /// the root's own injection.
    pub fn root_import(&self, prob: &OpfProblem) -> f64 {
        let root = prob.tree.root;
        prob.tree.children[root]
            .iter()
            .map(|&k| self.p[k])
            .sum::<f64>()
            - prob.injection_p[root]
    }
}

/// Passes allowed to [`load_flow`] before it gives up.
pub const LOAD_FLOW_MAX_PASSES: usize = 200;

/// Accumulates flows from the leaves with the current losses.
fn backward_pass(prob: &OpfProblem, sol: &mut OpfSolution) {
    let tree = &prob.tree;
    for &j in tree.order.iter().rev() {
        let Some((r, x, _)) = prob.branch_params(j) else {
            continue;
        };
        let (out_p, out_q) = tree.children[j]
            .iter()
            .fold((0.0, 0.0), |(p, q), &k| (p + sol.p[k], q + sol.q[k]));
        sol.p[j] = out_p - prob.injection_p[j] + r * sol.l[j];
        sol.q[j] = out_q - prob.injection_q[j] + x * sol.l[j];
    }
}

/// Propagates voltages from the root.
fn forward_pass(prob: &OpfProblem, sol: &mut OpfSolution) {
    let tree = &prob.tree;
    sol.v[tree.root] = prob.v_root;
    for &j in &tree.order {
        let Some(i) = tree.parent[j] else { continue };
        let (r, x, _) = prob.branch_params(j).expect("branch bus");
        sol.v[j] = sol.v[i] - 2.0 * (r * sol.p[j] + x * sol.q[j]) + (r * r + x * x) * sol.l[j];
    }
}

/// Power flow with the cone held at equality, by backward/forward sweeps
/// that refresh `l = (P² + Q²)/v_parent` until it moves less than `tol`.
/// Returns `None` if the sweeps do not settle, which happens when the load
/// is beyond what the feeder can carry.
pub fn load_flow(prob: &OpfProblem, tol: f64) -> Option<OpfSolution> {
    let tree = &prob.tree;
    let mut sol = OpfSolution::zeros(prob.n_buses());
    for _ in 0..LOAD_FLOW_MAX_PASSES {
        backward_pass(prob, &mut sol);
        forward_pass(prob, &mut sol);
        let mut change: f64 = 0.0;
        for &j in &tree.order {
            let Some(i) = tree.parent[j] else { continue };
            if sol.v[i].is_nan() || sol.v[i] <= 0.0 {
                return None;
            }
            let l = (sol.p[j] * sol.p[j] + sol.q[j] * sol.q[j]) / sol.v[i];
            change = change.max((l - sol.l[j]).abs());
            sol.l[j] = l;
        }
        if !change.is_finite() {
            return None;
        }
        if change < tol {
            // Make the equalities consistent with the final losses.
            backward_pass(prob, &mut sol);
            forward_pass(prob, &mut sol);
            sol.objective = sol.recompute_objective(prob);
            return Some(sol);
        }
    }
    None
}

/// Largest violations of the branch-flow equations at a candidate point.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct DistflowResiduals {
    pub p_balance: f64,
    pub q_balance: f64,
    pub voltage_drop: f64,
    /// Largest `P² + Q² − v·l` over branches, clipped at zero.
    pub soc_violation: f64,
    /// Smallest `v·l − P² − Q²` over branches.
    pub soc_slack_min: f64,
    /// `|v_root − v_0|`.
    pub root_voltage: f64,
}

impl DistflowResiduals {
    /// Largest equality violation.
    pub fn max_equality(&self) -> f64 {
        self.p_balance
            .max(self.q_balance)
            .max(self.voltage_drop)
            .max(self.root_voltage)
    }
}

pub fn distflow_residuals(
    prob: &OpfProblem,
    sol: &OpfSolution,
) -> Result<DistflowResiduals, OpfError> {
    let n = prob.n_buses();
    for (name, len) in [
        ("p", sol.p.len()),
        ("q", sol.q.len()),
        ("l", sol.l.len()),
        ("v", sol.v.len()),
    ] {
        if len != n {
            return Err(OpfError::Dimension(format!(
                "solution `{name}` has {len} entries, network has {n} buses"
            )));
        }
    }
    let mut res = DistflowResiduals {
        soc_slack_min: f64::INFINITY,
        root_voltage: (sol.v[prob.tree.root] - prob.v_root).abs(),
        ..Default::default()
    };
    for j in prob.branch_buses() {
        let i = prob.tree.parent[j].expect("branch bus has a parent");
        let (r, x, _) = prob.branch_params(j).expect("branch bus");
        let children = &prob.tree.children[j];
        let out_p: f64 = children.iter().map(|&k| sol.p[k]).sum();
        let out_q: f64 = children.iter().map(|&k| sol.q[k]).sum();
        let bal_p = sol.p[j] - r * sol.l[j] - out_p + prob.injection_p[j];
        let bal_q = sol.q[j] - x * sol.l[j] - out_q + prob.injection_q[j];
        let drop =
            sol.v[j] - sol.v[i] + 2.0 * (r * sol.p[j] + x * sol.q[j]) - (r * r + x * x) * sol.l[j];
        let slack = sol.v[i] * sol.l[j] - sol.p[j] * sol.p[j] - sol.q[j] * sol.q[j];
        res.p_balance = res.p_balance.max(bal_p.abs());
        res.q_balance = res.q_balance.max(bal_q.abs());
        res.voltage_drop = res.voltage_drop.max(drop.abs());
        res.soc_violation = res.soc_violation.max(-slack);
        res.soc_slack_min = res.soc_slack_min.min(slack);
    }
    if res.soc_slack_min == f64::INFINITY {
        res.soc_slack_min = 0.0;
    }
    Ok(res)
}

/// Per-branch cone gap `v_i·l_ij − P_ij² − Q_ij²`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BranchGap {
    pub bus: usize,
    pub gap: f64,
    pub relative: f64,
}

pub fn branch_gaps(prob: &OpfProblem, sol: &OpfSolution) -> Vec<BranchGap> {
    prob.branch_buses()
        .map(|j| {
            let i = prob.tree.parent[j].expect("branch bus has a parent");
            let vl = sol.v[i] * sol.l[j];
            let gap = vl - sol.p[j] * sol.p[j] - sol.q[j] * sol.q[j];
            BranchGap {
                bus: j,
                gap,
                relative: gap / vl.max(GAP_ABS_FLOOR),
            }
        })
        .collect()
}

/// Largest `v_i·l_ij − P_ij² − Q_ij²` over branches; zero on a network
/// without branches.
pub fn exactness_gap(prob: &OpfProblem, sol: &OpfSolution) -> f64 {
    branch_gaps(prob, sol)
        .iter()
        .map(|g| g.gap)
        .fold(0.0, f64::max)
}

/// Largest relative gap; the relaxation is tight when this is at most
/// [`TIGHT_REL_GAP`].
pub fn relative_exactness_gap(prob: &OpfProblem, sol: &OpfSolution) -> f64 {
    branch_gaps(prob, sol)
        .iter()
        .map(|g| g.relative.abs())
        .fold(0.0, f64::max)
}

pub fn is_tight(prob: &OpfProblem, sol: &OpfSolution) -> bool {
    relative_exactness_gap(prob, sol) <= TIGHT_REL_GAP
}

/// Writes `branch,from,to,P,Q,l,loss` rows; `loss` is in kW.
pub fn write_branch_csv<W: Write>(prob: &OpfProblem, sol: &OpfSolution, out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["branch", "from", "to", "P", "Q", "l", "loss"])?;
    let buses = prob.network.buses();
    let to_kw = 1000.0 * prob.network.base_mva;
    for j in prob.branch_buses() {
        let i = prob.tree.parent[j].expect("branch bus has a parent");
        let k = prob.tree.parent_branch[j].expect("branch bus");
        let r = prob.network.branches()[k].r;
        w.write_record([
            k.to_string(),
            buses[i].id.to_string(),
            buses[j].id.to_string(),
            sol.p[j].to_string(),
            sol.q[j].to_string(),
            sol.l[j].to_string(),
            (r * sol.l[j] * to_kw).to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Writes `bus,v_sq` rows for energized buses.
pub fn write_bus_csv<W: Write>(prob: &OpfProblem, sol: &OpfSolution, out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["bus", "v_sq"])?;
    for &i in &prob.tree.order {
        w.write_record([prob.network.buses()[i].id.to_string(), sol.v[i].to_string()])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::parse_feeder;

    const CHAIN: &str = "base_mva = 1\nbase_kv = 4.16\nbus 0 root p=0 q=0 vmin=0.9 vmax=1.1\nbus 1 p=300 q=100 vmin=0.9 vmax=1.1 pv=200\nbus 2 p=200 q=50 vmin=0.9 vmax=1.1 pv=100\nbranch 0 1 r=0.01 x=0.02 lmax=5\nbranch 1 2 r=0.02 x=0.01 lmax=5\n";

    fn chain() -> Arc<FeederNetwork> {
        Arc::new(parse_feeder(CHAIN).unwrap())
    }

    #[test]
    fn renewable_split_follows_capacity() {
        let net = chain();
        let opts = InjectionOptions::default();
        let g = allocate_renewable(&net, 150.0, &opts).unwrap();
        assert_eq!(g, vec![(1, 100.0, 0.0), (2, 50.0, 0.0)]);
        // Output above capacity is capped per site.
        let g = allocate_renewable(&net, 600.0, &opts).unwrap();
        assert_eq!(g, vec![(1, 200.0, 0.0), (2, 100.0, 0.0)]);
        let only = InjectionOptions {
            pv_buses: Some(vec![2]),
            pv_power_factor: 0.8,
            ..opts
        };
        let g = allocate_renewable(&net, 80.0, &only).unwrap();
        assert_eq!(g.len(), 1);
        assert!((g[0].2 - 60.0).abs() < 1e-12);
        let bad = InjectionOptions {
            pv_buses: Some(vec![0]),
            ..InjectionOptions::default()
        };
        assert!(allocate_renewable(&net, 10.0, &bad).is_err());
    }

    #[test]
    fn injections_are_generation_minus_load() {
        let prob = OpfProblem::from_generation(chain(), 0, &[(1, 100.0, 0.0)], 1.0).unwrap();
        let j = prob.network.bus_index(1).unwrap();
        assert!((prob.injection_p[j] - (-0.2)).abs() < 1e-15);
        assert!((prob.injection_q[j] - (-0.1)).abs() < 1e-15);
        assert!((prob.net_demand_p() - 0.4).abs() < 1e-15);
        assert!(OpfProblem::from_generation(chain(), 0, &[(9, 1.0, 0.0)], 1.0).is_err());
        assert!(OpfProblem::from_generation(chain(), 0, &[], 1.5).is_err());
    }

    #[test]
    fn load_flow_is_an_exact_branch_flow_point() {
        let prob = OpfProblem::from_generation(chain(), 0, &[], 1.0).unwrap();
        let sol = load_flow(&prob, 1e-15).unwrap();
        let res = distflow_residuals(&prob, &sol).unwrap();
        assert!(res.max_equality() < 1e-14, "{res:?}");
        assert!(is_tight(&prob, &sol));
        assert!(exactness_gap(&prob, &sol).abs() < 1e-14);
        // Substation supplies load plus losses.
        assert!((sol.root_import(&prob) - (0.5 + sol.objective)).abs() < 1e-14);
    }

    #[test]
    fn slack_cone_is_not_tight() {
        let prob = OpfProblem::from_generation(chain(), 0, &[], 1.0).unwrap();
        let mut sol = load_flow(&prob, 1e-15).unwrap();
        let j = prob.network.bus_index(2).unwrap();
        sol.l[j] *= 1.01;
        assert!(!is_tight(&prob, &sol));
        assert!(relative_exactness_gap(&prob, &sol) > 0.009);
        assert_eq!(branch_gaps(&prob, &sol).len(), 2);
    }

    #[test]
    fn residuals_check_dimensions() {
        let prob = OpfProblem::from_generation(chain(), 0, &[], 1.0).unwrap();
        let mut sol = OpfSolution::zeros(3);
        sol.v.pop();
        assert!(matches!(
            distflow_residuals(&prob, &sol),
            Err(OpfError::Dimension(_))
        ));
    }

    #[test]
    fn branch_csv_reports_loss_in_kw() {
        let prob = OpfProblem::from_generation(chain(), 0, &[], 1.0).unwrap();
        let sol = load_flow(&prob, 1e-15).unwrap();
        let mut buf = Vec::new();
        write_branch_csv(&prob, &sol, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("branch,from,to,P,Q,l,loss"));
        let total: f64 = lines
            .map(|l| l.rsplit(',').next().unwrap().parse::<f64>().unwrap())
            .sum();
        assert!((total - sol.objective * 1000.0).abs() < 1e-9);
    }
}
