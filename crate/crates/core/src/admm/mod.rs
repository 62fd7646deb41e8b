//! Consensus ADMM for the relaxed branch-flow OPF.
//!
//! Every energized bus is an agent. Bus `j` owns its squared voltage `v_j`
//! and the flow `(P_j, Q_j, l_j)` of the branch feeding it, and keeps copies
//! of its parent's voltage and of the sending-end flows towards its children.
//! With that split every branch-flow constraint touches a single agent. The
//! root agent only pins the substation voltage.
//!
//! One iteration is
//!
//! 1. local step: each agent minimizes its loss term plus
//!    `(ρ/2)‖x_a − z + u_a‖²` over its local constraint set,
//! 2. consensus step: each shared quantity becomes the average of its copies
//!    plus scaled duals,
//! 3. dual step: `u_a ← u_a + x_a − z`.
//!
//! The primal residual is `max |x_a − z|` over all copies and the dual
//! residual is `ρ·max |z_k − z_{k−1}|`.

mod local;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use thiserror::Error;

use crate::socp::{is_tight, load_flow, relative_exactness_gap, OpfProblem, OpfSolution};

pub use local::BusBlock;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AdmmError {
    #[error("local constraints of bus {bus} are infeasible")]
    InfeasibleAgent { bus: u32 },
    #[error("invalid ADMM configuration: {0}")]
    Config(String),
}

/// Starting point of the iteration.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Initialization {
    /// `v = v_0` everywhere, lossless accumulated flows, `l = 0`.
    Flat,
    /// One backward/forward sweep: lossless flows give `l = (P² + Q²)/v_0`,
    /// flows are re-accumulated with those losses and voltages follow the
    /// full drop equation.
    Sweep,
    /// Converged load flow, with the scaled duals that make it a fixed point
    /// of the iteration when no voltage or current limit binds. Falls back
    /// to `Sweep` with zero duals if the load flow does not settle.
    LoadFlow,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdmmConfig {
    pub rho: f64,
    pub eps_primal: f64,
    pub eps_dual: f64,
    pub max_iter: usize,
    /// Relaxation factor in `[1, 1.8]`; 1 disables over-relaxation.
    pub over_relaxation: f64,
    /// Doubles or halves ρ when one residual exceeds the other tenfold.
    pub adaptive_rho: bool,
    pub init: Initialization,
    /// Run local steps on the rayon pool.
    pub parallel: bool,
}

impl Default for AdmmConfig {
    fn default() -> Self {
        Self {
            rho: 1.0,
            eps_primal: 5e-4,
            eps_dual: 5e-4,
            max_iter: 500,
            over_relaxation: 1.0,
            adaptive_rho: false,
            init: Initialization::LoadFlow,
            parallel: true,
        }
    }
}

impl AdmmConfig {
    pub fn validate(&self) -> Result<(), AdmmError> {
        if !(self.rho > 0.0 && self.rho.is_finite()) {
            return Err(AdmmError::Config(format!(
                "rho must be positive, got {}",
                self.rho
            )));
        }
        if !(self.eps_primal > 0.0 && self.eps_dual > 0.0) {
            return Err(AdmmError::Config(
                "residual thresholds must be positive".into(),
            ));
        }
        if self.max_iter == 0 {
            return Err(AdmmError::Config("max_iter must be at least 1".into()));
        }
        if !(1.0..=1.8).contains(&self.over_relaxation) {
            return Err(AdmmError::Config(format!(
                "over_relaxation must be in [1, 1.8], got {}",
                self.over_relaxation
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResidualRecord {
    pub iter: usize,
    pub primal: f64,
    pub dual: f64,
    pub objective: f64,
}

/// Agent roles. Branch data is stored per agent; the copy layout is
/// described in the `local` module.
#[derive(Debug, Clone, PartialEq)]
pub enum Agent {
    Root { bus: usize, v_root: f64 },
    Bus { bus: usize, block: BusBlock },
}

impl Agent {
    pub fn bus(&self) -> usize {
        match self {
            Agent::Root { bus, .. } | Agent::Bus { bus, .. } => *bus,
        }
    }

    pub fn n_copies(&self) -> usize {
        match self {
            Agent::Root { .. } => 1,
            Agent::Bus { block, .. } => block.n_copies(),
        }
    }
}

/// Layout of shared quantities: four slots per bus, `[v, P, Q, l]`, where the
/// flow slots describe the branch from the bus's parent.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Slot;

impl Slot {
    pub const V: usize = 0;
    pub const P: usize = 1;
    pub const Q: usize = 2;
    pub const L: usize = 3;

    pub fn of(bus: usize, field: usize) -> usize {
        4 * bus + field
    }
}

/// Iterates of the engine. `x` and `u` hold one entry per copy, laid out
/// agent after agent; `z` holds one entry per shared quantity.
#[derive(Debug, Clone, PartialEq)]
pub struct AdmmState {
    pub agents: Vec<Agent>,
    /// Start of each agent's copies in `x` and `u`.
    pub offsets: Vec<usize>,
    /// Shared-quantity index of every copy.
    pub copy_of: Vec<usize>,
    /// Number of copies of each shared quantity.
    pub copies: Vec<usize>,
    pub x: Vec<f64>,
    pub z: Vec<f64>,
    pub u: Vec<f64>,
    pub rho: f64,
    pub iter: usize,
    pub history: Vec<ResidualRecord>,
}

impl AdmmState {
    pub fn new(prob: &OpfProblem, rho: f64, init: Initialization) -> Self {
        let tree = &prob.tree;
        let buses = prob.network.buses();
        let mut agents = Vec::with_capacity(tree.order.len());
        let mut offsets = Vec::with_capacity(tree.order.len());
        let mut copy_of = Vec::new();
        for &j in &tree.order {
            offsets.push(copy_of.len());
            match tree.parent[j] {
                None => {
                    agents.push(Agent::Root {
                        bus: j,
                        v_root: prob.v_root,
                    });
                    copy_of.push(Slot::of(j, Slot::V));
                }
                Some(i) => {
                    let (r, x, l_max) = prob.branch_params(j).expect("non-root bus has a branch");
                    let children = &tree.children[j];
                    agents.push(Agent::Bus {
                        bus: j,
                        block: BusBlock {
                            r,
                            x,
                            p_demand: -prob.injection_p[j],
                            q_demand: -prob.injection_q[j],
                            v_min_sq: buses[j].v_min_sq(),
                            v_max_sq: buses[j].v_max_sq(),
                            l_max,
                            n_children: children.len(),
                        },
                    });
                    copy_of.extend([
                        Slot::of(j, Slot::V),
                        Slot::of(i, Slot::V),
                        Slot::of(j, Slot::P),
                        Slot::of(j, Slot::Q),
                        Slot::of(j, Slot::L),
                    ]);
                    for &k in children {
                        copy_of.extend([Slot::of(k, Slot::P), Slot::of(k, Slot::Q)]);
                    }
                }
            }
        }
        let mut copies = vec![0; 4 * prob.n_buses()];
        for &g in &copy_of {
            copies[g] += 1;
        }
        let (z, multipliers) = match init {
            Initialization::LoadFlow => match load_flow(prob, LOAD_FLOW_TOL) {
                Some(sol) => {
                    let z = consensus_values(prob, &sol);
                    let m = stationary_multipliers(prob, &z);
                    (z, m)
                }
                None => (initial_point(prob, Initialization::Sweep), None),
            },
            _ => (initial_point(prob, init), None),
        };
        let x = copy_of.iter().map(|&g| z[g]).collect();
        let u = match multipliers {
            Some(m) => scaled_duals(prob, &z, &m, rho, copy_of.len()),
            None => vec![0.0; copy_of.len()],
        };
        Self {
            agents,
            offsets,
            copy_of,
            copies,
            x,
            z,
            u,
            rho,
            iter: 0,
            history: Vec::new(),
        }
    }

    fn agent_range(&self, a: usize) -> std::ops::Range<usize> {
        let start = self.offsets[a];
        start..start + self.agents[a].n_copies()
    }

    /// Current solution read from the consensus variables.
    pub fn solution(&self, prob: &OpfProblem) -> OpfSolution {
        let n = prob.n_buses();
        let mut sol = OpfSolution::zeros(n);
        for &j in &prob.tree.order {
            sol.v[j] = self.z[Slot::of(j, Slot::V)];
            if prob.tree.parent[j].is_some() {
                sol.p[j] = self.z[Slot::of(j, Slot::P)];
                sol.q[j] = self.z[Slot::of(j, Slot::Q)];
                sol.l[j] = self.z[Slot::of(j, Slot::L)];
            }
        }
        sol.objective = sol.recompute_objective(prob);
        sol
    }
}

/// Convergence tolerance on `l` for the load-flow start.
const LOAD_FLOW_TOL: f64 = 1e-14;

fn consensus_values(prob: &OpfProblem, sol: &OpfSolution) -> Vec<f64> {
    let mut z = vec![0.0; 4 * prob.n_buses()];
    for &j in &prob.tree.order {
        z[Slot::of(j, Slot::V)] = sol.v[j];
        z[Slot::of(j, Slot::P)] = sol.p[j];
        z[Slot::of(j, Slot::Q)] = sol.q[j];
        z[Slot::of(j, Slot::L)] = sol.l[j];
    }
    z
}

/// Starting consensus values.
pub fn initial_point(prob: &OpfProblem, init: Initialization) -> Vec<f64> {
    if init == Initialization::LoadFlow {
        if let Some(sol) = load_flow(prob, LOAD_FLOW_TOL) {
            return consensus_values(prob, &sol);
        }
    }
    let tree = &prob.tree;
    let n = prob.n_buses();
    let v0 = prob.v_root;
    let mut z = vec![0.0; 4 * n];

    let accumulate = |z: &mut Vec<f64>, with_losses: bool| {
        let mut p = vec![0.0; n];
        let mut q = vec![0.0; n];
        for &j in tree.order.iter().rev() {
            let Some((r, x, _)) = prob.branch_params(j) else {
                continue;
            };
            let l = if with_losses {
                z[Slot::of(j, Slot::L)]
            } else {
                0.0
            };
            p[j] += -prob.injection_p[j] + r * l;
            q[j] += -prob.injection_q[j] + x * l;
            let i = tree.parent[j].expect("branch bus has a parent");
            if tree.parent[i].is_some() {
                p[i] += p[j];
                q[i] += q[j];
            }
        }
        for &j in &tree.order {
            if tree.parent[j].is_some() {
                z[Slot::of(j, Slot::P)] = p[j];
                z[Slot::of(j, Slot::Q)] = q[j];
            }
        }
    };

    for &j in &tree.order {
        z[Slot::of(j, Slot::V)] = v0;
    }
    accumulate(&mut z, false);
    if init != Initialization::Flat {
        for &j in &tree.order {
            if tree.parent[j].is_some() {
                let (p, q) = (z[Slot::of(j, Slot::P)], z[Slot::of(j, Slot::Q)]);
                z[Slot::of(j, Slot::L)] = (p * p + q * q) / v0;
            }
        }
        accumulate(&mut z, true);
        for &j in &tree.order {
            let Some(i) = tree.parent[j] else { continue };
            let (r, x, _) = prob.branch_params(j).expect("branch bus");
            let p = z[Slot::of(j, Slot::P)];
            let q = z[Slot::of(j, Slot::Q)];
            let l = z[Slot::of(j, Slot::L)];
            z[Slot::of(j, Slot::V)] =
                z[Slot::of(i, Slot::V)] - 2.0 * (r * p + x * q) + (r * r + x * x) * l;
        }
    }
    z
}

/// Multipliers `(a, b, c, μ)` per bus of the balance, reactive balance,
/// voltage-drop and cone constraints of each bus agent, chosen so that every
/// agent is stationary at `z` and the duals of each shared quantity sum to
/// zero. Limits are assumed inactive. `None` if the system is singular.
fn stationary_multipliers(prob: &OpfProblem, z: &[f64]) -> Option<Vec<[f64; 4]>> {
    let tree = &prob.tree;
    let buses: Vec<usize> = prob.branch_buses().collect();
    let mut pos = vec![usize::MAX; prob.n_buses()];
    for (m, &j) in buses.iter().enumerate() {
        pos[j] = m;
    }
    let n = 4 * buses.len();
    let mut a = DMatrix::<f64>::zeros(n, n);
    let mut rhs = DVector::<f64>::zeros(n);
    let (ia, ib, ic, imu) = (0, 1, 2, 3);
    for (m, &j) in buses.iter().enumerate() {
        let i = tree.parent[j].expect("branch bus has a parent");
        let (r, x, _) = prob.branch_params(j).expect("branch bus");
        let (p, q) = (z[Slot::of(j, Slot::P)], z[Slot::of(j, Slot::Q)]);
        let v_parent = z[Slot::of(i, Slot::V)];
        let row = 4 * m;
        // Own voltage against the parent-voltage copies held by the children.
        a[(row, row + ic)] = -1.0;
        for &k in &tree.children[j] {
            let col = 4 * pos[k];
            a[(row, col + ic)] += 1.0;
            a[(row, col + imu)] += z[Slot::of(k, Slot::L)];
        }
        // Own flow against the parent's copy; the root holds no flow copies.
        let parent_col = (tree.parent[i].is_some()).then(|| 4 * pos[i]);
        a[(row + 1, row + ia)] = -1.0;
        a[(row + 1, row + ic)] = -2.0 * r;
        a[(row + 1, row + imu)] = -2.0 * p;
        a[(row + 2, row + ib)] = -1.0;
        a[(row + 2, row + ic)] = -2.0 * x;
        a[(row + 2, row + imu)] = -2.0 * q;
        if let Some(pc) = parent_col {
            a[(row + 1, pc + ia)] = 1.0;
            a[(row + 2, pc + ib)] = 1.0;
        }
        // Squared current has a single copy, so its stationarity is exact.
        a[(row + 3, row + ia)] = -r;
        a[(row + 3, row + ib)] = -x;
        a[(row + 3, row + ic)] = -(r * r + x * x);
        a[(row + 3, row + imu)] = -v_parent;
        rhs[row + 3] = -r;
    }
    let sol = a.lu().solve(&rhs)?;
    if sol.iter().any(|v| !v.is_finite()) {
        return None;
    }
    let mut out = vec![[0.0; 4]; prob.n_buses()];
    for (m, &j) in buses.iter().enumerate() {
        out[j] = [sol[4 * m], sol[4 * m + 1], sol[4 * m + 2], sol[4 * m + 3]];
    }
    Some(out)
}

/// Scaled duals per copy, in the layout built by [`AdmmState::new`].
fn scaled_duals(
    prob: &OpfProblem,
    z: &[f64],
    mult: &[[f64; 4]],
    rho: f64,
    n_copies: usize,
) -> Vec<f64> {
    let tree = &prob.tree;
    let mut u = Vec::with_capacity(n_copies);
    for &j in &tree.order {
        match tree.parent[j] {
            None => {
                let pulled: f64 = tree.children[j]
                    .iter()
                    .map(|&k| mult[k][2] + mult[k][3] * z[Slot::of(k, Slot::L)])
                    .sum();
                u.push(-pulled / rho);
            }
            Some(_) => {
                let [a, b, c, mu] = mult[j];
                let (r, x, _) = prob.branch_params(j).expect("branch bus");
                let (p, q, l) = (
                    z[Slot::of(j, Slot::P)],
                    z[Slot::of(j, Slot::Q)],
                    z[Slot::of(j, Slot::L)],
                );
                u.extend([
                    -c / rho,
                    (c + mu * l) / rho,
                    -(a + 2.0 * r * c + 2.0 * mu * p) / rho,
                    -(b + 2.0 * x * c + 2.0 * mu * q) / rho,
                    0.0,
                ]);
                for _ in &tree.children[j] {
                    u.extend([a / rho, b / rho]);
                }
            }
        }
    }
    debug_assert_eq!(u.len(), n_copies);
    u
}

/// Proximal step of one agent against targets `w = z − u`.
pub fn local_update(
    agent: &Agent,
    w: &[f64],
    rho: f64,
    bus_id: u32,
) -> Result<Vec<f64>, AdmmError> {
    match agent {
        Agent::Root { v_root, .. } => Ok(vec![*v_root]),
        Agent::Bus { block, .. } => block
            .prox(w, rho)
            .ok_or(AdmmError::InfeasibleAgent { bus: bus_id }),
    }
}

/// Consensus step: `z_g = mean over copies c of g of (x_c + u_c)`. Quantities
/// without copies keep their previous value.
pub fn consensus_update(
    x: &[f64],
    u: &[f64],
    copy_of: &[usize],
    copies: &[usize],
    z_prev: &[f64],
) -> Vec<f64> {
    let mut sum = vec![0.0; z_prev.len()];
    for (c, &g) in copy_of.iter().enumerate() {
        sum[g] += x[c] + u[c];
    }
    sum.iter()
        .zip(copies)
        .zip(z_prev)
        .map(|((s, &n), &old)| if n == 0 { old } else { s / n as f64 })
        .collect()
}

/// Scaled dual ascent `u_c ← u_c + x_c − z_g`.
pub fn dual_update(u: &mut [f64], x: &[f64], z: &[f64], copy_of: &[usize]) {
    for (c, &g) in copy_of.iter().enumerate() {
        u[c] += x[c] - z[g];
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdmmOutcome {
    pub solution: OpfSolution,
    pub trace: Vec<ResidualRecord>,
    pub converged: bool,
    pub iterations: usize,
    /// Relaxation tight on every branch.
    pub tight: bool,
    pub max_relative_gap: f64,
    /// Largest residual did not drop over some 10-iteration window.
    pub trend_flag: bool,
}

/// Runs one iteration; returns the new residual record.
pub fn step(
    state: &mut AdmmState,
    prob: &OpfProblem,
    cfg: &AdmmConfig,
) -> Result<ResidualRecord, AdmmError> {
    let rho = state.rho;
    let buses = prob.network.buses();
    let targets: Vec<f64> = state
        .copy_of
        .iter()
        .zip(&state.u)
        .map(|(&g, u)| state.z[g] - u)
        .collect();

    let solve = |a: usize| {
        let range = state.agent_range(a);
        let agent = &state.agents[a];
        local_update(agent, &targets[range], rho, buses[agent.bus()].id)
    };
    let blocks: Vec<Vec<f64>> = if cfg.parallel {
        (0..state.agents.len())
            .into_par_iter()
            .map(solve)
            .collect::<Result<_, _>>()?
    } else {
        (0..state.agents.len())
            .map(solve)
            .collect::<Result<_, _>>()?
    };
    for (a, block) in blocks.into_iter().enumerate() {
        let start = state.offsets[a];
        state.x[start..start + block.len()].copy_from_slice(&block);
    }

    let alpha = cfg.over_relaxation;
    let x_hat: Vec<f64> = if alpha == 1.0 {
        state.x.clone()
    } else {
        state
            .x
            .iter()
            .zip(&state.copy_of)
            .map(|(x, &g)| alpha * x + (1.0 - alpha) * state.z[g])
            .collect()
    };
    let z_new = consensus_update(&x_hat, &state.u, &state.copy_of, &state.copies, &state.z);
    dual_update(&mut state.u, &x_hat, &z_new, &state.copy_of);

    let primal = state
        .copy_of
        .iter()
        .zip(&state.x)
        .map(|(&g, x)| (x - z_new[g]).abs())
        .fold(0.0, f64::max);
    let dual = rho
        * z_new
            .iter()
            .zip(&state.z)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
    state.z = z_new;
    state.iter += 1;

    let objective = prob
        .branch_buses()
        .map(|j| prob.branch_params(j).expect("branch bus").0 * state.z[Slot::of(j, Slot::L)])
        .sum();
    let rec = ResidualRecord {
        iter: state.iter,
        primal,
        dual,
        objective,
    };
    state.history.push(rec);

    if cfg.adaptive_rho {
        let factor = if primal > 10.0 * dual {
            2.0
        } else if dual > 10.0 * primal {
            0.5
        } else {
            1.0
        };
        if factor != 1.0 {
            state.rho *= factor;
            state.u.iter_mut().for_each(|u| *u /= factor);
        }
    }
    Ok(rec)
}

/// Solves the relaxed OPF. Non-convergence is reported through
/// [`AdmmOutcome::converged`], not as an error.
pub fn solve(prob: &OpfProblem, cfg: &AdmmConfig) -> Result<AdmmOutcome, AdmmError> {
    cfg.validate()?;
    let mut state = AdmmState::new(prob, cfg.rho, cfg.init);
    let mut converged = false;
    while state.iter < cfg.max_iter {
        let rec = step(&mut state, prob, cfg)?;
        if rec.primal < cfg.eps_primal && rec.dual < cfg.eps_dual {
            converged = true;
            break;
        }
    }
    let solution = state.solution(prob);
    let trace = state.history;
    Ok(AdmmOutcome {
        tight: is_tight(prob, &solution),
        max_relative_gap: relative_exactness_gap(prob, &solution),
        trend_flag: trend_violation(&trace),
        iterations: trace.len(),
        converged,
        solution,
        trace,
    })
}

/// True when the largest residual fails to decrease across some window of
/// ten iterations.
pub fn trend_violation(trace: &[ResidualRecord]) -> bool {
    let worst: Vec<f64> = trace.iter().map(|r| r.primal.max(r.dual)).collect();
    worst.windows(11).any(|w| w[10] >= w[0] && w[0] > 0.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::parse_feeder;
    use std::sync::Arc;

    const STAR: &str = "base_mva = 1\nbase_kv = 4.16\nbus 0 root p=0 q=0 vmin=0.9 vmax=1.1\nbus 1 p=300 q=100 vmin=0.9 vmax=1.1\nbus 2 p=200 q=50 vmin=0.9 vmax=1.1\nbus 3 p=100 q=20 vmin=0.9 vmax=1.1\nbranch 0 1 r=0.01 x=0.02 lmax=5\nbranch 1 2 r=0.02 x=0.01 lmax=5\nbranch 1 3 r=0.015 x=0.01 lmax=5\n";

    fn prob() -> OpfProblem {
        OpfProblem::from_generation(Arc::new(parse_feeder(STAR).unwrap()), 0, &[], 1.0).unwrap()
    }

    #[test]
    fn config_validation() {
        assert!(AdmmConfig::default().validate().is_ok());
        for bad in [
            AdmmConfig {
                rho: 0.0,
                ..AdmmConfig::default()
            },
            AdmmConfig {
                eps_dual: 0.0,
                ..AdmmConfig::default()
            },
            AdmmConfig {
                max_iter: 0,
                ..AdmmConfig::default()
            },
            AdmmConfig {
                over_relaxation: 2.0,
                ..AdmmConfig::default()
            },
        ] {
            assert!(matches!(bad.validate(), Err(AdmmError::Config(_))));
        }
    }

    #[test]
    fn stationary_duals_make_the_load_flow_a_fixed_point() {
        let prob = prob();
        let state = AdmmState::new(&prob, 1.0, Initialization::LoadFlow);
        assert!(state.u.iter().any(|u| u.abs() > 1e-6));
        let mut s = state.clone();
        let rec = step(&mut s, &prob, &AdmmConfig::default()).unwrap();
        assert!(rec.primal < 1e-12 && rec.dual < 1e-12, "{rec:?}");
    }

    #[test]
    fn flat_and_load_flow_starts_agree() {
        let prob = prob();
        let tight = |init| AdmmConfig {
            init,
            eps_primal: 1e-10,
            eps_dual: 1e-10,
            max_iter: 50_000,
            parallel: false,
            ..AdmmConfig::default()
        };
        let a = solve(&prob, &tight(Initialization::Flat)).unwrap();
        let b = solve(&prob, &tight(Initialization::LoadFlow)).unwrap();
        assert!(a.converged && b.converged);
        assert!((a.solution.objective - b.solution.objective).abs() < 1e-8);
        assert!(a.iterations > b.iterations);
    }

    #[test]
    fn parallel_and_serial_steps_match() {
        let prob = prob();
        let cfg = AdmmConfig {
            init: Initialization::Flat,
            max_iter: 40,
            ..AdmmConfig::default()
        };
        let a = solve(
            &prob,
            &AdmmConfig {
                parallel: true,
                ..cfg.clone()
            },
        )
        .unwrap();
        let b = solve(
            &prob,
            &AdmmConfig {
                parallel: false,
                ..cfg
            },
        )
        .unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn dual_update_accumulates_disagreement() {
        let mut u = vec![0.5, -0.5];
        dual_update(&mut u, &[1.0, 3.0], &[2.0], &[0, 0]);
        assert_eq!(u, vec![-0.5, 0.5]);
    }

    #[test]
    fn trend_window() {
        let rec = |iter, r| ResidualRecord {
            iter,
            primal: r,
            dual: 0.0,
            objective: 0.0,
        };
        let falling: Vec<_> = (0..30).map(|k| rec(k, 1.0 / (k + 1) as f64)).collect();
        assert!(!trend_violation(&falling));
        let mut stalled = falling.clone();
        for r in stalled.iter_mut().skip(10) {
            r.primal = 0.1;
        }
        assert!(trend_violation(&stalled));
    }
}
