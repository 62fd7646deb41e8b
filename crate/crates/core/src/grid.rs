//! Radial feeder data model and the line-oriented feeder file format.
//!
//! A feeder file looks like
//!
//! ```text
//! base_mva = 5
//! base_kv = 4.16
//! profile = 0.6, 0.55, ...        # optional hourly load multipliers
//! bus 150 root p=0 q=0 vmin=0.9 vmax=1.05
//! bus 1 p=40 q=20 vmin=0.9 vmax=1.05
//! bus 83 p=20 q=10 vmin=0.9 vmax=1.05 cap=200 pv=150
//! branch 150 149 r=1e-4 x=1e-4 lmax=1.3 switch closed
//! branch 149 1 r=0.0067 x=0.0137 lmax=1.3
//! ```
//!
//! Demands are in kW / kvar, impedances in per-unit on the header base, and
//! `lmax` is a squared current limit in per-unit². A demand may also be given
//! as a comma-separated list with one value per hour.

use std::collections::{BTreeSet, HashMap, VecDeque};
use std::fmt::Write as _;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GridError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("duplicate bus id {0}")]
    DuplicateBus(u32),
    #[error("branch references unknown bus {0}")]
    UnknownBus(u32),
    #[error("network must have exactly one root bus, found {0}")]
    RootCount(usize),
    #[error("invalid {what}: {msg}")]
    Invalid { what: String, msg: String },
    #[error("closed branches contain a loop through buses {0:?}")]
    Radiality(Vec<u32>),
    #[error("buses not connected to the root: {0:?}")]
    Connectivity(Vec<u32>),
    #[error("hour {hour} outside horizon of {horizon} hours")]
    HourOutOfRange { hour: usize, horizon: usize },
}

/// Demand at a bus: a single value applied to every hour, or one value per hour.
#[derive(Debug, Clone, PartialEq)]
pub enum Demand {
    Scalar(f64),
    Hourly(Vec<f64>),
}

impl Demand {
    fn at(&self, hour: usize) -> f64 {
        match self {
            Demand::Scalar(v) => *v,
            Demand::Hourly(v) => v[hour],
        }
    }

    fn is_zero(&self) -> bool {
        match self {
            Demand::Scalar(v) => *v == 0.0,
            Demand::Hourly(v) => v.iter().all(|x| *x == 0.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Bus {
    pub id: u32,
    /// kW.
    pub demand_p: Demand,
    /// kvar.
    pub demand_q: Demand,
    /// Voltage magnitude limits in per-unit.
    pub v_min: f64,
    pub v_max: f64,
    /// kW of installed renewable generation.
    pub pv_capacity: f64,
    /// kvar of fixed shunt capacitance, zero when absent.
    pub cap_kvar: f64,
    pub is_root: bool,
}

impl Bus {
    pub fn new(id: u32, p_kw: f64, q_kvar: f64) -> Self {
        Self {
            id,
            demand_p: Demand::Scalar(p_kw),
            demand_q: Demand::Scalar(q_kvar),
            v_min: 0.9,
            v_max: 1.05,
            pv_capacity: 0.0,
            cap_kvar: 0.0,
            is_root: false,
        }
    }

    pub fn root(id: u32) -> Self {
        Self {
            is_root: true,
            ..Self::new(id, 0.0, 0.0)
        }
    }

    pub fn v_min_sq(&self) -> f64 {
        self.v_min * self.v_min
    }

    pub fn v_max_sq(&self) -> f64 {
        self.v_max * self.v_max
    }

    pub fn has_capacitor(&self) -> bool {
        self.cap_kvar != 0.0
    }

    pub fn has_load(&self) -> bool {
        !(self.demand_p.is_zero() && self.demand_q.is_zero())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Branch {
    /// Parent side in the radial orientation.
    pub from_bus: u32,
    pub to_bus: u32,
    pub r: f64,
    pub x: f64,
    /// Squared current limit, per-unit².
    pub l_max: f64,
    pub is_switch: bool,
    pub closed: bool,
}

impl Branch {
    pub fn line(from_bus: u32, to_bus: u32, r: f64, x: f64, l_max: f64) -> Self {
        Self {
            from_bus,
            to_bus,
            r,
            x,
            l_max,
            is_switch: false,
            closed: true,
        }
    }

    pub fn switch(from_bus: u32, to_bus: u32, r: f64, x: f64, l_max: f64, closed: bool) -> Self {
        Self {
            is_switch: true,
            closed,
            ..Self::line(from_bus, to_bus, r, x, l_max)
        }
    }
}

/// Summary counts of a feeder, as found in test-feeder descriptions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FeederStats {
    pub basic_branches: usize,
    pub loads: usize,
    pub capacitors: usize,
    pub switches: usize,
    pub closed_switches: usize,
    pub open_switches: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeederNetwork {
    pub base_mva: f64,
    pub base_kv: f64,
    /// Hourly multipliers applied to every bus demand; empty means none.
    pub profile: Vec<f64>,
    buses: Vec<Bus>,
    branches: Vec<Branch>,
    index: HashMap<u32, usize>,
    root: usize,
}

impl FeederNetwork {
    /// Checks per-element invariants and bus references. Radiality is not
    /// checked here; see [`validate_radial`].
    pub fn new(
        base_mva: f64,
        base_kv: f64,
        profile: Vec<f64>,
        buses: Vec<Bus>,
        branches: Vec<Branch>,
    ) -> Result<Self, GridError> {
        if !(base_mva > 0.0 && base_mva.is_finite()) {
            return Err(invalid(
                "base_mva",
                format!("must be positive, got {base_mva}"),
            ));
        }
        if !(base_kv > 0.0 && base_kv.is_finite()) {
            return Err(invalid(
                "base_kv",
                format!("must be positive, got {base_kv}"),
            ));
        }
        if profile.iter().any(|m| !m.is_finite() || *m < 0.0) {
            return Err(invalid(
                "profile",
                "multipliers must be finite and nonnegative".into(),
            ));
        }
        let mut index = HashMap::with_capacity(buses.len());
        for (i, b) in buses.iter().enumerate() {
            if index.insert(b.id, i).is_some() {
                return Err(GridError::DuplicateBus(b.id));
            }
            check_bus(b)?;
        }
        let roots: Vec<usize> = (0..buses.len()).filter(|&i| buses[i].is_root).collect();
        if roots.len() != 1 {
            return Err(GridError::RootCount(roots.len()));
        }
        for br in &branches {
            for id in [br.from_bus, br.to_bus] {
                if !index.contains_key(&id) {
                    return Err(GridError::UnknownBus(id));
                }
            }
            check_branch(br)?;
        }
        let net = Self {
            base_mva,
            base_kv,
            profile,
            buses,
            branches,
            index,
            root: roots[0],
        };
        net.horizon_checked()?;
        Ok(net)
    }

    pub fn buses(&self) -> &[Bus] {
        &self.buses
    }

    pub fn branches(&self) -> &[Branch] {
        &self.branches
    }

    pub fn root(&self) -> &Bus {
        &self.buses[self.root]
    }

    pub fn root_index(&self) -> usize {
        self.root
    }

    pub fn bus_index(&self, id: u32) -> Option<usize> {
        self.index.get(&id).copied()
    }

    pub fn bus(&self, id: u32) -> Option<&Bus> {
        self.bus_index(id).map(|i| &self.buses[i])
    }

    /// Number of hours the demand data covers.
    pub fn horizon(&self) -> usize {
        self.horizon_checked().expect("validated at construction")
    }

    fn horizon_checked(&self) -> Result<usize, GridError> {
        let mut horizon = if self.profile.is_empty() {
            None
        } else {
            Some(self.profile.len())
        };
        for b in &self.buses {
            for d in [&b.demand_p, &b.demand_q] {
                if let Demand::Hourly(v) = d {
                    match horizon {
                        None => horizon = Some(v.len()),
                        Some(h) if h != v.len() => {
                            return Err(invalid(
                                "demand",
                                format!("bus {} has {} hourly values, expected {h}", b.id, v.len()),
                            ))
                        }
                        _ => {}
                    }
                }
            }
        }
        Ok(horizon.unwrap_or(1))
    }

    /// Returns a copy with the given switch opened or closed.
    pub fn with_switch(&self, from_bus: u32, to_bus: u32, closed: bool) -> Result<Self, GridError> {
        let mut net = self.clone();
        let br = net
            .branches
            .iter_mut()
            .find(|b| {
                b.is_switch
                    && ((b.from_bus == from_bus && b.to_bus == to_bus)
                        || (b.from_bus == to_bus && b.to_bus == from_bus))
            })
            .ok_or_else(|| {
                invalid(
                    "switch",
                    format!("no switch between {from_bus} and {to_bus}"),
                )
            })?;
        br.closed = closed;
        Ok(net)
    }

    pub fn stats(&self) -> FeederStats {
        let switches = self.branches.iter().filter(|b| b.is_switch).count();
        let closed_switches = self
            .branches
            .iter()
            .filter(|b| b.is_switch && b.closed)
            .count();
        FeederStats {
            basic_branches: self.branches.len() - switches,
            loads: self.buses.iter().filter(|b| b.has_load()).count(),
            capacitors: self.buses.iter().filter(|b| b.has_capacitor()).count(),
            switches,
            closed_switches,
            open_switches: switches - closed_switches,
        }
    }

    /// Demand (kW, kvar) of a bus at an hour, profile applied.
    pub fn bus_demand(&self, bus: usize, hour: usize) -> Result<(f64, f64), GridError> {
        let horizon = self.horizon();
        if hour >= horizon {
            return Err(GridError::HourOutOfRange { hour, horizon });
        }
        let b = &self.buses[bus];
        let p_hour = if matches!(b.demand_p, Demand::Hourly(_)) {
            hour
        } else {
            0
        };
        let q_hour = if matches!(b.demand_q, Demand::Hourly(_)) {
            hour
        } else {
            0
        };
        let scale = self.profile.get(hour).copied().unwrap_or(1.0);
        Ok((b.demand_p.at(p_hour) * scale, b.demand_q.at(q_hour) * scale))
    }

    /// Adjacency of the energized part of the network. Fails if the closed
    /// branches do not form a tree over the buses they reach.
    pub fn tree(&self) -> Result<RadialTree, GridError> {
        let report = validate_radial(self);
        if let Some(v) = report.violations.first() {
            return Err(match v {
                Violation::Loop(edges) => GridError::Radiality(loop_buses(edges)),
                Violation::Disconnected(ids) => GridError::Connectivity(ids.clone()),
            });
        }
        let n = self.buses.len();
        let mut parent = vec![None; n];
        let mut parent_branch = vec![None; n];
        let mut children = vec![Vec::new(); n];
        let mut order = Vec::with_capacity(n);
        let adj = self.adjacency(true);
        let mut seen = vec![false; n];
        seen[self.root] = true;
        let mut queue = VecDeque::from([self.root]);
        while let Some(i) = queue.pop_front() {
            order.push(i);
            for &(j, k) in &adj[i] {
                if !seen[j] {
                    seen[j] = true;
                    parent[j] = Some(i);
                    parent_branch[j] = Some(k);
                    children[i].push(j);
                    queue.push_back(j);
                }
            }
        }
        Ok(RadialTree {
            root: self.root,
            order,
            parent,
            parent_branch,
            children,
        })
    }

    /// Neighbour lists `(bus, branch)`; only closed branches when `closed_only`.
    fn adjacency(&self, closed_only: bool) -> Vec<Vec<(usize, usize)>> {
        let mut adj = vec![Vec::new(); self.buses.len()];
        for (k, br) in self.branches.iter().enumerate() {
            if closed_only && !br.closed {
                continue;
            }
            let a = self.index[&br.from_bus];
            let b = self.index[&br.to_bus];
            adj[a].push((b, k));
            adj[b].push((a, k));
        }
        adj
    }
}

fn invalid(what: &str, msg: String) -> GridError {
    GridError::Invalid {
        what: what.to_string(),
        msg,
    }
}

fn check_bus(b: &Bus) -> Result<(), GridError> {
    let what = format!("bus {}", b.id);
    if !(b.v_min > 0.0 && b.v_min < b.v_max && b.v_max.is_finite()) {
        return Err(invalid(
            &what,
            format!("need 0 < vmin < vmax, got {} / {}", b.v_min, b.v_max),
        ));
    }
    if !(b.pv_capacity >= 0.0 && b.pv_capacity.is_finite()) {
        return Err(invalid(
            &what,
            format!("pv capacity must be >= 0, got {}", b.pv_capacity),
        ));
    }
    if !b.cap_kvar.is_finite() {
        return Err(invalid(&what, "capacitor rating must be finite".into()));
    }
    for d in [&b.demand_p, &b.demand_q] {
        let ok = match d {
            Demand::Scalar(v) => v.is_finite(),
            Demand::Hourly(v) => !v.is_empty() && v.iter().all(|x| x.is_finite()),
        };
        if !ok {
            return Err(invalid(&what, "demand must be finite".into()));
        }
    }
    Ok(())
}

fn check_branch(br: &Branch) -> Result<(), GridError> {
    let what = format!("branch {}-{}", br.from_bus, br.to_bus);
    if br.from_bus == br.to_bus {
        return Err(invalid(&what, "self loop".into()));
    }
    if !(br.r >= 0.0 && br.r.is_finite() && br.x.is_finite()) || (br.r == 0.0 && br.x == 0.0) {
        return Err(invalid(
            &what,
            format!(
                "need r >= 0 and nonzero impedance, got r={} x={}",
                br.r, br.x
            ),
        ));
    }
    if br.l_max.is_nan() || br.l_max <= 0.0 {
        return Err(invalid(
            &what,
            format!("lmax must be positive, got {}", br.l_max),
        ));
    }
    Ok(())
}

/// Parent/children structure of the energized tree. Indices are positions in
/// [`FeederNetwork::buses`] and [`FeederNetwork::branches`].
#[derive(Debug, Clone, PartialEq)]
pub struct RadialTree {
    pub root: usize,
    /// Energized buses in breadth-first order from the root.
    pub order: Vec<usize>,
    pub parent: Vec<Option<usize>>,
    /// Branch connecting a bus to its parent.
    pub parent_branch: Vec<Option<usize>>,
    pub children: Vec<Vec<usize>>,
}

impl RadialTree {
    pub fn is_energized(&self, bus: usize) -> bool {
        bus == self.root || self.parent[bus].is_some()
    }

    pub fn energized_count(&self) -> usize {
        self.order.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    /// Closed branches forming a loop, as (from, to) bus id pairs.
    Loop(Vec<(u32, u32)>),
    /// Buses with no path to the root through any branch.
    Disconnected(Vec<u32>),
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RadialReport {
    pub violations: Vec<Violation>,
}

impl RadialReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }
}

fn loop_buses(edges: &[(u32, u32)]) -> Vec<u32> {
    let set: BTreeSet<u32> = edges.iter().flat_map(|&(a, b)| [a, b]).collect();
    set.into_iter().collect()
}

/// Checks that the closed branches form a spanning tree of the buses they
/// energize and that every bus can reach the root through some branch.
pub fn validate_radial(net: &FeederNetwork) -> RadialReport {
    let n = net.buses.len();
    let mut report = RadialReport::default();

    let all = net.adjacency(false);
    let mut reach = vec![false; n];
    reach[net.root] = true;
    let mut stack = vec![net.root];
    while let Some(i) = stack.pop() {
        for &(j, _) in &all[i] {
            if !reach[j] {
                reach[j] = true;
                stack.push(j);
            }
        }
    }
    let mut lost: Vec<u32> = (0..n)
        .filter(|&i| !reach[i])
        .map(|i| net.buses[i].id)
        .collect();
    lost.sort_unstable();
    if !lost.is_empty() {
        report.violations.push(Violation::Disconnected(lost));
    }

    // Every connected component of closed branches is searched, so loops in
    // de-energized islands are reported as well.
    let closed = net.adjacency(true);
    let mut parent: Vec<Option<(usize, usize)>> = vec![None; n];
    let mut depth = vec![usize::MAX; n];
    let mut used_branch = vec![false; net.branches.len()];
    let starts = std::iter::once(net.root).chain(0..n);
    for s in starts {
        if depth[s] != usize::MAX {
            continue;
        }
        depth[s] = 0;
        let mut stack = vec![s];
        while let Some(i) = stack.pop() {
            for &(j, k) in &closed[i] {
                if used_branch[k] {
                    continue;
                }
                used_branch[k] = true;
                if depth[j] == usize::MAX {
                    depth[j] = depth[i] + 1;
                    parent[j] = Some((i, k));
                    stack.push(j);
                } else {
                    report
                        .violations
                        .push(Violation::Loop(trace_loop(net, &parent, &depth, i, j, k)));
                }
            }
        }
    }
    report
}

fn trace_loop(
    net: &FeederNetwork,
    parent: &[Option<(usize, usize)>],
    depth: &[usize],
    a: usize,
    b: usize,
    closing: usize,
) -> Vec<(u32, u32)> {
    let edge = |k: usize| (net.branches[k].from_bus, net.branches[k].to_bus);
    let mut edges = vec![edge(closing)];
    let (mut a, mut b) = (a, b);
    while a != b {
        if depth[a] >= depth[b] {
            let (p, k) = parent[a].expect("non-root vertex has a parent");
            edges.push(edge(k));
            a = p;
        } else {
            let (p, k) = parent[b].expect("non-root vertex has a parent");
            edges.push(edge(k));
            b = p;
        }
    }
    edges
}

/// Total demand (kW, kvar) over energized buses at an hour. Capacitors are
/// not netted out.
pub fn aggregate_demand(net: &FeederNetwork, hour: usize) -> Result<(f64, f64), GridError> {
    let horizon = net.horizon();
    if hour >= horizon {
        return Err(GridError::HourOutOfRange { hour, horizon });
    }
    let tree = net.tree()?;
    let mut total = (0.0, 0.0);
    for &i in &tree.order {
        let (p, q) = net.bus_demand(i, hour)?;
        total.0 += p;
        total.1 += q;
    }
    Ok(total)
}

/// Parses and validates a feeder file.
pub fn parse_feeder(text: &str) -> Result<FeederNetwork, GridError> {
    let net = parse_unchecked(text)?;
    net.tree()?;
    Ok(net)
}

/// Parses a feeder file without the radiality check.
pub fn parse_unchecked(text: &str) -> Result<FeederNetwork, GridError> {
    let mut base_mva = None;
    let mut base_kv = None;
    let mut profile = Vec::new();
    let mut buses = Vec::new();
    let mut branches = Vec::new();

    for (n, raw) in text.lines().enumerate() {
        let line = n + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let err = |msg: String| GridError::Parse { line, msg };
        let mut tokens = content.split_whitespace();
        let head = tokens.next().unwrap_or_default();
        match head {
            "bus" => buses.push(parse_bus(tokens).map_err(err)?),
            "branch" => branches.push(parse_branch(tokens).map_err(err)?),
            _ => {
                let (key, value) = content
                    .split_once('=')
                    .ok_or_else(|| err(format!("unrecognised record `{head}`")))?;
                let value = value.trim();
                match key.trim() {
                    "base_mva" => base_mva = Some(parse_num(value).map_err(err)?),
                    "base_kv" => base_kv = Some(parse_num(value).map_err(err)?),
                    "profile" => profile = parse_list(value).map_err(err)?,
                    other => return Err(err(format!("unknown header `{other}`"))),
                }
            }
        }
    }
    let base_mva = base_mva.ok_or(GridError::Parse {
        line: 0,
        msg: "missing base_mva header".into(),
    })?;
    let base_kv = base_kv.ok_or(GridError::Parse {
        line: 0,
        msg: "missing base_kv header".into(),
    })?;
    FeederNetwork::new(base_mva, base_kv, profile, buses, branches)
}

fn parse_num(s: &str) -> Result<f64, String> {
    s.trim()
        .parse::<f64>()
        .map_err(|_| format!("`{s}` is not a number"))
        .and_then(|v| {
            if v.is_finite() {
                Ok(v)
            } else {
                Err(format!("`{s}` is not finite"))
            }
        })
}

fn parse_list(s: &str) -> Result<Vec<f64>, String> {
    s.split(',').map(parse_num).collect()
}

fn parse_demand(s: &str) -> Result<Demand, String> {
    let values = parse_list(s)?;
    Ok(if values.len() == 1 {
        Demand::Scalar(values[0])
    } else {
        Demand::Hourly(values)
    })
}

fn parse_id(s: Option<&str>, what: &str) -> Result<u32, String> {
    let s = s.ok_or_else(|| format!("missing {what}"))?;
    s.parse().map_err(|_| format!("invalid {what} `{s}`"))
}

fn parse_bus<'a>(mut tokens: impl Iterator<Item = &'a str>) -> Result<Bus, String> {
    let mut bus = Bus::new(parse_id(tokens.next(), "bus id")?, 0.0, 0.0);
    let (mut vmin, mut vmax) = (None, None);
    for tok in tokens {
        if tok == "root" {
            bus.is_root = true;
            continue;
        }
        let (k, v) = tok
            .split_once('=')
            .ok_or_else(|| format!("expected key=value, got `{tok}`"))?;
        match k {
            "p" => bus.demand_p = parse_demand(v)?,
            "q" => bus.demand_q = parse_demand(v)?,
            "vmin" => vmin = Some(parse_num(v)?),
            "vmax" => vmax = Some(parse_num(v)?),
            "cap" => bus.cap_kvar = parse_num(v)?,
            "pv" => bus.pv_capacity = parse_num(v)?,
            _ => return Err(format!("unknown bus field `{k}`")),
        }
    }
    bus.v_min = vmin.ok_or("bus needs vmin")?;
    bus.v_max = vmax.ok_or("bus needs vmax")?;
    Ok(bus)
}

fn parse_branch<'a>(mut tokens: impl Iterator<Item = &'a str>) -> Result<Branch, String> {
    let from = parse_id(tokens.next(), "from bus")?;
    let to = parse_id(tokens.next(), "to bus")?;
    let (mut r, mut x, mut lmax) = (None, None, None);
    let mut switch = None;
    let mut rest = tokens.peekable();
    while let Some(tok) = rest.next() {
        if tok == "switch" {
            let state = rest.next().ok_or("switch needs a state")?;
            switch = Some(match state {
                "open" => false,
                "closed" => true,
                _ => {
                    return Err(format!(
                        "switch state must be open or closed, got `{state}`"
                    ))
                }
            });
            continue;
        }
        let (k, v) = tok
            .split_once('=')
            .ok_or_else(|| format!("expected key=value, got `{tok}`"))?;
        match k {
            "r" => r = Some(parse_num(v)?),
            "x" => x = Some(parse_num(v)?),
            "lmax" => lmax = Some(parse_num(v)?),
            _ => return Err(format!("unknown branch field `{k}`")),
        }
    }
    let r = r.ok_or("branch needs r")?;
    let x = x.ok_or("branch needs x")?;
    let lmax = lmax.ok_or("branch needs lmax")?;
    Ok(match switch {
        Some(closed) => Branch::switch(from, to, r, x, lmax, closed),
        None => Branch::line(from, to, r, x, lmax),
    })
}

fn write_demand(out: &mut String, key: &str, d: &Demand) {
    match d {
        Demand::Scalar(v) => write!(out, " {key}={v}").unwrap(),
        Demand::Hourly(v) => {
            let joined: Vec<String> = v.iter().map(|x| x.to_string()).collect();
            write!(out, " {key}={}", joined.join(",")).unwrap();
        }
    }
}

/// Writes a network back out in the feeder file format.
pub fn serialize_feeder(net: &FeederNetwork) -> String {
    let mut out = String::new();
    writeln!(out, "base_mva = {}", net.base_mva).unwrap();
    writeln!(out, "base_kv = {}", net.base_kv).unwrap();
    if !net.profile.is_empty() {
        let joined: Vec<String> = net.profile.iter().map(|x| x.to_string()).collect();
        writeln!(out, "profile = {}", joined.join(", ")).unwrap();
    }
    for b in &net.buses {
        write!(out, "bus {}", b.id).unwrap();
        if b.is_root {
            out.push_str(" root");
        }
        write_demand(&mut out, "p", &b.demand_p);
        write_demand(&mut out, "q", &b.demand_q);
        write!(out, " vmin={} vmax={}", b.v_min, b.v_max).unwrap();
        if b.cap_kvar != 0.0 {
            write!(out, " cap={}", b.cap_kvar).unwrap();
        }
        if b.pv_capacity != 0.0 {
            write!(out, " pv={}", b.pv_capacity).unwrap();
        }
        out.push('\n');
    }
    for br in &net.branches {
        write!(
            out,
            "branch {} {} r={} x={} lmax={}",
            br.from_bus, br.to_bus, br.r, br.x, br.l_max
        )
        .unwrap();
        if br.is_switch {
            out.push_str(if br.closed {
                " switch closed"
            } else {
                " switch open"
            });
        }
        out.push('\n');
    }
    out
}
