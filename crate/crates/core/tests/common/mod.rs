#![allow(dead_code)]

use std::path::PathBuf;
use std::sync::Arc;

use feedersched::grid::{parse_feeder, FeederNetwork};

pub fn data_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("data")
}

pub fn ieee123() -> FeederNetwork {
    let text = std::fs::read_to_string(data_dir().join("ieee123.feeder")).unwrap();
    parse_feeder(&text).unwrap()
}

/// Per-unit load of one non-root bus in a small test feeder.
#[derive(Debug, Clone, Copy)]
pub struct Leg {
    pub r: f64,
    pub x: f64,
    pub p: f64,
    pub q: f64,
}

/// Base 1 MVA, so a per-unit load `p` is written as `1000·p` kW.
fn bus_line(id: u32, leg: &Leg) -> String {
    format!(
        "bus {id} p={} q={} vmin=0.8 vmax=1.2\n",
        leg.p * 1000.0,
        leg.q * 1000.0
    )
}

fn header() -> String {
    "base_mva = 1\nbase_kv = 4.16\nbus 0 root p=0 q=0 vmin=0.8 vmax=1.2\n".to_string()
}

pub fn two_bus(leg: Leg) -> Arc<FeederNetwork> {
    let text = format!(
        "{}{}branch 0 1 r={} x={} lmax=100\n",
        header(),
        bus_line(1, &leg),
        leg.r,
        leg.x
    );
    Arc::new(parse_feeder(&text).unwrap())
}

/// Root, bus 1, bus 2 in a chain.
pub fn three_bus_chain(a: Leg, b: Leg) -> Arc<FeederNetwork> {
    let text = format!(
        "{}{}{}branch 0 1 r={} x={} lmax=100\nbranch 1 2 r={} x={} lmax=100\n",
        header(),
        bus_line(1, &a),
        bus_line(2, &b),
        a.r,
        a.x,
        b.r,
        b.x
    );
    Arc::new(parse_feeder(&text).unwrap())
}

/// Root feeding buses 1 and 2 directly.
pub fn three_bus_star(a: Leg, b: Leg) -> Arc<FeederNetwork> {
    let text = format!(
        "{}{}{}branch 0 1 r={} x={} lmax=100\nbranch 0 2 r={} x={} lmax=100\n",
        header(),
        bus_line(1, &a),
        bus_line(2, &b),
        a.r,
        a.x,
        b.r,
        b.x
    );
    Arc::new(parse_feeder(&text).unwrap())
}

pub fn bisect(mut lo: f64, mut hi: f64, f: impl Fn(f64) -> f64) -> f64 {
    let f_lo = f(lo);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if (f(mid) > 0.0) == (f_lo > 0.0) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Branch current of a leaf branch with sending voltage `v` and downstream
/// demand `(p, q)` (per-unit, already including anything beyond the bus):
/// smallest root of `(p + r·l)² + (q + x·l)² = v·l`, found by bisection
/// below the vertex of the quadratic.
pub fn branch_current(v: f64, r: f64, x: f64, p: f64, q: f64) -> f64 {
    let h = |l: f64| (p + r * l).powi(2) + (q + x * l).powi(2) - v * l;
    let z2 = r * r + x * x;
    let vertex = (v - 2.0 * (r * p + x * q)) / (2.0 * z2);
    assert!(h(vertex) < 0.0, "no load-flow solution");
    bisect(0.0, vertex, h)
}

/// Per-unit solution of a small feeder: `(P, Q, l, v)` per non-root bus.
#[derive(Debug, Clone, Copy)]
pub struct BranchState {
    pub p: f64,
    pub q: f64,
    pub l: f64,
    pub v: f64,
}

pub fn two_bus_oracle(v0: f64, leg: Leg) -> BranchState {
    let l = branch_current(v0, leg.r, leg.x, leg.p, leg.q);
    let p = leg.p + leg.r * l;
    let q = leg.q + leg.x * l;
    let v = v0 - 2.0 * (leg.r * p + leg.x * q) + (leg.r * leg.r + leg.x * leg.x) * l;
    BranchState { p, q, l, v }
}

/// Chain oracle: for a trial `v1`, the far branch is a scalar quadratic;
/// the near branch then gives `v1` back. The fixed point is found by
/// bisection on `v1`.
pub fn chain_oracle(v0: f64, a: Leg, b: Leg) -> [BranchState; 2] {
    let given_v1 = |v1: f64| {
        let far = two_bus_oracle(v1, b);
        let near = two_bus_oracle(
            v0,
            Leg {
                p: a.p + far.p,
                q: a.q + far.q,
                ..a
            },
        );
        [near, far]
    };
    let v1 = bisect(0.5 * v0, v0, |v1| given_v1(v1)[0].v - v1);
    given_v1(v1)
}

pub fn loss(states: &[BranchState], legs: &[Leg]) -> f64 {
    states.iter().zip(legs).map(|(s, g)| g.r * s.l).sum()
}
