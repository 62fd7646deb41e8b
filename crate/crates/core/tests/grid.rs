mod common;

use feedersched::grid::{
    aggregate_demand, parse_feeder, serialize_feeder, validate_radial, GridError, Violation,
};
use proptest::prelude::*;

#[test]
fn ieee123_element_counts() {
    let stats = common::ieee123().stats();
    assert_eq!(stats.basic_branches, 118);
    assert_eq!(stats.loads, 85);
    assert_eq!(stats.capacitors, 4);
    assert_eq!(stats.switches, 11);
    assert_eq!(stats.closed_switches + stats.open_switches, 11);
}

#[test]
fn ieee123_is_radial_and_round_trips() {
    let net = common::ieee123();
    assert!(validate_radial(&net).is_ok());
    let again = parse_feeder(&serialize_feeder(&net)).unwrap();
    assert_eq!(again, net);
    assert_eq!(serialize_feeder(&again), serialize_feeder(&net));
}

#[test]
fn ieee123_peak_demand() {
    // Published spot loads sum to 3490 kW / 1920 kvar; the profile peaks at 1.0.
    let net = common::ieee123();
    let (p, q) = aggregate_demand(&net, 18).unwrap();
    assert!((p - 3490.0).abs() < 1e-6, "{p}");
    assert!((q - 1920.0).abs() < 1e-6, "{q}");
    assert!(matches!(
        aggregate_demand(&net, 24),
        Err(GridError::HourOutOfRange { .. })
    ));
}

#[test]
fn closing_a_tie_switch_makes_a_loop() {
    let net = common::ieee123();
    let looped = net.with_switch(54, 94, true).unwrap();
    let report = validate_radial(&looped);
    assert!(
        report
            .violations
            .iter()
            .any(|v| matches!(v, Violation::Loop(_))),
        "{report:?}"
    );
    assert!(matches!(looped.tree(), Err(GridError::Radiality(_))));
}

/// Random tree: bus k > 0 hangs off a bus with smaller id.
fn random_feeder() -> impl Strategy<Value = String> {
    prop::collection::vec(
        (any::<prop::sample::Index>(), 0u32..500, 0u32..300, 1u32..80),
        1..25,
    )
    .prop_map(|parts| {
        let mut text = String::from(
            "base_mva = 2.5\nbase_kv = 12.47\nbus 0 root p=0 q=0 vmin=0.95 vmax=1.05\n",
        );
        for (k, (parent, p, q, r)) in parts.iter().enumerate() {
            let id = k + 1;
            text += &format!("bus {id} p={p} q={q} vmin=0.9 vmax=1.1\n");
            text += &format!(
                "branch {} {id} r={} x={} lmax=3\n",
                parent.index(id),
                *r as f64 * 1e-3,
                *r as f64 * 2e-3
            );
        }
        text
    })
}

proptest! {
    #[test]
    fn random_radial_feeders_parse_and_round_trip(text in random_feeder()) {
        let net = parse_feeder(&text).unwrap();
        prop_assert!(validate_radial(&net).is_ok());
        let tree = net.tree().unwrap();
        prop_assert_eq!(tree.energized_count(), net.buses().len());
        prop_assert_eq!(parse_feeder(&serialize_feeder(&net)).unwrap(), net);
    }
}
