mod common;

use std::collections::BTreeMap;

use common::{abcd_admittances, abcd_input, c, gamma_zc, nodal_admittances, random_tree, rel_err, CABLE};
use proptest::prelude::*;
use wiretopo::line::{cable_preset, carry_back};
use wiretopo::network::{all_node_admittances, node_admittance, Branch, MeasurementSet, Node, NodeId, Topology};

fn chain3() -> Topology {
    let nodes = vec![
        Node { id: NodeId(1), load: c(0.004, 0.001) },
        Node { id: NodeId(2), load: c(0.02, -0.005) },
        Node { id: NodeId(3), load: c(0.0015, 0.0) },
    ];
    let branches = vec![
        Branch { a: NodeId(1), b: NodeId(2), length_m: 600.0, cable: CABLE.into() },
        Branch { a: NodeId(2), b: NodeId(3), length_m: 1100.0, cable: CABLE.into() },
    ];
    Topology::new(nodes, branches, [cable_preset(CABLE).unwrap()]).unwrap()
}

#[test]
fn three_segment_cascade_matches_chain_product() {
    let cable = cable_preset("lv-service").unwrap();
    let s = cable.secondary(3e4).unwrap();
    let (g, zc) = gamma_zc(&cable, 3e4);
    let y_far = c(0.002, -0.0007);
    let segs = [230.0, 410.0, 95.0];
    let stepped = segs.iter().fold(y_far, |y, &d| carry_back(y, &s, d).unwrap());

    // product of the three 2x2 chain matrices, near end first
    let mut m = [[c(1.0, 0.0), c(0.0, 0.0)], [c(0.0, 0.0), c(1.0, 0.0)]];
    for &d in segs.iter().rev() {
        let (ch, sh) = ((g * d).cosh(), (g * d).sinh());
        let t = [[ch, zc * sh], [sh / zc, ch]];
        m = [
            [m[0][0] * t[0][0] + m[0][1] * t[1][0], m[0][0] * t[0][1] + m[0][1] * t[1][1]],
            [m[1][0] * t[0][0] + m[1][1] * t[1][0], m[1][0] * t[0][1] + m[1][1] * t[1][1]],
        ];
    }
    let chained = (m[1][0] + m[1][1] * y_far) / (m[0][0] + m[0][1] * y_far);
    assert!(rel_err(stepped, chained) < 1e-10);
}

#[test]
fn fig3_chain_matches_oracles() {
    let topo = chain3();
    let meas = all_node_admittances(&topo, 1e4).unwrap();
    let abcd = abcd_admittances(&topo, 1e4);
    let nodal = nodal_admittances(&topo, 1e4);
    for id in topo.node_ids() {
        assert!(rel_err(meas.entries[&id], abcd[&id]) < 1e-10);
        assert!(rel_err(meas.entries[&id], nodal[&id]) < 1e-10);
    }
    // middle node: its load plus one carry-back per side
    let cable = cable_preset(CABLE).unwrap();
    let (g, zc) = gamma_zc(&cable, 1e4);
    let y2 = c(0.02, -0.005) + abcd_input(c(0.004, 0.001), g, zc, 600.0) + abcd_input(c(0.0015, 0.0), g, zc, 1100.0);
    assert!(rel_err(meas.entries[&NodeId(2)], y2) < 1e-10);
}

#[test]
fn rerooting_equals_naive_recursion_on_random_trees() {
    for seed in 0..20 {
        let topo = random_tree(10, seed, 1400.0, 1e4);
        let lines = topo.lines_at(1e4).unwrap();
        let fast = all_node_admittances(&topo, 1e4).unwrap();
        for id in topo.node_ids() {
            let naive = node_admittance(&topo, id, &lines).unwrap();
            assert!(rel_err(fast.entries[&id], naive) < 1e-12, "seed {seed} node {id}");
        }
    }
}

#[test]
fn nodal_matrix_agrees_on_larger_trees() {
    for seed in 0..5 {
        let topo = random_tree(25, 100 + seed, 1400.0, 3e4);
        let fast = all_node_admittances(&topo, 3e4).unwrap();
        let nodal = nodal_admittances(&topo, 3e4);
        for id in topo.node_ids() {
            assert!(rel_err(fast.entries[&id], nodal[&id]) < 1e-9, "seed {seed} node {id}");
        }
    }
}

#[test]
fn measurement_csv_is_bit_exact() {
    let topo = random_tree(12, 4, 1400.0, 1e4);
    let meas = all_node_admittances(&topo, 1e4).unwrap();
    let mut buf = Vec::new();
    meas.write_csv(&mut buf).unwrap();
    let back = MeasurementSet::read_csv(buf.as_slice()).unwrap();
    assert_eq!(back, meas);
    let mut again = Vec::new();
    back.write_csv(&mut again).unwrap();
    assert_eq!(buf, again);
}

#[test]
fn topology_json_roundtrip() {
    let topo = random_tree(15, 8, 1400.0, 1e4);
    let back = Topology::from_json(&topo.to_json().unwrap()).unwrap();
    assert_eq!(back, topo);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn admittances_follow_relabeling(seed in 0u64..1000, n in 2usize..12, shift in 1u32..500) {
        let topo = random_tree(n, seed, 1400.0, 1e4);
        // reverse order and offset, so both ids and iteration order change
        let top = n as u32 - 1;
        let map = |id: NodeId| NodeId(shift + (top - id.0) * 3);
        let relabeled = topo.relabeled(map).unwrap();
        let a = all_node_admittances(&topo, 1e4).unwrap();
        let b = all_node_admittances(&relabeled, 1e4).unwrap();
        for (id, y) in &a.entries {
            prop_assert!(rel_err(b.entries[&map(*id)], *y) < 1e-12);
        }
    }

    #[test]
    fn forward_model_matches_chain_oracle(seed in 0u64..10_000, n in 1usize..9) {
        let topo = random_tree(n, seed, 1400.0, 1e4);
        let fast = all_node_admittances(&topo, 1e4).unwrap();
        let oracle: BTreeMap<_, _> = abcd_admittances(&topo, 1e4);
        for id in topo.node_ids() {
            prop_assert!(rel_err(fast.entries[&id], oracle[&id]) < 1e-10);
        }
    }
}
