//! Independent reference models shared by the integration tests.
#![allow(dead_code)]

use std::collections::BTreeMap;

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use wiretopo::experiment::{generate_random_tree, LoadModel};
use wiretopo::line::{cable_preset, CableParams};
use wiretopo::network::{NodeId, Topology};

pub const CABLE: &str = "lv-distribution";

pub fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

/// Propagation constant and characteristic impedance straight from RLGC.
pub fn gamma_zc(cable: &CableParams, freq: f64) -> (Complex64, Complex64) {
    let w = 2.0 * std::f64::consts::PI * freq;
    let z = c(cable.r, w * cable.l);
    let y = c(cable.g, w * cable.c);
    let g = (z * y).sqrt();
    let g = if g.re < 0.0 { -g } else { g };
    (g, z / g)
}

/// Input admittance of a line terminated by `y_far`, from its ABCD matrix
/// `[[cosh gd, Zc sinh gd], [sinh gd / Zc, cosh gd]]`.
pub fn abcd_input(y_far: Complex64, gamma: Complex64, zc: Complex64, d: f64) -> Complex64 {
    let (ch, sh) = ((gamma * d).cosh(), (gamma * d).sinh());
    let (a, b, cc, dd) = (ch, zc * sh, sh / zc, ch);
    // V1 = A V2 + B I2, I1 = C V2 + D I2 with I2 = y_far V2
    (cc + dd * y_far) / (a + b * y_far)
}

/// Driving-point admittance at every node, by chaining ABCD matrices down
/// the tree rooted at that node.
pub fn abcd_admittances(topo: &Topology, freq: f64) -> BTreeMap<NodeId, Complex64> {
    let mut adj: BTreeMap<NodeId, Vec<(NodeId, f64, Complex64, Complex64)>> = BTreeMap::new();
    for b in topo.branches() {
        let cable = topo.cables().find(|x| x.name == b.cable).expect("cable");
        let (g, zc) = gamma_zc(cable, freq);
        adj.entry(b.a).or_default().push((b.b, b.length_m, g, zc));
        adj.entry(b.b).or_default().push((b.a, b.length_m, g, zc));
    }
    fn seen(
        topo: &Topology,
        adj: &BTreeMap<NodeId, Vec<(NodeId, f64, Complex64, Complex64)>>,
        node: NodeId,
        parent: Option<NodeId>,
    ) -> Complex64 {
        let mut y = topo.load(node).unwrap();
        for &(k, d, g, zc) in adj.get(&node).into_iter().flatten() {
            if Some(k) != parent {
                y += abcd_input(seen(topo, adj, k, Some(node)), g, zc, d);
            }
        }
        y
    }
    topo.node_ids().map(|id| (id, seen(topo, &adj, id, None))).collect()
}

/// Driving-point admittances `1 / (Y^{-1})_ii` of the full nodal admittance
/// matrix, each line stamped as a two-port with `Y11 = Y22 = coth(gd)/Zc`,
/// `Y12 = -csch(gd)/Zc`.
pub fn nodal_admittances(topo: &Topology, freq: f64) -> BTreeMap<NodeId, Complex64> {
    let ids: Vec<NodeId> = topo.node_ids().collect();
    let idx = |id: NodeId| ids.iter().position(|&x| x == id).unwrap();
    let n = ids.len();
    let mut m = vec![vec![c(0.0, 0.0); n]; n];
    for (i, &id) in ids.iter().enumerate() {
        m[i][i] += topo.load(id).unwrap();
    }
    for b in topo.branches() {
        let cable = topo.cables().find(|x| x.name == b.cable).expect("cable");
        let (g, zc) = gamma_zc(cable, freq);
        let gd = g * b.length_m;
        let y11 = gd.cosh() / gd.sinh() / zc;
        let y12 = -1.0 / gd.sinh() / zc;
        let (i, k) = (idx(b.a), idx(b.b));
        m[i][i] += y11;
        m[k][k] += y11;
        m[i][k] += y12;
        m[k][i] += y12;
    }
    ids.iter()
        .enumerate()
        .map(|(i, &id)| {
            let mut rhs = vec![c(0.0, 0.0); n];
            rhs[i] = c(1.0, 0.0);
            let v = solve(m.clone(), rhs);
            (id, 1.0 / v[i])
        })
        .collect()
}

/// Gaussian elimination with partial pivoting.
fn solve(mut a: Vec<Vec<Complex64>>, mut b: Vec<Complex64>) -> Vec<Complex64> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n).max_by(|&r, &s| a[r][col].norm().total_cmp(&a[s][col].norm())).unwrap();
        a.swap(col, piv);
        b.swap(col, piv);
        for r in col + 1..n {
            let f = a[r][col] / a[col][col];
            for k in col..n {
                let t = a[col][k];
                a[r][k] -= f * t;
            }
            let t = b[col];
            b[r] -= f * t;
        }
    }
    let mut x = vec![c(0.0, 0.0); n];
    for r in (0..n).rev() {
        let s: Complex64 = (r + 1..n).map(|k| a[r][k] * x[k]).sum();
        x[r] = (b[r] - s) / a[r][r];
    }
    x
}

pub fn rel_err(a: Complex64, b: Complex64) -> f64 {
    (a - b).norm() / b.norm()
}

pub fn random_tree(n: usize, seed: u64, max_branch: f64, freq: f64) -> Topology {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cable = cable_preset(CABLE).unwrap();
    generate_random_tree(n, max_branch, &LoadModel::default(), &cable, freq, &mut rng).unwrap()
}
