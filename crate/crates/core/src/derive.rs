//! Iterative leaf identification and tree reduction.
//!
//! Every node still in the active set is tried as a leaf against every other
//! active node. Accepted leaves are attached to their neighbor, their
//! working load is carried back into it, and they leave the active set. The
//! measured admittances never change: absorbing a leaf's load into its
//! neighbor leaves the admittance at every surviving node untouched.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use num_complex::Complex64;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::line::{carry_back, SecondaryParams};
use crate::network::{Branch, MeasurementSet, NodeId, Topology};
use crate::pair::{adjacency_test, root_gradient, solve_pair_distance};

/// Default scale of the noise-driven threshold, `kappa` in `kappa * lambda * 10^(-ANR/20)`.
/// Calibrated on the 10-node, 10 kHz, 1.4 km sweep (60 to 120 dB); the optimum is flat over 0.8 to 2.5.
pub const DEFAULT_KAPPA: f64 = 1.585;

/// Threshold floor as a fraction of the wavelength; only active without noise.
pub const DEFAULT_FLOOR_REL: f64 = 1e-10;

/// Line seen by a candidate leaf's connecting branch.
#[derive(Debug, Clone, PartialEq)]
pub struct NamedLine {
    pub name: String,
    pub sec: SecondaryParams,
}

/// Cable knowledge available to the derivation: one default line, optionally
/// overridden per node for the branch that node hangs from.
#[derive(Debug, Clone, PartialEq)]
pub struct LineModel {
    pub default: NamedLine,
    pub per_node: BTreeMap<NodeId, NamedLine>,
}

impl LineModel {
    pub fn uniform(name: impl Into<String>, sec: SecondaryParams) -> Self {
        Self {
            default: NamedLine {
                name: name.into(),
                sec,
            },
            per_node: BTreeMap::new(),
        }
    }

    pub fn for_leaf(&self, id: NodeId) -> &NamedLine {
        self.per_node.get(&id).unwrap_or(&self.default)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Threshold {
    /// `max(kappa * lambda * 10^(-ANR/20), floor_rel * lambda)`.
    Scaled { kappa: f64, floor_rel: f64 },
    /// Fixed value in meters.
    Fixed(f64),
    /// Per pair: `z` standard deviations of `Im(d)` predicted by first-order
    /// propagation of the measurement noise and of the error accumulated in
    /// the working loads, floored at `floor_rel * lambda`.
    Sensitivity { z: f64, floor_rel: f64 },
}

impl Default for Threshold {
    fn default() -> Self {
        Threshold::Scaled {
            kappa: DEFAULT_KAPPA,
            floor_rel: DEFAULT_FLOOR_REL,
        }
    }
}

impl Threshold {
    pub fn with_kappa(kappa: f64) -> Self {
        Threshold::Scaled {
            kappa,
            floor_rel: DEFAULT_FLOOR_REL,
        }
    }

    /// Threshold in meters. For `Sensitivity` this is only the floor; the
    /// effective value is computed per pair.
    pub fn meters(&self, anr_db: f64, wavelength: f64) -> f64 {
        match *self {
            Threshold::Fixed(t) => t,
            Threshold::Sensitivity { floor_rel, .. } => floor_rel * wavelength,
            Threshold::Scaled { kappa, floor_rel } => {
                let noise = kappa * wavelength * 10f64.powf(-anr_db / 20.0);
                noise.max(floor_rel * wavelength)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DerivedBranch {
    pub leaf: NodeId,
    pub neighbor: NodeId,
    pub length_m: f64,
    /// `|Im(d)|` of the accepted root.
    pub residual: f64,
    pub round: usize,
}

/// Mutable bookkeeping of the reduction.
#[derive(Debug, Clone, PartialEq)]
pub struct DerivationState {
    /// Active node set.
    pub gl: BTreeSet<NodeId>,
    /// Original loads plus everything absorbed so far.
    pub working_loads: BTreeMap<NodeId, Complex64>,
    pub derived_branches: Vec<DerivedBranch>,
    /// Nodes already attached as leaves.
    pub derived_nodes: BTreeSet<NodeId>,
    /// First-order variance `E|dW|^2` of each working load.
    pub load_variance: BTreeMap<NodeId, f64>,
}

impl DerivationState {
    pub fn new(loads: &BTreeMap<NodeId, Complex64>) -> Self {
        Self {
            gl: loads.keys().copied().collect(),
            working_loads: loads.clone(),
            derived_branches: Vec::new(),
            derived_nodes: BTreeSet::new(),
            load_variance: loads.keys().map(|&id| (id, 0.0)).collect(),
        }
    }

    /// Attaches `leaf` to `neighbor` over `d` meters and carries its working load back.
    pub fn reduce_leaf(
        &mut self,
        leaf: NodeId,
        neighbor: NodeId,
        d: f64,
        sec: &SecondaryParams,
        round: usize,
        residual: f64,
    ) -> Result<()> {
        if !self.gl.contains(&leaf) {
            return Err(Error::UnknownNode(leaf));
        }
        if !self.gl.contains(&neighbor) || leaf == neighbor {
            return Err(Error::UnknownNode(neighbor));
        }
        if !(d > 0.0) || !d.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "absorbed branch length must be positive, got {d}"
            )));
        }
        let y_leaf = self.working_loads[&leaf];
        let absorbed = carry_back(y_leaf, sec, d)?;
        let var_leaf = self.load_variance.remove(&leaf).unwrap_or(0.0);
        if var_leaf > 0.0 {
            let g = carry_back_load_derivative(y_leaf, sec, d);
            *self.load_variance.entry(neighbor).or_insert(0.0) += g.norm_sqr() * var_leaf;
        }
        *self.working_loads.get_mut(&neighbor).expect("active node has a load") += absorbed;
        self.gl.remove(&leaf);
        self.derived_nodes.insert(leaf);
        self.derived_branches.push(DerivedBranch {
            leaf,
            neighbor,
            length_m: d,
            residual,
            round,
        });
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Complete,
    Interrupted,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InterruptReason {
    /// A full round accepted no leaf.
    NoLeafFound,
    /// Every residual in an empty round exceeded the wavelength.
    ResidualExplosion,
    /// Two leaves claimed each other, or a claimed neighbor was itself claimed as a leaf.
    ConflictingLeaves,
    /// A carried-back load overflowed or hit a resonance.
    AbsorptionFailed,
}

/// One tested (leaf candidate, neighbor candidate) pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairDiagnostic {
    pub round: usize,
    pub leaf: NodeId,
    pub neighbor: NodeId,
    /// Root with the smallest `|Im(d)|`; NaN when the pair was degenerate.
    pub d: Complex64,
    pub accepted: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DerivationResult {
    pub status: Status,
    pub interrupt: Option<InterruptReason>,
    pub rounds: usize,
    pub loads: BTreeMap<NodeId, Complex64>,
    pub branches: Vec<DerivedBranch>,
    pub cable_names: BTreeMap<NodeId, String>,
    pub diagnostics: Vec<PairDiagnostic>,
    /// Threshold applied to leaves on the default line (m).
    pub threshold_m: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeriveOptions {
    pub threshold: Threshold,
    pub conflicts: ConflictPolicy,
    /// Keep every pair test in `diagnostics`.
    pub record_pairs: bool,
}

impl Default for DeriveOptions {
    fn default() -> Self {
        Self {
            threshold: Threshold::default(),
            conflicts: ConflictPolicy::default(),
            record_pairs: true,
        }
    }
}

struct Proposal {
    leaf: NodeId,
    neighbor: NodeId,
    d: f64,
    residual: f64,
    /// Residual relative to the threshold it was tested against.
    score: f64,
    /// First-order variance of the complex length.
    d_var: f64,
}

/// Recovers graph and branch lengths from per-node admittances and loads.
pub fn derive_topology(
    meas: &MeasurementSet,
    loads: &BTreeMap<NodeId, Complex64>,
    lines: &LineModel,
    anr_db: f64,
    opts: &DeriveOptions,
) -> Result<DerivationResult> {
    if meas.entries.len() != loads.len() || meas.entries.keys().ne(loads.keys()) {
        return Err(Error::Format(
            "measurements and loads must cover the same nodes".into(),
        ));
    }
    for (&id, y) in meas.entries.iter().chain(loads.iter()) {
        if !(y.re.is_finite() && y.im.is_finite()) {
            return Err(Error::Format(format!("non-finite value at node {id}")));
        }
    }
    let wavelength_of = |id: NodeId| lines.for_leaf(id).sec.wavelength;
    let threshold_of = |id: NodeId| opts.threshold.meters(anr_db, wavelength_of(id));
    let noise_power = if anr_db.is_finite() {
        10f64.powf(-anr_db / 10.0)
    } else {
        0.0
    };

    let mut state = DerivationState::new(loads);
    let mut diagnostics = Vec::new();
    let mut rounds = 0;
    let mut interrupt = None;

    while state.gl.len() > 1 {
        rounds += 1;
        let mut proposals: Vec<Proposal> = Vec::new();
        let mut smallest_residual = f64::INFINITY;
        let first_diag = diagnostics.len();

        for &i in &state.gl {
            let line = &lines.for_leaf(i).sec;
            let y_i = meas.entries[&i];
            let w_i = state.working_loads[&i];
            let mut best: Option<Proposal> = None;
            for &k in state.gl.iter().filter(|&&k| k != i) {
                let y_k = meas.entries[&k];
                let mut d = Complex64::new(f64::NAN, f64::NAN);
                let mut thr = threshold_of(i);
                let mut d_var = 0.0;
                let mut verdict = None;
                if let Ok(pair) = solve_pair_distance(y_i, y_k, w_i, line) {
                    if let Some(root) = pair.best() {
                        d = root.d;
                        if let Threshold::Sensitivity { z, .. } = opts.threshold {
                            d_var = length_variance(y_i, y_k, w_i, line, root.x, noise_power, state.load_variance[&i]);
                            thr = thr.max(z * (d_var / 2.0).sqrt());
                        }
                    }
                    verdict = adjacency_test(&pair, thr, line.wavelength).ok();
                }
                if opts.record_pairs {
                    diagnostics.push(PairDiagnostic {
                        round: rounds,
                        leaf: i,
                        neighbor: k,
                        d,
                        accepted: false,
                    });
                }
                let Some(v) = verdict else { continue };
                smallest_residual = smallest_residual.min(v.residual);
                if let (true, Some(d_real)) = (v.adjacent, v.d_real) {
                    let score = v.residual / thr;
                    // ascending k, strict < keeps the lowest id on ties
                    if best.as_ref().is_none_or(|b| score < b.score) {
                        best = Some(Proposal {
                            leaf: i,
                            neighbor: k,
                            d: d_real,
                            residual: v.residual,
                            score,
                            d_var,
                        });
                    }
                }
            }
            proposals.extend(best);
        }

        if proposals.is_empty() {
            let min_lambda = state
                .gl
                .iter()
                .map(|&id| wavelength_of(id))
                .fold(f64::INFINITY, f64::min);
            interrupt = Some(if smallest_residual > min_lambda {
                InterruptReason::ResidualExplosion
            } else {
                InterruptReason::NoLeafFound
            });
            break;
        }

        let proposals = match resolve_round(proposals, state.gl.len(), opts.conflicts) {
            Some(p) => p,
            None => {
                interrupt = Some(InterruptReason::ConflictingLeaves);
                break;
            }
        };

        // all tests of the round used the same working loads; commit now
        let mut failed = false;
        for p in &proposals {
            let line = &lines.for_leaf(p.leaf).sec;
            if p.d_var > 0.0 {
                let w = state.working_loads[&p.leaf];
                let g = carry_back_length_derivative(w, line, p.d);
                *state.load_variance.get_mut(&p.neighbor).expect("active node") += g.norm_sqr() * p.d_var / 2.0;
            }
            if state
                .reduce_leaf(p.leaf, p.neighbor, p.d, line, rounds, p.residual)
                .is_err()
                || !state.working_loads[&p.neighbor].is_finite()
            {
                failed = true;
                break;
            }
            if opts.record_pairs {
                if let Some(diag) = diagnostics[first_diag..]
                    .iter_mut()
                    .find(|g| g.leaf == p.leaf && g.neighbor == p.neighbor)
                {
                    diag.accepted = true;
                }
            }
        }
        if failed {
            interrupt = Some(InterruptReason::AbsorptionFailed);
            break;
        }
    }

    let cable_names = state
        .derived_branches
        .iter()
        .map(|b| (b.leaf, lines.for_leaf(b.leaf).name.clone()))
        .collect();
    Ok(DerivationResult {
        status: if interrupt.is_none() {
            Status::Complete
        } else {
            Status::Interrupted
        },
        interrupt,
        rounds,
        loads: loads.clone(),
        branches: state.derived_branches,
        cable_names,
        diagnostics,
        threshold_m: opts.threshold.meters(anr_db, lines.default.sec.wavelength),
    })
}

/// First-order `E|dd|^2` of the length mapped from root `x`, for relative
/// measurement noise power `noise_power` and working-load variance `load_var`.
fn length_variance(
    y1: Complex64,
    y2: Complex64,
    y_l1: Complex64,
    sec: &SecondaryParams,
    x: Complex64,
    noise_power: f64,
    load_var: f64,
) -> f64 {
    match root_gradient(y1, y2, y_l1, sec, x) {
        Some([g1, g2, gl]) => {
            g1.norm_sqr() * y1.norm_sqr() * noise_power
                + g2.norm_sqr() * y2.norm_sqr() * noise_power
                + gl.norm_sqr() * load_var
        }
        // not differentiable: fall back to the floor
        None => f64::NAN,
    }
}

/// `d carry_back / d Y_leaf` at length `d`.
fn carry_back_load_derivative(y: Complex64, sec: &SecondaryParams, d: f64) -> Complex64 {
    let yc = sec.yc;
    let x = (-2.0 * sec.gamma * d).exp();
    let u = (yc - y) / (yc + y) * x;
    let dcb_du = -2.0 * yc / ((1.0 + u) * (1.0 + u));
    dcb_du * x * (-2.0 * yc / ((yc + y) * (yc + y)))
}

/// `d carry_back / d d` at length `d`.
fn carry_back_length_derivative(y: Complex64, sec: &SecondaryParams, d: f64) -> Complex64 {
    let yc = sec.yc;
    let u = (yc - y) / (yc + y) * (-2.0 * sec.gamma * d).exp();
    -2.0 * yc / ((1.0 + u) * (1.0 + u)) * (-2.0 * sec.gamma * u)
}

/// What to do when the claims of one round contradict each other: two
/// leaves claiming each other, or a claimed neighbor itself claimed as a leaf.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ConflictPolicy {
    /// Treat the round as a detected false positive and stop.
    Interrupt,
    /// Commit claims greedily by ascending residual, postpone the rest to the next round.
    #[default]
    Defer,
}

fn resolve_round(
    mut proposals: Vec<Proposal>,
    active: usize,
    policy: ConflictPolicy,
) -> Option<Vec<Proposal>> {
    if active == 2 {
        // the last two nodes claim each other; keep the cleaner claim
        proposals.sort_by(|a, b| a.score.total_cmp(&b.score));
        proposals.truncate(1);
        return Some(proposals);
    }
    match policy {
        ConflictPolicy::Interrupt => {
            let leaves: BTreeSet<NodeId> = proposals.iter().map(|p| p.leaf).collect();
            let conflict = proposals.iter().any(|p| leaves.contains(&p.neighbor));
            (!conflict).then_some(proposals)
        }
        ConflictPolicy::Defer => {
            proposals.sort_by(|a, b| a.score.total_cmp(&b.score).then(a.leaf.cmp(&b.leaf)));
            let mut absorbed = BTreeSet::new();
            let mut anchors = BTreeSet::new();
            let mut kept = Vec::with_capacity(proposals.len());
            for p in proposals {
                if anchors.contains(&p.leaf) || absorbed.contains(&p.neighbor) {
                    continue;
                }
                absorbed.insert(p.leaf);
                anchors.insert(p.neighbor);
                kept.push(p);
            }
            kept.sort_by_key(|p| p.leaf);
            Some(kept)
        }
    }
}

impl DerivationResult {
    pub fn is_complete(&self) -> bool {
        self.status == Status::Complete
    }

    pub fn branch_list(&self) -> Vec<Branch> {
        self.branches
            .iter()
            .map(|b| Branch {
                a: b.leaf,
                b: b.neighbor,
                length_m: b.length_m,
                cable: self.cable_names[&b.leaf].clone(),
            })
            .collect()
    }

    /// The derived tree; fails for interrupted runs whose branches do not span all nodes.
    pub fn to_topology(&self, cables: impl IntoIterator<Item = crate::line::CableParams>) -> Result<Topology> {
        let nodes = self
            .loads
            .iter()
            .map(|(&id, &load)| crate::network::Node { id, load })
            .collect();
        Topology::new(nodes, self.branch_list(), cables)
    }

    /// Same schema as the topology interchange JSON, plus `status` and
    /// `rounds`; partial branch sets are written as-is. Entries of `cables`
    /// that are used and differ from the presets are embedded.
    pub fn to_json(&self, cables: &[crate::line::CableParams]) -> Result<String> {
        #[derive(Serialize)]
        struct NodeDoc {
            id: u32,
            load_re: f64,
            load_im: f64,
        }
        #[derive(Serialize)]
        struct BranchDoc<'a> {
            a: u32,
            b: u32,
            length_m: f64,
            cable: &'a str,
        }
        #[derive(Serialize)]
        struct Doc<'a> {
            nodes: Vec<NodeDoc>,
            branches: Vec<BranchDoc<'a>>,
            #[serde(skip_serializing_if = "Vec::is_empty")]
            cables: Vec<&'a crate::line::CableParams>,
            status: Status,
            rounds: usize,
        }
        let presets = crate::line::cable_presets();
        let used: BTreeSet<&str> = self.cable_names.values().map(String::as_str).collect();
        let doc = Doc {
            nodes: self
                .loads
                .iter()
                .map(|(id, y)| NodeDoc {
                    id: id.0,
                    load_re: y.re,
                    load_im: y.im,
                })
                .collect(),
            branches: self
                .branches
                .iter()
                .map(|b| BranchDoc {
                    a: b.leaf.0,
                    b: b.neighbor.0,
                    length_m: b.length_m,
                    cable: &self.cable_names[&b.leaf],
                })
                .collect(),
            cables: cables
                .iter()
                .filter(|c| used.contains(c.name.as_str()) && !presets.contains(c))
                .collect(),
            status: self.status,
            rounds: self.rounds,
        };
        Ok(serde_json::to_string_pretty(&doc)?)
    }

    /// CSV with header `leaf_id,neighbor_id,re_d,im_d,accepted`.
    pub fn write_diagnostics_csv<W: Write>(&self, w: W) -> Result<()> {
        #[derive(Serialize)]
        struct Row {
            leaf_id: u32,
            neighbor_id: u32,
            re_d: f64,
            im_d: f64,
            accepted: bool,
        }
        let mut wtr = csv::Writer::from_writer(w);
        for g in &self.diagnostics {
            wtr.serialize(Row {
                leaf_id: g.leaf.0,
                neighbor_id: g.neighbor.0,
                re_d: g.d.re,
                im_d: g.d.im,
                accepted: g.accepted,
            })?;
        }
        wtr.flush().map_err(|e| Error::Format(e.to_string()))?;
        Ok(())
    }
}

/// Agreement between a derived branch set and the ground truth.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TopologyMetrics {
    pub exact_match: bool,
    pub branch_recall: f64,
    pub branch_precision: f64,
    /// Largest absolute length error over correctly paired branches (m).
    pub max_length_error: f64,
    pub max_relative_length_error: f64,
}

/// Relative length error under which a matched branch counts as exact.
pub const EXACT_LENGTH_TOL: f64 = 1e-3;

pub fn compare_topologies(truth: &Topology, derived: &DerivationResult) -> TopologyMetrics {
    let true_len: BTreeMap<(NodeId, NodeId), f64> = truth
        .branches()
        .iter()
        .map(|b| (b.key(), b.length_m))
        .collect();
    let derived_keys: BTreeSet<(NodeId, NodeId)> = derived
        .branches
        .iter()
        .map(|b| {
            if b.leaf <= b.neighbor {
                (b.leaf, b.neighbor)
            } else {
                (b.neighbor, b.leaf)
            }
        })
        .collect();
    let mut matched = 0usize;
    let mut max_abs: f64 = 0.0;
    let mut max_rel: f64 = 0.0;
    for b in &derived.branches {
        let key = if b.leaf <= b.neighbor {
            (b.leaf, b.neighbor)
        } else {
            (b.neighbor, b.leaf)
        };
        if let Some(&len) = true_len.get(&key) {
            matched += 1;
            let err = (b.length_m - len).abs();
            max_abs = max_abs.max(err);
            max_rel = max_rel.max(err / len);
        }
    }
    let recall = if true_len.is_empty() {
        1.0
    } else {
        matched as f64 / true_len.len() as f64
    };
    let precision = match (derived.branches.is_empty(), true_len.is_empty()) {
        (true, true) => 1.0,
        (true, false) => 0.0,
        _ => matched as f64 / derived.branches.len() as f64,
    };
    let same_sets = derived_keys.len() == derived.branches.len()
        && derived_keys.iter().eq(true_len.keys());
    TopologyMetrics {
        exact_match: derived.is_complete() && same_sets && max_rel < EXACT_LENGTH_TOL,
        branch_recall: recall,
        branch_precision: precision,
        max_length_error: max_abs,
        max_relative_length_error: max_rel,
    }
}
