//! Tree-structured networks and the exact forward model: the driving-point
//! admittance seen at every node.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::io::{Read, Write};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::line::{cable_presets, carry_back, CableParams, SecondaryParams};

#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct NodeId(pub u32);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Node {
    pub id: NodeId,
    /// Load admittance of the device plugged at this node (S).
    pub load: Complex64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Branch {
    pub a: NodeId,
    pub b: NodeId,
    pub length_m: f64,
    /// Name of the cable in the topology's cable table.
    pub cable: String,
}

impl Branch {
    /// Endpoints as an unordered pair, smaller id first.
    pub fn key(&self) -> (NodeId, NodeId) {
        if self.a <= self.b {
            (self.a, self.b)
        } else {
            (self.b, self.a)
        }
    }
}

/// A validated tree: connected, `|branches| = |nodes| - 1`, no self loops,
/// positive lengths and every referenced cable present.
#[derive(Debug, Clone, PartialEq)]
pub struct Topology {
    nodes: Vec<Node>,
    branches: Vec<Branch>,
    cables: BTreeMap<String, CableParams>,
    index: HashMap<NodeId, usize>,
    /// `adj[v]` holds `(neighbor index, branch index)`.
    adj: Vec<Vec<(usize, usize)>>,
}

impl Topology {
    pub fn new(
        nodes: Vec<Node>,
        branches: Vec<Branch>,
        cables: impl IntoIterator<Item = CableParams>,
    ) -> Result<Self> {
        let cables: BTreeMap<String, CableParams> =
            cables.into_iter().map(|c| (c.name.clone(), c)).collect();
        for c in cables.values() {
            c.validate()?;
        }
        if nodes.is_empty() {
            return Err(Error::InvalidTopology("no nodes".into()));
        }
        let mut index = HashMap::with_capacity(nodes.len());
        for (i, n) in nodes.iter().enumerate() {
            if !(n.load.re.is_finite() && n.load.im.is_finite()) {
                return Err(Error::InvalidTopology(format!("node {} has a non-finite load", n.id)));
            }
            if n.load.re < 0.0 {
                return Err(Error::InvalidTopology(format!("node {} has an active load", n.id)));
            }
            if index.insert(n.id, i).is_some() {
                return Err(Error::InvalidTopology(format!("duplicate node id {}", n.id)));
            }
        }
        if branches.len() + 1 != nodes.len() {
            return Err(Error::InvalidTopology(format!(
                "{} nodes need {} branches, got {}",
                nodes.len(),
                nodes.len() - 1,
                branches.len()
            )));
        }
        let mut adj = vec![Vec::new(); nodes.len()];
        for (k, br) in branches.iter().enumerate() {
            if br.a == br.b {
                return Err(Error::InvalidTopology(format!("self loop at node {}", br.a)));
            }
            if !(br.length_m.is_finite() && br.length_m > 0.0) {
                return Err(Error::InvalidTopology(format!(
                    "branch {}-{} has non-positive length {}",
                    br.a, br.b, br.length_m
                )));
            }
            if !cables.contains_key(&br.cable) {
                return Err(Error::UnknownCable(br.cable.clone()));
            }
            let a = *index.get(&br.a).ok_or(Error::UnknownNode(br.a))?;
            let b = *index.get(&br.b).ok_or(Error::UnknownNode(br.b))?;
            adj[a].push((b, k));
            adj[b].push((a, k));
        }
        let topo = Self {
            nodes,
            branches,
            cables,
            index,
            adj,
        };
        if topo.dfs_order(0).0.len() != topo.nodes.len() {
            return Err(Error::InvalidTopology("branch set is not a connected tree".into()));
        }
        Ok(topo)
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn branches(&self) -> &[Branch] {
        &self.branches
    }

    pub fn cables(&self) -> impl Iterator<Item = &CableParams> {
        self.cables.values()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node_ids(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.nodes.iter().map(|n| n.id)
    }

    pub fn load(&self, id: NodeId) -> Result<Complex64> {
        self.position(id).map(|i| self.nodes[i].load)
    }

    pub fn loads(&self) -> BTreeMap<NodeId, Complex64> {
        self.nodes.iter().map(|n| (n.id, n.load)).collect()
    }

    pub fn position(&self, id: NodeId) -> Result<usize> {
        self.index.get(&id).copied().ok_or(Error::UnknownNode(id))
    }

    pub fn degree(&self, id: NodeId) -> Result<usize> {
        self.position(id).map(|i| self.adj[i].len())
    }

    pub fn neighbors(&self, id: NodeId) -> Result<Vec<NodeId>> {
        let i = self.position(id)?;
        Ok(self.adj[i].iter().map(|&(j, _)| self.nodes[j].id).collect())
    }

    pub fn is_leaf(&self, id: NodeId) -> Result<bool> {
        self.degree(id).map(|d| d == 1)
    }

    pub fn longest_branch(&self) -> f64 {
        self.branches.iter().map(|b| b.length_m).fold(0.0, f64::max)
    }

    /// Secondary parameters for every cable in the table at `freq`.
    pub fn lines_at(&self, freq: f64) -> Result<LineSet> {
        let lines = self
            .cables
            .iter()
            .map(|(name, c)| Ok((name.clone(), c.secondary(freq)?)))
            .collect::<Result<BTreeMap<_, _>>>()?;
        Ok(LineSet { freq, lines })
    }

    /// Preorder from `root` plus the parent edge `(parent index, branch index)` of each node.
    fn dfs_order(&self, root: usize) -> (Vec<usize>, Vec<Option<(usize, usize)>>) {
        let n = self.nodes.len();
        let mut parent = vec![None; n];
        let mut seen = vec![false; n];
        let mut order = Vec::with_capacity(n);
        let mut stack = vec![root];
        seen[root] = true;
        while let Some(v) = stack.pop() {
            order.push(v);
            for &(w, k) in &self.adj[v] {
                if !seen[w] {
                    seen[w] = true;
                    parent[w] = Some((v, k));
                    stack.push(w);
                }
            }
        }
        (order, parent)
    }

    /// Returns a copy whose ids are mapped through `f` (must be injective).
    pub fn relabeled(&self, f: impl Fn(NodeId) -> NodeId) -> Result<Self> {
        let nodes = self
            .nodes
            .iter()
            .map(|n| Node {
                id: f(n.id),
                load: n.load,
            })
            .collect();
        let branches = self
            .branches
            .iter()
            .map(|b| Branch {
                a: f(b.a),
                b: f(b.b),
                ..b.clone()
            })
            .collect();
        Self::new(nodes, branches, self.cables.values().cloned())
    }

    /// Replaces the load at `id`.
    pub fn with_load(&self, id: NodeId, load: Complex64) -> Result<Self> {
        let mut nodes = self.nodes.clone();
        nodes[self.position(id)?].load = load;
        Self::new(nodes, self.branches.clone(), self.cables.values().cloned())
    }
}

/// Secondary parameters of every cable of a topology at one frequency.
#[derive(Debug, Clone)]
pub struct LineSet {
    pub freq: f64,
    lines: BTreeMap<String, SecondaryParams>,
}

impl LineSet {
    pub fn get(&self, cable: &str) -> Result<&SecondaryParams> {
        self.lines
            .get(cable)
            .ok_or_else(|| Error::UnknownCable(cable.to_string()))
    }

    /// Shortest wavelength over all cables.
    pub fn min_wavelength(&self) -> f64 {
        self.lines
            .values()
            .map(|s| s.wavelength)
            .fold(f64::INFINITY, f64::min)
    }
}

fn branch_contribution(
    topo: &Topology,
    lines: &LineSet,
    branch: usize,
    y_far: Complex64,
) -> Result<Complex64> {
    let br = &topo.branches[branch];
    carry_back(y_far, lines.get(&br.cable)?, br.length_m)
}

fn subtree_admittance(
    topo: &Topology,
    lines: &LineSet,
    v: usize,
    from: Option<usize>,
) -> Result<Complex64> {
    let mut y = topo.nodes[v].load;
    for &(w, k) in &topo.adj[v] {
        if Some(w) == from {
            continue;
        }
        let y_far = subtree_admittance(topo, lines, w, Some(v))?;
        y += branch_contribution(topo, lines, k, y_far)?;
    }
    Ok(y)
}

/// Driving-point admittance at `node`: its own load plus every incident
/// branch's far side carried back, by direct recursion.
pub fn node_admittance(topo: &Topology, node: NodeId, lines: &LineSet) -> Result<Complex64> {
    let v = topo.position(node)?;
    subtree_admittance(topo, lines, v, None)
}

/// Noiseless admittances at every node in O(N) by rerooting.
pub fn all_node_admittances(topo: &Topology, freq: f64) -> Result<MeasurementSet> {
    let lines = topo.lines_at(freq)?;
    let ys = rerooted_admittances(topo, &lines)?;
    let entries = topo.nodes.iter().map(|n| n.id).zip(ys).collect();
    Ok(MeasurementSet {
        freq,
        entries,
        anr_db: f64::INFINITY,
    })
}

fn rerooted_admittances(topo: &Topology, lines: &LineSet) -> Result<Vec<Complex64>> {
    let n = topo.len();
    let (order, parent) = topo.dfs_order(0);

    // down[v]: admittance of v's subtree (away from the root) as seen at v
    let mut down = vec![Complex64::new(0.0, 0.0); n];
    // toward_child[v]: down[v] carried back to v's parent
    let mut toward_child = vec![Complex64::new(0.0, 0.0); n];
    for &v in order.iter().rev() {
        let mut y = topo.nodes[v].load;
        for &(w, _) in &topo.adj[v] {
            if parent[w].map(|(p, _)| p) == Some(v) {
                y += toward_child[w];
            }
        }
        down[v] = y;
        if let Some((_, k)) = parent[v] {
            toward_child[v] = branch_contribution(topo, lines, k, y)?;
        }
    }

    // toward_parent[v]: the rest of the tree seen from v through its parent branch
    let mut toward_parent = vec![Complex64::new(0.0, 0.0); n];
    let mut total = vec![Complex64::new(0.0, 0.0); n];
    for &v in &order {
        let children: Vec<usize> = topo.adj[v]
            .iter()
            .map(|&(w, _)| w)
            .filter(|&w| parent[w].map(|(p, _)| p) == Some(v))
            .collect();
        let base = topo.nodes[v].load
            + if parent[v].is_some() {
                toward_parent[v]
            } else {
                Complex64::new(0.0, 0.0)
            };
        // prefix/suffix sums avoid subtracting a child's term back out
        let m = children.len();
        let mut suffix = vec![Complex64::new(0.0, 0.0); m + 1];
        for i in (0..m).rev() {
            suffix[i] = suffix[i + 1] + toward_child[children[i]];
        }
        let mut prefix = Complex64::new(0.0, 0.0);
        for (i, &c) in children.iter().enumerate() {
            let excluding = base + prefix + suffix[i + 1];
            let (_, k) = parent[c].expect("child has a parent edge");
            toward_parent[c] = branch_contribution(topo, lines, k, excluding)?;
            prefix += toward_child[c];
        }
        total[v] = base + suffix[0];
    }
    Ok(total)
}

/// Per-node network admittances at one frequency.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementSet {
    pub freq: f64,
    pub entries: BTreeMap<NodeId, Complex64>,
    /// `f64::INFINITY` for noiseless sets.
    pub anr_db: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct MeasurementRecord {
    node_id: u32,
    y_re: f64,
    y_im: f64,
    freq_hz: f64,
    anr_db: f64,
}

impl MeasurementSet {
    pub fn get(&self, id: NodeId) -> Result<Complex64> {
        self.entries.get(&id).copied().ok_or(Error::UnknownNode(id))
    }

    pub fn validate_against(&self, topo: &Topology) -> Result<()> {
        if self.entries.len() != topo.len() {
            return Err(Error::Format(format!(
                "{} measurements for {} nodes",
                self.entries.len(),
                topo.len()
            )));
        }
        for id in topo.node_ids() {
            let y = self.get(id)?;
            if !(y.re.is_finite() && y.im.is_finite()) {
                return Err(Error::Format(format!("non-finite measurement at node {id}")));
            }
        }
        Ok(())
    }

    /// CSV with header `node_id,y_re,y_im,freq_hz,anr_db`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        for (id, y) in &self.entries {
            wtr.serialize(MeasurementRecord {
                node_id: id.0,
                y_re: y.re,
                y_im: y.im,
                freq_hz: self.freq,
                anr_db: self.anr_db,
            })?;
        }
        wtr.flush().map_err(|e| Error::Format(e.to_string()))?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(r);
        let mut entries = BTreeMap::new();
        let mut header: Option<(f64, f64)> = None;
        for rec in rdr.deserialize() {
            let rec: MeasurementRecord = rec?;
            match header {
                None => header = Some((rec.freq_hz, rec.anr_db)),
                Some((f, a)) => {
                    let same_anr = a == rec.anr_db || (a.is_nan() && rec.anr_db.is_nan());
                    if f != rec.freq_hz || !same_anr {
                        return Err(Error::Format(
                            "all rows must share freq_hz and anr_db".into(),
                        ));
                    }
                }
            }
            let y = Complex64::new(rec.y_re, rec.y_im);
            if !(y.re.is_finite() && y.im.is_finite()) {
                return Err(Error::Format(format!("non-finite admittance at node {}", rec.node_id)));
            }
            if entries.insert(NodeId(rec.node_id), y).is_some() {
                return Err(Error::Format(format!("duplicate node {}", rec.node_id)));
            }
        }
        let (freq, anr_db) =
            header.ok_or_else(|| Error::Format("empty measurement file".into()))?;
        if !(freq.is_finite() && freq > 0.0) {
            return Err(Error::Format(format!("invalid frequency {freq}")));
        }
        Ok(Self {
            freq,
            entries,
            anr_db,
        })
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct NodeDoc {
    id: u32,
    load_re: f64,
    load_im: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct BranchDoc {
    a: u32,
    b: u32,
    length_m: f64,
    cable: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct TopologyDoc {
    nodes: Vec<NodeDoc>,
    branches: Vec<BranchDoc>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    cables: Vec<CableParams>,
}

#[derive(Debug, Deserialize)]
struct LoadsDoc {
    nodes: Vec<NodeDoc>,
}

/// Reads node loads from the `nodes` array of a topology-style JSON; any
/// other keys, including `branches`, are ignored.
pub fn loads_from_json(text: &str) -> Result<BTreeMap<NodeId, Complex64>> {
    let doc: LoadsDoc = serde_json::from_str(text)?;
    let mut loads = BTreeMap::new();
    for n in doc.nodes {
        let y = Complex64::new(n.load_re, n.load_im);
        if !(y.re.is_finite() && y.im.is_finite()) {
            return Err(Error::Format(format!("non-finite load at node {}", n.id)));
        }
        if loads.insert(NodeId(n.id), y).is_some() {
            return Err(Error::Format(format!("duplicate node {}", n.id)));
        }
    }
    if loads.is_empty() {
        return Err(Error::Format("no nodes in loads file".into()));
    }
    Ok(loads)
}

impl Topology {
    /// Parses the interchange JSON. Cables named by branches but missing
    /// from the optional `cables` table are looked up among the presets.
    pub fn from_json(text: &str) -> Result<Self> {
        let doc: TopologyDoc = serde_json::from_str(text)?;
        let mut cables: BTreeMap<String, CableParams> =
            doc.cables.into_iter().map(|c| (c.name.clone(), c)).collect();
        for preset in cable_presets() {
            let used = doc.branches.iter().any(|b| b.cable == preset.name);
            if used {
                cables.entry(preset.name.clone()).or_insert(preset);
            }
        }
        let nodes = doc
            .nodes
            .into_iter()
            .map(|n| Node {
                id: NodeId(n.id),
                load: Complex64::new(n.load_re, n.load_im),
            })
            .collect();
        let branches = doc
            .branches
            .into_iter()
            .map(|b| Branch {
                a: NodeId(b.a),
                b: NodeId(b.b),
                length_m: b.length_m,
                cable: b.cable,
            })
            .collect();
        Self::new(nodes, branches, cables.into_values())
    }

    /// Serializes to the interchange JSON; cables that differ from the presets are embedded.
    pub fn to_json(&self) -> Result<String> {
        let presets = cable_presets();
        let doc = TopologyDoc {
            nodes: self
                .nodes
                .iter()
                .map(|n| NodeDoc {
                    id: n.id.0,
                    load_re: n.load.re,
                    load_im: n.load.im,
                })
                .collect(),
            branches: self
                .branches
                .iter()
                .map(|b| BranchDoc {
                    a: b.a.0,
                    b: b.b.0,
                    length_m: b.length_m,
                    cable: b.cable.clone(),
                })
                .collect(),
            cables: self
                .cables
                .values()
                .filter(|c| !presets.contains(c))
                .cloned()
                .collect(),
        };
        Ok(serde_json::to_string_pretty(&doc)?)
    }
}
