//! Random tree generation and seeded Monte Carlo campaigns.

use std::io::Write;
use std::time::Instant;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::derive::{compare_topologies, derive_topology, DeriveOptions, LineModel, Status, Threshold, DEFAULT_FLOOR_REL, DEFAULT_KAPPA};
use crate::error::{Error, Result};
use crate::line::{cable_preset, CableParams};
use crate::network::{all_node_admittances, Branch, Node, NodeId, Topology};
use crate::noise::perturb_measurements;

/// Distribution of the random load admittances.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LoadModel {
    /// Uniform range of Re(Y_L) in S; must be strictly positive.
    pub re_range: [f64; 2],
    /// Uniform range of Im(Y_L): in S, or as a multiple of Re(Y_L) when `im_relative`.
    pub im_range: [f64; 2],
    #[serde(default = "default_true")]
    pub im_relative: bool,
}

fn default_true() -> bool {
    true
}

impl Default for LoadModel {
    /// 10 Ω to 600 Ω resistive part, reactive part within ±Re/2.
    fn default() -> Self {
        Self {
            re_range: [1.0 / 600.0, 1.0 / 10.0],
            im_range: [-0.5, 0.5],
            im_relative: true,
        }
    }
}

impl LoadModel {
    pub fn validate(&self) -> Result<()> {
        let [lo, hi] = self.re_range;
        if !(lo > 0.0 && hi >= lo && hi.is_finite()) {
            return Err(Error::Config(format!("load re_range must be positive and ordered, got {:?}", self.re_range)));
        }
        let [ilo, ihi] = self.im_range;
        if !(ilo.is_finite() && ihi.is_finite() && ihi >= ilo) {
            return Err(Error::Config(format!("load im_range must be ordered, got {:?}", self.im_range)));
        }
        Ok(())
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Complex64 {
        let re = uniform(rng, self.re_range);
        let im = uniform(rng, self.im_range);
        Complex64::new(re, if self.im_relative { im * re } else { im })
    }
}

fn uniform<R: Rng + ?Sized>(rng: &mut R, [lo, hi]: [f64; 2]) -> f64 {
    lo + (hi - lo) * rng.random::<f64>()
}

/// Loads within this relative distance of Y_C are redrawn.
pub const MATCHED_LOAD_TOL: f64 = 0.01;

/// Shortest generated branch as a fraction of the longest allowed one.
pub const MIN_BRANCH_FRACTION: f64 = 0.05;

/// Random tree by uniform attachment: node `k` hangs from a uniformly chosen
/// earlier node over a length uniform in `[0.05 max_branch, max_branch]`.
pub fn generate_random_tree<R: Rng + ?Sized>(
    n: usize,
    max_branch: f64,
    load_model: &LoadModel,
    cable: &CableParams,
    freq: f64,
    rng: &mut R,
) -> Result<Topology> {
    if n == 0 {
        return Err(Error::Config("a tree needs at least one node".into()));
    }
    if !(max_branch > 0.0 && max_branch.is_finite()) {
        return Err(Error::Config(format!("max branch must be positive, got {max_branch}")));
    }
    load_model.validate()?;
    let yc = cable.secondary(freq)?.yc;
    let mut nodes = Vec::with_capacity(n);
    let mut branches = Vec::with_capacity(n.saturating_sub(1));
    for k in 0..n {
        let load = loop {
            let y = load_model.sample(rng);
            if (y - yc).norm() > MATCHED_LOAD_TOL * yc.norm() {
                break y;
            }
        };
        nodes.push(Node {
            id: NodeId(k as u32),
            load,
        });
        if k > 0 {
            let parent = rng.random_range(0..k);
            let length_m = uniform(rng, [MIN_BRANCH_FRACTION * max_branch, max_branch]);
            branches.push(Branch {
                a: NodeId(parent as u32),
                b: NodeId(k as u32),
                length_m,
                cable: cable.name.clone(),
            });
        }
    }
    Topology::new(nodes, branches, [cable.clone()])
}

/// Campaign description; JSON field names match the struct.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub node_counts: Vec<usize>,
    /// `null` stands for a noiseless cell.
    #[serde(with = "anr_list")]
    pub anr_sweep_db: Vec<f64>,
    pub freqs_hz: Vec<f64>,
    pub max_branch_m: f64,
    pub trials_per_cell: usize,
    pub seed: u64,
    pub cable_preset: String,
    #[serde(default)]
    pub load_model: LoadModel,
    /// Threshold scale; `None` uses the shipped default.
    #[serde(default)]
    pub kappa: Option<f64>,
    /// Fixed threshold in meters, overriding `kappa`.
    #[serde(default)]
    pub threshold_m: Option<f64>,
    /// Per-pair sensitivity threshold at this many standard deviations, overriding `kappa`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sensitivity_z: Option<f64>,
    /// Record wall-clock time per trial. Off by default so reruns are byte-identical.
    #[serde(default)]
    pub timing: bool,
}

mod anr_list {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &[f64], s: S) -> Result<S::Ok, S::Error> {
        let opt: Vec<Option<f64>> = v.iter().map(|&a| a.is_finite().then_some(a)).collect();
        serde::Serialize::serialize(&opt, s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
        let opt: Vec<Option<f64>> = Vec::deserialize(d)?;
        Ok(opt.into_iter().map(|a| a.unwrap_or(f64::INFINITY)).collect())
    }
}

impl ExperimentConfig {
    /// The 10-node, 10 kHz, 1.4 km cell family.
    pub fn fig6(seed: u64, trials: usize) -> Self {
        Self {
            node_counts: vec![10],
            anr_sweep_db: vec![60.0, 70.0, 80.0, 90.0, 100.0, 110.0, 120.0],
            freqs_hz: vec![1e4],
            max_branch_m: 1400.0,
            trials_per_cell: trials,
            seed,
            cable_preset: "lv-distribution".into(),
            load_model: LoadModel::default(),
            kappa: None,
            threshold_m: None,
            sensitivity_z: None,
            timing: false,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn cable(&self) -> Result<CableParams> {
        cable_preset(&self.cable_preset).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn threshold(&self) -> Threshold {
        match (self.threshold_m, self.sensitivity_z, self.kappa) {
            (Some(t), _, _) => Threshold::Fixed(t),
            (None, Some(z), _) => Threshold::Sensitivity {
                z,
                floor_rel: DEFAULT_FLOOR_REL,
            },
            (None, None, Some(k)) => Threshold::with_kappa(k),
            (None, None, None) => Threshold::with_kappa(DEFAULT_KAPPA),
        }
    }

    /// Rejects empty sweeps and any branch bound above a quarter wavelength.
    pub fn validate(&self) -> Result<()> {
        if self.node_counts.is_empty() || self.anr_sweep_db.is_empty() || self.freqs_hz.is_empty() {
            return Err(Error::Config("node_counts, anr_sweep_db and freqs_hz must be non-empty".into()));
        }
        if self.node_counts.contains(&0) {
            return Err(Error::Config("node counts must be >= 1".into()));
        }
        if self.anr_sweep_db.iter().any(|a| a.is_nan() || *a == f64::NEG_INFINITY) {
            return Err(Error::Config("ANR values must be numbers or null".into()));
        }
        if !(self.max_branch_m > 0.0 && self.max_branch_m.is_finite()) {
            return Err(Error::Config("max_branch_m must be positive".into()));
        }
        if let Some(k) = self.kappa {
            if !(k > 0.0 && k.is_finite()) {
                return Err(Error::Config("kappa must be positive".into()));
            }
        }
        if let Some(z) = self.sensitivity_z {
            if !(z > 0.0 && z.is_finite()) {
                return Err(Error::Config("sensitivity_z must be positive".into()));
            }
        }
        if let Some(t) = self.threshold_m {
            if !(t > 0.0 && t.is_finite()) {
                return Err(Error::Config("threshold_m must be positive".into()));
            }
        }
        self.load_model.validate()?;
        let cable = self.cable()?;
        for &f in &self.freqs_hz {
            let sec = cable.secondary(f).map_err(|e| Error::Config(e.to_string()))?;
            if self.max_branch_m > sec.quarter_wave() {
                return Err(Error::Config(format!(
                    "max_branch_m = {} m exceeds lambda/4 = {:.1} m at {} Hz",
                    self.max_branch_m,
                    sec.quarter_wave(),
                    f
                )));
            }
        }
        Ok(())
    }

    /// `(n_nodes, freq_hz, anr_db)` in campaign order.
    pub fn cells(&self) -> Vec<(usize, f64, f64)> {
        let mut cells = Vec::new();
        for &n in &self.node_counts {
            for &f in &self.freqs_hz {
                for &a in &self.anr_sweep_db {
                    cells.push((n, f, a));
                }
            }
        }
        cells
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRow {
    pub n_nodes: usize,
    pub anr_db: f64,
    pub freq_hz: f64,
    pub trial_seed: u64,
    pub status: String,
    pub exact_match: bool,
    pub branch_recall: f64,
    pub branch_precision: f64,
    pub max_length_error_m: f64,
    pub runtime_ms: f64,
}

/// SplitMix64 finalizer.
fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of the tree drawn for `trial` at `n_nodes`. Every ANR and frequency
/// cell with the same node count sees the same trees.
pub fn trial_seed(master: u64, n_nodes: usize, trial: usize) -> u64 {
    mix64(mix64(mix64(master) ^ n_nodes as u64) ^ trial as u64)
}

fn noise_seed(trial_seed: u64, freq: f64, anr_db: f64) -> u64 {
    mix64(mix64(trial_seed ^ freq.to_bits()) ^ anr_db.to_bits())
}

/// One trial: tree, forward model, noise, derivation, comparison.
pub fn run_trial(
    n: usize,
    freq: f64,
    anr_db: f64,
    seed: u64,
    cfg: &ExperimentConfig,
    cable: &CableParams,
    threshold: Threshold,
) -> ExperimentRow {
    let start = Instant::now();
    let mut row = ExperimentRow {
        n_nodes: n,
        anr_db,
        freq_hz: freq,
        trial_seed: seed,
        status: "error".into(),
        exact_match: false,
        branch_recall: 0.0,
        branch_precision: 0.0,
        max_length_error_m: 0.0,
        runtime_ms: 0.0,
    };
    let outcome = (|| -> Result<_> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let topo = generate_random_tree(n, cfg.max_branch_m, &cfg.load_model, cable, freq, &mut rng)?;
        let clean = all_node_admittances(&topo, freq)?;
        let mut noise_rng = ChaCha8Rng::seed_from_u64(noise_seed(seed, freq, anr_db));
        let noisy = perturb_measurements(&clean, anr_db, &mut noise_rng);
        let lines = LineModel::uniform(cable.name.clone(), cable.secondary(freq)?);
        let opts = DeriveOptions {
            threshold,
            record_pairs: false,
            ..DeriveOptions::default()
        };
        let derived = derive_topology(&noisy, &topo.loads(), &lines, anr_db, &opts)?;
        Ok((compare_topologies(&topo, &derived), derived.status))
    })();
    if let Ok((m, status)) = outcome {
        row.status = match status {
            Status::Complete => "complete",
            Status::Interrupted => "interrupted",
        }
        .into();
        row.exact_match = m.exact_match;
        row.branch_recall = m.branch_recall;
        row.branch_precision = m.branch_precision;
        row.max_length_error_m = m.max_length_error;
    }
    if cfg.timing {
        row.runtime_ms = start.elapsed().as_secs_f64() * 1e3;
    }
    row
}

/// Runs every (cell, trial) on the rayon pool; rows come back in campaign order.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<ExperimentRow>> {
    cfg.validate()?;
    let cable = cfg.cable()?;
    let threshold = cfg.threshold();
    let jobs: Vec<(usize, f64, f64, u64)> = cfg
        .cells()
        .into_iter()
        .flat_map(|(n, f, a)| {
            (0..cfg.trials_per_cell).map(move |t| (n, f, a, trial_seed(cfg.seed, n, t)))
        })
        .collect();
    Ok(jobs
        .par_iter()
        .map(|&(n, f, a, s)| run_trial(n, f, a, s, cfg, &cable, threshold))
        .collect())
}

pub const RESULTS_HEADER: &str =
    "n_nodes,anr_db,freq_hz,trial_seed,status,exact_match,branch_recall,branch_precision,max_length_error_m,runtime_ms";

pub fn write_rows_csv<W: Write>(rows: &[ExperimentRow], w: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    for r in rows {
        wtr.serialize(r)?;
    }
    wtr.flush().map_err(|e| Error::Format(e.to_string()))?;
    Ok(())
}

pub fn read_rows_csv<R: std::io::Read>(r: R) -> Result<Vec<ExperimentRow>> {
    let mut rdr = csv::Reader::from_reader(r);
    rdr.deserialize().map(|r| r.map_err(Error::from)).collect()
}

/// Aggregates over one `(n_nodes, freq_hz, anr_db)` cell.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellSummary {
    pub n_nodes: usize,
    pub freq_hz: f64,
    pub anr_db: f64,
    pub trials: usize,
    pub exact_match_rate: f64,
    /// Mean recall over trials without an exact match; NaN when there are none.
    pub partial_recall: f64,
    pub partial_trials: usize,
}

pub fn summarize(rows: &[ExperimentRow]) -> Vec<CellSummary> {
    let mut out: Vec<CellSummary> = Vec::new();
    let mut acc: Vec<(f64, f64)> = Vec::new();
    for r in rows {
        let pos = out.iter().position(|c| {
            c.n_nodes == r.n_nodes && c.freq_hz == r.freq_hz && c.anr_db == r.anr_db
        });
        let i = pos.unwrap_or_else(|| {
            out.push(CellSummary {
                n_nodes: r.n_nodes,
                freq_hz: r.freq_hz,
                anr_db: r.anr_db,
                trials: 0,
                exact_match_rate: 0.0,
                partial_recall: f64::NAN,
                partial_trials: 0,
            });
            acc.push((0.0, 0.0));
            out.len() - 1
        });
        let c = &mut out[i];
        c.trials += 1;
        if r.exact_match {
            acc[i].0 += 1.0;
        } else {
            c.partial_trials += 1;
            acc[i].1 += r.branch_recall;
        }
    }
    for (c, (hits, recall)) in out.iter_mut().zip(acc) {
        c.exact_match_rate = hits / c.trials as f64;
        if c.partial_trials > 0 {
            c.partial_recall = recall / c.partial_trials as f64;
        }
    }
    out
}

pub fn write_summary_csv<W: Write>(cells: &[CellSummary], w: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    for c in cells {
        wtr.serialize(c)?;
    }
    wtr.flush().map_err(|e| Error::Format(e.to_string()))?;
    Ok(())
}

/// Salt separating calibration trees from evaluation trees.
pub const CALIBRATION_SALT: u64 = 0xCA11_B8A7_E5EE_D5A1;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CalibrationPoint {
    pub kappa: f64,
    pub exact_match_rate: f64,
}

/// Grid search for the threshold scale that maximizes the mean exact-match
/// rate over the config's finite-ANR cells, on trees disjoint from the
/// evaluation seeds. Ties go to the smaller kappa.
pub fn calibrate_kappa(cfg: &ExperimentConfig, grid: &[f64]) -> Result<(f64, Vec<CalibrationPoint>)> {
    if grid.is_empty() {
        return Err(Error::Config("empty kappa grid".into()));
    }
    let mut cal = cfg.clone();
    cal.seed = cfg.seed ^ CALIBRATION_SALT;
    cal.threshold_m = None;
    cal.sensitivity_z = None;
    cal.timing = false;
    cal.anr_sweep_db.retain(|a| a.is_finite());
    if cal.anr_sweep_db.is_empty() {
        return Err(Error::Config("calibration needs at least one finite ANR".into()));
    }
    let mut points = Vec::with_capacity(grid.len());
    for &kappa in grid {
        cal.kappa = Some(kappa);
        let rows = run_experiment(&cal)?;
        let rate = rows.iter().filter(|r| r.exact_match).count() as f64 / rows.len() as f64;
        points.push(CalibrationPoint {
            kappa,
            exact_match_rate: rate,
        });
    }
    let best = points
        .iter()
        .fold(None::<&CalibrationPoint>, |best, p| match best {
            Some(b) if b.exact_match_rate >= p.exact_match_rate => Some(b),
            _ => Some(p),
        })
        .expect("non-empty grid");
    Ok((best.kappa, points))
}

/// Log-spaced grid from `lo` to `hi` inclusive.
pub fn log_grid(lo: f64, hi: f64, steps: usize) -> Vec<f64> {
    if steps <= 1 {
        return vec![lo];
    }
    let (a, b) = (lo.ln(), hi.ln());
    (0..steps)
        .map(|i| (a + (b - a) * i as f64 / (steps - 1) as f64).exp())
        .collect()
}
