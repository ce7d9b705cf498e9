use std::collections::BTreeMap;
use std::fs::File;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use wiretopo::derive::{derive_topology, DeriveOptions, LineModel, NamedLine, Threshold, DEFAULT_FLOOR_REL};
use wiretopo::experiment::{
    calibrate_kappa, generate_random_tree, log_grid, run_experiment, summarize, write_rows_csv,
    write_summary_csv, ExperimentConfig, LoadModel,
};
use wiretopo::line::{cable_preset, cables_from_json, CableParams};
use wiretopo::network::{all_node_admittances, loads_from_json, MeasurementSet, NodeId, Topology};
use wiretopo::noise::perturb_measurements;
use wiretopo::{Error, Result};

/// Wired network topology derivation from per-node admittance measurements.
#[derive(Parser)]
#[command(name = "wiretopo", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Emit a random tree as topology JSON.
    Generate(GenerateArgs),
    /// Forward-simulate a topology into a measurement CSV.
    Simulate(SimulateArgs),
    /// Derive the topology from measurements and loads.
    Derive(DeriveArgs),
    /// Run a Monte Carlo campaign from a config file.
    Experiment(ExperimentArgs),
    /// Sweep the threshold scale and print the recommended value.
    CalibrateThreshold(CalibrateArgs),
}

#[derive(Args)]
struct CableArgs {
    /// Cable name: a preset or an entry of --cables.
    #[arg(long, default_value = "lv-distribution")]
    cable: String,
    /// JSON file with one cable object or an array of them.
    #[arg(long)]
    cables: Option<PathBuf>,
}

impl CableArgs {
    fn table(&self) -> Result<Vec<CableParams>> {
        match &self.cables {
            Some(p) => cables_from_json(&read_text(p)?),
            None => Ok(Vec::new()),
        }
    }

    fn resolve(&self, name: &str) -> Result<CableParams> {
        match self.table()?.into_iter().find(|c| c.name == name) {
            Some(c) => Ok(c),
            None => cable_preset(name),
        }
    }
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long)]
    nodes: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Longest branch in meters.
    #[arg(long, default_value_t = 1400.0)]
    max_branch: f64,
    /// Frequency used to reject near-matched loads (Hz).
    #[arg(long, default_value_t = 1e4)]
    freq: f64,
    #[command(flatten)]
    cable: CableArgs,
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct SimulateArgs {
    /// Topology JSON.
    #[arg(long)]
    topology: PathBuf,
    #[arg(long)]
    freq: f64,
    /// Admittance-to-noise ratio; omit or pass `inf` for noiseless output.
    #[arg(long, default_value = "inf")]
    anr_db: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct DeriveArgs {
    /// Measurement CSV.
    #[arg(long)]
    measurements: PathBuf,
    /// JSON whose `nodes` array carries the loads; a topology file works.
    #[arg(long)]
    loads: PathBuf,
    #[command(flatten)]
    cable: CableArgs,
    /// Cable of the branch a node hangs from, as ID=NAME; repeatable.
    #[arg(long = "node-cable", value_parser = parse_node_cable)]
    node_cables: Vec<(NodeId, String)>,
    /// Overrides the ANR recorded in the measurement file.
    #[arg(long)]
    anr_db: Option<f64>,
    /// Fixed threshold in meters.
    #[arg(long, conflicts_with_all = ["kappa", "sensitivity_z"])]
    threshold: Option<f64>,
    /// Scale of the ANR-driven threshold.
    #[arg(long, conflicts_with = "sensitivity_z")]
    kappa: Option<f64>,
    /// Use the per-pair sensitivity threshold at this many standard deviations.
    #[arg(long)]
    sensitivity_z: Option<f64>,
    #[arg(short, long)]
    output: Option<PathBuf>,
    /// Write every tested pair as CSV.
    #[arg(long)]
    diagnostics: Option<PathBuf>,
}

#[derive(Args)]
struct ExperimentArgs {
    #[arg(long)]
    config: PathBuf,
    /// Results CSV; stdout when omitted.
    #[arg(short, long)]
    output: Option<PathBuf>,
    /// Per-cell summary CSV.
    #[arg(long)]
    summary: Option<PathBuf>,
}

#[derive(Args)]
struct CalibrateArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long, default_value_t = 0.1)]
    kappa_min: f64,
    #[arg(long, default_value_t = 10.0)]
    kappa_max: f64,
    #[arg(long, default_value_t = 21)]
    steps: usize,
    /// Trials per cell on the calibration trees.
    #[arg(long, default_value_t = 100)]
    trials: usize,
}

fn parse_node_cable(s: &str) -> std::result::Result<(NodeId, String), String> {
    let (id, name) = s.split_once('=').ok_or("expected ID=NAME")?;
    let id: u32 = id.trim().parse().map_err(|e| format!("bad node id: {e}"))?;
    Ok((NodeId(id), name.trim().to_string()))
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

fn open_out(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?,
        )),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn write_text(path: Option<&Path>, text: &str) -> Result<()> {
    let mut w = open_out(path)?;
    writeln!(w, "{text}").and_then(|_| w.flush()).map_err(|e| Error::Config(e.to_string()))
}

fn generate(args: &GenerateArgs) -> Result<()> {
    let cable = args.cable.resolve(&args.cable.cable)?;
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let topo = generate_random_tree(
        args.nodes,
        args.max_branch,
        &LoadModel::default(),
        &cable,
        args.freq,
        &mut rng,
    )?;
    write_text(args.output.as_deref(), &topo.to_json()?)
}

fn simulate(args: &SimulateArgs) -> Result<()> {
    let topo = Topology::from_json(&read_text(&args.topology)?)?;
    let clean = all_node_admittances(&topo, args.freq)?;
    let meas = if args.anr_db.is_infinite() {
        clean
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
        perturb_measurements(&clean, args.anr_db, &mut rng)
    };
    let mut w = open_out(args.output.as_deref())?;
    meas.write_csv(&mut w)?;
    w.flush().map_err(|e| Error::Config(e.to_string()))
}

/// Returns whether the derivation completed.
fn derive(args: &DeriveArgs) -> Result<bool> {
    let file = File::open(&args.measurements)
        .map_err(|e| Error::Config(format!("{}: {e}", args.measurements.display())))?;
    let meas = MeasurementSet::read_csv(BufReader::new(file))?;
    let loads = loads_from_json(&read_text(&args.loads)?)?;
    let table = args.cable.table()?;
    let lookup = |name: &str| -> Result<CableParams> {
        match table.iter().find(|c| c.name == name) {
            Some(c) => Ok(c.clone()),
            None => cable_preset(name),
        }
    };
    let named = |name: &str| -> Result<(NamedLine, CableParams)> {
        let cable = lookup(name)?;
        let sec = cable.secondary(meas.freq)?;
        Ok((
            NamedLine {
                name: cable.name.clone(),
                sec,
            },
            cable,
        ))
    };
    let (default, default_cable) = named(&args.cable.cable)?;
    let mut used = vec![default_cable];
    let mut per_node = BTreeMap::new();
    for (id, name) in &args.node_cables {
        if !loads.contains_key(id) {
            return Err(Error::UnknownNode(*id));
        }
        let (line, cable) = named(name)?;
        per_node.insert(*id, line);
        used.push(cable);
    }
    let lines = LineModel { default, per_node };

    let threshold = match (args.threshold, args.sensitivity_z, args.kappa) {
        (Some(t), _, _) => Threshold::Fixed(t),
        (None, Some(z), _) => Threshold::Sensitivity {
            z,
            floor_rel: DEFAULT_FLOOR_REL,
        },
        (None, None, Some(k)) => Threshold::with_kappa(k),
        (None, None, None) => Threshold::default(),
    };
    for (flag, v) in [
        ("--threshold", args.threshold),
        ("--kappa", args.kappa),
        ("--sensitivity-z", args.sensitivity_z),
    ] {
        if let Some(v) = v {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{flag} must be positive, got {v}")));
            }
        }
    }
    let anr_db = args.anr_db.unwrap_or(meas.anr_db);
    let opts = DeriveOptions {
        threshold,
        record_pairs: args.diagnostics.is_some(),
        ..DeriveOptions::default()
    };
    let result = derive_topology(&meas, &loads, &lines, anr_db, &opts)?;
    write_text(args.output.as_deref(), &result.to_json(&used)?)?;
    if let Some(p) = &args.diagnostics {
        let mut w = open_out(Some(p))?;
        result.write_diagnostics_csv(&mut w)?;
        w.flush().map_err(|e| Error::Config(e.to_string()))?;
    }
    if let Some(reason) = result.interrupt {
        eprintln!(
            "derivation interrupted after {} rounds ({reason:?}); {} of {} branches found",
            result.rounds,
            result.branches.len(),
            loads.len().saturating_sub(1)
        );
    }
    Ok(result.is_complete())
}

fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let cfg = ExperimentConfig::from_json(&read_text(path)?)?;
    cfg.validate()?;
    Ok(cfg)
}

fn experiment(args: &ExperimentArgs) -> Result<()> {
    let cfg = load_config(&args.config)?;
    let rows = run_experiment(&cfg)?;
    let mut w = open_out(args.output.as_deref())?;
    write_rows_csv(&rows, &mut w)?;
    w.flush().map_err(|e| Error::Config(e.to_string()))?;
    if let Some(p) = &args.summary {
        let mut w = open_out(Some(p))?;
        write_summary_csv(&summarize(&rows), &mut w)?;
        w.flush().map_err(|e| Error::Config(e.to_string()))?;
    }
    Ok(())
}

fn calibrate(args: &CalibrateArgs) -> Result<()> {
    let mut cfg = load_config(&args.config)?;
    if !(args.kappa_min > 0.0 && args.kappa_max >= args.kappa_min) || args.steps == 0 {
        return Err(Error::Config("need 0 < kappa-min <= kappa-max and steps >= 1".into()));
    }
    cfg.trials_per_cell = args.trials;
    let grid = log_grid(args.kappa_min, args.kappa_max, args.steps);
    let (kappa, points) = calibrate_kappa(&cfg, &grid)?;
    let doc = serde_json::json!({ "kappa": kappa, "points": points });
    write_text(None, &serde_json::to_string_pretty(&doc)?)
}

fn main() -> ExitCode {
    // usage errors exit 1; clap's own code 2 is reserved for interrupted derivations
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let outcome = match &cli.command {
        Command::Generate(a) => generate(a).map(|_| true),
        Command::Simulate(a) => simulate(a).map(|_| true),
        Command::Derive(a) => derive(a),
        Command::Experiment(a) => experiment(a).map(|_| true),
        Command::CalibrateThreshold(a) => calibrate(a).map(|_| true),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
