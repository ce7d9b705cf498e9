//! Browser demo: three operations over the `wiretopo` core, exported with
//! wasm-bindgen. The plain functions are what the tests exercise; the
//! `#[wasm_bindgen]` wrappers only convert errors.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;
use wasm_bindgen::prelude::*;
use wiretopo::derive::{compare_topologies, derive_topology, DeriveOptions, LineModel, Threshold};
use wiretopo::experiment::{generate_random_tree, LoadModel};
use wiretopo::line::{cable_preset, carry_back, reflection_coefficient};
use wiretopo::network::{all_node_admittances, Branch, Node, NodeId, Topology};
use wiretopo::noise::perturb_measurements;
use wiretopo::pair::solve_pair_distance;
use wiretopo::{Complex64, Error, Result};

pub const MAX_BRANCH_M: f64 = 1400.0;
const NOISE_SALT: u64 = 0x9E37_79B9_7F4A_7C15;

/// Load `y` carried back over `0..=max_d` in `steps` intervals, as flattened
/// `[d, rho_re, rho_im, ...]` with rho the reflection coefficient against Y_C.
pub fn locus(cable: &str, freq: f64, y: Complex64, max_d: f64, steps: usize) -> Result<Vec<f64>> {
    if steps == 0 || !(max_d > 0.0 && max_d.is_finite()) {
        return Err(Error::InvalidParameter("need steps > 0 and a positive length".into()));
    }
    let sec = cable_preset(cable)?.secondary(freq)?;
    let mut out = Vec::with_capacity(3 * (steps + 1));
    for k in 0..=steps {
        let d = max_d * k as f64 / steps as f64;
        let rho = reflection_coefficient(carry_back(y, &sec, d)?, sec.yc)?;
        out.extend([d, rho.re, rho.im]);
    }
    Ok(out)
}

pub fn wavelength(cable: &str, freq: f64) -> Result<f64> {
    Ok(cable_preset(cable)?.secondary(freq)?.wavelength)
}

/// Two nodes joined by `d` meters. Each grid cell replaces the neighbor
/// admittance by `y2 * (1 + u + j v)`, `u, v` in `[-span, span]`, and holds
/// `log10` of the smallest physical `|Im(d)|` (NaN when no physical root).
/// Row-major, `v` along rows. Only the true `y2` (center) gives a real length.
pub fn landscape(
    cable: &str,
    freq: f64,
    d: f64,
    y_l1: Complex64,
    y_l2: Complex64,
    span: f64,
    steps: usize,
) -> Result<Vec<f64>> {
    if steps < 2 || !(span > 0.0 && span.is_finite()) {
        return Err(Error::InvalidParameter("need steps >= 2 and a positive span".into()));
    }
    let params = cable_preset(cable)?;
    let sec = params.secondary(freq)?;
    let topo = Topology::new(
        vec![Node { id: NodeId(1), load: y_l1 }, Node { id: NodeId(2), load: y_l2 }],
        vec![Branch {
            a: NodeId(1),
            b: NodeId(2),
            length_m: d,
            cable: params.name.clone(),
        }],
        [params],
    )?;
    let meas = all_node_admittances(&topo, freq)?;
    let y1 = meas.get(NodeId(1))?;
    let y2 = meas.get(NodeId(2))?;
    let mut out = Vec::with_capacity(steps * steps);
    for row in 0..steps {
        let v = span * (2.0 * row as f64 / (steps - 1) as f64 - 1.0);
        for col in 0..steps {
            let u = span * (2.0 * col as f64 / (steps - 1) as f64 - 1.0);
            let y2_trial = y2 * Complex64::new(1.0 + u, v);
            let im = solve_pair_distance(y1, y2_trial, y_l1, &sec)
                .ok()
                .and_then(|p| p.best())
                .map_or(f64::NAN, |r| r.d.im.abs().max(1e-300).log10());
            out.push(im);
        }
    }
    Ok(out)
}

/// Random tree, noisy measurements, derivation. Returns JSON with the true
/// and derived branch lists and the comparison metrics.
pub fn generate_and_derive(n: usize, seed: u64, freq: f64, anr_db: f64, kappa: f64) -> Result<String> {
    if !(kappa > 0.0 && kappa.is_finite()) {
        return Err(Error::Config(format!("kappa must be positive, got {kappa}")));
    }
    let cable = cable_preset("lv-distribution")?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let topo = generate_random_tree(n, MAX_BRANCH_M, &LoadModel::default(), &cable, freq, &mut rng)?;
    let clean = all_node_admittances(&topo, freq)?;
    let mut noise_rng = ChaCha8Rng::seed_from_u64(seed ^ NOISE_SALT);
    let noisy = perturb_measurements(&clean, anr_db, &mut noise_rng);
    let lines = LineModel::uniform(cable.name.clone(), cable.secondary(freq)?);
    let opts = DeriveOptions {
        threshold: Threshold::with_kappa(kappa),
        record_pairs: false,
        ..DeriveOptions::default()
    };
    let derived = derive_topology(&noisy, &topo.loads(), &lines, anr_db, &opts)?;
    let m = compare_topologies(&topo, &derived);
    let truth: Vec<_> = topo
        .branches()
        .iter()
        .map(|b| json!([b.a.0, b.b.0, b.length_m]))
        .collect();
    let branches: Vec<_> = derived
        .branches
        .iter()
        .map(|b| json!([b.leaf.0, b.neighbor.0, b.length_m, b.round]))
        .collect();
    let anr = if anr_db.is_finite() { json!(anr_db) } else { json!(null) };
    Ok(json!({
        "nodes": n,
        "anr_db": anr,
        "threshold_m": derived.threshold_m,
        "truth": truth,
        "derived": branches,
        "complete": derived.is_complete(),
        "rounds": derived.rounds,
        "exact_match": m.exact_match,
        "recall": m.branch_recall,
        "precision": m.branch_precision,
    })
    .to_string())
}

fn js(e: Error) -> JsError {
    JsError::new(&e.to_string())
}

#[wasm_bindgen(js_name = carryBackLocus)]
pub fn carry_back_locus(
    cable: &str,
    freq: f64,
    y_re: f64,
    y_im: f64,
    max_d: f64,
    steps: usize,
) -> std::result::Result<Vec<f64>, JsError> {
    locus(cable, freq, Complex64::new(y_re, y_im), max_d, steps).map_err(js)
}

#[wasm_bindgen(js_name = lineWavelength)]
pub fn line_wavelength(cable: &str, freq: f64) -> std::result::Result<f64, JsError> {
    wavelength(cable, freq).map_err(js)
}

#[wasm_bindgen(js_name = imaginaryLandscape)]
#[allow(clippy::too_many_arguments)]
pub fn imaginary_landscape(
    cable: &str,
    freq: f64,
    d: f64,
    yl1_re: f64,
    yl1_im: f64,
    yl2_re: f64,
    yl2_im: f64,
    span: f64,
    steps: usize,
) -> std::result::Result<Vec<f64>, JsError> {
    landscape(
        cable,
        freq,
        d,
        Complex64::new(yl1_re, yl1_im),
        Complex64::new(yl2_re, yl2_im),
        span,
        steps,
    )
    .map_err(js)
}

/// `anr_db` of `Infinity` runs noiseless.
#[wasm_bindgen(js_name = deriveRandomTree)]
pub fn derive_random_tree(
    n: usize,
    seed: u32,
    freq: f64,
    anr_db: f64,
    kappa: f64,
) -> std::result::Result<String, JsError> {
    generate_and_derive(n, seed as u64, freq, anr_db, kappa).map_err(js)
}
