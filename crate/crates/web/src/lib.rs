//! WebAssembly bindings for the browser demo in `www/`.
//!
//! Every export takes plain numbers and strings and returns a JSON document,
//! so the page needs no generated TypeScript glue.

use std::str::FromStr;

use cutagg::aggmap::{build_agglomeration, TimeMode};
use cutagg::algebra::{agglomerate_matrix, assemble_injection, species_mass_matrix};
use cutagg::cli::{check_speed_limit, Scenario, ScenarioConfig, ScenarioSetup};
use cutagg::cutcell::{CutCellMesh, Species};
use cutagg::diagnostics::{collect_step_metrics, StepMetrics, DEFAULT_DENSE_LIMIT};
use serde::Serialize;
use wasm_bindgen::prelude::*;

const DEMO_DEPTH: u32 = 5;

#[derive(Serialize)]
struct PairView {
    source: usize,
    target: usize,
    root: usize,
    level: u32,
    kind: String,
}

#[derive(Serialize)]
struct SpeciesView {
    species: String,
    pairs: Vec<PairView>,
    sources: Vec<usize>,
    metrics: StepMetrics,
}

#[derive(Serialize)]
struct Snapshot {
    nx: usize,
    ny: usize,
    origin: [f64; 2],
    spacing: [f64; 2],
    t: f64,
    frac_a: Vec<f64>,
    cut: Vec<bool>,
    owner: Vec<usize>,
    species: Vec<SpeciesView>,
}

#[derive(Serialize)]
struct SweepRow {
    alpha: f64,
    pct_agg: [f64; 2],
    max_kappa_s: [Option<f64>; 2],
    inf_count: [usize; 2],
}

fn setup(scenario: &str, n: usize, steps: usize, degree: usize, ranks: usize, mode: &str) -> Result<ScenarioSetup, String> {
    let scenario = Scenario::from_str(scenario).map_err(|e| e.to_string())?;
    if scenario.default_dim() != 2 {
        return Err(format!("{scenario} is three-dimensional; the demo draws 2D scenarios only"));
    }
    let res = match scenario {
        Scenario::CollidingSpheres => vec![2 * n, n],
        _ => vec![n, n],
    };
    let mut cfg = ScenarioConfig::new(scenario, &res);
    cfg.steps = steps;
    cfg.degree = degree;
    cfg.ranks = ranks;
    cfg.depth = DEMO_DEPTH;
    cfg.mode = TimeMode::from_str(mode).map_err(|e| e.to_string())?;
    ScenarioSetup::new(&cfg).map_err(|e| e.to_string())
}

fn meshes(s: &ScenarioSetup, step: usize) -> Result<(CutCellMesh, CutCellMesh), String> {
    if step == 0 || step > s.config.steps {
        return Err(format!("step must lie in 1..={}", s.config.steps));
    }
    let prev = s.mesh_at(s.config.time(step - 1)).map_err(|e| e.to_string())?;
    let next = s.mesh_at(s.config.time(step)).map_err(|e| e.to_string())?;
    Ok((prev, next))
}

fn species_view(
    s: &ScenarioSetup,
    mesh: &CutCellMesh,
    map: &cutagg::aggmap::AggMap,
    sp: Species,
    step: usize,
    alpha: f64,
) -> Result<(Vec<PairView>, Vec<usize>, StepMetrics), String> {
    let m = map.species(sp);
    let err = |e: cutagg::Error| e.to_string();
    let mass = species_mass_matrix(mesh, &s.basis, m).map_err(err)?;
    let q = assemble_injection(m, &s.basis, &s.grid).map_err(err)?;
    let agg = agglomerate_matrix(&mass, &q).map_err(err)?;
    let metrics = collect_step_metrics(step, alpha, s.config.degree, mesh, m, &agg, DEFAULT_DENSE_LIMIT).map_err(err)?;
    let pairs = m
        .pairs
        .iter()
        .map(|p| PairView {
            source: p.source.0,
            target: p.target.0,
            root: m.final_target(p.source).unwrap_or(p.target).0,
            level: p.level,
            kind: format!("{:?}", p.kind).to_lowercase(),
        })
        .collect();
    let sources = m.universe.iter().filter(|c| m.sources.contains(**c)).map(|c| c.0).collect();
    Ok((pairs, sources, metrics))
}

/// Cut-cell mesh and agglomeration forests at one time step.
pub fn snapshot_json(
    scenario: &str,
    n: usize,
    steps: usize,
    step: usize,
    alpha: f64,
    ranks: usize,
    mode: &str,
) -> Result<String, String> {
    let s = setup(scenario, n, steps, 1, ranks, mode)?;
    let (prev, next) = meshes(&s, step)?;
    check_speed_limit(&prev, &next, step).map_err(|e| e.to_string())?;
    let map = build_agglomeration(&prev, &next, alpha, s.config.mode, &mut s.network()).map_err(|e| e.to_string())?;
    let mut species = Vec::new();
    for sp in Species::ALL {
        let (pairs, sources, metrics) = species_view(&s, &next, &map, sp, step, alpha)?;
        species.push(SpeciesView { species: format!("{sp:?}"), pairs, sources, metrics });
    }
    let cells = s.grid.cells_per_axis();
    let snap = Snapshot {
        nx: cells[0],
        ny: cells[1],
        origin: [s.grid.origin()[0], s.grid.origin()[1]],
        spacing: [s.grid.spacing()[0], s.grid.spacing()[1]],
        t: s.config.time(step),
        frac_a: s.grid.cells().map(|c| next.fraction(c, Species::A)).collect(),
        cut: s.grid.cells().map(|c| next.is_cut(c)).collect(),
        owner: s.grid.cells().map(|c| s.partition.owner_of(c)).collect(),
        species,
    };
    serde_json::to_string(&snap).map_err(|e| e.to_string())
}

/// Agglomerated percentage and worst stencil condition number of one static
/// snapshot for `count` evenly spaced thresholds in `[0, max_alpha]`.
pub fn alpha_sweep_json(
    scenario: &str,
    n: usize,
    steps: usize,
    step: usize,
    degree: usize,
    max_alpha: f64,
    count: usize,
) -> Result<String, String> {
    let s = setup(scenario, n, steps, degree, 1, "static")?;
    let (_, mesh) = meshes(&s, step)?;
    let count = count.max(2);
    let mut rows = Vec::with_capacity(count);
    for i in 0..count {
        let alpha = max_alpha * i as f64 / (count - 1) as f64;
        let map = build_agglomeration(&mesh, &mesh, alpha, TimeMode::Static, &mut s.network()).map_err(|e| e.to_string())?;
        let mut row = SweepRow { alpha, pct_agg: [0.0; 2], max_kappa_s: [None; 2], inf_count: [0; 2] };
        for sp in Species::ALL {
            let (_, _, m) = species_view(&s, &mesh, &map, sp, step, alpha)?;
            row.pct_agg[sp.index()] = m.pct_agg;
            row.max_kappa_s[sp.index()] = m.max_kappa_s;
            row.inf_count[sp.index()] = m.inf_count;
        }
        rows.push(row);
    }
    serde_json::to_string(&rows).map_err(|e| e.to_string())
}

/// Names of the scenarios the demo can draw.
pub fn scenarios_json() -> String {
    let names: Vec<String> = Scenario::ALL.iter().filter(|s| s.default_dim() == 2).map(|s| s.to_string()).collect();
    serde_json::to_string(&names).expect("names serialize")
}

#[wasm_bindgen]
pub fn scenarios() -> String {
    scenarios_json()
}

#[wasm_bindgen]
pub fn snapshot(scenario: &str, n: usize, steps: usize, step: usize, alpha: f64, ranks: usize, mode: &str) -> Result<String, JsValue> {
    snapshot_json(scenario, n, steps, step, alpha, ranks, mode).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn alpha_sweep(
    scenario: &str,
    n: usize,
    steps: usize,
    step: usize,
    degree: usize,
    max_alpha: f64,
    count: usize,
) -> Result<String, JsValue> {
    alpha_sweep_json(scenario, n, steps, step, degree, max_alpha, count).map_err(|e| JsValue::from_str(&e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::Value;

    #[test]
    fn scenario_list_is_two_dimensional() {
        let v: Vec<String> = serde_json::from_str(&scenarios_json()).unwrap();
        assert_eq!(v, ["vanishing-sphere", "colliding-spheres", "popcorn2d", "plane"]);
    }

    #[test]
    fn snapshot_describes_the_grid() {
        let v: Value = serde_json::from_str(&snapshot_json("vanishing-sphere", 20, 20, 3, 0.3, 2, "splitting").unwrap()).unwrap();
        assert_eq!(v["nx"], 20);
        assert_eq!(v["frac_a"].as_array().unwrap().len(), 400);
        assert_eq!(v["owner"][399], 1);
        let a = &v["species"][0];
        assert_eq!(a["species"], "A");
        assert!(!a["pairs"].as_array().unwrap().is_empty());
        for p in a["pairs"].as_array().unwrap() {
            assert_ne!(p["source"], p["root"]);
        }
    }

    #[test]
    fn sweep_is_monotone_in_agglomerated_share() {
        let rows: Vec<Value> = serde_json::from_str(&alpha_sweep_json("popcorn2d", 24, 20, 2, 1, 0.5, 6).unwrap()).unwrap();
        assert_eq!(rows.len(), 6);
        assert_eq!(rows[0]["alpha"], 0.0);
        let pct: Vec<f64> = rows.iter().map(|r| r["pct_agg"][0].as_f64().unwrap()).collect();
        assert!(pct.windows(2).all(|w| w[0] <= w[1]), "{pct:?}");
    }

    #[test]
    fn bad_input_is_reported() {
        assert!(snapshot_json("torus", 8, 4, 1, 0.3, 1, "static").is_err());
        assert!(snapshot_json("plane", 8, 4, 9, 0.3, 1, "static").is_err());
        assert!(snapshot_json("plane", 8, 4, 1, 0.3, 1, "sideways").is_err());
    }
}
