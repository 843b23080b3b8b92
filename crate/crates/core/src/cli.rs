//! Scenario runner and command line front end.
//!
//! Every scenario lives on `[-1, 1]^d` (the colliding spheres on
//! `[-1, 1] x [-0.5, 0.5]^(d-1)`) and runs over the time interval `[0, 1]`;
//! step `k` moves from `t = (k-1)/steps` to `t = k/steps`.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::aggmap::{build_agglomeration, AggMap, TimeMode};
use crate::algebra::{agglomerate_matrix, assemble_injection, species_mass_matrix, tensor_basis, CellBasis};
use crate::cutcell::{build_cutcell_mesh, CutCellMesh, QuadratureRule, Species, DEFAULT_ZERO_TOL};
use crate::diagnostics::{collect_step_metrics, read_metrics_csv, write_metrics_csv, StepMetrics, DEFAULT_DENSE_LIMIT};
use crate::error::{Error, Result};
use crate::geometry::{
    axis_plane, colliding_spheres, popcorn, rotate, tilted_torus, vanishing_sphere, LevelSetField, RigidMotion,
};
use crate::grid::{partition_strips, CartesianGrid, CellIndex, Partition};
use crate::parallel::{map_range, RankNetwork};

pub const END_TIME: f64 = 1.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
#[value(rename_all = "kebab-case")]
pub enum Scenario {
    VanishingSphere,
    CollidingSpheres,
    Popcorn2d,
    Popcorn3d,
    Torus,
    Plane,
}

impl Scenario {
    pub const ALL: [Scenario; 6] = [
        Scenario::VanishingSphere,
        Scenario::CollidingSpheres,
        Scenario::Popcorn2d,
        Scenario::Popcorn3d,
        Scenario::Torus,
        Scenario::Plane,
    ];

    pub fn default_dim(self) -> usize {
        match self {
            Scenario::Popcorn3d | Scenario::Torus => 3,
            _ => 2,
        }
    }

    fn allowed_dims(self) -> &'static [usize] {
        match self {
            Scenario::VanishingSphere | Scenario::CollidingSpheres => &[2, 3],
            Scenario::Popcorn2d => &[2],
            Scenario::Popcorn3d | Scenario::Torus => &[3],
            Scenario::Plane => &[2, 3],
        }
    }

    fn domain(self, dim: usize) -> (Vec<f64>, Vec<f64>) {
        match self {
            Scenario::CollidingSpheres => {
                let mut origin = vec![-0.5; dim];
                let mut extent = vec![1.0; dim];
                origin[0] = -1.0;
                extent[0] = 2.0;
                (origin, extent)
            }
            _ => (vec![-1.0; dim], vec![2.0; dim]),
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let v = self.to_possible_value().expect("no skipped variants");
        f.write_str(v.get_name())
    }
}

impl FromStr for Scenario {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        <Scenario as ValueEnum>::from_str(s, false).map_err(|_| Error::Config(format!("unknown scenario '{s}'")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct ScenarioConfig {
    pub scenario: Scenario,
    /// Cells per axis.
    pub res: Vec<usize>,
    pub degree: usize,
    pub alpha: f64,
    pub mode: TimeMode,
    pub steps: usize,
    pub ranks: usize,
    /// Quadrature bisection depth.
    pub depth: u32,
    pub out: PathBuf,
    pub seed: Option<u64>,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            scenario: Scenario::VanishingSphere,
            res: vec![30, 30],
            degree: 1,
            alpha: 0.3,
            mode: TimeMode::Splitting,
            steps: 20,
            ranks: 1,
            depth: 6,
            out: PathBuf::from("out"),
            seed: None,
        }
    }
}

pub const MAX_DEGREE: usize = 5;
pub const MAX_DEPTH: u32 = 12;

impl ScenarioConfig {
    pub fn new(scenario: Scenario, res: &[usize]) -> Self {
        ScenarioConfig { scenario, res: res.to_vec(), ..Default::default() }
    }

    pub fn dim(&self) -> usize {
        self.res.len()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !self.scenario.allowed_dims().contains(&self.res.len()) {
            return bad(format!(
                "scenario {} does not support {} axes (allowed: {:?})",
                self.scenario,
                self.res.len(),
                self.scenario.allowed_dims()
            ));
        }
        if self.res.contains(&0) {
            return bad("every axis needs at least one cell".into());
        }
        if self.degree > MAX_DEGREE {
            return bad(format!("degree {} exceeds {MAX_DEGREE}", self.degree));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return bad(format!("alpha {} outside [0, 1]", self.alpha));
        }
        if self.steps == 0 {
            return bad("steps must be positive".into());
        }
        if self.ranks == 0 || self.ranks > self.res[0] {
            return bad(format!("ranks {} must lie in 1..={}", self.ranks, self.res[0]));
        }
        if self.depth > MAX_DEPTH {
            return bad(format!("depth {} exceeds {MAX_DEPTH}", self.depth));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn time(&self, k: usize) -> f64 {
        k as f64 * END_TIME / self.steps as f64
    }
}

/// Level set of a scenario in `dim` dimensions.
pub fn scenario_field(scenario: Scenario, grid: &CartesianGrid) -> LevelSetField {
    let dim = grid.dim();
    match scenario {
        Scenario::VanishingSphere => vanishing_sphere(dim, 0.6, 1.0 / END_TIME),
        Scenario::CollidingSpheres => {
            let r_s = 0.15;
            colliding_spheres(dim, r_s, 3.0 * r_s / END_TIME)
        }
        Scenario::Popcorn2d | Scenario::Popcorn3d => {
            let omega = 2.0 * PI / (5.0 * END_TIME);
            rotate(popcorn(dim, 0.6, 2.0, 0.2), RigidMotion::about_z(omega))
        }
        Scenario::Torus => {
            let omega = PI / (4.0 * END_TIME);
            rotate(tilted_torus(0.39, 0.26, PI / 4.0), RigidMotion { axis: [0.0, 1.0, 0.0], omega })
        }
        Scenario::Plane => {
            let n = grid.cells_per_axis()[0];
            axis_plane(dim, 0, grid.grid_line(0, n / 2))
        }
    }
}

/// Grid, level set and discretization settings of a validated config.
#[derive(Clone, Debug)]
pub struct ScenarioSetup {
    pub config: ScenarioConfig,
    pub grid: CartesianGrid,
    pub field: LevelSetField,
    pub rule: QuadratureRule,
    pub basis: CellBasis,
    pub partition: Partition,
}

impl ScenarioSetup {
    pub fn new(config: &ScenarioConfig) -> Result<Self> {
        config.validate()?;
        let dim = config.dim();
        let (origin, extent) = config.scenario.domain(dim);
        let grid = CartesianGrid::new(dim, &config.res, &origin, &extent)?;
        let field = scenario_field(config.scenario, &grid);
        let partition = partition_strips(&grid, config.ranks, 0)?;
        Ok(ScenarioSetup {
            config: config.clone(),
            rule: QuadratureRule { max_depth: config.depth, ..QuadratureRule::default() },
            basis: tensor_basis(dim, config.degree),
            field,
            grid,
            partition,
        })
    }

    pub fn mesh_at(&self, t: f64) -> Result<CutCellMesh> {
        build_cutcell_mesh(&self.grid, &self.field, t, &self.rule, DEFAULT_ZERO_TOL)
    }

    /// Meshes at `t_0 .. t_steps`.
    pub fn mesh_series(&self) -> Result<MeshSeries> {
        let meshes = map_range(self.config.steps + 1, |k| self.mesh_at(self.config.time(k)).map(Arc::new));
        Ok(MeshSeries { meshes: meshes.into_iter().collect::<Result<_>>()? })
    }

    pub fn network(&self) -> RankNetwork {
        let net = RankNetwork::new(self.partition.clone());
        match self.config.seed {
            Some(seed) => net.with_schedule_seed(seed),
            None => net,
        }
    }
}

/// Cut-cell meshes of one scenario at every time level, shared between runs
/// that differ only in threshold, degree or rank count.
#[derive(Clone, Debug)]
pub struct MeshSeries {
    pub meshes: Vec<Arc<CutCellMesh>>,
}

impl MeshSeries {
    pub fn get(&self, k: usize) -> &Arc<CutCellMesh> {
        &self.meshes[k]
    }
}

/// Both directions: every cut cell of one mesh has a cut cell of the other
/// within one layer of neighbors. Skipped when either side has no cut cells.
pub fn check_speed_limit(prev: &CutCellMesh, next: &CutCellMesh, step: usize) -> Result<()> {
    let grid = next.grid();
    let within = |from: &CutCellMesh, to: &CutCellMesh| {
        from.cut_cells().all(|c| {
            let ijk = grid.multi_index(c);
            let mut found = false;
            let n = grid.cells_per_axis();
            let range = |a: usize| {
                if a < grid.dim() {
                    ijk[a].saturating_sub(1)..=(ijk[a] + 1).min(n[a] - 1)
                } else {
                    0..=0
                }
            };
            'outer: for i in range(0) {
                for j in range(1) {
                    for k in range(2) {
                        let idx = &[i, j, k][..grid.dim()];
                        if let Some(cell) = grid.cell_index(idx) {
                            if to.is_cut(cell) {
                                found = true;
                                break 'outer;
                            }
                        }
                    }
                }
            }
            found
        })
    };
    if prev.cut_cells().next().is_none() || next.cut_cells().next().is_none() {
        return Ok(());
    }
    if within(prev, next) && within(next, prev) {
        Ok(())
    } else {
        Err(Error::SpeedLimit { step_prev: step - 1, step_next: step })
    }
}

pub struct StepResult {
    pub step: usize,
    pub prev: Arc<CutCellMesh>,
    pub next: Arc<CutCellMesh>,
    pub map: AggMap,
    /// Species A then B.
    pub metrics: Vec<StepMetrics>,
}

/// Agglomeration and diagnostics for step `k >= 1`.
pub fn run_step(setup: &ScenarioSetup, series: &MeshSeries, k: usize, alpha: f64) -> Result<StepResult> {
    let cfg = &setup.config;
    let prev = series.get(k - 1).clone();
    let next = series.get(k).clone();
    check_speed_limit(&prev, &next, k)?;
    let mut net = setup.network();
    let map = build_agglomeration(&prev, &next, alpha, cfg.mode, &mut net)?;
    let mut metrics = Vec::with_capacity(2);
    for s in Species::ALL {
        let m = map.species(s);
        let mass = species_mass_matrix(&next, &setup.basis, m)?;
        let q = assemble_injection(m, &setup.basis, &setup.grid)?;
        let agg = agglomerate_matrix(&mass, &q)?;
        metrics.push(collect_step_metrics(k, alpha, cfg.degree, &next, m, &agg, DEFAULT_DENSE_LIMIT)?);
    }
    Ok(StepResult { step: k, prev, next, map, metrics })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct RunOptions {
    pub dump_map: bool,
    pub dump_mesh: bool,
    pub quiet: bool,
}

#[derive(Clone, Debug)]
pub struct RunSummary {
    pub metrics: Vec<StepMetrics>,
    pub out_dir: PathBuf,
}

fn write_file(path: PathBuf, content: &str) -> Result<()> {
    fs::write(&path, content).map_err(Error::from)
}

fn species_tag(s: Species) -> &'static str {
    match s {
        Species::A => "A",
        Species::B => "B",
    }
}

/// Runs every step and writes `metrics.csv` plus the requested dumps.
pub fn run_scenario(config: &ScenarioConfig, opts: RunOptions) -> Result<RunSummary> {
    let setup = ScenarioSetup::new(config)?;
    let series = setup.mesh_series()?;
    run_with_series(&setup, &series, opts)
}

pub fn run_with_series(setup: &ScenarioSetup, series: &MeshSeries, opts: RunOptions) -> Result<RunSummary> {
    let cfg = &setup.config;
    let out = cfg.out.clone();
    fs::create_dir_all(&out)?;
    write_file(out.join("config.json"), &cfg.to_json())?;
    let mut rows = Vec::new();
    for k in 1..=cfg.steps {
        let res = run_step(setup, series, k, cfg.alpha)?;
        for s in Species::ALL {
            let m = res.map.species(s);
            if !opts.quiet {
                let _ = writeln!(
                    std::io::stdout(),
                    "step {k} species {s}: cut {} sources {} (newborn {}, vanishing {}, small {}) pairs {} max level {}",
                    res.next.cut_cells().count(),
                    m.sources.all.len(),
                    m.sources.newborn.len(),
                    m.sources.vanishing.len(),
                    m.sources.small.len(),
                    m.pairs.len(),
                    m.max_level()
                );
            }
            if opts.dump_map {
                let tag = species_tag(s);
                write_file(out.join(format!("map_step{k}_{tag}.dot")), &m.to_dot())?;
                write_file(
                    out.join(format!("map_step{k}_{tag}.json")),
                    &serde_json::to_string_pretty(&m.canonical())?,
                )?;
            }
        }
        if opts.dump_mesh {
            write_file(out.join(format!("mesh_step{k}.json")), &serde_json::to_string_pretty(&res.next.to_dump())?)?;
        }
        rows.extend(res.metrics);
    }
    let file = fs::File::create(out.join("metrics.csv"))?;
    write_metrics_csv(file, &rows)?;
    Ok(RunSummary { metrics: rows, out_dir: out })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum TrendAssertion {
    /// First run's stencil condition number is at least the second's at every step.
    AGeB,
    /// First run's stencil condition number is at most the second's at every step.
    ALeB,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrendRow {
    pub step: usize,
    pub species: Species,
    pub kappa_a: Option<f64>,
    pub kappa_b: Option<f64>,
    pub ratio: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrendReport {
    pub rows: Vec<TrendRow>,
    pub max_ratio: Option<f64>,
    pub min_ratio: Option<f64>,
}

impl TrendReport {
    pub fn to_text(&self) -> String {
        let f = |v: Option<f64>| v.map_or_else(|| "NA".to_string(), |x| format!("{x:.6e}"));
        let mut s = String::from("step species kappa_a kappa_b ratio\n");
        for r in &self.rows {
            s.push_str(&format!(
                "{} {} {} {} {}\n",
                r.step,
                r.species,
                f(r.kappa_a),
                f(r.kappa_b),
                f(r.ratio)
            ));
        }
        s.push_str(&format!("max ratio {}\nmin ratio {}\n", f(self.max_ratio), f(self.min_ratio)));
        s
    }
}

/// Per-step ratio of the maximum stencil condition numbers of two runs.
pub fn compare_runs(a: &[StepMetrics], b: &[StepMetrics], assert: Option<TrendAssertion>) -> Result<TrendReport> {
    let key = |m: &StepMetrics| (m.step, m.species.index());
    let ma: BTreeMap<_, _> = a.iter().map(|m| (key(m), m)).collect();
    let mb: BTreeMap<_, _> = b.iter().map(|m| (key(m), m)).collect();
    if ma.len() != a.len() || mb.len() != b.len() {
        return Err(Error::Schema("duplicate (step, species) rows".into()));
    }
    if !ma.keys().eq(mb.keys()) {
        return Err(Error::Schema("runs cover different steps or species".into()));
    }
    let mut rows = Vec::new();
    for (k, ra) in &ma {
        let rb = mb[k];
        let ratio = match (ra.max_kappa_s, rb.max_kappa_s) {
            (Some(x), Some(y)) if y > 0.0 => Some(x / y),
            _ => None,
        };
        rows.push(TrendRow { step: ra.step, species: ra.species, kappa_a: ra.max_kappa_s, kappa_b: rb.max_kappa_s, ratio });
    }
    let ratios = rows.iter().filter_map(|r| r.ratio);
    let max_ratio = ratios.clone().reduce(f64::max);
    let min_ratio = ratios.reduce(f64::min);
    if let Some(want) = assert {
        for r in &rows {
            let ok = match (want, r.kappa_a, r.kappa_b) {
                (TrendAssertion::AGeB, Some(x), Some(y)) => x >= y,
                (TrendAssertion::ALeB, Some(x), Some(y)) => x <= y,
                _ => true,
            };
            if !ok {
                return Err(Error::TrendViolation(format!(
                    "step {} species {}: {:?} vs {:?}",
                    r.step, r.species, r.kappa_a, r.kappa_b
                )));
            }
        }
    }
    Ok(TrendReport { rows, max_ratio, min_ratio })
}

pub fn compare_files(a: &Path, b: &Path, assert: Option<TrendAssertion>) -> Result<TrendReport> {
    let ra = read_metrics_csv(fs::File::open(a)?)?;
    let rb = read_metrics_csv(fs::File::open(b)?)?;
    compare_runs(&ra, &rb, assert)
}

#[derive(Debug, Parser)]
#[command(name = "cutagg", version, about = "Cut-cell agglomeration scenarios and diagnostics")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run a scenario and write metrics and dumps.
    Run(RunArgs),
    /// Compare the stencil condition numbers of two metrics files.
    Compare(CompareArgs),
}

/// Cells per axis as given on the command line.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Resolution(pub Vec<usize>);

fn parse_res(s: &str) -> std::result::Result<Resolution, String> {
    s.split(['x', ','])
        .map(|p| p.trim().parse::<usize>().map_err(|_| format!("bad resolution '{s}'")))
        .collect::<std::result::Result<_, _>>()
        .map(Resolution)
}

fn parse_mode(s: &str) -> std::result::Result<TimeMode, String> {
    s.parse::<TimeMode>().map_err(|e| e.to_string())
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// JSON config file; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub scenario: Option<Scenario>,
    /// Cells per axis, e.g. `30`, `64x32` or `16,16,16`.
    #[arg(long, value_parser = parse_res)]
    pub res: Option<Resolution>,
    #[arg(long)]
    pub degree: Option<usize>,
    #[arg(long)]
    pub alpha: Option<f64>,
    /// static, splitting or moving.
    #[arg(long, value_parser = parse_mode)]
    pub mode: Option<TimeMode>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub ranks: Option<usize>,
    #[arg(long)]
    pub depth: Option<u32>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub dump_map: bool,
    #[arg(long)]
    pub dump_mesh: bool,
    #[arg(long)]
    pub quiet: bool,
}

impl RunArgs {
    pub fn to_config(&self) -> Result<ScenarioConfig> {
        let mut cfg = match &self.config {
            Some(p) => ScenarioConfig::load(p)?,
            None => ScenarioConfig::default(),
        };
        if let Some(s) = self.scenario {
            if self.config.is_none() && self.res.is_none() {
                cfg.res = vec![cfg.res[0]; s.default_dim()];
            }
            cfg.scenario = s;
        }
        if let Some(Resolution(r)) = &self.res {
            cfg.res = if r.len() == 1 { vec![r[0]; cfg.scenario.default_dim()] } else { r.clone() };
        }
        if let Some(v) = self.degree {
            cfg.degree = v;
        }
        if let Some(v) = self.alpha {
            cfg.alpha = v;
        }
        if let Some(v) = self.mode {
            cfg.mode = v;
        }
        if let Some(v) = self.steps {
            cfg.steps = v;
        }
        if let Some(v) = self.ranks {
            cfg.ranks = v;
        }
        if let Some(v) = self.depth {
            cfg.depth = v;
        }
        if let Some(v) = &self.out {
            cfg.out = v.clone();
        }
        if self.seed.is_some() {
            cfg.seed = self.seed;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    pub csv_a: PathBuf,
    pub csv_b: PathBuf,
    #[arg(long)]
    pub assert_trend: Option<TrendAssertion>,
}

/// Parses arguments, runs the command and returns the process exit status.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let result = match cli.command {
        Command::Run(args) => args.to_config().and_then(|cfg| {
            let opts = RunOptions { dump_map: args.dump_map, dump_mesh: args.dump_mesh, quiet: args.quiet };
            run_scenario(&cfg, opts).map(|s| {
                if !args.quiet {
                    println!("wrote {} rows to {}", s.metrics.len(), s.out_dir.join("metrics.csv").display());
                }
            })
        }),
        Command::Compare(args) => compare_files(&args.csv_a, &args.csv_b, args.assert_trend).map(|r| {
            print!("{}", r.to_text());
        }),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            if let Error::UnresolvableIsland { species, cells } = &e {
                let list: Vec<String> = cells.iter().map(CellIndex::to_string).collect();
                eprintln!("error: unresolvable {species} island: {}", list.join(" "));
            } else {
                eprintln!("error: {e}");
            }
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_round_trips_and_rejects_unknown_keys() {
        let mut cfg = ScenarioConfig::new(Scenario::CollidingSpheres, &[64, 32]);
        cfg.seed = Some(7);
        cfg.mode = TimeMode::Moving;
        let text = cfg.to_json();
        assert!(text.contains("\"colliding-spheres\"") && text.contains("\"moving\""));
        assert_eq!(ScenarioConfig::from_json(&text).unwrap(), cfg);
        let bad = text.replace("\"degree\"", "\"order\"");
        assert!(matches!(ScenarioConfig::from_json(&bad), Err(Error::Config(_))));
    }

    #[test]
    fn validation_failures_are_config_errors() {
        let base = ScenarioConfig::default();
        let cases = [
            ScenarioConfig { res: vec![8, 8, 8], scenario: Scenario::Popcorn2d, ..base.clone() },
            ScenarioConfig { alpha: 1.5, ..base.clone() },
            ScenarioConfig { steps: 0, ..base.clone() },
            ScenarioConfig { ranks: 31, ..base.clone() },
            ScenarioConfig { degree: 9, ..base.clone() },
        ];
        for c in cases {
            let e = c.validate().unwrap_err();
            assert_eq!(e.exit_code(), 2, "{e}");
        }
        base.validate().unwrap();
    }

    #[test]
    fn flags_override_file_values() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        let cfg = ScenarioConfig { alpha: 0.1, steps: 3, ..ScenarioConfig::default() };
        fs::write(&path, cfg.to_json()).unwrap();
        let cli = Cli::try_parse_from(["cutagg", "run", "--config", path.to_str().unwrap(), "--alpha", "0.4", "--res", "12x10"])
            .unwrap();
        let Command::Run(args) = cli.command else { panic!() };
        let got = args.to_config().unwrap();
        assert_eq!(got.alpha, 0.4);
        assert_eq!(got.steps, 3);
        assert_eq!(got.res, vec![12, 10]);
    }

    #[test]
    fn scenario_names_parse() {
        for s in Scenario::ALL {
            assert_eq!(s.to_string().parse::<Scenario>().unwrap(), s);
        }
        assert!("cube".parse::<Scenario>().is_err());
    }

    #[test]
    fn plane_sits_on_the_middle_grid_line() {
        let setup = ScenarioSetup::new(&ScenarioConfig::new(Scenario::Plane, &[8, 4])).unwrap();
        let mesh = setup.mesh_at(0.0).unwrap();
        assert_eq!(mesh.cut_cells().count(), 0);
        assert_eq!(mesh.coinciding_faces().len(), 4);
    }

    #[test]
    fn speed_limit_detects_jumps() {
        let g = CartesianGrid::new(2, &[10, 1], &[0.0, 0.0], &[1.0, 0.1]).unwrap();
        let frac = |i: usize| (0..10).map(|k| if k < i { 1.0 } else if k == i { 0.5 } else { 0.0 }).collect::<Vec<_>>();
        let m = |i| CutCellMesh::from_fractions(&g, 0.0, frac(i)).unwrap();
        check_speed_limit(&m(3), &m(4), 1).unwrap();
        assert!(matches!(check_speed_limit(&m(3), &m(5), 2), Err(Error::SpeedLimit { step_prev: 1, step_next: 2 })));
    }

    #[test]
    fn identical_runs_compare_to_unit_ratios() {
        let row = |step, k| StepMetrics {
            step,
            species: Species::A,
            alpha: 0.0,
            degree: 1,
            n_cut: 4,
            n_src: 0,
            pct_agg: 0.0,
            min_frac: Some(0.1),
            max_kappa_s: Some(k),
            kappa_g: None,
            inf_count: 0,
        };
        let a = vec![row(1, 10.0), row(2, 30.0)];
        let r = compare_runs(&a, &a, Some(TrendAssertion::AGeB)).unwrap();
        assert!(r.rows.iter().all(|x| x.ratio == Some(1.0)));
        let b = vec![row(1, 5.0), row(2, 60.0)];
        assert!(matches!(compare_runs(&a, &b, Some(TrendAssertion::AGeB)), Err(Error::TrendViolation(_))));
        let r = compare_runs(&a, &b, None).unwrap();
        assert_eq!(r.max_ratio, Some(2.0));
        assert!(matches!(compare_runs(&a, &b[..1], None), Err(Error::Schema(_))));
    }

    #[test]
    fn small_run_writes_artifacts() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = ScenarioConfig {
            res: vec![12, 12],
            steps: 3,
            depth: 4,
            ranks: 2,
            out: dir.path().to_path_buf(),
            ..ScenarioConfig::default()
        };
        let opts = RunOptions { dump_map: true, dump_mesh: true, quiet: true };
        let s = run_scenario(&cfg, opts).unwrap();
        assert_eq!(s.metrics.len(), 6);
        for f in ["metrics.csv", "config.json", "map_step2_A.dot", "map_step3_B.json", "mesh_step1.json"] {
            assert!(dir.path().join(f).exists(), "{f}");
        }
        let first = fs::read(dir.path().join("metrics.csv")).unwrap();
        run_scenario(&cfg, opts).unwrap();
        assert_eq!(fs::read(dir.path().join("metrics.csv")).unwrap(), first);
    }

    #[test]
    fn exit_codes() {
        assert_eq!(main_with_args(["cutagg", "run", "--alpha", "2", "--quiet"]), 2);
        assert_eq!(main_with_args(["cutagg", "run", "--scenario", "sphere"]), 2);
    }
}
