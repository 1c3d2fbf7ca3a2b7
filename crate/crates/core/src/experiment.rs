//! Reproducible experiment runs: configuration, artifacts and manifests.
//!
//! A run is a pure function of its [`ExperimentConfig`]. Every artifact is
//! written under the output directory and listed in `manifest.json` with its
//! SHA-256 digest; [`verify_manifest`] re-checks the digests and can re-run
//! the recorded configuration.

use std::f64::consts::TAU;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::circuit::{BoundsReport, GeneCircuit};
use crate::error::{Error, Result};
use crate::expr::{Env, Expr};
use crate::fit::{jones_fit_nested, SearchSettings, TrainingSet, DEFAULT_A_MAX, DEFAULT_BUDGET};
use crate::grid::{fmt_f64, Grid};
use crate::pattern::{compile_pattern_1d, compile_pattern_2d, verify_pattern, CompileConfig, PatternRun, ThresholdProfile, COMPILE_A_MAX};
use crate::rd::{
    count_interior_maxima, diffusion_dt_bound, equilibrium, front_position, left_perturbation, simulate_rd, MeinhardtParams, RDSystem,
    RDTrajectory,
};
use crate::superposition::{build_direct_cos8t, build_indirect_cos8t, compare_cos8t, simulate_signal, Cos8tSettings, SignalRun};
use crate::transpile::{
    assemble_block_circuit, fit_nonlinearities, matched_initial_state, verify_transpile, BlockCircuitSpec, FitDomain, TranspileSettings,
};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Tolerance used when counting interior maxima of final fields.
pub const MAXIMA_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    pub experiment: Experiment,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Experiment {
    RdMeinhardt(RdConfig),
    Transpile(TranspileConfig),
    #[serde(rename = "compile-1d")]
    Compile1d(CompileSetup),
    #[serde(rename = "compile-2d")]
    Compile2d(CompileSetup),
    Cos8t(Cos8tConfig),
    JonesRate(JonesRateConfig),
}

impl Experiment {
    pub fn kind(&self) -> &'static str {
        match self {
            Experiment::RdMeinhardt(_) => "rd-meinhardt",
            Experiment::Transpile(_) => "transpile",
            Experiment::Compile1d(_) => "compile-1d",
            Experiment::Compile2d(_) => "compile-2d",
            Experiment::Cos8t(_) => "cos8t",
            Experiment::JonesRate(_) => "jones-rate",
        }
    }

    /// The experiment with every parameter at its default.
    pub fn default_of(kind: &str) -> Result<Self> {
        Ok(match kind {
            "rd-meinhardt" => Experiment::RdMeinhardt(RdConfig::default()),
            "transpile" => Experiment::Transpile(TranspileConfig::default()),
            "compile-1d" => Experiment::Compile1d(CompileSetup::default_1d()),
            "compile-2d" => Experiment::Compile2d(CompileSetup::default_2d()),
            "cos8t" => Experiment::Cos8t(Cos8tConfig::default()),
            "jones-rate" => Experiment::JonesRate(JonesRateConfig::default()),
            other => return Err(Error::invalid("kind", format!("unknown experiment kind `{other}`"))),
        })
    }
}

/// Meinhardt kinetics on a line with the left tenth perturbed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RdConfig {
    pub params: MeinhardtParams,
    pub d1: f64,
    pub d2: f64,
    pub length: f64,
    pub points: usize,
    pub t_end: f64,
    /// Largest stable step when absent.
    pub dt: Option<f64>,
    pub frames: usize,
}

impl Default for RdConfig {
    fn default() -> Self {
        Self {
            params: MeinhardtParams::default(),
            d1: 1.0,
            d2: 50.0,
            length: 60.0,
            points: 601,
            t_end: 500.0,
            dt: None,
            frames: 50,
        }
    }
}

impl RdConfig {
    fn validate(&self) -> Result<()> {
        self.params.validate()?;
        positive("length", self.length)?;
        positive("t_end", self.t_end)?;
        non_negative("d1", self.d1)?;
        non_negative("d2", self.d2)?;
        if let Some(dt) = self.dt {
            positive("dt", dt)?;
        }
        at_least("points", self.points, 3)?;
        at_least("frames", self.frames, 1)
    }

    fn system(&self) -> RDSystem {
        RDSystem::meinhardt(self.d1, self.d2, self.params)
    }

    fn grid(&self) -> Result<Grid> {
        Grid::line(0.0, self.length, self.points)
    }

    fn step(&self, grid: &Grid) -> f64 {
        self.dt.unwrap_or_else(|| stable_step(self.t_end, diffusion_dt_bound(grid, self.d1.max(self.d2))))
    }

    fn run(&self) -> Result<RDTrajectory> {
        let grid = self.grid()?;
        let (u0, v0) = left_perturbation(&grid, &self.params)?;
        let dt = self.step(&grid);
        let steps = (self.t_end / dt).round() as usize;
        simulate_rd(&self.system(), &u0, &v0, self.t_end, dt, (steps / self.frames).max(1))
    }
}

/// Transpilation of the Meinhardt system and comparison with the RD run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TranspileConfig {
    pub rd: RdConfig,
    pub m1: usize,
    pub m2: usize,
    pub budget: usize,
    pub a_max: f64,
    pub train_points: usize,
    pub validation_points: usize,
    pub decay: f64,
    /// Fit rectangle; `domain_scale` times the realized bounds of the RD run
    /// when absent.
    pub domain: Option<FitDomain>,
    pub domain_scale: f64,
}

impl Default for TranspileConfig {
    fn default() -> Self {
        Self {
            rd: RdConfig {
                points: 61,
                frames: 20,
                ..RdConfig::default()
            },
            m1: 300,
            m2: 300,
            budget: DEFAULT_BUDGET,
            a_max: DEFAULT_A_MAX,
            train_points: 60,
            validation_points: 120,
            decay: 1.0,
            domain: None,
            domain_scale: 3.0,
        }
    }
}

impl TranspileConfig {
    fn validate(&self) -> Result<()> {
        self.rd.validate()?;
        at_least("m1", self.m1, 1)?;
        at_least("m2", self.m2, 1)?;
        at_least("budget", self.budget, 1)?;
        positive("a_max", self.a_max)?;
        positive("decay", self.decay)?;
        positive("domain_scale", self.domain_scale)?;
        at_least("train_points", self.train_points, 2)?;
        at_least("validation_points", self.validation_points, 2)?;
        if let Some(d) = self.domain {
            positive("domain.c1", d.c1)?;
            positive("domain.c2", d.c2)?;
        }
        Ok(())
    }
}

/// Pattern compilation of a target expression in `t`, `x1` and `x2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CompileSetup {
    pub target: String,
    /// Spatial interval of each axis.
    pub domain: (f64, f64),
    /// Grid points per axis.
    pub points: usize,
    /// Threshold profiles per axis; the default ramp when absent.
    pub theta1: Option<ThresholdProfile>,
    pub theta2: Option<ThresholdProfile>,
    pub kappa: f64,
    pub lambda: Option<f64>,
    pub m: usize,
    #[serde(rename = "T0")]
    pub t0: f64,
    #[serde(rename = "T")]
    pub t_end: f64,
    pub delta_margin: f64,
    pub budget: usize,
    pub a_max: f64,
    pub train_t: Option<usize>,
    pub train_x: Option<usize>,
    /// Frames compared in the verification run.
    pub frames: usize,
}

impl Default for CompileSetup {
    fn default() -> Self {
        Self::default_1d()
    }
}

impl CompileSetup {
    pub fn default_1d() -> Self {
        let c = CompileConfig::default();
        Self {
            target: "0.1*(sin(8*t)+sin(16*t))".into(),
            domain: (0.0, 1.0),
            points: 101,
            theta1: None,
            theta2: None,
            kappa: c.kappa,
            lambda: c.lambda,
            m: c.m,
            t0: c.t0,
            t_end: c.t_end,
            delta_margin: c.delta_margin,
            budget: c.search.budget,
            a_max: COMPILE_A_MAX,
            train_t: None,
            train_x: None,
            frames: 100,
        }
    }

    pub fn default_2d() -> Self {
        Self {
            target: "0.01*((x1-0.5)^2-(x2-0.5)^2)".into(),
            points: 11,
            ..Self::default_1d()
        }
    }

    fn compile_config(&self, seed: u64) -> CompileConfig {
        CompileConfig {
            kappa: self.kappa,
            lambda: self.lambda,
            m: self.m,
            t0: self.t0,
            t_end: self.t_end,
            delta_margin: self.delta_margin,
            search: SearchSettings {
                budget: self.budget,
                a_max: self.a_max,
            },
            seed,
            train_t: self.train_t,
            train_x: self.train_x,
        }
    }

    fn validate(&self, dim: usize) -> Result<Expr> {
        self.compile_config(0).validate()?;
        at_least("budget", self.budget, 1)?;
        positive("a_max", self.a_max)?;
        at_least("points", self.points, 3)?;
        at_least("frames", self.frames, 1)?;
        if !(self.domain.1 > self.domain.0) {
            return Err(Error::invalid("domain", "need domain.1 > domain.0"));
        }
        let e = Expr::parse(&self.target)?;
        if e.input_count() > 0 {
            return Err(Error::invalid("target", "a pattern may use t, x1 and x2 only"));
        }
        if dim == 1 && e.uses(crate::expr::Var::X2) {
            return Err(Error::invalid("target", "x2 needs compile-2d"));
        }
        Ok(e)
    }

    fn grid(&self, dim: usize) -> Result<Grid> {
        let (a, b) = self.domain;
        if dim == 1 {
            Grid::line(a, b, self.points)
        } else {
            Grid::rect((a, b, self.points), (a, b, self.points))
        }
    }

    fn profile(&self, axis: usize) -> ThresholdProfile {
        let given = if axis == 0 { &self.theta1 } else { &self.theta2 };
        given
            .clone()
            .unwrap_or_else(|| ThresholdProfile::default_ramp(self.domain.0, self.domain.1))
    }
}

/// Direct against indirect `cos(8t)` networks over several seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Cos8tConfig {
    pub m: usize,
    pub m1: usize,
    pub m2: usize,
    pub lambda: f64,
    pub delta: f64,
    pub budget: usize,
    pub samples: usize,
    /// Seeds `seed, seed+1, …` are compared.
    pub trials: usize,
    pub frames: usize,
}

impl Default for Cos8tConfig {
    fn default() -> Self {
        let s = Cos8tSettings::default();
        Self {
            m: 50,
            m1: 32,
            m2: 5,
            lambda: s.lambda,
            delta: s.delta,
            budget: s.budget,
            samples: s.samples,
            trials: 5,
            frames: 2000,
        }
    }
}

impl Cos8tConfig {
    fn settings(&self) -> Cos8tSettings {
        Cos8tSettings {
            lambda: self.lambda,
            delta: self.delta,
            budget: self.budget,
            samples: self.samples,
        }
    }

    fn validate(&self) -> Result<()> {
        self.settings().validate()?;
        at_least("m", self.m, 1)?;
        at_least("m1", self.m1, 1)?;
        at_least("m2", self.m2, 1)?;
        at_least("trials", self.trials, 1)?;
        at_least("frames", self.frames, 1)
    }
}

/// Jones residual against unit count on a Gaussian bump over `[−w, w]²`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct JonesRateConfig {
    pub counts: Vec<usize>,
    pub budget: usize,
    pub a_max: f64,
    /// Lattice points per axis.
    pub points: usize,
    pub half_width: f64,
}

impl Default for JonesRateConfig {
    fn default() -> Self {
        Self {
            counts: vec![4, 8, 16, 32, 64, 128],
            budget: DEFAULT_BUDGET,
            a_max: DEFAULT_A_MAX,
            points: 21,
            half_width: 2.0,
        }
    }
}

impl JonesRateConfig {
    fn validate(&self) -> Result<()> {
        if self.counts.len() < 2 || self.counts.contains(&0) {
            return Err(Error::invalid("counts", "need at least two positive unit counts"));
        }
        at_least("budget", self.budget, 1)?;
        positive("a_max", self.a_max)?;
        at_least("points", self.points, 2)?;
        positive("half_width", self.half_width)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JonesRate {
    pub counts: Vec<usize>,
    pub final_rms: Vec<f64>,
    /// Least-squares slope of `log rms²` against `log m`.
    pub slope: f64,
}

/// `exp(−(q₁² + q₂²))` on a `points × points` lattice of `[−w, w]²`.
pub fn gaussian_bump_set(points: usize, half_width: f64) -> Result<TrainingSet> {
    let mut inputs = Vec::with_capacity(2 * points * points);
    let mut targets = Vec::with_capacity(points * points);
    let coord = |i: usize| -half_width + 2.0 * half_width * i as f64 / (points - 1) as f64;
    for i in 0..points {
        for j in 0..points {
            let (a, b) = (coord(i), coord(j));
            inputs.extend([a, b]);
            targets.push((-(a * a + b * b)).exp());
        }
    }
    TrainingSet::new(2, inputs, targets)
}

pub fn jones_rate(cfg: &JonesRateConfig, seed: u64) -> Result<JonesRate> {
    cfg.validate()?;
    let data = gaussian_bump_set(cfg.points, cfg.half_width)?;
    let settings = SearchSettings {
        budget: cfg.budget,
        a_max: cfg.a_max,
    };
    let fits = jones_fit_nested(&data, &cfg.counts, settings, seed)?;
    let final_rms: Vec<f64> = fits.iter().map(|(_, r)| r.final_rms).collect();
    let xs: Vec<f64> = cfg.counts.iter().map(|&m| (m as f64).ln()).collect();
    let ys: Vec<f64> = final_rms.iter().map(|r| (r * r).ln()).collect();
    Ok(JonesRate {
        counts: cfg.counts.clone(),
        final_rms,
        slope: regression_slope(&xs, &ys),
    })
}

pub fn regression_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}

fn positive(field: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(field, "must be positive"))
    }
}

fn non_negative(field: &str, v: f64) -> Result<()> {
    if v >= 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(field, "must be non-negative"))
    }
}

fn at_least(field: &str, v: usize, min: usize) -> Result<()> {
    if v >= min {
        Ok(())
    } else {
        Err(Error::invalid(field, format!("must be at least {min}")))
    }
}

/// Largest step below `bound` dividing `t_end` evenly.
fn stable_step(t_end: f64, bound: f64) -> f64 {
    t_end / (t_end / (bound * (1.0 - 1e-12))).ceil()
}

impl ExperimentConfig {
    pub fn new(experiment: Experiment) -> Self {
        Self {
            seed: 0,
            output_dir: default_output_dir(),
            experiment,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match &self.experiment {
            Experiment::RdMeinhardt(c) => c.validate(),
            Experiment::Transpile(c) => c.validate(),
            Experiment::Compile1d(c) => c.validate(1).map(|_| ()),
            Experiment::Compile2d(c) => c.validate(2).map(|_| ()),
            Experiment::Cos8t(c) => c.validate(),
            Experiment::JonesRate(c) => c.validate(),
        }
    }

    /// Parses JSON, applies `key=value` overrides (dotted paths, values read
    /// as JSON and otherwise as strings) and validates.
    pub fn from_json(text: &str, overrides: &[String]) -> Result<Self> {
        let value: Value = serde_json::from_str(text).map_err(|e| Error::Schema {
            path: format!("line {}", e.line()),
            message: e.to_string(),
        })?;
        Self::from_value(value, overrides)
    }

    pub fn from_value(mut value: Value, overrides: &[String]) -> Result<Self> {
        for o in overrides {
            apply_override(&mut value, o)?;
        }
        let cfg: Self = serde_path_to_error::deserialize(value).map_err(|e| Error::Schema {
            path: e.path().to_string(),
            message: e.inner().to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_value(&self) -> Value {
        serde_json::to_value(self).expect("config serializes")
    }
}

/// Sets `path=value` in a JSON object, creating intermediate objects.
pub fn apply_override(root: &mut Value, assignment: &str) -> Result<()> {
    let (path, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::invalid("set", format!("expected key=value, got `{assignment}`")))?;
    let path = path.trim();
    if path.is_empty() {
        return Err(Error::invalid("set", "empty key"));
    }
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut node = root;
    let keys: Vec<&str> = path.split('.').collect();
    for (i, key) in keys.iter().enumerate() {
        if !node.is_object() {
            if node.is_null() {
                *node = Value::Object(Default::default());
            } else {
                return Err(Error::invalid("set", format!("`{}` is not an object", keys[..i].join("."))));
            }
        }
        let map = node.as_object_mut().expect("checked above");
        if i + 1 == keys.len() {
            map.insert(key.to_string(), value);
            return Ok(());
        }
        node = map.entry(key.to_string()).or_insert(Value::Null);
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileRecord {
    /// Relative to the output directory.
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundsEntry {
    pub run: String,
    pub report: BoundsReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub config: ExperimentConfig,
    pub wall_clock_seconds: f64,
    pub files: Vec<FileRecord>,
    /// Box check of every simulated circuit.
    pub bounds: Vec<BoundsEntry>,
    /// All saturating genes stayed in their boxes.
    pub box_invariant: bool,
}

pub const MANIFEST_FILE: &str = "manifest.json";

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Collects artifacts in memory; written in one go when the run succeeds.
struct Artifacts {
    files: Vec<(String, Vec<u8>)>,
    bounds: Vec<BoundsEntry>,
}

impl Artifacts {
    fn new() -> Self {
        Self {
            files: Vec::new(),
            bounds: Vec::new(),
        }
    }

    fn text(&mut self, name: &str, body: String) {
        self.files.push((name.to_string(), body.into_bytes()));
    }

    fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut body = serde_json::to_string_pretty(value).map_err(|e| Error::Schema {
            path: name.to_string(),
            message: e.to_string(),
        })?;
        body.push('\n');
        self.text(name, body);
        Ok(())
    }

    fn circuit(&mut self, name: &str, c: &GeneCircuit) -> Result<()> {
        let body = c.to_json()?;
        self.text(name, body);
        Ok(())
    }

    fn bounds(&mut self, run: &str, report: &BoundsReport) {
        self.bounds.push(BoundsEntry {
            run: run.to_string(),
            report: report.clone(),
        });
    }
}

/// Runs the experiment, writes its artifacts and `manifest.json` into
/// `config.output_dir`, and returns the manifest.
pub fn run_experiment(config: &ExperimentConfig) -> Result<RunManifest> {
    config.validate().map_err(|e| e.in_stage("validate"))?;
    let start = Instant::now();
    let mut art = Artifacts::new();
    match &config.experiment {
        Experiment::RdMeinhardt(c) => run_rd(c, &mut art)?,
        Experiment::Transpile(c) => run_transpile(c, config.seed, &mut art)?,
        Experiment::Compile1d(c) => run_compile(c, 1, config.seed, &mut art)?,
        Experiment::Compile2d(c) => run_compile(c, 2, config.seed, &mut art)?,
        Experiment::Cos8t(c) => run_cos8t(c, config.seed, &mut art)?,
        Experiment::JonesRate(c) => {
            let rate = jones_rate(c, config.seed).map_err(|e| e.in_stage("fit"))?;
            let mut csv = String::from("m,final_rms\n");
            for (m, r) in rate.counts.iter().zip(&rate.final_rms) {
                let _ = writeln!(csv, "{m},{}", fmt_f64(*r));
            }
            art.text("rates.csv", csv);
            art.json("summary.json", &rate)?;
        }
    }

    let dir = &config.output_dir;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e).in_stage("write"))?;
    let mut files = Vec::with_capacity(art.files.len());
    for (name, body) in &art.files {
        let path = dir.join(name);
        std::fs::write(&path, body).map_err(|e| Error::io(&path, e).in_stage("write"))?;
        files.push(FileRecord {
            path: name.clone(),
            sha256: sha256_hex(body),
            bytes: body.len() as u64,
        });
    }
    let box_invariant = art.bounds.iter().all(|b| b.report.within_tolerance);
    let manifest = RunManifest {
        tool_version: TOOL_VERSION.to_string(),
        config: config.clone(),
        wall_clock_seconds: start.elapsed().as_secs_f64(),
        files,
        bounds: art.bounds,
        box_invariant,
    };
    let path = dir.join(MANIFEST_FILE);
    let body = serde_json::to_string_pretty(&manifest).expect("manifest serializes") + "\n";
    std::fs::write(&path, body).map_err(|e| Error::io(&path, e).in_stage("write"))?;
    Ok(manifest)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RdSummary {
    pub equilibrium: (f64, f64),
    pub dt: f64,
    pub final_interior_maxima: usize,
    /// Rightmost `x` with `u > 1.5u₀`, per stored frame.
    pub front_positions: Vec<Option<f64>>,
    pub front_non_decreasing: bool,
    pub realized_bounds: crate::rd::RealizedBounds,
}

pub fn summarize_rd(c: &RdConfig, tr: &RDTrajectory) -> Result<RdSummary> {
    let eq = equilibrium(&c.params)?;
    let level = 1.5 * eq.0;
    let fronts: Vec<Option<f64>> = tr.u.iter().map(|u| front_position(&tr.grid, u, level)).collect();
    let mono = fronts
        .windows(2)
        .all(|w| matches!((w[0], w[1]), (Some(a), Some(b)) if b >= a) || w[1].is_some() && w[0].is_none());
    Ok(RdSummary {
        equilibrium: eq,
        dt: c.step(&tr.grid),
        final_interior_maxima: count_interior_maxima(tr.final_u(), MAXIMA_TOL),
        front_positions: fronts,
        front_non_decreasing: mono,
        realized_bounds: tr.bounds,
    })
}

fn run_rd(c: &RdConfig, art: &mut Artifacts) -> Result<()> {
    let tr = c.run().map_err(|e| e.in_stage("simulate"))?;
    let summary = summarize_rd(c, &tr).map_err(|e| e.in_stage("summarize"))?;
    art.text("rd_trajectory.csv", tr.to_long_csv());
    art.json("summary.json", &summary)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranspileSummary {
    pub report: crate::transpile::TranspileReport,
    pub verify: crate::transpile::VerifyReport,
    pub genes: usize,
    pub circuit_interior_maxima: usize,
    pub rd_interior_maxima: usize,
    /// Fit sup errors relative to `sup |f|`, `sup |g|`.
    pub phi1_relative: f64,
    pub phi2_relative: f64,
}

fn run_transpile(c: &TranspileConfig, seed: u64, art: &mut Artifacts) -> Result<()> {
    let rd = c.rd.run().map_err(|e| e.in_stage("simulate-rd"))?;
    let domain = c.domain.unwrap_or(FitDomain {
        c1: c.domain_scale * rd.bounds.u_max,
        c2: c.domain_scale * rd.bounds.v_max,
    });
    let settings = TranspileSettings {
        m1: c.m1,
        m2: c.m2,
        search: SearchSettings {
            budget: c.budget,
            a_max: c.a_max,
        },
        seed,
        train_points: c.train_points,
        validation_points: c.validation_points,
        decay: c.decay,
    };
    let sys = c.rd.system();
    let (phi1, phi2, mut report) = fit_nonlinearities(&sys, domain, &settings).map_err(|e| e.in_stage("fit"))?;
    let spec = BlockCircuitSpec::from_sums(&phi1, &phi2, c.rd.d1, c.rd.d2, c.decay).map_err(|e| e.in_stage("assemble"))?;
    let circuit = assemble_block_circuit(&spec).map_err(|e| e.in_stage("assemble"))?;
    let grid = c.rd.grid()?;
    let (u0, v0) = left_perturbation(&grid, &c.rd.params)?;
    let init = matched_initial_state(&spec, &u0, &v0).map_err(|e| e.in_stage("initial-state"))?;
    let dt = c.rd.dt.unwrap_or_else(|| stable_step(c.rd.t_end, circuit.dt_bound(&grid).0));
    let steps = (c.rd.t_end / dt).round() as usize;
    let cmp = verify_transpile(&spec, &phi1, &phi2, &grid, c.rd.t_end, dt, (steps / c.rd.frames).max(1), Some(&init))
        .map_err(|e| e.in_stage("verify"))?;
    report.verification_error = Some(cmp.report.error);

    let pts = grid.points();
    let mut csv = String::from("t,x,u_circuit,v_circuit,u_direct,v_direct\n");
    for (k, &t) in cmp.times.iter().enumerate() {
        for (p, pt) in pts.iter().enumerate() {
            let _ = writeln!(
                csv,
                "{},{},{},{},{},{}",
                fmt_f64(t),
                fmt_f64(pt.x1),
                fmt_f64(cmp.circuit_u[k][p]),
                fmt_f64(cmp.circuit_v[k][p]),
                fmt_f64(cmp.direct_u[k][p]),
                fmt_f64(cmp.direct_v[k][p])
            );
        }
    }
    let summary = TranspileSummary {
        phi1_relative: report.phi1.train_sup / report.phi1.target_sup,
        phi2_relative: report.phi2.train_sup / report.phi2.target_sup,
        report,
        verify: cmp.report.clone(),
        genes: circuit.m,
        circuit_interior_maxima: count_interior_maxima(cmp.circuit_u.last().expect("frames"), MAXIMA_TOL),
        rd_interior_maxima: count_interior_maxima(rd.final_u(), MAXIMA_TOL),
    };
    art.bounds("transpiled", &cmp.bounds);
    art.circuit("circuit.json", &circuit)?;
    art.json("nonlinearities.json", &(phi1, phi2))?;
    art.text("fields.csv", csv);
    art.text("rd_trajectory.csv", rd.to_long_csv());
    art.json("summary.json", &summary)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompileSummary {
    pub target: String,
    pub genes: usize,
    pub lambda: f64,
    pub kappa: f64,
    pub fit: crate::fit::FitReport,
    pub report: crate::pattern::PatternReport,
    /// `sup_error / target_range`.
    pub relative_error: f64,
}

pub fn pattern_csv(run: &PatternRun) -> String {
    let pts = run.grid.points();
    let two = run.grid.dim() == 2;
    let mut csv = String::from(if two { "t,x1,x2,decoded,target\n" } else { "t,x,decoded,target\n" });
    for (k, &t) in run.times.iter().enumerate() {
        for (p, pt) in pts.iter().enumerate() {
            let _ = write!(csv, "{},{}", fmt_f64(t), fmt_f64(pt.x1));
            if two {
                let _ = write!(csv, ",{}", fmt_f64(pt.x2));
            }
            let _ = writeln!(csv, ",{},{}", fmt_f64(run.decoded[k][p]), fmt_f64(run.target[k][p]));
        }
    }
    csv
}

fn run_compile(c: &CompileSetup, dim: usize, seed: u64, art: &mut Artifacts) -> Result<()> {
    let e = c.validate(dim)?;
    let z = move |t: f64, x1: f64, x2: f64| e.eval(&Env::at(t, x1, x2));
    let grid = c.grid(dim)?;
    let cfg = c.compile_config(seed);
    let compiled = if dim == 1 {
        compile_pattern_1d(&z, &c.profile(0), &grid, &cfg)
    } else {
        compile_pattern_2d(&z, &c.profile(0), &c.profile(1), &grid, &cfg)
    }
    .map_err(|e| e.in_stage("compile"))?;
    let run = verify_pattern(&compiled, &z, &grid, c.frames).map_err(|e| e.in_stage("verify"))?;
    let summary = CompileSummary {
        target: c.target.clone(),
        genes: compiled.circuit.m,
        lambda: compiled.lambda,
        kappa: compiled.kappa,
        fit: compiled.fit.clone(),
        relative_error: run.report.sup_error / run.report.target_range,
        report: run.report.clone(),
    };
    art.bounds("compiled", &run.bounds);
    art.circuit("circuit.json", &compiled.circuit)?;
    art.text("decoded.csv", pattern_csv(&run));
    art.json("summary.json", &summary)
}

fn signal_csv(run: &SignalRun, target: impl Fn(f64) -> f64) -> String {
    let mut csv = String::from("t,output,target\n");
    for (t, y) in run.times.iter().zip(&run.output) {
        let _ = writeln!(csv, "{},{},{}", fmt_f64(*t), fmt_f64(*y), fmt_f64(target(*t)));
    }
    csv
}

fn run_cos8t(c: &Cos8tConfig, seed: u64, art: &mut Artifacts) -> Result<()> {
    let s = c.settings();
    let seeds: Vec<u64> = (0..c.trials as u64).map(|k| seed + k).collect();
    let cmp = compare_cos8t(c.m, c.m1, c.m2, &s, &seeds, c.frames).map_err(|e| e.in_stage("compare"))?;
    let target = |t: f64| (8.0 * t).cos();
    let direct = build_direct_cos8t(c.m, &s, seed).map_err(|e| e.in_stage("direct"))?;
    let indirect = build_indirect_cos8t(c.m1, c.m2, &s, seed).map_err(|e| e.in_stage("indirect"))?;
    let rd = simulate_signal(&direct, target, TAU, 0.0, c.frames).map_err(|e| e.in_stage("simulate"))?;
    let ri = simulate_signal(&indirect, target, TAU, 0.0, c.frames).map_err(|e| e.in_stage("simulate"))?;
    art.bounds("direct", &rd.bounds);
    art.bounds("indirect", &ri.bounds);
    art.circuit("direct.json", &direct.circuit)?;
    art.circuit("indirect.json", &indirect.circuit)?;
    art.text("direct.csv", signal_csv(&rd, target));
    art.text("indirect.csv", signal_csv(&ri, target));
    art.json("comparison.json", &cmp)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyOutcome {
    pub files_checked: usize,
    /// Files whose digest differs from the manifest, or that are missing.
    pub mismatches: Vec<String>,
    /// Files whose digest differs after re-running the configuration.
    pub rerun_mismatches: Option<Vec<String>>,
}

impl VerifyOutcome {
    pub fn ok(&self) -> bool {
        self.mismatches.is_empty() && self.rerun_mismatches.as_ref().map_or(true, |m| m.is_empty())
    }
}

pub fn load_manifest(path: &Path) -> Result<RunManifest> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut de = serde_json::Deserializer::from_str(&text);
    serde_path_to_error::deserialize(&mut de).map_err(|e| Error::Schema {
        path: e.path().to_string(),
        message: e.inner().to_string(),
    })
}

/// Re-hashes the files of the manifest at `path`; with `rerun_into`, also
/// re-runs its configuration into that directory and compares digests.
pub fn verify_manifest(path: &Path, rerun_into: Option<&Path>) -> Result<VerifyOutcome> {
    let manifest = load_manifest(path)?;
    let dir = path.parent().unwrap_or(Path::new("."));
    let mut mismatches = Vec::new();
    for f in &manifest.files {
        match std::fs::read(dir.join(&f.path)) {
            Ok(bytes) if sha256_hex(&bytes) == f.sha256 => {}
            _ => mismatches.push(f.path.clone()),
        }
    }
    let rerun_mismatches = match rerun_into {
        Some(out) => {
            let mut cfg = manifest.config.clone();
            cfg.output_dir = out.to_path_buf();
            let again = run_experiment(&cfg)?;
            let mut diff = Vec::new();
            for f in &manifest.files {
                if !again.files.iter().any(|g| g.path == f.path && g.sha256 == f.sha256) {
                    diff.push(f.path.clone());
                }
            }
            Some(diff)
        }
        None => None,
    };
    Ok(VerifyOutcome {
        files_checked: manifest.files.len(),
        mismatches,
        rerun_mismatches,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides_create_and_replace() {
        let mut v = serde_json::json!({"experiment": {"kind": "cos8t"}});
        apply_override(&mut v, "experiment.m=60").unwrap();
        apply_override(&mut v, "seed=3").unwrap();
        apply_override(&mut v, "output_dir=runs/a").unwrap();
        assert_eq!(v["experiment"]["m"], 60);
        assert_eq!(v["seed"], 3);
        assert_eq!(v["output_dir"], "runs/a");
        assert!(apply_override(&mut v, "seed").is_err());
        assert!(apply_override(&mut v, "seed.x=1").is_err());
    }

    #[test]
    fn unknown_fields_rejected_with_path() {
        let text = r#"{"experiment": {"kind": "jones-rate", "budgte": 10}}"#;
        match ExperimentConfig::from_json(text, &[]) {
            Err(Error::Schema { path, .. }) => assert!(path.contains("experiment"), "{path}"),
            other => panic!("{other:?}"),
        }
        let top = r#"{"experiment": {"kind": "cos8t"}, "colour": 1}"#;
        assert!(matches!(ExperimentConfig::from_json(top, &[]), Err(Error::Schema { .. })));
    }

    #[test]
    fn late_start_names_t0() {
        let text = r#"{"experiment": {"kind": "compile-1d"}}"#;
        let err = ExperimentConfig::from_json(text, &["experiment.T0=2".into()]).unwrap_err();
        assert!(matches!(err, Error::Invalid { ref field, .. } if field == "T0"), "{err}");
    }

    #[test]
    fn defaults_round_trip() {
        for kind in ["rd-meinhardt", "transpile", "compile-1d", "compile-2d", "cos8t", "jones-rate"] {
            let cfg = ExperimentConfig::new(Experiment::default_of(kind).unwrap());
            cfg.validate().unwrap();
            let back = ExperimentConfig::from_value(cfg.to_value(), &[]).unwrap();
            assert_eq!(back, cfg);
            assert_eq!(back.experiment.kind(), kind);
        }
        assert!(Experiment::default_of("nope").is_err());
    }

    #[test]
    fn slope_of_a_power_law() {
        let xs: Vec<f64> = [1.0f64, 2.0, 4.0, 8.0].iter().map(|x| x.ln()).collect();
        let ys: Vec<f64> = [1.0f64, 2.0, 4.0, 8.0].iter().map(|x| (3.0 / x).ln()).collect();
        assert!((regression_slope(&xs, &ys) + 1.0).abs() < 1e-12);
    }
}
