//! Acceptance run: one PASS/FAIL line per criterion.
//!
//! Usage: `cargo test --test acceptance [-- N ...]` runs all criteria or the
//! listed numbers. With `ACCEPTANCE_STRICT=1` the process exits non-zero when
//! any criterion fails.

use std::f64::consts::TAU;
use std::time::Instant;

use morphonet::circuit::BoundsReport;
use morphonet::experiment::{run_experiment, summarize_rd, Experiment, ExperimentConfig, JonesRateConfig, RdConfig, MAXIMA_TOL};
use morphonet::expr::Expr;
use morphonet::pattern::{
    clock_values, compile_pattern_1d_nested, compile_pattern_2d_nested, recover_coords_1d, recover_coords_2d, verify_pattern, CompileConfig,
    ThresholdProfile,
};
use morphonet::rd::{count_interior_maxima, left_perturbation, meinhardt_f, meinhardt_g, simulate_rd, MeinhardtParams, RDSystem};
use morphonet::superposition::{compare_cos8t, design_tracker, median, simulate_tracker, Cos8tSettings, Signal};
use morphonet::transpile::{fit_nonlinearities, matched_initial_state, verify_transpile, BlockCircuitSpec, FitDomain, TranspileSettings};
use morphonet::{sigma, Field, Grid};

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: String) -> Verdict {
    Verdict { pass, detail }
}

/// Box reports gathered from every circuit simulated by the run.
#[derive(Default)]
struct Ledger {
    boxes: Vec<(String, BoundsReport)>,
    /// Final interior-maximum count of the front-propagation run, shared with criterion 4.
    rd_maxima: Option<usize>,
}

impl Ledger {
    fn record(&mut self, run: impl Into<String>, b: &BoundsReport) {
        self.boxes.push((run.into(), b.clone()));
    }
}

/// Budget of criteria 1, 6 and 7.
const FAST_SECONDS: f64 = 1.0;
// criterion 1
const EQUILIBRIUM_TOL: f64 = 1e-14;
const DRIFT_TOL: f64 = 1e-10;
// criterion 2
const FIG1_MIN_MAXIMA: usize = 3;
const FIG1_SECONDS: f64 = 60.0;
// criterion 3
const TRANSPILE_TOL: f64 = 1e-6;
const TRANSPILE_T: f64 = 200.0;
const TRANSPILE_SECONDS: f64 = 300.0;
// criterion 4
const FIT_RELATIVE_TOL: f64 = 0.05;
// criterion 5
const JONES_SLOPE: f64 = -0.7;
const JONES_SECONDS: f64 = 120.0;
// criterion 6
const ROUND_TRIP_TOL: f64 = 1e-9;
const IDENTITY_TOL: f64 = 1e-12;
// criterion 7
const TRACKER_SLACK: f64 = 1e-6;
// criterion 8
const PATTERN_RELATIVE_TOL: f64 = 0.05;
const PATTERN_SECONDS: f64 = 600.0;
// criterion 9
const COS8T_SECONDS: f64 = 120.0;
// criterion 10
const BOX_TOL: f64 = 1e-9;

/// Transpiled Meinhardt setup shared by criteria 3 and 4.
const TRANSPILE_GRID_POINTS: usize = 61;
const TRANSPILE_DOMAIN: FitDomain = FitDomain { c1: 3.0, c2: 3.0 };
const TRANSPILE_DT: f64 = 2.5e-3;

fn main() {
    let wanted: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let run = |n: usize| wanted.is_empty() || wanted.contains(&n);
    let mut ledger = Ledger::default();
    let mut results = Vec::new();
    let criteria: [(usize, &str, fn(&mut Ledger) -> Verdict); 11] = [
        (1, "Meinhardt equilibrium", c1_equilibrium),
        (2, "front propagation", c2_front),
        (3, "transpiler exactness", c3_transpile_exact),
        (4, "transpiled pattern", c4_transpiled_pattern),
        (5, "Jones rate", c5_jones_rate),
        (6, "coordinate recovery", c6_recovery),
        (7, "tracking bound", c7_tracker),
        (8, "pattern compilation", c8_patterns),
        (9, "cos 8t ordering", c9_cos8t),
        (10, "box invariant", c10_boxes),
        (11, "determinism", c11_determinism),
    ];
    for (n, name, f) in criteria {
        // the box check reads what the other criteria simulated
        if !run(n) && !(n == 10 && wanted.is_empty()) {
            continue;
        }
        let start = Instant::now();
        let v = f(&mut ledger);
        let secs = start.elapsed().as_secs_f64();
        println!(
            "criterion {n:>2} [{name}]: {} | {} | {secs:.1} s",
            if v.pass { "PASS" } else { "FAIL" },
            v.detail
        );
        results.push(v.pass);
    }
    let passed = results.iter().filter(|&&p| p).count();
    println!("acceptance: {passed}/{} criteria passed", results.len());
    if std::env::var("ACCEPTANCE_STRICT").is_ok_and(|v| v == "1") && passed < results.len() {
        std::process::exit(1);
    }
}

fn c1_equilibrium(_: &mut Ledger) -> Verdict {
    let start = Instant::now();
    let p = MeinhardtParams::default();
    let (f, g) = (meinhardt_f(0.5, 0.625, &p), meinhardt_g(0.5, 0.625, &p));
    let grid = Grid::line(0.0, 60.0, 601).unwrap();
    let u0 = Field::constant(grid, 0.5);
    let v0 = Field::constant(grid, 0.625);
    let tr = simulate_rd(&RDSystem::meinhardt(1.0, 50.0, p), &u0, &v0, 10.0, 2.5e-5, 400_000).unwrap();
    let drift = tr
        .final_u()
        .iter()
        .map(|u| (u - 0.5).abs())
        .chain(tr.final_v().iter().map(|v| (v - 0.625).abs()))
        .fold(0.0f64, f64::max);
    let secs = start.elapsed().as_secs_f64();
    verdict(
        f.abs() <= EQUILIBRIUM_TOL && g.abs() <= EQUILIBRIUM_TOL && drift < DRIFT_TOL && secs < FAST_SECONDS,
        format!("|f| = {:.1e}, |g| = {:.1e}, drift over T=10 = {drift:.1e}", f.abs(), g.abs()),
    )
}

fn c2_front(ledger: &mut Ledger) -> Verdict {
    let cfg = RdConfig::default();
    let start = Instant::now();
    let grid = Grid::line(0.0, cfg.length, cfg.points).unwrap();
    let (u0, v0) = left_perturbation(&grid, &cfg.params).unwrap();
    let dt = 2.5e-5;
    let tr = simulate_rd(&RDSystem::meinhardt(cfg.d1, cfg.d2, cfg.params), &u0, &v0, cfg.t_end, dt, 400_000).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let s = summarize_rd(&cfg, &tr).unwrap();
    ledger.rd_maxima = Some(s.final_interior_maxima);
    verdict(
        s.final_interior_maxima >= FIG1_MIN_MAXIMA && s.front_non_decreasing && secs < FIG1_SECONDS,
        format!(
            "{} interior maxima at T=500, front non-decreasing: {}, simulation {secs:.1} s at 601 points",
            s.final_interior_maxima, s.front_non_decreasing
        ),
    )
}

fn transpile_fit() -> (morphonet::SigmoidSum, morphonet::SigmoidSum, morphonet::transpile::TranspileReport, BlockCircuitSpec) {
    let sys = RDSystem::meinhardt(1.0, 50.0, MeinhardtParams::default());
    let settings = TranspileSettings {
        seed: 0,
        ..TranspileSettings::default()
    };
    let (p1, p2, report) = fit_nonlinearities(&sys, TRANSPILE_DOMAIN, &settings).unwrap();
    let spec = BlockCircuitSpec::from_sums(&p1, &p2, 1.0, 50.0, settings.decay).unwrap();
    (p1, p2, report, spec)
}

fn transpile_init(spec: &BlockCircuitSpec, grid: &Grid) -> Vec<f64> {
    let (u0, v0) = left_perturbation(grid, &MeinhardtParams::default()).unwrap();
    matched_initial_state(spec, &u0, &v0).unwrap()
}

fn c3_transpile_exact(ledger: &mut Ledger) -> Verdict {
    let start = Instant::now();
    let (p1, p2, _, spec) = transpile_fit();
    let grid = Grid::line(0.0, 60.0, TRANSPILE_GRID_POINTS).unwrap();
    let init = transpile_init(&spec, &grid);
    let coarse = verify_transpile(&spec, &p1, &p2, &grid, TRANSPILE_T, TRANSPILE_DT, 4000, Some(&init)).unwrap();
    let fine = verify_transpile(&spec, &p1, &p2, &grid, TRANSPILE_T, 0.5 * TRANSPILE_DT, 8000, Some(&init)).unwrap();
    ledger.record("transpiled, dt", &coarse.bounds);
    ledger.record("transpiled, dt/2", &fine.bounds);
    let secs = start.elapsed().as_secs_f64();
    let (e1, e2) = (coarse.report.error, fine.report.error);
    verdict(
        e1 <= TRANSPILE_TOL && e2 < e1 && secs < TRANSPILE_SECONDS,
        format!(
            "{} genes, sup error {e1:.2e} at dt={TRANSPILE_DT}, {e2:.2e} at dt/2 (must decrease), {secs:.0} s",
            spec.m1 + spec.m2
        ),
    )
}

fn c4_transpiled_pattern(ledger: &mut Ledger) -> Verdict {
    let (p1, p2, report, spec) = transpile_fit();
    let grid = Grid::line(0.0, 60.0, TRANSPILE_GRID_POINTS).unwrap();
    let init = transpile_init(&spec, &grid);
    let cmp = verify_transpile(&spec, &p1, &p2, &grid, 500.0, TRANSPILE_DT, 20_000, Some(&init)).unwrap();
    ledger.record("transpiled, T=500", &cmp.bounds);
    let count = count_interior_maxima(cmp.circuit_u.last().unwrap(), MAXIMA_TOL);
    let rd = ledger.rd_maxima.unwrap_or_else(|| {
        let mut dummy = Ledger::default();
        c2_front(&mut dummy);
        dummy.rd_maxima.unwrap()
    });
    let rel = |e: &morphonet::transpile::FitErrors| e.train_sup.max(e.validation_sup) / e.target_sup;
    let (r1, r2) = (rel(&report.phi1), rel(&report.phi2));
    verdict(
        count.abs_diff(rd) <= 1 && r1 <= FIT_RELATIVE_TOL && r2 <= FIT_RELATIVE_TOL,
        format!(
            "circuit has {count} interior maxima vs {rd} in the RD run; fit sup/sup|f| = {r1:.3}, sup/sup|g| = {r2:.3} on [0,3]x[0,3]"
        ),
    )
}

fn c5_jones_rate(_: &mut Ledger) -> Verdict {
    let start = Instant::now();
    let rate = morphonet::experiment::jones_rate(&JonesRateConfig::default(), 0).unwrap();
    let secs = start.elapsed().as_secs_f64();
    verdict(
        rate.slope <= JONES_SLOPE && secs < JONES_SECONDS,
        format!("slope of log rms^2 vs log m over m = 4..128 is {:.3}", rate.slope),
    )
}

fn c6_recovery(_: &mut Ledger) -> Verdict {
    let start = Instant::now();
    let kappa = 4.0;
    let margin = 1e-3;
    let th1 = ThresholdProfile::default_ramp(0.0, 1.0);
    let th2 = ThresholdProfile::Linear { a: -0.8, b: 1.3 };
    let lattice = |i: usize, lo: f64, hi: f64| lo + (hi - lo) * i as f64 / 19.0;
    let (mut worst, mut identity, mut skipped, mut checked) = (0.0f64, 0.0f64, 0, 0);
    for i in 0..20 {
        let t = lattice(i, 0.05, 1.0);
        for j in 0..20 {
            let x = lattice(j, 0.0, 1.0);
            let s = sigma(th1.eval(x));
            let (y1, yb) = clock_values(s, kappa, t);
            identity = identity.max((y1 * y1 / (2.0 * y1 - yb) - s).abs());
            match recover_coords_1d(y1, yb, kappa, &th1, (0.0, 1.0), margin) {
                Ok((tr, xr)) => {
                    worst = worst.max((tr - t).abs()).max((xr - x).abs());
                    checked += 1;
                }
                Err(_) => skipped += 1,
            }
            for k in 0..20 {
                let x2 = lattice(k, 0.0, 1.0);
                let s2 = sigma(th2.eval(x2));
                let (y2, _) = clock_values(s2, kappa, t);
                match recover_coords_2d(y1, y2, yb, kappa, &th1, &th2, [(0.0, 1.0), (0.0, 1.0)], margin) {
                    Ok((tr, a, b)) => {
                        worst = worst.max((tr - t).abs()).max((a - x).abs()).max((b - x2).abs());
                        checked += 1;
                    }
                    Err(_) => skipped += 1,
                }
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    verdict(
        worst <= ROUND_TRIP_TOL && identity <= IDENTITY_TOL && checked > 0 && secs < FAST_SECONDS,
        format!("round trip {worst:.1e} over {checked} points ({skipped} inside the margin), identity {identity:.1e}"),
    )
}

fn c7_tracker(_: &mut Ledger) -> Verdict {
    let start = Instant::now();
    let d = design_tracker(Signal::expr(Expr::parse("cos(t)").unwrap()), 1e-3, 0.1).unwrap();
    let run = simulate_tracker(&d, TAU, TAU / 6000.0).unwrap();
    let secs = start.elapsed().as_secs_f64();
    verdict(
        run.excess <= TRACKER_SLACK && secs < FAST_SECONDS,
        format!(
            "lambda = {:.2}, max(|X-z| - |z(0)|e^(-lambda t)) = {:.1e}, sup_(t>=delta)|X-z| = {:.1e}",
            d.lambda, run.excess, run.sup_after_delta
        ),
    )
}

type Target = Box<dyn Fn(f64, f64, f64) -> f64>;

fn c8_patterns(ledger: &mut Ledger) -> Verdict {
    let start = Instant::now();
    let counts = [100, 300, 1000];
    let seeds = 0..5u64;
    let ramp = ThresholdProfile::default_ramp(0.0, 1.0);
    let targets: [(&str, Target, Grid); 3] = [
        (
            "0.1(sin 8t + sin 16t)",
            Box::new(|t, _, _| 0.1 * ((8.0 * t).sin() + (16.0 * t).sin())),
            Grid::line(0.0, 1.0, 11).unwrap(),
        ),
        (
            "0.025(1 + tanh(10t - 0.5)) sin 8x",
            Box::new(|t, x, _| 0.025 * (1.0 + (10.0 * t - 0.5).tanh()) * (8.0 * x).sin()),
            Grid::line(0.0, 1.0, 41).unwrap(),
        ),
        (
            "0.01((x1 - 0.5)^2 - (x2 - 0.5)^2)",
            Box::new(|_, a, b| 0.01 * ((a - 0.5).powi(2) - (b - 0.5).powi(2))),
            Grid::rect((0.0, 1.0, 11), (0.0, 1.0, 11)).unwrap(),
        ),
    ];
    let mut pass = true;
    let mut parts = Vec::new();
    for (name, z, grid) in &targets {
        // relative sup errors per count, per seed
        let mut rel = vec![Vec::new(); counts.len()];
        for seed in seeds.clone() {
            let cfg = CompileConfig {
                seed,
                ..CompileConfig::default()
            };
            let compiled = if grid.dim() == 1 {
                compile_pattern_1d_nested(z.as_ref(), &ramp, grid, &cfg, &counts)
            } else {
                compile_pattern_2d_nested(z.as_ref(), &ramp, &ramp, grid, &cfg, &counts)
            }
            .unwrap();
            for (k, p) in compiled.iter().enumerate() {
                let run = verify_pattern(p, z.as_ref(), grid, 100).unwrap();
                ledger.record(format!("pattern {name}, m={}, seed {seed}", counts[k]), &run.bounds);
                rel[k].push(run.report.sup_error / run.report.target_range);
            }
        }
        let medians: Vec<f64> = rel.iter().map(|r| median(r)).collect();
        let worst_full = rel[counts.len() - 1].iter().cloned().fold(0.0f64, f64::max);
        let monotone = medians.windows(2).all(|w| w[1] <= w[0]);
        pass &= worst_full <= PATTERN_RELATIVE_TOL && monotone;
        parts.push(format!(
            "{name}: worst m=1000 error {:.1}% of range, medians {}",
            100.0 * worst_full,
            medians.iter().map(|m| format!("{:.1}%", 100.0 * m)).collect::<Vec<_>>().join(" / ")
        ));
    }
    let secs = start.elapsed().as_secs_f64();
    verdict(pass && secs < PATTERN_SECONDS, parts.join("; "))
}

fn c9_cos8t(ledger: &mut Ledger) -> Verdict {
    let start = Instant::now();
    let s = Cos8tSettings::default();
    let cmp = compare_cos8t(50, 32, 5, &s, &[0, 1, 2, 3, 4], 2000).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let direct = morphonet::superposition::build_direct_cos8t(50, &s, 0).unwrap();
    let flagged = direct.circuit.exempt_genes();
    let run = morphonet::superposition::simulate_signal(&direct, |t| (8.0 * t).cos(), TAU, s.delta, 200).unwrap();
    ledger.record("cos8t direct", &run.bounds);
    let c = &cmp.complexity;
    verdict(
        cmp.median_indirect < cmp.median_direct && secs < COS8T_SECONDS,
        format!(
            "median RMS direct {:.3e}, indirect {:.3e} ({} vs {} equations); complexity {:.2} vs conditional {:.2}; integrator genes flagged: {:?}",
            cmp.median_direct, cmp.median_indirect, c.equations_direct, c.equations_indirect, c.target, c.conditional, flagged
        ),
    )
}

fn c10_boxes(ledger: &mut Ledger) -> Verdict {
    if ledger.boxes.is_empty() {
        return verdict(false, "no circuit runs recorded".into());
    }
    let worst = ledger
        .boxes
        .iter()
        .max_by(|a, b| a.1.max_violation.total_cmp(&b.1.max_violation))
        .unwrap();
    let all = ledger.boxes.iter().all(|(_, b)| b.max_violation <= BOX_TOL);
    let exempt: usize = ledger.boxes.iter().filter(|(_, b)| !b.exempt_genes.is_empty()).count();
    verdict(
        all,
        format!(
            "{} circuit runs checked at every step, largest excursion {:.1e} ({}), {} runs with flagged non-saturating genes",
            ledger.boxes.len(),
            worst.1.max_violation,
            worst.0,
            exempt
        ),
    )
}

fn c11_determinism(ledger: &mut Ledger) -> Verdict {
    let base = tempfile::tempdir().unwrap();
    let mut configs = Vec::new();
    for kind in ["jones-rate", "compile-1d", "cos8t"] {
        let mut v = ExperimentConfig::new(Experiment::default_of(kind).unwrap()).to_value();
        v["seed"] = 1.into();
        match kind {
            "compile-1d" => v["experiment"]["m"] = 100.into(),
            "cos8t" => v["experiment"]["trials"] = 1.into(),
            _ => {}
        }
        configs.push(ExperimentConfig::from_value(v, &[]).unwrap());
    }
    let mut same = true;
    let mut files = 0;
    for cfg in configs {
        let mut hashes = Vec::new();
        for rep in 0..2 {
            let mut c = cfg.clone();
            c.output_dir = base.path().join(format!("{}-{rep}", cfg.experiment.kind()));
            let m = run_experiment(&c).unwrap();
            for b in &m.bounds {
                ledger.record(format!("{} experiment, {}", cfg.experiment.kind(), b.run), &b.report);
            }
            hashes.push(m.files);
        }
        files += hashes[0].len();
        same &= hashes[0] == hashes[1];
    }
    verdict(same, format!("{files} artifacts from jones-rate, compile-1d and cos8t runs hash-identical on re-run"))
}
