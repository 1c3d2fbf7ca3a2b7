//! Composition of circuits through a fitted hidden layer, the tracking bound,
//! and the direct and indirect `cos(8t)` networks.
//!
//! A composed circuit keeps every member block unchanged and adds hidden genes
//! `v_k' = λ(β_k σ(Σ_j M_kj Y^j − η_k) − v_k)` that read the members' output
//! genes, followed by one output gene relaxing at rate `λ` towards
//! `σ(Σ_k v_k)` or `Σ_k v_k`.

use std::f64::consts::TAU;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::circuit::{simulate_circuit_with, BoundsReport, GeneCircuit, GeneKind, Interaction, SimOptions, Threshold};
use crate::error::{Error, Result};
use crate::expr::{Env, Expr, Var};
use crate::fit::{jones_fit, random_fit_1d, FitReport, SearchSettings, TrainingSet};
use crate::grid::Grid;
use crate::pattern::{even_step, Normalization};
use crate::sigmoid::{sigma, sigma_inverse, SigmoidSum};
use crate::spectrum::{complexity, periodic_points};

/// Step used for central differences of closure signals.
const DIFF_STEP: f64 = 1e-5;

/// Unit-weight ranges tried by the one-dimensional stage fits.
pub const STAGE_A_MAX: [f64; 4] = [1.0, 3.0, 10.0, 30.0];

/// A scalar time signal `z(t)`.
pub enum Signal {
    /// Parsed expression in `t` with its symbolic derivative.
    Expr { z: Expr, dz: Expr },
    /// Arbitrary function; differentiated by central differences.
    Function(Box<dyn Fn(f64) -> f64 + Send + Sync>),
}

impl Signal {
    pub fn expr(z: Expr) -> Self {
        let dz = z.derivative(Var::T);
        Signal::Expr { z, dz }
    }

    pub fn function(f: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        Signal::Function(Box::new(f))
    }

    pub fn value(&self, t: f64) -> f64 {
        match self {
            Signal::Expr { z, .. } => z.eval(&Env::at(t, 0.0, 0.0)),
            Signal::Function(f) => f(t),
        }
    }

    pub fn derivative(&self, t: f64) -> f64 {
        match self {
            Signal::Expr { dz, .. } => dz.eval(&Env::at(t, 0.0, 0.0)),
            Signal::Function(f) => (f(t + DIFF_STEP) - f(t - DIFF_STEP)) / (2.0 * DIFF_STEP),
        }
    }
}

impl fmt::Debug for Signal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Signal::Expr { z, .. } => write!(f, "Signal({z})"),
            Signal::Function(_) => f.write_str("Signal(<function>)"),
        }
    }
}

/// Source `w = z' + λz` driving `X' = −λX + w`, `X(0) = 0`, so that
/// `X − z = −z(0)e^{−λt}`.
#[derive(Debug)]
pub struct TrackerDesign {
    pub lambda: f64,
    pub epsilon: f64,
    pub delta: f64,
    /// `−log(ε/|z(0)|)/δ`, or `None` when it imposes nothing.
    pub rate_bound: Option<f64>,
    pub signal: Signal,
}

impl TrackerDesign {
    pub fn w(&self, t: f64) -> f64 {
        self.signal.derivative(t) + self.lambda * self.signal.value(t)
    }

    pub fn z0(&self) -> f64 {
        self.signal.value(0.0)
    }
}

/// Rate `1.1×` the tracking bound. When `|z(0)| ≤ ε` the bound is not
/// positive and `λ = 1/δ` is used.
pub fn design_tracker(signal: Signal, epsilon: f64, delta: f64) -> Result<TrackerDesign> {
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(Error::invalid("epsilon", "must be positive"));
    }
    if !(delta > 0.0 && delta.is_finite()) {
        return Err(Error::invalid("delta", "must be positive"));
    }
    let z0 = signal.value(0.0);
    if !z0.is_finite() {
        return Err(Error::invalid("z", "z(0) is not finite"));
    }
    let bound = -(epsilon / z0.abs()).ln() / delta;
    let (lambda, rate_bound) = if bound > 0.0 { (1.1 * bound, Some(bound)) } else { (1.0 / delta, None) };
    Ok(TrackerDesign {
        lambda,
        epsilon,
        delta,
        rate_bound,
        signal,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackerRun {
    pub times: Vec<f64>,
    pub x: Vec<f64>,
    pub z: Vec<f64>,
    /// `max_t (|X − z| − |z(0)|e^{−λt})`
    pub excess: f64,
    /// `max_{t ≥ δ} |X − z|`
    pub sup_after_delta: f64,
}

/// Integrates the tracker with classical RK4 from `X(0) = 0`.
pub fn simulate_tracker(design: &TrackerDesign, t_end: f64, dt: f64) -> Result<TrackerRun> {
    let steps = crate::rd::step_count(t_end, dt)?;
    let lam = design.lambda;
    let f = |t: f64, x: f64| design.w(t) - lam * x;
    let z0 = design.z0().abs();
    let mut x = 0.0;
    let mut times = Vec::with_capacity(steps + 1);
    let mut xs = Vec::with_capacity(steps + 1);
    let mut zs = Vec::with_capacity(steps + 1);
    let (mut excess, mut sup) = (f64::NEG_INFINITY, 0.0f64);
    for step in 0..=steps {
        let t = step as f64 * dt;
        if step > 0 {
            let t0 = t - dt;
            let k1 = f(t0, x);
            let k2 = f(t0 + 0.5 * dt, x + 0.5 * dt * k1);
            let k3 = f(t0 + 0.5 * dt, x + 0.5 * dt * k2);
            let k4 = f(t, x + dt * k3);
            x += dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
            if !x.is_finite() {
                return Err(Error::BlowUp { step, component: 0 });
            }
        }
        let z = design.signal.value(t);
        let e = (x - z).abs();
        excess = excess.max(e - z0 * (-lam * t).exp());
        if t >= design.delta {
            sup = sup.max(e);
        }
        times.push(t);
        xs.push(x);
        zs.push(z);
    }
    Ok(TrackerRun {
        times,
        x: xs,
        z: zs,
        excess,
        sup_after_delta: sup,
    })
}

/// Form of the composed output gene.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OutputShape {
    /// `Y' = λσ(Σ v_k) − λY`; the hidden layer fits `σ⁻¹` of the normalized target.
    Sigmoid,
    /// `Y' = λ(Σ v_k − Y)`; the hidden layer fits the target itself.
    Linear,
}

#[derive(Debug, Clone)]
pub struct CompositionSpec {
    pub members: Vec<GeneCircuit>,
    /// Expression in `u1 … up`, one input per member output.
    pub f: Expr,
    pub m0: usize,
    pub lambda: f64,
    pub delta: f64,
    pub t_end: f64,
    pub output: OutputShape,
    /// Time frames sampled per member run for the fit.
    pub sample_times: usize,
}

impl CompositionSpec {
    pub fn new(members: Vec<GeneCircuit>, f: Expr, m0: usize, lambda: f64, delta: f64, t_end: f64) -> Self {
        Self {
            members,
            f,
            m0,
            lambda,
            delta,
            t_end,
            output: OutputShape::Sigmoid,
            sample_times: 200,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.members.is_empty() {
            return Err(Error::invalid("members", "need at least one member circuit"));
        }
        for (s, c) in self.members.iter().enumerate() {
            c.validate().map_err(|e| Error::invalid(format!("members[{s}]"), e.to_string()))?;
        }
        let p = self.members.len();
        if self.f.uses(Var::T) || self.f.uses(Var::X1) || self.f.uses(Var::X2) {
            return Err(Error::Expression("a composition may only use u1 … up".into()));
        }
        if self.f.input_count() > p {
            return Err(Error::Expression(format!(
                "composition uses u{} but there are only {p} members",
                self.f.input_count()
            )));
        }
        if self.m0 == 0 {
            return Err(Error::invalid("m0", "need at least one hidden gene"));
        }
        for (name, v) in [("lambda", self.lambda), ("delta", self.delta), ("t_end", self.t_end)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::invalid(name, "must be positive"));
            }
        }
        if self.delta >= self.t_end {
            return Err(Error::invalid("delta", "must be below t_end"));
        }
        if self.sample_times < 2 {
            return Err(Error::invalid("sample_times", "need at least 2"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompositionReport {
    /// `sup_{t∈[δ,T]} |F(Y¹…Yᵖ) − decoded output|` over the composed run.
    pub sup_error: f64,
    pub rms_error: f64,
    /// Hidden-layer fit error on the training lattice, in output units.
    pub fit_sup: f64,
    /// Relaxation-lag estimate of both stages at `t = δ`, in output units.
    pub tracker_error: f64,
    pub within_bound: bool,
    pub frames_checked: usize,
    pub dt: f64,
    pub bounds: BoundsReport,
}

#[derive(Debug, Clone)]
pub struct Composition {
    pub circuit: GeneCircuit,
    /// First gene of each member block.
    pub member_offsets: Vec<usize>,
    /// Output gene of each member in the composed numbering.
    pub member_outputs: Vec<usize>,
    pub first_hidden: usize,
    pub hidden: SigmoidSum,
    pub normalization: Normalization,
    pub fit: FitReport,
    pub report: CompositionReport,
}

/// Gene-by-gene assembly of a circuit without spatial structure.
#[derive(Default)]
struct Builder {
    kinds: Vec<GeneKind>,
    r: Vec<f64>,
    lambda: Vec<f64>,
    d: Vec<f64>,
    eta: Vec<f64>,
    theta: Vec<Threshold>,
    entries: Vec<(usize, usize, f64)>,
}

impl Builder {
    fn gene(&mut self, kind: GeneKind, r: f64, lambda: f64, eta: f64) -> usize {
        self.kinds.push(kind);
        self.r.push(r);
        self.lambda.push(lambda);
        self.d.push(0.0);
        self.eta.push(eta);
        self.theta.push(Threshold::Zero);
        self.kinds.len() - 1
    }

    fn link(&mut self, to: usize, from: usize, w: f64) {
        if w != 0.0 {
            self.entries.push((to, from, w));
        }
    }

    /// Copies `c` unchanged; returns its first gene.
    fn member(&mut self, c: &GeneCircuit) -> usize {
        let base = self.kinds.len();
        self.kinds.extend_from_slice(&c.kinds);
        self.r.extend_from_slice(&c.r);
        self.lambda.extend_from_slice(&c.lambda);
        self.d.extend_from_slice(&c.d);
        self.eta.extend_from_slice(&c.eta);
        self.theta.extend(c.theta.iter().cloned());
        self.entries
            .extend(c.k.triplets(c.m).into_iter().map(|(i, j, w)| (base + i, base + j, w)));
        base
    }

    /// Hidden genes `u_k' = λ(B_k σ(A_k·y_in − η_k) − u_k)` for a sum over
    /// the inputs `inputs`; returns their indices.
    fn hidden_layer(&mut self, sum: &SigmoidSum, inputs: &[usize], lambda: f64) -> Vec<usize> {
        let mut genes = Vec::with_capacity(sum.len());
        for unit in &sum.units {
            let g = self.gene(GeneKind::Sigmoid, lambda * unit.outer, lambda, unit.eta);
            for (&src, &a) in inputs.iter().zip(&unit.weights) {
                self.link(g, src, a);
            }
            genes.push(g);
        }
        genes
    }

    /// A gene relaxing at rate `λ` towards `Σ y_j` (linear) or `σ(Σ y_j)`.
    fn relay(&mut self, from: &[usize], lambda: f64, kind: GeneKind) -> usize {
        let g = self.gene(kind, lambda, lambda, 0.0);
        for &j in from {
            self.link(g, j, 1.0);
        }
        g
    }

    fn finish(self, output_gene: usize) -> Result<GeneCircuit> {
        let m = self.kinds.len();
        let c = GeneCircuit {
            m,
            kinds: self.kinds,
            k: Interaction::from_triplets(m, self.entries)?,
            r: self.r,
            lambda: self.lambda,
            d: self.d,
            eta: self.eta,
            theta: self.theta,
            output_gene,
        };
        c.validate()?;
        Ok(c)
    }
}

/// Records the output gene of `c` on `grid` up to `t_end`, about `frames`
/// times, with a step within the stability bound.
fn run_outputs(c: &GeneCircuit, grid: &Grid, t_end: f64, frames: usize, genes: Vec<usize>) -> Result<(f64, crate::circuit::CircuitTrajectory)> {
    let dt = even_step(t_end, c.dt_bound(grid).0.min(t_end));
    let steps = (t_end / dt).round() as usize;
    let opts = SimOptions {
        t_end,
        dt,
        frame_stride: (steps / frames.max(1)).max(1),
        record: Some(genes),
        init: None,
    };
    Ok((dt, simulate_circuit_with(c, grid, &opts)?))
}

/// Upper bound on the samples handed to the hidden-layer fit.
const MAX_FIT_SAMPLES: usize = 4000;

/// Samples the members, fits the hidden layer, assembles the composed circuit
/// and verifies it on `grid` over `[δ, T]`.
pub fn superpose(spec: &CompositionSpec, grid: &Grid, search: SearchSettings, seed: u64) -> Result<Composition> {
    spec.validate()?;
    let p = spec.members.len();
    let n = grid.len();

    // member outputs on a (t, x) lattice with t ≥ δ
    let point_stride = (n * spec.sample_times).div_ceil(MAX_FIT_SAMPLES).max(1);
    let mut member_frames: Vec<Vec<Vec<f64>>> = Vec::with_capacity(p);
    for c in &spec.members {
        let (_, traj) = run_outputs(c, grid, spec.t_end, spec.sample_times, vec![c.output_gene])?;
        let frames = traj
            .times
            .iter()
            .zip(traj.frames)
            .filter(|(t, _)| **t >= spec.delta)
            .map(|(_, f)| f)
            .collect();
        member_frames.push(frames);
    }
    let nt = member_frames.iter().map(|f| f.len()).min().unwrap_or(0);
    if nt == 0 {
        return Err(Error::invalid("delta", "no member frames after delta"));
    }
    let mut inputs = Vec::new();
    let mut values = Vec::new();
    let mut q = vec![0.0; p];
    for k in 0..nt {
        for pt in (0..n).step_by(point_stride) {
            for s in 0..p {
                q[s] = member_frames[s][k][pt];
            }
            inputs.extend_from_slice(&q);
            values.push(spec.f.eval(&Env::inputs(&q)));
        }
    }
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFiniteSample { index: i });
    }

    let (lo, hi) = values.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let (normalization, targets): (Normalization, Vec<f64>) = match spec.output {
        OutputShape::Sigmoid => {
            let nm = Normalization::from_range(lo, hi);
            (nm, values.iter().map(|&v| sigma_inverse(nm.apply(v))).collect())
        }
        OutputShape::Linear => (Normalization { gain: 1.0, offset: 0.0 }, values.clone()),
    };
    let data = TrainingSet::new(p, inputs, targets)?;
    let (hidden, fit) = jones_fit(&data, spec.m0, search, seed)?;

    let mut b = Builder::default();
    let mut member_offsets = Vec::with_capacity(p);
    let mut member_outputs = Vec::with_capacity(p);
    for c in &spec.members {
        let base = b.member(c);
        member_offsets.push(base);
        member_outputs.push(base + c.output_gene);
    }
    let v = b.hidden_layer(&hidden, &member_outputs, spec.lambda);
    let first_hidden = v[0];
    let kind = match spec.output {
        OutputShape::Sigmoid => GeneKind::Sigmoid,
        OutputShape::Linear => GeneKind::Linear,
    };
    let out = b.relay(&v, spec.lambda, kind);
    let circuit = b.finish(out)?;

    // lipschitz constant of the output nonlinearity
    let lip = match spec.output {
        OutputShape::Sigmoid => 0.5,
        OutputShape::Linear => 1.0,
    };
    let fit_sup = lip * fit.final_sup / normalization.gain;

    let mut record = member_outputs.clone();
    record.push(out);
    let frames_wanted = spec.sample_times.max(1000);
    let (dt, traj) = run_outputs(&circuit, grid, spec.t_end, frames_wanted, record)?;
    let (mut sup, mut sq, mut count) = (0.0f64, 0.0, 0usize);
    // stage inputs h_k = B_k σ(A_k·Y − η_k) and s = σ(Σ h_k) or Σ h_k per frame
    let mut h_prev: Option<(f64, Vec<f64>, Vec<f64>)> = None;
    let mut h0 = vec![0.0f64; hidden.len()];
    let mut s0 = 0.0f64;
    let mut dh_max = vec![0.0f64; hidden.len()];
    let mut ds_max = 0.0f64;
    let mut frames_checked = 0;
    let mut h = vec![0.0; hidden.len()];
    let mut s_vals = vec![0.0; n];
    for (k, &t) in traj.times.iter().enumerate() {
        let frame = &traj.frames[k];
        let mut h_all = Vec::with_capacity(hidden.len() * n);
        for pt in 0..n {
            for s in 0..p {
                q[s] = frame[s * n + pt];
            }
            let mut total = 0.0;
            for (slot, u) in hidden.units.iter().enumerate() {
                h[slot] = u.outer * u.activation(&q);
                total += h[slot];
            }
            s_vals[pt] = match spec.output {
                OutputShape::Sigmoid => sigma(total),
                OutputShape::Linear => total,
            };
            h_all.extend_from_slice(&h);
            if t >= spec.delta {
                let e = (normalization.decode(frame[p * n + pt]) - spec.f.eval(&Env::inputs(&q))).abs();
                sup = sup.max(e);
                sq += e * e;
                count += 1;
            }
        }
        if k == 0 {
            for (slot, v0) in h0.iter_mut().enumerate() {
                *v0 = (0..n).map(|pt| h_all[pt * hidden.len() + slot].abs()).fold(0.0, f64::max);
            }
            s0 = s_vals.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        }
        if let Some((tp, hp, sp)) = &h_prev {
            let span = t - tp;
            for slot in 0..hidden.len() {
                for pt in 0..n {
                    let idx = pt * hidden.len() + slot;
                    dh_max[slot] = dh_max[slot].max((h_all[idx] - hp[idx]).abs() / span);
                }
            }
            for pt in 0..n {
                ds_max = ds_max.max((s_vals[pt] - sp[pt]).abs() / span);
            }
        }
        if t >= spec.delta {
            frames_checked += 1;
        }
        h_prev = Some((t, h_all, s_vals.clone()));
    }
    let lam = spec.lambda;
    let decay = (-lam * spec.delta).exp();
    let stage1: f64 = h0.iter().zip(&dh_max).map(|(a, d)| a * decay + d / lam).sum();
    let stage2 = s0 * decay + ds_max / lam + lip * stage1;
    let tracker_error = stage2 / normalization.gain;
    let report = CompositionReport {
        sup_error: sup,
        rms_error: (sq / count.max(1) as f64).sqrt(),
        fit_sup,
        tracker_error,
        within_bound: sup <= fit_sup + tracker_error,
        frames_checked,
        dt,
        bounds: traj.step_bounds.clone(),
    };
    Ok(Composition {
        circuit,
        member_offsets,
        member_outputs,
        first_hidden,
        hidden,
        normalization,
        fit,
        report,
    })
}

/// One fitted stage of a time-signal network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageFit {
    pub sum: SigmoidSum,
    pub report: FitReport,
    /// Unit-weight range that won among [`STAGE_A_MAX`].
    pub a_max: f64,
    pub domain: (f64, f64),
}

/// Fits `f` on `samples` equally spaced points of `domain` with
/// [`random_fit_1d`], keeping the best of the [`STAGE_A_MAX`] ranges.
pub fn fit_stage(f: impl Fn(f64) -> f64, domain: (f64, f64), samples: usize, m: usize, budget: usize, seed: u64) -> Result<StageFit> {
    if samples < 2 {
        return Err(Error::invalid("samples", "need at least 2"));
    }
    let xs: Vec<f64> = (0..samples)
        .map(|i| domain.0 + (domain.1 - domain.0) * i as f64 / (samples - 1) as f64)
        .collect();
    let ys = xs.iter().map(|&x| f(x)).collect();
    let data = TrainingSet::new(1, xs, ys)?;
    let mut best: Option<StageFit> = None;
    for a_max in STAGE_A_MAX {
        let (sum, report) = random_fit_1d(&data, m, SearchSettings { budget, a_max }, seed)?;
        if best.as_ref().map_or(true, |b| report.final_rms < b.report.final_rms) {
            best = Some(StageFit {
                sum,
                report,
                a_max,
                domain,
            });
        }
    }
    Ok(best.expect("catalog is not empty"))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Cos8tSettings {
    /// Relaxation rate of every hidden and relay gene.
    pub lambda: f64,
    /// Start of the comparison window.
    pub delta: f64,
    pub budget: usize,
    /// Fit samples per stage.
    pub samples: usize,
}

impl Default for Cos8tSettings {
    fn default() -> Self {
        Self {
            lambda: 1e4,
            delta: 0.05,
            budget: 200,
            samples: 400,
        }
    }
}

impl Cos8tSettings {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(Error::invalid("lambda", "must be positive"));
        }
        if !(self.delta >= 0.0 && self.delta < TAU) {
            return Err(Error::invalid("delta", "must lie in [0, 2π)"));
        }
        if self.budget == 0 {
            return Err(Error::invalid("budget", "must be at least 1"));
        }
        if self.samples < 2 {
            return Err(Error::invalid("samples", "need at least 2"));
        }
        Ok(())
    }
}

/// Domain of the shared squaring map `2x² − 1`.
pub const SQUARING_DOMAIN: (f64, f64) = (-1.05, 1.05);

/// A network driven by an integrator clock `y₁ = t`.
#[derive(Debug, Clone)]
pub struct SignalNetwork {
    pub circuit: GeneCircuit,
    pub stages: Vec<StageFit>,
    /// How many times each stage fit is used, in chain order.
    pub stage_uses: Vec<usize>,
    pub lambda: f64,
}

impl SignalNetwork {
    pub fn equations(&self) -> usize {
        self.circuit.m
    }

    /// The chain of stage maps evaluated without dynamics.
    pub fn static_output(&self, t: f64) -> f64 {
        let mut y = t;
        for (stage, &uses) in self.stages.iter().zip(&self.stage_uses) {
            for _ in 0..uses {
                y = stage.sum.eval_unchecked(&[y]);
            }
        }
        y
    }
}

/// Clock, then for each stage use a hidden layer reading the previous relay
/// gene and a linear relay gene summing it.
fn signal_chain(stages: Vec<StageFit>, stage_uses: Vec<usize>, lambda: f64) -> Result<SignalNetwork> {
    let mut b = Builder::default();
    let mut input = b.gene(GeneKind::Integrator, 1.0, 0.0, 0.0);
    for (stage, &uses) in stages.iter().zip(&stage_uses) {
        for _ in 0..uses {
            let hidden = b.hidden_layer(&stage.sum, &[input], lambda);
            input = b.relay(&hidden, lambda, GeneKind::Linear);
        }
    }
    Ok(SignalNetwork {
        circuit: b.finish(input)?,
        stages,
        stage_uses,
        lambda,
    })
}

/// Network with integrator clock `y₁`, `m` hidden genes fitted to `f` on
/// `domain`, and a linear output relay.
pub fn build_time_signal(f: impl Fn(f64) -> f64, domain: (f64, f64), m: usize, settings: &Cos8tSettings, seed: u64) -> Result<SignalNetwork> {
    settings.validate()?;
    let stage = fit_stage(f, domain, settings.samples, m, settings.budget, seed)?;
    signal_chain(vec![stage], vec![1], settings.lambda)
}

/// `cos(8t)` fitted directly on `[0, 2π]`: `m + 2` genes.
pub fn build_direct_cos8t(m: usize, settings: &Cos8tSettings, seed: u64) -> Result<SignalNetwork> {
    build_time_signal(|t| (8.0 * t).cos(), (0.0, TAU), m, settings, seed)
}

/// `cos t` with `m1` units, then one `m2`-unit fit of `2x² − 1` applied three
/// times: `m1 + 3·m2 + 5` genes.
pub fn build_indirect_cos8t(m1: usize, m2: usize, settings: &Cos8tSettings, seed: u64) -> Result<SignalNetwork> {
    settings.validate()?;
    let cos = fit_stage(f64::cos, (0.0, TAU), settings.samples, m1, settings.budget, 2 * seed)?;
    let square = fit_stage(|x| 2.0 * x * x - 1.0, SQUARING_DOMAIN, settings.samples, m2, settings.budget, 2 * seed + 1)?;
    signal_chain(vec![cos, square], vec![1, 3], settings.lambda)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignalRun {
    pub times: Vec<f64>,
    pub output: Vec<f64>,
    /// RMS and sup deviation from the target over `[δ, T]`.
    pub rms_error: f64,
    pub sup_error: f64,
    pub dt: f64,
    pub bounds: BoundsReport,
}

/// Simulates a time-signal network (spatially uniform) and compares its
/// output with `target` on `[δ, T]`.
pub fn simulate_signal(net: &SignalNetwork, target: impl Fn(f64) -> f64, t_end: f64, delta: f64, frames: usize) -> Result<SignalRun> {
    let grid = Grid::line(0.0, 1.0, 2)?;
    let (dt, traj) = run_outputs(&net.circuit, &grid, t_end, frames, vec![net.circuit.output_gene])?;
    let mut times = Vec::new();
    let mut output = Vec::new();
    let (mut sq, mut sup) = (0.0, 0.0f64);
    for (k, &t) in traj.times.iter().enumerate() {
        if t < delta {
            continue;
        }
        let y = traj.frames[k][0];
        let e = y - target(t);
        sq += e * e;
        sup = sup.max(e.abs());
        times.push(t);
        output.push(y);
    }
    let count = times.len().max(1) as f64;
    Ok(SignalRun {
        times,
        output,
        rms_error: (sq / count).sqrt(),
        sup_error: sup,
        dt,
        bounds: traj.step_bounds,
    })
}

/// Sup error of the squaring fit on `[−1, 1]`, and the sup deviation from
/// `cos(8t)` after applying it three times to exact `cos t` samples.
pub fn stage_map_check(square: &SigmoidSum, samples: usize) -> (f64, f64) {
    let mut e_stage = 0.0f64;
    for i in 0..samples {
        let x = -1.0 + 2.0 * i as f64 / (samples - 1) as f64;
        e_stage = e_stage.max((square.eval_unchecked(&[x]) - (2.0 * x * x - 1.0)).abs());
    }
    let mut e_chain = 0.0f64;
    for i in 0..samples {
        let t = TAU * i as f64 / (samples - 1) as f64;
        let mut y = t.cos();
        for _ in 0..3 {
            y = square.eval_unchecked(&[y]);
        }
        e_chain = e_chain.max((y - (8.0 * t).cos()).abs());
    }
    (e_stage, e_chain)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComplexityReport {
    /// Complexity of `cos(8t)` over `[0, 2π)`.
    pub target: f64,
    /// Complexity of `cos t`.
    pub first_stage: f64,
    /// Complexity of `2x² − 1` along `x = cos s`, one period.
    pub conditional: f64,
    pub e_direct: f64,
    pub e_indirect: f64,
    pub equations_direct: usize,
    pub equations_indirect: usize,
}

/// Samples used for the complexity sums.
const COMPLEXITY_SAMPLES: usize = 256;

pub fn conditional_complexity_report(direct: (&SignalNetwork, &SignalRun), indirect: (&SignalNetwork, &SignalRun)) -> Result<ComplexityReport> {
    let s = periodic_points(COMPLEXITY_SAMPLES);
    let along = |f: &dyn Fn(f64) -> f64| -> Result<f64> { complexity(&s.iter().map(|&t| f(t)).collect::<Vec<_>>()) };
    Ok(ComplexityReport {
        target: along(&|t| (8.0 * t).cos())?,
        first_stage: along(&f64::cos)?,
        conditional: along(&|t| {
            let x = t.cos();
            2.0 * x * x - 1.0
        })?,
        e_direct: direct.1.rms_error,
        e_indirect: indirect.1.rms_error,
        equations_direct: direct.0.equations(),
        equations_indirect: indirect.0.equations(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cos8tTrial {
    pub seed: u64,
    pub e_direct: f64,
    pub e_indirect: f64,
    pub squaring_sup: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cos8tComparison {
    pub trials: Vec<Cos8tTrial>,
    pub median_direct: f64,
    pub median_indirect: f64,
    pub complexity: ComplexityReport,
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Direct (`m`) against indirect (`m1`, `m2`) over `seeds`, on `[δ, 2π]`.
pub fn compare_cos8t(m: usize, m1: usize, m2: usize, settings: &Cos8tSettings, seeds: &[u64], frames: usize) -> Result<Cos8tComparison> {
    if seeds.is_empty() {
        return Err(Error::invalid("seeds", "need at least one seed"));
    }
    let target = |t: f64| (8.0 * t).cos();
    let mut trials = Vec::with_capacity(seeds.len());
    let mut complexity = None;
    for &seed in seeds {
        let direct = build_direct_cos8t(m, settings, seed)?;
        let indirect = build_indirect_cos8t(m1, m2, settings, seed)?;
        let rd = simulate_signal(&direct, target, TAU, settings.delta, frames)?;
        let ri = simulate_signal(&indirect, target, TAU, settings.delta, frames)?;
        if complexity.is_none() {
            complexity = Some(conditional_complexity_report((&direct, &rd), (&indirect, &ri))?);
        }
        trials.push(Cos8tTrial {
            seed,
            e_direct: rd.rms_error,
            e_indirect: ri.rms_error,
            squaring_sup: indirect.stages[1].report.final_sup,
        });
    }
    let median_direct = median(&trials.iter().map(|t| t.e_direct).collect::<Vec<_>>());
    let median_indirect = median(&trials.iter().map(|t| t.e_indirect).collect::<Vec<_>>());
    Ok(Cos8tComparison {
        trials,
        median_direct,
        median_indirect,
        complexity: complexity.expect("at least one seed"),
    })
}
