//! Compiling target patterns `z(t, x)` into diffusion-free gene circuits.
//!
//! Clock genes relax towards `σ(θ(x))` at rates `κ` and `2κ`:
//!
//! ```text
//! y₁ = σ(θ₁(x))(1 − e^{−κt}),   ȳ₁ = σ(θ₁(x))(1 − e^{−2κt})
//! ```
//!
//! so `ȳ₁/y₁ − 1 = e^{−κt}` and `y₁²/(2y₁ − ȳ₁) = σ(θ₁(x))` recover time and
//! position. A hidden layer `u_j' = λ(R_j σ(K_j·y − η_j) − u_j)` fitted to
//! `σ⁻¹(ẑ)` and an output gene `y_out' = λ(σ(Σ u_j) − y_out)` then produce
//! the normalized target `ẑ`. In two dimensions a third clock gene `y₂`
//! carries `σ(θ₂(x₂))`.

use rustfft::{num_complex::Complex, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::circuit::{simulate_circuit_with, BoundsReport, GeneCircuit, GeneKind, Interaction, SimOptions, Threshold};
use crate::error::{Error, Result};
use crate::fit::{jones_fit_nested, FitReport, SearchSettings, TrainingSet};
use crate::grid::Grid;
use crate::sigmoid::{sigma, sigma_inverse, SigmoidSum};

/// Lower and upper ends of the normalized target range.
pub const NORMALIZED_RANGE: (f64, f64) = (0.2, 0.8);

/// Tolerance of the threshold-profile inversion.
pub const INVERSE_TOL: f64 = 1e-12;

/// Weight range for hidden-layer fits. The clock map squeezes late times
/// and small positions into thin bands of the input box, which need sharper
/// units than the general default.
pub const COMPILE_A_MAX: f64 = 100.0;

/// A target pattern `z(t, x₁, x₂)`.
pub type Target<'a> = &'a dyn Fn(f64, f64, f64) -> f64;

/// A spatial threshold `θ(s)` of one coordinate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ThresholdProfile {
    /// `a + b·s`
    Linear { a: f64, b: f64 },
    /// Piecewise linear through `(xs[i], values[i])`, constant beyond the ends.
    Tabulated { xs: Vec<f64>, values: Vec<f64> },
}

impl ThresholdProfile {
    /// The linear ramp with `σ(θ)` running from 0.25 to 0.75 over `[lo, hi]`.
    pub fn default_ramp(lo: f64, hi: f64) -> Self {
        let a0 = sigma_inverse(0.25);
        let a1 = sigma_inverse(0.75);
        let b = (a1 - a0) / (hi - lo);
        ThresholdProfile::Linear { a: a0 - b * lo, b }
    }

    pub fn eval(&self, s: f64) -> f64 {
        match self {
            ThresholdProfile::Linear { a, b } => a + b * s,
            ThresholdProfile::Tabulated { xs, values } => {
                if s <= xs[0] {
                    return values[0];
                }
                let last = xs.len() - 1;
                if s >= xs[last] {
                    return values[last];
                }
                let i = xs.partition_point(|&x| x <= s) - 1;
                let w = (s - xs[i]) / (xs[i + 1] - xs[i]);
                values[i] + w * (values[i + 1] - values[i])
            }
        }
    }

    /// Checks strict monotonicity at the given coordinates; returns the sign.
    pub fn check_monotone(&self, coords: &[f64]) -> Result<f64> {
        if let ThresholdProfile::Tabulated { xs, values } = self {
            if xs.len() < 2 || xs.len() != values.len() || xs.windows(2).any(|w| !(w[1] > w[0])) {
                return Err(Error::invalid("theta", "tabulated profile needs increasing xs matching values"));
            }
        }
        let vals: Vec<f64> = coords.iter().map(|&s| self.eval(s)).collect();
        if vals.len() < 2 {
            return Err(Error::invalid("theta", "need at least two coordinates"));
        }
        if vals.windows(2).all(|w| w[1] > w[0]) {
            Ok(1.0)
        } else if vals.windows(2).all(|w| w[1] < w[0]) {
            Ok(-1.0)
        } else {
            Err(Error::NonMonotoneProfile)
        }
    }

    /// `θ⁻¹(value)` on `[lo, hi]` by bisection.
    pub fn inverse(&self, value: f64, lo: f64, hi: f64) -> Result<f64> {
        let (flo, fhi) = (self.eval(lo) - value, self.eval(hi) - value);
        if flo == 0.0 {
            return Ok(lo);
        }
        if fhi == 0.0 {
            return Ok(hi);
        }
        if flo.signum() == fhi.signum() {
            // rounding can push an endpoint value just outside the range
            let slack = 1e-9 * (1.0 + self.eval(lo).abs().max(self.eval(hi).abs()));
            if flo.abs() <= slack || fhi.abs() <= slack {
                return Ok(if flo.abs() <= fhi.abs() { lo } else { hi });
            }
            return Err(Error::invalid("theta", format!("value {value} outside the profile's range on [{lo}, {hi}]")));
        }
        let (mut a, mut b) = (lo, hi);
        while b - a > INVERSE_TOL {
            let mid = 0.5 * (a + b);
            if mid <= a || mid >= b {
                break;
            }
            let fm = self.eval(mid) - value;
            if fm == 0.0 {
                return Ok(mid);
            }
            if fm.signum() == flo.signum() {
                a = mid;
            } else {
                b = mid;
            }
        }
        Ok(0.5 * (a + b))
    }

    /// Gene threshold `−θ` along `axis` (0 for `x₁`, 1 for `x₂`), so that the
    /// gene sees `σ(θ)`.
    pub fn gene_threshold(&self, axis: usize, grid: &Grid) -> Result<Threshold> {
        Ok(match (self, axis) {
            (ThresholdProfile::Linear { a, b }, 0) => Threshold::Ramp { a: -a, b: -b },
            (ThresholdProfile::Linear { a, b }, _) => Threshold::RampX2 { a: -a, b: -b },
            _ => Threshold::Samples(
                grid.points()
                    .iter()
                    .map(|p| -self.eval(if axis == 0 { p.x1 } else { p.x2 }))
                    .collect(),
            ),
        })
    }
}

fn axis_coords(grid: &Grid, axis: usize) -> Result<Vec<f64>> {
    match (grid, axis) {
        (Grid::D1(g), 0) => Ok(g.points()),
        (Grid::D2(g), 0) => Ok(g.axis1.points()),
        (Grid::D2(g), 1) => Ok(g.axis2.points()),
        _ => Err(Error::InvalidGrid(format!("grid has no axis {}", axis + 1))),
    }
}

fn axis_range(grid: &Grid, axis: usize) -> Result<(f64, f64)> {
    let c = axis_coords(grid, axis)?;
    Ok((c[0], c[c.len() - 1]))
}

/// Closed-form clock values `(y₁, ȳ₁)` for `s = σ(θ₁(x))`.
pub fn clock_values(s: f64, kappa: f64, t: f64) -> (f64, f64) {
    let e = (-kappa * t).exp();
    (s * (1.0 - e), s * (1.0 - e * e))
}

/// The two clock genes `y₁' = κ(σ(θ₁) − y₁)`, `ȳ₁' = 2κ(σ(θ₁) − ȳ₁)`.
pub fn clock_genes_1d(theta1: &ThresholdProfile, kappa: f64, grid: &Grid) -> Result<GeneCircuit> {
    if !(kappa > 0.0 && kappa.is_finite()) {
        return Err(Error::invalid("kappa", "must be positive"));
    }
    theta1.check_monotone(&axis_coords(grid, 0)?)?;
    let th = theta1.gene_threshold(0, grid)?;
    let mut c = GeneCircuit::uniform(2);
    c.r = vec![kappa, 2.0 * kappa];
    c.lambda = vec![kappa, 2.0 * kappa];
    c.theta = vec![th.clone(), th];
    c.validate()?;
    Ok(c)
}

fn check_margin(y1: f64, ybar1: f64, margin: f64) -> Result<()> {
    if !((ybar1 - y1).abs() >= margin && (2.0 * y1 - ybar1).abs() >= margin) {
        return Err(Error::SingularLine { y1, ybar1, margin });
    }
    Ok(())
}

/// `(t, x)` from clock values.
pub fn recover_coords_1d(
    y1: f64,
    ybar1: f64,
    kappa: f64,
    theta1: &ThresholdProfile,
    domain: (f64, f64),
    margin: f64,
) -> Result<(f64, f64)> {
    check_margin(y1, ybar1, margin)?;
    let t = -((ybar1 / y1 - 1.0).ln()) / kappa;
    let s = y1 * y1 / (2.0 * y1 - ybar1);
    let x = theta1.inverse(sigma_inverse(s), domain.0, domain.1)?;
    Ok((t, x))
}

/// `(t, x₁, x₂)` from `(y₁, y₂, ȳ₁)`.
#[allow(clippy::too_many_arguments)]
pub fn recover_coords_2d(
    y1: f64,
    y2: f64,
    ybar1: f64,
    kappa: f64,
    theta1: &ThresholdProfile,
    theta2: &ThresholdProfile,
    domain: [(f64, f64); 2],
    margin: f64,
) -> Result<(f64, f64, f64)> {
    check_margin(y1, ybar1, margin)?;
    let t = -((ybar1 / y1 - 1.0).ln()) / kappa;
    let denom = 2.0 * y1 - ybar1;
    let s1 = y1 * y1 / denom;
    let s2 = y1 * y2 / denom;
    let x1 = theta1.inverse(sigma_inverse(s1), domain[0].0, domain[0].1)?;
    let x2 = theta2.inverse(sigma_inverse(s2), domain[1].0, domain[1].1)?;
    Ok((t, x1, x2))
}

/// Affine map `ẑ = offset + gain·z` onto [`NORMALIZED_RANGE`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub gain: f64,
    pub offset: f64,
}

impl Normalization {
    pub fn from_range(lo: f64, hi: f64) -> Self {
        let (a, b) = NORMALIZED_RANGE;
        let mid = 0.5 * (a + b);
        if hi > lo {
            let gain = (b - a) / (hi - lo);
            Self {
                gain,
                offset: mid - gain * 0.5 * (lo + hi),
            }
        } else {
            Self { gain: 1.0, offset: mid - lo }
        }
    }

    pub fn apply(&self, z: f64) -> f64 {
        self.offset + self.gain * z
    }

    pub fn decode(&self, y: f64) -> f64 {
        (y - self.offset) / self.gain
    }
}

/// Training lattice over the image of the clock map.
#[derive(Debug, Clone, PartialEq)]
pub struct RemappedTarget {
    /// Inputs `(y₁, ȳ₁)` or `(y₁, y₂, ȳ₁)`, targets `σ⁻¹(ẑ)`.
    pub data: TrainingSet,
    pub normalization: Normalization,
    /// Range of the raw target over the lattice.
    pub z_range: (f64, f64),
}

/// Time window `[t0, t1]` and lattice sizes for remapping.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Window {
    pub t0: f64,
    pub t1: f64,
    pub nt: usize,
    pub nx: usize,
}

fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![a];
    }
    (0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect()
}

fn remap(
    z: Target,
    profiles: &[&ThresholdProfile],
    domain: &[(f64, f64)],
    kappa: f64,
    window: Window,
    margin: f64,
) -> Result<RemappedTarget> {
    if !(window.t0 > 0.0) {
        return Err(Error::invalid("T0", "the time window must stay away from t = 0"));
    }
    if !(window.t1 > window.t0) {
        return Err(Error::invalid("T", "must exceed T0"));
    }
    if window.nt < 2 || window.nx < 2 {
        return Err(Error::invalid("train_points", "need at least 2 lattice points per axis"));
    }
    let ts = linspace(window.t0, window.t1, window.nt);
    let xs1 = linspace(domain[0].0, domain[0].1, window.nx);
    let xs2 = if profiles.len() == 2 { linspace(domain[1].0, domain[1].1, window.nx) } else { vec![0.0] };
    let mut inputs = Vec::new();
    let mut raw = Vec::new();
    for &t in &ts {
        for &x1 in &xs1 {
            let s1 = sigma(profiles[0].eval(x1));
            let (y1, ybar1) = clock_values(s1, kappa, t);
            check_margin(y1, ybar1, margin)?;
            for &x2 in &xs2 {
                if profiles.len() == 2 {
                    let s2 = sigma(profiles[1].eval(x2));
                    inputs.extend([y1, s2 * (1.0 - (-kappa * t).exp()), ybar1]);
                } else {
                    inputs.extend([y1, ybar1]);
                }
                raw.push(z(t, x1, x2));
            }
        }
    }
    if let Some(i) = raw.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFiniteSample { index: i });
    }
    let lo = raw.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = raw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let normalization = Normalization::from_range(lo, hi);
    let targets = raw.iter().map(|&v| sigma_inverse(normalization.apply(v))).collect();
    Ok(RemappedTarget {
        data: TrainingSet::new(profiles.len() + 1, inputs, targets)?,
        normalization,
        z_range: (lo, hi),
    })
}

/// Samples `z` on a `(t, x)` lattice and re-expresses it over `(y₁, ȳ₁)`.
pub fn remap_target_1d(
    z: Target,
    theta1: &ThresholdProfile,
    domain: (f64, f64),
    kappa: f64,
    window: Window,
    margin: f64,
) -> Result<RemappedTarget> {
    remap(z, &[theta1], &[domain], kappa, window, margin)
}

/// Samples `z` on a `(t, x₁, x₂)` lattice (`nx` per axis) and re-expresses
/// it over `(y₁, y₂, ȳ₁)`.
pub fn remap_target_2d(
    z: Target,
    theta1: &ThresholdProfile,
    theta2: &ThresholdProfile,
    domain: [(f64, f64); 2],
    kappa: f64,
    window: Window,
    margin: f64,
) -> Result<RemappedTarget> {
    remap(z, &[theta1, theta2], &domain, kappa, window, margin)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompileConfig {
    pub kappa: f64,
    /// Relaxation rate; derived from the target when absent.
    pub lambda: Option<f64>,
    pub m: usize,
    pub t0: f64,
    pub t_end: f64,
    pub delta_margin: f64,
    pub search: SearchSettings,
    pub seed: u64,
    /// Training lattice points in time; the lattice starts at `t0 / 2`.
    pub train_t: Option<usize>,
    /// Training lattice points per spatial axis.
    pub train_x: Option<usize>,
}

impl Default for CompileConfig {
    fn default() -> Self {
        Self {
            kappa: 4.0,
            lambda: None,
            m: 1000,
            t0: 0.05,
            t_end: 1.0,
            delta_margin: 1e-3,
            search: SearchSettings {
                a_max: COMPILE_A_MAX,
                ..SearchSettings::default()
            },
            seed: 0,
            train_t: None,
            train_x: None,
        }
    }
}

impl CompileConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.kappa > 0.0 && self.kappa.is_finite()) {
            return Err(Error::invalid("kappa", "must be positive"));
        }
        if let Some(l) = self.lambda {
            if !(l > 0.0 && l.is_finite()) {
                return Err(Error::invalid("lambda", "must be positive"));
            }
        }
        if self.m == 0 {
            return Err(Error::invalid("m", "must be at least 1"));
        }
        if !(self.t0 > 0.0) {
            return Err(Error::invalid("T0", "must be positive"));
        }
        if !(self.t_end > self.t0 && self.t_end.is_finite()) {
            return Err(Error::invalid("T0", "must be smaller than T"));
        }
        if !(self.delta_margin >= 0.0) {
            return Err(Error::invalid("delta_margin", "must be non-negative"));
        }
        Ok(())
    }

    fn window(&self, dim: usize) -> Window {
        let (nt, nx) = if dim == 1 { (100, 20) } else { (16, 12) };
        Window {
            t0: 0.5 * self.t0,
            t1: self.t_end,
            nt: self.train_t.unwrap_or(nt),
            nx: self.train_x.unwrap_or(nx),
        }
    }
}

/// Angular frequency with the largest Fourier magnitude of `z` along `t`
/// over `[t0, t1]`, summed over a few positions; 0 for time-independent
/// targets.
pub fn dominant_frequency(z: Target, t0: f64, t1: f64, positions: &[(f64, f64)]) -> f64 {
    const N: usize = 256;
    let fft = FftPlanner::<f64>::new().plan_fft_forward(N);
    let mut mag = vec![0.0; N / 2];
    for &(x1, x2) in positions {
        let mut buf: Vec<Complex<f64>> = (0..N)
            .map(|i| Complex::new(z(t0 + (t1 - t0) * i as f64 / N as f64, x1, x2), 0.0))
            .collect();
        fft.process(&mut buf);
        for (k, m) in mag.iter_mut().enumerate() {
            *m += buf[k].norm();
        }
    }
    let scale = mag[0].abs().max(mag.iter().skip(1).cloned().fold(0.0, f64::max));
    let (k, best) = mag
        .iter()
        .enumerate()
        .skip(1)
        .fold((0, 0.0), |acc, (k, &m)| if m > acc.1 { (k, m) } else { acc });
    if best <= 1e-9 * scale.max(f64::MIN_POSITIVE) * N as f64 || best == 0.0 {
        return 0.0;
    }
    2.0 * std::f64::consts::PI * k as f64 / (t1 - t0)
}

/// `λ = 50κ(1 + ω/κ)` for dominant angular frequency `ω`.
pub fn default_lambda(kappa: f64, omega: f64) -> f64 {
    50.0 * kappa * (1.0 + omega / kappa)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompiledPattern {
    pub circuit: GeneCircuit,
    pub hidden: SigmoidSum,
    pub normalization: Normalization,
    pub fit: FitReport,
    pub lambda: f64,
    pub kappa: f64,
    pub t0: f64,
    pub t_end: f64,
    pub dim: usize,
    /// Raw target range over the training lattice.
    pub z_range: (f64, f64),
}

fn sample_positions(grid: &Grid) -> Vec<(f64, f64)> {
    let pts = grid.points();
    let step = (pts.len() / 8).max(1);
    pts.iter().step_by(step).map(|p| (p.x1, p.x2)).collect()
}

/// Gene layout: clock genes (`y₁, ȳ₁` or `y₁, ȳ₁, y₂`), `m` hidden genes,
/// then the output gene.
fn assemble(
    clocks: Vec<(f64, Threshold)>,
    hidden: &SigmoidSum,
    input_genes: &[usize],
    lambda: f64,
) -> Result<GeneCircuit> {
    let nc = clocks.len();
    let m = hidden.len();
    let total = nc + m + 1;
    let out = total - 1;
    let mut c = GeneCircuit::uniform(total);
    for (i, (rate, th)) in clocks.into_iter().enumerate() {
        c.r[i] = rate;
        c.lambda[i] = rate;
        c.theta[i] = th;
    }
    let mut triplets = Vec::with_capacity(m * (input_genes.len() + 1));
    for (j, unit) in hidden.units.iter().enumerate() {
        let g = nc + j;
        c.r[g] = lambda * unit.outer;
        c.lambda[g] = lambda;
        c.eta[g] = unit.eta;
        for (w, &src) in unit.weights.iter().zip(input_genes) {
            triplets.push((g, src, *w));
        }
        triplets.push((out, g, 1.0));
    }
    c.r[out] = lambda;
    c.lambda[out] = lambda;
    c.k = Interaction::from_triplets(total, triplets)?;
    c.output_gene = out;
    c.kinds = vec![GeneKind::Sigmoid; total];
    c.validate()?;
    Ok(c)
}

fn finish(
    z: Target,
    grid: &Grid,
    cfg: &CompileConfig,
    counts: &[usize],
    remapped: RemappedTarget,
    clocks: Vec<(f64, Threshold)>,
    input_genes: &[usize],
) -> Result<Vec<CompiledPattern>> {
    let fits = jones_fit_nested(&remapped.data, counts, cfg.search, cfg.seed)?;
    let lambda = match cfg.lambda {
        Some(l) => l,
        None => default_lambda(cfg.kappa, dominant_frequency(z, cfg.t0, cfg.t_end, &sample_positions(grid))),
    };
    fits.into_iter()
        .map(|(hidden, fit)| {
            let circuit = assemble(clocks.clone(), &hidden, input_genes, lambda)?;
            Ok(CompiledPattern {
                circuit,
                hidden,
                normalization: remapped.normalization,
                fit,
                lambda,
                kappa: cfg.kappa,
                t0: cfg.t0,
                t_end: cfg.t_end,
                dim: grid.dim(),
                z_range: remapped.z_range,
            })
        })
        .collect()
}

/// Builds the one-dimensional pattern circuit for `z(t, x)` on `grid`.
pub fn compile_pattern_1d(z: Target, theta1: &ThresholdProfile, grid: &Grid, cfg: &CompileConfig) -> Result<CompiledPattern> {
    Ok(compile_pattern_1d_nested(z, theta1, grid, cfg, &[cfg.m])?.remove(0))
}

/// [`compile_pattern_1d`] for several hidden-layer sizes sharing one greedy
/// fit; `cfg.m` is ignored.
pub fn compile_pattern_1d_nested(
    z: Target,
    theta1: &ThresholdProfile,
    grid: &Grid,
    cfg: &CompileConfig,
    counts: &[usize],
) -> Result<Vec<CompiledPattern>> {
    cfg.validate()?;
    if grid.dim() != 1 {
        return Err(Error::InvalidGrid("compile_pattern_1d needs a 1D grid".into()));
    }
    theta1.check_monotone(&axis_coords(grid, 0)?)?;
    let domain = axis_range(grid, 0)?;
    let remapped = remap_target_1d(z, theta1, domain, cfg.kappa, cfg.window(1), cfg.delta_margin)?;
    let th = theta1.gene_threshold(0, grid)?;
    let clocks = vec![(cfg.kappa, th.clone()), (2.0 * cfg.kappa, th)];
    finish(z, grid, cfg, counts, remapped, clocks, &[0, 1])
}

/// Builds the two-dimensional pattern circuit for `z(t, x₁, x₂)` on `grid`;
/// `θ₁` acts on `x₁` and `θ₂` on `x₂`.
pub fn compile_pattern_2d(
    z: Target,
    theta1: &ThresholdProfile,
    theta2: &ThresholdProfile,
    grid: &Grid,
    cfg: &CompileConfig,
) -> Result<CompiledPattern> {
    Ok(compile_pattern_2d_nested(z, theta1, theta2, grid, cfg, &[cfg.m])?.remove(0))
}

/// [`compile_pattern_2d`] for several hidden-layer sizes; `cfg.m` is ignored.
pub fn compile_pattern_2d_nested(
    z: Target,
    theta1: &ThresholdProfile,
    theta2: &ThresholdProfile,
    grid: &Grid,
    cfg: &CompileConfig,
    counts: &[usize],
) -> Result<Vec<CompiledPattern>> {
    cfg.validate()?;
    if grid.dim() != 2 {
        return Err(Error::InvalidGrid("compile_pattern_2d needs a 2D grid".into()));
    }
    theta1.check_monotone(&axis_coords(grid, 0)?)?;
    theta2.check_monotone(&axis_coords(grid, 1)?)?;
    let domain = [axis_range(grid, 0)?, axis_range(grid, 1)?];
    let remapped = remap_target_2d(z, theta1, theta2, domain, cfg.kappa, cfg.window(2), cfg.delta_margin)?;
    let th1 = theta1.gene_threshold(0, grid)?;
    let th2 = theta2.gene_threshold(1, grid)?;
    // genes 0, 1, 2 = y₁, ȳ₁, y₂; fit inputs are ordered (y₁, y₂, ȳ₁)
    let clocks = vec![(cfg.kappa, th1.clone()), (2.0 * cfg.kappa, th1), (cfg.kappa, th2)];
    finish(z, grid, cfg, counts, remapped, clocks, &[0, 2, 1])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatternReport {
    pub sup_error: f64,
    pub rms_error: f64,
    /// `max z − min z` over the checked lattice.
    pub target_range: f64,
    pub frames_checked: usize,
    pub dt: f64,
}

/// Decoded output and target on the checked frames.
#[derive(Debug, Clone, PartialEq)]
pub struct PatternRun {
    pub grid: Grid,
    pub times: Vec<f64>,
    pub decoded: Vec<Vec<f64>>,
    pub target: Vec<Vec<f64>>,
    pub report: PatternReport,
    pub bounds: BoundsReport,
}

/// Largest step not above `bound` that divides `t_end` evenly.
pub fn even_step(t_end: f64, bound: f64) -> f64 {
    t_end / (t_end / bound).ceil()
}

/// Simulates the compiled circuit on `grid` and compares the decoded output
/// with `z` at about `frames` times in `[T0, T]`.
pub fn verify_pattern(p: &CompiledPattern, z: Target, grid: &Grid, frames: usize) -> Result<PatternRun> {
    let dt = even_step(p.t_end, p.circuit.dt_bound(grid).0);
    let steps = (p.t_end / dt).round() as usize;
    let stride = (steps / frames.max(1)).max(1);
    let opts = SimOptions {
        t_end: p.t_end,
        dt,
        frame_stride: stride,
        record: Some(vec![p.circuit.output_gene]),
        init: None,
    };
    let traj = simulate_circuit_with(&p.circuit, grid, &opts)?;
    let bounds = traj.step_bounds.clone();
    let pts = grid.points();
    let mut times = Vec::new();
    let mut decoded = Vec::new();
    let mut target = Vec::new();
    let (mut sup, mut sq, mut count) = (0.0f64, 0.0, 0usize);
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for (k, &t) in traj.times.iter().enumerate() {
        if t < p.t0 - 1e-12 {
            continue;
        }
        let dec: Vec<f64> = traj.frames[k].iter().map(|&y| p.normalization.decode(y)).collect();
        let tz: Vec<f64> = pts.iter().map(|q| z(t, q.x1, q.x2)).collect();
        for (a, b) in dec.iter().zip(&tz) {
            let e = (a - b).abs();
            sup = sup.max(e);
            sq += e * e;
            count += 1;
            lo = lo.min(*b);
            hi = hi.max(*b);
        }
        times.push(t);
        decoded.push(dec);
        target.push(tz);
    }
    let report = PatternReport {
        sup_error: sup,
        rms_error: (sq / count.max(1) as f64).sqrt(),
        target_range: hi - lo,
        frames_checked: times.len(),
        dt,
    };
    Ok(PatternRun {
        grid: *grid,
        times,
        decoded,
        target,
        report,
        bounds,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::circuit::simulate_circuit;

    #[test]
    fn default_ramp_spans_quarter_to_three_quarters() {
        let p = ThresholdProfile::default_ramp(0.0, 1.0);
        assert!((sigma(p.eval(0.0)) - 0.25).abs() < 1e-15);
        assert!((sigma(p.eval(1.0)) - 0.75).abs() < 1e-15);
        assert_eq!(p.check_monotone(&[0.0, 0.5, 1.0]).unwrap(), 1.0);
    }

    #[test]
    fn non_monotone_profiles_rejected() {
        let flat = ThresholdProfile::Linear { a: 0.3, b: 0.0 };
        let grid = Grid::line(0.0, 1.0, 11).unwrap();
        assert!(matches!(clock_genes_1d(&flat, 1.0, &grid), Err(Error::NonMonotoneProfile)));
        let bump = ThresholdProfile::Tabulated {
            xs: vec![0.0, 0.5, 1.0],
            values: vec![0.0, 1.0, 0.0],
        };
        assert!(matches!(bump.check_monotone(&grid.points().iter().map(|p| p.x1).collect::<Vec<_>>()), Err(Error::NonMonotoneProfile)));
    }

    #[test]
    fn tabulated_inverse() {
        let p = ThresholdProfile::Tabulated {
            xs: vec![0.0, 0.3, 1.0],
            values: vec![1.0, 0.0, -2.0],
        };
        let x = p.inverse(-1.0, 0.0, 1.0).unwrap();
        assert!((x - 0.65).abs() < 1e-11);
        assert!(p.inverse(5.0, 0.0, 1.0).is_err());
    }

    #[test]
    fn clock_genes_match_closed_form() {
        let theta = ThresholdProfile::default_ramp(0.0, 1.0);
        let grid = Grid::line(0.0, 1.0, 11).unwrap();
        let c = clock_genes_1d(&theta, 1.0, &grid).unwrap();
        let traj = simulate_circuit(&c, &grid, 3.0, 1e-3, 100).unwrap();
        assert!(traj.frames[0].iter().all(|&v| v == 0.0));
        let mut worst: f64 = 0.0;
        for (k, &t) in traj.times.iter().enumerate() {
            for (p, pt) in grid.points().iter().enumerate() {
                let (y1, yb) = clock_values(sigma(theta.eval(pt.x1)), 1.0, t);
                worst = worst.max((traj.gene(k, 0).unwrap()[p] - y1).abs());
                worst = worst.max((traj.gene(k, 1).unwrap()[p] - yb).abs());
            }
        }
        assert!(worst <= 1e-8, "{worst}");
    }

    #[test]
    fn recovery_identity_at_ln2() {
        let s = 0.6;
        let theta = ThresholdProfile::Linear { a: sigma_inverse(s), b: 1.0 };
        let (y1, yb) = (s / 2.0, 3.0 * s / 4.0);
        let (t, x) = recover_coords_1d(y1, yb, 1.0, &theta, (-1.0, 1.0), 1e-3).unwrap();
        assert!((t - 2f64.ln()).abs() < 1e-15);
        assert!(x.abs() < 1e-11);
        assert!(matches!(
            recover_coords_1d(0.3, 0.3, 1.0, &theta, (-1.0, 1.0), 1e-3),
            Err(Error::SingularLine { .. })
        ));
        assert!(recover_coords_1d(0.3, 0.6, 1.0, &theta, (-1.0, 1.0), 1e-3).is_err());
    }

    #[test]
    fn normalization_rules() {
        let n = Normalization::from_range(-0.2, 0.2);
        assert!((n.gain - 1.5).abs() < 1e-15);
        assert!((n.apply(-0.2) - 0.2).abs() < 1e-15);
        assert!((n.apply(0.2) - 0.8).abs() < 1e-15);
        let c = Normalization::from_range(0.7, 0.7);
        assert_eq!(c.apply(0.7), 0.5);
        assert_eq!(c.decode(0.5), 0.7);
    }

    #[test]
    fn constant_target_remaps_to_zero() {
        let theta = ThresholdProfile::default_ramp(0.0, 1.0);
        let w = Window { t0: 0.05, t1: 1.0, nt: 10, nx: 5 };
        let r = remap_target_1d(&|_, _, _| 0.3, &theta, (0.0, 1.0), 4.0, w, 1e-3).unwrap();
        assert!(r.data.targets().iter().all(|&v| v.abs() < 1e-15));
        assert_eq!(r.data.len(), 50);
        let bad = Window { t0: 0.0, ..w };
        assert!(remap_target_1d(&|_, _, _| 0.3, &theta, (0.0, 1.0), 4.0, bad, 1e-3).is_err());
    }

    #[test]
    fn dominant_frequency_of_pure_tones() {
        let two_pi = 2.0 * std::f64::consts::PI;
        let w = dominant_frequency(&|t, _, _| (5.0 * t).sin(), 0.0, two_pi, &[(0.0, 0.0)]);
        assert!((w - 5.0).abs() < 1e-12);
        assert_eq!(dominant_frequency(&|_, x, _| x * x, 0.0, 1.0, &[(0.3, 0.0), (0.7, 0.0)]), 0.0);
        assert_eq!(default_lambda(1.0, 0.0), 50.0);
    }

    #[test]
    fn constant_pattern_one_unit() {
        let grid = Grid::line(0.0, 1.0, 6).unwrap();
        let theta = ThresholdProfile::default_ramp(0.0, 1.0);
        let cfg = CompileConfig {
            m: 1,
            lambda: Some(50.0),
            t0: 0.1,
            search: SearchSettings { budget: 20, a_max: 0.1 },
            train_t: Some(20),
            train_x: Some(5),
            ..Default::default()
        };
        let z = |_: f64, _: f64, _: f64| 0.5;
        let p = compile_pattern_1d(&z, &theta, &grid, &cfg).unwrap();
        assert_eq!(p.circuit.m, 4);
        assert!(p.circuit.d.iter().all(|&d| d == 0.0));
        let run = verify_pattern(&p, &z, &grid, 50).unwrap();
        assert!(run.report.sup_error < 1e-2, "{:?}", run.report);
    }
}
