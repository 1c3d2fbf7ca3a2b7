//! Gene circuits equivalent to two-component reaction-diffusion systems.
//!
//! Sigmoid sums `Φ₁ ≈ f + λu` and `Φ₂ ≈ g + λv` are fitted over a rectangle
//! of the `(u, v)` plane. Genes `y_i` (one per unit of `Φ₁`) and `z_i` (one
//! per unit of `Φ₂`) then obey
//!
//! ```text
//! y_i' = σ(a_i u + γ_i v − θ_i) − λ y_i + d₁Δy_i
//! z_i' = σ(γ̄_i u + ā_i v − θ̄_i) − λ z_i + d₂Δz_i
//! ```
//!
//! with `u = Σ b_i y_i` and `v = Σ b̄_i z_i`, so the collective variables
//! satisfy `u' = d₁Δu + Φ₁(u,v) − λu` exactly. With `λ = 0` this is the
//! decay-free block system; a positive `λ` keeps every gene inside
//! `[0, 1/λ]` and is compensated in the fit targets.

use serde::{Deserialize, Serialize};

use crate::circuit::{collective_variables, simulate_circuit_with, BoundsReport, GeneCircuit, GeneKind, Interaction, SimOptions, Threshold};
use crate::error::{Error, Result};
use crate::fit::{jones_fit, FitReport, SearchSettings, TrainingSet};
use crate::grid::{Field, Grid};
use crate::rd::{simulate_rd, step_count, RDSystem, Reaction};
use crate::sigmoid::SigmoidSum;

/// The fit rectangle `[0, c1] × [0, c2]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitDomain {
    pub c1: f64,
    pub c2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranspileSettings {
    pub m1: usize,
    pub m2: usize,
    pub search: SearchSettings,
    pub seed: u64,
    /// Training lattice points per axis.
    pub train_points: usize,
    /// Validation lattice points per axis.
    pub validation_points: usize,
    /// Common decay rate `λ` of all genes.
    pub decay: f64,
}

impl Default for TranspileSettings {
    fn default() -> Self {
        Self {
            m1: 300,
            m2: 300,
            search: SearchSettings::default(),
            seed: 0,
            train_points: 60,
            validation_points: 120,
            decay: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitErrors {
    pub train_sup: f64,
    pub train_rms: f64,
    pub validation_sup: f64,
    pub validation_rms: f64,
    /// `sup |f|` (or `|g|`) over the training lattice.
    pub target_sup: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranspileReport {
    pub domain: FitDomain,
    pub m1: usize,
    pub m2: usize,
    pub decay: f64,
    pub phi1: FitErrors,
    pub phi2: FitErrors,
    pub phi1_fit: FitReport,
    pub phi2_fit: FitReport,
    /// Sup distance between collective variables and the directly integrated
    /// fitted system, when verification was run.
    pub verification_error: Option<f64>,
}

/// Parameters of the block circuit, read off the two sigmoid sums.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockCircuitSpec {
    pub m1: usize,
    pub m2: usize,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub gamma: Vec<f64>,
    pub theta_hat: Vec<f64>,
    pub abar: Vec<f64>,
    pub bbar: Vec<f64>,
    pub gammabar: Vec<f64>,
    pub thetabar: Vec<f64>,
    pub d1: f64,
    pub d2: f64,
    pub decay: f64,
}

impl BlockCircuitSpec {
    pub fn from_sums(phi1: &SigmoidSum, phi2: &SigmoidSum, d1: f64, d2: f64, decay: f64) -> Result<Self> {
        for (name, s) in [("phi1", phi1), ("phi2", phi2)] {
            if s.input_dim != 2 {
                return Err(Error::invalid(name, "sigmoid sum must take (u, v)"));
            }
            if s.is_empty() {
                return Err(Error::invalid(name, "needs at least one unit"));
            }
        }
        Ok(Self {
            m1: phi1.len(),
            m2: phi2.len(),
            a: phi1.units.iter().map(|u| u.weights[0]).collect(),
            gamma: phi1.units.iter().map(|u| u.weights[1]).collect(),
            b: phi1.units.iter().map(|u| u.outer).collect(),
            theta_hat: phi1.units.iter().map(|u| u.eta).collect(),
            gammabar: phi2.units.iter().map(|u| u.weights[0]).collect(),
            abar: phi2.units.iter().map(|u| u.weights[1]).collect(),
            bbar: phi2.units.iter().map(|u| u.outer).collect(),
            thetabar: phi2.units.iter().map(|u| u.eta).collect(),
            d1,
            d2,
            decay,
        })
    }

    /// Weights `r = (b, 0)` and `s = (0, b̄)` of the collective variables.
    pub fn collective_weights(&self) -> (Vec<f64>, Vec<f64>) {
        let m = self.m1 + self.m2;
        let mut r = vec![0.0; m];
        let mut s = vec![0.0; m];
        r[..self.m1].copy_from_slice(&self.b);
        s[self.m1..].copy_from_slice(&self.bbar);
        (r, s)
    }
}

fn lattice(domain: FitDomain, n: usize, f: impl Fn(f64, f64) -> f64) -> Result<TrainingSet> {
    let grid = Grid::rect((0.0, domain.c1, n), (0.0, domain.c2, n))?;
    let pts = grid.points();
    let inputs = pts.iter().flat_map(|p| [p.x1, p.x2]).collect();
    let targets = pts.iter().map(|p| f(p.x1, p.x2)).collect();
    TrainingSet::new(2, inputs, targets)
}

fn errors(sum: &SigmoidSum, train: &TrainingSet, valid: &TrainingSet, raw_sup: f64) -> FitErrors {
    let (train_rms, train_sup) = train.errors(sum);
    let (validation_rms, validation_sup) = valid.errors(sum);
    FitErrors {
        train_sup,
        train_rms,
        validation_sup,
        validation_rms,
        target_sup: raw_sup,
    }
}

/// Fits `Φ₁ ≈ f + λu` and `Φ₂ ≈ g + λv` over `domain` by two independent
/// greedy fits (seeds `2·seed` and `2·seed + 1`).
pub fn fit_nonlinearities(
    sys: &RDSystem,
    domain: FitDomain,
    settings: &TranspileSettings,
) -> Result<(SigmoidSum, SigmoidSum, TranspileReport)> {
    sys.validate()?;
    if !(domain.c1 > 0.0 && domain.c2 > 0.0 && domain.c1.is_finite() && domain.c2.is_finite()) {
        return Err(Error::invalid("domain", "C1 and C2 must be positive"));
    }
    if settings.train_points < 2 || settings.validation_points < 2 {
        return Err(Error::invalid("train_points", "need at least 2 points per axis"));
    }
    if !(settings.decay >= 0.0 && settings.decay.is_finite()) {
        return Err(Error::invalid("decay", "must be non-negative"));
    }
    let lam = settings.decay;
    let reaction = &sys.reaction;
    let f1 = |u: f64, v: f64| reaction.eval(u, v).0 + lam * u;
    let f2 = |u: f64, v: f64| reaction.eval(u, v).1 + lam * v;
    let train1 = lattice(domain, settings.train_points, f1)?;
    let train2 = lattice(domain, settings.train_points, f2)?;
    let valid1 = lattice(domain, settings.validation_points, f1)?;
    let valid2 = lattice(domain, settings.validation_points, f2)?;
    let raw_f = lattice(domain, settings.train_points, |u, v| reaction.eval(u, v).0.abs())?;
    let raw_g = lattice(domain, settings.train_points, |u, v| reaction.eval(u, v).1.abs())?;
    let sup_f = raw_f.targets().iter().fold(0.0f64, |a, v| a.max(*v));
    let sup_g = raw_g.targets().iter().fold(0.0f64, |a, v| a.max(*v));

    let (phi1, rep1) = jones_fit(&train1, settings.m1, settings.search, settings.seed.wrapping_mul(2))?;
    let (phi2, rep2) = jones_fit(&train2, settings.m2, settings.search, settings.seed.wrapping_mul(2).wrapping_add(1))?;
    let report = TranspileReport {
        domain,
        m1: settings.m1,
        m2: settings.m2,
        decay: lam,
        phi1: errors(&phi1, &train1, &valid1, sup_f),
        phi2: errors(&phi2, &train2, &valid2, sup_g),
        phi1_fit: rep1,
        phi2_fit: rep2,
        verification_error: None,
    };
    Ok((phi1, phi2, report))
}

/// The `m₁ + m₂`-gene block circuit with rank-2 interaction
/// `K = [[a bᵀ, γ b̄ᵀ], [γ̄ bᵀ, ā b̄ᵀ]]`.
pub fn assemble_block_circuit(spec: &BlockCircuitSpec) -> Result<GeneCircuit> {
    if !(spec.decay > 0.0 && spec.decay.is_finite()) {
        return Err(Error::invalid("decay", "the assembled circuit needs a positive decay rate"));
    }
    let (m1, m2) = (spec.m1, spec.m2);
    let m = m1 + m2;
    let mut left = Vec::with_capacity(2 * m);
    let mut right = Vec::with_capacity(2 * m);
    for i in 0..m1 {
        left.extend([spec.a[i], spec.gamma[i]]);
        right.extend([spec.b[i], 0.0]);
    }
    for i in 0..m2 {
        left.extend([spec.gammabar[i], spec.abar[i]]);
        right.extend([0.0, spec.bbar[i]]);
    }
    let mut d = vec![spec.d1; m1];
    d.extend(std::iter::repeat(spec.d2).take(m2));
    let mut eta = spec.theta_hat.clone();
    eta.extend_from_slice(&spec.thetabar);
    let c = GeneCircuit {
        m,
        kinds: vec![GeneKind::Sigmoid; m],
        k: Interaction::LowRank { rank: 2, left, right },
        r: vec![1.0; m],
        lambda: vec![spec.decay; m],
        d,
        eta,
        theta: vec![Threshold::Zero; m],
        output_gene: 0,
    };
    c.validate()?;
    Ok(c)
}

/// Gene state whose collective variables equal `(u0, v0)`: at each point,
/// the least-norm `y ∈ [0, 1/λ]^m₁` with `Σ b_i y_i = u0`, and likewise for
/// `z`. Staying inside the box keeps the circuit within its invariant.
pub fn matched_initial_state(spec: &BlockCircuitSpec, u0: &Field, v0: &Field) -> Result<Vec<f64>> {
    let n = u0.values().len();
    if v0.values().len() != n {
        return Err(Error::InvalidGrid("u and v initial data differ in size".into()));
    }
    let top = 1.0 / spec.decay;
    let m = spec.m1 + spec.m2;
    let mut state = vec![0.0; m * n];
    for (block, (weights, target, offset)) in [(&spec.b, u0, 0), (&spec.bbar, v0, spec.m1)].into_iter().enumerate() {
        for (p, &goal) in target.values().iter().enumerate() {
            let tau = box_multiplier(weights, top, goal).ok_or_else(|| {
                Error::invalid(
                    if block == 0 { "u_init" } else { "v_init" },
                    format!("value {goal} at point {p} is not reachable with genes in [0, {top}]"),
                )
            })?;
            for (i, &w) in weights.iter().enumerate() {
                state[(offset + i) * n + p] = (tau * w).clamp(0.0, top);
            }
        }
    }
    Ok(state)
}

/// `τ` with `Σ w_i clamp(τ w_i, 0, top) = goal`; the left side increases with `τ`.
fn box_multiplier(w: &[f64], top: f64, goal: f64) -> Option<f64> {
    let phi = |tau: f64| w.iter().map(|&b| b * (tau * b).clamp(0.0, top)).sum::<f64>();
    let hi_val: f64 = w.iter().filter(|&&b| b > 0.0).map(|b| b * top).sum();
    let lo_val: f64 = w.iter().filter(|&&b| b < 0.0).map(|b| b * top).sum();
    if goal > hi_val || goal < lo_val {
        return None;
    }
    if goal == 0.0 {
        return Some(0.0);
    }
    // bracket, then bisect to the last representable step
    let mut lo = -1.0;
    let mut hi = 1.0;
    while phi(hi) < goal {
        hi *= 2.0;
        if !hi.is_finite() {
            return Some(hi);
        }
    }
    while phi(lo) > goal {
        lo *= 2.0;
        if !lo.is_finite() {
            return Some(lo);
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if phi(mid) < goal {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Some(if (phi(lo) - goal).abs() <= (phi(hi) - goal).abs() { lo } else { hi })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub sup_u: f64,
    pub sup_v: f64,
    /// `sup_u + sup_v`.
    pub error: f64,
    pub steps: usize,
    pub integrator: String,
}

/// Collective variables of the simulated circuit together with the directly
/// integrated fitted system.
#[derive(Debug, Clone, PartialEq)]
pub struct TranspileComparison {
    pub times: Vec<f64>,
    pub circuit_u: Vec<Vec<f64>>,
    pub circuit_v: Vec<Vec<f64>>,
    pub direct_u: Vec<Vec<f64>>,
    pub direct_v: Vec<Vec<f64>>,
    pub report: VerifyReport,
    pub bounds: BoundsReport,
}

/// Simulates the circuit and integrates `u' = d₁Δu + Φ₁ − λu`,
/// `v' = d₂Δv + Φ₂ − λv` from the collective initial data with the same
/// scheme and step (Euler if any diffusion, RK4 otherwise).
pub fn verify_transpile(
    spec: &BlockCircuitSpec,
    phi1: &SigmoidSum,
    phi2: &SigmoidSum,
    grid: &Grid,
    t_end: f64,
    dt: f64,
    frame_stride: usize,
    init: Option<&[f64]>,
) -> Result<TranspileComparison> {
    let circuit = assemble_block_circuit(spec)?;
    let steps = step_count(t_end, dt)?;
    let opts = SimOptions {
        t_end,
        dt,
        frame_stride,
        record: None,
        init: init.map(|v| v.to_vec()),
    };
    let traj = simulate_circuit_with(&circuit, grid, &opts)?;
    let (r, s) = spec.collective_weights();
    let cu = collective_variables(&traj, &r)?;
    let cv = collective_variables(&traj, &s)?;
    let u0 = Field::new(*grid, cu.frames[0].clone())?;
    let v0 = Field::new(*grid, cv.frames[0].clone())?;
    let sys = RDSystem {
        d1: spec.d1,
        d2: spec.d2,
        reaction: Reaction::SigmoidSums {
            phi1: phi1.clone(),
            phi2: phi2.clone(),
            decay: spec.decay,
        },
    };
    let (direct_u, direct_v, integrator) = if circuit.has_diffusion() {
        let tr = simulate_rd(&sys, &u0, &v0, t_end, dt, frame_stride)?;
        (tr.u, tr.v, "euler")
    } else {
        let (u, v) = rk4_reaction(&sys.reaction, u0.values(), v0.values(), steps, dt, frame_stride)?;
        (u, v, "rk4")
    };
    let sup_diff = |a: &[Vec<f64>], b: &[Vec<f64>]| {
        a.iter()
            .zip(b)
            .flat_map(|(x, y)| x.iter().zip(y).map(|(p, q)| (p - q).abs()))
            .fold(0.0f64, f64::max)
    };
    let sup_u = sup_diff(&cu.frames, &direct_u);
    let sup_v = sup_diff(&cv.frames, &direct_v);
    Ok(TranspileComparison {
        times: traj.times,
        circuit_u: cu.frames,
        circuit_v: cv.frames,
        direct_u,
        direct_v,
        report: VerifyReport {
            sup_u,
            sup_v,
            error: sup_u + sup_v,
            steps,
            integrator: integrator.into(),
        },
        bounds: traj.step_bounds,
    })
}

type Frames = Vec<Vec<f64>>;

/// Pointwise RK4 for a diffusion-free reaction system.
fn rk4_reaction(r: &Reaction, u0: &[f64], v0: &[f64], steps: usize, dt: f64, stride: usize) -> Result<(Frames, Frames)> {
    let mut u = u0.to_vec();
    let mut v = v0.to_vec();
    let mut us = vec![u.clone()];
    let mut vs = vec![v.clone()];
    for step in 1..=steps {
        for p in 0..u.len() {
            let (a, b) = (u[p], v[p]);
            let (k1u, k1v) = r.eval(a, b);
            let (k2u, k2v) = r.eval(a + 0.5 * dt * k1u, b + 0.5 * dt * k1v);
            let (k3u, k3v) = r.eval(a + 0.5 * dt * k2u, b + 0.5 * dt * k2v);
            let (k4u, k4v) = r.eval(a + dt * k3u, b + dt * k3v);
            u[p] = a + dt / 6.0 * (k1u + 2.0 * k2u + 2.0 * k3u + k4u);
            v[p] = b + dt / 6.0 * (k1v + 2.0 * k2v + 2.0 * k3v + k4v);
            if !(u[p].is_finite() && v[p].is_finite()) {
                return Err(Error::BlowUp { step, component: p });
            }
        }
        if step % stride == 0 || step == steps {
            us.push(u.clone());
            vs.push(v.clone());
        }
    }
    Ok((us, vs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sigmoid::Unit;

    fn unit(b: f64, a: f64, g: f64, eta: f64) -> Unit {
        Unit {
            outer: b,
            weights: vec![a, g],
            eta,
        }
    }

    #[test]
    fn all_ones_block() {
        let phi1 = SigmoidSum::new(2, vec![unit(1.0, 1.0, 1.0, 0.0)]).unwrap();
        let phi2 = SigmoidSum::new(2, vec![unit(1.0, 1.0, 1.0, 0.0)]).unwrap();
        let spec = BlockCircuitSpec::from_sums(&phi1, &phi2, 0.0, 0.0, 1.0).unwrap();
        let c = assemble_block_circuit(&spec).unwrap();
        assert_eq!(c.k.to_dense(2), vec![1.0; 4]);
        assert_eq!(c.r, vec![1.0, 1.0]);
        assert_eq!(c.lambda, vec![1.0, 1.0]);
    }

    #[test]
    fn block_layout() {
        let phi1 = SigmoidSum::new(2, vec![unit(2.0, 3.0, 5.0, 0.1), unit(-1.0, 0.5, 0.0, 0.2)]).unwrap();
        let phi2 = SigmoidSum::new(2, vec![unit(7.0, 11.0, 13.0, 0.3)]).unwrap();
        let spec = BlockCircuitSpec::from_sums(&phi1, &phi2, 1.0, 50.0, 1.0).unwrap();
        let c = assemble_block_circuit(&spec).unwrap();
        let k = c.k.to_dense(3);
        // y-rows: a_i b_j | γ_i b̄_j ; z-row: γ̄ b_j | ā b̄
        assert_eq!(&k[0..3], &[3.0 * 2.0, 3.0 * -1.0, 5.0 * 7.0]);
        assert_eq!(&k[3..6], &[0.5 * 2.0, 0.5 * -1.0, 0.0 * 7.0]);
        assert_eq!(&k[6..9], &[11.0 * 2.0, 11.0 * -1.0, 13.0 * 7.0]);
        assert_eq!(c.d, vec![1.0, 1.0, 50.0]);
        assert_eq!(c.eta, vec![0.1, 0.2, 0.3]);
    }

    #[test]
    fn zero_reaction_fits_to_zero() {
        let sys = RDSystem {
            d1: 1.0,
            d2: 1.0,
            reaction: Reaction::None,
        };
        let settings = TranspileSettings {
            m1: 4,
            m2: 4,
            search: SearchSettings::with_budget(10),
            train_points: 8,
            validation_points: 12,
            decay: 0.0,
            ..Default::default()
        };
        let (p1, p2, rep) = fit_nonlinearities(&sys, FitDomain { c1: 1.0, c2: 1.0 }, &settings).unwrap();
        assert!(p1.units.iter().chain(&p2.units).all(|u| u.outer == 0.0));
        assert_eq!(rep.phi1.validation_sup, 0.0);
        assert_eq!(rep.phi2.train_sup, 0.0);
    }

    #[test]
    fn zero_sums_stay_at_zero() {
        let phi = SigmoidSum::new(2, vec![unit(0.0, 1.0, -1.0, 0.0)]).unwrap();
        let spec = BlockCircuitSpec::from_sums(&phi, &phi, 0.0, 0.0, 1.0).unwrap();
        let grid = Grid::line(0.0, 1.0, 3).unwrap();
        let cmp = verify_transpile(&spec, &phi, &phi, &grid, 1.0, 0.01, 10, None).unwrap();
        assert_eq!(cmp.report.error, 0.0);
        assert!(cmp.circuit_u.iter().flatten().all(|&x| x == 0.0));
    }

    #[test]
    fn small_case_is_exact() {
        let phi1 = SigmoidSum::new(2, vec![unit(0.8, 1.5, -0.7, 0.2)]).unwrap();
        let phi2 = SigmoidSum::new(2, vec![unit(-0.6, 0.4, 2.0, -0.1)]).unwrap();
        let spec = BlockCircuitSpec::from_sums(&phi1, &phi2, 0.0, 0.0, 1.0).unwrap();
        let grid = Grid::line(0.0, 1.0, 2).unwrap();
        let cmp = verify_transpile(&spec, &phi1, &phi2, &grid, 5.0, 0.01, 50, None).unwrap();
        assert_eq!(cmp.report.integrator, "rk4");
        assert!(cmp.report.error < 1e-10, "{}", cmp.report.error);
    }

    #[test]
    fn matched_state_reproduces_initial_data() {
        let phi1 = SigmoidSum::new(2, vec![unit(0.8, 1.0, 0.0, 0.0), unit(-0.5, 0.0, 1.0, 0.0), unit(1.5, 1.0, 1.0, 0.0)]).unwrap();
        let phi2 = SigmoidSum::new(2, vec![unit(2.0, 1.0, 0.0, 0.0)]).unwrap();
        let spec = BlockCircuitSpec::from_sums(&phi1, &phi2, 0.0, 0.0, 1.0).unwrap();
        let grid = Grid::line(0.0, 1.0, 4).unwrap();
        let u0 = Field::new(grid, vec![0.0, 0.5, 2.0, -0.3]).unwrap();
        let v0 = Field::constant(grid, 1.2);
        let state = matched_initial_state(&spec, &u0, &v0).unwrap();
        let (r, s) = spec.collective_weights();
        for p in 0..4 {
            let u: f64 = (0..4).map(|i| r[i] * state[i * 4 + p]).sum();
            let v: f64 = (0..4).map(|i| s[i] * state[i * 4 + p]).sum();
            assert!((u - u0.values()[p]).abs() < 1e-14);
            assert!((v - 1.2).abs() < 1e-14);
        }
        assert!(state.iter().all(|&y| (0.0..=1.0).contains(&y)));
        let too_big = Field::constant(grid, 2.5);
        assert!(matched_initial_state(&spec, &too_big, &v0).is_err());
    }
}
