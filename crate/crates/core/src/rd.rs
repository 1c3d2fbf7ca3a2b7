//! Two-component reaction-diffusion systems and their explicit simulation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{fmt_f64, Field, Grid};
use crate::sigmoid::SigmoidSum;

/// Safety factor in the explicit diffusion bound `dt ≤ s·h²/(2·d·dim)`.
pub const DIFFUSION_SAFETY: f64 = 0.25;

/// Coefficients of the Meinhardt activator-inhibitor kinetics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeinhardtParams {
    pub alpha: f64,
    pub alpha1: f64,
    pub beta1: f64,
    pub kappa1: f64,
    pub beta2: f64,
    pub kappa2: f64,
}

impl Default for MeinhardtParams {
    fn default() -> Self {
        Self {
            alpha: 8.0,
            alpha1: 1.0,
            beta1: 0.0,
            kappa1: 2.0,
            beta2: 1.0,
            kappa2: 0.0,
        }
    }
}

impl MeinhardtParams {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("alpha", self.alpha),
            ("alpha1", self.alpha1),
            ("beta1", self.beta1),
            ("kappa1", self.kappa1),
            ("beta2", self.beta2),
            ("kappa2", self.kappa2),
        ];
        for (name, v) in fields {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::invalid(name, "must be finite and non-negative"));
            }
        }
        Ok(())
    }

    #[inline]
    fn production(&self, u: f64, v: f64) -> f64 {
        self.alpha * v * (u * u / (1.0 + self.alpha1 * u * u) + self.beta1)
    }
}

/// `αv(u²/(1+α₁u²)+β₁) − κ₁u`
#[inline]
pub fn meinhardt_f(u: f64, v: f64, p: &MeinhardtParams) -> f64 {
    p.production(u, v) - p.kappa1 * u
}

/// `β₂ − αv(u²/(1+α₁u²)+β₁) − κ₂v`
#[inline]
pub fn meinhardt_g(u: f64, v: f64, p: &MeinhardtParams) -> f64 {
    p.beta2 - p.production(u, v) - p.kappa2 * v
}

/// Homogeneous equilibrium `u₀ = β₂/κ₁`, `v₀ = (κ₁² + α₁β₂²)/(αβ₂)`.
///
/// The formula nulls both kinetics only when `β₁ = κ₂ = 0`; the residual is
/// checked and a violation is reported as an error.
pub fn equilibrium(p: &MeinhardtParams) -> Result<(f64, f64)> {
    p.validate()?;
    if p.kappa1 <= 0.0 || p.alpha <= 0.0 || p.beta2 <= 0.0 {
        return Err(Error::invalid("params", "equilibrium needs kappa1, alpha, beta2 > 0"));
    }
    let u0 = p.beta2 / p.kappa1;
    let v0 = (p.kappa1 * p.kappa1 + p.alpha1 * p.beta2 * p.beta2) / (p.alpha * p.beta2);
    let residual = meinhardt_f(u0, v0, p).abs().max(meinhardt_g(u0, v0, p).abs());
    if residual > 1e-10 {
        return Err(Error::InvalidEquilibrium { residual });
    }
    Ok((u0, v0))
}

/// Whether `[0,C₁]×[0,C₂]` satisfies the two sufficient conditions for an
/// invariant rectangle of the Meinhardt kinetics.
pub fn check_invariant_rectangle(p: &MeinhardtParams, c1: f64, c2: f64) -> bool {
    let cond1 = p.alpha * c2 * (c1 * c1 / (1.0 + p.alpha1 * c1 * c1) + p.beta1) < p.kappa1 * c1;
    let cond2 = p.beta2 < (p.alpha * p.beta1 + p.kappa2) * c2;
    cond1 && cond2
}

/// The reaction terms `f`, `g` of an RD system.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Reaction {
    Meinhardt(MeinhardtParams),
    /// `f = Φ₁(u,v) − decay·u`, `g = Φ₂(u,v) − decay·v` with sigmoid sums
    /// over the input `(u, v)`.
    SigmoidSums {
        phi1: SigmoidSum,
        phi2: SigmoidSum,
        decay: f64,
    },
    /// `f = g = 0`.
    None,
}

impl Reaction {
    pub fn validate(&self) -> Result<()> {
        match self {
            Reaction::Meinhardt(p) => p.validate(),
            Reaction::SigmoidSums { phi1, phi2, decay } => {
                for (name, s) in [("phi1", phi1), ("phi2", phi2)] {
                    if s.input_dim != 2 {
                        return Err(Error::invalid(name, "sigmoid sum must take (u, v)"));
                    }
                    s.validate()?;
                }
                if !(decay.is_finite() && *decay >= 0.0) {
                    return Err(Error::invalid("decay", "must be finite and non-negative"));
                }
                Ok(())
            }
            Reaction::None => Ok(()),
        }
    }

    #[inline]
    pub fn eval(&self, u: f64, v: f64) -> (f64, f64) {
        match self {
            Reaction::Meinhardt(p) => (meinhardt_f(u, v, p), meinhardt_g(u, v, p)),
            Reaction::SigmoidSums { phi1, phi2, decay } => {
                let q = [u, v];
                (phi1.eval_unchecked(&q) - decay * u, phi2.eval_unchecked(&q) - decay * v)
            }
            Reaction::None => (0.0, 0.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RDSystem {
    pub d1: f64,
    pub d2: f64,
    pub reaction: Reaction,
}

impl RDSystem {
    pub fn meinhardt(d1: f64, d2: f64, params: MeinhardtParams) -> Self {
        Self {
            d1,
            d2,
            reaction: Reaction::Meinhardt(params),
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, d) in [("d1", self.d1), ("d2", self.d2)] {
            if !(d.is_finite() && d >= 0.0) {
                return Err(Error::invalid(name, "diffusion coefficient must be non-negative"));
            }
        }
        self.reaction.validate()
    }
}

/// Largest explicit-Euler step admitted for diffusion `d_max` on `grid`.
pub fn diffusion_dt_bound(grid: &Grid, d_max: f64) -> f64 {
    if d_max <= 0.0 {
        return f64::INFINITY;
    }
    let h = grid.min_spacing();
    DIFFUSION_SAFETY * h * h / (2.0 * d_max * grid.dim() as f64)
}

/// Number of steps of size `dt` that reach `t_end`; `t_end` must be a whole
/// number of steps.
pub(crate) fn step_count(t_end: f64, dt: f64) -> Result<usize> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::invalid("dt", "must be positive"));
    }
    if !(t_end > 0.0 && t_end.is_finite()) {
        return Err(Error::invalid("t_end", "must be positive"));
    }
    let n = (t_end / dt).round();
    if n < 1.0 || (n * dt - t_end).abs() > 1e-9 * t_end {
        return Err(Error::invalid("dt", "t_end must be a whole number of steps"));
    }
    Ok(n as usize)
}

/// Sup/inf of each component over every step of a run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RealizedBounds {
    pub u_min: f64,
    pub u_max: f64,
    pub v_min: f64,
    pub v_max: f64,
}

impl RealizedBounds {
    fn of(u: &[f64], v: &[f64]) -> Self {
        let mut b = Self {
            u_min: f64::INFINITY,
            u_max: f64::NEG_INFINITY,
            v_min: f64::INFINITY,
            v_max: f64::NEG_INFINITY,
        };
        b.absorb_checked(u, v);
        b
    }

    /// Widens the box to cover `u`, `v`; false if any value is non-finite.
    fn absorb_checked(&mut self, u: &[f64], v: &[f64]) -> bool {
        let (ok_u, lo, hi) = scan(u);
        self.u_min = self.u_min.min(lo);
        self.u_max = self.u_max.max(hi);
        let (ok_v, lo, hi) = scan(v);
        self.v_min = self.v_min.min(lo);
        self.v_max = self.v_max.max(hi);
        ok_u && ok_v
    }
}

/// (all finite, min, max), in eight independent lanes so the loop vectorizes.
fn scan(xs: &[f64]) -> (bool, f64, f64) {
    const L: usize = 8;
    let mut lo = [f64::INFINITY; L];
    let mut hi = [f64::NEG_INFINITY; L];
    // x·0 is 0 for finite x and NaN otherwise
    let mut zero = [0.0f64; L];
    let chunks = xs.chunks_exact(L);
    let rest = chunks.remainder();
    for c in chunks {
        for k in 0..L {
            let x = c[k];
            lo[k] = if x < lo[k] { x } else { lo[k] };
            hi[k] = if x > hi[k] { x } else { hi[k] };
            zero[k] += x * 0.0;
        }
    }
    let mut ok = zero.iter().all(|&z| z == 0.0);
    let mut min = lo.iter().fold(f64::INFINITY, |a, &b| a.min(b));
    let mut max = hi.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    for &x in rest {
        ok &= x.is_finite();
        min = min.min(x);
        max = max.max(x);
    }
    (ok, min, max)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RDTrajectory {
    pub grid: Grid,
    pub times: Vec<f64>,
    pub u: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub bounds: RealizedBounds,
}

impl RDTrajectory {
    pub fn frame_count(&self) -> usize {
        self.times.len()
    }

    pub fn final_u(&self) -> &[f64] {
        self.u.last().expect("trajectory has frames")
    }

    pub fn final_v(&self) -> &[f64] {
        self.v.last().expect("trajectory has frames")
    }

    /// Long format: `t,x,u,v` (1D) or `t,x,y,u,v` (2D), frames in order.
    pub fn to_long_csv(&self) -> String {
        let pts = self.grid.points();
        let mut s = String::from(if self.grid.dim() == 1 { "t,x,u,v\n" } else { "t,x,y,u,v\n" });
        for (k, &t) in self.times.iter().enumerate() {
            for (i, p) in pts.iter().enumerate() {
                s.push_str(&fmt_f64(t));
                s.push(',');
                s.push_str(&fmt_f64(p.x1));
                if self.grid.dim() == 2 {
                    s.push(',');
                    s.push_str(&fmt_f64(p.x2));
                }
                s.push(',');
                s.push_str(&fmt_f64(self.u[k][i]));
                s.push(',');
                s.push_str(&fmt_f64(self.v[k][i]));
                s.push('\n');
            }
        }
        s
    }
}

/// Explicit Euler integration of `u_t = d₁Δu + f`, `v_t = d₂Δv + g` with
/// zero-flux boundaries. Frames are kept every `frame_stride` steps plus the
/// first and last.
pub fn simulate_rd(
    sys: &RDSystem,
    u_init: &Field,
    v_init: &Field,
    t_end: f64,
    dt: f64,
    frame_stride: usize,
) -> Result<RDTrajectory> {
    sys.validate()?;
    let grid = *u_init.grid();
    if *v_init.grid() != grid {
        return Err(Error::InvalidGrid("u and v initial data live on different grids".into()));
    }
    if frame_stride == 0 {
        return Err(Error::invalid("frame_stride", "must be at least 1"));
    }
    let steps = step_count(t_end, dt)?;
    let bound = diffusion_dt_bound(&grid, sys.d1.max(sys.d2));
    if dt > bound {
        return Err(Error::UnstableTimeStep {
            dt,
            bound,
            which: "diffusion",
        });
    }

    let n = grid.len();
    let mut u = u_init.values().to_vec();
    let mut v = v_init.values().to_vec();
    let mut un = vec![0.0; n];
    let mut vn = vec![0.0; n];
    let mut lu = vec![0.0; n];
    let mut lv = vec![0.0; n];
    let mut bounds = RealizedBounds::of(&u, &v);
    let mut times = vec![0.0];
    let mut us = vec![u.clone()];
    let mut vs = vec![v.clone()];
    let fused = match (&grid, &sys.reaction) {
        (Grid::D1(g), Reaction::Meinhardt(p)) => Some((1.0 / (g.spacing() * g.spacing()), *p)),
        _ => None,
    };

    for step in 1..=steps {
        match fused {
            Some((inv_h2, p)) => meinhardt_step_1d(&u, &v, &mut un, &mut vn, sys.d1, sys.d2, inv_h2, dt, &p),
            None => {
                grid.laplacian_into(&u, &mut lu);
                grid.laplacian_into(&v, &mut lv);
                for i in 0..n {
                    let (f, g) = sys.reaction.eval(u[i], v[i]);
                    un[i] = u[i] + dt * (sys.d1 * lu[i] + f);
                    vn[i] = v[i] + dt * (sys.d2 * lv[i] + g);
                }
            }
        }
        std::mem::swap(&mut u, &mut un);
        std::mem::swap(&mut v, &mut vn);
        if !bounds.absorb_checked(&u, &v) {
            let component = u.iter().chain(&v).position(|x| !x.is_finite()).unwrap_or(0);
            return Err(Error::BlowUp { step, component });
        }
        if step % frame_stride == 0 || step == steps {
            times.push(step as f64 * dt);
            us.push(u.clone());
            vs.push(v.clone());
        }
    }
    Ok(RDTrajectory {
        grid,
        times,
        u: us,
        v: vs,
        bounds,
    })
}

/// One explicit Euler step of the Meinhardt system on a line, stencil and
/// kinetics fused; arithmetic is identical to the generic path.
#[allow(clippy::too_many_arguments)]
fn meinhardt_step_1d(
    u: &[f64],
    v: &[f64],
    un: &mut [f64],
    vn: &mut [f64],
    d1: f64,
    d2: f64,
    inv_h2: f64,
    dt: f64,
    p: &MeinhardtParams,
) {
    let n = u.len();
    let update = |ui: f64, vi: f64, lu: f64, lv: f64| {
        let prod = p.production(ui, vi);
        (
            ui + dt * (d1 * lu + (prod - p.kappa1 * ui)),
            vi + dt * (d2 * lv + (p.beta2 - prod - p.kappa2 * vi)),
        )
    };
    let (a, b) = update(u[0], v[0], (u[1] - 2.0 * u[0] + u[1]) * inv_h2, (v[1] - 2.0 * v[0] + v[1]) * inv_h2);
    un[0] = a;
    vn[0] = b;
    // equal-length shifted views let the compiler drop bounds checks
    let m = n - 2;
    let (ul, uc, ur) = (&u[..m], &u[1..m + 1], &u[2..]);
    let (vl, vc, vr) = (&v[..m], &v[1..m + 1], &v[2..]);
    let uo = &mut un[1..m + 1];
    let vo = &mut vn[1..m + 1];
    for i in 0..m {
        let lu = (ul[i] - 2.0 * uc[i] + ur[i]) * inv_h2;
        let lv = (vl[i] - 2.0 * vc[i] + vr[i]) * inv_h2;
        let (a, b) = update(uc[i], vc[i], lu, lv);
        uo[i] = a;
        vo[i] = b;
    }
    let l = n - 1;
    let (a, b) = update(
        u[l],
        v[l],
        (u[l - 1] - 2.0 * u[l] + u[l - 1]) * inv_h2,
        (v[l - 1] - 2.0 * v[l] + v[l - 1]) * inv_h2,
    );
    un[l] = a;
    vn[l] = b;
}

/// Interior points `i` with `v[i]` exceeding both neighbours by more than
/// `tol`; along plateaus the first point counts.
pub fn count_interior_maxima(v: &[f64], tol: f64) -> usize {
    let n = v.len();
    if n < 3 {
        return 0;
    }
    let mut count = 0;
    let mut i = 1;
    while i < n - 1 {
        if v[i] > v[i - 1] + tol {
            // walk across a flat top
            let mut j = i;
            while j + 1 < n - 1 && (v[j + 1] - v[i]).abs() <= tol {
                j += 1;
            }
            if j + 1 < n && v[i] > v[j + 1] + tol {
                count += 1;
            }
            i = j + 1;
        } else {
            i += 1;
        }
    }
    count
}

/// Rightmost abscissa of a 1D field where it exceeds `level`.
pub fn front_position(grid: &Grid, values: &[f64], level: f64) -> Option<f64> {
    values.iter().rposition(|&x| x > level).map(|i| grid.point(i).x1)
}

/// Equilibrium data with `u = 2u₀` on the left tenth of a 1D domain.
pub fn left_perturbation(grid: &Grid, params: &MeinhardtParams) -> Result<(Field, Field)> {
    let (u0, v0) = equilibrium(params)?;
    let (x0, x1) = match grid {
        Grid::D1(g) => (g.start(), g.end()),
        Grid::D2(_) => return Err(Error::InvalidGrid("the perturbed setup is one-dimensional".into())),
    };
    let cut = x0 + (x1 - x0) / 10.0;
    let u = crate::grid::sample_function(grid, |p| if p.x1 <= cut { 2.0 * u0 } else { u0 })?;
    Ok((u, Field::constant(*grid, v0)))
}
