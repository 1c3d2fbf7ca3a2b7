//! Gene circuits: `y_i' = R_i σ(Σ_j K_ij y_j − θ_i(x) − η_i) − λ_i y_i + d_i Δy_i`.
//!
//! Besides the saturating genes of that form, a circuit may contain linear
//! relay genes (`R_i(Σ K_ij y_j − θ_i − η_i) − λ_i y_i`) and integrator genes
//! (`y_i' = R_i`), which some constructions need. Neither kind obeys the box
//! bound `[0, R_i/λ_i]`; both are exempt from [`bounds_check`].

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{fmt_f64, Grid};
use crate::rd::{diffusion_dt_bound, step_count};
use crate::sigmoid::sigma;

/// Margin allowed above the box bound for saturating genes.
pub const BOX_TOLERANCE: f64 = 1e-9;

/// `dt · max λ` may not exceed this.
pub const STIFFNESS_LIMIT: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GeneKind {
    Sigmoid,
    Linear,
    Integrator,
}

impl GeneKind {
    pub fn is_saturating(self) -> bool {
        self == GeneKind::Sigmoid
    }
}

/// Spatial threshold of one gene.
#[derive(Debug, Clone, PartialEq)]
pub enum Threshold {
    Zero,
    Constant(f64),
    /// `a + b·x₁`
    Ramp { a: f64, b: f64 },
    /// `a + b·x₂`
    RampX2 { a: f64, b: f64 },
    /// One value per grid point, canonical order.
    Samples(Vec<f64>),
}

impl Threshold {
    pub fn values(&self, grid: &Grid) -> Result<Vec<f64>> {
        let n = grid.len();
        Ok(match self {
            Threshold::Zero => vec![0.0; n],
            Threshold::Constant(c) => vec![*c; n],
            Threshold::Ramp { a, b } => grid.points().iter().map(|p| a + b * p.x1).collect(),
            Threshold::RampX2 { a, b } => {
                if grid.dim() != 2 {
                    return Err(Error::InvalidGrid("linear-ramp-x2 needs a 2D grid".into()));
                }
                grid.points().iter().map(|p| a + b * p.x2).collect()
            }
            Threshold::Samples(v) => {
                if v.len() != n {
                    return Err(Error::DimensionMismatch {
                        context: "threshold samples",
                        expected: n,
                        got: v.len(),
                    });
                }
                v.clone()
            }
        })
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, Threshold::Zero)
    }

    fn parse_tag(tag: &str) -> std::result::Result<Self, String> {
        let tag = tag.trim();
        if tag == "zero" {
            return Ok(Threshold::Zero);
        }
        let open = tag.find('(').ok_or_else(|| format!("unknown threshold tag `{tag}`"))?;
        if !tag.ends_with(')') {
            return Err(format!("malformed threshold tag `{tag}`"));
        }
        let name = &tag[..open];
        let args: Vec<f64> = tag[open + 1..tag.len() - 1]
            .split(',')
            .map(|s| s.trim().parse::<f64>().map_err(|e| format!("bad number in `{tag}`: {e}")))
            .collect::<std::result::Result<_, _>>()?;
        if args.iter().any(|v| !v.is_finite()) {
            return Err(format!("non-finite parameter in `{tag}`"));
        }
        match (name, args.as_slice()) {
            ("constant", [c]) => Ok(Threshold::Constant(*c)),
            ("linear-ramp", [a, b]) => Ok(Threshold::Ramp { a: *a, b: *b }),
            ("linear-ramp-x2", [a, b]) => Ok(Threshold::RampX2 { a: *a, b: *b }),
            _ => Err(format!("unknown threshold tag `{tag}`")),
        }
    }
}

impl fmt::Display for Threshold {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        // `{:?}` on f64 prints the shortest string that parses back exactly
        match self {
            Threshold::Zero => write!(f, "zero"),
            Threshold::Constant(c) => write!(f, "constant({c:?})"),
            Threshold::Ramp { a, b } => write!(f, "linear-ramp({a:?},{b:?})"),
            Threshold::RampX2 { a, b } => write!(f, "linear-ramp-x2({a:?},{b:?})"),
            Threshold::Samples(_) => write!(f, "samples"),
        }
    }
}

impl Serialize for Threshold {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Threshold::Samples(v) => v.serialize(s),
            other => s.serialize_str(&other.to_string()),
        }
    }
}

impl<'de> Deserialize<'de> for Threshold {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Tag(String),
            Samples(Vec<f64>),
        }
        match Raw::deserialize(d)? {
            Raw::Tag(t) => Threshold::parse_tag(&t).map_err(serde::de::Error::custom),
            Raw::Samples(v) => Ok(Threshold::Samples(v)),
        }
    }
}

/// Storage for the interaction matrix `K`.
#[derive(Debug, Clone, PartialEq)]
pub enum Interaction {
    /// Row-major `m × m`.
    Dense(Vec<f64>),
    /// Compressed rows.
    Sparse {
        row_ptr: Vec<usize>,
        cols: Vec<usize>,
        vals: Vec<f64>,
    },
    /// `K_ij = Σ_k left[i][k] · right[j][k]`, row-major `m × rank` factors.
    LowRank {
        rank: usize,
        left: Vec<f64>,
        right: Vec<f64>,
    },
}

impl Interaction {
    pub fn zeros(m: usize) -> Self {
        Interaction::Sparse {
            row_ptr: vec![0; m + 1],
            cols: Vec::new(),
            vals: Vec::new(),
        }
    }

    /// Builds compressed rows from `(row, col, value)` triplets; entries in a
    /// row keep their given order.
    pub fn from_triplets(m: usize, mut entries: Vec<(usize, usize, f64)>) -> Result<Self> {
        if let Some(&(i, j, _)) = entries.iter().find(|(i, j, _)| *i >= m || *j >= m) {
            return Err(Error::invalid("K", format!("entry ({i}, {j}) outside a {m}-gene matrix")));
        }
        entries.sort_by_key(|&(i, _, _)| i);
        let mut row_ptr = vec![0; m + 1];
        for &(i, _, _) in &entries {
            row_ptr[i + 1] += 1;
        }
        for i in 0..m {
            row_ptr[i + 1] += row_ptr[i];
        }
        Ok(Interaction::Sparse {
            row_ptr,
            cols: entries.iter().map(|e| e.1).collect(),
            vals: entries.iter().map(|e| e.2).collect(),
        })
    }

    fn validate(&self, m: usize) -> Result<()> {
        let finite = |v: &[f64], what: &str| -> Result<()> {
            match v.iter().position(|x| !x.is_finite()) {
                Some(i) => Err(Error::Schema {
                    path: format!("{what}[{i}]"),
                    message: "non-finite value".into(),
                }),
                None => Ok(()),
            }
        };
        match self {
            Interaction::Dense(k) => {
                if k.len() != m * m {
                    return Err(Error::DimensionMismatch {
                        context: "interaction matrix",
                        expected: m * m,
                        got: k.len(),
                    });
                }
                finite(k, "K")
            }
            Interaction::Sparse { row_ptr, cols, vals } => {
                let ok = row_ptr.len() == m + 1
                    && row_ptr[0] == 0
                    && row_ptr.windows(2).all(|w| w[0] <= w[1])
                    && row_ptr[m] == cols.len()
                    && cols.len() == vals.len()
                    && cols.iter().all(|&j| j < m);
                if !ok {
                    return Err(Error::invalid("K", "malformed sparse rows"));
                }
                finite(vals, "K")
            }
            Interaction::LowRank { rank, left, right } => {
                if left.len() != m * rank || right.len() != m * rank {
                    return Err(Error::DimensionMismatch {
                        context: "interaction factors",
                        expected: m * rank,
                        got: left.len().min(right.len()),
                    });
                }
                finite(left, "K_factors.left")?;
                finite(right, "K_factors.right")
            }
        }
    }

    /// Non-zero entries `(row, col, value)` in row order. Sparse rows are
    /// returned as stored, so a matrix rebuilt from them applies identically.
    pub fn triplets(&self, m: usize) -> Vec<(usize, usize, f64)> {
        match self {
            Interaction::Sparse { row_ptr, cols, vals } => (0..m)
                .flat_map(|i| (row_ptr[i]..row_ptr[i + 1]).map(move |e| (i, cols[e], vals[e])))
                .collect(),
            _ => {
                let k = self.to_dense(m);
                (0..m * m).filter(|&e| k[e] != 0.0).map(|e| (e / m, e % m, k[e])).collect()
            }
        }
    }

    /// Row-major dense copy.
    pub fn to_dense(&self, m: usize) -> Vec<f64> {
        match self {
            Interaction::Dense(k) => k.clone(),
            Interaction::Sparse { row_ptr, cols, vals } => {
                let mut k = vec![0.0; m * m];
                for i in 0..m {
                    for e in row_ptr[i]..row_ptr[i + 1] {
                        k[i * m + cols[e]] += vals[e];
                    }
                }
                k
            }
            Interaction::LowRank { rank, left, right } => {
                let r = *rank;
                let mut k = vec![0.0; m * m];
                for i in 0..m {
                    for j in 0..m {
                        let mut s = 0.0;
                        for q in 0..r {
                            s += left[i * r + q] * right[j * r + q];
                        }
                        k[i * m + j] = s;
                    }
                }
                k
            }
        }
    }

    /// `out[i·n + p] = Σ_j K_ij y[j·n + p]` for gene-major states over `n` points.
    fn apply(&self, m: usize, n: usize, y: &[f64], out: &mut [f64], scratch: &mut Vec<f64>) {
        out.iter_mut().for_each(|v| *v = 0.0);
        match self {
            Interaction::Dense(k) => {
                for i in 0..m {
                    let acc = &mut out[i * n..(i + 1) * n];
                    for j in 0..m {
                        let w = k[i * m + j];
                        if w != 0.0 {
                            axpy(w, &y[j * n..(j + 1) * n], acc);
                        }
                    }
                }
            }
            Interaction::Sparse { row_ptr, cols, vals } => {
                for i in 0..m {
                    let acc = &mut out[i * n..(i + 1) * n];
                    for e in row_ptr[i]..row_ptr[i + 1] {
                        let j = cols[e];
                        axpy(vals[e], &y[j * n..(j + 1) * n], acc);
                    }
                }
            }
            Interaction::LowRank { rank, left, right } => {
                let r = *rank;
                scratch.clear();
                scratch.resize(r * n, 0.0);
                for j in 0..m {
                    for q in 0..r {
                        let w = right[j * r + q];
                        if w != 0.0 {
                            axpy(w, &y[j * n..(j + 1) * n], &mut scratch[q * n..(q + 1) * n]);
                        }
                    }
                }
                for i in 0..m {
                    let acc = &mut out[i * n..(i + 1) * n];
                    for q in 0..r {
                        let w = left[i * r + q];
                        if w != 0.0 {
                            axpy(w, &scratch[q * n..(q + 1) * n], acc);
                        }
                    }
                }
            }
        }
    }
}

#[inline]
fn axpy(w: f64, x: &[f64], acc: &mut [f64]) {
    for (a, v) in acc.iter_mut().zip(x) {
        *a += w * v;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneCircuit {
    pub m: usize,
    pub kinds: Vec<GeneKind>,
    pub k: Interaction,
    pub r: Vec<f64>,
    pub lambda: Vec<f64>,
    pub d: Vec<f64>,
    pub eta: Vec<f64>,
    pub theta: Vec<Threshold>,
    pub output_gene: usize,
}

impl GeneCircuit {
    /// `m` saturating genes with no interactions, unit rates and zero thresholds.
    pub fn uniform(m: usize) -> Self {
        Self {
            m,
            kinds: vec![GeneKind::Sigmoid; m],
            k: Interaction::zeros(m),
            r: vec![1.0; m],
            lambda: vec![1.0; m],
            d: vec![0.0; m],
            eta: vec![0.0; m],
            theta: vec![Threshold::Zero; m],
            output_gene: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.m;
        if m == 0 {
            return Err(Error::invalid("m", "a circuit needs at least one gene"));
        }
        let lens = [
            ("kinds", self.kinds.len()),
            ("R", self.r.len()),
            ("lambda", self.lambda.len()),
            ("d", self.d.len()),
            ("eta", self.eta.len()),
            ("theta", self.theta.len()),
        ];
        for (name, len) in lens {
            if len != m {
                return Err(Error::invalid(name, format!("length {len} does not match m = {m}")));
            }
        }
        self.k.validate(m)?;
        for (name, v) in [("R", &self.r), ("lambda", &self.lambda), ("d", &self.d), ("eta", &self.eta)] {
            if let Some(i) = v.iter().position(|x| !x.is_finite()) {
                return Err(Error::Schema {
                    path: format!("{name}[{i}]"),
                    message: "non-finite value".into(),
                });
            }
        }
        for i in 0..m {
            if self.kinds[i] != GeneKind::Integrator && self.lambda[i] <= 0.0 {
                return Err(Error::invalid(format!("lambda[{i}]"), "decay rate must be positive"));
            }
            if self.lambda[i] < 0.0 {
                return Err(Error::invalid(format!("lambda[{i}]"), "decay rate must be non-negative"));
            }
            if self.d[i] < 0.0 {
                return Err(Error::invalid(format!("d[{i}]"), "diffusion must be non-negative"));
            }
            if let Threshold::Samples(v) = &self.theta[i] {
                if let Some(p) = v.iter().position(|x| !x.is_finite()) {
                    return Err(Error::Schema {
                        path: format!("theta[{i}][{p}]"),
                        message: "non-finite value".into(),
                    });
                }
            }
        }
        if self.output_gene >= m {
            return Err(Error::invalid("output_gene", "index out of range"));
        }
        Ok(())
    }

    pub fn has_diffusion(&self) -> bool {
        self.d.iter().any(|&d| d > 0.0)
    }

    /// Genes exempt from the box bound.
    pub fn exempt_genes(&self) -> Vec<usize> {
        (0..self.m).filter(|&i| !self.kinds[i].is_saturating()).collect()
    }

    /// `[min(0, R/λ), max(0, R/λ)]` for a saturating gene.
    pub fn gene_box(&self, i: usize) -> (f64, f64) {
        let top = self.r[i] / self.lambda[i];
        (top.min(0.0), top.max(0.0))
    }

    /// Largest admissible step for `grid`: the tighter of the diffusion and
    /// stiffness bounds.
    pub fn dt_bound(&self, grid: &Grid) -> (f64, &'static str) {
        let d_max = self.d.iter().cloned().fold(0.0, f64::max);
        let diff = diffusion_dt_bound(grid, d_max);
        let lam_max = (0..self.m)
            .filter(|&i| self.kinds[i] != GeneKind::Integrator)
            .map(|i| self.lambda[i])
            .fold(0.0, f64::max);
        let stiff = if lam_max > 0.0 { STIFFNESS_LIMIT / lam_max } else { f64::INFINITY };
        if diff < stiff {
            (diff, "diffusion")
        } else {
            (stiff, "stiffness")
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimOptions {
    pub t_end: f64,
    pub dt: f64,
    pub frame_stride: usize,
    /// Genes kept in the frames; all when `None`.
    pub record: Option<Vec<usize>>,
    /// Gene-major initial state (`m × points`); zero when `None`.
    pub init: Option<Vec<f64>>,
}

impl SimOptions {
    pub fn new(t_end: f64, dt: f64, frame_stride: usize) -> Self {
        Self {
            t_end,
            dt,
            frame_stride,
            record: None,
            init: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CircuitTrajectory {
    pub grid: Grid,
    pub m: usize,
    pub times: Vec<f64>,
    /// Recorded gene indices, in frame order.
    pub genes: Vec<usize>,
    /// Per frame, gene-major values of the recorded genes.
    pub frames: Vec<Vec<f64>>,
    /// Box check over every step and every gene, recorded or not; `worst`
    /// holds (step, gene, point).
    pub step_bounds: BoundsReport,
}

impl CircuitTrajectory {
    pub fn points(&self) -> usize {
        self.grid.len()
    }

    /// Values of `gene` at frame `k`, if that gene was recorded.
    pub fn gene(&self, k: usize, gene: usize) -> Option<&[f64]> {
        let n = self.points();
        let slot = self.genes.iter().position(|&g| g == gene)?;
        Some(&self.frames[k][slot * n..(slot + 1) * n])
    }

    /// `t,x[,y],gene,value` rows.
    pub fn to_long_csv(&self) -> String {
        let pts = self.grid.points();
        let two = self.grid.dim() == 2;
        let mut s = String::from(if two { "t,x,y,gene,value\n" } else { "t,x,gene,value\n" });
        let n = self.points();
        for (k, &t) in self.times.iter().enumerate() {
            for (slot, &g) in self.genes.iter().enumerate() {
                for (p, pt) in pts.iter().enumerate() {
                    s.push_str(&fmt_f64(t));
                    s.push(',');
                    s.push_str(&fmt_f64(pt.x1));
                    if two {
                        s.push(',');
                        s.push_str(&fmt_f64(pt.x2));
                    }
                    s.push_str(&format!(",{g},"));
                    s.push_str(&fmt_f64(self.frames[k][slot * n + p]));
                    s.push('\n');
                }
            }
        }
        s
    }
}

/// Scalar values on a time × space lattice.
#[derive(Debug, Clone, PartialEq)]
pub struct SpaceTimeField {
    pub grid: Grid,
    pub times: Vec<f64>,
    pub frames: Vec<Vec<f64>>,
}

impl SpaceTimeField {
    pub fn sup_abs(&self) -> f64 {
        self.frames.iter().flatten().fold(0.0, |a, v| a.max(v.abs()))
    }

    /// `t,x[,y],value` rows.
    pub fn to_csv(&self) -> String {
        let pts = self.grid.points();
        let two = self.grid.dim() == 2;
        let mut s = String::from(if two { "t,x,y,value\n" } else { "t,x,value\n" });
        for (k, &t) in self.times.iter().enumerate() {
            for (p, pt) in pts.iter().enumerate() {
                s.push_str(&fmt_f64(t));
                s.push(',');
                s.push_str(&fmt_f64(pt.x1));
                if two {
                    s.push(',');
                    s.push_str(&fmt_f64(pt.x2));
                }
                s.push(',');
                s.push_str(&fmt_f64(self.frames[k][p]));
                s.push('\n');
            }
        }
        s
    }
}

/// Evaluates the right-hand side for all genes at once.
struct Rhs<'a> {
    c: &'a GeneCircuit,
    grid: Grid,
    n: usize,
    /// `θ_i(x_p) + η_i`, gene-major
    offset: Vec<f64>,
    ky: Vec<f64>,
    lap: Vec<f64>,
    scratch: Vec<f64>,
}

impl<'a> Rhs<'a> {
    fn new(c: &'a GeneCircuit, grid: &Grid) -> Result<Self> {
        let n = grid.len();
        let mut offset = Vec::with_capacity(c.m * n);
        for i in 0..c.m {
            let th = c.theta[i].values(grid)?;
            offset.extend(th.iter().map(|t| t + c.eta[i]));
        }
        Ok(Self {
            c,
            grid: *grid,
            n,
            offset,
            ky: vec![0.0; c.m * n],
            lap: vec![0.0; n],
            scratch: Vec::new(),
        })
    }

    fn eval(&mut self, y: &[f64], out: &mut [f64]) {
        let (c, n) = (self.c, self.n);
        c.k.apply(c.m, n, y, &mut self.ky, &mut self.scratch);
        for i in 0..c.m {
            let rng = i * n..(i + 1) * n;
            let (r, lam) = (c.r[i], c.lambda[i]);
            let yi = &y[rng.clone()];
            let ky = &self.ky[rng.clone()];
            let off = &self.offset[rng.clone()];
            let o = &mut out[rng.clone()];
            match c.kinds[i] {
                GeneKind::Sigmoid => {
                    for p in 0..n {
                        o[p] = r * sigma(ky[p] - off[p]) - lam * yi[p];
                    }
                }
                GeneKind::Linear => {
                    for p in 0..n {
                        o[p] = r * (ky[p] - off[p]) - lam * yi[p];
                    }
                }
                GeneKind::Integrator => o.iter_mut().for_each(|v| *v = r),
            }
            if c.d[i] > 0.0 {
                self.grid.laplacian_into(yi, &mut self.lap);
                let d = c.d[i];
                for p in 0..n {
                    o[p] += d * self.lap[p];
                }
            }
        }
    }
}

/// Simulates from zero initial data with all genes recorded.
pub fn simulate_circuit(c: &GeneCircuit, grid: &Grid, t_end: f64, dt: f64, frame_stride: usize) -> Result<CircuitTrajectory> {
    simulate_circuit_with(c, grid, &SimOptions::new(t_end, dt, frame_stride))
}

/// Fixed-step integration: classical RK4 when no gene diffuses, explicit
/// Euler otherwise.
pub fn simulate_circuit_with(c: &GeneCircuit, grid: &Grid, opts: &SimOptions) -> Result<CircuitTrajectory> {
    c.validate()?;
    if opts.frame_stride == 0 {
        return Err(Error::invalid("frame_stride", "must be at least 1"));
    }
    let steps = step_count(opts.t_end, opts.dt)?;
    let (bound, which) = c.dt_bound(grid);
    // a relative slack keeps bound-sized steps from failing on rounding
    if opts.dt > bound * (1.0 + 1e-12) {
        return Err(Error::UnstableTimeStep { dt: opts.dt, bound, which });
    }
    let n = grid.len();
    let size = c.m * n;
    let genes: Vec<usize> = match &opts.record {
        Some(g) => {
            if let Some(&bad) = g.iter().find(|&&i| i >= c.m) {
                return Err(Error::invalid("record", format!("gene {bad} out of range")));
            }
            g.clone()
        }
        None => (0..c.m).collect(),
    };
    let mut y = match &opts.init {
        Some(v) => {
            if v.len() != size {
                return Err(Error::DimensionMismatch {
                    context: "initial state",
                    expected: size,
                    got: v.len(),
                });
            }
            if let Some(i) = v.iter().position(|x| !x.is_finite()) {
                return Err(Error::NonFiniteSample { index: i });
            }
            v.clone()
        }
        None => vec![0.0; size],
    };

    let mut rhs = Rhs::new(c, grid)?;
    let snapshot = |y: &[f64]| -> Vec<f64> {
        let mut f = Vec::with_capacity(genes.len() * n);
        for &g in &genes {
            f.extend_from_slice(&y[g * n..(g + 1) * n]);
        }
        f
    };
    let mut times = vec![0.0];
    let mut frames = vec![snapshot(&y)];
    let mut watch = BoxWatch::new(c);
    watch.scan(0, &y, n);
    let dt = opts.dt;
    let rk4 = !c.has_diffusion();
    let mut k1 = vec![0.0; size];
    let (mut k2, mut k3, mut k4, mut tmp) = if rk4 {
        (vec![0.0; size], vec![0.0; size], vec![0.0; size], vec![0.0; size])
    } else {
        (Vec::new(), Vec::new(), Vec::new(), Vec::new())
    };

    for step in 1..=steps {
        if rk4 {
            rhs.eval(&y, &mut k1);
            stage(&y, &k1, 0.5 * dt, &mut tmp);
            rhs.eval(&tmp, &mut k2);
            stage(&y, &k2, 0.5 * dt, &mut tmp);
            rhs.eval(&tmp, &mut k3);
            stage(&y, &k3, dt, &mut tmp);
            rhs.eval(&tmp, &mut k4);
            let h6 = dt / 6.0;
            for idx in 0..size {
                y[idx] += h6 * (k1[idx] + 2.0 * k2[idx] + 2.0 * k3[idx] + k4[idx]);
            }
        } else {
            rhs.eval(&y, &mut k1);
            for idx in 0..size {
                y[idx] += dt * k1[idx];
            }
        }
        if let Some(idx) = first_non_finite(&y) {
            return Err(Error::BlowUp {
                step,
                component: idx / n,
            });
        }
        watch.scan(step, &y, n);
        if step % opts.frame_stride == 0 || step == steps {
            times.push(step as f64 * dt);
            frames.push(snapshot(&y));
        }
    }
    Ok(CircuitTrajectory {
        grid: *grid,
        m: c.m,
        times,
        genes,
        frames,
        step_bounds: watch.finish(c),
    })
}

/// Running maximum of box violations.
struct BoxWatch {
    boxes: Vec<(usize, f64, f64)>,
    max_violation: f64,
    worst: Option<(usize, usize, usize)>,
}

impl BoxWatch {
    fn new(c: &GeneCircuit) -> Self {
        let boxes = (0..c.m)
            .filter(|&i| c.kinds[i].is_saturating())
            .map(|i| {
                let (lo, hi) = c.gene_box(i);
                (i, lo, hi)
            })
            .collect();
        Self {
            boxes,
            max_violation: 0.0,
            worst: None,
        }
    }

    fn scan(&mut self, step: usize, y: &[f64], n: usize) {
        for &(g, lo, hi) in &self.boxes {
            let row = &y[g * n..(g + 1) * n];
            let v = row.iter().fold(0.0f64, |a, &x| a.max(lo - x).max(x - hi));
            if v > self.max_violation {
                self.max_violation = v;
                let p = row.iter().position(|&x| lo - x >= v || x - hi >= v).unwrap_or(0);
                self.worst = Some((step, g, p));
            }
        }
    }

    fn finish(self, c: &GeneCircuit) -> BoundsReport {
        BoundsReport {
            max_violation: self.max_violation,
            worst: self.worst,
            within_tolerance: self.max_violation <= BOX_TOLERANCE,
            exempt_genes: c.exempt_genes(),
        }
    }
}

#[inline]
fn stage(y: &[f64], k: &[f64], h: f64, out: &mut [f64]) {
    for ((o, a), b) in out.iter_mut().zip(y).zip(k) {
        *o = a + h * b;
    }
}

fn first_non_finite(y: &[f64]) -> Option<usize> {
    // x·0 is 0 unless x is infinite or NaN; summing lanes keeps this vectorized
    let mut z = [0.0f64; 8];
    for c in y.chunks(8) {
        for (k, &x) in c.iter().enumerate() {
            z[k] += x * 0.0;
        }
    }
    if z.iter().all(|&v| v == 0.0) {
        None
    } else {
        y.iter().position(|x| !x.is_finite())
    }
}

/// `Σ_i w_i y_i` per frame and point.
pub fn collective_variables(traj: &CircuitTrajectory, weights: &[f64]) -> Result<SpaceTimeField> {
    if weights.len() != traj.m {
        return Err(Error::DimensionMismatch {
            context: "collective weights",
            expected: traj.m,
            got: weights.len(),
        });
    }
    let n = traj.points();
    let mut slots = Vec::new();
    for (g, &w) in weights.iter().enumerate() {
        if w != 0.0 {
            let slot = traj
                .genes
                .iter()
                .position(|&x| x == g)
                .ok_or_else(|| Error::invalid("weights", format!("gene {g} was not recorded")))?;
            slots.push((slot, w));
        }
    }
    let frames = traj
        .frames
        .iter()
        .map(|f| {
            let mut out = vec![0.0; n];
            for &(slot, w) in &slots {
                axpy(w, &f[slot * n..(slot + 1) * n], &mut out);
            }
            out
        })
        .collect();
    Ok(SpaceTimeField {
        grid: traj.grid,
        times: traj.times.clone(),
        frames,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundsReport {
    /// Largest distance outside `[min(0,R/λ), max(0,R/λ)]` over recorded
    /// saturating genes, frames and points.
    pub max_violation: f64,
    /// (frame, gene, point) of the largest violation.
    pub worst: Option<(usize, usize, usize)>,
    pub within_tolerance: bool,
    /// Integrator and linear genes, which the bound does not cover.
    pub exempt_genes: Vec<usize>,
}

pub fn bounds_check(traj: &CircuitTrajectory, c: &GeneCircuit) -> BoundsReport {
    let n = traj.points();
    let mut max_violation: f64 = 0.0;
    let mut worst = None;
    for (k, frame) in traj.frames.iter().enumerate() {
        for (slot, &g) in traj.genes.iter().enumerate() {
            if !c.kinds[g].is_saturating() {
                continue;
            }
            let (lo, hi) = c.gene_box(g);
            for p in 0..n {
                let y = frame[slot * n + p];
                let v = (lo - y).max(y - hi).max(0.0);
                let v = if y.is_nan() { f64::INFINITY } else { v };
                if v > max_violation {
                    max_violation = v;
                    worst = Some((k, g, p));
                }
            }
        }
    }
    BoundsReport {
        max_violation,
        worst,
        within_tolerance: max_violation <= BOX_TOLERANCE,
        exempt_genes: c.exempt_genes(),
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CircuitFile {
    m: usize,
    kinds: Vec<GeneKind>,
    #[serde(rename = "K")]
    k: Vec<f64>,
    #[serde(rename = "K_factors", default, skip_serializing_if = "Option::is_none")]
    k_factors: Option<Factors>,
    #[serde(rename = "R")]
    r: Vec<f64>,
    lambda: Vec<f64>,
    d: Vec<f64>,
    eta: Vec<f64>,
    theta: Vec<Threshold>,
    output_gene: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Factors {
    rank: usize,
    left: Vec<f64>,
    right: Vec<f64>,
}

impl GeneCircuit {
    /// JSON with a dense row-major `K`; low-rank factors ride along so the
    /// structure survives a round trip.
    pub fn to_json(&self) -> Result<String> {
        self.validate()?;
        let k_factors = match &self.k {
            Interaction::LowRank { rank, left, right } => Some(Factors {
                rank: *rank,
                left: left.clone(),
                right: right.clone(),
            }),
            _ => None,
        };
        let file = CircuitFile {
            m: self.m,
            kinds: self.kinds.clone(),
            k: self.k.to_dense(self.m),
            k_factors,
            r: self.r.clone(),
            lambda: self.lambda.clone(),
            d: self.d.clone(),
            eta: self.eta.clone(),
            theta: self.theta.clone(),
            output_gene: self.output_gene,
        };
        serde_json::to_string(&file).map_err(|e| Error::Schema {
            path: String::new(),
            message: e.to_string(),
        })
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let file: CircuitFile = serde_path_to_error::deserialize(de).map_err(|e| Error::Schema {
            path: e.path().to_string(),
            message: e.inner().to_string(),
        })?;
        let m = file.m;
        if m == 0 {
            return Err(Error::Schema {
                path: "m".into(),
                message: "a circuit needs at least one gene".into(),
            });
        }
        if file.k.len() != m * m {
            return Err(Error::Schema {
                path: "K".into(),
                message: format!("expected {} entries, found {}", m * m, file.k.len()),
            });
        }
        if let Some(i) = file.k.iter().position(|x| !x.is_finite()) {
            return Err(Error::Schema {
                path: format!("K[{i}]"),
                message: "non-finite value".into(),
            });
        }
        let k = match file.k_factors {
            Some(f) => {
                let k = Interaction::LowRank {
                    rank: f.rank,
                    left: f.left,
                    right: f.right,
                };
                k.validate(m)?;
                let dense = k.to_dense(m);
                if let Some(i) = dense.iter().zip(&file.k).position(|(a, b)| a.to_bits() != b.to_bits()) {
                    return Err(Error::Schema {
                        path: format!("K[{i}]"),
                        message: "does not match K_factors".into(),
                    });
                }
                k
            }
            None => {
                let nnz = file.k.iter().filter(|&&v| v != 0.0).count();
                if nnz * 4 < m * m {
                    let entries = (0..m * m)
                        .filter(|&idx| file.k[idx] != 0.0)
                        .map(|idx| (idx / m, idx % m, file.k[idx]))
                        .collect();
                    Interaction::from_triplets(m, entries)?
                } else {
                    Interaction::Dense(file.k)
                }
            }
        };
        let c = GeneCircuit {
            m,
            kinds: file.kinds,
            k,
            r: file.r,
            lambda: file.lambda,
            d: file.d,
            eta: file.eta,
            theta: file.theta,
            output_gene: file.output_gene,
        };
        c.validate()?;
        Ok(c)
    }
}

pub fn save_circuit(c: &GeneCircuit, path: impl AsRef<std::path::Path>) -> Result<()> {
    let text = c.to_json()?;
    std::fs::write(path.as_ref(), text).map_err(|e| Error::io(path, e))
}

pub fn load_circuit(path: impl AsRef<std::path::Path>) -> Result<GeneCircuit> {
    let text = std::fs::read_to_string(path.as_ref()).map_err(|e| Error::io(path, e))?;
    GeneCircuit::from_json(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(r: f64, lambda: f64, theta: Threshold) -> GeneCircuit {
        let mut c = GeneCircuit::uniform(1);
        c.r = vec![r];
        c.lambda = vec![lambda];
        c.theta = vec![theta];
        c
    }

    #[test]
    fn constant_source_closed_form() {
        let grid = Grid::line(0.0, 1.0, 2).unwrap();
        let tr = simulate_circuit(&single(1.0, 1.0, Threshold::Zero), &grid, 1.0, 1e-3, 1000).unwrap();
        let y = tr.gene(1, 0).unwrap();
        let exact = 0.5 * (1.0 - (-1.0f64).exp());
        assert!((y[0] - exact).abs() < 1e-12);
        assert!((exact - 0.316_060_279_414_278_8).abs() < 1e-15);
    }

    #[test]
    fn ramp_threshold_closed_form() {
        let kappa = 3.0;
        let grid = Grid::line(0.0, 1.0, 11).unwrap();
        let th = Threshold::Ramp { a: -1.0, b: 2.0 };
        let tr = simulate_circuit(&single(kappa, kappa, th.clone()), &grid, 2.0, 1e-3, 500).unwrap();
        let thv = th.values(&grid).unwrap();
        for (k, &t) in tr.times.iter().enumerate() {
            let y = tr.gene(k, 0).unwrap();
            for p in 0..11 {
                let exact = sigma(-thv[p]) * (1.0 - (-kappa * t).exp());
                assert!((y[p] - exact).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn step_bounds_enforced() {
        let grid = Grid::line(0.0, 1.0, 11).unwrap();
        let c = single(1.0, 10.0, Threshold::Zero);
        assert!(matches!(
            simulate_circuit(&c, &grid, 1.0, 0.1, 1),
            Err(Error::UnstableTimeStep { which: "stiffness", .. })
        ));
        let mut c = single(1.0, 1.0, Threshold::Zero);
        c.d = vec![1.0];
        assert!(matches!(
            simulate_circuit(&c, &grid, 1.0, 0.01, 1),
            Err(Error::UnstableTimeStep { which: "diffusion", .. })
        ));
    }

    #[test]
    fn collective_examples() {
        let grid = Grid::line(0.0, 1.0, 3).unwrap();
        let mut c = GeneCircuit::uniform(2);
        c.r = vec![1.0, 2.0];
        c.k = Interaction::Dense(vec![0.0, 1.0, -1.0, 0.0]);
        let tr = simulate_circuit(&c, &grid, 1.0, 0.01, 10).unwrap();
        let e1 = collective_variables(&tr, &[0.0, 1.0]).unwrap();
        for (k, f) in e1.frames.iter().enumerate() {
            assert_eq!(f.as_slice(), tr.gene(k, 1).unwrap());
        }
        let zero = collective_variables(&tr, &[0.0, 0.0]).unwrap();
        assert_eq!(zero.sup_abs(), 0.0);
        let sum = collective_variables(&tr, &[1.0, 1.0]).unwrap();
        for (k, f) in sum.frames.iter().enumerate() {
            for p in 0..3 {
                assert_eq!(f[p], tr.gene(k, 0).unwrap()[p] + tr.gene(k, 1).unwrap()[p]);
            }
        }
        assert!(collective_variables(&tr, &[1.0]).is_err());
    }

    #[test]
    fn interaction_storages_agree() {
        let m = 4;
        let left = vec![1.0, 0.5, -2.0, 0.0, 0.3, 1.0, 0.0, -1.0];
        let right = vec![0.2, 0.0, 1.0, 0.0, 0.0, 0.7, 0.0, -0.4];
        let low = Interaction::LowRank { rank: 2, left, right };
        let dense = Interaction::Dense(low.to_dense(m));
        let trip: Vec<_> = (0..m * m).map(|i| (i / m, i % m, low.to_dense(m)[i])).collect();
        let sparse = Interaction::from_triplets(m, trip).unwrap();
        let grid = Grid::line(0.0, 1.0, 5).unwrap();
        let mut c = GeneCircuit::uniform(m);
        c.theta[2] = Threshold::Ramp { a: 0.1, b: -1.0 };
        let mut out = Vec::new();
        for k in [low, dense, sparse] {
            c.k = k;
            out.push(simulate_circuit(&c, &grid, 2.0, 0.01, 50).unwrap());
        }
        for f in 0..out[0].frames.len() {
            for p in 0..out[0].frames[f].len() {
                assert!((out[0].frames[f][p] - out[1].frames[f][p]).abs() < 1e-14);
                assert_eq!(out[1].frames[f][p], out[2].frames[f][p]);
            }
        }
    }

    #[test]
    fn bounds_report_catches_corruption() {
        let grid = Grid::line(0.0, 1.0, 4).unwrap();
        let mut c = GeneCircuit::uniform(2);
        c.k = Interaction::Dense(vec![3.0, -2.0, 1.0, 1.0]);
        c.r = vec![2.0, -1.0];
        let mut tr = simulate_circuit(&c, &grid, 5.0, 0.01, 25).unwrap();
        let rep = bounds_check(&tr, &c);
        assert_eq!(rep.max_violation, 0.0);
        assert!(rep.within_tolerance);
        // gene 0 lives in [0, 2], gene 1 in [-1, 0]
        tr.frames[3][1] = 2.5;
        tr.frames[2][5] = -1.25;
        let rep = bounds_check(&tr, &c);
        assert!((rep.max_violation - 0.5).abs() < 1e-15);
        assert_eq!(rep.worst, Some((3, 0, 1)));
        assert!(!rep.within_tolerance);
    }

    #[test]
    fn threshold_tags_round_trip() {
        for th in [
            Threshold::Zero,
            Threshold::Constant(0.1),
            Threshold::Ramp { a: -0.1, b: 1.0 / 3.0 },
            Threshold::RampX2 { a: 1e-300, b: -7.5 },
            Threshold::Samples(vec![0.1, 0.2]),
        ] {
            let s = serde_json::to_string(&th).unwrap();
            let back: Threshold = serde_json::from_str(&s).unwrap();
            assert_eq!(back, th);
        }
        assert!(serde_json::from_str::<Threshold>("\"cubic(1)\"").is_err());
    }

    #[test]
    fn json_round_trip_is_exact() {
        let mut c = GeneCircuit::uniform(3);
        c.k = Interaction::LowRank {
            rank: 2,
            left: vec![0.1, 1.0 / 3.0, -2.0, 1e-17, 5.0, 6.0],
            right: vec![std::f64::consts::PI, 0.0, 0.0, -1.0 / 7.0, 2.0, 2.0],
        };
        c.kinds[2] = GeneKind::Linear;
        c.theta[1] = Threshold::Samples(vec![0.25, -0.5]);
        c.eta = vec![0.1, 0.2, 0.30000000000000004];
        let s = c.to_json().unwrap();
        let back = GeneCircuit::from_json(&s).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.to_json().unwrap(), s);
    }

    #[test]
    fn load_errors_name_the_path() {
        let c = GeneCircuit::uniform(2);
        let s = c.to_json().unwrap();
        let bad = s.replacen("\"K\":[0.0,", "\"K\":[null,", 1);
        match GeneCircuit::from_json(&bad) {
            Err(Error::Schema { path, .. }) => assert!(path.starts_with("K"), "{path}"),
            other => panic!("{other:?}"),
        }
        let empty = r#"{"m":0,"kinds":[],"K":[],"R":[],"lambda":[],"d":[],"eta":[],"theta":[],"output_gene":0}"#;
        assert!(GeneCircuit::from_json(empty).is_err());
    }
}
