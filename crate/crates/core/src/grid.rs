//! Uniform lattices, zero-flux Laplacian stencils and sampled fields.
//!
//! Two-dimensional data is always flattened row-major: the point `(i1, i2)`
//! lives at `i1 * n2 + i2`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid1D {
    x0: f64,
    x1: f64,
    n: usize,
}

impl Grid1D {
    pub fn new(x0: f64, x1: f64, n: usize) -> Result<Self> {
        if n < 2 {
            return Err(Error::InvalidGrid(format!("need at least 2 points, got {n}")));
        }
        if !(x0.is_finite() && x1.is_finite()) || x1 <= x0 {
            return Err(Error::InvalidGrid(format!("need x1 > x0, got [{x0}, {x1}]")));
        }
        Ok(Self { x0, x1, n })
    }

    pub fn start(&self) -> f64 {
        self.x0
    }

    pub fn end(&self) -> f64 {
        self.x1
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn spacing(&self) -> f64 {
        (self.x1 - self.x0) / (self.n - 1) as f64
    }

    pub fn point(&self, i: usize) -> f64 {
        if i + 1 == self.n {
            self.x1
        } else {
            self.x0 + i as f64 * self.spacing()
        }
    }

    pub fn points(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.point(i)).collect()
    }

    /// Trapezoidal quadrature weight of point `i`.
    pub fn weight(&self, i: usize) -> f64 {
        if i == 0 || i + 1 == self.n {
            0.5 * self.spacing()
        } else {
            self.spacing()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid2D {
    pub axis1: Grid1D,
    pub axis2: Grid1D,
}

impl Grid2D {
    pub fn new(axis1: Grid1D, axis2: Grid1D) -> Self {
        Self { axis1, axis2 }
    }

    pub fn index(&self, i1: usize, i2: usize) -> usize {
        i1 * self.axis2.len() + i2
    }
}

/// A lattice of one or two spatial dimensions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "dim", rename_all = "lowercase")]
pub enum Grid {
    #[serde(rename = "1d")]
    D1(Grid1D),
    #[serde(rename = "2d")]
    D2(Grid2D),
}

/// Coordinates of one lattice point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point {
    pub x1: f64,
    pub x2: f64,
}

impl Grid {
    pub fn line(x0: f64, x1: f64, n: usize) -> Result<Self> {
        Grid1D::new(x0, x1, n).map(Grid::D1)
    }

    pub fn rect(a: (f64, f64, usize), b: (f64, f64, usize)) -> Result<Self> {
        Ok(Grid::D2(Grid2D::new(
            Grid1D::new(a.0, a.1, a.2)?,
            Grid1D::new(b.0, b.1, b.2)?,
        )))
    }

    pub fn dim(&self) -> usize {
        match self {
            Grid::D1(_) => 1,
            Grid::D2(_) => 2,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            Grid::D1(g) => g.len(),
            Grid::D2(g) => g.axis1.len() * g.axis2.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Smallest axis spacing, the one that limits explicit diffusion steps.
    pub fn min_spacing(&self) -> f64 {
        match self {
            Grid::D1(g) => g.spacing(),
            Grid::D2(g) => g.axis1.spacing().min(g.axis2.spacing()),
        }
    }

    pub fn point(&self, idx: usize) -> Point {
        match self {
            Grid::D1(g) => Point {
                x1: g.point(idx),
                x2: 0.0,
            },
            Grid::D2(g) => {
                let n2 = g.axis2.len();
                Point {
                    x1: g.axis1.point(idx / n2),
                    x2: g.axis2.point(idx % n2),
                }
            }
        }
    }

    pub fn points(&self) -> Vec<Point> {
        (0..self.len()).map(|i| self.point(i)).collect()
    }

    /// Quadrature weight (cell volume) of point `idx`.
    pub fn weight(&self, idx: usize) -> f64 {
        match self {
            Grid::D1(g) => g.weight(idx),
            Grid::D2(g) => {
                let n2 = g.axis2.len();
                g.axis1.weight(idx / n2) * g.axis2.weight(idx % n2)
            }
        }
    }

    /// Writes the Neumann Laplacian of `values` into `out`.
    pub fn laplacian_into(&self, values: &[f64], out: &mut [f64]) {
        debug_assert_eq!(values.len(), self.len());
        debug_assert_eq!(out.len(), self.len());
        match self {
            Grid::D1(g) => {
                let inv_h2 = 1.0 / (g.spacing() * g.spacing());
                second_difference(values, inv_h2, out);
            }
            Grid::D2(g) => {
                let (n1, n2) = (g.axis1.len(), g.axis2.len());
                let inv1 = 1.0 / (g.axis1.spacing() * g.axis1.spacing());
                let inv2 = 1.0 / (g.axis2.spacing() * g.axis2.spacing());
                for i1 in 0..n1 {
                    let row = &values[i1 * n2..(i1 + 1) * n2];
                    second_difference(row, inv2, &mut out[i1 * n2..(i1 + 1) * n2]);
                }
                for i1 in 0..n1 {
                    let lo = if i1 == 0 { 1 } else { i1 - 1 };
                    let hi = if i1 + 1 == n1 { n1 - 2 } else { i1 + 1 };
                    for i2 in 0..n2 {
                        let c = values[i1 * n2 + i2];
                        let d = values[lo * n2 + i2] - 2.0 * c + values[hi * n2 + i2];
                        out[i1 * n2 + i2] += d * inv1;
                    }
                }
            }
        }
    }
}

/// Three-point second difference along a line with mirrored ghost points.
fn second_difference(v: &[f64], inv_h2: f64, out: &mut [f64]) {
    let n = v.len();
    out[0] = (v[1] - 2.0 * v[0] + v[1]) * inv_h2;
    for i in 1..n - 1 {
        out[i] = (v[i - 1] - 2.0 * v[i] + v[i + 1]) * inv_h2;
    }
    out[n - 1] = (v[n - 2] - 2.0 * v[n - 1] + v[n - 2]) * inv_h2;
}

/// Scalar values attached to every point of a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    grid: Grid,
    values: Vec<f64>,
}

impl Field {
    pub fn new(grid: Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::DimensionMismatch {
                context: "field values",
                expected: grid.len(),
                got: values.len(),
            });
        }
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteSample { index });
        }
        Ok(Self { grid, values })
    }

    pub fn constant(grid: Grid, c: f64) -> Self {
        Self {
            grid,
            values: vec![c; grid.len()],
        }
    }

    pub fn zeros(grid: Grid) -> Self {
        Self::constant(grid, 0.0)
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Trapezoidal integral over the domain.
    pub fn integral(&self) -> f64 {
        self.values
            .iter()
            .enumerate()
            .map(|(i, v)| v * self.grid.weight(i))
            .sum()
    }

    /// Header `x[,y],value` then one row per point, 17 significant digits.
    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        s.push_str(if self.grid.dim() == 1 { "x,value\n" } else { "x,y,value\n" });
        for (i, v) in self.values.iter().enumerate() {
            let p = self.grid.point(i);
            if self.grid.dim() == 1 {
                s.push_str(&format!("{},{}\n", fmt_f64(p.x1), fmt_f64(*v)));
            } else {
                s.push_str(&format!("{},{},{}\n", fmt_f64(p.x1), fmt_f64(p.x2), fmt_f64(*v)));
            }
        }
        s
    }
}

/// Formats a float with 17 significant digits.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn laplacian_neumann(f: &Field) -> Field {
    let mut out = vec![0.0; f.values.len()];
    f.grid.laplacian_into(&f.values, &mut out);
    Field {
        grid: f.grid,
        values: out,
    }
}

/// Evaluates `f` at every grid point in canonical order.
pub fn sample_function(grid: &Grid, f: impl Fn(Point) -> f64) -> Result<Field> {
    let mut values = Vec::with_capacity(grid.len());
    for (index, p) in grid.points().into_iter().enumerate() {
        let v = f(p);
        if !v.is_finite() {
            return Err(Error::NonFiniteSample { index });
        }
        values.push(v);
    }
    Ok(Field {
        grid: *grid,
        values,
    })
}
