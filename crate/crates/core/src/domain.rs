//! Space-time discretization of the torus `R^d / (a Z^d)`.
//!
//! Nodes sit at `-a/2 + k h`, `k = 0..N-1`, in every direction, so the node
//! set is left-closed and right-open. Flat node indices put axis 0 fastest.
//! Vectors are stored as `[f64; MAX_DIM]`; components beyond the grid
//! dimension are kept at zero.

use serde::Serialize;

use crate::error::{MfgcError, Result};

pub const MAX_DIM: usize = 2;

pub type Vector = [f64; MAX_DIM];

pub const ZERO: Vector = [0.0; MAX_DIM];

pub fn dot(a: &Vector, b: &Vector) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

pub fn norm(a: &Vector) -> f64 {
    dot(a, a).sqrt()
}

pub fn add(a: &Vector, b: &Vector) -> Vector {
    [a[0] + b[0], a[1] + b[1]]
}

pub fn sub(a: &Vector, b: &Vector) -> Vector {
    [a[0] - b[0], a[1] - b[1]]
}

pub fn scale(s: f64, a: &Vector) -> Vector {
    [s * a[0], s * a[1]]
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct TorusGrid {
    dim: usize,
    radius: f64,
    points: usize,
}

impl TorusGrid {
    pub fn new(dim: usize, radius: f64, points: usize) -> Result<Self> {
        if !(1..=MAX_DIM).contains(&dim) {
            return Err(MfgcError::param("dim", "dim in {1, 2}"));
        }
        if !(radius.is_finite() && radius > 0.0) {
            return Err(MfgcError::param("radius", "radius > 0"));
        }
        if points < 3 {
            return Err(MfgcError::param("points", "points >= 3"));
        }
        Ok(Self { dim, radius, points })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn points_per_dim(&self) -> usize {
        self.points
    }

    pub fn spacing(&self) -> f64 {
        self.radius / self.points as f64
    }

    /// `h^d`, the quadrature weight of one node.
    pub fn cell_volume(&self) -> f64 {
        self.spacing().powi(self.dim as i32)
    }

    pub fn num_nodes(&self) -> usize {
        self.points.pow(self.dim as u32)
    }

    pub fn multi_index(&self, node: usize) -> [usize; MAX_DIM] {
        let mut idx = [0; MAX_DIM];
        let mut rest = node;
        for slot in idx.iter_mut().take(self.dim) {
            *slot = rest % self.points;
            rest /= self.points;
        }
        idx
    }

    pub fn node(&self, idx: [usize; MAX_DIM]) -> usize {
        let mut flat = 0;
        for axis in (0..self.dim).rev() {
            flat = flat * self.points + idx[axis];
        }
        flat
    }

    pub fn coords(&self, node: usize) -> Vector {
        let idx = self.multi_index(node);
        let h = self.spacing();
        let mut x = ZERO;
        for axis in 0..self.dim {
            x[axis] = -0.5 * self.radius + idx[axis] as f64 * h;
        }
        x
    }

    /// Periodic neighbor of `node` one step along `axis`, forward if `forward`.
    pub fn neighbor(&self, node: usize, axis: usize, forward: bool) -> usize {
        let mut idx = self.multi_index(node);
        let n = self.points;
        idx[axis] = if forward {
            (idx[axis] + 1) % n
        } else {
            (idx[axis] + n - 1) % n
        };
        self.node(idx)
    }

    /// Shortest periodic displacement `x - y`, componentwise in `[-a/2, a/2)`.
    pub fn periodic_displacement(&self, x: &Vector, y: &Vector) -> Vector {
        let mut d = ZERO;
        for axis in 0..self.dim {
            let mut v = x[axis] - y[axis];
            v -= self.radius * (v / self.radius + 0.5).floor();
            d[axis] = v;
        }
        d
    }

    pub fn check_same(&self, other: &TorusGrid) -> Result<()> {
        if self == other {
            Ok(())
        } else {
            Err(MfgcError::GridMismatch(format!("{self:?} vs {other:?}")))
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct TimeGrid {
    horizon: f64,
    steps: usize,
}

impl TimeGrid {
    pub fn new(horizon: f64, steps: usize) -> Result<Self> {
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(MfgcError::param("horizon", "horizon > 0"));
        }
        if steps == 0 {
            return Err(MfgcError::param("steps", "steps >= 1"));
        }
        Ok(Self { horizon, steps })
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.steps as f64
    }

    /// `t_n`; the last node is exactly the horizon.
    pub fn time(&self, n: usize) -> f64 {
        if n == self.steps {
            self.horizon
        } else {
            n as f64 * self.dt()
        }
    }

    pub fn num_nodes(&self) -> usize {
        self.steps + 1
    }
}

/// A scalar or vector function sampled on the grid, node-major.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GridField {
    grid: TorusGrid,
    time_index: Option<usize>,
    components: usize,
    values: Vec<f64>,
}

impl GridField {
    pub fn new(grid: TorusGrid, components: usize, values: Vec<f64>) -> Result<Self> {
        if components == 0 || values.len() != grid.num_nodes() * components {
            return Err(MfgcError::Shape(format!(
                "expected {} values ({} nodes x {components} components), got {}",
                grid.num_nodes() * components,
                grid.num_nodes(),
                values.len()
            )));
        }
        Ok(Self {
            grid,
            time_index: None,
            components,
            values,
        })
    }

    pub fn zeros(grid: TorusGrid, components: usize) -> Self {
        Self {
            grid,
            time_index: None,
            components,
            values: vec![0.0; grid.num_nodes() * components],
        }
    }

    pub fn scalar(grid: TorusGrid, values: Vec<f64>) -> Result<Self> {
        Self::new(grid, 1, values)
    }

    pub fn from_fn(grid: TorusGrid, f: impl Fn(&Vector) -> f64) -> Self {
        let values = (0..grid.num_nodes()).map(|k| f(&grid.coords(k))).collect();
        Self {
            grid,
            time_index: None,
            components: 1,
            values,
        }
    }

    /// Vector field with `grid.dim()` components built from per-node vectors.
    pub fn from_vectors(grid: TorusGrid, vectors: &[Vector]) -> Result<Self> {
        if vectors.len() != grid.num_nodes() {
            return Err(MfgcError::Shape(format!(
                "expected {} vectors, got {}",
                grid.num_nodes(),
                vectors.len()
            )));
        }
        let d = grid.dim();
        let mut values = Vec::with_capacity(vectors.len() * d);
        for v in vectors {
            values.extend_from_slice(&v[..d]);
        }
        Self::new(grid, d, values)
    }

    pub fn with_time_index(mut self, n: usize) -> Self {
        self.time_index = Some(n);
        self
    }

    pub fn grid(&self) -> &TorusGrid {
        &self.grid
    }

    pub fn time_index(&self) -> Option<usize> {
        self.time_index
    }

    pub fn components(&self) -> usize {
        self.components
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn is_scalar(&self) -> bool {
        self.components == 1
    }

    /// Node value as a `Vector` (vector fields only use the first `components` slots).
    pub fn vector_at(&self, node: usize) -> Vector {
        let mut v = ZERO;
        let c = self.components.min(MAX_DIM);
        v[..c].copy_from_slice(&self.values[node * self.components..node * self.components + c]);
        v
    }

    pub fn vectors(&self) -> Vec<Vector> {
        (0..self.grid.num_nodes()).map(|k| self.vector_at(k)).collect()
    }

    pub fn sup_norm(&self) -> f64 {
        if self.components == 1 {
            self.values.iter().fold(0.0, |acc: f64, v| acc.max(v.abs()))
        } else {
            (0..self.grid.num_nodes())
                .map(|k| norm(&self.vector_at(k)))
                .fold(0.0, f64::max)
        }
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> GridField {
        GridField {
            values: self.values.iter().map(|&v| f(v)).collect(),
            ..self.clone()
        }
    }

    /// `self + s * other`, shapes must agree.
    pub fn axpy(&self, s: f64, other: &GridField) -> Result<GridField> {
        self.check_shape(other)?;
        Ok(GridField {
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| a + s * b)
                .collect(),
            ..self.clone()
        })
    }

    /// Sup norm of `self - other`, vector-norm per node for vector fields.
    pub fn distance_sup(&self, other: &GridField) -> Result<f64> {
        self.check_shape(other)?;
        let c = self.components;
        let mut worst: f64 = 0.0;
        for k in 0..self.grid.num_nodes() {
            let mut s = 0.0;
            for j in 0..c {
                let d = self.values[k * c + j] - other.values[k * c + j];
                s += d * d;
            }
            worst = worst.max(s.sqrt());
        }
        Ok(worst)
    }

    /// Cyclic shift by `offset` nodes along `axis`: `out(x) = self(x - offset h e_axis)`.
    pub fn shifted(&self, axis: usize, offset: usize) -> GridField {
        let n = self.grid.points;
        let c = self.components;
        let mut values = vec![0.0; self.values.len()];
        for k in 0..self.grid.num_nodes() {
            let mut idx = self.grid.multi_index(k);
            idx[axis] = (idx[axis] + offset) % n;
            let dst = self.grid.node(idx);
            values[dst * c..dst * c + c].copy_from_slice(&self.values[k * c..k * c + c]);
        }
        GridField {
            values,
            ..self.clone()
        }
    }

    pub(crate) fn check_shape(&self, other: &GridField) -> Result<()> {
        self.grid.check_same(&other.grid)?;
        if self.components != other.components {
            return Err(MfgcError::Shape(format!(
                "component mismatch: {} vs {}",
                self.components, other.components
            )));
        }
        Ok(())
    }

    fn require_scalar(&self) -> Result<()> {
        if self.components != 1 {
            return Err(MfgcError::Shape(format!(
                "expected a scalar field, got {} components",
                self.components
            )));
        }
        Ok(())
    }
}

/// Stencil used for `gradient`.
#[derive(Clone, Copy, Debug)]
pub enum GradientScheme<'a> {
    Central,
    /// One-sided differences taken against the direction field: backward
    /// where the direction component is nonnegative, forward otherwise.
    Upwind(&'a GridField),
}

pub fn gradient(field: &GridField, scheme: GradientScheme<'_>) -> Result<GridField> {
    field.require_scalar()?;
    let grid = field.grid;
    let d = grid.dim();
    let h = grid.spacing();
    if let GradientScheme::Upwind(dir) = scheme {
        grid.check_same(&dir.grid)?;
        if dir.components != d {
            return Err(MfgcError::Shape(format!(
                "upwind direction field needs {d} components, got {}",
                dir.components
            )));
        }
    }
    let u = &field.values;
    let mut out = vec![0.0; grid.num_nodes() * d];
    for k in 0..grid.num_nodes() {
        for axis in 0..d {
            let fwd = grid.neighbor(k, axis, true);
            let bwd = grid.neighbor(k, axis, false);
            out[k * d + axis] = match scheme {
                GradientScheme::Central => (u[fwd] - u[bwd]) / (2.0 * h),
                GradientScheme::Upwind(dir) => {
                    if dir.values[k * d + axis] >= 0.0 {
                        (u[k] - u[bwd]) / h
                    } else {
                        (u[fwd] - u[k]) / h
                    }
                }
            };
        }
    }
    GridField::new(grid, d, out)
}

/// Forward half-step differences `(u(x + h e_i) - u(x)) / h`.
pub fn gradient_forward(field: &GridField) -> Result<GridField> {
    field.require_scalar()?;
    let grid = field.grid;
    let d = grid.dim();
    let h = grid.spacing();
    let u = &field.values;
    let mut out = vec![0.0; grid.num_nodes() * d];
    for k in 0..grid.num_nodes() {
        for axis in 0..d {
            out[k * d + axis] = (u[grid.neighbor(k, axis, true)] - u[k]) / h;
        }
    }
    GridField::new(grid, d, out)
}

/// Central divergence, the negative adjoint of the central gradient.
pub fn divergence(field: &GridField) -> Result<GridField> {
    let grid = field.grid;
    let d = grid.dim();
    if field.components != d {
        return Err(MfgcError::Shape(format!(
            "divergence needs {d} components, got {}",
            field.components
        )));
    }
    let h = grid.spacing();
    let f = &field.values;
    let mut out = vec![0.0; grid.num_nodes()];
    for (k, slot) in out.iter_mut().enumerate() {
        let mut s = 0.0;
        for axis in 0..d {
            let fwd = grid.neighbor(k, axis, true);
            let bwd = grid.neighbor(k, axis, false);
            s += (f[fwd * d + axis] - f[bwd * d + axis]) / (2.0 * h);
        }
        *slot = s;
    }
    GridField::new(grid, 1, out)
}

/// Backward half-step divergence, paired with `gradient_forward`.
pub fn divergence_backward(field: &GridField) -> Result<GridField> {
    let grid = field.grid;
    let d = grid.dim();
    if field.components != d {
        return Err(MfgcError::Shape(format!(
            "divergence needs {d} components, got {}",
            field.components
        )));
    }
    let h = grid.spacing();
    let f = &field.values;
    let mut out = vec![0.0; grid.num_nodes()];
    for (k, slot) in out.iter_mut().enumerate() {
        let mut s = 0.0;
        for axis in 0..d {
            let bwd = grid.neighbor(k, axis, false);
            s += (f[k * d + axis] - f[bwd * d + axis]) / h;
        }
        *slot = s;
    }
    GridField::new(grid, 1, out)
}

/// `(2d+1)`-point periodic Laplacian.
pub fn laplacian(field: &GridField) -> Result<GridField> {
    field.require_scalar()?;
    let grid = field.grid;
    let values = laplacian_values(&grid, &field.values);
    GridField::new(grid, 1, values)
}

pub(crate) fn laplacian_values(grid: &TorusGrid, u: &[f64]) -> Vec<f64> {
    let h2 = grid.spacing() * grid.spacing();
    (0..grid.num_nodes())
        .map(|k| {
            let mut s = 0.0;
            for axis in 0..grid.dim() {
                s += (u[grid.neighbor(k, axis, true)] - 2.0 * u[k]
                    + u[grid.neighbor(k, axis, false)])
                    / h2;
            }
            s
        })
        .collect()
}

#[derive(Clone, Copy, Debug)]
pub enum Weights<'a> {
    Uniform,
    Density(&'a GridField),
}

/// `h^d sum_x field(x) w(x)`, one value per component, summed in node order.
pub fn integrate(field: &GridField, weights: Weights<'_>) -> Result<Vec<f64>> {
    let grid = field.grid;
    let c = field.components;
    let mut sums = vec![0.0; c];
    match weights {
        Weights::Uniform => {
            for k in 0..grid.num_nodes() {
                for j in 0..c {
                    sums[j] += field.values[k * c + j];
                }
            }
        }
        Weights::Density(m) => {
            grid.check_same(&m.grid)?;
            m.require_scalar()?;
            for k in 0..grid.num_nodes() {
                let w = m.values[k];
                for j in 0..c {
                    sums[j] += field.values[k * c + j] * w;
                }
            }
        }
    }
    let vol = grid.cell_volume();
    Ok(sums.into_iter().map(|s| s * vol).collect())
}

/// Quadrature mass `h^d sum m`.
pub fn mass(m: &GridField) -> f64 {
    m.values.iter().sum::<f64>() * m.grid.cell_volume()
}

/// Nodes carrying density above `1e-12 h^-d`.
pub fn support_threshold(grid: &TorusGrid) -> f64 {
    1e-12 / grid.cell_volume()
}

/// Time-indexed densities on the spatial grid.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DensityPath {
    grid: TorusGrid,
    time_grid: TimeGrid,
    slices: Vec<GridField>,
}

impl DensityPath {
    pub fn new(grid: TorusGrid, time_grid: TimeGrid, slices: Vec<GridField>) -> Result<Self> {
        if slices.len() != time_grid.num_nodes() {
            return Err(MfgcError::Shape(format!(
                "expected {} density slices, got {}",
                time_grid.num_nodes(),
                slices.len()
            )));
        }
        for s in &slices {
            grid.check_same(s.grid())?;
            s.require_scalar()?;
        }
        Ok(Self {
            grid,
            time_grid,
            slices,
        })
    }

    pub fn grid(&self) -> &TorusGrid {
        &self.grid
    }

    pub fn time_grid(&self) -> &TimeGrid {
        &self.time_grid
    }

    pub fn slices(&self) -> &[GridField] {
        &self.slices
    }

    pub fn slice(&self, n: usize) -> &GridField {
        &self.slices[n]
    }

    pub fn masses(&self) -> Vec<f64> {
        self.slices.iter().map(mass).collect()
    }

    pub fn min_value(&self) -> f64 {
        self.slices
            .iter()
            .flat_map(|s| s.values.iter().copied())
            .fold(f64::INFINITY, f64::min)
    }

    /// `sup_t h^d sum |m1 - m2|`.
    pub fn l1_distance(&self, other: &DensityPath) -> Result<f64> {
        self.grid.check_same(&other.grid)?;
        if self.slices.len() != other.slices.len() {
            return Err(MfgcError::Shape("density paths of different length".into()));
        }
        let vol = self.grid.cell_volume();
        Ok(self
            .slices
            .iter()
            .zip(&other.slices)
            .map(|(a, b)| {
                a.values
                    .iter()
                    .zip(&b.values)
                    .map(|(x, y)| (x - y).abs())
                    .sum::<f64>()
                    * vol
            })
            .fold(0.0, f64::max))
    }

    pub fn sup_distance(&self, other: &DensityPath) -> Result<f64> {
        let mut worst: f64 = 0.0;
        for (a, b) in self.slices.iter().zip(&other.slices) {
            worst = worst.max(a.distance_sup(b)?);
        }
        Ok(worst)
    }

    pub fn into_slices(self) -> Vec<GridField> {
        self.slices
    }
}

/// Normalize a sampled nonnegative profile to unit quadrature mass.
pub fn normalize_density(field: GridField) -> Result<GridField> {
    field.require_scalar()?;
    if field.values.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(MfgcError::param(
            "initial density",
            "finite and nonnegative at every node",
        ));
    }
    let total = mass(&field);
    if total <= 0.0 {
        return Err(MfgcError::param("initial density", "positive mass"));
    }
    Ok(field.map(|v| v / total))
}
