//! Running cost `f(t, x, m)` and terminal cost `g(x, m)`.
//!
//! Both are affine in a periodized Gaussian smoothing `K m`. The discrete
//! smoothing is a symmetric circulant with positive symbol, so `eta >= 0`
//! gives monotone couplings.

use std::f64::consts::PI;
use std::fmt::Debug;

use serde::{Deserialize, Serialize};

use crate::domain::{dot, GridField, TorusGrid, Vector};
use crate::error::{MfgcError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SmoothingKernel {
    width: f64,
}

impl SmoothingKernel {
    pub fn new(width: f64) -> Result<Self> {
        if !(width.is_finite() && width > 0.0) {
            return Err(MfgcError::param("smoothing_width", "smoothing_width > 0"));
        }
        Ok(Self { width })
    }

    pub fn width(&self) -> f64 {
        self.width
    }

    /// `h k1(j h)` for `j = 0..N`, with `k1` the periodized 1D Gaussian.
    fn weights(&self, grid: &TorusGrid) -> Vec<f64> {
        let a = grid.radius();
        let h = grid.spacing();
        let s2 = self.width * self.width;
        let images = (6.0 * self.width / a).ceil() as i64 + 1;
        let norm = 1.0 / (2.0 * PI * s2).sqrt();
        (0..grid.points_per_dim())
            .map(|j| {
                let z = j as f64 * h;
                let mut k = 0.0;
                for i in -images..=images {
                    let y = z + i as f64 * a;
                    k += (-y * y / (2.0 * s2)).exp();
                }
                h * norm * k
            })
            .collect()
    }

    /// `(K m)(x) = h^d sum_y k(x - y) m(y)`, separable across axes.
    pub fn apply(&self, m: &GridField) -> Result<GridField> {
        if !m.is_scalar() {
            return Err(MfgcError::Shape("smoothing needs a scalar field".into()));
        }
        let grid = *m.grid();
        let n = grid.points_per_dim();
        let w = self.weights(&grid);
        let mut cur = m.values().to_vec();
        for axis in 0..grid.dim() {
            let mut next = vec![0.0; cur.len()];
            for (k, slot) in next.iter_mut().enumerate() {
                let idx = grid.multi_index(k);
                let mut s = 0.0;
                let mut other = idx;
                for j in 0..n {
                    other[axis] = j;
                    let off = (idx[axis] + n - j) % n;
                    s += w[off] * cur[grid.node(other)];
                }
                *slot = s;
            }
            cur = next;
        }
        GridField::scalar(grid, cur)
    }
}

/// A density-dependent scalar field such as `f(t, ., m)` or `g(., m)`.
pub trait DensityCoupling: Send + Sync + Debug {
    fn evaluate(&self, t: f64, m: &GridField) -> Result<GridField>;
    fn is_density_independent(&self) -> bool;
}

/// `f(t, x, m) = eta (K m)(x)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct RunningCost {
    eta: f64,
    kernel: SmoothingKernel,
}

impl RunningCost {
    pub fn zero() -> Self {
        Self {
            eta: 0.0,
            kernel: SmoothingKernel { width: 1.0 },
        }
    }

    pub fn smoothed(eta: f64, kernel: SmoothingKernel) -> Result<Self> {
        if !eta.is_finite() {
            return Err(MfgcError::param("running_eta", "finite"));
        }
        Ok(Self { eta, kernel })
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }
}

impl DensityCoupling for RunningCost {
    fn evaluate(&self, _t: f64, m: &GridField) -> Result<GridField> {
        if self.eta == 0.0 {
            return Ok(GridField::zeros(*m.grid(), 1));
        }
        Ok(self.kernel.apply(m)?.map(|v| self.eta * v))
    }

    fn is_density_independent(&self) -> bool {
        self.eta == 0.0
    }
}

/// Density-independent part `g0(x)` of the terminal cost.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum TerminalProfile {
    Zero,
    /// `amplitude * sum_i cos(2 pi x_i / a)`.
    Cosine { amplitude: f64 },
    /// `amplitude * exp(-|x|^2 / (2 width^2))`.
    Bump { amplitude: f64, width: f64 },
}

impl TerminalProfile {
    pub fn value(&self, x: &Vector, grid: &TorusGrid) -> f64 {
        match *self {
            TerminalProfile::Zero => 0.0,
            TerminalProfile::Cosine { amplitude } => (0..grid.dim())
                .map(|i| amplitude * (2.0 * PI * x[i] / grid.radius()).cos())
                .sum(),
            TerminalProfile::Bump { amplitude, width } => {
                amplitude * (-dot(x, x) / (2.0 * width * width)).exp()
            }
        }
    }
}

/// `g(x, m) = g0(x) + eta (K m)(x)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct TerminalCost {
    profile: TerminalProfile,
    eta: f64,
    kernel: SmoothingKernel,
}

impl TerminalCost {
    pub fn new(profile: TerminalProfile, eta: f64, kernel: SmoothingKernel) -> Result<Self> {
        if let TerminalProfile::Bump { width, .. } = profile {
            if !(width > 0.0) {
                return Err(MfgcError::param("terminal.width", "width > 0"));
            }
        }
        if !eta.is_finite() {
            return Err(MfgcError::param("terminal_eta", "finite"));
        }
        Ok(Self {
            profile,
            eta,
            kernel,
        })
    }

    pub fn profile_only(profile: TerminalProfile) -> Self {
        Self {
            profile,
            eta: 0.0,
            kernel: SmoothingKernel { width: 1.0 },
        }
    }

    pub fn profile(&self) -> TerminalProfile {
        self.profile
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }
}

impl DensityCoupling for TerminalCost {
    fn evaluate(&self, _t: f64, m: &GridField) -> Result<GridField> {
        let grid = *m.grid();
        let base = GridField::from_fn(grid, |x| self.profile.value(x, &grid));
        if self.eta == 0.0 {
            return Ok(base);
        }
        base.axpy(self.eta, &self.kernel.apply(m)?)
    }

    fn is_density_independent(&self) -> bool {
        self.eta == 0.0
    }
}

/// `int (c(m1) - c(m2)) d(m1 - m2)` by quadrature.
pub fn coupling_monotonicity_gap(
    coupling: &dyn DensityCoupling,
    t: f64,
    m1: &GridField,
    m2: &GridField,
) -> Result<f64> {
    m1.grid().check_same(m2.grid())?;
    let c1 = coupling.evaluate(t, m1)?;
    let c2 = coupling.evaluate(t, m2)?;
    let s: f64 = (0..m1.grid().num_nodes())
        .map(|k| (c1.values()[k] - c2.values()[k]) * (m1.values()[k] - m2.values()[k]))
        .sum();
    Ok(s * m1.grid().cell_volume())
}
