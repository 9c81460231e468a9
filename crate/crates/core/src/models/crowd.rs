//! Crowd motion with aversion to the mainstream drift.
//!
//! `L = theta/2 |alpha + lambda V|^2 + (1-theta)/a' |alpha|^{a'}` with the
//! kernel-weighted average drift `V = (1/Z) int alpha k dmu` and
//! `Z = (int k^{q1} dmu)^{1/q1}`.

use serde::{Deserialize, Serialize};

use super::{power_terms, conjugate_exponent, Lagrangian, LawSummary, Matrix, SummarySpec};
use crate::domain::{dot, norm, scale, GridField, TorusGrid, Vector, MAX_DIM, ZERO};
use crate::error::{MfgcError, Result};

/// Nonnegative kernel `k(x)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum CrowdKernel {
    Constant { value: f64 },
    /// `exp(-|x|^2 / (2 width^2))`.
    Gaussian { width: f64 },
}

impl CrowdKernel {
    pub fn sample(&self, grid: &TorusGrid) -> Result<GridField> {
        let field = match *self {
            CrowdKernel::Constant { value } => GridField::from_fn(*grid, |_| value),
            CrowdKernel::Gaussian { width } => {
                if !(width > 0.0) {
                    return Err(MfgcError::param("kernel.width", "width > 0"));
                }
                GridField::from_fn(*grid, |x| (-dot(x, x) / (2.0 * width * width)).exp())
            }
        };
        if field.values().iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(MfgcError::param("kernel", "k ≥ 0 everywhere"));
        }
        Ok(field)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CrowdMotion {
    dim: usize,
    lambda: f64,
    theta: f64,
    a_prime: f64,
    q_prime: f64,
    c0: f64,
    spec: SummarySpec,
}

impl CrowdMotion {
    pub fn new(
        grid: &TorusGrid,
        lambda: f64,
        theta: f64,
        a_prime: f64,
        kernel: CrowdKernel,
        q1: f64,
    ) -> Result<Self> {
        if !(lambda.is_finite() && lambda >= 0.0) {
            return Err(MfgcError::param("lambda", "lambda ≥ 0"));
        }
        if !(0.0..=1.0).contains(&theta) {
            return Err(MfgcError::param("theta", "0 ≤ theta ≤ 1"));
        }
        if !(a_prime.is_finite() && a_prime > 1.0) {
            return Err(MfgcError::param("a_prime", "a_prime > 1"));
        }
        let q_prime = if theta == 1.0 {
            2.0
        } else if theta == 0.0 {
            a_prime
        } else {
            a_prime.max(2.0)
        };
        let q = conjugate_exponent(q_prime);
        if q1.is_nan() || q1 < q {
            return Err(MfgcError::param("q1", format!("q1 in [q, inf] with q = {q}")));
        }
        let kernel_field = kernel.sample(grid)?;
        let spec = if lambda * theta == 0.0 {
            SummarySpec::Independent
        } else {
            SummarySpec::WeightedMean {
                kernel: kernel_field,
                q1,
            }
        };
        let quad = if lambda == 0.0 { 2.0 } else { 4.0 };
        let lower = if theta == 0.0 {
            a_prime
        } else if a_prime > 2.0 && theta < 1.0 {
            a_prime / (1.0 - theta)
        } else {
            quad / theta
        };
        let upper = 1.0 + theta * (1.0 + lambda * lambda) + 1.0 / a_prime;
        let hamiltonian = 2.0 + 2.0 * theta * lambda + theta * lambda * lambda;
        let c0 = lower.max(upper).max(hamiltonian);
        Ok(Self {
            dim: grid.dim(),
            lambda,
            theta,
            a_prime,
            q_prime,
            c0,
            spec,
        })
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn a_prime(&self) -> f64 {
        self.a_prime
    }

    /// Weighted mean solving `V = -(1/Z) int (p + theta lambda V) k dm` (quadratic case).
    ///
    /// `pk = int p k dm`, `k_mass = int k dm`, `z` the normalizer.
    pub fn weighted_mean_oracle(&self, pk: &Vector, k_mass: f64, z: f64) -> Vector {
        if z == 0.0 {
            return ZERO;
        }
        scale(-1.0 / (z + self.theta * self.lambda * k_mass), pk)
    }

    fn drag(&self, s: &LawSummary) -> Vector {
        if self.lambda * self.theta == 0.0 {
            ZERO
        } else {
            scale(self.lambda, &s.weighted_mean)
        }
    }

    /// Radius `r >= 0` with `theta r + (1-theta) r^{a'-1} = target`.
    fn radial_root(&self, target: f64) -> f64 {
        if target == 0.0 {
            return 0.0;
        }
        if self.theta == 1.0 || self.a_prime == 2.0 {
            return target;
        }
        let f = |r: f64| self.theta * r + (1.0 - self.theta) * r.powf(self.a_prime - 1.0) - target;
        let mut lo = 0.0;
        let mut hi = target.max(1.0);
        while f(hi) < 0.0 {
            lo = hi;
            hi *= 2.0;
        }
        for _ in 0..2000 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if f(mid) < 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        if f(lo).abs() <= f(hi).abs() {
            lo
        } else {
            hi
        }
    }
}

impl Lagrangian for CrowdMotion {
    fn name(&self) -> &'static str {
        "crowd_motion"
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn exponent(&self) -> f64 {
        self.q_prime
    }

    fn growth_constant(&self) -> f64 {
        self.c0
    }

    fn summary_spec(&self) -> &SummarySpec {
        &self.spec
    }

    fn value(&self, _t: f64, _x: &Vector, alpha: &Vector, s: &LawSummary) -> f64 {
        let d = self.drag(s);
        let shifted = [alpha[0] + d[0], alpha[1] + d[1]];
        let mut v = 0.5 * self.theta * dot(&shifted, &shifted);
        if self.theta < 1.0 {
            v += (1.0 - self.theta) * power_terms::value(alpha, self.a_prime);
        }
        v
    }

    fn value_difference(
        &self,
        _t: f64,
        _x: &Vector,
        alpha: &Vector,
        s1: &LawSummary,
        s2: &LawSummary,
    ) -> f64 {
        let d1 = self.drag(s1);
        let d2 = self.drag(s2);
        let diff = [d1[0] - d2[0], d1[1] - d2[1]];
        let sum = [d1[0] + d2[0], d1[1] + d2[1]];
        self.theta * (dot(alpha, &diff) + 0.5 * dot(&sum, &diff))
    }

    fn grad_alpha(&self, _t: f64, _x: &Vector, alpha: &Vector, s: &LawSummary) -> Vector {
        let d = self.drag(s);
        let mut g = [
            self.theta * (alpha[0] + d[0]),
            self.theta * (alpha[1] + d[1]),
        ];
        if self.theta < 1.0 {
            let p = power_terms::grad(alpha, self.a_prime);
            g[0] += (1.0 - self.theta) * p[0];
            g[1] += (1.0 - self.theta) * p[1];
        }
        g
    }

    fn hess_alpha(&self, _t: f64, _x: &Vector, alpha: &Vector, _s: &LawSummary) -> Matrix {
        let mut h = [[0.0; MAX_DIM]; MAX_DIM];
        if self.theta < 1.0 {
            let p = power_terms::hess(alpha, self.a_prime, self.dim);
            for i in 0..self.dim {
                for j in 0..self.dim {
                    h[i][j] = (1.0 - self.theta) * p[i][j];
                }
            }
        }
        for (i, row) in h.iter_mut().enumerate().take(self.dim) {
            row[i] += self.theta;
        }
        h
    }

    fn conjugate(&self, t: f64, x: &Vector, p: &Vector, s: &LawSummary) -> Option<(f64, Vector)> {
        let d = self.drag(s);
        let w = [
            -(p[0] + self.theta * d[0]),
            -(p[1] + self.theta * d[1]),
        ];
        let n = norm(&w);
        let alpha = if n == 0.0 {
            ZERO
        } else {
            scale(self.radial_root(n) / n, &w)
        };
        let value = -dot(p, &alpha) - self.value(t, x, &alpha, s);
        Some((value, alpha))
    }
}
