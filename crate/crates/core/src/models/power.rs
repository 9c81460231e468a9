//! Law-independent power Lagrangians `|alpha|^{q'}/q' - alpha . pbar + phi(x)`.
//!
//! The conjugate is `|p - pbar|^q / q - phi(x)`. Used as a test family for
//! the numeric Legendre transform and the envelope formula in `x`.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::{power_terms, conjugate_exponent, Lagrangian, LawSummary, Matrix, SummarySpec};
use crate::domain::{dot, norm, scale, Vector, ZERO};
use crate::error::{MfgcError, Result};

/// Additive potential `phi(x)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Potential {
    None,
    /// `amplitude * sum_i cos(2 pi x_i / wavelength + phase)`.
    Cosine {
        amplitude: f64,
        wavelength: f64,
        phase: f64,
    },
}

impl Potential {
    pub fn value(&self, x: &Vector, dim: usize) -> f64 {
        match *self {
            Potential::None => 0.0,
            Potential::Cosine {
                amplitude,
                wavelength,
                phase,
            } => (0..dim)
                .map(|i| amplitude * (2.0 * PI * x[i] / wavelength + phase).cos())
                .sum(),
        }
    }

    pub fn gradient(&self, x: &Vector, dim: usize) -> Vector {
        let mut g = ZERO;
        if let Potential::Cosine {
            amplitude,
            wavelength,
            phase,
        } = *self
        {
            let w = 2.0 * PI / wavelength;
            for i in 0..dim {
                g[i] = -amplitude * w * (w * x[i] + phase).sin();
            }
        }
        g
    }

    fn bounds(&self, dim: usize) -> (f64, f64) {
        match *self {
            Potential::None => (0.0, 0.0),
            Potential::Cosine {
                amplitude,
                wavelength,
                ..
            } => {
                let a = amplitude.abs() * dim as f64;
                (a, a * 2.0 * PI / wavelength)
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PowerLagrangian {
    dim: usize,
    q_prime: f64,
    p_bar: Vector,
    potential: Potential,
    c0: f64,
    spec: SummarySpec,
}

impl PowerLagrangian {
    pub fn new(dim: usize, q_prime: f64, p_bar: Vector, potential: Potential) -> Result<Self> {
        if !(1..=2).contains(&dim) {
            return Err(MfgcError::param("dim", "dim in {1, 2}"));
        }
        if !(q_prime.is_finite() && q_prime > 1.0) {
            return Err(MfgcError::param("q_prime", "q_prime > 1"));
        }
        if let Potential::Cosine { wavelength, .. } = potential {
            if !(wavelength > 0.0) {
                return Err(MfgcError::param("potential.wavelength", "wavelength > 0"));
            }
        }
        let mut p_bar = p_bar;
        if dim == 1 {
            p_bar[1] = 0.0;
        }
        let q = conjugate_exponent(q_prime);
        let (phi, dphi) = potential.bounds(dim);
        let c0 = 2.0 * q_prime + 2.0 + 2f64.powf(q) * (norm(&p_bar).powf(q) + 1.0) + phi + dphi;
        Ok(Self {
            dim,
            q_prime,
            p_bar,
            potential,
            c0,
            spec: SummarySpec::Independent,
        })
    }

    /// `|alpha|^2 / 2`.
    pub fn quadratic(dim: usize) -> Self {
        Self::new(dim, 2.0, ZERO, Potential::None).expect("valid quadratic")
    }

    pub fn p_bar(&self) -> Vector {
        self.p_bar
    }
}

impl Lagrangian for PowerLagrangian {
    fn name(&self) -> &'static str {
        "power"
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

    fn value(&self, _t: f64, x: &Vector, alpha: &Vector, _s: &LawSummary) -> f64 {
        power_terms::value(alpha, self.q_prime) - dot(alpha, &self.p_bar)
            + self.potential.value(x, self.dim)
    }

    fn value_difference(
        &self,
        _t: f64,
        _x: &Vector,
        _alpha: &Vector,
        _s1: &LawSummary,
        _s2: &LawSummary,
    ) -> f64 {
        0.0
    }

    fn grad_alpha(&self, _t: f64, _x: &Vector, alpha: &Vector, _s: &LawSummary) -> Vector {
        let g = power_terms::grad(alpha, self.q_prime);
        [g[0] - self.p_bar[0], g[1] - self.p_bar[1]]
    }

    fn hess_alpha(&self, _t: f64, _x: &Vector, alpha: &Vector, _s: &LawSummary) -> Matrix {
        power_terms::hess(alpha, self.q_prime, self.dim)
    }

    fn grad_x(&self, _t: f64, x: &Vector, _alpha: &Vector, _s: &LawSummary) -> Vector {
        self.potential.gradient(x, self.dim)
    }

    fn conjugate(&self, _t: f64, x: &Vector, p: &Vector, _s: &LawSummary) -> Option<(f64, Vector)> {
        let w = [p[0] - self.p_bar[0], p[1] - self.p_bar[1]];
        let q = conjugate_exponent(self.q_prime);
        let n = norm(&w);
        let control = if n == 0.0 {
            ZERO
        } else {
            scale(-n.powf(q - 2.0), &w)
        };
        Some((n.powf(q) / q - self.potential.value(x, self.dim), control))
    }
}
