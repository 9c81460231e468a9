//! Exhaustible-resource producers in price competition.
//!
//! The linear-demand model is one dimensional:
//! `L = alpha^2 + kappa alpha abar - beta alpha` with `kappa = eps/(1+eps)`
//! and `beta = 1/(1+eps)`, where `abar` is the mean production rate.
//! The general model reads `W = int phi alpha dmu` through a monotone price
//! map `P = Psi(W) = W + c |W|^{q'-2} W`.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::{power_terms, conjugate_exponent, Lagrangian, LawSummary, Matrix, SummarySpec};
use crate::domain::{dot, norm, scale, GridField, TorusGrid, Vector, ZERO};
use crate::error::{MfgcError, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct ExhaustibleLinear {
    epsilon: f64,
    kappa: f64,
    beta: f64,
    spec: SummarySpec,
}

impl ExhaustibleLinear {
    pub fn new(epsilon: f64) -> Result<Self> {
        if !(epsilon.is_finite() && epsilon >= 0.0) {
            return Err(MfgcError::param("epsilon", "epsilon ≥ 0"));
        }
        Ok(Self {
            epsilon,
            kappa: epsilon / (1.0 + epsilon),
            beta: 1.0 / (1.0 + epsilon),
            spec: SummarySpec::MeanControl,
        })
    }

    /// Same model with the sign of the mean-control coupling reversed.
    /// Breaks monotonicity; used as an audit counterexample.
    pub fn with_flipped_coupling(mut self) -> Self {
        self.kappa = -self.kappa;
        self
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    /// Mean control solving `abar = int -(p + kappa abar - beta)/2 dm`
    /// for a density of total mass `mass` and `g = int p dm`.
    pub fn mean_control_oracle(&self, g: f64, mass: f64) -> f64 {
        (self.beta * mass - g) / (2.0 + self.kappa * mass)
    }

    fn shift(&self, s: &LawSummary) -> f64 {
        self.kappa * s.mean_control[0] - self.beta
    }
}

impl Lagrangian for ExhaustibleLinear {
    fn name(&self) -> &'static str {
        "exhaustible_linear"
    }

    fn dim(&self) -> usize {
        1
    }

    fn exponent(&self) -> f64 {
        2.0
    }

    fn growth_constant(&self) -> f64 {
        4.0
    }

    fn summary_spec(&self) -> &SummarySpec {
        &self.spec
    }

    fn value(&self, _t: f64, _x: &Vector, alpha: &Vector, s: &LawSummary) -> f64 {
        let a = alpha[0];
        a * a + a * self.shift(s)
    }

    fn value_difference(
        &self,
        _t: f64,
        _x: &Vector,
        alpha: &Vector,
        s1: &LawSummary,
        s2: &LawSummary,
    ) -> f64 {
        self.kappa * alpha[0] * (s1.mean_control[0] - s2.mean_control[0])
    }

    fn grad_alpha(&self, _t: f64, _x: &Vector, alpha: &Vector, s: &LawSummary) -> Vector {
        [2.0 * alpha[0] + self.shift(s), 0.0]
    }

    fn hess_alpha(&self, _t: f64, _x: &Vector, _alpha: &Vector, _s: &LawSummary) -> Matrix {
        [[2.0, 0.0], [0.0, 0.0]]
    }

    fn conjugate(&self, _t: f64, _x: &Vector, p: &Vector, s: &LawSummary) -> Option<(f64, Vector)> {
        let w = p[0] + self.shift(s);
        Some((0.25 * w * w, [-0.5 * w, 0.0]))
    }
}

/// Smooth periodic weight `phi(x)` for the general model.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum WeightProfile {
    Constant { value: f64 },
    /// `mean + amplitude * cos(2 pi x_0 / a)`.
    Cosine { mean: f64, amplitude: f64 },
}

impl WeightProfile {
    fn eval(&self, x: &Vector, radius: f64) -> f64 {
        match *self {
            WeightProfile::Constant { value } => value,
            WeightProfile::Cosine { mean, amplitude } => {
                mean + amplitude * (2.0 * PI * x[0] / radius).cos()
            }
        }
    }

    fn grad(&self, x: &Vector, radius: f64) -> Vector {
        match *self {
            WeightProfile::Constant { .. } => ZERO,
            WeightProfile::Cosine { amplitude, .. } => {
                let w = 2.0 * PI / radius;
                [-amplitude * w * (w * x[0]).sin(), 0.0]
            }
        }
    }

    fn sup(&self) -> f64 {
        match *self {
            WeightProfile::Constant { value } => value.abs(),
            WeightProfile::Cosine { mean, amplitude } => mean.abs() + amplitude.abs(),
        }
    }

    fn grad_sup(&self, radius: f64) -> f64 {
        match *self {
            WeightProfile::Constant { .. } => 0.0,
            WeightProfile::Cosine { amplitude, .. } => amplitude.abs() * 2.0 * PI / radius,
        }
    }
}

/// `L = |alpha|^{q'}/q' + phi(x) alpha . Psi(W)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ExhaustibleGeneral {
    dim: usize,
    q_prime: f64,
    psi_coefficient: f64,
    profile: WeightProfile,
    radius: f64,
    c0: f64,
    spec: SummarySpec,
}

impl ExhaustibleGeneral {
    pub fn new(
        grid: &TorusGrid,
        q_prime: f64,
        psi_coefficient: f64,
        profile: WeightProfile,
    ) -> Result<Self> {
        if !(q_prime.is_finite() && q_prime >= 2.0) {
            return Err(MfgcError::param("q_prime", "q_prime >= 2"));
        }
        if !(psi_coefficient.is_finite() && psi_coefficient >= 0.0) {
            return Err(MfgcError::param("psi_coefficient", "psi_coefficient ≥ 0"));
        }
        let radius = grid.radius();
        let weight = GridField::from_fn(*grid, |x| profile.eval(x, radius));
        let q = conjugate_exponent(q_prime);
        let bound = |phi: f64| {
            2f64.powf(q - 1.0)
                * phi.powf(q)
                * (phi.powf(q) + psi_coefficient.powf(q) * phi.powf(q_prime))
        };
        let k = bound(profile.sup()) + bound(profile.grad_sup(radius).max(profile.sup()));
        let c0 = 2.0 * q_prime + 1.0 + 2f64.powf(q) * k / q;
        Ok(Self {
            dim: grid.dim(),
            q_prime,
            psi_coefficient,
            profile,
            radius,
            c0,
            spec: SummarySpec::WeightedControl { weight },
        })
    }

    /// `Psi(W) = W + c |W|^{q'-2} W`.
    pub fn price(&self, w: &Vector) -> Vector {
        let n = norm(w);
        let factor = if n == 0.0 {
            1.0
        } else {
            1.0 + self.psi_coefficient * n.powf(self.q_prime - 2.0)
        };
        scale(factor, w)
    }

    pub fn weight_at(&self, x: &Vector) -> f64 {
        self.profile.eval(x, self.radius)
    }
}

impl Lagrangian for ExhaustibleGeneral {
    fn name(&self) -> &'static str {
        "exhaustible_general"
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

    fn value(&self, _t: f64, x: &Vector, alpha: &Vector, s: &LawSummary) -> f64 {
        let price = self.price(&s.weighted_control);
        power_terms::value(alpha, self.q_prime) + self.weight_at(x) * dot(alpha, &price)
    }

    fn value_difference(
        &self,
        _t: f64,
        x: &Vector,
        alpha: &Vector,
        s1: &LawSummary,
        s2: &LawSummary,
    ) -> f64 {
        let p1 = self.price(&s1.weighted_control);
        let p2 = self.price(&s2.weighted_control);
        self.weight_at(x) * dot(alpha, &[p1[0] - p2[0], p1[1] - p2[1]])
    }

    fn grad_alpha(&self, _t: f64, x: &Vector, alpha: &Vector, s: &LawSummary) -> Vector {
        let price = self.price(&s.weighted_control);
        let g = power_terms::grad(alpha, self.q_prime);
        let phi = self.weight_at(x);
        [g[0] + phi * price[0], g[1] + phi * price[1]]
    }

    fn hess_alpha(&self, _t: f64, _x: &Vector, alpha: &Vector, _s: &LawSummary) -> Matrix {
        power_terms::hess(alpha, self.q_prime, self.dim)
    }

    fn grad_x(&self, _t: f64, x: &Vector, alpha: &Vector, s: &LawSummary) -> Vector {
        let price = self.price(&s.weighted_control);
        scale(dot(alpha, &price), &self.profile.grad(x, self.radius))
    }

    fn conjugate(&self, _t: f64, x: &Vector, p: &Vector, s: &LawSummary) -> Option<(f64, Vector)> {
        let price = self.price(&s.weighted_control);
        let phi = self.weight_at(x);
        let w = [p[0] + phi * price[0], p[1] + phi * price[1]];
        let q = conjugate_exponent(self.q_prime);
        let n = norm(&w);
        let control = if n == 0.0 {
            ZERO
        } else {
            scale(-n.powf(q - 2.0), &w)
        };
        Some((n.powf(q) / q, control))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_model_values() {
        let m = ExhaustibleLinear::new(0.0).unwrap();
        let s = LawSummary::with_mean_control([3.7, 0.0]);
        assert_eq!(m.value(0.0, &ZERO, &[1.0, 0.0], &s), 0.0);
        assert!(ExhaustibleLinear::new(-1.0)
            .unwrap_err()
            .to_string()
            .contains("epsilon ≥ 0"));
    }

    #[test]
    fn linear_oracle_examples() {
        assert_eq!(ExhaustibleLinear::new(0.0).unwrap().mean_control_oracle(1.0, 1.0), 0.0);
        let m = ExhaustibleLinear::new(1.0).unwrap();
        assert!((m.mean_control_oracle(0.0, 1.0) - 0.2).abs() < 1e-15);
    }

    #[test]
    fn general_price_is_monotone() {
        let g = TorusGrid::new(1, 2.0, 8).unwrap();
        let m = ExhaustibleGeneral::new(&g, 3.0, 0.5, WeightProfile::Constant { value: 1.0 })
            .unwrap();
        let mut prev = f64::NEG_INFINITY;
        for k in -20..=20 {
            let y = k as f64 * 0.25;
            let p = m.price(&[y, 0.0])[0];
            assert!(p > prev);
            prev = p;
        }
    }
}
