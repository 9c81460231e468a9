//! Lagrangians, the statistics of the joint law they read, and the
//! Lasry-Lions monotonicity gap.
//!
//! Every model consumes the law `mu = (Id, alpha)#m` only through a
//! [`LawSummary`], so the per-time fixed point is finite dimensional.

mod costs;
mod crowd;
mod exhaustible;
mod power;

use std::fmt::Debug;

use serde::{Deserialize, Serialize};

pub use costs::{
    coupling_monotonicity_gap, DensityCoupling, RunningCost, SmoothingKernel, TerminalCost,
    TerminalProfile,
};
pub use crowd::{CrowdKernel, CrowdMotion};
pub use exhaustible::{ExhaustibleGeneral, ExhaustibleLinear, WeightProfile};
pub use power::{Potential, PowerLagrangian};

use crate::domain::{norm, GridField, Vector, MAX_DIM, ZERO};
use crate::error::{MfgcError, Result};

pub type Matrix = [[f64; MAX_DIM]; MAX_DIM];

/// Which statistic of the law a model reads.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SummaryKind {
    /// The Lagrangian does not depend on the law.
    Independent,
    /// Mean control `int alpha dmu`.
    MeanControl,
    /// Kernel-weighted mean `V = (1/Z) int alpha k dmu`.
    WeightedMean,
    /// Weighted control `W = int phi alpha dmu`.
    WeightedControl,
}

/// How to compute a [`LawSummary`] from `(m, alpha)`.
#[derive(Clone, Debug, PartialEq)]
pub enum SummarySpec {
    Independent,
    MeanControl,
    WeightedMean {
        kernel: GridField,
        /// Normalizer exponent, `f64::INFINITY` for a sup over the support.
        q1: f64,
    },
    WeightedControl {
        weight: GridField,
    },
}

impl SummarySpec {
    pub fn kind(&self) -> SummaryKind {
        match self {
            SummarySpec::Independent => SummaryKind::Independent,
            SummarySpec::MeanControl => SummaryKind::MeanControl,
            SummarySpec::WeightedMean { .. } => SummaryKind::WeightedMean,
            SummarySpec::WeightedControl { .. } => SummaryKind::WeightedControl,
        }
    }
}

/// Finite statistics of a graph measure.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct LawSummary {
    pub kind: SummaryKind,
    pub mean_control: Vector,
    pub weighted_mean: Vector,
    pub normalizer: f64,
    pub weighted_control: Vector,
    /// `Lambda_{q'}` for the model exponent.
    pub moment: f64,
    pub moment_exponent: f64,
    /// `Lambda_inf`: sup of `|alpha|` on the numerical support.
    pub moment_inf: f64,
}

impl LawSummary {
    fn base(kind: SummaryKind) -> Self {
        Self {
            kind,
            mean_control: ZERO,
            weighted_mean: ZERO,
            normalizer: 0.0,
            weighted_control: ZERO,
            moment: 0.0,
            moment_exponent: 2.0,
            moment_inf: 0.0,
        }
    }

    pub fn independent() -> Self {
        Self::base(SummaryKind::Independent)
    }

    /// Zero statistic of the given kind (unit normalizer for weighted means).
    pub fn neutral(kind: SummaryKind) -> Self {
        let mut s = Self::base(kind);
        if kind == SummaryKind::WeightedMean {
            s.normalizer = 1.0;
        }
        s
    }

    /// Summary of a law with mean control `mean`; moments set to `|mean|`.
    pub fn with_mean_control(mean: Vector) -> Self {
        let mut s = Self::base(SummaryKind::MeanControl);
        s.mean_control = mean;
        s.moment = norm(&mean);
        s.moment_inf = s.moment;
        s
    }

    pub fn with_weighted_mean(v: Vector, normalizer: f64) -> Self {
        let mut s = Self::base(SummaryKind::WeightedMean);
        s.weighted_mean = v;
        s.normalizer = normalizer;
        s.moment = norm(&v);
        s.moment_inf = s.moment;
        s
    }

    pub fn with_weighted_control(w: Vector) -> Self {
        let mut s = Self::base(SummaryKind::WeightedControl);
        s.weighted_control = w;
        s
    }

    /// Override the cached moments, e.g. when sampling summaries.
    pub fn with_moments(mut self, exponent: f64, moment: f64, moment_inf: f64) -> Self {
        self.moment_exponent = exponent;
        self.moment = moment;
        self.moment_inf = moment_inf;
        self
    }

    /// Copy with the statistic replaced by `v`.
    pub fn with_payload(mut self, v: Vector) -> Self {
        match self.kind {
            SummaryKind::Independent => {}
            SummaryKind::MeanControl => self.mean_control = v,
            SummaryKind::WeightedMean => self.weighted_mean = v,
            SummaryKind::WeightedControl => self.weighted_control = v,
        }
        self
    }

    /// The statistic the owning model reads.
    pub fn payload(&self) -> Vector {
        match self.kind {
            SummaryKind::Independent => ZERO,
            SummaryKind::MeanControl => self.mean_control,
            SummaryKind::WeightedMean => self.weighted_mean,
            SummaryKind::WeightedControl => self.weighted_control,
        }
    }

    pub fn check_kind(&self, expected: SummaryKind) -> Result<()> {
        if self.kind == expected {
            Ok(())
        } else {
            Err(MfgcError::SummaryKind {
                expected,
                found: self.kind,
            })
        }
    }
}

/// `q = q' / (q' - 1)`.
pub fn conjugate_exponent(q_prime: f64) -> f64 {
    q_prime / (q_prime - 1.0)
}

/// A Lagrangian `L(t, x, alpha, mu)`, strictly convex in `alpha`.
pub trait Lagrangian: Send + Sync + Debug {
    fn name(&self) -> &'static str;
    fn dim(&self) -> usize;
    /// Declared growth exponent `q'`.
    fn exponent(&self) -> f64;
    /// Declared growth constant `C0`.
    fn growth_constant(&self) -> f64;
    fn summary_spec(&self) -> &SummarySpec;

    fn summary_kind(&self) -> SummaryKind {
        self.summary_spec().kind()
    }

    fn value(&self, t: f64, x: &Vector, alpha: &Vector, s: &LawSummary) -> f64;

    /// `L(alpha, s1) - L(alpha, s2)`; models override this to avoid cancellation.
    fn value_difference(
        &self,
        t: f64,
        x: &Vector,
        alpha: &Vector,
        s1: &LawSummary,
        s2: &LawSummary,
    ) -> f64 {
        self.value(t, x, alpha, s1) - self.value(t, x, alpha, s2)
    }

    fn grad_alpha(&self, t: f64, x: &Vector, alpha: &Vector, s: &LawSummary) -> Vector;

    /// May contain non-finite entries where `L` is not twice differentiable.
    fn hess_alpha(&self, t: f64, x: &Vector, alpha: &Vector, s: &LawSummary) -> Matrix;

    fn grad_x(&self, _t: f64, _x: &Vector, _alpha: &Vector, _s: &LawSummary) -> Vector {
        ZERO
    }

    /// Analytic `(H, alpha*)` when the model has one.
    fn conjugate(&self, _t: f64, _x: &Vector, _p: &Vector, _s: &LawSummary) -> Option<(f64, Vector)> {
        None
    }
}

/// Compute the summary statistics of `(m, alpha)` requested by `spec`.
///
/// `q_prime` selects the cached moment `Lambda_{q'}`.
pub fn law_summary(
    m: &GridField,
    alpha: &GridField,
    spec: &SummarySpec,
    q_prime: f64,
) -> Result<LawSummary> {
    let grid = *m.grid();
    grid.check_same(alpha.grid())?;
    if !m.is_scalar() || alpha.components() != grid.dim() {
        return Err(MfgcError::Shape(
            "law summary needs a scalar density and a d-component control".into(),
        ));
    }
    let vol = grid.cell_volume();
    let floor = crate::domain::support_threshold(&grid);
    let d = grid.dim();
    let mv = m.values();
    let av = alpha.values();

    let mut s = LawSummary::base(spec.kind());
    s.moment_exponent = q_prime;
    let mut mean = ZERO;
    let mut pow_sum = 0.0;
    let mut sup: f64 = 0.0;
    for k in 0..grid.num_nodes() {
        let a = alpha.vector_at(k);
        let w = mv[k];
        for j in 0..d {
            mean[j] += av[k * d + j] * w;
        }
        let r = norm(&a);
        pow_sum += r.powf(q_prime) * w;
        if w > floor {
            sup = sup.max(r);
        }
    }
    s.mean_control = [mean[0] * vol, mean[1] * vol];
    s.moment = (pow_sum * vol).max(0.0).powf(1.0 / q_prime);
    s.moment_inf = sup;

    match spec {
        SummarySpec::Independent | SummarySpec::MeanControl => {}
        SummarySpec::WeightedMean { kernel, q1 } => {
            grid.check_same(kernel.grid())?;
            let q = conjugate_exponent(q_prime);
            if *q1 < q {
                return Err(MfgcError::param("q1", format!("q1 >= q = {q}")));
            }
            let kv = kernel.values();
            let z = if q1.is_infinite() {
                (0..grid.num_nodes())
                    .filter(|&k| mv[k] > floor)
                    .map(|k| kv[k])
                    .fold(0.0, f64::max)
            } else {
                let sum: f64 = (0..grid.num_nodes()).map(|k| kv[k].powf(*q1) * mv[k]).sum();
                (sum * vol).max(0.0).powf(1.0 / q1)
            };
            s.normalizer = z;
            if z > 0.0 {
                let mut acc = ZERO;
                for k in 0..grid.num_nodes() {
                    let w = kv[k] * mv[k];
                    for j in 0..d {
                        acc[j] += av[k * d + j] * w;
                    }
                }
                s.weighted_mean = [acc[0] * vol / z, acc[1] * vol / z];
            }
        }
        SummarySpec::WeightedControl { weight } => {
            grid.check_same(weight.grid())?;
            let wv = weight.values();
            let mut acc = ZERO;
            for k in 0..grid.num_nodes() {
                let w = wv[k] * mv[k];
                for j in 0..d {
                    acc[j] += av[k * d + j] * w;
                }
            }
            s.weighted_control = [acc[0] * vol, acc[1] * vol];
        }
    }
    Ok(s)
}

/// `int (L(., mu1) - L(., mu2)) d(mu1 - mu2)` over two graph measures.
///
/// Each law is given as `(density, control, summary)`.
pub fn monotonicity_gap(
    model: &dyn Lagrangian,
    t: f64,
    law1: (&GridField, &GridField, &LawSummary),
    law2: (&GridField, &GridField, &LawSummary),
) -> Result<f64> {
    let (m1, a1, s1) = law1;
    let (m2, a2, s2) = law2;
    let grid = *m1.grid();
    for f in [m2, a1, a2] {
        grid.check_same(f.grid())?;
    }
    s1.check_kind(model.summary_kind())?;
    s2.check_kind(model.summary_kind())?;
    let mut first = 0.0;
    let mut second = 0.0;
    for k in 0..grid.num_nodes() {
        let x = grid.coords(k);
        let w1 = m1.values()[k];
        let w2 = m2.values()[k];
        if w1 != 0.0 {
            first += model.value_difference(t, &x, &a1.vector_at(k), s1, s2) * w1;
        }
        if w2 != 0.0 {
            second += model.value_difference(t, &x, &a2.vector_at(k), s1, s2) * w2;
        }
    }
    Ok((first - second) * grid.cell_volume())
}

/// Per-model helpers shared by the power-type terms `|alpha|^r / r`.
pub(crate) mod power_terms {
    use crate::domain::{norm, scale, Vector, MAX_DIM};

    use super::Matrix;

    pub fn value(a: &Vector, r: f64) -> f64 {
        norm(a).powf(r) / r
    }

    pub fn grad(a: &Vector, r: f64) -> Vector {
        let n = norm(a);
        if n == 0.0 {
            return [0.0; MAX_DIM];
        }
        scale(n.powf(r - 2.0), a)
    }

    /// Hessian of `|a|^r / r`; infinite at 0 when `r < 2`.
    pub fn hess(a: &Vector, r: f64, dim: usize) -> Matrix {
        let n = norm(a);
        let mut h = [[0.0; MAX_DIM]; MAX_DIM];
        if n == 0.0 {
            let diag = if r < 2.0 {
                f64::INFINITY
            } else if r == 2.0 {
                1.0
            } else {
                0.0
            };
            for (i, row) in h.iter_mut().enumerate().take(dim) {
                row[i] = diag;
            }
            return h;
        }
        let base = n.powf(r - 2.0);
        for i in 0..dim {
            for j in 0..dim {
                let id = if i == j { 1.0 } else { 0.0 };
                h[i][j] = base * (id + (r - 2.0) * a[i] * a[j] / (n * n));
            }
        }
        h
    }
}
