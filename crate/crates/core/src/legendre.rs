//! Convex conjugate `H(t,x,p,mu) = sup_alpha -p.alpha - L(t,x,alpha,mu)`
//! and its maximizer `alpha* = -H_p`.
//!
//! Closed forms are used when the model provides one; otherwise the inner
//! problem `min_alpha L + p.alpha` is solved by damped Newton with an
//! exact line search along `-grad` as fallback.

use std::fmt::Debug;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domain::{add, dot, norm, scale, GridField, TorusGrid, Vector, ZERO};
use crate::error::{MfgcError, Result};
use crate::models::{law_summary, monotonicity_gap, Lagrangian, LawSummary, Matrix, SummaryKind};

/// Nodes per warm-start chain in field sweeps; fixed so results do not
/// depend on the worker count.
pub const SWEEP_CHUNK: usize = 64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LegendreMode {
    ClosedForm,
    Numeric,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NumericOptions {
    /// First trial step of the bracketing line search.
    pub bracket_radius: f64,
    /// Target gradient norm of the inner problem.
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for NumericOptions {
    fn default() -> Self {
        Self {
            bracket_radius: 1.0,
            tolerance: 1e-10,
            max_iterations: 100,
        }
    }
}

/// A smooth strictly convex function on `R^dim`.
pub trait ConvexObjective {
    fn dim(&self) -> usize;
    fn value(&self, a: &Vector) -> f64;
    fn gradient(&self, a: &Vector) -> Vector;
    /// May be non-finite where the function is not twice differentiable.
    fn hessian(&self, a: &Vector) -> Matrix;
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Minimum {
    pub point: Vector,
    pub value: f64,
    pub grad_norm: f64,
    pub iterations: usize,
}

fn newton_direction(h: &Matrix, g: &Vector, dim: usize) -> Option<Vector> {
    if dim == 1 {
        let h00 = h[0][0];
        if h00.is_finite() && h00 > 0.0 {
            return Some([-g[0] / h00, 0.0]);
        }
        return None;
    }
    let (a, b, c) = (h[0][0], h[0][1], h[1][1]);
    let det = a * c - b * b;
    if !(a.is_finite() && b.is_finite() && c.is_finite()) || a <= 0.0 || det <= 0.0 {
        return None;
    }
    let d = [-(c * g[0] - b * g[1]) / det, -(a * g[1] - b * g[0]) / det];
    if dot(&d, g) < 0.0 {
        Some(d)
    } else {
        None
    }
}

/// Minimize along the ray `x - s g/|g|`, `s >= 0`, by bisection on the
/// directional derivative.
fn ray_search<O: ConvexObjective + ?Sized>(obj: &O, x: &Vector, g: &Vector, first: f64) -> Vector {
    let dir = scale(-1.0 / norm(g), g);
    let slope = |s: f64| dot(&obj.gradient(&add(x, &scale(s, &dir))), &dir);
    let mut lo = 0.0;
    let mut hi = first.max(f64::MIN_POSITIVE);
    let mut doublings = 0;
    while slope(hi) < 0.0 && doublings < 1100 {
        lo = hi;
        hi *= 2.0;
        doublings += 1;
    }
    for _ in 0..2000 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if slope(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let a = add(x, &scale(lo, &dir));
    let b = add(x, &scale(hi, &dir));
    if norm(&obj.gradient(&a)) <= norm(&obj.gradient(&b)) {
        a
    } else {
        b
    }
}

/// Damped Newton with Armijo backtracking; falls back to an exact line
/// search along `-grad` where the Hessian is unusable or `|x| < 1e-6`.
pub fn minimize_convex<O: ConvexObjective + ?Sized>(
    obj: &O,
    start: Vector,
    opts: &NumericOptions,
) -> Result<Minimum> {
    let dim = obj.dim();
    let mut x = start;
    for slot in x.iter_mut().skip(dim) {
        *slot = 0.0;
    }
    let mut fx = obj.value(&x);
    if !fx.is_finite() {
        x = ZERO;
        fx = obj.value(&x);
    }
    let mut g = obj.gradient(&x);
    let mut best = (x, norm(&g));
    for it in 0..opts.max_iterations {
        let gn = norm(&g);
        if gn < best.1 {
            best = (x, gn);
        }
        if gn <= opts.tolerance {
            return Ok(Minimum {
                point: x,
                value: fx,
                grad_norm: gn,
                iterations: it,
            });
        }
        let mut next = None;
        if norm(&x) >= 1e-6 {
            if let Some(d) = newton_direction(&obj.hessian(&x), &g, dim) {
                let slope = dot(&g, &d);
                let mut t = 1.0;
                for _ in 0..60 {
                    let xn = add(&x, &scale(t, &d));
                    let fnew = obj.value(&xn);
                    if fnew.is_finite() {
                        if fnew <= fx + 1e-4 * t * slope {
                            next = Some(xn);
                            break;
                        }
                        // Below rounding level of f: accept when the gradient shrinks.
                        if fnew <= fx + 8.0 * f64::EPSILON * fx.abs().max(1.0)
                            && norm(&obj.gradient(&xn)) < gn
                        {
                            next = Some(xn);
                            break;
                        }
                    }
                    t *= 0.5;
                }
            }
        }
        let xn = match next {
            Some(xn) => xn,
            None => ray_search(obj, &x, &g, opts.bracket_radius),
        };
        if xn == x {
            break;
        }
        x = xn;
        fx = obj.value(&x);
        g = obj.gradient(&x);
    }
    let gn = norm(&g);
    if gn <= opts.tolerance {
        return Ok(Minimum {
            point: x,
            value: fx,
            grad_norm: gn,
            iterations: opts.max_iterations,
        });
    }
    if gn < best.1 {
        best = (x, gn);
    }
    Err(MfgcError::NumericFailure {
        best: best.0,
        grad_norm: best.1,
        iterations: opts.max_iterations,
    })
}

/// `alpha -> L(t,x,alpha,s) + p.alpha`.
struct ConjugateObjective<'a> {
    model: &'a dyn Lagrangian,
    t: f64,
    x: Vector,
    p: Vector,
    summary: &'a LawSummary,
}

impl ConvexObjective for ConjugateObjective<'_> {
    fn dim(&self) -> usize {
        self.model.dim()
    }

    fn value(&self, a: &Vector) -> f64 {
        self.model.value(self.t, &self.x, a, self.summary) + dot(&self.p, a)
    }

    fn gradient(&self, a: &Vector) -> Vector {
        add(&self.model.grad_alpha(self.t, &self.x, a, self.summary), &self.p)
    }

    fn hessian(&self, a: &Vector) -> Matrix {
        self.model.hess_alpha(self.t, &self.x, a, self.summary)
    }
}

/// `H` and the optimal control `alpha* = -H_p` at one point.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct HamiltonianValue {
    pub value: f64,
    pub control: Vector,
}

/// What the PDE and fixed-point solvers need from a Hamiltonian.
pub trait Hamiltonian: Send + Sync + Debug {
    fn dim(&self) -> usize;
    /// Exponent `q'` of the cached law moment.
    fn exponent(&self) -> f64;
    fn growth_constant(&self) -> f64;
    fn is_law_independent(&self) -> bool;
    /// Summary of the law `(m, control)` in the variables this Hamiltonian acts on.
    fn summarize(&self, m: &GridField, control: &GridField) -> Result<LawSummary>;
    fn evaluate(
        &self,
        t: f64,
        x: &Vector,
        p: &Vector,
        s: &LawSummary,
        warm: Option<&Vector>,
    ) -> Result<HamiltonianValue>;
    fn grad_x(&self, t: f64, x: &Vector, p: &Vector, s: &LawSummary) -> Result<Vector>;

    /// Lasry-Lions gap of the underlying Lagrangian between two laws given
    /// as `(density, control)`, when available.
    fn monotonicity_gap(
        &self,
        _t: f64,
        _law1: (&GridField, &GridField),
        _law2: (&GridField, &GridField),
    ) -> Option<Result<f64>> {
        None
    }
}

#[derive(Clone, Debug)]
pub struct HamiltonianEvaluator {
    model: Arc<dyn Lagrangian>,
    mode: LegendreMode,
    options: NumericOptions,
}

impl HamiltonianEvaluator {
    pub fn new(model: Arc<dyn Lagrangian>, mode: LegendreMode) -> Result<Self> {
        if mode == LegendreMode::ClosedForm {
            let probe = LawSummary::independent();
            if model.conjugate(0.0, &ZERO, &ZERO, &probe).is_none() {
                return Err(MfgcError::param(
                    "legendre_mode",
                    format!("closed_form requires an analytic conjugate ({} has none)", model.name()),
                ));
            }
        }
        Ok(Self {
            model,
            mode,
            options: NumericOptions::default(),
        })
    }

    pub fn with_options(mut self, options: NumericOptions) -> Self {
        self.options = options;
        self
    }

    pub fn model(&self) -> &Arc<dyn Lagrangian> {
        &self.model
    }

    pub fn mode(&self) -> LegendreMode {
        self.mode
    }

    pub fn options(&self) -> &NumericOptions {
        &self.options
    }

    pub fn summary_kind(&self) -> SummaryKind {
        self.model.summary_kind()
    }

    pub fn hamiltonian(&self, t: f64, x: &Vector, p: &Vector, s: &LawSummary) -> Result<HamiltonianValue> {
        self.hamiltonian_warm(t, x, p, s, None)
    }

    pub fn hamiltonian_warm(
        &self,
        t: f64,
        x: &Vector,
        p: &Vector,
        s: &LawSummary,
        warm: Option<&Vector>,
    ) -> Result<HamiltonianValue> {
        s.check_kind(self.model.summary_kind())?;
        let mut p = *p;
        for slot in p.iter_mut().skip(self.model.dim()) {
            *slot = 0.0;
        }
        match self.mode {
            LegendreMode::ClosedForm => {
                let (value, control) = self
                    .model
                    .conjugate(t, x, &p, s)
                    .ok_or_else(|| MfgcError::param("legendre_mode", "closed form available"))?;
                Ok(HamiltonianValue { value, control })
            }
            LegendreMode::Numeric => {
                let obj = ConjugateObjective {
                    model: self.model.as_ref(),
                    t,
                    x: *x,
                    p,
                    summary: s,
                };
                let start = warm.copied().unwrap_or(ZERO);
                let min = minimize_convex(&obj, start, &self.options)?;
                Ok(HamiltonianValue {
                    value: -min.value,
                    control: min.point,
                })
            }
        }
    }

    /// `H_p = -alpha*`.
    pub fn grad_p(&self, t: f64, x: &Vector, p: &Vector, s: &LawSummary) -> Result<Vector> {
        Ok(scale(-1.0, &self.hamiltonian(t, x, p, s)?.control))
    }

    /// Envelope formula `H_x = -L_x(alpha*)`.
    pub fn grad_x(&self, t: f64, x: &Vector, p: &Vector, s: &LawSummary) -> Result<Vector> {
        let a = self.hamiltonian(t, x, p, s)?.control;
        Ok(scale(-1.0, &self.model.grad_x(t, x, &a, s)))
    }
}

impl Hamiltonian for HamiltonianEvaluator {
    fn dim(&self) -> usize {
        self.model.dim()
    }

    fn exponent(&self) -> f64 {
        self.model.exponent()
    }

    fn growth_constant(&self) -> f64 {
        self.model.growth_constant()
    }

    fn is_law_independent(&self) -> bool {
        self.model.summary_kind() == SummaryKind::Independent
    }

    fn summarize(&self, m: &GridField, control: &GridField) -> Result<LawSummary> {
        law_summary(m, control, self.model.summary_spec(), self.model.exponent())
    }

    fn evaluate(
        &self,
        t: f64,
        x: &Vector,
        p: &Vector,
        s: &LawSummary,
        warm: Option<&Vector>,
    ) -> Result<HamiltonianValue> {
        self.hamiltonian_warm(t, x, p, s, warm)
    }

    fn grad_x(&self, t: f64, x: &Vector, p: &Vector, s: &LawSummary) -> Result<Vector> {
        HamiltonianEvaluator::grad_x(self, t, x, p, s)
    }

    fn monotonicity_gap(
        &self,
        t: f64,
        law1: (&GridField, &GridField),
        law2: (&GridField, &GridField),
    ) -> Option<Result<f64>> {
        Some((|| {
            let s1 = self.summarize(law1.0, law1.1)?;
            let s2 = self.summarize(law2.0, law2.1)?;
            monotonicity_gap(self.model.as_ref(), t, (law1.0, law1.1, &s1), (law2.0, law2.1, &s2))
        })())
    }
}

/// Continuation Hamiltonian `theta H(t, x, p, Theta mu)`, where `Theta`
/// divides controls by `theta`. Controls returned are `theta alpha*`;
/// `theta = 0` gives `H = 0` and zero controls.
#[derive(Debug)]
pub struct ScaledHamiltonian<'a> {
    base: &'a dyn Hamiltonian,
    theta: f64,
}

impl<'a> ScaledHamiltonian<'a> {
    pub fn new(base: &'a dyn Hamiltonian, theta: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&theta) {
            return Err(MfgcError::param("theta", "0 ≤ theta ≤ 1"));
        }
        Ok(Self { base, theta })
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }
}

impl Hamiltonian for ScaledHamiltonian<'_> {
    fn dim(&self) -> usize {
        self.base.dim()
    }

    fn exponent(&self) -> f64 {
        self.base.exponent()
    }

    fn growth_constant(&self) -> f64 {
        self.base.growth_constant()
    }

    fn is_law_independent(&self) -> bool {
        self.theta == 0.0 || self.base.is_law_independent()
    }

    fn summarize(&self, m: &GridField, control: &GridField) -> Result<LawSummary> {
        if self.theta == 1.0 {
            self.base.summarize(m, control)
        } else if self.theta == 0.0 {
            self.base
                .summarize(m, &GridField::zeros(*control.grid(), control.components()))
        } else {
            self.base.summarize(m, &control.map(|v| v / self.theta))
        }
    }

    fn evaluate(
        &self,
        t: f64,
        x: &Vector,
        p: &Vector,
        s: &LawSummary,
        warm: Option<&Vector>,
    ) -> Result<HamiltonianValue> {
        if self.theta == 1.0 {
            return self.base.evaluate(t, x, p, s, warm);
        }
        if self.theta == 0.0 {
            return Ok(HamiltonianValue {
                value: 0.0,
                control: ZERO,
            });
        }
        let w = warm.map(|a| scale(1.0 / self.theta, a));
        let hv = self.base.evaluate(t, x, p, s, w.as_ref())?;
        Ok(HamiltonianValue {
            value: self.theta * hv.value,
            control: scale(self.theta, &hv.control),
        })
    }

    fn grad_x(&self, t: f64, x: &Vector, p: &Vector, s: &LawSummary) -> Result<Vector> {
        if self.theta == 0.0 {
            return Ok(ZERO);
        }
        Ok(scale(self.theta, &self.base.grad_x(t, x, p, s)?))
    }

    fn monotonicity_gap(
        &self,
        t: f64,
        law1: (&GridField, &GridField),
        law2: (&GridField, &GridField),
    ) -> Option<Result<f64>> {
        if self.theta == 0.0 {
            return Some(Ok(0.0));
        }
        let a1 = law1.1.map(|v| v / self.theta);
        let a2 = law2.1.map(|v| v / self.theta);
        self.base
            .monotonicity_gap(t, (law1.0, &a1), (law2.0, &a2))
            .map(|r| r.map(|g| self.theta * g))
    }
}

/// Evaluate `H` and `alpha*` at every node for the gradient field `p`.
///
/// Nodes are processed in fixed chunks; inside a chunk each node warm
/// starts from its predecessor. `warm` optionally seeds every node.
pub fn evaluate_field(
    ham: &dyn Hamiltonian,
    t: f64,
    time_index: usize,
    grid: &TorusGrid,
    p: &GridField,
    s: &LawSummary,
    warm: Option<&GridField>,
) -> Result<Vec<HamiltonianValue>> {
    grid.check_same(p.grid())?;
    let n = grid.num_nodes();
    let nodes: Vec<usize> = (0..n).collect();
    let chunks: Vec<Result<Vec<HamiltonianValue>>> = nodes
        .par_chunks(SWEEP_CHUNK)
        .map(|chunk| {
            let mut out = Vec::with_capacity(chunk.len());
            let mut prev: Option<Vector> = None;
            for &k in chunk {
                let seed = match warm {
                    Some(w) => Some(w.vector_at(k)),
                    None => prev,
                };
                let hv = ham.evaluate(t, &grid.coords(k), &p.vector_at(k), s, seed.as_ref())?;
                if !hv.value.is_finite() || !hv.control.iter().all(|c| c.is_finite()) {
                    return Err(MfgcError::NonFinite { time_index });
                }
                prev = Some(hv.control);
                out.push(hv);
            }
            Ok(out)
        })
        .collect();
    let mut all = Vec::with_capacity(n);
    for c in chunks {
        all.extend(c?);
    }
    Ok(all)
}

/// Pack the controls of a sweep into a `dim`-component field.
pub fn control_field(grid: &TorusGrid, values: &[HamiltonianValue]) -> Result<GridField> {
    let v: Vec<Vector> = values.iter().map(|h| h.control).collect();
    GridField::from_vectors(*grid, &v)
}
