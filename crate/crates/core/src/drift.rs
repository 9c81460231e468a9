//! Controlled drifts `b(alpha)` other than the identity.
//!
//! A drift is handled through its inverse `alpha*(b)`: the problem is solved
//! in the drift variable with the Lagrangian `L^b(b) = L(alpha*(b))`, and
//! the control law is recovered afterwards by pushing forward with `alpha*`.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::coupler::{ProblemSpec, SolveReport};
use crate::domain::{add, dot, gradient, norm, scale, support_threshold, GradientScheme, GridField, Vector, ZERO};
use crate::error::{MfgcError, Result};
use crate::fixed_point::ControlLaw;
use crate::legendre::{
    minimize_convex, ConvexObjective, Hamiltonian, HamiltonianEvaluator, HamiltonianValue,
    LegendreMode, NumericOptions, ScaledHamiltonian,
};
use crate::models::{Lagrangian, LawSummary, Matrix, SummarySpec};
use crate::pde::{fpk_defect, hjb_defect};

/// Law-independent drifts `b(alpha)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum DriftModel {
    Identity,
    /// `b_i = c_i alpha_i`.
    Linear { c: Vector },
    /// `b = alpha / (1 + |alpha|^2)^(s/2)`, `0 ≤ s < 1`.
    Saturating { s: f64 },
    /// `b = |alpha|^2 alpha`. Invertible, but `L^b` is not convex for
    /// quadratic `L`; kept so validation has something to reject.
    Cubic,
}

impl DriftModel {
    pub fn name(&self) -> &'static str {
        match self {
            DriftModel::Identity => "identity",
            DriftModel::Linear { .. } => "linear",
            DriftModel::Saturating { .. } => "saturating",
            DriftModel::Cubic => "cubic",
        }
    }

    /// Parameter checks for a drift acting on `dim` components.
    pub fn validate(&self, dim: usize) -> Result<()> {
        match *self {
            DriftModel::Linear { c } => {
                if c[..dim].iter().any(|v| !(v.is_finite() && v.abs() >= 1e-8)) {
                    return Err(MfgcError::param("drift.c", "|c_i| ≥ 1e-8 on every axis"));
                }
            }
            DriftModel::Saturating { s } => {
                if !(0.0..1.0).contains(&s) {
                    return Err(MfgcError::param("drift.s", "0 ≤ s < 1"));
                }
            }
            DriftModel::Identity | DriftModel::Cubic => {}
        }
        Ok(())
    }

    pub fn b(&self, alpha: &Vector) -> Vector {
        match *self {
            DriftModel::Identity => *alpha,
            DriftModel::Linear { c } => [c[0] * alpha[0], c[1] * alpha[1]],
            DriftModel::Saturating { s } => {
                scale((1.0 + dot(alpha, alpha)).powf(-0.5 * s), alpha)
            }
            DriftModel::Cubic => scale(dot(alpha, alpha), alpha),
        }
    }

    /// Inverse map `alpha*(b)`.
    pub fn alpha_star(&self, b: &Vector) -> Vector {
        match *self {
            DriftModel::Identity => *b,
            DriftModel::Linear { c } => [
                if c[0] != 0.0 { b[0] / c[0] } else { 0.0 },
                if c[1] != 0.0 { b[1] / c[1] } else { 0.0 },
            ],
            DriftModel::Saturating { s } => {
                let rho = norm(b);
                if rho == 0.0 {
                    return ZERO;
                }
                scale(saturating_radius(rho, s) / rho, b)
            }
            DriftModel::Cubic => {
                let rho = norm(b);
                if rho == 0.0 {
                    return ZERO;
                }
                scale(rho.cbrt() / rho, b)
            }
        }
    }

    /// `Db(alpha)`.
    pub fn jacobian(&self, alpha: &Vector) -> Matrix {
        match *self {
            DriftModel::Identity => [[1.0, 0.0], [0.0, 1.0]],
            DriftModel::Linear { c } => [[c[0], 0.0], [0.0, c[1]]],
            DriftModel::Saturating { s } => {
                let w = 1.0 + dot(alpha, alpha);
                let phi = w.powf(-0.5 * s);
                let k = -s * w.powf(-0.5 * s - 1.0);
                outer_plus(phi, k, alpha)
            }
            DriftModel::Cubic => outer_plus(dot(alpha, alpha), 2.0, alpha),
        }
    }

    /// Growth exponent `q0` with `|b| ≤ C(1 + |alpha|^q0)`.
    pub fn q0(&self) -> f64 {
        match *self {
            DriftModel::Identity | DriftModel::Linear { .. } => 1.0,
            DriftModel::Saturating { s } => 1.0 - s,
            DriftModel::Cubic => 3.0,
        }
    }

    /// Constant used with `q0` in the growth bounds.
    pub fn growth_constant(&self) -> f64 {
        match *self {
            DriftModel::Identity | DriftModel::Cubic => 1.0,
            DriftModel::Linear { c } => {
                let hi = c[0].abs().max(c[1].abs());
                let lo = c[0].abs().min(if c[1] == 0.0 { c[0].abs() } else { c[1].abs() });
                hi.max(1.0 / lo)
            }
            DriftModel::Saturating { .. } => 2.0,
        }
    }
}

fn outer_plus(diag: f64, k: f64, a: &Vector) -> Matrix {
    [
        [diag + k * a[0] * a[0], k * a[0] * a[1]],
        [k * a[1] * a[0], diag + k * a[1] * a[1]],
    ]
}

/// Solve `r (1 + r^2)^(-s/2) = rho` for `r ≥ 0`; the profile is increasing.
fn saturating_radius(rho: f64, s: f64) -> f64 {
    let f = |r: f64| r * (1.0 + r * r).powf(-0.5 * s) - rho;
    let mut hi = rho.max(1.0);
    while f(hi) < 0.0 {
        hi *= 2.0;
    }
    let mut lo = 0.0;
    let mut r = rho;
    for _ in 0..200 {
        let w = 1.0 + r * r;
        let fr = f(r);
        if fr == 0.0 {
            return r;
        }
        if fr < 0.0 {
            lo = r;
        } else {
            hi = r;
        }
        let slope = w.powf(-0.5 * s - 1.0) * (1.0 + (1.0 - s) * r * r);
        let newton = r - fr / slope;
        let next = if newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
        if (next - r).abs() <= 4.0 * f64::EPSILON * r.max(1e-300) {
            return next;
        }
        r = next;
    }
    r
}

fn inverse_transpose_apply(j: &Matrix, v: &Vector, dim: usize) -> Vector {
    if dim == 1 {
        return [v[0] / j[0][0], 0.0];
    }
    // solve J^T y = v
    let det = j[0][0] * j[1][1] - j[0][1] * j[1][0];
    [
        (j[1][1] * v[0] - j[1][0] * v[1]) / det,
        (-j[0][1] * v[0] + j[0][0] * v[1]) / det,
    ]
}

fn fd_hessian(grad: impl Fn(&Vector) -> Vector, a: &Vector, dim: usize) -> Matrix {
    let mut h = [[0.0; 2]; 2];
    for j in 0..dim {
        let step = 1e-6 * norm(a).max(1.0);
        let mut up = *a;
        let mut dn = *a;
        up[j] += step;
        dn[j] -= step;
        let gu = grad(&up);
        let gd = grad(&dn);
        for i in 0..dim {
            h[i][j] = (gu[i] - gd[i]) / (2.0 * step);
        }
    }
    if dim == 2 {
        let off = 0.5 * (h[0][1] + h[1][0]);
        h[0][1] = off;
        h[1][0] = off;
    }
    h
}

/// `L^b(t, x, b, s) = L(t, x, alpha*(b), s)`, where `s` summarizes the
/// control law in `alpha` variables.
#[derive(Debug)]
pub struct TransformedLagrangian {
    base: Arc<dyn Lagrangian>,
    drift: DriftModel,
}

impl TransformedLagrangian {
    pub fn new(base: Arc<dyn Lagrangian>, drift: DriftModel) -> Result<Self> {
        drift.validate(base.dim())?;
        Ok(Self { base, drift })
    }

    pub fn drift(&self) -> &DriftModel {
        &self.drift
    }
}

impl Lagrangian for TransformedLagrangian {
    fn name(&self) -> &'static str {
        "transformed"
    }

    fn dim(&self) -> usize {
        self.base.dim()
    }

    fn exponent(&self) -> f64 {
        self.base.exponent()
    }

    fn growth_constant(&self) -> f64 {
        self.base.growth_constant()
    }

    fn summary_spec(&self) -> &SummarySpec {
        self.base.summary_spec()
    }

    fn value(&self, t: f64, x: &Vector, b: &Vector, s: &LawSummary) -> f64 {
        self.base.value(t, x, &self.drift.alpha_star(b), s)
    }

    fn value_difference(
        &self,
        t: f64,
        x: &Vector,
        b: &Vector,
        s1: &LawSummary,
        s2: &LawSummary,
    ) -> f64 {
        self.base.value_difference(t, x, &self.drift.alpha_star(b), s1, s2)
    }

    fn grad_alpha(&self, t: f64, x: &Vector, b: &Vector, s: &LawSummary) -> Vector {
        let a = self.drift.alpha_star(b);
        let g = self.base.grad_alpha(t, x, &a, s);
        inverse_transpose_apply(&self.drift.jacobian(&a), &g, self.dim())
    }

    fn hess_alpha(&self, t: f64, x: &Vector, b: &Vector, s: &LawSummary) -> Matrix {
        fd_hessian(|v| self.grad_alpha(t, x, v, s), b, self.dim())
    }

    fn grad_x(&self, t: f64, x: &Vector, b: &Vector, s: &LawSummary) -> Vector {
        self.base.grad_x(t, x, &self.drift.alpha_star(b), s)
    }

    fn conjugate(&self, t: f64, x: &Vector, p: &Vector, s: &LawSummary) -> Option<(f64, Vector)> {
        match self.drift {
            DriftModel::Identity => self.base.conjugate(t, x, p, s),
            DriftModel::Linear { c } => {
                let (h, a) = self.base.conjugate(t, x, &[c[0] * p[0], c[1] * p[1]], s)?;
                Some((h, self.drift.b(&a)))
            }
            _ => None,
        }
    }
}

/// `H^b(t, x, p, mu_b)`: the conjugate of `L^b`, with law summaries taken
/// on the pushforward of `mu_b` by `alpha*`.
#[derive(Debug)]
pub struct TransformedHamiltonian {
    base: HamiltonianEvaluator,
    numeric: Option<HamiltonianEvaluator>,
    drift: DriftModel,
}

impl TransformedHamiltonian {
    /// Fails when the drift is invalid or `L^b` is not convex on the sample lattice.
    pub fn new(model: Arc<dyn Lagrangian>, mode: LegendreMode, drift: DriftModel) -> Result<Self> {
        drift.validate(model.dim())?;
        let base = HamiltonianEvaluator::new(model.clone(), mode)?;
        let numeric = match drift {
            DriftModel::Identity | DriftModel::Linear { .. } => None,
            _ => {
                let transformed = TransformedLagrangian::new(model, drift)?;
                let report = drift_audit(&transformed, &SampleLattice::default());
                if !report.convex {
                    return Err(MfgcError::Drift(format!(
                        "L^b is not convex for the {} drift (midpoint defect {:e})",
                        drift.name(),
                        report.convexity_defect
                    )));
                }
                Some(
                    HamiltonianEvaluator::new(Arc::new(transformed), LegendreMode::Numeric)?
                        .with_options(*base.options()),
                )
            }
        };
        Ok(Self {
            base,
            numeric,
            drift,
        })
    }

    pub fn drift(&self) -> &DriftModel {
        &self.drift
    }

    pub fn base(&self) -> &HamiltonianEvaluator {
        &self.base
    }

    fn to_alpha(&self, b: &GridField) -> Result<GridField> {
        if self.drift == DriftModel::Identity {
            return Ok(b.clone());
        }
        let a: Vec<Vector> = b.vectors().iter().map(|v| self.drift.alpha_star(v)).collect();
        let mut out = GridField::from_vectors(*b.grid(), &a)?;
        if let Some(n) = b.time_index() {
            out = out.with_time_index(n);
        }
        Ok(out)
    }
}

impl Hamiltonian for TransformedHamiltonian {
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
        self.base.is_law_independent()
    }

    fn summarize(&self, m: &GridField, control: &GridField) -> Result<LawSummary> {
        self.base.summarize(m, &self.to_alpha(control)?)
    }

    fn evaluate(
        &self,
        t: f64,
        x: &Vector,
        p: &Vector,
        s: &LawSummary,
        warm: Option<&Vector>,
    ) -> Result<HamiltonianValue> {
        match (self.drift, &self.numeric) {
            (DriftModel::Identity, _) => self.base.evaluate(t, x, p, s, warm),
            (DriftModel::Linear { c }, _) => {
                let cp = [c[0] * p[0], c[1] * p[1]];
                let w = warm.map(|b| self.drift.alpha_star(b));
                let hv = self.base.evaluate(t, x, &cp, s, w.as_ref())?;
                Ok(HamiltonianValue {
                    value: hv.value,
                    control: self.drift.b(&hv.control),
                })
            }
            (_, Some(numeric)) => numeric.evaluate(t, x, p, s, warm),
            (_, None) => unreachable!("numeric evaluator is built for nonlinear drifts"),
        }
    }

    fn grad_x(&self, t: f64, x: &Vector, p: &Vector, s: &LawSummary) -> Result<Vector> {
        match (self.drift, &self.numeric) {
            (DriftModel::Identity, _) => Hamiltonian::grad_x(&self.base, t, x, p, s),
            (DriftModel::Linear { c }, _) => {
                Hamiltonian::grad_x(&self.base, t, x, &[c[0] * p[0], c[1] * p[1]], s)
            }
            (_, Some(numeric)) => Hamiltonian::grad_x(numeric, t, x, p, s),
            (_, None) => unreachable!("numeric evaluator is built for nonlinear drifts"),
        }
    }

    fn monotonicity_gap(
        &self,
        t: f64,
        law1: (&GridField, &GridField),
        law2: (&GridField, &GridField),
    ) -> Option<Result<f64>> {
        let a1 = match self.to_alpha(law1.1) {
            Ok(a) => a,
            Err(e) => return Some(Err(e)),
        };
        let a2 = match self.to_alpha(law2.1) {
            Ok(a) => a,
            Err(e) => return Some(Err(e)),
        };
        self.base.monotonicity_gap(t, (law1.0, &a1), (law2.0, &a2))
    }
}

/// Control law in `alpha` variables from a law in drift variables.
pub fn recover_control_law(ham: &TransformedHamiltonian, law_b: &ControlLaw) -> Result<ControlLaw> {
    let alpha = ham.to_alpha(law_b.control())?;
    ControlLaw::new(&ham.base, law_b.density().clone(), alpha)
}

/// Law in drift variables from a control law: `b = b(alpha)` nodewise.
pub fn push_control_law(ham: &TransformedHamiltonian, law: &ControlLaw) -> Result<ControlLaw> {
    let b: Vec<Vector> = law.control().vectors().iter().map(|a| ham.drift.b(a)).collect();
    let mut field = GridField::from_vectors(*law.control().grid(), &b)?;
    if let Some(n) = law.control().time_index() {
        field = field.with_time_index(n);
    }
    ControlLaw::new(ham, law.density().clone(), field)
}

/// `alpha -> L(alpha) + p.b(alpha)`; minimized without going through `alpha*`.
struct DirectObjective<'a> {
    model: &'a dyn Lagrangian,
    drift: DriftModel,
    t: f64,
    x: Vector,
    p: Vector,
    summary: &'a LawSummary,
}

impl DirectObjective<'_> {
    fn grad(&self, a: &Vector) -> Vector {
        let g = self.model.grad_alpha(self.t, &self.x, a, self.summary);
        let j = self.drift.jacobian(a);
        let jt_p = [
            j[0][0] * self.p[0] + j[1][0] * self.p[1],
            j[0][1] * self.p[0] + j[1][1] * self.p[1],
        ];
        let mut out = add(&g, &jt_p);
        for slot in out.iter_mut().skip(self.model.dim()) {
            *slot = 0.0;
        }
        out
    }
}

impl ConvexObjective for DirectObjective<'_> {
    fn dim(&self) -> usize {
        self.model.dim()
    }

    fn value(&self, a: &Vector) -> f64 {
        self.model.value(self.t, &self.x, a, self.summary) + dot(&self.p, &self.drift.b(a))
    }

    fn gradient(&self, a: &Vector) -> Vector {
        self.grad(a)
    }

    fn hessian(&self, a: &Vector) -> Matrix {
        fd_hessian(|v| self.grad(v), a, self.model.dim())
    }
}

/// `H^b` computed over controls: `sup_alpha -p.b(alpha) - L(alpha)`.
/// Returns the value and the optimal control `alpha` (not the drift).
#[allow(clippy::too_many_arguments)]
pub fn direct_transformed_hamiltonian(
    model: &dyn Lagrangian,
    drift: &DriftModel,
    t: f64,
    x: &Vector,
    p: &Vector,
    s: &LawSummary,
    warm: Option<&Vector>,
    opts: &NumericOptions,
) -> Result<HamiltonianValue> {
    let obj = DirectObjective {
        model,
        drift: *drift,
        t,
        x: *x,
        p: *p,
        summary: s,
    };
    let min = minimize_convex(&obj, warm.copied().unwrap_or(ZERO), opts)?;
    Ok(HamiltonianValue {
        value: -min.value,
        control: min.point,
    })
}

/// `H^b` over controls, as a solver-facing Hamiltonian in drift variables.
#[derive(Debug)]
struct DirectDriftHamiltonian {
    base: HamiltonianEvaluator,
    drift: DriftModel,
}

impl Hamiltonian for DirectDriftHamiltonian {
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
        self.base.is_law_independent()
    }

    fn summarize(&self, m: &GridField, control: &GridField) -> Result<LawSummary> {
        let a: Vec<Vector> = control.vectors().iter().map(|v| self.drift.alpha_star(v)).collect();
        self.base.summarize(m, &GridField::from_vectors(*m.grid(), &a)?)
    }

    fn evaluate(
        &self,
        t: f64,
        x: &Vector,
        p: &Vector,
        s: &LawSummary,
        warm: Option<&Vector>,
    ) -> Result<HamiltonianValue> {
        let w = warm.map(|b| self.drift.alpha_star(b));
        let hv = direct_transformed_hamiltonian(
            self.base.model().as_ref(),
            &self.drift,
            t,
            x,
            p,
            s,
            w.as_ref(),
            self.base.options(),
        )?;
        Ok(HamiltonianValue {
            value: hv.value,
            control: self.drift.b(&hv.control),
        })
    }

    fn grad_x(&self, t: f64, x: &Vector, p: &Vector, s: &LawSummary) -> Result<Vector> {
        let hv = self.evaluate(t, x, p, s, None)?;
        let a = self.drift.alpha_star(&hv.control);
        Ok(scale(-1.0, &self.base.model().grad_x(t, x, &a, s)))
    }
}

/// Residuals of the drift formulation rebuilt from a solution in drift variables.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct EquivalenceReport {
    /// HJB defect with `H^b` evaluated over controls.
    pub hjb: f64,
    /// FPK defect with drift `b(alpha)`, `alpha` recovered by `alpha*`.
    pub fpk: f64,
    /// `|alpha - argmin_alpha (L + p.b)|` on supports.
    pub mu_alpha: f64,
    /// `|b~ - b(argmin_alpha (L + p.b))|` on supports.
    pub mu_b: f64,
}

impl EquivalenceReport {
    pub fn max(&self) -> f64 {
        self.hjb.max(self.fpk).max(self.mu_alpha).max(self.mu_b)
    }
}

/// Rebuild `(u, m, mu_alpha, mu_b)` from a report solved with `H^b` and
/// evaluate the drift-formulation residuals with `model` and `drift`
/// directly. Passing a perturbed `drift` measures sensitivity.
pub fn equivalence_check(
    problem: &ProblemSpec,
    report: &SolveReport,
    model: Arc<dyn Lagrangian>,
    mode: LegendreMode,
    drift: &DriftModel,
) -> Result<EquivalenceReport> {
    let sol = &report.solution;
    if sol.theta != 1.0 {
        return Err(MfgcError::param("theta", "report solved up to theta = 1"));
    }
    drift.validate(model.dim())?;
    let base = HamiltonianEvaluator::new(model, mode)?;
    let direct = DirectDriftHamiltonian {
        base: base.clone(),
        drift: *drift,
    };
    let ham = ScaledHamiltonian::new(&direct, 1.0)?;
    let grid = problem.grid;
    let steps = problem.time.steps();
    let dt = problem.time.dt();
    let cut = support_threshold(&grid);
    let opts = crate::pde::HjbOptions::default();

    let mut out = EquivalenceReport {
        hjb: 0.0,
        fpk: 0.0,
        mu_alpha: 0.0,
        mu_b: 0.0,
    };
    let mut laws = Vec::with_capacity(steps + 1);
    for law_b in &sol.laws {
        let summary = direct.summarize(law_b.density(), law_b.control())?;
        laws.push(ControlLaw::from_parts(
            law_b.density().clone(),
            law_b.control().clone(),
            summary,
        ));
    }
    for n in 0..=steps {
        let t = problem.time.time(n);
        let law = &laws[n];
        let p = gradient(&sol.u[n], GradientScheme::Central)?;
        let mut drift_field = Vec::with_capacity(grid.num_nodes());
        for k in 0..grid.num_nodes() {
            let b_node = law.control().vector_at(k);
            let a_node = drift.alpha_star(&b_node);
            drift_field.push(drift.b(&a_node));
            if law.density().values()[k] <= cut {
                continue;
            }
            let x = grid.coords(k);
            let best = direct_transformed_hamiltonian(
                base.model().as_ref(),
                drift,
                t,
                &x,
                &p.vector_at(k),
                law.summary(),
                Some(&a_node),
                base.options(),
            )?;
            let da = norm(&crate::domain::sub(&a_node, &best.control));
            let db = norm(&crate::domain::sub(&b_node, &drift.b(&best.control)));
            out.mu_alpha = out.mu_alpha.max(da);
            out.mu_b = out.mu_b.max(db);
        }
        if n < steps {
            let source = problem.running.evaluate(t, sol.m.slice(n))?;
            out.hjb = out.hjb.max(hjb_defect(
                &sol.u[n],
                &sol.u[n + 1],
                law,
                &source,
                &ham,
                t,
                n,
                problem.nu,
                dt,
                &opts,
            )?);
            let b_field = GridField::from_vectors(grid, &drift_field)?;
            out.fpk = out
                .fpk
                .max(fpk_defect(sol.m.slice(n), sol.m.slice(n + 1), &b_field, problem.nu, dt)?);
        }
    }
    let g = problem.terminal.evaluate(problem.time.horizon(), sol.m.slice(steps))?;
    out.hjb = out.hjb.max(sol.u[steps].distance_sup(&g)?);
    Ok(out)
}

/// Sample points used by the drift audits.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleLattice {
    pub radii: Vec<f64>,
    pub directions: usize,
}

impl Default for SampleLattice {
    fn default() -> Self {
        Self {
            radii: vec![0.0, 0.05, 0.3, 0.7, 1.0, 1.5, 2.5, 4.0, 7.0, 10.0],
            directions: 8,
        }
    }
}

impl SampleLattice {
    pub fn points(&self, dim: usize) -> Vec<Vector> {
        let mut pts = Vec::new();
        for &r in &self.radii {
            if dim == 1 {
                pts.push([r, 0.0]);
                if r > 0.0 {
                    pts.push([-r, 0.0]);
                }
            } else {
                for k in 0..self.directions.max(1) {
                    let phi = 2.0 * std::f64::consts::PI * k as f64 / self.directions.max(1) as f64;
                    pts.push([r * phi.cos(), r * phi.sin()]);
                    if r == 0.0 {
                        break;
                    }
                }
            }
        }
        pts
    }
}

/// Round-trip, growth and convexity checks for a drift on a sample lattice.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DriftAudit {
    pub drift: &'static str,
    /// `max |b(alpha*(b)) - b|`.
    pub round_trip: f64,
    /// `max |alpha*(b(alpha)) - alpha|`.
    pub reverse_round_trip: f64,
    pub q0: f64,
    /// Worst slack of `|b| ≤ C(1 + |alpha|^q0)` and `|alpha*|^q0 ≤ C(1 + |b|)`.
    pub growth_margin: f64,
    /// Largest midpoint-convexity violation of `L^b`.
    pub convexity_defect: f64,
    pub q0_within_exponent: bool,
    pub convex: bool,
    pub passed: bool,
}

/// Audit `L^b` built from a base Lagrangian and a drift.
pub fn drift_audit(lb: &TransformedLagrangian, lattice: &SampleLattice) -> DriftAudit {
    let dim = lb.dim();
    let drift = lb.drift;
    let pts = lattice.points(dim);
    let c = drift.growth_constant();
    let q0 = drift.q0();
    let mut round_trip: f64 = 0.0;
    let mut reverse: f64 = 0.0;
    let mut margin = f64::INFINITY;
    for v in &pts {
        let rt = drift.b(&drift.alpha_star(v));
        round_trip = round_trip.max(norm(&crate::domain::sub(&rt, v)) / norm(v).max(1.0));
        let rr = drift.alpha_star(&drift.b(v));
        reverse = reverse.max(norm(&crate::domain::sub(&rr, v)) / norm(v).max(1.0));
        margin = margin.min(c * (1.0 + norm(v).powf(q0)) - norm(&drift.b(v)));
        margin = margin.min(c * (1.0 + norm(v)) - norm(&drift.alpha_star(v)).powf(q0));
    }
    let s = LawSummary::neutral(lb.summary_kind());
    let x = ZERO;
    let mut defect: f64 = 0.0;
    for (i, a) in pts.iter().enumerate() {
        for b in pts.iter().skip(i + 1) {
            let mid = scale(0.5, &add(a, b));
            let lhs = lb.value(0.0, &x, &mid, &s);
            let rhs = 0.5 * (lb.value(0.0, &x, a, &s) + lb.value(0.0, &x, b, &s));
            defect = defect.max((lhs - rhs) / rhs.abs().max(1.0));
        }
    }
    let convex = defect <= 1e-10;
    let within = q0 <= lb.exponent();
    DriftAudit {
        drift: drift.name(),
        round_trip,
        reverse_round_trip: reverse,
        q0,
        growth_margin: margin,
        convexity_defect: defect,
        q0_within_exponent: within,
        convex,
        passed: round_trip <= 1e-8 && reverse <= 1e-8 && margin >= 0.0 && convex && within,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::PowerLagrangian;

    #[test]
    fn saturating_inverse_round_trips() {
        let d = DriftModel::Saturating { s: 0.5 };
        for r in [1e-9, 0.1, 1.0, 3.0, 50.0, 1e4] {
            let a = [r * 0.6, -r * 0.8];
            let back = d.alpha_star(&d.b(&a));
            assert!(norm(&crate::domain::sub(&back, &a)) <= 1e-12 * r.max(1.0), "{r}");
        }
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        for d in [
            DriftModel::Saturating { s: 0.7 },
            DriftModel::Cubic,
            DriftModel::Linear { c: [2.0, -0.5] },
        ] {
            let a = [0.4, -1.3];
            let j = d.jacobian(&a);
            for col in 0..2 {
                let mut up = a;
                let mut dn = a;
                up[col] += 1e-6;
                dn[col] -= 1e-6;
                for row in 0..2 {
                    let fd = (d.b(&up)[row] - d.b(&dn)[row]) / 2e-6;
                    assert!((fd - j[row][col]).abs() < 1e-7, "{d:?}");
                }
            }
        }
    }

    #[test]
    fn cubic_drift_is_rejected_on_quadratic_model() {
        let model: Arc<dyn Lagrangian> = Arc::new(PowerLagrangian::quadratic(1));
        let err = TransformedHamiltonian::new(model, LegendreMode::ClosedForm, DriftModel::Cubic)
            .unwrap_err();
        assert!(matches!(err, MfgcError::Drift(_)));
    }

    #[test]
    fn saturating_lb_on_quadratic_passes_audit() {
        let model: Arc<dyn Lagrangian> = Arc::new(PowerLagrangian::quadratic(2));
        let lb = TransformedLagrangian::new(model, DriftModel::Saturating { s: 0.5 }).unwrap();
        let a = drift_audit(&lb, &SampleLattice::default());
        assert!(a.passed, "{a:?}");
    }
}
