//! Per-time fixed point `mu = (Id, -H_p(t, ., p, mu))#m` on graph measures.
//!
//! Solved by damped Picard iteration on the control field, with a bracketed
//! root solve on the statistic as fallback in 1D. Convergence is measured in
//! sup norm over the numerical support of `m`.

use serde::Serialize;

use crate::domain::{norm, support_threshold, GridField, Vector, ZERO};
use crate::error::{MfgcError, Result};
use crate::legendre::{control_field, evaluate_field, Hamiltonian};
use crate::models::{conjugate_exponent, LawSummary, SummaryKind};

/// Graph measure `(Id, control)#density` with its cached summary.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ControlLaw {
    density: GridField,
    control: GridField,
    summary: LawSummary,
}

impl ControlLaw {
    pub fn new(ham: &dyn Hamiltonian, density: GridField, control: GridField) -> Result<Self> {
        let summary = ham.summarize(&density, &control)?;
        Ok(Self {
            density,
            control,
            summary,
        })
    }

    pub(crate) fn from_parts(density: GridField, control: GridField, summary: LawSummary) -> Self {
        Self {
            density,
            control,
            summary,
        }
    }

    pub fn density(&self) -> &GridField {
        &self.density
    }

    pub fn control(&self) -> &GridField {
        &self.control
    }

    pub fn summary(&self) -> &LawSummary {
        &self.summary
    }

    pub fn into_parts(self) -> (GridField, GridField, LawSummary) {
        (self.density, self.control, self.summary)
    }
}

/// `Lambda_q(mu)`: `L^q(m)` norm of `|alpha|`, sup over the support for `q = inf`.
pub fn lambda_moment(law: &ControlLaw, q: f64) -> f64 {
    let grid = law.density.grid();
    let floor = support_threshold(grid);
    let m = law.density.values();
    if q.is_infinite() {
        return (0..grid.num_nodes())
            .filter(|&k| m[k] > floor)
            .map(|k| norm(&law.control.vector_at(k)))
            .fold(0.0, f64::max);
    }
    let s: f64 = (0..grid.num_nodes())
        .map(|k| norm(&law.control.vector_at(k)).powf(q) * m[k])
        .sum();
    (s * grid.cell_volume()).max(0.0).powf(1.0 / q)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct FixedPointOptions {
    /// Picard damping `omega` in `(0, 1]`.
    pub damping: f64,
    /// Sup-norm tolerance on the control change.
    pub tolerance: f64,
    pub max_iterations: usize,
    /// Damping halvings allowed when the residual grows.
    pub max_halvings: usize,
    /// In 1D, retry a failed Picard run by bisection on the summary payload.
    pub payload_fallback: bool,
}

impl Default for FixedPointOptions {
    fn default() -> Self {
        Self {
            damping: 0.5,
            tolerance: 1e-12,
            max_iterations: 500,
            max_halvings: 4,
            payload_fallback: true,
        }
    }
}

impl FixedPointOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.damping > 0.0 && self.damping <= 1.0) {
            return Err(MfgcError::param("inner_damping", "0 < inner_damping ≤ 1"));
        }
        if !(self.tolerance > 0.0) {
            return Err(MfgcError::param("inner_tolerance", "inner_tolerance > 0"));
        }
        if self.max_iterations == 0 {
            return Err(MfgcError::param("inner_max_iterations", "inner_max_iterations ≥ 1"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FixedPointStats {
    pub iterations: usize,
    pub residual: f64,
    pub history: Vec<f64>,
    pub final_damping: f64,
}

fn support_distance(m: &GridField, a: &GridField, b: &GridField) -> f64 {
    let grid = m.grid();
    let floor = support_threshold(grid);
    let mv = m.values();
    (0..grid.num_nodes())
        .filter(|&k| mv[k] > floor)
        .map(|k| {
            let x = a.vector_at(k);
            let y = b.vector_at(k);
            norm(&[x[0] - y[0], x[1] - y[1]])
        })
        .fold(0.0, f64::max)
}

/// Best response `-H_p(t, ., p, s)` at every node.
pub fn best_response(
    ham: &dyn Hamiltonian,
    t: f64,
    time_index: usize,
    p: &GridField,
    s: &LawSummary,
    warm: Option<&GridField>,
) -> Result<GridField> {
    let grid = *p.grid();
    let vals = evaluate_field(ham, t, time_index, &grid, p, s, warm)?;
    control_field(&grid, &vals)
}

/// Solve the control fixed point at time `t` for gradient field `p` and density `m`.
///
/// `init` is the starting control (zero when `None`).
pub fn solve_mu(
    t: f64,
    time_index: usize,
    p: &GridField,
    m: &GridField,
    ham: &dyn Hamiltonian,
    opts: &FixedPointOptions,
    init: Option<&GridField>,
) -> Result<(ControlLaw, FixedPointStats)> {
    opts.validate()?;
    let grid = *m.grid();
    grid.check_same(p.grid())?;
    if p.components() != grid.dim() {
        return Err(MfgcError::Shape(format!(
            "p field needs {} components, got {}",
            grid.dim(),
            p.components()
        )));
    }
    let mut alpha = match init {
        Some(a) => {
            grid.check_same(a.grid())?;
            a.clone()
        }
        None => GridField::zeros(grid, grid.dim()),
    };
    let mut summary = ham.summarize(m, &alpha)?;
    let mut omega = opts.damping;
    let mut halvings = 0;
    let mut history = Vec::new();
    for k in 0..opts.max_iterations {
        let warm = if k == 0 && init.is_none() {
            None
        } else {
            Some(&alpha)
        };
        let target = best_response(ham, t, time_index, p, &summary, warm)?;
        let residual = support_distance(m, &target, &alpha);
        history.push(residual);
        let target_summary = ham.summarize(m, &target)?;
        if target_summary.payload() == summary.payload() {
            let law = ControlLaw::from_parts(m.clone(), target, target_summary);
            return Ok((
                law,
                FixedPointStats {
                    iterations: k + 1,
                    residual: 0.0,
                    history,
                    final_damping: omega,
                },
            ));
        }
        if residual <= opts.tolerance {
            let law = ControlLaw::from_parts(m.clone(), alpha, summary);
            return Ok((
                law,
                FixedPointStats {
                    iterations: k + 1,
                    residual,
                    history,
                    final_damping: omega,
                },
            ));
        }
        if k > 0 && residual > history[k - 1] && halvings < opts.max_halvings {
            omega *= 0.5;
            halvings += 1;
        }
        alpha = alpha.axpy(omega, &target.axpy(-1.0, &alpha)?)?;
        summary = ham.summarize(m, &alpha)?;
    }
    if opts.payload_fallback && grid.dim() == 1 && summary.kind != SummaryKind::Independent {
        if let Some(found) = payload_root(t, time_index, p, m, ham, &summary, &alpha, &mut history)? {
            return Ok(found);
        }
    }
    Err(MfgcError::FixedPoint {
        iterations: opts.max_iterations,
        last: history.last().copied().unwrap_or(f64::INFINITY),
        history,
    })
}

/// Fallback for a scalar statistic: bracket and bisect `G(s) = s - F(s)`,
/// where `F(s)` is the statistic of the best response to `s`.
///
/// For monotone models `F` is nonincreasing, so `G` has slope at least one
/// and `[s0 - G(s0), s0]` (or its mirror) brackets the root. Returns `None`
/// when the bracket fails, i.e. the model is not monotone near `s0`.
#[allow(clippy::too_many_arguments)]
fn payload_root(
    t: f64,
    time_index: usize,
    p: &GridField,
    m: &GridField,
    ham: &dyn Hamiltonian,
    start: &LawSummary,
    warm: &GridField,
    history: &mut Vec<f64>,
) -> Result<Option<(ControlLaw, FixedPointStats)>> {
    let eval = |s: f64| -> Result<(f64, GridField, LawSummary)> {
        let trial = start.with_payload([s, 0.0]);
        let a = best_response(ham, t, time_index, p, &trial, Some(warm))?;
        let next = ham.summarize(m, &a)?;
        Ok((s - next.payload()[0], a, next))
    };
    let s0 = start.payload()[0];
    let (g0, _, _) = eval(s0)?;
    let (mut lo, mut hi) = if g0 > 0.0 { (s0 - g0, s0) } else { (s0, s0 - g0) };
    if g0 != 0.0 {
        let (g_lo, _, _) = eval(lo)?;
        let (g_hi, _, _) = eval(hi)?;
        if g_lo > 0.0 || g_hi < 0.0 {
            return Ok(None);
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let (g, _, _) = eval(mid)?;
        if g == 0.0 {
            lo = mid;
            hi = mid;
            break;
        }
        if g < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let (g_lo, a_lo, s_lo) = eval(lo)?;
    let (g_hi, a_hi, s_hi) = eval(hi)?;
    let (a, s) = if g_lo.abs() <= g_hi.abs() { (a_lo, s_lo) } else { (a_hi, s_hi) };
    let target = best_response(ham, t, time_index, p, &s, Some(&a))?;
    history.push(support_distance(m, &target, &a));
    Ok(Some(finish(m, a, s, history)))
}

fn finish(
    m: &GridField,
    alpha: GridField,
    summary: LawSummary,
    history: &mut Vec<f64>,
) -> (ControlLaw, FixedPointStats) {
    let residual = history.last().copied().unwrap_or(0.0);
    (
        ControlLaw::from_parts(m.clone(), alpha, summary),
        FixedPointStats {
            iterations: history.len(),
            residual,
            history: std::mem::take(history),
            final_damping: 0.0,
        },
    )
}

/// Sup-norm defect `|alpha + H_p(t, ., p, summary(alpha))|` on the support.
pub fn fixed_point_residual(
    ham: &dyn Hamiltonian,
    t: f64,
    time_index: usize,
    p: &GridField,
    law: &ControlLaw,
) -> Result<f64> {
    let s = ham.summarize(&law.density, &law.control)?;
    let target = best_response(ham, t, time_index, p, &s, Some(&law.control))?;
    Ok(support_distance(&law.density, &target, &law.control))
}

/// Margins of the a priori control bounds; positive means satisfied.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct AprioriReport {
    pub moment_power: f64,
    pub moment_bound: f64,
    pub sup: f64,
    pub sup_bound: f64,
    pub moment_margin: f64,
    pub sup_margin: f64,
    pub holds: bool,
}

/// Check `Lambda_{q'}^{q'} <= 4 C0^2 + (q')^{q-1} (2 C0)^q / q |p|_{L^q(m)}^q`
/// and `Lambda_inf <= C0 (1 + |p|_inf + Lambda_{q'})`.
pub fn apriori_check(law: &ControlLaw, p: &GridField, c0: f64, q_prime: f64) -> AprioriReport {
    let q = conjugate_exponent(q_prime);
    let grid = law.density.grid();
    let floor = support_threshold(grid);
    let m = law.density.values();
    let mut p_q = 0.0;
    let mut p_inf: f64 = 0.0;
    for k in 0..grid.num_nodes() {
        let n = norm(&p.vector_at(k));
        p_q += n.powf(q) * m[k];
        if m[k] > floor {
            p_inf = p_inf.max(n);
        }
    }
    p_q *= grid.cell_volume();
    let lq = lambda_moment(law, q_prime);
    let moment_power = lq.powf(q_prime);
    let moment_bound =
        4.0 * c0 * c0 + q_prime.powf(q - 1.0) * (2.0 * c0).powf(q) / q * p_q;
    let sup = lambda_moment(law, f64::INFINITY);
    let sup_bound = c0 * (1.0 + p_inf + lq);
    AprioriReport {
        moment_power,
        moment_bound,
        sup,
        sup_bound,
        moment_margin: moment_bound - moment_power,
        sup_margin: sup_bound - sup,
        holds: moment_power <= moment_bound && sup <= sup_bound,
    }
}

/// Closed-form summary solves used as independent test answers.
pub mod oracle {
    use super::*;
    use crate::models::{CrowdMotion, ExhaustibleLinear};

    /// Mean control of the exhaustible linear model for gradient field `p`.
    pub fn exhaustible_mean_control(model: &ExhaustibleLinear, p: &GridField, m: &GridField) -> f64 {
        let vol = m.grid().cell_volume();
        let g: f64 = p.values().iter().zip(m.values()).map(|(a, b)| a * b).sum::<f64>() * vol;
        let mass: f64 = m.values().iter().sum::<f64>() * vol;
        model.mean_control_oracle(g, mass)
    }

    /// Weighted mean `V` of the quadratic crowd model (`a' = 2`).
    pub fn crowd_weighted_mean(
        model: &CrowdMotion,
        p: &GridField,
        m: &GridField,
        kernel: &GridField,
        q1: f64,
    ) -> Vector {
        let grid = m.grid();
        let vol = grid.cell_volume();
        let d = grid.dim();
        let mv = m.values();
        let kv = kernel.values();
        let mut pk = ZERO;
        let mut k_mass = 0.0;
        for k in 0..grid.num_nodes() {
            let w = kv[k] * mv[k];
            k_mass += w;
            for j in 0..d {
                pk[j] += p.values()[k * d + j] * w;
            }
        }
        let pk = [pk[0] * vol, pk[1] * vol];
        k_mass *= vol;
        let z = if q1.is_infinite() {
            let floor = support_threshold(grid);
            (0..grid.num_nodes())
                .filter(|&k| mv[k] > floor)
                .map(|k| kv[k])
                .fold(0.0, f64::max)
        } else {
            let s: f64 = (0..grid.num_nodes()).map(|k| kv[k].powf(q1) * mv[k]).sum();
            (s * vol).powf(1.0 / q1)
        };
        model.weighted_mean_oracle(&pk, k_mass, z)
    }
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::domain::{gradient, GradientScheme, TorusGrid};
    use crate::legendre::{HamiltonianEvaluator, LegendreMode};
    use crate::models::{CrowdKernel, CrowdMotion, ExhaustibleLinear};

    fn setup() -> (TorusGrid, GridField, GridField) {
        let g = TorusGrid::new(1, 2.0, 64).unwrap();
        let m = GridField::from_fn(g, |x| 0.5 + 0.3 * (std::f64::consts::PI * x[0]).cos());
        let u = GridField::from_fn(g, |x| (std::f64::consts::PI * x[0]).sin() + 0.4 * x[0].cos());
        let p = gradient(&u, GradientScheme::Central).unwrap();
        (g, m, p)
    }

    #[test]
    fn independent_model_converges_in_one_sweep() {
        let (g, m, p) = setup();
        let c = CrowdMotion::new(&g, 0.0, 1.0, 2.0, CrowdKernel::Constant { value: 1.0 }, 2.0)
            .unwrap();
        let e = HamiltonianEvaluator::new(Arc::new(c), LegendreMode::ClosedForm).unwrap();
        let (law, stats) = solve_mu(0.0, 0, &p, &m, &e, &FixedPointOptions::default(), None).unwrap();
        assert_eq!(stats.iterations, 1);
        for k in 0..g.num_nodes() {
            assert_eq!(law.control().values()[k], -p.values()[k]);
        }
    }

    #[test]
    fn exhaustible_mean_matches_oracle() {
        let (_, m, p) = setup();
        for eps in [0.0, 0.5, 1.0, 2.0] {
            let model = ExhaustibleLinear::new(eps).unwrap();
            let e = HamiltonianEvaluator::new(Arc::new(model.clone()), LegendreMode::ClosedForm)
                .unwrap();
            let (law, _) =
                solve_mu(0.0, 0, &p, &m, &e, &FixedPointOptions::default(), None).unwrap();
            let want = oracle::exhaustible_mean_control(&model, &p, &m);
            assert!((law.summary().mean_control[0] - want).abs() < 1e-11, "eps={eps}");
        }
    }

    #[test]
    fn exhausted_iterations_report_history() {
        let (_, m, p) = setup();
        let e = HamiltonianEvaluator::new(
            Arc::new(ExhaustibleLinear::new(1.0).unwrap()),
            LegendreMode::ClosedForm,
        )
        .unwrap();
        let opts = FixedPointOptions {
            max_iterations: 3,
            payload_fallback: false,
            ..Default::default()
        };
        match solve_mu(0.0, 0, &p, &m, &e, &opts, None) {
            Err(MfgcError::FixedPoint { history, .. }) => assert_eq!(history.len(), 3),
            other => panic!("{other:?}"),
        }
        let rescued = FixedPointOptions {
            payload_fallback: true,
            ..opts
        };
        let (law, stats) = solve_mu(0.0, 0, &p, &m, &e, &rescued, None).unwrap();
        assert!(stats.history.len() > 3);
        assert!(fixed_point_residual(&e, 0.0, 0, &p, &law).unwrap() <= 1e-10);
    }

    #[test]
    fn lambda_moment_examples() {
        let (g, m, _) = setup();
        let e = HamiltonianEvaluator::new(
            Arc::new(ExhaustibleLinear::new(1.0).unwrap()),
            LegendreMode::ClosedForm,
        )
        .unwrap();
        let zero = ControlLaw::new(&e, m.clone(), GridField::zeros(g, 1)).unwrap();
        assert_eq!(lambda_moment(&zero, 2.0), 0.0);
        assert_eq!(lambda_moment(&zero, f64::INFINITY), 0.0);
        let mass = crate::domain::mass(&m);
        let c = ControlLaw::new(&e, m.map(|v| v / mass), GridField::from_fn(g, |_| -0.75)).unwrap();
        for q in [1.0, 2.0, 3.5] {
            assert!((lambda_moment(&c, q) - 0.75).abs() < 1e-13);
        }
        assert_eq!(lambda_moment(&c, f64::INFINITY), 0.75);
    }
}
