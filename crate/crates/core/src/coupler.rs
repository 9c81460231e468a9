//! Outer forward-backward iteration for the coupled system, with
//! continuation along `theta`, residual tracking, the uniqueness probe and
//! the cross-duality energy check.

use std::f64::consts::PI;
use std::sync::Arc;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domain::{
    dot, gradient, mass, normalize_density, DensityPath, GradientScheme, GridField, TimeGrid,
    TorusGrid, Vector, ZERO,
};
use crate::error::{MfgcError, Result};
use crate::fixed_point::{
    apriori_check, fixed_point_residual, lambda_moment, solve_mu, ControlLaw, FixedPointOptions,
};
use crate::legendre::{Hamiltonian, ScaledHamiltonian};
use crate::models::DensityCoupling;
use crate::pde::{
    fpk_defect, fpk_step_forward, hamiltonian_field, hjb_defect, solve_fpk, solve_hjb, FpkOptions,
    HjbOptions,
};

/// Initial density profiles; all are normalized to unit mass on the grid.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum InitialDensity {
    Uniform,
    /// `exp(-|x - center|^2 / (2 width^2))`, `center` repeated on every axis.
    Gaussian { center: f64, width: f64 },
    /// `1 + amplitude * sum_i cos(2 pi x_i / a)`.
    Cosine { amplitude: f64 },
    /// All mass at one node.
    Dirac { node: usize },
}

impl InitialDensity {
    pub fn sample(&self, grid: &TorusGrid) -> Result<GridField> {
        let raw = match *self {
            InitialDensity::Uniform => GridField::from_fn(*grid, |_| 1.0),
            InitialDensity::Gaussian { center, width } => {
                if !(width > 0.0) {
                    return Err(MfgcError::param("m0.width", "width > 0"));
                }
                let c = [center, if grid.dim() > 1 { center } else { 0.0 }];
                GridField::from_fn(*grid, |x| {
                    let d = grid.periodic_displacement(x, &c);
                    (-dot(&d, &d) / (2.0 * width * width)).exp()
                })
            }
            InitialDensity::Cosine { amplitude } => {
                if amplitude.abs() > 1.0 / grid.dim() as f64 {
                    return Err(MfgcError::param("m0.amplitude", "|amplitude| ≤ 1/dim"));
                }
                GridField::from_fn(*grid, |x| {
                    1.0 + (0..grid.dim())
                        .map(|i| amplitude * (2.0 * PI * x[i] / grid.radius()).cos())
                        .sum::<f64>()
                })
            }
            InitialDensity::Dirac { node } => {
                if node >= grid.num_nodes() {
                    return Err(MfgcError::param("m0.node", "node < number of grid nodes"));
                }
                let mut v = vec![0.0; grid.num_nodes()];
                v[node] = 1.0;
                GridField::scalar(*grid, v)?
            }
        };
        normalize_density(raw)
    }
}

/// A full problem instance on the torus.
#[derive(Clone, Debug)]
pub struct ProblemSpec {
    pub grid: TorusGrid,
    pub time: TimeGrid,
    pub nu: f64,
    pub hamiltonian: Arc<dyn Hamiltonian>,
    pub running: Arc<dyn DensityCoupling>,
    pub terminal: Arc<dyn DensityCoupling>,
    pub m0: GridField,
}

impl ProblemSpec {
    pub fn new(
        grid: TorusGrid,
        time: TimeGrid,
        nu: f64,
        hamiltonian: Arc<dyn Hamiltonian>,
        running: Arc<dyn DensityCoupling>,
        terminal: Arc<dyn DensityCoupling>,
        m0: GridField,
    ) -> Result<Self> {
        if !(nu.is_finite() && nu > 0.0) {
            return Err(MfgcError::param("nu", "nu > 0"));
        }
        if hamiltonian.dim() != grid.dim() {
            return Err(MfgcError::param(
                "dim",
                format!("model dimension {} equals grid dimension {}", hamiltonian.dim(), grid.dim()),
            ));
        }
        grid.check_same(m0.grid())?;
        if !m0.is_scalar() || m0.values().iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(MfgcError::param("m0", "finite and nonnegative"));
        }
        if (mass(&m0) - 1.0).abs() > 1e-12 {
            return Err(MfgcError::param("m0", "unit mass within 1e-12"));
        }
        Ok(Self {
            grid,
            time,
            nu,
            hamiltonian,
            running,
            terminal,
            m0,
        })
    }

    /// `int |x|^2 dm0` by quadrature.
    pub fn second_moment(&self) -> f64 {
        (0..self.grid.num_nodes())
            .map(|k| {
                let x = self.grid.coords(k);
                dot(&x, &x) * self.m0.values()[k]
            })
            .sum::<f64>()
            * self.grid.cell_volume()
    }

    fn sources(&self, theta: f64, m: &DensityPath) -> Result<Vec<GridField>> {
        (0..self.time.steps())
            .map(|n| {
                if self.running.is_density_independent() && theta == 0.0 {
                    Ok(GridField::zeros(self.grid, 1))
                } else {
                    Ok(self.running.evaluate(self.time.time(n), m.slice(n))?.map(|v| theta * v))
                }
            })
            .collect()
    }

    fn terminal_field(&self, theta: f64, m_final: &GridField) -> Result<GridField> {
        Ok(self
            .terminal
            .evaluate(self.time.horizon(), m_final)?
            .map(|v| theta * v))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum OuterStrategy {
    DampedPicard { omega: f64 },
    FictitiousPlay,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OuterOptions {
    pub strategy: OuterStrategy,
    pub tolerance: f64,
    pub max_iterations: usize,
    pub schedule: Vec<f64>,
    /// Switch damped Picard to fictitious play when the change stalls.
    pub stall_fallback: bool,
    pub inner: FixedPointOptions,
    pub hjb: HjbOptions,
    pub fpk: FpkOptions,
    /// Keep `(u^k, m, law)` snapshots of the last stage.
    pub record_iterates: bool,
}

impl Default for OuterOptions {
    fn default() -> Self {
        Self {
            strategy: OuterStrategy::DampedPicard { omega: 0.5 },
            tolerance: 1e-8,
            max_iterations: 200,
            schedule: vec![0.0, 0.25, 0.5, 0.75, 1.0],
            stall_fallback: true,
            inner: FixedPointOptions::default(),
            hjb: HjbOptions::default(),
            fpk: FpkOptions::default(),
            record_iterates: false,
        }
    }
}

impl OuterOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.tolerance > 0.0) {
            return Err(MfgcError::param("outer_tolerance", "outer_tolerance > 0"));
        }
        if self.max_iterations == 0 {
            return Err(MfgcError::param("outer_max_iterations", "outer_max_iterations ≥ 1"));
        }
        if let OuterStrategy::DampedPicard { omega } = self.strategy {
            if !(omega > 0.0 && omega <= 1.0) {
                return Err(MfgcError::param("outer_damping", "0 < outer_damping ≤ 1"));
            }
        }
        if self.schedule.is_empty()
            || self.schedule.windows(2).any(|w| w[1] < w[0])
            || self.schedule.iter().any(|t| !(0.0..=1.0).contains(t))
        {
            return Err(MfgcError::param(
                "schedule",
                "nonempty, nondecreasing, inside [0, 1]",
            ));
        }
        self.inner.validate()
    }
}

/// Starting point of the first continuation stage.
#[derive(Clone, Debug, Default)]
pub struct InitialGuess {
    pub u: Option<Vec<GridField>>,
    pub damping: Option<f64>,
}

impl InitialGuess {
    /// `u^0_n(x) = amplitude * sum_k c_k cos(2 pi k x_0/a + phi_k)`, random smooth.
    pub fn random(problem: &ProblemSpec, seed: u64, amplitude: f64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let modes: Vec<(f64, f64, f64)> = (1..=3)
            .map(|k| (rng.gen_range(-1.0..1.0), rng.gen_range(0.0..2.0 * PI), k as f64))
            .collect();
        let grid = problem.grid;
        let field = GridField::from_fn(grid, |x| {
            modes
                .iter()
                .map(|(c, phi, k)| {
                    (0..grid.dim())
                        .map(|i| c * (2.0 * PI * k * x[i] / grid.radius() + phi).cos())
                        .sum::<f64>()
                })
                .sum::<f64>()
                * amplitude
        });
        let u = (0..=problem.time.steps())
            .map(|n| field.clone().with_time_index(n))
            .collect();
        Self {
            u: Some(u),
            damping: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Residuals {
    pub hjb: f64,
    pub fpk: f64,
    pub mu: f64,
}

impl Residuals {
    pub fn max(&self) -> f64 {
        self.hjb.max(self.fpk).max(self.mu)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub theta: f64,
    pub residuals: Residuals,
    /// `|u~ - u^k|_inf`.
    pub u_change: f64,
    /// `sup_t h^d sum |m~ - m~_prev|`.
    pub m_change: f64,
    /// Sup change of the control fields.
    pub control_change: f64,
    pub fictitious_play: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct StageSummary {
    pub theta: f64,
    pub iterations: usize,
    pub converged: bool,
    pub u_sup: f64,
    pub grad_u_sup: f64,
    pub lambda_inf_max: f64,
}

/// Worst values over the time nodes of the reported solution.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Diagnostics {
    pub mass_error_max: f64,
    pub density_min: f64,
    /// `max_t h^d sum_{|x| > a/4} m`.
    pub boundary_mass: f64,
    pub apriori_holds: bool,
    pub apriori_moment_margin: f64,
    pub apriori_sup_margin: f64,
    pub max_principle_bound: f64,
    pub max_principle_holds: bool,
    pub monotonicity_gap_min: Option<f64>,
    pub second_moment: f64,
    pub second_moment_within_c0: bool,
    pub clamped_mass: f64,
    pub fallback_used: bool,
}

/// `(u, m, law)` paths at one continuation parameter.
#[derive(Clone, Debug)]
pub struct Snapshot {
    pub theta: f64,
    pub iteration: usize,
    pub u: Vec<GridField>,
    pub m: DensityPath,
    pub laws: Vec<ControlLaw>,
}

impl Snapshot {
    pub fn mean_controls(&self) -> Vec<Vector> {
        self.laws.iter().map(|l| l.summary().mean_control).collect()
    }

    fn graph_mean_controls(&self) -> Vec<Vector> {
        let vol = self.m.grid().cell_volume();
        self.laws
            .iter()
            .map(|l| {
                let d = l.control().components();
                let mut acc = ZERO;
                for k in 0..self.m.grid().num_nodes() {
                    for j in 0..d {
                        acc[j] += l.control().values()[k * d + j] * l.density().values()[k];
                    }
                }
                [acc[0] * vol, acc[1] * vol]
            })
            .collect()
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct Timings {
    pub total_seconds: f64,
    pub stage_seconds: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct SolveReport {
    pub converged: bool,
    pub solution: Snapshot,
    pub residuals: Residuals,
    pub history: Vec<IterationRecord>,
    pub stages: Vec<StageSummary>,
    pub diagnostics: Diagnostics,
    pub iterates: Vec<Snapshot>,
    pub timings: Timings,
}

fn sup_distance(a: &[GridField], b: &[GridField]) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for (x, y) in a.iter().zip(b) {
        worst = worst.max(x.distance_sup(y)?);
    }
    Ok(worst)
}

fn control_distance(a: &[ControlLaw], b: &[ControlLaw]) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for (x, y) in a.iter().zip(b) {
        worst = worst.max(x.control().distance_sup(y.control())?);
    }
    Ok(worst)
}

fn wrap(theta: f64, outer_iteration: usize) -> impl Fn(MfgcError) -> MfgcError {
    move |e| {
        let time_index = match &e {
            MfgcError::NonFinite { time_index } | MfgcError::Negativity { time_index, .. } => {
                *time_index
            }
            _ => 0,
        };
        MfgcError::Outer {
            theta,
            outer_iteration,
            time_index,
            source: Box::new(e),
        }
    }
}

/// Forward pass: laws from `grad u_n` and densities by the FPK scheme.
fn forward_sweep(
    problem: &ProblemSpec,
    ham: &dyn Hamiltonian,
    u: &[GridField],
    warm: Option<&[ControlLaw]>,
    opts: &OuterOptions,
    theta: f64,
    outer_iteration: usize,
) -> Result<(DensityPath, Vec<ControlLaw>, f64)> {
    let steps = problem.time.steps();
    let mut slices = vec![problem.m0.clone().with_time_index(0)];
    let mut laws: Vec<ControlLaw> = Vec::with_capacity(steps + 1);
    let mut clamped = 0.0;
    for n in 0..=steps {
        let p = gradient(&u[n], GradientScheme::Central)?;
        let init = match (warm, laws.last()) {
            (Some(w), _) => Some(w[n].control().clone()),
            (None, Some(prev)) => Some(prev.control().clone()),
            (None, None) => None,
        };
        let (law, _) = solve_mu(
            problem.time.time(n),
            n,
            &p,
            &slices[n],
            ham,
            &opts.inner,
            init.as_ref(),
        )
        .map_err(|e| MfgcError::Outer {
            theta,
            outer_iteration,
            time_index: n,
            source: Box::new(e),
        })?;
        if n < steps {
            let step = fpk_step_forward(
                &slices[n],
                law.control(),
                problem.nu,
                problem.time.dt(),
                n,
                &opts.fpk,
            )
            .map_err(wrap(theta, outer_iteration))?;
            clamped += step.clamped_mass;
            slices.push(step.density);
        }
        laws.push(law);
    }
    Ok((DensityPath::new(problem.grid, problem.time, slices)?, laws, clamped))
}

/// Defects of the discrete HJB, FPK and law equations for `(u, m, laws)`
/// at continuation parameter `theta`.
pub fn residuals(
    problem: &ProblemSpec,
    theta: f64,
    u: &[GridField],
    m: &DensityPath,
    laws: &[ControlLaw],
    opts: &OuterOptions,
) -> Result<Residuals> {
    let ham = ScaledHamiltonian::new(problem.hamiltonian.as_ref(), theta)?;
    let steps = problem.time.steps();
    let dt = problem.time.dt();
    if u.len() != steps + 1 || laws.len() != steps + 1 {
        return Err(MfgcError::Shape("paths must have one entry per time node".into()));
    }
    let sources = problem.sources(theta, m)?;
    let terminal = problem.terminal_field(theta, m.slice(steps))?;
    let mut hjb = u[steps].distance_sup(&terminal)?;
    let mut fpk = m.slice(0).distance_sup(&problem.m0)?;
    let mut mu: f64 = 0.0;
    for n in 0..steps {
        let t = problem.time.time(n);
        hjb = hjb.max(hjb_defect(
            &u[n], &u[n + 1], &laws[n], &sources[n], &ham, t, n, problem.nu, dt, &opts.hjb,
        )?);
        fpk = fpk.max(fpk_defect(m.slice(n), m.slice(n + 1), laws[n].control(), problem.nu, dt)?);
    }
    for n in 0..=steps {
        let p = gradient(&u[n], GradientScheme::Central)?;
        mu = mu.max(fixed_point_residual(&ham, problem.time.time(n), n, &p, &laws[n])?);
    }
    Ok(Residuals { hjb, fpk, mu })
}

fn stage_summary(theta: f64, iterations: usize, converged: bool, s: &Snapshot) -> Result<StageSummary> {
    let mut u_sup: f64 = 0.0;
    let mut grad_u_sup: f64 = 0.0;
    for u in &s.u {
        u_sup = u_sup.max(u.sup_norm());
        grad_u_sup = grad_u_sup.max(gradient(u, GradientScheme::Central)?.sup_norm());
    }
    let lambda_inf_max = s
        .laws
        .iter()
        .map(|l| lambda_moment(l, f64::INFINITY))
        .fold(0.0, f64::max);
    Ok(StageSummary {
        theta,
        iterations,
        converged,
        u_sup,
        grad_u_sup,
        lambda_inf_max,
    })
}

/// Solve from the default initialization.
pub fn solve(problem: &ProblemSpec, opts: &OuterOptions) -> Result<SolveReport> {
    solve_from(problem, opts, &InitialGuess::default())
}

/// Solve along the continuation schedule, starting the first stage from `guess`.
pub fn solve_from(
    problem: &ProblemSpec,
    opts: &OuterOptions,
    guess: &InitialGuess,
) -> Result<SolveReport> {
    opts.validate()?;
    let start = Instant::now();
    let steps = problem.time.steps();
    let grid = problem.grid;

    let zero_controls = vec![GridField::zeros(grid, grid.dim()); steps];
    let (heat, _) = solve_fpk(&problem.m0, &zero_controls, &problem.time, problem.nu, &opts.fpk)?;

    let first_theta = opts.schedule[0];
    let mut u: Vec<GridField> = match &guess.u {
        Some(u) => {
            if u.len() != steps + 1 {
                return Err(MfgcError::Shape("initial u needs one field per time node".into()));
            }
            u.clone()
        }
        None => {
            let g = problem.terminal_field(first_theta, heat.slice(steps))?;
            let avg = g.values().iter().sum::<f64>() / grid.num_nodes() as f64;
            (0..=steps)
                .map(|n| GridField::from_fn(grid, |_| avg).with_time_index(n))
                .collect()
        }
    };
    let mut strategy = opts.strategy;
    if let (Some(w), OuterStrategy::DampedPicard { .. }) = (guess.damping, strategy) {
        strategy = OuterStrategy::DampedPicard { omega: w };
    }

    let mut history = Vec::new();
    let mut stages = Vec::new();
    let mut stage_seconds = Vec::new();
    let mut iterates = Vec::new();
    let mut fallback_used = false;
    let mut clamped_total = 0.0;
    let mut prev_m: DensityPath = heat;
    let mut prev_laws: Option<Vec<ControlLaw>> = None;
    let mut last: Option<(Snapshot, Residuals)> = None;
    let mut all_converged = true;
    let mut global_iter = 0;

    for (stage_index, &theta) in opts.schedule.iter().enumerate() {
        let stage_start = Instant::now();
        let ham = ScaledHamiltonian::new(problem.hamiltonian.as_ref(), theta)?;
        let last_stage = stage_index + 1 == opts.schedule.len();
        let mut fictitious = matches!(strategy, OuterStrategy::FictitiousPlay);
        let mut fp_count = 1usize;
        let mut change_trace: Vec<f64> = Vec::new();
        let mut stage_converged = false;
        let mut iterations = 0;
        for k in 0..opts.max_iterations {
            iterations = k + 1;
            global_iter += 1;
            let (m_new, laws, clamped) =
                forward_sweep(problem, &ham, &u, prev_laws.as_deref(), opts, theta, k)?;
            clamped_total += clamped;
            let sources = problem.sources(theta, &m_new)?;
            let terminal = problem.terminal_field(theta, m_new.slice(steps))?;
            let u_new = solve_hjb(&terminal, &laws, &sources, &ham, &problem.time, problem.nu, &opts.hjb)
                .map_err(wrap(theta, k))?;

            let u_change = sup_distance(&u_new, &u)?;
            let m_change = m_new.l1_distance(&prev_m)?;
            let control_change = match &prev_laws {
                Some(p) => control_distance(&laws, p)?,
                None => f64::INFINITY,
            };
            let res = residuals(problem, theta, &u_new, &m_new, &laws, opts)?;
            history.push(IterationRecord {
                iteration: global_iter,
                theta,
                residuals: res,
                u_change,
                m_change,
                control_change,
                fictitious_play: fictitious,
            });
            if opts.record_iterates && last_stage {
                iterates.push(Snapshot {
                    theta,
                    iteration: k,
                    u: u.clone(),
                    m: m_new.clone(),
                    laws: laws.clone(),
                });
            }
            let change = u_change.max(m_change).max(control_change);
            change_trace.push(change);
            let snapshot = Snapshot {
                theta,
                iteration: k,
                u: u_new.clone(),
                m: m_new.clone(),
                laws: laws.clone(),
            };
            last = Some((snapshot, res));
            prev_m = m_new;
            prev_laws = Some(laws);
            if change <= opts.tolerance && res.max() <= opts.tolerance {
                stage_converged = true;
                u = u_new;
                break;
            }
            if !fictitious && opts.stall_fallback && change_trace.len() > 5 {
                let now = change_trace[change_trace.len() - 1];
                let before = change_trace[change_trace.len() - 6];
                if before.is_finite() && now > 0.99 * before {
                    fictitious = true;
                    fallback_used = true;
                }
            }
            u = if fictitious {
                fp_count += 1;
                let w = 1.0 / fp_count as f64;
                u.iter()
                    .zip(&u_new)
                    .map(|(a, b)| a.axpy(w, &b.axpy(-1.0, a)?))
                    .collect::<Result<Vec<_>>>()?
            } else {
                let omega = match strategy {
                    OuterStrategy::DampedPicard { omega } => omega,
                    OuterStrategy::FictitiousPlay => unreachable!(),
                };
                u.iter()
                    .zip(&u_new)
                    .map(|(a, b)| a.axpy(omega, &b.axpy(-1.0, a)?))
                    .collect::<Result<Vec<_>>>()?
            };
        }
        let (snap, _) = last.as_ref().expect("at least one iteration");
        stages.push(stage_summary(theta, iterations, stage_converged, snap)?);
        stage_seconds.push(stage_start.elapsed().as_secs_f64());
        if !stage_converged {
            all_converged = false;
            break;
        }
    }

    let (solution, res) = last.expect("at least one stage");
    let diagnostics = diagnostics(problem, &solution, opts, clamped_total, fallback_used)?;
    Ok(SolveReport {
        converged: all_converged,
        solution,
        residuals: res,
        history,
        stages,
        diagnostics,
        iterates,
        timings: Timings {
            total_seconds: start.elapsed().as_secs_f64(),
            stage_seconds,
        },
    })
}

fn diagnostics(
    problem: &ProblemSpec,
    s: &Snapshot,
    opts: &OuterOptions,
    clamped_mass: f64,
    fallback_used: bool,
) -> Result<Diagnostics> {
    let grid = problem.grid;
    let theta = s.theta;
    let ham = ScaledHamiltonian::new(problem.hamiltonian.as_ref(), theta)?;
    let masses = s.m.masses();
    let mass_error_max = masses.iter().map(|v| (v - 1.0).abs()).fold(0.0, f64::max);
    let quarter = grid.radius() / 4.0;
    let boundary_mass = s
        .m
        .slices()
        .iter()
        .map(|m| {
            (0..grid.num_nodes())
                .filter(|&k| dot(&grid.coords(k), &grid.coords(k)).sqrt() > quarter)
                .map(|k| m.values()[k])
                .sum::<f64>()
                * grid.cell_volume()
        })
        .fold(0.0, f64::max);

    let c0 = problem.hamiltonian.growth_constant();
    let q_prime = problem.hamiltonian.exponent();
    let mut apriori_holds = true;
    let mut moment_margin = f64::INFINITY;
    let mut sup_margin = f64::INFINITY;
    for (n, law) in s.laws.iter().enumerate() {
        let p = gradient(&s.u[n], GradientScheme::Central)?;
        let r = apriori_check(law, &p, c0, q_prime);
        apriori_holds &= r.holds;
        moment_margin = moment_margin.min(r.moment_margin);
        sup_margin = sup_margin.min(r.sup_margin);
    }

    let steps = problem.time.steps();
    let sources = problem.sources(theta, &s.m)?;
    let terminal = problem.terminal_field(theta, s.m.slice(steps))?;
    let f_sup = sources.iter().map(|f| f.sup_norm()).fold(0.0, f64::max);
    let mut h0_sup: f64 = 0.0;
    let zero_u = GridField::zeros(grid, 1);
    for n in 0..steps {
        let hv = hamiltonian_field(&ham, problem.time.time(n), n, &zero_u, &s.laws[n], &opts.hjb)?;
        h0_sup = hv.iter().fold(h0_sup, |acc, v| acc.max(v.abs()));
    }
    let max_principle_bound =
        terminal.sup_norm() + problem.time.horizon() * (f_sup + h0_sup) + 10.0 * opts.tolerance;
    let u_sup = s.u.iter().map(|u| u.sup_norm()).fold(0.0, f64::max);

    let mut gap_min: Option<f64> = None;
    let picks = [0, steps / 2, steps];
    for &i in &picks {
        for &j in &picks {
            if i < j {
                let law_i = (s.laws[i].density(), s.laws[i].control());
                let law_j = (s.laws[j].density(), s.laws[j].control());
                if let Some(g) = ham.monotonicity_gap(problem.time.time(i), law_i, law_j) {
                    let g = g?;
                    gap_min = Some(gap_min.map_or(g, |v: f64| v.min(g)));
                }
            }
        }
    }
    let second_moment = problem.second_moment();
    Ok(Diagnostics {
        mass_error_max,
        density_min: s.m.min_value(),
        boundary_mass,
        apriori_holds,
        apriori_moment_margin: moment_margin,
        apriori_sup_margin: sup_margin,
        max_principle_bound,
        max_principle_holds: u_sup <= max_principle_bound,
        monotonicity_gap_min: gap_min,
        second_moment,
        second_moment_within_c0: second_moment <= c0,
        clamped_mass,
        fallback_used,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct ProbeReport {
    pub runs: usize,
    pub all_converged: bool,
    pub max_u_distance: f64,
    pub max_m_distance: f64,
    pub max_mean_control_distance: f64,
    /// `10 * outer tolerance`.
    pub threshold: f64,
    pub within_threshold: bool,
    /// Sampled Lagrangian and terminal-cost gaps were all `>= -1e-10`.
    pub monotone_precondition: bool,
    pub min_sampled_gap: f64,
    pub iterations: Vec<usize>,
}

/// Solve from every initialization and compare the results pairwise.
pub fn uniqueness_probe(
    problem: &ProblemSpec,
    opts: &OuterOptions,
    guesses: &[InitialGuess],
) -> Result<ProbeReport> {
    let reports: Vec<Result<SolveReport>> = guesses
        .par_iter()
        .map(|g| solve_from(problem, opts, g))
        .collect();
    let reports = reports.into_iter().collect::<Result<Vec<_>>>()?;
    let mut du: f64 = 0.0;
    let mut dm: f64 = 0.0;
    let mut da: f64 = 0.0;
    let mut min_gap = f64::INFINITY;
    let last = problem.time.steps();
    for i in 0..reports.len() {
        for j in (i + 1)..reports.len() {
            let a = &reports[i].solution;
            let b = &reports[j].solution;
            du = du.max(sup_distance(&a.u, &b.u)?);
            dm = dm.max(a.m.sup_distance(&b.m)?);
            for (x, y) in a.graph_mean_controls().iter().zip(b.graph_mean_controls()) {
                da = da.max(((x[0] - y[0]).powi(2) + (x[1] - y[1]).powi(2)).sqrt());
            }
            let ham = ScaledHamiltonian::new(problem.hamiltonian.as_ref(), a.theta)?;
            for n in [0, last / 2, last] {
                let l1 = (a.laws[n].density(), a.laws[n].control());
                let l2 = (b.laws[n].density(), b.laws[n].control());
                if let Some(g) = ham.monotonicity_gap(problem.time.time(n), l1, l2) {
                    min_gap = min_gap.min(g?);
                }
            }
            min_gap = min_gap.min(crate::models::coupling_monotonicity_gap(
                problem.terminal.as_ref(),
                problem.time.horizon(),
                a.m.slice(last),
                b.m.slice(last),
            )?);
        }
    }
    let threshold = 10.0 * opts.tolerance;
    let all_converged = reports.iter().all(|r| r.converged);
    Ok(ProbeReport {
        runs: reports.len(),
        all_converged,
        max_u_distance: du,
        max_m_distance: dm,
        max_mean_control_distance: da,
        threshold,
        within_threshold: du <= threshold && dm <= threshold && da <= threshold,
        monotone_precondition: min_gap >= -1e-10,
        min_sampled_gap: if min_gap.is_finite() { min_gap } else { 0.0 },
        iterations: reports.iter().map(|r| r.history.len()).collect(),
    })
}

/// Discrete cross-duality integral for two `(u, m, law)` triples at the same `theta`.
///
/// Zero for identical inputs; nonnegative under monotone Lagrangian and
/// couplings whenever each law is the best response to its own `grad u`.
pub fn energy_identity_check(problem: &ProblemSpec, a: &Snapshot, b: &Snapshot) -> Result<f64> {
    if a.theta != b.theta {
        return Err(MfgcError::param("theta", "both snapshots share theta"));
    }
    let theta = a.theta;
    let ham = ScaledHamiltonian::new(problem.hamiltonian.as_ref(), theta)?;
    let grid = problem.grid;
    let steps = problem.time.steps();
    let dt = problem.time.dt();
    let vol = grid.cell_volume();
    let mut total = 0.0;
    for n in 0..steps {
        let t = problem.time.time(n);
        let p1 = gradient(&a.u[n], GradientScheme::Central)?;
        let p2 = gradient(&b.u[n], GradientScheme::Central)?;
        let s1 = a.laws[n].summary();
        let s2 = b.laws[n].summary();
        let m1 = a.m.slice(n).values();
        let m2 = b.m.slice(n).values();
        let mut sum = 0.0;
        for k in 0..grid.num_nodes() {
            let x = grid.coords(k);
            let v1 = p1.vector_at(k);
            let v2 = p2.vector_at(k);
            let a1 = a.laws[n].control().vector_at(k);
            let a2 = b.laws[n].control().vector_at(k);
            let h11 = ham.evaluate(t, &x, &v1, s1, Some(&a1))?.value;
            let h22 = ham.evaluate(t, &x, &v2, s2, Some(&a2))?.value;
            let diff = [v1[0] - v2[0], v1[1] - v2[1]];
            // H_p = -control
            let first = -dot(&diff, &a1) - h11 + h22;
            let second = dot(&diff, &a2) - h22 + h11;
            sum += first * m1[k] + second * m2[k];
        }
        let f1 = problem.running.evaluate(t, a.m.slice(n))?;
        let f2 = problem.running.evaluate(t, b.m.slice(n))?;
        let coupling: f64 = (0..grid.num_nodes())
            .map(|k| (f1.values()[k] - f2.values()[k]) * (m1[k] - m2[k]))
            .sum();
        total += dt * vol * (sum + theta * coupling);
    }
    let g1 = problem.terminal.evaluate(problem.time.horizon(), a.m.slice(steps))?;
    let g2 = problem.terminal.evaluate(problem.time.horizon(), b.m.slice(steps))?;
    let mt1 = a.m.slice(steps).values();
    let mt2 = b.m.slice(steps).values();
    let terminal: f64 = (0..grid.num_nodes())
        .map(|k| (g1.values()[k] - g2.values()[k]) * (mt1[k] - mt2[k]))
        .sum();
    Ok(total + theta * vol * terminal)
}
