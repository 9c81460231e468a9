//! Backward semi-implicit HJB and forward conservative Fokker-Planck steps.
//!
//! HJB: `(I + nu dt (-Lap)) u_n = u_{n+1} - dt (H(t_n, ., grad u_{n+1}, s_n) - f_n)`.
//! FPK: `(I + dt (nu (-Lap) + B(alpha))) m_{n+1} = m_n`, where `B` is the
//! upwind flux divergence with interface velocities `(alpha_i + alpha_{i+1})/2`.
//! `B` has zero column sums and nonpositive off-diagonals, so the FPK system
//! is an M-matrix that conserves `h^d sum m`. Its transpose `A = B^T` is the
//! matching discrete advection `alpha . grad` acting on test functions.

use serde::{Deserialize, Serialize};

use crate::domain::{gradient, mass, DensityPath, GradientScheme, GridField, TimeGrid, TorusGrid};
use crate::error::{MfgcError, Result};
use crate::fixed_point::ControlLaw;
use crate::legendre::{evaluate_field, Hamiltonian};
use crate::linalg::{solve_periodic, CsrMatrix, IterativeOptions};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HjbGradient {
    Central,
    /// One-sided differences oriented by the law's control.
    Upwind,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct HjbOptions {
    pub gradient: HjbGradient,
    pub solver: SolverTolerance,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SolverTolerance {
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for SolverTolerance {
    fn default() -> Self {
        Self {
            tolerance: 1e-13,
            max_iterations: 5000,
        }
    }
}

impl From<SolverTolerance> for IterativeOptions {
    fn from(s: SolverTolerance) -> Self {
        IterativeOptions {
            tolerance: s.tolerance,
            max_iterations: s.max_iterations,
        }
    }
}

impl Default for HjbOptions {
    fn default() -> Self {
        Self {
            gradient: HjbGradient::Central,
            solver: SolverTolerance::default(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NegativityPolicy {
    Error,
    ClampRenormalize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct FpkOptions {
    pub solver: SolverTolerance,
    pub negativity: NegativityPolicy,
}

impl Default for FpkOptions {
    fn default() -> Self {
        Self {
            solver: SolverTolerance::default(),
            negativity: NegativityPolicy::Error,
        }
    }
}

/// Entries below this are treated as negative densities.
pub const NEGATIVITY_FLOOR: f64 = -1e-12;

/// `-Lap_h` as a sparse matrix.
pub fn diffusion_matrix(grid: &TorusGrid) -> CsrMatrix {
    let h2 = grid.spacing() * grid.spacing();
    let d = grid.dim();
    CsrMatrix::from_rows(
        (0..grid.num_nodes())
            .map(|k| {
                let mut row = vec![(k, 2.0 * d as f64 / h2)];
                for axis in 0..d {
                    row.push((grid.neighbor(k, axis, true), -1.0 / h2));
                    row.push((grid.neighbor(k, axis, false), -1.0 / h2));
                }
                row
            })
            .collect(),
    )
}

/// Upwind flux divergence `B(alpha)`; `(B m)_i = sum_axes (F_{i+1/2} - F_{i-1/2}) / h`
/// with `F_{i+1/2} = v+ m_i - v- m_{i+1}`.
pub fn advection_matrix(grid: &TorusGrid, alpha: &GridField) -> Result<CsrMatrix> {
    grid.check_same(alpha.grid())?;
    let d = grid.dim();
    if alpha.components() != d {
        return Err(MfgcError::Shape(format!(
            "control needs {d} components, got {}",
            alpha.components()
        )));
    }
    let h = grid.spacing();
    let a = alpha.values();
    let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); grid.num_nodes()];
    for (i, row) in rows.iter_mut().enumerate() {
        for axis in 0..d {
            let fwd = grid.neighbor(i, axis, true);
            let bwd = grid.neighbor(i, axis, false);
            let v_right = 0.5 * (a[i * d + axis] + a[fwd * d + axis]);
            let v_left = 0.5 * (a[bwd * d + axis] + a[i * d + axis]);
            row.push((i, (v_right.max(0.0) + (-v_left).max(0.0)) / h));
            row.push((fwd, -(-v_right).max(0.0) / h));
            row.push((bwd, -v_left.max(0.0) / h));
        }
    }
    Ok(CsrMatrix::from_rows(rows))
}

/// `I + c0 (-Lap) + c1 B`.
fn system_matrix(grid: &TorusGrid, diffusion: f64, advection: Option<(f64, &CsrMatrix)>) -> CsrMatrix {
    let lap = diffusion_matrix(grid);
    let rows = (0..grid.num_nodes())
        .map(|i| {
            let mut row: Vec<(usize, f64)> = vec![(i, 1.0)];
            row.extend(lap.row(i).map(|(j, v)| (j, diffusion * v)));
            if let Some((c, b)) = advection {
                row.extend(b.row(i).map(|(j, v)| (j, c * v)));
            }
            row
        })
        .collect();
    CsrMatrix::from_rows(rows)
}

fn check_finite(values: &[f64], time_index: usize) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(MfgcError::NonFinite { time_index })
    }
}

/// Gradient field fed to `H` in the HJB step.
pub fn hjb_gradient(u: &GridField, law: &ControlLaw, opts: &HjbOptions) -> Result<GridField> {
    match opts.gradient {
        HjbGradient::Central => gradient(u, GradientScheme::Central),
        HjbGradient::Upwind => {
            let dir = law.control().map(|v| -v);
            gradient(u, GradientScheme::Upwind(&dir))
        }
    }
}

/// `H(t, x, grad u_next(x), s)` at every node, warm started from the law's control.
pub fn hamiltonian_field(
    ham: &dyn Hamiltonian,
    t: f64,
    time_index: usize,
    u_next: &GridField,
    law: &ControlLaw,
    opts: &HjbOptions,
) -> Result<Vec<f64>> {
    let grid = *u_next.grid();
    let p = hjb_gradient(u_next, law, opts)?;
    let vals = evaluate_field(ham, t, time_index, &grid, &p, law.summary(), Some(law.control()))
        .map_err(|e| match e {
            MfgcError::NonFinite { .. } => MfgcError::NonFinite { time_index },
            other => other,
        })?;
    Ok(vals.into_iter().map(|h| h.value).collect())
}

/// One backward step from `u_{n+1}` to `u_n`. `source` is the running cost at `t_n`.
#[allow(clippy::too_many_arguments)]
pub fn hjb_step_backward(
    u_next: &GridField,
    law: &ControlLaw,
    source: &GridField,
    ham: &dyn Hamiltonian,
    t: f64,
    time_index: usize,
    nu: f64,
    dt: f64,
    opts: &HjbOptions,
) -> Result<GridField> {
    let grid = *u_next.grid();
    grid.check_same(source.grid())?;
    let hv = hamiltonian_field(ham, t, time_index, u_next, law, opts)?;
    let rhs: Vec<f64> = (0..grid.num_nodes())
        .map(|k| u_next.values()[k] - dt * (hv[k] - source.values()[k]))
        .collect();
    check_finite(&rhs, time_index)?;
    let a = system_matrix(&grid, nu * dt, None);
    let u = solve_periodic(&grid, &a, &rhs, &rhs, true, opts.solver.into())
        .map_err(|e| step_error(e, time_index))?;
    check_finite(&u, time_index)?;
    Ok(GridField::scalar(grid, u)?.with_time_index(time_index))
}

fn step_error(e: MfgcError, time_index: usize) -> MfgcError {
    match e {
        MfgcError::LinearSolver(msg) => {
            MfgcError::LinearSolver(format!("{msg} (time index {time_index})"))
        }
        other => other,
    }
}

/// Outcome of one FPK step.
#[derive(Clone, Debug, PartialEq)]
pub struct FpkStep {
    pub density: GridField,
    /// Total negative mass removed by clamping (0 when nothing was clamped).
    pub clamped_mass: f64,
}

/// One forward step from `m_n` with control `alpha_n`.
pub fn fpk_step_forward(
    m: &GridField,
    alpha: &GridField,
    nu: f64,
    dt: f64,
    time_index: usize,
    opts: &FpkOptions,
) -> Result<FpkStep> {
    let grid = *m.grid();
    let b = advection_matrix(&grid, alpha)?;
    let a = system_matrix(&grid, nu * dt, Some((dt, &b)));
    let mut next = solve_periodic(&grid, &a, m.values(), m.values(), false, opts.solver.into())
        .map_err(|e| step_error(e, time_index + 1))?;
    check_finite(&next, time_index + 1)?;
    let min = next.iter().copied().fold(f64::INFINITY, f64::min);
    let mut clamped_mass = 0.0;
    if min < NEGATIVITY_FLOOR {
        match opts.negativity {
            NegativityPolicy::Error => {
                return Err(MfgcError::Negativity {
                    time_index: time_index + 1,
                    min,
                })
            }
            NegativityPolicy::ClampRenormalize => {
                let before = mass(m);
                for v in next.iter_mut() {
                    if *v < 0.0 {
                        clamped_mass -= *v * grid.cell_volume();
                        *v = 0.0;
                    }
                }
                let after: f64 = next.iter().sum::<f64>() * grid.cell_volume();
                for v in next.iter_mut() {
                    *v *= before / after;
                }
            }
        }
    }
    Ok(FpkStep {
        density: GridField::scalar(grid, next)?.with_time_index(time_index + 1),
        clamped_mass,
    })
}

/// Backward sweep from the terminal condition. `laws[n]` and `sources[n]`
/// are used in the step producing `u_n`.
#[allow(clippy::too_many_arguments)]
pub fn solve_hjb(
    terminal: &GridField,
    laws: &[ControlLaw],
    sources: &[GridField],
    ham: &dyn Hamiltonian,
    time: &TimeGrid,
    nu: f64,
    opts: &HjbOptions,
) -> Result<Vec<GridField>> {
    let steps = time.steps();
    if laws.len() < steps || sources.len() < steps {
        return Err(MfgcError::Shape(format!(
            "need {steps} laws and sources, got {} and {}",
            laws.len(),
            sources.len()
        )));
    }
    let mut path = vec![terminal.clone().with_time_index(steps)];
    for n in (0..steps).rev() {
        let next = path.last().unwrap();
        let u = hjb_step_backward(
            next,
            &laws[n],
            &sources[n],
            ham,
            time.time(n),
            n,
            nu,
            time.dt(),
            opts,
        )?;
        path.push(u);
    }
    path.reverse();
    Ok(path)
}

/// Forward sweep from `m0` driven by `controls[n]` on `[t_n, t_{n+1}]`.
pub fn solve_fpk(
    m0: &GridField,
    controls: &[GridField],
    time: &TimeGrid,
    nu: f64,
    opts: &FpkOptions,
) -> Result<(DensityPath, f64)> {
    let steps = time.steps();
    if controls.len() < steps {
        return Err(MfgcError::Shape(format!(
            "need {steps} control fields, got {}",
            controls.len()
        )));
    }
    let mut slices = vec![m0.clone().with_time_index(0)];
    let mut clamped = 0.0;
    for (n, control) in controls.iter().enumerate().take(steps) {
        let step = fpk_step_forward(&slices[n], control, nu, time.dt(), n, opts)?;
        clamped += step.clamped_mass;
        slices.push(step.density);
    }
    Ok((DensityPath::new(*m0.grid(), *time, slices)?, clamped))
}

/// Sup-norm defect of the HJB scheme at step `n`, divided by `dt`.
#[allow(clippy::too_many_arguments)]
pub fn hjb_defect(
    u_n: &GridField,
    u_next: &GridField,
    law: &ControlLaw,
    source: &GridField,
    ham: &dyn Hamiltonian,
    t: f64,
    time_index: usize,
    nu: f64,
    dt: f64,
    opts: &HjbOptions,
) -> Result<f64> {
    let grid = *u_n.grid();
    let hv = hamiltonian_field(ham, t, time_index, u_next, law, opts)?;
    let lap = diffusion_matrix(&grid).matvec(u_n.values());
    Ok((0..grid.num_nodes())
        .map(|k| {
            ((u_n.values()[k] - u_next.values()[k]) / dt + nu * lap[k] + hv[k]
                - source.values()[k])
                .abs()
        })
        .fold(0.0, f64::max))
}

/// Sup-norm defect of the FPK scheme at step `n`, divided by `dt`.
pub fn fpk_defect(
    m_n: &GridField,
    m_next: &GridField,
    alpha: &GridField,
    nu: f64,
    dt: f64,
) -> Result<f64> {
    let grid = *m_n.grid();
    let lap = diffusion_matrix(&grid).matvec(m_next.values());
    let adv = advection_matrix(&grid, alpha)?.matvec(m_next.values());
    Ok((0..grid.num_nodes())
        .map(|k| {
            ((m_next.values()[k] - m_n.values()[k]) / dt + nu * lap[k] + adv[k]).abs()
        })
        .fold(0.0, f64::max))
}
