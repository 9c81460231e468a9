//! Commands and their on-disk artifacts.
//!
//! Field files hold one row per `(time_index, node)`, time-major, nodes in
//! grid order with axis 0 fastest:
//! - `fields_u.csv`: `time_index, x0[, x1], u`
//! - `fields_m.csv`: `time_index, x0[, x1], m`
//! - `fields_alpha.csv`: `time_index, x0[, x1], alpha0[, alpha1]`
//!
//! `convergence.csv` has one row per outer iteration. `report.json` is a
//! pure function of the configuration; wall-clock times go to `timings.json`.

use std::io::Write;
use std::path::Path;

use anyhow::{Context, Result};
use mfgc_core::audit::{growth_audit, monotonicity_audit, AuditSpec, GrowthAudit, MonotonicityAudit};
use mfgc_core::coupler::{
    solve, uniqueness_probe, Diagnostics, InitialGuess, IterationRecord, ProbeReport, Residuals,
    SolveReport, StageSummary,
};
use mfgc_core::domain::{GridField, TorusGrid};
use mfgc_core::drift::{drift_audit, recover_control_law, DriftAudit, SampleLattice, TransformedLagrangian};
use mfgc_core::fixed_point::ControlLaw;
use serde::Serialize;

use crate::config::RunConfig;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// How a command finished; errors are reported separately.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Outcome {
    Passed,
    /// Non-convergence or a failed check, written to the report.
    Flagged,
}

impl Outcome {
    fn from_flag(ok: bool) -> Self {
        if ok {
            Outcome::Passed
        } else {
            Outcome::Flagged
        }
    }

    pub fn exit_code(self) -> i32 {
        match self {
            Outcome::Passed => 0,
            Outcome::Flagged => 2,
        }
    }
}

/// Write through a temporary file in the same directory, then rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().unwrap_or(Path::new("."));
    let mut tmp = tempfile::NamedTempFile::new_in(dir)
        .with_context(|| format!("cannot create a file in {}", dir.display()))?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path)
        .with_context(|| format!("cannot write {}", path.display()))?;
    Ok(())
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    write_atomic(path, s.as_bytes())
}

/// Shortest round-trip text; exponent form outside `[1e-4, 1e6)`.
fn num(v: f64) -> String {
    let a = v.abs();
    if a == 0.0 || (1e-4..1e6).contains(&a) || !v.is_finite() {
        v.to_string()
    } else {
        format!("{v:e}")
    }
}

fn coordinate_header(grid: &TorusGrid) -> Vec<String> {
    (0..grid.dim()).map(|i| format!("x{i}")).collect()
}

fn fields_csv<'a>(
    grid: &TorusGrid,
    columns: &[&str],
    fields: impl Iterator<Item = &'a GridField>,
) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["time_index".to_string()];
    header.extend(coordinate_header(grid));
    header.extend(columns.iter().map(|c| c.to_string()));
    w.write_record(&header)?;
    for (n, f) in fields.enumerate() {
        let d = f.components();
        for k in 0..grid.num_nodes() {
            let x = grid.coords(k);
            let mut row = vec![n.to_string()];
            row.extend(x[..grid.dim()].iter().map(|v| num(*v)));
            row.extend(f.values()[k * d..(k + 1) * d].iter().map(|v| num(*v)));
            w.write_record(&row)?;
        }
    }
    Ok(w.into_inner()?)
}

fn convergence_csv(history: &[IterationRecord]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "iteration",
        "hjb_res",
        "fpk_res",
        "mu_res",
        "theta",
        "u_change",
        "m_change",
        "control_change",
        "fictitious_play",
    ])?;
    for r in history {
        w.write_record([
            r.iteration.to_string(),
            num(r.residuals.hjb),
            num(r.residuals.fpk),
            num(r.residuals.mu),
            num(r.theta),
            num(r.u_change),
            num(r.m_change),
            num(r.control_change),
            r.fictitious_play.to_string(),
        ])?;
    }
    Ok(w.into_inner()?)
}

#[derive(Serialize)]
struct SolveJson<'a> {
    version: &'static str,
    command: &'static str,
    converged: bool,
    theta: f64,
    iterations: usize,
    residuals: Residuals,
    stages: &'a [StageSummary],
    diagnostics: &'a Diagnostics,
    config: &'a RunConfig,
}

/// Controls in the original variable; drift-transformed runs store `b~`.
fn alpha_laws(cfg: &RunConfig, report: &SolveReport) -> Result<Vec<ControlLaw>> {
    let model = cfg.components()?.model;
    match cfg.transformed(model)? {
        None => Ok(report.solution.laws.clone()),
        Some(h) => report
            .solution
            .laws
            .iter()
            .map(|l| Ok(recover_control_law(&h, l)?))
            .collect(),
    }
}

pub fn solve_command(cfg: &RunConfig) -> Result<Outcome> {
    let problem = cfg.problem()?;
    let report = solve(&problem, &cfg.outer_options()).context("solve failed")?;
    let out = &cfg.output_dir;
    std::fs::create_dir_all(out).with_context(|| format!("cannot create {}", out.display()))?;

    let grid = problem.grid;
    let sol = &report.solution;
    write_atomic(&out.join("fields_u.csv"), &fields_csv(&grid, &["u"], sol.u.iter())?)?;
    write_atomic(
        &out.join("fields_m.csv"),
        &fields_csv(&grid, &["m"], sol.m.slices().iter())?,
    )?;
    let laws = alpha_laws(cfg, &report)?;
    let alpha_cols: &[&str] = if grid.dim() == 1 { &["alpha0"] } else { &["alpha0", "alpha1"] };
    write_atomic(
        &out.join("fields_alpha.csv"),
        &fields_csv(&grid, alpha_cols, laws.iter().map(|l| l.control()))?,
    )?;
    write_atomic(&out.join("convergence.csv"), &convergence_csv(&report.history)?)?;
    write_json(
        &out.join("report.json"),
        &SolveJson {
            version: VERSION,
            command: "solve",
            converged: report.converged,
            theta: sol.theta,
            iterations: report.history.len(),
            residuals: report.residuals,
            stages: &report.stages,
            diagnostics: &report.diagnostics,
            config: cfg,
        },
    )?;
    write_json(&out.join("timings.json"), &report.timings)?;
    Ok(Outcome::from_flag(report.converged))
}

#[derive(Serialize)]
struct AuditJson<'a> {
    version: &'static str,
    command: &'static str,
    passed: bool,
    growth: GrowthAudit,
    monotonicity: MonotonicityAudit,
    drift: Option<DriftAudit>,
    config: &'a RunConfig,
}

/// Growth, monotonicity and drift checks without solving any PDE.
pub fn audit_command(cfg: &RunConfig) -> Result<Outcome> {
    let c = cfg.components()?;
    let growth = growth_audit(&cfg.evaluator(c.model.clone())?, &AuditSpec::default())?;
    let problem = cfg.problem()?;
    let monotonicity = monotonicity_audit(
        problem.hamiltonian.as_ref(),
        c.running.as_ref(),
        c.terminal.as_ref(),
        &c.grid,
        cfg.probe.pairs,
        cfg.probe.seed,
    )?;
    let drift = match cfg.drift {
        mfgc_core::drift::DriftModel::Identity => None,
        d => Some(drift_audit(
            &TransformedLagrangian::new(c.model.clone(), d)?,
            &SampleLattice::default(),
        )),
    };
    let passed = growth.passed && monotonicity.passed && drift.as_ref().is_none_or(|d| d.passed);
    std::fs::create_dir_all(&cfg.output_dir)
        .with_context(|| format!("cannot create {}", cfg.output_dir.display()))?;
    write_json(
        &cfg.output_dir.join("report.json"),
        &AuditJson {
            version: VERSION,
            command: "audit",
            passed,
            growth,
            monotonicity,
            drift,
            config: cfg,
        },
    )?;
    Ok(Outcome::from_flag(passed))
}

#[derive(Serialize)]
struct ProbeJson<'a> {
    version: &'static str,
    command: &'static str,
    inits: usize,
    seed: u64,
    passed: bool,
    probe: ProbeReport,
    config: &'a RunConfig,
}

/// Solve from `inits` random initial value functions and compare.
pub fn probe_command(cfg: &RunConfig, inits: usize, seed: u64) -> Result<Outcome> {
    let problem = cfg.problem()?;
    let guesses: Vec<InitialGuess> = (0..inits as u64)
        .map(|k| InitialGuess::random(&problem, seed.wrapping_add(k), cfg.probe.amplitude))
        .collect();
    let probe = uniqueness_probe(&problem, &cfg.outer_options(), &guesses).context("probe failed")?;
    let passed = probe.all_converged && probe.within_threshold;
    std::fs::create_dir_all(&cfg.output_dir)
        .with_context(|| format!("cannot create {}", cfg.output_dir.display()))?;
    write_json(
        &cfg.output_dir.join("report.json"),
        &ProbeJson {
            version: VERSION,
            command: "probe-uniqueness",
            inits,
            seed,
            passed,
            probe,
            config: cfg,
        },
    )?;
    Ok(Outcome::from_flag(passed))
}
