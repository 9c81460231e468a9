//! Run configuration: flat `[section]` tables of `key = value` lines.
//!
//! Required keys are `model.kind`, `domain.dim`, `domain.radius`,
//! `domain.points`, `time.horizon`, `time.steps` and `physics.nu`; every
//! other key has a default that is materialized in [`RunConfig`].

use std::path::{Path, PathBuf};
use std::sync::Arc;

use mfgc_core::coupler::{InitialDensity, OuterOptions, OuterStrategy, ProblemSpec};
use mfgc_core::domain::{TimeGrid, TorusGrid};
use mfgc_core::drift::{DriftModel, TransformedHamiltonian};
use mfgc_core::fixed_point::FixedPointOptions;
use mfgc_core::legendre::{Hamiltonian, HamiltonianEvaluator, LegendreMode};
use mfgc_core::models::{
    CrowdKernel, CrowdMotion, DensityCoupling, ExhaustibleGeneral, ExhaustibleLinear, Lagrangian,
    Potential, PowerLagrangian, RunningCost, SmoothingKernel, TerminalCost, TerminalProfile,
    WeightProfile,
};
use mfgc_core::pde::{FpkOptions, NegativityPolicy};
use mfgc_core::MfgcError;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("missing required keys: {}", .0.join(", "))]
    Missing(Vec<String>),

    #[error("invalid value for `{key}`: must satisfy {constraint}")]
    Invalid { key: String, constraint: String },

    #[error("line {line}: key `{key}` is not used by model kind `{kind}`")]
    Unused {
        key: String,
        kind: String,
        line: usize,
    },
}

impl From<MfgcError> for ConfigError {
    fn from(e: MfgcError) -> Self {
        match e {
            MfgcError::Parameter { name, constraint } => ConfigError::Invalid {
                key: name.to_string(),
                constraint,
            },
            other => ConfigError::Invalid {
                key: "config".into(),
                constraint: other.to_string(),
            },
        }
    }
}

type Result<T> = std::result::Result<T, ConfigError>;

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct RawConfig {
    model: RawModel,
    domain: RawDomain,
    time: RawTime,
    physics: RawPhysics,
    solver: RawSolver,
    drift: RawDrift,
    output: RawOutput,
    probe: RawProbe,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct RawModel {
    kind: Option<String>,
    legendre: Option<LegendreMode>,
    epsilon: Option<f64>,
    q_prime: Option<f64>,
    psi: Option<f64>,
    weight_mean: Option<f64>,
    weight_amplitude: Option<f64>,
    lambda: Option<f64>,
    theta: Option<f64>,
    a_prime: Option<f64>,
    q1: Option<f64>,
    kernel: Option<String>,
    kernel_value: Option<f64>,
    kernel_width: Option<f64>,
    p_bar: Option<Vec<f64>>,
    potential_amplitude: Option<f64>,
    potential_wavelength: Option<f64>,
    potential_phase: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct RawDomain {
    dim: Option<usize>,
    radius: Option<f64>,
    points: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct RawTime {
    horizon: Option<f64>,
    steps: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct RawPhysics {
    nu: Option<f64>,
    m0: Option<String>,
    m0_amplitude: Option<f64>,
    m0_center: Option<f64>,
    m0_width: Option<f64>,
    m0_node: Option<usize>,
    running_eta: Option<f64>,
    terminal: Option<String>,
    terminal_amplitude: Option<f64>,
    terminal_width: Option<f64>,
    terminal_eta: Option<f64>,
    smoothing_width: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct RawSolver {
    tolerance: Option<f64>,
    max_iterations: Option<usize>,
    strategy: Option<String>,
    damping: Option<f64>,
    schedule: Option<Vec<f64>>,
    stall_fallback: Option<bool>,
    inner_tolerance: Option<f64>,
    inner_max_iterations: Option<usize>,
    inner_damping: Option<f64>,
    negativity: Option<NegativityPolicy>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct RawDrift {
    kind: Option<String>,
    c: Option<Vec<f64>>,
    s: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct RawOutput {
    dir: Option<PathBuf>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct RawProbe {
    seed: Option<u64>,
    inits: Option<usize>,
    amplitude: Option<f64>,
    pairs: Option<usize>,
}

/// Lagrangian selector with its parameters.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelConfig {
    ExhaustibleLinear {
        epsilon: f64,
    },
    ExhaustibleGeneral {
        q_prime: f64,
        psi: f64,
        weight_mean: f64,
        weight_amplitude: f64,
    },
    CrowdMotion {
        lambda: f64,
        theta: f64,
        a_prime: f64,
        q1: f64,
        kernel: CrowdKernel,
    },
    Power {
        q_prime: f64,
        p_bar: Vec<f64>,
        potential: Potential,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PhysicsConfig {
    pub nu: f64,
    pub m0: InitialDensity,
    pub running_eta: f64,
    pub terminal: TerminalProfile,
    pub terminal_eta: f64,
    pub smoothing_width: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SolverConfig {
    pub tolerance: f64,
    pub max_iterations: usize,
    pub strategy: OuterStrategy,
    pub schedule: Vec<f64>,
    pub stall_fallback: bool,
    pub inner_tolerance: f64,
    pub inner_max_iterations: usize,
    pub inner_damping: f64,
    pub negativity: NegativityPolicy,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ProbeConfig {
    pub seed: u64,
    pub inits: usize,
    /// Size of the random initial value functions.
    pub amplitude: f64,
    /// Random law pairs sampled by the monotonicity audit.
    pub pairs: usize,
}

/// Fully materialized configuration; echoed into every report.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub legendre: LegendreMode,
    pub dim: usize,
    pub radius: f64,
    pub points: usize,
    pub horizon: f64,
    pub steps: usize,
    pub physics: PhysicsConfig,
    pub solver: SolverConfig,
    pub drift: DriftModel,
    pub output_dir: PathBuf,
    pub probe: ProbeConfig,
}

const REQUIRED: [&str; 7] = [
    "model.kind",
    "domain.dim",
    "domain.radius",
    "domain.points",
    "time.horizon",
    "time.steps",
    "physics.nu",
];

/// 1-based line of `key` inside `[section]`, if present.
fn key_line(source: &str, section: &str, key: &str) -> Option<usize> {
    let mut current = String::new();
    for (i, line) in source.lines().enumerate() {
        let t = line.trim();
        if let Some(name) = t.strip_prefix('[').and_then(|r| r.strip_suffix(']')) {
            current = name.trim().to_string();
        } else if current == section {
            if let Some((k, _)) = t.split_once('=') {
                if k.trim() == key {
                    return Some(i + 1);
                }
            }
        }
    }
    None
}

fn line_column(source: &str, offset: usize) -> (usize, usize) {
    let before = &source[..offset.min(source.len())];
    let line = before.matches('\n').count() + 1;
    let column = before.len() - before.rfind('\n').map_or(0, |i| i + 1) + 1;
    (line, column)
}

fn invalid(key: &str, constraint: &str) -> ConfigError {
    ConfigError::Invalid {
        key: key.into(),
        constraint: constraint.into(),
    }
}

fn vector(key: &str, v: &[f64], dim: usize) -> Result<[f64; 2]> {
    match v {
        [a] if dim == 1 => Ok([*a, 0.0]),
        [a, b] if dim == 2 => Ok([*a, *b]),
        _ => Err(invalid(key, &format!("exactly {dim} entries"))),
    }
}

/// Read and validate the configuration at `path`. A relative output
/// directory is resolved against the directory holding the file.
pub fn parse_config(path: &Path) -> Result<RunConfig> {
    let source = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut cfg = parse_str(&source)?;
    if cfg.output_dir.is_relative() {
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.output_dir = base.join(&cfg.output_dir);
    }
    Ok(cfg)
}

pub fn parse_str(source: &str) -> Result<RunConfig> {
    let raw: RawConfig = toml::from_str(source).map_err(|e| {
        let (line, column) = e.span().map_or((0, 0), |s| line_column(source, s.start));
        ConfigError::Parse {
            line,
            column,
            message: e.message().to_string(),
        }
    })?;

    let present = [
        raw.model.kind.is_some(),
        raw.domain.dim.is_some(),
        raw.domain.radius.is_some(),
        raw.domain.points.is_some(),
        raw.time.horizon.is_some(),
        raw.time.steps.is_some(),
        raw.physics.nu.is_some(),
    ];
    let missing: Vec<String> = REQUIRED
        .iter()
        .zip(present)
        .filter(|(_, p)| !p)
        .map(|(k, _)| k.to_string())
        .collect();
    if !missing.is_empty() {
        return Err(ConfigError::Missing(missing));
    }

    let dim = raw.domain.dim.unwrap();
    if !(1..=2).contains(&dim) {
        return Err(invalid("domain.dim", "dim in {1, 2}"));
    }
    let m = &raw.model;
    let kind = m.kind.clone().unwrap();
    let used: &[&str] = match kind.as_str() {
        "exhaustible_linear" => &["epsilon"],
        "exhaustible_general" => &["q_prime", "psi", "weight_mean", "weight_amplitude"],
        "crowd_motion" => &["lambda", "theta", "a_prime", "q1", "kernel", "kernel_value", "kernel_width"],
        "power" => &["q_prime", "p_bar", "potential_amplitude", "potential_wavelength", "potential_phase"],
        _ => {
            return Err(invalid(
                "model.kind",
                "one of exhaustible_linear, exhaustible_general, crowd_motion, power",
            ))
        }
    };
    let set = [
        ("epsilon", m.epsilon.is_some()),
        ("q_prime", m.q_prime.is_some()),
        ("psi", m.psi.is_some()),
        ("weight_mean", m.weight_mean.is_some()),
        ("weight_amplitude", m.weight_amplitude.is_some()),
        ("lambda", m.lambda.is_some()),
        ("theta", m.theta.is_some()),
        ("a_prime", m.a_prime.is_some()),
        ("q1", m.q1.is_some()),
        ("kernel", m.kernel.is_some()),
        ("kernel_value", m.kernel_value.is_some()),
        ("kernel_width", m.kernel_width.is_some()),
        ("p_bar", m.p_bar.is_some()),
        ("potential_amplitude", m.potential_amplitude.is_some()),
        ("potential_wavelength", m.potential_wavelength.is_some()),
        ("potential_phase", m.potential_phase.is_some()),
    ];
    if let Some((key, _)) = set.iter().find(|(k, s)| *s && !used.contains(k)) {
        return Err(ConfigError::Unused {
            key: key.to_string(),
            kind,
            line: key_line(source, "model", key).unwrap_or(0),
        });
    }

    let model = match kind.as_str() {
        "exhaustible_linear" => ModelConfig::ExhaustibleLinear {
            epsilon: m.epsilon.unwrap_or(0.5),
        },
        "exhaustible_general" => ModelConfig::ExhaustibleGeneral {
            q_prime: m.q_prime.unwrap_or(3.0),
            psi: m.psi.unwrap_or(0.5),
            weight_mean: m.weight_mean.unwrap_or(1.0),
            weight_amplitude: m.weight_amplitude.unwrap_or(0.3),
        },
        "crowd_motion" => ModelConfig::CrowdMotion {
            lambda: m.lambda.unwrap_or(0.5),
            theta: m.theta.unwrap_or(0.7),
            a_prime: m.a_prime.unwrap_or(2.0),
            q1: m.q1.unwrap_or(2.0),
            kernel: match m.kernel.as_deref().unwrap_or("constant") {
                "constant" => CrowdKernel::Constant {
                    value: m.kernel_value.unwrap_or(1.0),
                },
                "gaussian" => CrowdKernel::Gaussian {
                    width: m.kernel_width.unwrap_or(0.5),
                },
                _ => return Err(invalid("model.kernel", "one of constant, gaussian")),
            },
        },
        _ => ModelConfig::Power {
            q_prime: m.q_prime.unwrap_or(2.0),
            p_bar: m.p_bar.clone().unwrap_or_else(|| vec![0.0; dim]),
            potential: match m.potential_amplitude {
                None | Some(0.0) => Potential::None,
                Some(amplitude) => Potential::Cosine {
                    amplitude,
                    wavelength: m.potential_wavelength.unwrap_or(1.0),
                    phase: m.potential_phase.unwrap_or(0.0),
                },
            },
        },
    };
    let legendre = m.legendre.unwrap_or(match model {
        ModelConfig::ExhaustibleGeneral { .. } => LegendreMode::Numeric,
        _ => LegendreMode::ClosedForm,
    });

    let p = &raw.physics;
    let m0 = match p.m0.as_deref().unwrap_or("cosine") {
        "uniform" => InitialDensity::Uniform,
        "gaussian" => InitialDensity::Gaussian {
            center: p.m0_center.unwrap_or(0.0),
            width: p.m0_width.unwrap_or(0.5),
        },
        "cosine" => InitialDensity::Cosine {
            amplitude: p.m0_amplitude.unwrap_or(0.5),
        },
        "dirac" => InitialDensity::Dirac {
            node: p.m0_node.unwrap_or(0),
        },
        _ => return Err(invalid("physics.m0", "one of uniform, gaussian, cosine, dirac")),
    };
    let terminal = match p.terminal.as_deref().unwrap_or("cosine") {
        "zero" => TerminalProfile::Zero,
        "cosine" => TerminalProfile::Cosine {
            amplitude: p.terminal_amplitude.unwrap_or(0.3),
        },
        "bump" => TerminalProfile::Bump {
            amplitude: p.terminal_amplitude.unwrap_or(0.3),
            width: p.terminal_width.unwrap_or(0.5),
        },
        _ => return Err(invalid("physics.terminal", "one of zero, cosine, bump")),
    };
    let physics = PhysicsConfig {
        nu: p.nu.unwrap(),
        m0,
        running_eta: p.running_eta.unwrap_or(0.2),
        terminal,
        terminal_eta: p.terminal_eta.unwrap_or(0.2),
        smoothing_width: p.smoothing_width.unwrap_or(0.3),
    };

    let s = &raw.solver;
    let strategy = match s.strategy.as_deref().unwrap_or("picard") {
        "picard" => OuterStrategy::DampedPicard {
            omega: s.damping.unwrap_or(0.5),
        },
        "fictitious_play" => OuterStrategy::FictitiousPlay,
        _ => return Err(invalid("solver.strategy", "one of picard, fictitious_play")),
    };
    let inner = FixedPointOptions::default();
    let solver = SolverConfig {
        tolerance: s.tolerance.unwrap_or(1e-8),
        max_iterations: s.max_iterations.unwrap_or(200),
        strategy,
        schedule: s.schedule.clone().unwrap_or_else(|| vec![0.0, 0.25, 0.5, 0.75, 1.0]),
        stall_fallback: s.stall_fallback.unwrap_or(true),
        inner_tolerance: s.inner_tolerance.unwrap_or(inner.tolerance),
        inner_max_iterations: s.inner_max_iterations.unwrap_or(inner.max_iterations),
        inner_damping: s.inner_damping.unwrap_or(inner.damping),
        negativity: s.negativity.unwrap_or(FpkOptions::default().negativity),
    };

    let d = &raw.drift;
    let drift = match d.kind.as_deref().unwrap_or("identity") {
        "identity" => DriftModel::Identity,
        "linear" => DriftModel::Linear {
            c: vector("drift.c", d.c.as_deref().unwrap_or(&[1.0, 1.0][..dim]), dim)?,
        },
        "saturating" => DriftModel::Saturating {
            s: d.s.unwrap_or(0.5),
        },
        "cubic" => DriftModel::Cubic,
        _ => return Err(invalid("drift.kind", "one of identity, linear, saturating, cubic")),
    };

    let q = &raw.probe;
    let cfg = RunConfig {
        model,
        legendre,
        dim,
        radius: raw.domain.radius.unwrap(),
        points: raw.domain.points.unwrap(),
        horizon: raw.time.horizon.unwrap(),
        steps: raw.time.steps.unwrap(),
        physics,
        solver,
        drift,
        output_dir: raw.output.dir.clone().unwrap_or_else(|| PathBuf::from("out")),
        probe: ProbeConfig {
            seed: q.seed.unwrap_or(0),
            inits: q.inits.unwrap_or(4),
            amplitude: q.amplitude.unwrap_or(0.5),
            pairs: q.pairs.unwrap_or(20),
        },
    };
    cfg.validate()?;
    Ok(cfg)
}

/// Problem pieces without the drift transform.
pub struct Components {
    pub grid: TorusGrid,
    pub model: Arc<dyn Lagrangian>,
    pub running: Arc<dyn DensityCoupling>,
    pub terminal: Arc<dyn DensityCoupling>,
}

impl RunConfig {
    fn validate(&self) -> Result<()> {
        if !(self.physics.nu > 0.0) {
            return Err(invalid("physics.nu", "nu > 0"));
        }
        if self.probe.inits < 2 {
            return Err(invalid("probe.inits", "inits ≥ 2"));
        }
        if !(self.probe.amplitude >= 0.0) {
            return Err(invalid("probe.amplitude", "amplitude ≥ 0"));
        }
        if let ModelConfig::Power { p_bar, .. } = &self.model {
            vector("model.p_bar", p_bar, self.dim)?;
        }
        self.drift.validate(self.dim)?;
        self.outer_options().validate()?;
        self.problem()?;
        Ok(())
    }

    pub fn grid(&self) -> Result<TorusGrid> {
        Ok(TorusGrid::new(self.dim, self.radius, self.points)?)
    }

    pub fn components(&self) -> Result<Components> {
        let grid = self.grid()?;
        let model: Arc<dyn Lagrangian> = match &self.model {
            ModelConfig::ExhaustibleLinear { epsilon } => Arc::new(ExhaustibleLinear::new(*epsilon)?),
            ModelConfig::ExhaustibleGeneral {
                q_prime,
                psi,
                weight_mean,
                weight_amplitude,
            } => Arc::new(ExhaustibleGeneral::new(
                &grid,
                *q_prime,
                *psi,
                WeightProfile::Cosine {
                    mean: *weight_mean,
                    amplitude: *weight_amplitude,
                },
            )?),
            ModelConfig::CrowdMotion {
                lambda,
                theta,
                a_prime,
                q1,
                kernel,
            } => Arc::new(CrowdMotion::new(&grid, *lambda, *theta, *a_prime, *kernel, *q1)?),
            ModelConfig::Power {
                q_prime,
                p_bar,
                potential,
            } => Arc::new(PowerLagrangian::new(
                self.dim,
                *q_prime,
                vector("model.p_bar", p_bar, self.dim)?,
                *potential,
            )?),
        };
        let kernel = SmoothingKernel::new(self.physics.smoothing_width)?;
        let running: Arc<dyn DensityCoupling> = if self.physics.running_eta == 0.0 {
            Arc::new(RunningCost::zero())
        } else {
            Arc::new(RunningCost::smoothed(self.physics.running_eta, kernel)?)
        };
        let terminal = Arc::new(TerminalCost::new(
            self.physics.terminal,
            self.physics.terminal_eta,
            kernel,
        )?);
        Ok(Components {
            grid,
            model,
            running,
            terminal,
        })
    }

    pub fn evaluator(&self, model: Arc<dyn Lagrangian>) -> Result<HamiltonianEvaluator> {
        Ok(HamiltonianEvaluator::new(model, self.legendre)?)
    }

    /// The drift-transformed Hamiltonian, or `None` for the identity drift.
    pub fn transformed(&self, model: Arc<dyn Lagrangian>) -> Result<Option<Arc<TransformedHamiltonian>>> {
        if self.drift == DriftModel::Identity {
            return Ok(None);
        }
        TransformedHamiltonian::new(model, self.legendre, self.drift)
            .map(|h| Some(Arc::new(h)))
            .map_err(|e| match e {
                MfgcError::Drift(msg) => invalid("drift.kind", &msg),
                other => other.into(),
            })
    }

    pub fn problem(&self) -> Result<ProblemSpec> {
        let c = self.components()?;
        let hamiltonian: Arc<dyn Hamiltonian> = match self.transformed(c.model.clone())? {
            Some(h) => h,
            None => Arc::new(self.evaluator(c.model)?),
        };
        Ok(ProblemSpec::new(
            c.grid,
            TimeGrid::new(self.horizon, self.steps)?,
            self.physics.nu,
            hamiltonian,
            c.running,
            c.terminal,
            self.physics.m0.sample(&c.grid)?,
        )?)
    }

    pub fn outer_options(&self) -> OuterOptions {
        let s = &self.solver;
        let defaults = OuterOptions::default();
        OuterOptions {
            strategy: s.strategy,
            tolerance: s.tolerance,
            max_iterations: s.max_iterations,
            schedule: s.schedule.clone(),
            stall_fallback: s.stall_fallback,
            inner: FixedPointOptions {
                damping: s.inner_damping,
                tolerance: s.inner_tolerance,
                max_iterations: s.inner_max_iterations,
                ..defaults.inner
            },
            fpk: FpkOptions {
                negativity: s.negativity,
                ..defaults.fpk
            },
            ..defaults
        }
    }
}
