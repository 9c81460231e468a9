//! Sampled checks of the structural assumptions: growth and coercivity of
//! `L` and `H`, strict convexity, and Lasry-Lions monotonicity of `L`, `f`, `g`.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::domain::{dot, norm, normalize_density, scale, GridField, TorusGrid, Vector};
use crate::error::Result;
use crate::legendre::{Hamiltonian, HamiltonianEvaluator};
use crate::models::{
    conjugate_exponent, coupling_monotonicity_gap, DensityCoupling, LawSummary,
    SummaryKind,
};

/// Sample lattice for [`growth_audit`].
#[derive(Clone, Debug, PartialEq)]
pub struct AuditSpec {
    /// Magnitudes of `alpha` and `p`; every magnitude is taken in each of
    /// `directions` directions (two signs in 1D).
    pub radii: Vec<f64>,
    pub directions: usize,
    /// Magnitudes of the summary payload; `Lambda_{q'}` is set to the same value.
    pub summary_sizes: Vec<f64>,
    pub positions: Vec<f64>,
    /// Override of the model's `(q', C0)`.
    pub declared: Option<(f64, f64)>,
}

impl Default for AuditSpec {
    fn default() -> Self {
        Self {
            radii: vec![0.0, 0.1, 0.5, 1.0, 2.0, 5.0, 10.0, 30.0, 100.0],
            directions: 4,
            summary_sizes: vec![0.0, 0.5, 2.0],
            positions: vec![-0.7, 0.0, 0.3],
            declared: None,
        }
    }
}

impl AuditSpec {
    fn vectors(&self, dim: usize) -> Vec<Vector> {
        let mut out = Vec::new();
        for &r in &self.radii {
            if r == 0.0 {
                out.push([0.0, 0.0]);
                continue;
            }
            if dim == 1 {
                out.push([r, 0.0]);
                out.push([-r, 0.0]);
            } else {
                for k in 0..self.directions.max(1) {
                    let phi = 2.0 * PI * (k as f64 + 0.25) / self.directions.max(1) as f64;
                    out.push([r * phi.cos(), r * phi.sin()]);
                }
            }
        }
        out
    }

    fn summaries(&self, kind: SummaryKind, dim: usize, q_prime: f64) -> Vec<LawSummary> {
        let mut out = Vec::new();
        for &v in &self.summary_sizes {
            let payload = if dim == 1 { [v, 0.0] } else { [v, -0.5 * v] };
            let mut s = LawSummary::neutral(kind);
            match kind {
                SummaryKind::Independent => {}
                SummaryKind::MeanControl => s.mean_control = payload,
                SummaryKind::WeightedMean => s.weighted_mean = payload,
                SummaryKind::WeightedControl => s.weighted_control = payload,
            }
            let lam = norm(&payload);
            out.push(s.with_moments(q_prime, lam, lam));
            if kind != SummaryKind::Independent && v > 0.0 {
                let mut flipped = s;
                match kind {
                    SummaryKind::MeanControl => flipped.mean_control = scale(-1.0, &payload),
                    SummaryKind::WeightedMean => flipped.weighted_mean = scale(-1.0, &payload),
                    SummaryKind::WeightedControl => {
                        flipped.weighted_control = scale(-1.0, &payload)
                    }
                    SummaryKind::Independent => {}
                }
                out.push(flipped.with_moments(q_prime, lam, lam));
            }
        }
        out
    }
}

/// Worst slack of one inequality over the samples; negative means violated.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Margin {
    pub worst: f64,
    /// `|alpha|` or `|p|` of the worst sample.
    pub at_radius: f64,
    pub passed: bool,
}

impl Margin {
    fn new() -> Self {
        Self {
            worst: f64::INFINITY,
            at_radius: 0.0,
            passed: true,
        }
    }

    fn record(&mut self, slack: f64, radius: f64) {
        if slack < self.worst {
            self.worst = slack;
            self.at_radius = radius;
        }
        self.passed = self.worst >= -1e-9;
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GrowthAudit {
    pub model: &'static str,
    pub q_prime: f64,
    pub c0: f64,
    pub samples: usize,
    pub coercivity: Margin,
    pub bound: Margin,
    pub lx_bound: Margin,
    pub hp_bound: Margin,
    pub h_bound: Margin,
    pub h_coercivity: Margin,
    pub hx_bound: Margin,
    /// Midpoint strict convexity slack of `alpha -> L`.
    pub convexity: Margin,
    /// Largest `|p + L_alpha(alpha*)|` over the samples.
    pub conjugacy_error: f64,
    pub passed: bool,
}

/// Check the growth, coercivity and convexity inequalities of `L` and its
/// conjugate on the lattice of `spec`, with the declared `(q', C0)`.
pub fn growth_audit(evaluator: &HamiltonianEvaluator, spec: &AuditSpec) -> Result<GrowthAudit> {
    let model = evaluator.model().as_ref();
    let (qp, c) = spec
        .declared
        .unwrap_or((model.exponent(), model.growth_constant()));
    let q = conjugate_exponent(qp);
    let dim = model.dim();
    let vectors = spec.vectors(dim);
    let summaries = spec.summaries(model.summary_kind(), dim, qp);
    let t = 0.0;

    let mut out = GrowthAudit {
        model: model.name(),
        q_prime: qp,
        c0: c,
        samples: 0,
        coercivity: Margin::new(),
        bound: Margin::new(),
        lx_bound: Margin::new(),
        hp_bound: Margin::new(),
        h_bound: Margin::new(),
        h_coercivity: Margin::new(),
        hx_bound: Margin::new(),
        convexity: Margin::new(),
        conjugacy_error: 0.0,
        passed: true,
    };
    for &x0 in &spec.positions {
        let x = if dim == 1 { [x0, 0.0] } else { [x0, -x0] };
        for s in &summaries {
            let lam = s.moment;
            let lam_qp = lam.powf(qp);
            for a in &vectors {
                let r = norm(a);
                let l = model.value(t, &x, a, s);
                let scale_l = 1.0 + r.powf(qp) + lam_qp;
                out.coercivity
                    .record((l - (r.powf(qp) / c - c * (1.0 + lam_qp))) / scale_l, r);
                out.bound.record((c * scale_l - l.abs()) / scale_l, r);
                out.lx_bound
                    .record((c * scale_l - norm(&model.grad_x(t, &x, a, s))) / scale_l, r);
                out.samples += 1;
            }
            for (i, a1) in vectors.iter().enumerate() {
                for a2 in vectors.iter().skip(i + 1).step_by(3) {
                    let d = [a1[0] - a2[0], a1[1] - a2[1]];
                    let dn = norm(&d);
                    if dn == 0.0 {
                        continue;
                    }
                    let mid = scale(0.5, &[a1[0] + a2[0], a1[1] + a2[1]]);
                    let l1 = model.value(t, &x, a1, s);
                    let l2 = model.value(t, &x, a2, s);
                    let gap = 0.5 * (l1 + l2) - model.value(t, &x, &mid, s);
                    let size = 1.0 + l1.abs().max(l2.abs());
                    // strict: positive gap beyond rounding
                    out.convexity.record(gap / size - 1e-13, norm(a1).max(norm(a2)));
                }
            }
            let mut warm: Option<Vector> = None;
            for p in &vectors {
                let r = norm(p);
                let hv = evaluator.hamiltonian_warm(t, &x, p, s, warm.as_ref())?;
                warm = Some(hv.control);
                let hp = scale(-1.0, &hv.control);
                let la = model.grad_alpha(t, &x, &hv.control, s);
                out.conjugacy_error = out
                    .conjugacy_error
                    .max(norm(&[p[0] + la[0], p[1] + la[1]]) / (1.0 + r));
                let hx = evaluator.grad_x(t, &x, p, s)?;
                let scale_hp = 1.0 + r.powf(q - 1.0) + lam;
                let scale_h = 1.0 + r.powf(q) + lam_qp;
                out.hp_bound.record((c * scale_hp - norm(&hp)) / scale_hp, r);
                out.h_bound.record((c * scale_h - hv.value.abs()) / scale_h, r);
                out.h_coercivity.record(
                    (dot(p, &hp) - hv.value - (r.powf(q) / c - c * (1.0 + lam_qp))) / scale_h,
                    r,
                );
                out.hx_bound.record((c * scale_h - norm(&hx)) / scale_h, r);
            }
        }
    }
    out.passed = [
        out.coercivity,
        out.bound,
        out.lx_bound,
        out.hp_bound,
        out.h_bound,
        out.h_coercivity,
        out.hx_bound,
        out.convexity,
    ]
    .iter()
    .all(|m| m.passed)
        && out.conjugacy_error <= 1e-8;
    Ok(out)
}

/// Random smooth positive density and control field.
pub fn random_law(grid: &TorusGrid, rng: &mut ChaCha8Rng, amplitude: f64) -> Result<(GridField, GridField)> {
    let modes = |rng: &mut ChaCha8Rng| -> Vec<(f64, f64, f64)> {
        (1..=3)
            .map(|k| (rng.gen_range(-1.0..1.0), rng.gen_range(0.0..2.0 * PI), k as f64))
            .collect()
    };
    let eval = |modes: &[(f64, f64, f64)], x: &Vector| -> f64 {
        modes
            .iter()
            .map(|(c, phi, k)| {
                (0..grid.dim())
                    .map(|i| c * (2.0 * PI * k * x[i] / grid.radius() + phi).cos())
                    .sum::<f64>()
            })
            .sum()
    };
    let dm = modes(rng);
    let raw = GridField::from_fn(*grid, |x| (0.5 * eval(&dm, x)).exp());
    let m = normalize_density(raw)?;
    let per_axis: Vec<Vec<(f64, f64, f64)>> = (0..grid.dim()).map(|_| modes(rng)).collect();
    let offset: Vec<f64> = (0..grid.dim()).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let vectors: Vec<Vector> = (0..grid.num_nodes())
        .map(|k| {
            let x = grid.coords(k);
            let mut v = [0.0; 2];
            for i in 0..grid.dim() {
                v[i] = amplitude * (offset[i] + eval(&per_axis[i], &x));
            }
            v
        })
        .collect();
    Ok((m, GridField::from_vectors(*grid, &vectors)?))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MonotonicityAudit {
    pub pairs: usize,
    pub lagrangian_gap_min: Option<f64>,
    pub lagrangian_gap_max: Option<f64>,
    pub running_gap_min: f64,
    pub terminal_gap_min: f64,
    /// Number of sampled gaps below `-1e-10`.
    pub negative: usize,
    pub passed: bool,
}

/// Sample `pairs` random law pairs and evaluate the Lasry-Lions gaps of the
/// Lagrangian and of the running and terminal couplings.
pub fn monotonicity_audit(
    ham: &dyn Hamiltonian,
    running: &dyn DensityCoupling,
    terminal: &dyn DensityCoupling,
    grid: &TorusGrid,
    pairs: usize,
    seed: u64,
) -> Result<MonotonicityAudit> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut lmin: Option<f64> = None;
    let mut lmax: Option<f64> = None;
    let mut fmin = f64::INFINITY;
    let mut gmin = f64::INFINITY;
    let mut negative = 0;
    for _ in 0..pairs {
        let (m1, a1) = random_law(grid, &mut rng, 1.0)?;
        let (m2, a2) = random_law(grid, &mut rng, 1.0)?;
        if let Some(g) = ham.monotonicity_gap(0.0, (&m1, &a1), (&m2, &a2)) {
            let g = g?;
            lmin = Some(lmin.map_or(g, |v| v.min(g)));
            lmax = Some(lmax.map_or(g, |v| v.max(g)));
            negative += usize::from(g < -1e-10);
        }
        let f = coupling_monotonicity_gap(running, 0.0, &m1, &m2)?;
        let g = coupling_monotonicity_gap(terminal, 0.0, &m1, &m2)?;
        negative += usize::from(f < -1e-10) + usize::from(g < -1e-10);
        fmin = fmin.min(f);
        gmin = gmin.min(g);
    }
    Ok(MonotonicityAudit {
        pairs,
        lagrangian_gap_min: lmin,
        lagrangian_gap_max: lmax,
        running_gap_min: if pairs == 0 { 0.0 } else { fmin },
        terminal_gap_min: if pairs == 0 { 0.0 } else { gmin },
        negative,
        passed: negative == 0,
    })
}
