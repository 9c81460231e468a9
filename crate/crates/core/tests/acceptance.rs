//! End-to-end acceptance checks. Each test writes one PASS/FAIL line to
//! stdout (bypassing the harness capture) and then asserts.

mod common;

use std::io::Write;
use std::sync::Arc;

use common::{options, Setup};
use mfgc_core::coupler::{
    energy_identity_check, solve, solve_from, uniqueness_probe, InitialDensity, InitialGuess,
    OuterOptions, ProblemSpec, Snapshot,
};
use mfgc_core::domain::{gradient, GradientScheme, GridField, TimeGrid, TorusGrid};
use mfgc_core::drift::{direct_transformed_hamiltonian, equivalence_check, DriftModel, TransformedHamiltonian};
use mfgc_core::legendre::{Hamiltonian, HamiltonianEvaluator, LegendreMode, NumericOptions};
use mfgc_core::models::{
    CrowdKernel, CrowdMotion, ExhaustibleGeneral, ExhaustibleLinear, Lagrangian, LawSummary,
    Potential, PowerLagrangian, RunningCost, SmoothingKernel, SummaryKind, TerminalCost,
    TerminalProfile, WeightProfile,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn verdict(id: usize, name: &str, pass: bool, detail: String) {
    let line = format!(
        "criterion {id:>2} [{}] {name}: {detail}\n",
        if pass { "PASS" } else { "FAIL" }
    );
    let mut out = std::io::stdout().lock();
    let _ = out.write_all(line.as_bytes());
    let _ = out.flush();
    assert!(pass, "criterion {id} failed: {detail}");
}

fn evaluator(model: Arc<dyn Lagrangian>, mode: LegendreMode) -> Arc<dyn Hamiltonian> {
    Arc::new(HamiltonianEvaluator::new(model, mode).unwrap())
}

/// Model family `k` of the shipped set, on `grid`.
fn shipped_model(k: usize, grid: &TorusGrid, rng: &mut ChaCha8Rng) -> (String, Arc<dyn Hamiltonian>) {
    match k % 5 {
        0 => {
            let qp = [1.5, 2.0, 3.0][rng.gen_range(0..3)];
            let pbar = rng.gen_range(-0.5..0.5);
            let m = PowerLagrangian::new(1, qp, [pbar, 0.0], Potential::None).unwrap();
            (format!("power q'={qp}"), evaluator(Arc::new(m), LegendreMode::ClosedForm))
        }
        1 => {
            let eps = rng.gen_range(0.0..2.0);
            (
                format!("exhaustible eps={eps:.2}"),
                evaluator(Arc::new(ExhaustibleLinear::new(eps).unwrap()), LegendreMode::ClosedForm),
            )
        }
        2 => {
            let c = rng.gen_range(0.0..1.0);
            let m = ExhaustibleGeneral::new(
                grid,
                3.0,
                c,
                WeightProfile::Cosine {
                    mean: 1.0,
                    amplitude: 0.3,
                },
            )
            .unwrap();
            (format!("exhaustible general c={c:.2}"), evaluator(Arc::new(m), LegendreMode::Numeric))
        }
        3 => {
            let lambda = rng.gen_range(0.0..1.0);
            let theta = rng.gen_range(0.2..1.0);
            let m = CrowdMotion::new(grid, lambda, theta, 2.0, CrowdKernel::Constant { value: 1.0 }, 2.0)
                .unwrap();
            (
                format!("crowd lambda={lambda:.2} theta={theta:.2}"),
                evaluator(Arc::new(m), LegendreMode::ClosedForm),
            )
        }
        _ => {
            let lambda = rng.gen_range(0.0..1.0);
            let m = CrowdMotion::new(grid, lambda, 0.5, 1.5, CrowdKernel::Gaussian { width: 0.5 }, 2.0)
                .unwrap();
            (
                format!("crowd a'=1.5 lambda={lambda:.2}"),
                evaluator(Arc::new(m), LegendreMode::ClosedForm),
            )
        }
    }
}

#[test]
fn criterion_01_conservation_and_positivity() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst_mass: f64 = 0.0;
    let mut worst_min = f64::INFINITY;
    let mut runs = 0;
    let mut labels = Vec::new();
    for k in 0..20 {
        let n = [16, 24, 32, 48][rng.gen_range(0..4)];
        let radius = rng.gen_range(1.0..4.0);
        let grid = TorusGrid::new(1, radius, n).unwrap();
        let time = TimeGrid::new(rng.gen_range(0.2..1.0), rng.gen_range(5..20)).unwrap();
        let m0 = match rng.gen_range(0..4) {
            0 => InitialDensity::Uniform,
            1 => InitialDensity::Gaussian {
                center: rng.gen_range(-0.3..0.3) * radius,
                width: rng.gen_range(0.05..0.3) * radius,
            },
            2 => InitialDensity::Cosine {
                amplitude: rng.gen_range(-1.0..1.0),
            },
            _ => InitialDensity::Dirac {
                node: rng.gen_range(0..n),
            },
        };
        let kernel = SmoothingKernel::new(0.2 * radius).unwrap();
        let (label, ham) = shipped_model(k, &grid, &mut rng);
        labels.push(label);
        let problem = ProblemSpec::new(
            grid,
            time,
            rng.gen_range(0.05..0.5),
            ham,
            Arc::new(RunningCost::smoothed(rng.gen_range(0.0..0.5), kernel).unwrap()),
            Arc::new(
                TerminalCost::new(
                    TerminalProfile::Cosine {
                        amplitude: rng.gen_range(-0.5..0.5),
                    },
                    rng.gen_range(0.0..0.5),
                    kernel,
                )
                .unwrap(),
            ),
            m0.sample(&grid).unwrap(),
        )
        .unwrap();
        let opts = OuterOptions {
            max_iterations: 15,
            ..options(1e-8)
        };
        let report = solve(&problem, &opts).unwrap();
        let m = &report.solution.m;
        worst_mass = m.masses().iter().fold(worst_mass, |a, v| a.max((v - 1.0).abs()));
        worst_min = worst_min.min(m.min_value());
        runs += 1;
    }
    verdict(
        1,
        "conservation & positivity",
        worst_mass <= 1e-10 && worst_min >= -1e-12,
        format!(
            "{runs} configs [{}], max |mass-1| = {worst_mass:.2e}, min m = {worst_min:.2e}",
            labels[..5].join(", ")
        ),
    );
}

/// `m_n = F^{-1} diag((1 + dt nu lambda_k)^{-n}) F m_0` by an O(N^2) DFT.
fn fourier_heat(m0: &[f64], h: f64, nu: f64, dt: f64, n_steps: usize) -> Vec<f64> {
    let n = m0.len();
    let tau = 2.0 * std::f64::consts::PI / n as f64;
    let mut re = vec![0.0; n];
    let mut im = vec![0.0; n];
    for k in 0..n {
        for (j, v) in m0.iter().enumerate() {
            let ang = tau * ((k * j) % n) as f64;
            re[k] += v * ang.cos();
            im[k] -= v * ang.sin();
        }
        let lam = 4.0 / (h * h) * (0.5 * tau * k as f64).sin().powi(2);
        let damp = (1.0 + dt * nu * lam).powi(-(n_steps as i32));
        re[k] *= damp;
        im[k] *= damp;
    }
    (0..n)
        .map(|j| {
            (0..n)
                .map(|k| {
                    let ang = tau * ((k * j) % n) as f64;
                    re[k] * ang.cos() - im[k] * ang.sin()
                })
                .sum::<f64>()
                / n as f64
        })
        .collect()
}

#[test]
fn criterion_02_heat_kernel_oracle() {
    let setup = Setup {
        points: 64,
        steps: 40,
        m0: InitialDensity::Dirac { node: 20 },
        ..Setup::default()
    };
    let problem = setup.exhaustible(0.5);
    let opts = OuterOptions {
        schedule: vec![0.0],
        ..options(1e-8)
    };
    let report = solve(&problem, &opts).unwrap();
    let grid = problem.grid;
    let dt = problem.time.dt();
    let mut err: f64 = 0.0;
    for n in 0..=problem.time.steps() {
        let oracle = fourier_heat(problem.m0.values(), grid.spacing(), problem.nu, dt, n);
        for (a, b) in report.solution.m.slice(n).values().iter().zip(&oracle) {
            err = err.max((a - b).abs());
        }
    }
    let u_zero = report.solution.u.iter().all(|u| u.values().iter().all(|v| *v == 0.0));
    verdict(
        2,
        "heat-kernel oracle at theta = 0",
        err <= 1e-12 && u_zero && report.converged,
        format!("max |m - Fourier| = {err:.2e}, u identically zero: {u_zero}"),
    );
}

#[test]
fn criterion_03_legendre_oracles() {
    let numeric = NumericOptions::default();
    let x = [0.0, 0.0];
    let ps: Vec<f64> = (0..5).map(|i| -2.0 + i as f64).collect();
    let mut worst: f64 = 0.0;
    let mut count = 0;

    let quad = HamiltonianEvaluator::new(Arc::new(PowerLagrangian::quadratic(1)), LegendreMode::Numeric)
        .unwrap()
        .with_options(numeric);
    for i in 0..100 {
        let p = -3.0 + 6.0 * i as f64 / 99.0;
        let h = quad.hamiltonian(0.0, &x, &[p, 0.0], &LawSummary::independent()).unwrap().value;
        worst = worst.max((h - 0.5 * p * p).abs());
        count += 1;
    }
    for qp in [1.5, 2.0, 3.0] {
        let q = qp / (qp - 1.0);
        for &pbar in &[-0.7, -0.2, 0.4, 1.1] {
            let model = PowerLagrangian::new(1, qp, [pbar, 0.0], Potential::None).unwrap();
            let ev = HamiltonianEvaluator::new(Arc::new(model), LegendreMode::Numeric).unwrap();
            for &p in &ps {
                for shift in [0.0, 0.37, 0.81, 1.6, 2.9] {
                    let p = p + shift;
                    let h = ev.hamiltonian(0.0, &x, &[p, 0.0], &LawSummary::independent()).unwrap().value;
                    let exact = (p - pbar).abs().powf(q) / q;
                    worst = worst.max((h - exact).abs() / exact.abs().max(1.0));
                    count += 1;
                }
            }
        }
    }
    let grid = TorusGrid::new(1, 2.0, 8).unwrap();
    for (lambda, theta) in [(0.5, 0.3), (1.0, 0.7), (2.0, 1.0), (0.0, 0.5)] {
        let model = CrowdMotion::new(&grid, lambda, theta, 2.0, CrowdKernel::Constant { value: 1.0 }, 2.0)
            .unwrap();
        let ev = HamiltonianEvaluator::new(Arc::new(model), LegendreMode::Numeric).unwrap();
        for &p in &ps {
            for v in [-1.0, -0.3, 0.2, 0.9, 1.5] {
                let s = match ev.summary_kind() {
                    SummaryKind::Independent => LawSummary::independent(),
                    _ => LawSummary::with_weighted_mean([v, 0.0], 1.0),
                };
                let h = ev.hamiltonian(0.0, &x, &[p, 0.0], &s).unwrap().value;
                let exact = 0.5 * p * p + theta * lambda * p * v - 0.5 * theta * (1.0 - theta) * lambda * lambda * v * v;
                worst = worst.max((h - exact).abs());
                count += 1;
            }
        }
    }
    verdict(
        3,
        "Legendre oracles",
        worst <= 1e-8,
        format!("{count} lattice points, max deviation {worst:.2e}"),
    );
}

#[test]
fn criterion_04_inner_fixed_point_oracle() {
    let mut worst: f64 = 0.0;
    let mut all_converged = true;
    let mut nodes = 0;
    for eps in [0.0, 0.5, 1.0, 2.0] {
        let problem = Setup::default().exhaustible(eps);
        let report = solve(&problem, &options(1e-11)).unwrap();
        all_converged &= report.converged;
        let sol = &report.solution;
        for (n, law) in sol.laws.iter().enumerate() {
            let p = gradient(&sol.u[n], GradientScheme::Central).unwrap();
            let m = sol.m.slice(n);
            let h = problem.grid.spacing();
            let g: f64 = p.values().iter().zip(m.values()).map(|(a, b)| a * b).sum::<f64>() * h;
            let oracle = (1.0 - (1.0 + eps) * g) / (2.0 + 3.0 * eps);
            worst = worst.max((law.summary().mean_control[0] - oracle).abs());
            nodes += 1;
        }
    }
    verdict(
        4,
        "inner fixed point vs closed-form mean control",
        all_converged && worst <= 1e-9,
        format!("{nodes} time nodes over eps in {{0, 0.5, 1, 2}}, max error {worst:.2e}"),
    );
}

#[test]
fn criterion_05_monotonicity_identity() {
    let grid = TorusGrid::new(1, 2.0, 48).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst_rel: f64 = 0.0;
    let mut crowd_max: f64 = 0.0;
    for eps in [0.25, 0.5, 1.0, 2.0] {
        let model = ExhaustibleLinear::new(eps).unwrap();
        let ham = HamiltonianEvaluator::new(Arc::new(model), LegendreMode::ClosedForm).unwrap();
        for _ in 0..10 {
            let (m1, a1) = mfgc_core::audit::random_law(&grid, &mut rng, 1.0).unwrap();
            let (m2, a2) = mfgc_core::audit::random_law(&grid, &mut rng, 1.0).unwrap();
            let gap = ham.monotonicity_gap(0.0, (&m1, &a1), (&m2, &a2)).unwrap().unwrap();
            let mean = |m: &GridField, a: &GridField| -> f64 {
                m.values().iter().zip(a.values()).map(|(x, y)| x * y).sum::<f64>() * grid.spacing()
            };
            let d = mean(&m1, &a1) - mean(&m2, &a2);
            let expected = eps / (1.0 + eps) * d * d;
            worst_rel = worst_rel.max((gap - expected).abs() / expected.abs().max(1e-300));
        }
    }
    for theta in [0.3, 1.0] {
        let model = CrowdMotion::new(&grid, 0.0, theta, 2.0, CrowdKernel::Constant { value: 1.0 }, 2.0).unwrap();
        let ham = HamiltonianEvaluator::new(Arc::new(model), LegendreMode::ClosedForm).unwrap();
        for _ in 0..10 {
            let (m1, a1) = mfgc_core::audit::random_law(&grid, &mut rng, 1.0).unwrap();
            let (m2, a2) = mfgc_core::audit::random_law(&grid, &mut rng, 1.0).unwrap();
            let gap = ham.monotonicity_gap(0.0, (&m1, &a1), (&m2, &a2)).unwrap().unwrap();
            crowd_max = crowd_max.max(gap.abs());
        }
    }
    verdict(
        5,
        "monotonicity identity",
        worst_rel <= 1e-12 && crowd_max == 0.0,
        format!("exhaustible max relative error {worst_rel:.2e}, separated crowd max |gap| {crowd_max:e}"),
    );
}

fn localized(radius: f64, points: usize) -> Setup {
    Setup {
        radius,
        points,
        horizon: 0.5,
        steps: 20,
        nu: 0.1,
        m0: InitialDensity::Gaussian {
            center: 0.1,
            width: 0.25,
        },
        profile: TerminalProfile::Bump {
            amplitude: 0.5,
            width: 0.3,
        },
        eta_f: 0.0,
        eta_g: 0.2,
        kernel_width: 0.2,
    }
}

#[test]
fn criterion_06_apriori_bounds() {
    let mut ok = true;
    let mut details = Vec::new();
    for (name, build) in [
        ("exhaustible", Box::new(|s: &Setup| s.exhaustible(0.5)) as Box<dyn Fn(&Setup) -> ProblemSpec>),
        ("crowd", Box::new(|s: &Setup| s.crowd(0.5, 0.7, 2.0))),
    ] {
        let mut stats = Vec::new();
        for (radius, points) in [(4.0, 64), (8.0, 128)] {
            let problem = build(&localized(radius, points));
            let report = solve(&problem, &options(1e-9)).unwrap();
            ok &= report.converged && report.diagnostics.apriori_holds;
            let last = report.stages.last().unwrap();
            stats.push([last.u_sup, last.grad_u_sup, last.lambda_inf_max]);
        }
        let change = (0..3)
            .map(|i| (stats[1][i] - stats[0][i]).abs() / stats[0][i])
            .fold(0.0, f64::max);
        ok &= change <= 0.05;
        details.push(format!("{name}: max relative change {change:.2e}"));
    }
    verdict(6, "a priori bounds and radius independence", ok, details.join("; "));
}

fn loglog_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let lx: Vec<f64> = xs.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|v| v.ln()).collect();
    let mx = lx.iter().sum::<f64>() / lx.len() as f64;
    let my = ly.iter().sum::<f64>() / ly.len() as f64;
    let num: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let den: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    num / den
}

#[test]
fn criterion_07_theta_scaling() {
    let mut ok = true;
    let mut details = Vec::new();
    for (name, problem) in [
        ("exhaustible", Setup::default().exhaustible(0.5)),
        ("crowd", Setup::default().crowd(0.5, 0.7, 2.0)),
    ] {
        let report = solve(&problem, &options(1e-9)).unwrap();
        ok &= report.converged;
        let st: Vec<_> = report.stages.iter().filter(|s| s.theta > 0.0).collect();
        let th: Vec<f64> = st.iter().map(|s| s.theta).collect();
        let su = loglog_slope(&th, &st.iter().map(|s| s.u_sup).collect::<Vec<_>>());
        let sl = loglog_slope(&th, &st.iter().map(|s| s.lambda_inf_max).collect::<Vec<_>>());
        ok &= su >= 0.9 && sl >= 0.9;
        details.push(format!("{name}: slope |u| {su:.3}, slope Lambda_inf {sl:.3}"));
    }
    verdict(7, "theta-homotopy scaling", ok, details.join("; "));
}

#[test]
fn criterion_08_uniqueness() {
    let tol = 1e-7;
    let mut ok = true;
    let mut details = Vec::new();
    for (name, problem) in [
        ("exhaustible", Setup::default().exhaustible(0.5)),
        ("crowd", Setup::default().crowd(0.0, 1.0, 2.0)),
    ] {
        let guesses = vec![
            InitialGuess::default(),
            InitialGuess {
                damping: Some(0.3),
                ..InitialGuess::random(&problem, 1, 0.5)
            },
            InitialGuess {
                damping: Some(0.7),
                ..InitialGuess::random(&problem, 2, 1.0)
            },
        ];
        let opts = OuterOptions {
            schedule: vec![1.0],
            max_iterations: 400,
            ..options(tol)
        };
        let probe = uniqueness_probe(&problem, &opts, &guesses).unwrap();
        let worst = probe
            .max_u_distance
            .max(probe.max_m_distance)
            .max(probe.max_mean_control_distance);
        ok &= probe.all_converged && probe.monotone_precondition && worst <= 10.0 * tol;
        details.push(format!("{name}: max pairwise distance {worst:.2e}"));
    }
    // Anti-monotone terminal cost: excluded from the guarantee, reported only.
    let anti = Setup {
        eta_g: -2.0,
        ..Setup::default()
    }
    .crowd(0.0, 1.0, 2.0);
    let probe = uniqueness_probe(
        &anti,
        &OuterOptions {
            schedule: vec![1.0],
            max_iterations: 400,
            ..options(tol)
        },
        &[InitialGuess::default(), InitialGuess::random(&anti, 3, 1.0)],
    )
    .unwrap();
    details.push(format!(
        "negative control (eta < 0): precondition {}, min sampled gap {:.2e}",
        probe.monotone_precondition, probe.min_sampled_gap
    ));
    verdict(8, "uniqueness probe", ok, details.join("; "));
}

#[test]
fn criterion_09_drift_equivalence() {
    let setup = Setup::default();
    let base_model: Arc<dyn Lagrangian> = Arc::new(PowerLagrangian::quadratic(1));
    let base = setup.quadratic();
    let opts = options(1e-9);
    let base_report = solve(&base, &opts).unwrap();

    let identity = ProblemSpec {
        hamiltonian: Arc::new(
            TransformedHamiltonian::new(base_model.clone(), LegendreMode::ClosedForm, DriftModel::Identity)
                .unwrap(),
        ),
        ..base.clone()
    };
    let id_report = solve(&identity, &opts).unwrap();
    let bitwise = id_report
        .solution
        .u
        .iter()
        .zip(&base_report.solution.u)
        .all(|(a, b)| a.values() == b.values())
        && id_report
            .solution
            .m
            .slices()
            .iter()
            .zip(base_report.solution.m.slices())
            .all(|(a, b)| a.values() == b.values());

    let drift = DriftModel::Linear { c: [2.0, 1.0] };
    let linear = ProblemSpec {
        hamiltonian: Arc::new(
            TransformedHamiltonian::new(base_model.clone(), LegendreMode::ClosedForm, drift).unwrap(),
        ),
        ..base.clone()
    };
    let lin_report = solve(&linear, &opts).unwrap();
    let eq = equivalence_check(&linear, &lin_report, base_model.clone(), LegendreMode::ClosedForm, &drift)
        .unwrap();

    let th = TransformedHamiltonian::new(base_model.clone(), LegendreMode::ClosedForm, drift).unwrap();
    let s = LawSummary::neutral(SummaryKind::Independent);
    let mut hb_err: f64 = 0.0;
    for i in 0..41 {
        let p = -4.0 + 0.2 * i as f64;
        let exact = 2.0 * p * p;
        let closed = th.evaluate(0.0, &[0.0, 0.0], &[p, 0.0], &s, None).unwrap().value;
        let direct = direct_transformed_hamiltonian(
            base_model.as_ref(),
            &drift,
            0.0,
            &[0.0, 0.0],
            &[p, 0.0],
            &s,
            None,
            &NumericOptions::default(),
        )
        .unwrap()
        .value;
        hb_err = hb_err.max((closed - exact).abs()).max((direct - exact).abs());
    }
    let pass = bitwise && lin_report.converged && eq.max() <= opts.tolerance && hb_err <= 1e-8;
    verdict(
        9,
        "drift equivalence",
        pass,
        format!(
            "identity bitwise: {bitwise}; linear c=2 residuals {:.2e}; max |H^b(p) - 2p^2| {hb_err:.2e}",
            eq.max()
        ),
    );
}

#[test]
fn criterion_10_scheme_convergence() {
    let amplitude = 0.8;
    let mut errors = Vec::new();
    let mut hs = Vec::new();
    for (points, steps) in [(16, 25), (32, 100), (64, 400)] {
        let setup = Setup {
            points,
            steps,
            horizon: 0.5,
            nu: 0.3,
            m0: InitialDensity::Cosine { amplitude },
            ..Setup::default()
        };
        let problem = setup.exhaustible(0.0);
        let report = solve(
            &problem,
            &OuterOptions {
                schedule: vec![0.0],
                ..options(1e-10)
            },
        )
        .unwrap();
        let a = setup.radius;
        let k = 2.0 * std::f64::consts::PI / a;
        let grid = problem.grid;
        let mut err: f64 = 0.0;
        for n in 0..=steps {
            let t = problem.time.time(n);
            let decay = (-problem.nu * k * k * t).exp();
            for (j, v) in report.solution.m.slice(n).values().iter().enumerate() {
                let x = grid.coords(j)[0];
                let exact = (1.0 + amplitude * decay * (k * x).cos()) / a;
                err = err.max((v - exact).abs());
            }
        }
        errors.push(err);
        hs.push(grid.spacing());
    }
    let orders: Vec<f64> = errors.windows(2).map(|w| (w[0] / w[1]).log2()).collect();
    let pass = orders.iter().all(|o| (o - 2.0).abs() <= 0.3);
    verdict(
        10,
        "scheme convergence under (h, dt) -> (h/2, dt/4)",
        pass,
        format!("errors {:?}, observed orders {orders:.3?}", errors.iter().map(|e| format!("{e:.2e}")).collect::<Vec<_>>()),
    );
}

#[test]
fn criterion_11_energy_identity() {
    let mut worst = f64::INFINITY;
    let mut distinct_min = f64::INFINITY;
    let mut pairs = 0;
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for problem in [Setup::default().exhaustible(0.5), Setup::default().crowd(0.5, 0.7, 2.0)] {
        let opts = OuterOptions {
            schedule: vec![1.0],
            record_iterates: true,
            ..options(1e-9)
        };
        let report = solve_from(&problem, &opts, &InitialGuess::random(&problem, 9, 0.5)).unwrap();
        let mut pool: Vec<&Snapshot> = report.iterates.iter().collect();
        pool.push(&report.solution);
        let self_pair = energy_identity_check(&problem, &report.solution, &report.solution).unwrap();
        worst = worst.min(-self_pair.abs());
        for _ in 0..5 {
            let i = rng.gen_range(0..pool.len());
            let mut j = rng.gen_range(0..pool.len());
            if j == i {
                j = (i + 1) % pool.len();
            }
            let e = energy_identity_check(&problem, pool[i], pool[j]).unwrap();
            worst = worst.min(e);
            let distinct = pool[i]
                .laws
                .iter()
                .zip(&pool[j].laws)
                .any(|(a, b)| a.control().distance_sup(b.control()).unwrap() > 1e-6);
            if distinct {
                distinct_min = distinct_min.min(e);
            }
            pairs += 1;
        }
    }
    verdict(
        11,
        "energy identity",
        worst >= -1e-8 && distinct_min > 0.0,
        format!("{pairs} pairs, min value {worst:.2e}, min over distinct controls {distinct_min:.2e}"),
    );
}
