mod common;

use std::sync::Arc;

use mfgc_core::audit::random_law;
use mfgc_core::domain::{
    divergence, divergence_backward, gradient, gradient_forward, integrate, laplacian, mass,
    GradientScheme, GridField, TorusGrid, Weights,
};
use mfgc_core::drift::DriftModel;
use mfgc_core::fixed_point::{fixed_point_residual, lambda_moment, solve_mu, ControlLaw, FixedPointOptions};
use mfgc_core::legendre::{Hamiltonian, HamiltonianEvaluator, LegendreMode};
use mfgc_core::linalg::dot;
use mfgc_core::models::{
    coupling_monotonicity_gap, CrowdKernel, CrowdMotion, ExhaustibleLinear, Lagrangian, LawSummary,
    Potential, PowerLagrangian, RunningCost, SmoothingKernel,
};
use mfgc_core::pde::{advection_matrix, diffusion_matrix, fpk_step_forward, FpkOptions};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn field(grid: TorusGrid, values: &[f64]) -> GridField {
    let n = grid.num_nodes();
    GridField::scalar(grid, (0..n).map(|k| values[k % values.len()] + 0.1 * k as f64).collect()).unwrap()
}

fn grid_strategy() -> impl Strategy<Value = TorusGrid> {
    (1usize..=2, 0.5f64..5.0, 4usize..24).prop_map(|(d, a, n)| TorusGrid::new(d, a, n).unwrap())
}

fn law(grid: &TorusGrid, seed: u64, amplitude: f64) -> (GridField, GridField) {
    random_law(grid, &mut ChaCha8Rng::seed_from_u64(seed), amplitude).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn shift_equivariance(grid in grid_strategy(), vals in prop::collection::vec(-1.0f64..1.0, 7), shift in 1usize..6, axis in 0usize..2) {
        let axis = axis % grid.dim();
        let u = field(grid, &vals);
        let shifted = u.shifted(axis, shift);
        let g1 = gradient(&shifted, GradientScheme::Central).unwrap();
        let g2 = gradient(&u, GradientScheme::Central).unwrap().shifted(axis, shift);
        prop_assert!(g1.distance_sup(&g2).unwrap() <= 1e-12 * (1.0 + g2.sup_norm()));
        let l1 = laplacian(&shifted).unwrap();
        let l2 = laplacian(&u).unwrap().shifted(axis, shift);
        prop_assert!(l1.distance_sup(&l2).unwrap() <= 1e-12 * (1.0 + l2.sup_norm()));
    }

    #[test]
    fn summation_by_parts(grid in grid_strategy(), a in prop::collection::vec(-1.0f64..1.0, 5), b in prop::collection::vec(-1.0f64..1.0, 9)) {
        let u = field(grid, &a);
        let comps: Vec<[f64; 2]> = (0..grid.num_nodes())
            .map(|k| [b[k % b.len()], if grid.dim() == 2 { b[(k + 3) % b.len()] } else { 0.0 }])
            .collect();
        let f = GridField::from_vectors(grid, &comps).unwrap();
        let div = divergence(&f).unwrap();
        let lhs = integrate(&GridField::scalar(grid, u.values().iter().zip(div.values()).map(|(x, y)| x * y).collect()).unwrap(), Weights::Uniform).unwrap()[0];
        let g = gradient(&u, GradientScheme::Central).unwrap();
        let rhs: f64 = g.values().iter().zip(f.values()).map(|(x, y)| x * y).sum::<f64>() * grid.cell_volume();
        prop_assert!((lhs + rhs).abs() <= 1e-10 * (1.0 + lhs.abs()));
    }

    #[test]
    fn laplacian_is_half_step_divergence_of_gradient(grid in grid_strategy(), a in prop::collection::vec(-1.0f64..1.0, 5)) {
        let u = field(grid, &a);
        let composed = divergence_backward(&gradient_forward(&u).unwrap()).unwrap();
        prop_assert!(composed.distance_sup(&laplacian(&u).unwrap()).unwrap() <= 1e-9 * (1.0 + composed.sup_norm()));
    }

    #[test]
    fn advection_transpose_duality(grid in grid_strategy(), seed in 0u64..1000) {
        let (m, alpha) = law(&grid, seed, 1.5);
        let (phi, _) = law(&grid, seed + 1, 1.0);
        let b = advection_matrix(&grid, &alpha).unwrap();
        let bt = b.transpose();
        let lhs = dot(&b.matvec(m.values()), phi.values());
        let rhs = dot(m.values(), &bt.matvec(phi.values()));
        prop_assert!((lhs - rhs).abs() <= 1e-11 * (1.0 + lhs.abs()));
        let sums = b.column_sums();
        let diff = diffusion_matrix(&grid).column_sums();
        let scale = 1.0 / grid.spacing().powi(2);
        prop_assert!(sums.iter().chain(&diff).all(|s| s.abs() <= 1e-12 * scale * 10.0));
    }

    #[test]
    fn fpk_step_conserves_mass_and_sign(grid in grid_strategy(), seed in 0u64..1000, nu in 0.01f64..1.0, dt in 0.001f64..0.2) {
        let (m, alpha) = law(&grid, seed, 3.0);
        let step = fpk_step_forward(&m, &alpha, nu, dt, 0, &FpkOptions::default()).unwrap();
        prop_assert!((mass(&step.density) - 1.0).abs() <= 1e-10);
        prop_assert!(step.density.values().iter().all(|v| *v >= -1e-12));
    }

    #[test]
    fn conjugacy_and_young_fenchel(q_prime in 1.3f64..4.0, pbar in -1.0f64..1.0, p in -3.0f64..3.0, alpha in -3.0f64..3.0) {
        let model = Arc::new(PowerLagrangian::new(1, q_prime, [pbar, 0.0], Potential::None).unwrap());
        let s = LawSummary::independent();
        for mode in [LegendreMode::ClosedForm, LegendreMode::Numeric] {
            let ev = HamiltonianEvaluator::new(model.clone(), mode).unwrap();
            let hv = ev.hamiltonian(0.0, &[0.0, 0.0], &[p, 0.0], &s).unwrap();
            let la = model.grad_alpha(0.0, &[0.0, 0.0], &hv.control, &s);
            prop_assert!((p + la[0]).abs() <= 1e-8 * (1.0 + p.abs()));
            let young = -p * alpha - model.value(0.0, &[0.0, 0.0], &[alpha, 0.0], &s);
            prop_assert!(young <= hv.value + 1e-9 * (1.0 + hv.value.abs()));
            let at_opt = -p * hv.control[0] - model.value(0.0, &[0.0, 0.0], &hv.control, &s);
            prop_assert!((at_opt - hv.value).abs() <= 1e-8 * (1.0 + hv.value.abs()));
        }
    }

    #[test]
    fn hamiltonian_gradient_is_monotone(eps in 0.0f64..3.0, p1 in -3.0f64..3.0, p2 in -3.0f64..3.0, mean in -1.0f64..1.0) {
        let ev = HamiltonianEvaluator::new(Arc::new(ExhaustibleLinear::new(eps).unwrap()), LegendreMode::ClosedForm).unwrap();
        let s = LawSummary::with_mean_control([mean, 0.0]);
        let h1 = ev.grad_p(0.0, &[0.0, 0.0], &[p1, 0.0], &s).unwrap();
        let h2 = ev.grad_p(0.0, &[0.0, 0.0], &[p2, 0.0], &s).unwrap();
        prop_assert!((h1[0] - h2[0]) * (p1 - p2) >= 0.0);
    }

    #[test]
    fn lagrangian_gap_is_symmetric_and_vanishes_on_diagonal(seed in 0u64..1000, eps in 0.0f64..2.0, lambda in 0.0f64..2.0) {
        let grid = TorusGrid::new(1, 2.0, 24).unwrap();
        let (m1, a1) = law(&grid, seed, 1.0);
        let (m2, a2) = law(&grid, seed + 7, 1.0);
        let hams: Vec<Box<dyn Hamiltonian>> = vec![
            Box::new(HamiltonianEvaluator::new(Arc::new(ExhaustibleLinear::new(eps).unwrap()), LegendreMode::ClosedForm).unwrap()),
            Box::new(HamiltonianEvaluator::new(Arc::new(CrowdMotion::new(&grid, lambda, 0.6, 2.0, CrowdKernel::Constant { value: 1.0 }, 2.0).unwrap()), LegendreMode::ClosedForm).unwrap()),
        ];
        for ham in hams {
            let g12 = ham.monotonicity_gap(0.0, (&m1, &a1), (&m2, &a2)).unwrap().unwrap();
            let g21 = ham.monotonicity_gap(0.0, (&m2, &a2), (&m1, &a1)).unwrap().unwrap();
            let g11 = ham.monotonicity_gap(0.0, (&m1, &a1), (&m1, &a1)).unwrap().unwrap();
            prop_assert!((g12 - g21).abs() <= 1e-13 * (1.0 + g12.abs()));
            prop_assert_eq!(g11, 0.0);
            prop_assert!(g12 >= -1e-12);
        }
    }

    #[test]
    fn smoothed_coupling_is_monotone(seed in 0u64..1000, eta in 0.0f64..3.0, width in 0.05f64..1.0) {
        let grid = TorusGrid::new(1, 2.0, 32).unwrap();
        let (m1, _) = law(&grid, seed, 1.0);
        let (m2, _) = law(&grid, seed + 3, 1.0);
        let f = RunningCost::smoothed(eta, SmoothingKernel::new(width).unwrap()).unwrap();
        prop_assert!(coupling_monotonicity_gap(&f, 0.0, &m1, &m2).unwrap() >= -1e-12);
    }

    #[test]
    fn lambda_moment_of_constant_control(c in -3.0f64..3.0, q in 1.0f64..6.0, seed in 0u64..100) {
        let grid = TorusGrid::new(1, 2.0, 16).unwrap();
        let (m, _) = law(&grid, seed, 1.0);
        let ham = HamiltonianEvaluator::new(Arc::new(PowerLagrangian::quadratic(1)), LegendreMode::ClosedForm).unwrap();
        let l = ControlLaw::new(&ham, m, GridField::from_fn(grid, |_| c)).unwrap();
        prop_assert!((lambda_moment(&l, q) - c.abs()).abs() <= 1e-12 * (1.0 + c.abs()));
        prop_assert_eq!(lambda_moment(&l, f64::INFINITY), c.abs());
    }

    #[test]
    fn drift_round_trips(s in 0.0f64..0.99, c in 0.2f64..5.0, r in 0.0f64..50.0, phi in 0.0f64..6.3) {
        let v = [r * phi.cos(), r * phi.sin()];
        for d in [DriftModel::Identity, DriftModel::Linear { c: [c, 1.0 / c] }, DriftModel::Saturating { s }] {
            let back = d.alpha_star(&d.b(&v));
            let fwd = d.b(&d.alpha_star(&v));
            let scale = 1.0 + r;
            prop_assert!(((back[0] - v[0]).powi(2) + (back[1] - v[1]).powi(2)).sqrt() <= 1e-10 * scale);
            prop_assert!(((fwd[0] - v[0]).powi(2) + (fwd[1] - v[1]).powi(2)).sqrt() <= 1e-10 * scale);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn fixed_point_residual_and_damping_invariance(seed in 0u64..1000, eps in 0.0f64..2.0) {
        let grid = TorusGrid::new(1, 2.0, 32).unwrap();
        let (m, p) = law(&grid, seed, 0.8);
        let ham = HamiltonianEvaluator::new(Arc::new(ExhaustibleLinear::new(eps).unwrap()), LegendreMode::ClosedForm).unwrap();
        let mut controls = Vec::new();
        for omega in [0.3, 0.5, 1.0] {
            let opts = FixedPointOptions { damping: omega, ..FixedPointOptions::default() };
            let (l, _) = solve_mu(0.0, 0, &p, &m, &ham, &opts, None).unwrap();
            prop_assert!(fixed_point_residual(&ham, 0.0, 0, &p, &l).unwrap() <= 10.0 * opts.tolerance);
            controls.push(l.control().clone());
        }
        for c in &controls[1..] {
            prop_assert!(c.distance_sup(&controls[0]).unwrap() <= 10.0 * FixedPointOptions::default().tolerance);
        }
    }

    #[test]
    fn fixed_point_is_unique_from_random_start(seed in 0u64..1000, lambda in 0.0f64..1.5) {
        let grid = TorusGrid::new(1, 2.0, 32).unwrap();
        let (m, p) = law(&grid, seed, 0.8);
        let (_, start) = law(&grid, seed + 11, 2.0);
        let model = CrowdMotion::new(&grid, lambda, 0.7, 2.0, CrowdKernel::Constant { value: 1.0 }, 2.0).unwrap();
        let ham = HamiltonianEvaluator::new(Arc::new(model), LegendreMode::ClosedForm).unwrap();
        let opts = FixedPointOptions::default();
        let (a, _) = solve_mu(0.0, 0, &p, &m, &ham, &opts, None).unwrap();
        let (b, _) = solve_mu(0.0, 0, &p, &m, &ham, &opts, Some(&start)).unwrap();
        prop_assert!(a.control().distance_sup(b.control()).unwrap() <= 10.0 * opts.tolerance);
    }
}

#[test]
fn fixed_point_summary_is_lipschitz_in_p() {
    let grid = TorusGrid::new(1, 2.0, 32).unwrap();
    let (m, p) = law(&grid, 4, 0.8);
    let dir = GridField::from_fn(grid, |x| (2.0 * std::f64::consts::PI * x[0] / 2.0).sin());
    let models: Vec<Arc<dyn Lagrangian>> = vec![
        Arc::new(ExhaustibleLinear::new(0.7).unwrap()),
        Arc::new(CrowdMotion::new(&grid, 0.8, 0.6, 2.0, CrowdKernel::Constant { value: 1.0 }, 2.0).unwrap()),
    ];
    for model in models {
        let ham = HamiltonianEvaluator::new(model, LegendreMode::ClosedForm).unwrap();
        let opts = FixedPointOptions::default();
        let (base, _) = solve_mu(0.0, 0, &p, &m, &ham, &opts, None).unwrap();
        let mut changes = Vec::new();
        for delta in [1e-3, 1e-4] {
            let pd = p.axpy(delta, &dir).unwrap();
            let (l, _) = solve_mu(0.0, 0, &pd, &m, &ham, &opts, None).unwrap();
            let a = l.summary().payload();
            let b = base.summary().payload();
            changes.push(((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt());
        }
        let slope = (changes[0] / changes[1]).log10();
        assert!((slope - 1.0).abs() < 0.05, "slope {slope}");
    }
}
