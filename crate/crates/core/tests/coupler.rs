mod common;

use common::{options, Setup};
use mfgc_core::coupler::{
    energy_identity_check, residuals, solve, solve_from, uniqueness_probe, InitialGuess,
    OuterOptions, OuterStrategy,
};
use mfgc_core::domain::GridField;
use mfgc_core::MfgcError;

#[test]
fn exhaustible_solve_converges() {
    let p = Setup::default().exhaustible(0.5);
    let r = solve(&p, &options(1e-8)).unwrap();
    assert!(r.converged);
    assert!(r.residuals.max() <= 1e-8);
    assert_eq!(r.stages.len(), 5);
    assert!(r.stages.iter().all(|s| s.converged));
    assert!(r.diagnostics.mass_error_max <= 1e-12);
    assert!(r.diagnostics.density_min >= 0.0);
    assert!(r.diagnostics.max_principle_holds);
    assert!(r.diagnostics.apriori_holds);
}

#[test]
fn zero_theta_gives_zero_value() {
    let p = Setup::default().exhaustible(0.5);
    let opts = OuterOptions {
        schedule: vec![0.0],
        ..options(1e-10)
    };
    let r = solve(&p, &opts).unwrap();
    assert!(r.converged);
    assert!(r.solution.u.iter().all(|u| u.sup_norm() <= 1e-12));
}

#[test]
fn crowd_without_congestion_converges() {
    let p = Setup::default().crowd(0.0, 0.7, 2.0);
    let r = solve(&p, &options(1e-8)).unwrap();
    assert!(r.converged);
    assert_eq!(r.diagnostics.monotonicity_gap_min, Some(0.0));
}

#[test]
fn residual_grows_linearly_with_perturbation() {
    let p = Setup::default().exhaustible(0.5);
    let opts = options(1e-10);
    let r = solve(&p, &opts).unwrap();
    let sol = &r.solution;
    let bump = GridField::from_fn(p.grid, |x| (-x[0] * x[0] / 0.1).exp());
    let mut res = Vec::new();
    for delta in [1e-3, 1e-2] {
        let mut u = sol.u.clone();
        let mid = u.len() / 2;
        u[mid] = u[mid].axpy(delta, &bump).unwrap();
        res.push(residuals(&p, 1.0, &u, &sol.m, &sol.laws, &opts).unwrap().hjb);
    }
    let ratio = res[1] / res[0];
    assert!((ratio - 10.0).abs() < 0.5, "ratio {ratio}");
}

#[test]
fn solution_is_continuous_in_epsilon() {
    let setup = Setup::default();
    let opts = options(1e-9);
    let base = solve(&setup.exhaustible(0.5), &opts).unwrap();
    let mut dists = Vec::new();
    for d in [1e-2, 1e-3] {
        let r = solve(&setup.exhaustible(0.5 + d), &opts).unwrap();
        let du = r
            .solution
            .u
            .iter()
            .zip(&base.solution.u)
            .map(|(a, b)| a.distance_sup(b).unwrap())
            .fold(0.0, f64::max);
        dists.push(du);
    }
    assert!(dists[1] < dists[0]);
    assert!(dists[0] / dists[1] > 5.0, "{dists:?}");
}

#[test]
fn fictitious_play_matches_picard() {
    let p = Setup::default().crowd(0.5, 0.7, 2.0);
    // averaging converges sublinearly, so compare at a loose tolerance
    let tol = 1e-3;
    let picard = solve(&p, &options(1e-10)).unwrap();
    let fp = solve(
        &p,
        &OuterOptions {
            strategy: OuterStrategy::FictitiousPlay,
            max_iterations: 1000,
            schedule: vec![1.0],
            ..options(tol)
        },
    )
    .unwrap();
    assert!(picard.converged && fp.converged);
    let du = fp
        .solution
        .u
        .iter()
        .zip(&picard.solution.u)
        .map(|(a, b)| a.distance_sup(b).unwrap())
        .fold(0.0, f64::max);
    assert!(du <= 10.0 * tol, "{du}");
}

#[test]
fn energy_identity_vanishes_on_self_pair() {
    let p = Setup::default().exhaustible(0.5);
    let r = solve(&p, &options(1e-9)).unwrap();
    let e = energy_identity_check(&p, &r.solution, &r.solution).unwrap();
    assert!(e.abs() <= 1e-12, "{e}");
}

#[test]
fn uniqueness_probe_agrees_on_monotone_problem() {
    let p = Setup::default().exhaustible(0.5);
    let opts = OuterOptions {
        schedule: vec![1.0],
        ..options(1e-7)
    };
    let guesses: Vec<_> = (0..3).map(|s| InitialGuess::random(&p, s, 0.5)).collect();
    let probe = uniqueness_probe(&p, &opts, &guesses).unwrap();
    assert!(probe.all_converged);
    assert!(probe.within_threshold);
    assert!(probe.monotone_precondition);
}

#[test]
fn wrong_length_guess_is_rejected() {
    let p = Setup::default().exhaustible(0.5);
    let guess = InitialGuess {
        u: Some(vec![GridField::zeros(p.grid, 1)]),
        damping: None,
    };
    let err = solve_from(&p, &options(1e-8), &guess).unwrap_err();
    assert!(matches!(err, MfgcError::Shape(_)), "{err}");
}

#[test]
fn invalid_schedule_is_rejected() {
    let p = Setup::default().exhaustible(0.5);
    let opts = OuterOptions {
        schedule: vec![0.5, 0.2],
        ..options(1e-8)
    };
    assert!(matches!(solve(&p, &opts), Err(MfgcError::Parameter { .. })));
}

#[test]
fn iteration_budget_reports_non_convergence() {
    let p = Setup::default().exhaustible(0.5);
    let opts = OuterOptions {
        max_iterations: 2,
        ..options(1e-12)
    };
    let r = solve(&p, &opts).unwrap();
    assert!(!r.converged);
    assert!(r.stages.len() < 5);
    assert!(!r.stages.last().unwrap().converged);
}
