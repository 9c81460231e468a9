//! Problem builders shared by the integration tests.
#![allow(dead_code)]

use std::sync::Arc;

use mfgc_core::coupler::{InitialDensity, OuterOptions, ProblemSpec};
use mfgc_core::domain::{TimeGrid, TorusGrid};
use mfgc_core::legendre::{HamiltonianEvaluator, LegendreMode};
use mfgc_core::models::{
    CrowdKernel, CrowdMotion, ExhaustibleLinear, Lagrangian, PowerLagrangian, RunningCost,
    SmoothingKernel, TerminalCost, TerminalProfile,
};

pub struct Setup {
    pub radius: f64,
    pub points: usize,
    pub horizon: f64,
    pub steps: usize,
    pub nu: f64,
    pub m0: InitialDensity,
    pub profile: TerminalProfile,
    pub eta_f: f64,
    pub eta_g: f64,
    pub kernel_width: f64,
}

impl Default for Setup {
    fn default() -> Self {
        Self {
            radius: 2.0,
            points: 32,
            horizon: 0.5,
            steps: 20,
            nu: 0.2,
            m0: InitialDensity::Cosine { amplitude: 0.5 },
            profile: TerminalProfile::Cosine { amplitude: 0.3 },
            eta_f: 0.2,
            eta_g: 0.2,
            kernel_width: 0.3,
        }
    }
}

impl Setup {
    pub fn grid(&self) -> TorusGrid {
        TorusGrid::new(1, self.radius, self.points).unwrap()
    }

    pub fn build(&self, model: Arc<dyn Lagrangian>, mode: LegendreMode) -> ProblemSpec {
        let grid = self.grid();
        let kernel = SmoothingKernel::new(self.kernel_width).unwrap();
        let running: Arc<dyn mfgc_core::models::DensityCoupling> = if self.eta_f == 0.0 {
            Arc::new(RunningCost::zero())
        } else {
            Arc::new(RunningCost::smoothed(self.eta_f, kernel).unwrap())
        };
        let terminal = Arc::new(TerminalCost::new(self.profile, self.eta_g, kernel).unwrap());
        ProblemSpec::new(
            grid,
            TimeGrid::new(self.horizon, self.steps).unwrap(),
            self.nu,
            Arc::new(HamiltonianEvaluator::new(model, mode).unwrap()),
            running,
            terminal,
            self.m0.sample(&grid).unwrap(),
        )
        .unwrap()
    }

    pub fn exhaustible(&self, eps: f64) -> ProblemSpec {
        self.build(Arc::new(ExhaustibleLinear::new(eps).unwrap()), LegendreMode::ClosedForm)
    }

    pub fn crowd(&self, lambda: f64, theta: f64, a_prime: f64) -> ProblemSpec {
        let model =
            CrowdMotion::new(&self.grid(), lambda, theta, a_prime, CrowdKernel::Constant { value: 1.0 }, 2.0)
                .unwrap();
        self.build(Arc::new(model), LegendreMode::ClosedForm)
    }

    pub fn quadratic(&self) -> ProblemSpec {
        self.build(Arc::new(PowerLagrangian::quadratic(1)), LegendreMode::ClosedForm)
    }
}

pub fn options(tolerance: f64) -> OuterOptions {
    OuterOptions {
        tolerance,
        ..OuterOptions::default()
    }
}
