//! Fast closed-form oracle checks run by `contraction-kit selftest`.

use serde::Serialize;

use crate::certify::{bound_envelope_det, metric_error_conversion, verify_tracking, BoundConstants, BoundMode, Policy, VerifyOptions};
use crate::cvstem::{solve_cvstem, CvstemProblem, CvstemSolution, MetricSource};
use crate::error::Error;
use crate::losses::{gradient_check, l_pd, LossConfig, Sample, SpherePoints};
use crate::netmetric::{ControllerNet, MetricNet};
use crate::numerics::{sample_unit_sphere, streams, sym_eigen, Mat, RngStream};
use crate::systems::{make_curved_test, make_lti, make_scalar_test};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleOutcome {
    pub name: &'static str,
    pub pass: bool,
    pub detail: String,
}

fn outcome(name: &'static str, pass: bool, detail: String) -> OracleOutcome {
    OracleOutcome { name, pass, detail }
}

pub fn eigen_reconstruction() -> OracleOutcome {
    let mut rng = RngStream::new(11, streams::GRID);
    let mut worst = 0.0f64;
    for n in 1..=8 {
        let a = Mat::from_fn(n, n, |_, _| rng.uniform(-1.0, 1.0)).sym();
        let err = match sym_eigen(&a) {
            Ok(e) => (&e.reconstruct() - &a).max_abs(),
            Err(_) => f64::INFINITY,
        };
        worst = worst.max(err);
    }
    outcome("eigen_reconstruction", worst < 1e-10, format!("max |QΛQᵀ − A| = {worst:.2e}"))
}

pub fn l_pd_sign() -> OracleOutcome {
    let mut rng = RngStream::new(12, streams::SPHERE);
    let pts = sample_unit_sphere::<f64>(3, 256, &mut rng);
    let pos = l_pd(&Mat::identity(3), &pts);
    let neg = l_pd(&Mat::scaled_identity(3, -1.0), &pts);
    let pass = pos == 0.0 && (neg - 1.0).abs() < 1e-12;
    outcome("l_pd_sign", pass, format!("L(I) = {pos}, L(−I) = {neg}"))
}

pub fn scalar_cvstem() -> OracleOutcome {
    let sys = make_scalar_test(1.0f64);
    let grid = CvstemProblem::lattice_grid(&sys, 5, 10);
    let feasible = solve_cvstem(&CvstemProblem::new(sys, grid.clone(), 1.0));
    let uncontrolled = make_lti(Mat::from_diag(&[1.0]), Mat::zeros(1, 1));
    let mut blocked = CvstemProblem::new(uncontrolled, grid, 1.0);
    blocked.max_inner_iterations = 200;
    let infeasible = matches!(solve_cvstem(&blocked), Err(Error::Infeasible(_)));
    match feasible {
        Ok(sol) => {
            let pass = (sol.chi - 1.0).abs() < 1e-3 && sol.max_margin() <= 1e-7 && infeasible;
            outcome(
                "scalar_cvstem",
                pass,
                format!("χ* = {:.6}, worst margin = {:.2e}, B = 0 infeasible: {infeasible}", sol.chi, sol.max_margin()),
            )
        }
        Err(e) => outcome("scalar_cvstem", false, e.to_string()),
    }
}

pub fn metric_conversion() -> OracleOutcome {
    let (e0, e1) = metric_error_conversion(2.0f64, 3.0, 0.1);
    outcome("metric_error_conversion", e0 == 0.0 && (e1 - 1.8).abs() < 1e-12, format!("(ε₀, ε₁) = ({e0}, {e1})"))
}

/// Unit metric for a scalar system.
pub fn unit_scalar_metric() -> CvstemSolution<f64> {
    CvstemSolution {
        nu: 1.0,
        chi: 1.0,
        w_bar: Mat::identity(1),
        objective: 0.0,
        residuals: Vec::new(),
    }
}

pub fn tight_bound() -> OracleOutcome {
    let sys = make_scalar_test(0.0).with_disturbance(0.3, 0.0);
    let sol = unit_scalar_metric();
    let policy = Policy::Geodesic {
        source: MetricSource::Cvstem(&sol),
        r: Mat::identity(1),
        segments: 1,
    };
    let k = BoundConstants::new(BoundMode::Deterministic, 1.0, 1.0, 1.0, 0.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.3, 0.0);
    let asymptote = bound_envelope_det(&k, 0.0).map(|e| e.steady).unwrap_or(f64::NAN);
    let mut opts = VerifyOptions::new(BoundMode::Deterministic, 4, 8.0);
    opts.dt = 1e-2;
    opts.tol = 1e-6;
    match verify_tracking(&policy, &sys, &k, &opts) {
        Ok(v) => {
            let end = v.records.iter().map(|r| (r.errors.last().unwrap() - 0.3).abs() / 0.3).fold(0.0, f64::max);
            outcome(
                "tight_bound",
                v.report.pass && end < 0.01 && (asymptote - 0.3).abs() < 1e-12,
                format!("final relative gap {end:.2e}, envelope violation {:.2e}", v.report.max_violation),
            )
        }
        Err(e) => outcome("tight_bound", false, e.to_string()),
    }
}

pub fn gradient_exactness() -> OracleOutcome {
    let sys = make_curved_test::<f64>();
    let mut rng = RngStream::new(13, streams::INIT);
    let metric = MetricNet::new(3, &[6], 4.0, 0.5, false, &mut rng);
    let controller = ControllerNet::new(3, 1, 4, &[6], &mut rng);
    let mut data = RngStream::new(13, streams::DATASET);
    let batch: Vec<Sample<f64>> = (0..3)
        .map(|_| Sample {
            x: sys.state_box.sample(&mut data),
            x_d: sys.state_box.sample(&mut data),
            u_d: sys.input_box.sample(&mut data),
            t: 0.0,
        })
        .collect();
    let mut sphere = RngStream::new(13, streams::SPHERE);
    let points = SpherePoints::for_system(&sys, 16, &mut sphere);
    match gradient_check(&metric, &controller, &sys, &batch, &LossConfig::new(0.5), &points, 1e-5, 1e-5, 5) {
        Ok(g) => outcome("gradient_exactness", g.max_rel_err < 1e-4, format!("max relative error {:.2e}", g.max_rel_err)),
        Err(e) => outcome("gradient_exactness", false, e.to_string()),
    }
}

/// Runs every oracle in a fixed order.
pub fn run_all() -> Vec<OracleOutcome> {
    vec![
        eigen_reconstruction(),
        l_pd_sign(),
        metric_conversion(),
        scalar_cvstem(),
        tight_bound(),
        gradient_exactness(),
    ]
}
