//! Acceptance criteria 1 to 9. Each test prints one `PASS`/`FAIL` line with
//! its measurements and wall-clock time, written straight to stderr so the
//! line shows up without `--nocapture`.

use std::io::Write;
use std::time::Instant;

use contraction_kit::certify::{
    bound_envelope_stoch, certification_grid, grid_contraction, metric_error, metric_error_constants,
    metric_error_conversion, simulate_tracking, verify_tracking, BoundConstants, BoundMode, Policy, VerifyOptions,
};
use contraction_kit::cvstem::{block_matrix, schur_equivalent, solve_cvstem, CvstemProblem, CvstemSolution, MetricSource};
use contraction_kit::losses::{gradient_check, l_pd, LossConfig, Sample, SpherePoints};
use contraction_kit::netmetric::{ControllerNet, MetricNet};
use contraction_kit::numerics::{max_eig_sym, min_eig_sym, sample_unit_sphere, streams, Mat, RngStream};
use contraction_kit::systems::{make_curved_test, make_lti, make_pvtol, make_scalar_test, SystemModel};
use contraction_kit::training::{loss_csv, train, TrainConfig};
use contraction_kit::Error;

fn report(criterion: u32, title: &str, pass: bool, start: Instant, detail: String) {
    let line = format!(
        "criterion {criterion} [{title}]: {} ({:.2} s) {detail}\n",
        if pass { "PASS" } else { "FAIL" },
        start.elapsed().as_secs_f64()
    );
    let _ = std::io::stderr().write_all(line.as_bytes());
}

fn unit_metric() -> CvstemSolution<f64> {
    CvstemSolution {
        nu: 1.0,
        chi: 1.0,
        w_bar: Mat::identity(1),
        objective: 0.0,
        residuals: Vec::new(),
    }
}

fn unit_policy(sol: &CvstemSolution<f64>) -> Policy<'_, f64> {
    Policy::Geodesic {
        source: MetricSource::Cvstem(sol),
        r: Mat::identity(1),
        segments: 1,
    }
}

/// Random symmetric matrix `Q diag(λ) Qᵀ` with a Gaussian `Q` orthonormalized
/// by Gram–Schmidt.
fn random_symmetric(n: usize, eigs: &[f64], rng: &mut RngStream) -> Mat<f64> {
    let mut q: Vec<Vec<f64>> = Vec::with_capacity(n);
    while q.len() < n {
        let mut v: Vec<f64> = (0..n).map(|_| rng.normal()).collect();
        for u in &q {
            let d: f64 = v.iter().zip(u).map(|(a, b)| a * b).sum();
            for (vi, ui) in v.iter_mut().zip(u) {
                *vi -= d * ui;
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-8 {
            q.push(v.into_iter().map(|x| x / norm).collect());
        }
    }
    Mat::from_fn(n, n, |i, j| (0..n).map(|k| q[k][i] * eigs[k] * q[k][j]).sum())
}

#[test]
fn criterion_1_l_pd_contract() {
    let start = Instant::now();
    let mut rng = RngStream::new(101, streams::GRID);
    let mut sphere = RngStream::new(101, streams::SPHERE);
    let (mut checked, mut disagreements, mut negatives) = (0, 0, 0);
    while checked < 1000 {
        let n = 1 + rng.index(8);
        let g = Mat::from_fn(n, n, |_, _| rng.normal::<f64>());
        // Gaussian orthogonal ensemble, alternating with Gram matrices so
        // that the semidefinite side is exercised at every size
        let a = if checked % 2 == 0 { g.sym() } else { g.transpose().matmul(&g) };
        let min = min_eig_sym(&a).unwrap();
        if min.abs() <= 0.1 {
            continue;
        }
        checked += 1;
        negatives += usize::from(min < 0.0);
        let points = sample_unit_sphere::<f64>(n, 1024, &mut sphere);
        if (l_pd(&a, &points) == 0.0) != (min >= 0.0) {
            disagreements += 1;
        }
    }
    let elapsed = start.elapsed().as_secs_f64();
    let pass = disagreements == 0 && elapsed < 5.0;
    report(1, "L_PD contract", pass, start, format!("{checked} matrices, {negatives} indefinite, {disagreements} disagreements"));
    assert!(pass);
}

fn random_sample(sys: &SystemModel<f64>, rng: &mut RngStream) -> Sample<f64> {
    Sample {
        x: sys.state_box.sample(rng),
        x_d: sys.state_box.sample(rng),
        u_d: sys.input_box.sample(rng),
        t: sys.time_box.sample(rng)[0],
    }
}

#[test]
fn criterion_2_gradient_exactness() {
    let start = Instant::now();
    let mut rng = RngStream::new(202, streams::INIT);
    let mut worst = 0.0f64;
    let mut worst_case = String::new();
    let mut checked = 0;
    for config in 0..20 {
        let sys: SystemModel<f64> = match config % 4 {
            0 => make_curved_test(),
            1 => make_pvtol(),
            2 => make_lti(Mat::from_rows(&[vec![-1.0, 2.0], vec![0.5, 0.3]]).unwrap(), Mat::column(&[0.0, 1.0])),
            _ => make_scalar_test(0.5),
        };
        let (n, m) = (sys.n(), sys.m());
        let width = |rng: &mut RngStream| 2 + rng.index(15);
        let depth = 1 + rng.index(2);
        let metric_hidden: Vec<usize> = (0..depth).map(|_| width(&mut rng)).collect();
        let controller_hidden = vec![width(&mut rng)];
        let features = 1 + rng.index(2 * n);
        let time_input = rng.index(2) == 1;
        let m_under = rng.uniform(0.2, 1.0);
        let metric = MetricNet::new(n, &metric_hidden, 4.0, m_under, time_input, &mut rng);
        let mut controller = ControllerNet::new(n, m, features, &controller_hidden, &mut rng);
        controller.output_scale = (0..m).map(|_| rng.uniform(0.2, 2.0)).collect();
        let batch: Vec<Sample<f64>> = (0..3).map(|_| random_sample(&sys, &mut rng)).collect();
        let points = SpherePoints::for_system(&sys, 16, &mut rng);
        let alpha = rng.uniform(0.1, 1.0);
        let check = gradient_check(&metric, &controller, &sys, &batch, &LossConfig::new(alpha), &points, 1e-5, 1e-5, 1).unwrap();
        if check.max_rel_err > worst {
            worst_case = format!("config {config}: analytic {:.6e} vs numeric {:.6e}", check.analytic, check.numeric);
        }
        worst = worst.max(check.max_rel_err);
        checked += check.checked;
    }
    let elapsed = start.elapsed().as_secs_f64();
    let pass = worst < 1e-4 && elapsed < 60.0;
    report(2, "gradient exactness", pass, start, format!("20 configs, {checked} parameters, max rel err {worst:.2e} ({worst_case})"));
    assert!(pass);
}

#[test]
fn criterion_3_schur_equivalence() {
    let start = Instant::now();
    let mut rng = RngStream::new(303, streams::GRID);
    let mut disagreements = 0;
    let mut nsd = 0;
    for i in 0..100 {
        let sys: SystemModel<f64> = match i % 3 {
            0 => make_curved_test(),
            1 => make_lti(Mat::from_rows(&[vec![-1.0, 2.0], vec![0.5, -0.3]]).unwrap(), Mat::column(&[0.0, 1.0])),
            _ => make_scalar_test(rng.uniform(-2.0, 1.0)),
        };
        let n = sys.n();
        let x = sys.state_box.sample(&mut rng);
        let mut p = CvstemProblem::new(sys, Vec::new(), rng.uniform(0.05, 2.0));
        p.alpha_s = rng.uniform(0.01, 2.0);
        let nu = rng.uniform(0.1, 30.0);
        let eigs: Vec<f64> = (0..n).map(|_| rng.uniform(1.0, 5.0)).collect();
        let w_bar = random_symmetric(n, &eigs, &mut rng);
        let block = max_eig_sym(&block_matrix(&p, nu, &w_bar, &x, 0.0)).unwrap();
        let reduced = max_eig_sym(&schur_equivalent(&p, nu, &w_bar, &x, 0.0).unwrap()).unwrap();
        let (a, b) = (block <= 1e-8, reduced <= 1e-8);
        nsd += usize::from(a);
        disagreements += usize::from(a != b);
    }
    let pass = disagreements == 0;
    report(3, "Schur equivalence", pass, start, format!("100 tuples, {nsd} NSD, {disagreements} disagreements"));
    assert!(pass);
}

#[test]
fn criterion_4_cvstem_scalar_oracle() {
    let start = Instant::now();
    let sys = make_scalar_test::<f64>(1.0);
    let grid = CvstemProblem::lattice_grid(&sys, 11, 100);
    let sol = solve_cvstem(&CvstemProblem::new(sys, grid.clone(), 1.0)).unwrap();
    let margins_ok = sol.residuals.iter().all(|r| r.worst() <= 1e-7);
    let blocked = make_lti(Mat::from_diag(&[1.0]), Mat::zeros(1, 1));
    let infeasible = matches!(solve_cvstem(&CvstemProblem::new(blocked, grid, 1.0)), Err(Error::Infeasible(_)));
    let pass = (sol.chi - 1.0).abs() <= 1e-3 && margins_ok && infeasible;
    report(
        4,
        "CV-STEM scalar oracle",
        pass,
        start,
        format!("chi* = {:.6}, worst margin {:.2e}, B = 0 infeasible: {infeasible}", sol.chi, sol.max_margin()),
    );
    assert!(pass);
}

#[test]
fn criterion_5_tight_deterministic_bound() {
    let start = Instant::now();
    let alpha = 1.0;
    let sys = make_scalar_test(0.0).with_disturbance(0.3, 0.0);
    let sol = unit_metric();
    let policy = unit_policy(&sol);
    let k = BoundConstants::new(BoundMode::Deterministic, 1.0, 1.0, alpha, 0.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.3, 0.0);
    let mut opts = VerifyOptions::new(BoundMode::Deterministic, 20, 8.0);
    opts.dt = 1e-3;
    opts.record_every = 10;
    opts.tol = 1e-6;
    let v = verify_tracking(&policy, &sys, &k, &opts).unwrap();
    let target = 0.3 / alpha;
    let gap = v.records.iter().map(|r| (r.errors.last().unwrap() - target).abs() / target).fold(0.0, f64::max);
    let elapsed = start.elapsed().as_secs_f64();
    let pass = v.report.pass && gap < 0.01 && elapsed < 10.0;
    report(
        5,
        "tight deterministic bound",
        pass,
        start,
        format!("final relative gap {gap:.2e}, max envelope violation {:.2e}", v.report.max_violation),
    );
    assert!(pass);
}

#[test]
fn criterion_6_stochastic_bound() {
    let start = Instant::now();
    let sys = make_scalar_test(0.0).with_disturbance(0.0, 0.2);
    let sol = unit_metric();
    let policy = unit_policy(&sol);
    let k = BoundConstants::new(BoundMode::Stochastic, 1.0, 1.0, 1.0, 0.0, 10.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.2);
    let mut opts = VerifyOptions::new(BoundMode::Stochastic, 10_000, 3.0);
    opts.dt = 5e-3;
    opts.record_every = 10;
    let v = verify_tracking(&policy, &sys, &k, &opts).unwrap();
    let ens = v.ensemble.unwrap();
    let below = (0..ens.times.len()).all(|i| ens.mean_sq[i] + 3.0 * ens.std_err[i] <= ens.envelope[i]);
    let asymptote = bound_envelope_stoch(&k, 0.0).unwrap().asymptote;
    let elapsed = start.elapsed().as_secs_f64();
    let pass = below && elapsed < 120.0;
    report(
        6,
        "stochastic bound",
        pass,
        start,
        format!(
            "{} grid times, min margin {:.1} SE, final mean square {:.4} vs asymptote {:.4}",
            ens.times.len(),
            ens.min_margin_in_se(),
            ens.mean_sq.last().unwrap(),
            asymptote
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_7_pvtol_end_to_end() {
    let start = Instant::now();
    let sys = make_pvtol::<f64>();
    let config = TrainConfig::default();
    assert_eq!((config.samples, config.epochs, config.metric_hidden[0], config.alpha), (20_000, 30, 64, 0.5));
    let result = train(&sys, &config).unwrap();
    let policy = Policy::Learned {
        metric: &result.metric,
        controller: &result.controller,
    };
    let grid = certification_grid(&sys, &result.holdout, 5, 100_000, config.seed);
    let margins = grid_contraction(&policy, &sys, &grid, config.alpha).unwrap();

    let calm = sys.clone().with_disturbance(0.0, 0.0);
    let mut opts = VerifyOptions::new(BoundMode::Deterministic, 100, 5.0);
    opts.dt = 1e-2;
    opts.seed = config.seed;
    let records = simulate_tracking(&policy, &calm, &opts).unwrap();
    let mut finals: Vec<f64> = records.iter().map(|r| r.x_e_at(5.0)).collect();
    finals.sort_by(f64::total_cmp);
    let median = 0.5 * (finals[49] + finals[50]);
    let first = result.history.first().unwrap().total;
    let last = result.history.last().unwrap().total;
    let elapsed = start.elapsed().as_secs_f64();
    let pass = margins.fraction_contracting >= 0.95 && median < 0.2 && elapsed < 1800.0;
    report(
        7,
        "PVTOL end-to-end",
        pass,
        start,
        format!(
            "contracting fraction {:.4} of {} grid points (median max_eig {:.3}), median x_e(5 s) {median:.4}, loss {first:.4} -> {last:.4}",
            margins.fraction_contracting, margins.points, margins.median_eig
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_8_metric_error_conversion() {
    let start = Instant::now();
    let mut rng = RngStream::new(808, streams::GRID);
    let mut exact = true;
    for _ in 0..1000 {
        let (rho, b, eps) = (rng.uniform(0.0, 10.0), rng.uniform(0.0, 10.0), rng.uniform(0.0, 1.0));
        let (e0, e1) = metric_error_conversion(rho, b, eps);
        exact &= e0 == 0.0 && e1 == rho * b * b * eps;
    }
    let (e0, e1) = metric_error_conversion(2.0f64, 3.0, 0.1);
    let example = e0 == 0.0 && (e1 - 1.8).abs() < 1e-12;

    // end to end: a learned metric against a CV-STEM metric on a 2-state LTI
    let sys = make_lti(Mat::from_rows(&[vec![0.0, 1.0], vec![-1.0, 0.5]]).unwrap(), Mat::column(&[0.0, 2.0]));
    let grid_pts = CvstemProblem::lattice_grid(&sys, 5, 25);
    let sol = solve_cvstem(&CvstemProblem::new(sys.clone(), grid_pts, 0.5)).unwrap();
    let mut init = RngStream::new(808, streams::INIT);
    let net = MetricNet::new(2, &[8], 10.0, 0.1, false, &mut init);
    let r = Mat::from_diag(&[0.5]);
    let learned = Policy::Geodesic {
        source: MetricSource::Net(&net),
        r: r.clone(),
        segments: 4,
    };
    let reference = Policy::Geodesic {
        source: MetricSource::Cvstem(&sol),
        r: r.clone(),
        segments: 4,
    };
    let grid = certification_grid(&sys, &[], 4, 100, 8);
    let eps_l = metric_error(&learned, &reference, &grid);
    let (g0, g1) = metric_error_constants(eps_l, &r, &sys, &grid).unwrap();
    let end_to_end = g0 == 0.0 && g1 == 2.0 * 2.0 * 2.0 * eps_l && eps_l > 0.0;
    let pass = exact && example && end_to_end;
    report(
        8,
        "metric-error conversion",
        pass,
        start,
        format!("1000 exact triples: {exact}, example eps1 = {e1}, eps_l = {eps_l:.4} -> eps1 = {g1:.4}"),
    );
    assert!(pass);
}

#[test]
fn criterion_9_byte_identical_artifacts() {
    let start = Instant::now();
    let sys = make_pvtol::<f64>();
    let config = TrainConfig {
        samples: 1024,
        epochs: 3,
        batch_size: 128,
        metric_hidden: vec![16],
        controller_hidden: vec![16],
        seed: 9,
        ..TrainConfig::default()
    };
    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| {
            let res = train(&sys, &config).unwrap();
            let csv = loss_csv(&res.initial, &res.history);
            let sol = unit_metric();
            let scalar = make_scalar_test(0.0).with_disturbance(0.1, 0.0);
            let k = BoundConstants::new(BoundMode::Deterministic, 1.0, 1.0, 1.0, 0.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.1, 0.0);
            let mut opts = VerifyOptions::new(BoundMode::Deterministic, 16, 2.0);
            opts.seed = 9;
            let mut cert = verify_tracking(&unit_policy(&sol), &scalar, &k, &opts).unwrap().report;
            let policy = Policy::Learned {
                metric: &res.metric,
                controller: &res.controller,
            };
            let grid = certification_grid(&sys, &res.holdout, 3, 1000, 9);
            cert.grid = Some(grid_contraction(&policy, &sys, &grid, 0.5).unwrap());
            (csv, cert.to_json().unwrap())
        })
    };
    let (csv_a, json_a) = run(1);
    let (csv_b, json_b) = run(3);
    let pass = csv_a.as_bytes() == csv_b.as_bytes() && json_a.as_bytes() == json_b.as_bytes();
    report(
        9,
        "byte-identical artifacts",
        pass,
        start,
        format!("loss CSV {} bytes, certificate JSON {} bytes", csv_a.len(), json_a.len()),
    );
    assert!(pass);
}
