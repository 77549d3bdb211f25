use std::fs;
use std::path::Path;

use contraction_kit::certify::{
    certification_grid, estimate_constants, grid_contraction, simulate_tracking, verify_tracking, BoundConstants,
    CertificateReport, ConstantsOptions, Policy, VerifyOptions,
};
use contraction_kit::cvstem::{solve_cvstem, CvstemProblem, CvstemSolution, MetricSource};
use contraction_kit::losses::Sample;
use contraction_kit::netmetric::{Checkpoint, ControllerNet, MetricNet};
use contraction_kit::numerics::{streams, Mat, RngStream};
use contraction_kit::selftest;
use contraction_kit::systems::SystemModel;
use contraction_kit::training::{sample_dataset_with, train_with_progress, TrainConfig};
use contraction_kit::Error;
use serde_json::json;

use crate::config::{PolicyKind, RunConfig};
use crate::{CliError, Command};

pub fn run(command: Command, cfg: &RunConfig) -> Result<String, CliError> {
    match command {
        Command::Train => train(cfg),
        Command::Cvstem => cvstem(cfg),
        Command::Certify => certify(cfg),
        Command::Simulate => simulate(cfg),
        Command::Selftest => self_test(cfg),
    }
}

fn write_manifest(cfg: &RunConfig, command: Command) -> Result<(), CliError> {
    let manifest = json!({
        "tool": "contraction-kit",
        "version": env!("CARGO_PKG_VERSION"),
        "command": command.name(),
        "seed": cfg.seed,
        "streams": {
            "dataset": streams::DATASET,
            "sphere": streams::SPHERE,
            "wiener": streams::WIENER,
            "targets": streams::TARGETS,
            "init": streams::INIT,
            "shuffle": streams::SHUFFLE,
            "grid": streams::GRID,
        },
        "config": cfg,
    });
    write(&cfg.out.join("manifest.json"), &serde_json::to_string_pretty(&manifest).expect("serializable"))
}

fn write(path: &Path, text: &str) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, text)?;
    Ok(())
}

fn train(cfg: &RunConfig) -> Result<String, CliError> {
    let sys = cfg.build_system()?;
    let result = train_with_progress(&sys, &cfg.train, &mut |epoch, r| {
        eprintln!("epoch {epoch:>4}  total {:.6e}  l_u {:.3e}  l_c {:.3e}  l_w1 {:.3e}  l_w2 {:.3e}", r.total, r.l_u, r.l_c, r.l_w1, r.l_w2);
    })?;
    let ckpt = Checkpoint::from_nets(&sys.name, cfg.seed, cfg.train.alpha, &result.metric, &result.controller);
    write(&cfg.out.join("checkpoint.json"), &ckpt.to_json()?)?;
    write(&cfg.out.join("loss.csv"), &result.loss_csv())?;
    write_manifest(cfg, Command::Train)?;
    let last = result.history.last().unwrap_or(&result.initial);
    Ok(format!(
        "trained {} for {} epochs in {:.1} s; final loss {:.4e}",
        sys.name, cfg.train.epochs, result.wall_clock_secs, last.total
    ))
}

fn cvstem_problem(cfg: &RunConfig, sys: &SystemModel<f64>) -> CvstemProblem<f64> {
    let c = &cfg.cvstem;
    let grid = CvstemProblem::lattice_grid(sys, c.grid_per_dim, c.grid_cap);
    let mut p = CvstemProblem::new(sys.clone(), grid, c.alpha);
    p.alpha_s = c.alpha_s;
    p.alpha_d = c.alpha_d;
    p.alpha_g = c.alpha_g;
    p.r = Mat::scaled_identity(sys.m(), c.r);
    p.c = c.disturbance_constant;
    p.chi_max = c.chi_max;
    p.max_inner_iterations = c.max_inner_iterations;
    p
}

fn cvstem(cfg: &RunConfig) -> Result<String, CliError> {
    let sys = cfg.build_system()?;
    let sol = solve_cvstem(&cvstem_problem(cfg, &sys))?;
    write(&cfg.out.join("cvstem.json"), &sol.to_json()?)?;
    write_manifest(cfg, Command::Cvstem)?;
    Ok(format!("cvstem on {}: chi = {:.6}, nu = {:.6}, worst margin {:.3e}", sys.name, sol.chi, sol.nu, sol.max_margin()))
}

/// Networks or CV-STEM solution backing a policy.
enum Backing {
    Learned(MetricNet<f64>, ControllerNet<f64>, f64),
    Cvstem(CvstemSolution<f64>),
}

fn backing(cfg: &RunConfig, sys: &SystemModel<f64>) -> Result<Backing, CliError> {
    match cfg.policy {
        PolicyKind::Learned => {
            let path = cfg.checkpoint.as_ref().expect("validated");
            let ckpt = Checkpoint::load(path).map_err(|e| CliError::Config(e.to_string()))?;
            if ckpt.system != sys.name {
                return Err(CliError::Config(format!(
                    "checkpoint was trained on '{}', config names '{}'",
                    ckpt.system, sys.name
                )));
            }
            let (m, c) = ckpt.to_nets::<f64>().map_err(|e| CliError::Config(e.to_string()))?;
            if m.n != sys.n() || c.m != sys.m() {
                return Err(CliError::Config("checkpoint dimensions do not match the system".into()));
            }
            Ok(Backing::Learned(m, c, ckpt.alpha))
        }
        PolicyKind::Cvstem => Ok(Backing::Cvstem(solve_cvstem(&cvstem_problem(cfg, sys))?)),
    }
}

fn policy<'a>(cfg: &RunConfig, sys: &SystemModel<f64>, b: &'a Backing) -> (Policy<'a, f64>, f64) {
    match b {
        Backing::Learned(metric, controller, alpha) => (Policy::Learned { metric, controller }, *alpha),
        Backing::Cvstem(sol) => (
            Policy::Geodesic {
                source: MetricSource::Cvstem(sol),
                r: Mat::scaled_identity(sys.m(), cfg.cvstem.r),
                segments: cfg.cvstem.segments,
            },
            cfg.cvstem.alpha,
        ),
    }
}

/// Held-out samples of the training configuration, regenerated from its seed.
fn holdout_pool(cfg: &RunConfig, sys: &SystemModel<f64>) -> Vec<Sample<f64>> {
    let t: &TrainConfig = &cfg.train;
    let mut rng = RngStream::new(cfg.seed, streams::DATASET);
    let mut data = sample_dataset_with(sys, t.samples, t.sampling, &mut rng);
    let mut pool = data.split_off(t.samples - t.holdout_count());
    pool.truncate(cfg.certify.grid_pool.max(1));
    pool
}

fn verify_options(cfg: &RunConfig) -> VerifyOptions<f64> {
    let c = &cfg.certify;
    let mut o = VerifyOptions::new(c.mode, c.trajectories, c.horizon);
    o.dt = c.dt;
    o.record_every = c.record_every;
    o.tol = c.tol;
    o.seed = cfg.seed;
    o.segments = c.segments;
    o
}

fn certify(cfg: &RunConfig) -> Result<String, CliError> {
    let sys = cfg.build_system()?;
    let b = backing(cfg, &sys)?;
    let (pol, trained_alpha) = policy(cfg, &sys, &b);
    let c = &cfg.certify;
    let alpha = c.alpha.unwrap_or(trained_alpha);

    let reference_sol = if c.reference_cvstem {
        Some(solve_cvstem(&cvstem_problem(cfg, &sys))?)
    } else {
        None
    };
    let reference = reference_sol.as_ref().map(|sol| Policy::Geodesic {
        source: MetricSource::Cvstem(sol),
        r: Mat::scaled_identity(sys.m(), cfg.cvstem.r),
        segments: cfg.cvstem.segments,
    });

    let pool = holdout_pool(cfg, &sys);
    let grid = certification_grid(&sys, &pool, c.grid_per_dim, c.grid_cap, cfg.seed);
    let margins = grid_contraction(&pol, &sys, &grid, alpha)?;
    let mut options = ConstantsOptions::new(c.mode, alpha);
    options.alpha_d = c.alpha_d;
    options.alpha_g = c.alpha_g;
    options.lipschitz_pairs = c.lipschitz_pairs;
    options.seed = cfg.seed;
    let constants = estimate_constants(&pol, reference.as_ref(), &sys, &grid, &options)?;

    let out = &cfg.out;
    let report = match verify_tracking(&pol, &sys, &constants, &verify_options(cfg)) {
        Ok(v) => {
            for r in &v.records {
                write(&out.join("trajectories").join(format!("traj_{:04}.csv", r.index)), &r.to_csv())?;
            }
            if let Some(ens) = &v.ensemble {
                write(&out.join("ensemble.csv"), &ens.to_csv())?;
            }
            let mut report = v.report;
            report.grid = Some(margins);
            report
        }
        Err(Error::NonPositiveRate(rate)) => refused(&sys, &constants, margins, c.horizon, rate),
        Err(e) => return Err(e.into()),
    };
    write(&out.join("certificate.json"), &report.to_json()?)?;
    write_manifest(cfg, Command::Certify)?;
    let grid = report.grid.as_ref().expect("grid margins recorded");
    let summary = format!(
        "certificate {} for {}: alpha_ell = {:.4}, max violation {:.3e}, median final x_e {:.4}, contracting grid fraction {:.4}",
        if report.pass { "PASS" } else { "FAIL" },
        sys.name,
        report.constants.alpha_ell,
        report.max_violation,
        report.median_final_x_e,
        grid.fraction_contracting,
    );
    if report.pass {
        Ok(summary)
    } else {
        Err(CliError::CertificateFailed(summary))
    }
}

fn refused(
    sys: &SystemModel<f64>,
    constants: &BoundConstants<f64>,
    margins: contraction_kit::certify::GridMargins,
    horizon: f64,
    rate: f64,
) -> CertificateReport {
    CertificateReport {
        format: "contraction-kit/certificate-v1".into(),
        system: sys.name.clone(),
        mode: constants.mode,
        constants: *constants,
        grid: Some(margins),
        horizon,
        median_final_x_e: f64::NAN,
        max_violation: f64::INFINITY,
        trajectories: Vec::new(),
        ensemble: None,
        pass: false,
        notes: vec![format!("certificate refused: alpha_ell = {rate} is not positive")],
    }
}

fn simulate(cfg: &RunConfig) -> Result<String, CliError> {
    let sys = cfg.build_system()?;
    let b = backing(cfg, &sys)?;
    let (pol, _) = policy(cfg, &sys, &b);
    let records = simulate_tracking(&pol, &sys, &verify_options(cfg))?;
    for r in &records {
        write(&cfg.out.join("trajectories").join(format!("traj_{:04}.csv", r.index)), &r.to_csv())?;
    }
    write_manifest(cfg, Command::Simulate)?;
    let mut finals: Vec<f64> = records.iter().map(|r| *r.x_e.last().expect("non-empty")).collect();
    finals.sort_by(f64::total_cmp);
    Ok(format!(
        "simulated {} trajectories of {}; median final x_e {:.4}",
        records.len(),
        sys.name,
        finals[finals.len() / 2]
    ))
}

fn self_test(cfg: &RunConfig) -> Result<String, CliError> {
    let outcomes = selftest::run_all();
    for o in &outcomes {
        println!("{} {}: {}", if o.pass { "PASS" } else { "FAIL" }, o.name, o.detail);
    }
    write(&cfg.out.join("selftest.json"), &serde_json::to_string_pretty(&outcomes).expect("serializable"))?;
    write_manifest(cfg, Command::Selftest)?;
    let failed = outcomes.iter().filter(|o| !o.pass).count();
    if failed == 0 {
        Ok(format!("selftest: {} oracles passed", outcomes.len()))
    } else {
        Err(CliError::CertificateFailed(format!("selftest: {failed} of {} oracles failed", outcomes.len())))
    }
}
