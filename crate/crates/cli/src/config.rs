use std::path::{Path, PathBuf};

use contraction_kit::certify::BoundMode;
use contraction_kit::systems::{system_by_name, SystemModel};
use contraction_kit::training::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::CliError;

/// Which controller and metric a `certify` or `simulate` run uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    /// Learned networks loaded from `checkpoint`.
    #[default]
    Learned,
    /// Geodesic feedback with a constant CV-STEM metric solved on the fly.
    Cvstem,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct SystemOverrides {
    /// Drift coefficient `a` of the scalar system `ẋ = a x + u`.
    pub drift: Option<f64>,
    pub d_bar: Option<f64>,
    pub g_bar: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CvstemSettings {
    pub alpha: f64,
    pub alpha_s: f64,
    pub alpha_d: f64,
    pub alpha_g: f64,
    /// Input weight `R = r I`.
    pub r: f64,
    pub disturbance_constant: f64,
    pub grid_per_dim: usize,
    pub grid_cap: usize,
    pub chi_max: f64,
    pub max_inner_iterations: usize,
    /// Quadrature segments of the geodesic controller.
    pub segments: usize,
}

impl Default for CvstemSettings {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            alpha_s: 0.0,
            alpha_d: 0.0,
            alpha_g: 1.0,
            r: 1.0,
            disturbance_constant: 1.0,
            grid_per_dim: 5,
            grid_cap: 5_000,
            chi_max: 1e6,
            max_inner_iterations: 3000,
            segments: 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CertifySettings {
    pub mode: BoundMode,
    /// Contraction rate to certify; defaults to the checkpoint's (learned)
    /// or the CV-STEM rate.
    pub alpha: Option<f64>,
    pub alpha_d: f64,
    pub alpha_g: f64,
    pub trajectories: usize,
    pub horizon: f64,
    pub dt: f64,
    pub record_every: usize,
    pub tol: f64,
    pub grid_per_dim: usize,
    pub grid_cap: usize,
    /// Pool of sampled tracking errors paired with the grid nodes.
    pub grid_pool: usize,
    /// Fit learning errors against a CV-STEM reference controller.
    pub reference_cvstem: bool,
    pub segments: usize,
    pub lipschitz_pairs: usize,
}

impl Default for CertifySettings {
    fn default() -> Self {
        Self {
            mode: BoundMode::Deterministic,
            alpha: None,
            alpha_d: 0.0,
            alpha_g: 1.0,
            trajectories: 100,
            horizon: 5.0,
            dt: 1e-2,
            record_every: 10,
            tol: 0.05,
            grid_per_dim: 5,
            grid_cap: 100_000,
            grid_pool: 2000,
            reference_cvstem: false,
            segments: 8,
            lipschitz_pairs: 200,
        }
    }
}

/// Top-level JSON configuration shared by every subcommand.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub system: String,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_out")]
    pub out: PathBuf,
    #[serde(default)]
    pub overrides: SystemOverrides,
    #[serde(default)]
    pub policy: PolicyKind,
    /// Checkpoint read by `certify` and `simulate` with a learned policy.
    #[serde(default)]
    pub checkpoint: Option<PathBuf>,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub cvstem: CvstemSettings,
    #[serde(default)]
    pub certify: CertifySettings,
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    /// Applies command-line overrides and resolves seeds shared with the
    /// training configuration.
    pub fn resolve(mut self, seed: Option<u64>, out: Option<PathBuf>) -> Self {
        if let Some(s) = seed {
            self.seed = s;
        }
        if let Some(o) = out {
            self.out = o;
        }
        self.train.seed = self.seed;
        self
    }

    pub fn build_system(&self) -> Result<SystemModel<f64>, CliError> {
        let mut sys = system_by_name::<f64>(&self.system).map_err(|e| CliError::Config(e.to_string()))?;
        if let Some(a) = self.overrides.drift {
            if sys.n() != 1 {
                return Err(CliError::Config("overrides.drift applies to the scalar system only".into()));
            }
            sys = contraction_kit::systems::make_scalar_test(a).with_disturbance(sys.d_bar, sys.g_bar);
        }
        if let Some(d) = self.overrides.d_bar {
            sys.d_bar = d;
        }
        if let Some(g) = self.overrides.g_bar {
            sys.g_bar = g;
        }
        if sys.d_bar < 0.0 || sys.g_bar < 0.0 {
            return Err(CliError::Config("disturbance bounds must be nonnegative".into()));
        }
        Ok(sys)
    }

    /// Checks everything that can be checked before any file is written.
    pub fn validate(&self, command: crate::Command) -> Result<(), CliError> {
        use crate::Command;
        self.build_system()?;
        let bad = |m: &str| Err(CliError::Config(m.into()));
        match command {
            Command::Train => {
                self.train.validate().map_err(|e| CliError::Config(e.to_string()))?;
            }
            Command::Certify | Command::Simulate => {
                let c = &self.certify;
                if c.trajectories == 0 || !(c.horizon > 0.0) || !(c.dt > 0.0) || c.record_every == 0 {
                    return bad("certify needs trajectories >= 1, horizon > 0, dt > 0, record_every >= 1");
                }
                if c.grid_per_dim == 0 || c.segments == 0 || !(c.tol >= 0.0) {
                    return bad("certify needs grid_per_dim >= 1, segments >= 1, tol >= 0");
                }
                if self.policy == PolicyKind::Learned {
                    match &self.checkpoint {
                        None => return bad("a learned policy needs `checkpoint`"),
                        Some(p) if !p.is_file() => {
                            return Err(CliError::Config(format!("checkpoint {} does not exist", p.display())))
                        }
                        _ => {}
                    }
                }
                if self.policy == PolicyKind::Cvstem || c.reference_cvstem {
                    self.validate_cvstem()?;
                }
            }
            Command::Cvstem => self.validate_cvstem()?,
            Command::Selftest => {}
        }
        Ok(())
    }

    fn validate_cvstem(&self) -> Result<(), CliError> {
        let c = &self.cvstem;
        if !(c.alpha > 0.0) || c.alpha_s < 0.0 || !(c.r > 0.0) || !(c.chi_max >= 1.0) || c.grid_per_dim == 0 || c.segments == 0 {
            return Err(CliError::Config(
                "cvstem needs alpha > 0, alpha_s >= 0, r > 0, chi_max >= 1, grid_per_dim >= 1, segments >= 1".into(),
            ));
        }
        Ok(())
    }
}
