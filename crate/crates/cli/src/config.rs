//! TOML scenario files. Every section is optional; each verb reads the
//! sections it needs and validates them before computing anything.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use backstep_core::model::{PvdParams, TargetState};
use backstep_core::pde::{Growth, SolverConfig};

use crate::CliError;

pub const DEFAULT_SEED: u64 = 20_240_611;

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub solver: SolverSection,
    #[serde(default)]
    pub kernel: KernelSection,
    #[serde(default)]
    pub control: ControlSection,
    pub schedule: Option<ScheduleSection>,
    #[serde(default)]
    pub nonlinear: NonlinearSection,
    #[serde(default)]
    pub output: OutputSection,
}

fn default_seed() -> u64 {
    DEFAULT_SEED
}

/// Either a scalar mode (`sigma`, `v_bar`) or a PVD system given by its
/// pair coefficients `[i, j, K_ij]` and target fluxes `phi_bar`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub sigma: f64,
    pub v_bar: f64,
    pub e0: f64,
    pub n: Option<usize>,
    pub pairs: Option<Vec<(usize, usize, f64)>>,
    pub phi_bar: Option<Vec<f64>>,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            sigma: 1.0,
            v_bar: 0.25,
            e0: 1.0,
            n: None,
            pairs: None,
            phi_bar: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverSection {
    pub m: usize,
    pub dt: f64,
    pub theta: f64,
    pub startup_steps: usize,
    pub upwind: bool,
    pub output_every: usize,
}

impl Default for SolverSection {
    fn default() -> Self {
        let d = SolverConfig::default();
        Self {
            m: d.m,
            dt: d.dt,
            theta: d.theta,
            startup_steps: d.startup_steps,
            upwind: d.upwind,
            output_every: 10,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KernelSection {
    /// Nodes per side of the kernel grid.
    pub nodes: usize,
    /// Domain for the `kernel` verb; the simulations size it themselves.
    pub l: f64,
}

impl Default for KernelSection {
    fn default() -> Self {
        Self { nodes: 401, l: 1.0 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControlSection {
    pub lambda: f64,
    pub t_end: f64,
    /// Thickness feedback gain and initial thickness offset.
    pub mu: f64,
    pub de0: f64,
    /// Amplitude of the cosine in the initial profile.
    pub amplitude: f64,
}

impl Default for ControlSection {
    fn default() -> Self {
        Self {
            lambda: 5.0,
            t_end: 1.0,
            mu: 1.0,
            de0: 0.1,
            amplitude: 0.5,
        }
    }
}

/// Explicit `times`/`lambdas`, or the default sequences with `intervals`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleSection {
    pub t_end: f64,
    pub gamma: f64,
    pub times: Option<Vec<f64>>,
    pub lambdas: Option<Vec<f64>>,
    pub intervals: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NonlinearSection {
    pub cells: usize,
    pub dt: f64,
    pub t_end: f64,
    /// Initial profile `u_bar + offset + amplitude cos(pi y)` per species.
    pub offset: Vec<f64>,
    pub amplitude: Vec<f64>,
    pub fit_from: f64,
    pub eps: f64,
}

impl Default for NonlinearSection {
    fn default() -> Self {
        Self {
            cells: 200,
            dt: 1e-2,
            t_end: 50.0,
            offset: vec![0.05, -0.05],
            amplitude: vec![0.1, -0.05],
            fit_from: 5.0,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    pub dir: Option<PathBuf>,
}

pub const OUT_DIR_ENV: &str = "BACKSTEP_OUT_DIR";

impl Scenario {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| match e {
            CliError::Config(msg) => CliError::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        if text.trim().is_empty() {
            return Err(CliError::Config("line 1: empty config".into()));
        }
        toml::from_str(text).map_err(|e| {
            let line = e
                .span()
                .map(|s| text[..s.start.min(text.len())].matches('\n').count() + 1)
                .unwrap_or(1);
            CliError::Config(format!("line {line}: {}", e.message()))
        })
    }

    /// `--out`, then the environment override, then `[output] dir`.
    pub fn out_dir(&self, flag: Option<&Path>) -> PathBuf {
        if let Some(p) = flag {
            return p.to_path_buf();
        }
        if let Some(p) = std::env::var_os(OUT_DIR_ENV) {
            return PathBuf::from(p);
        }
        self.output.dir.clone().unwrap_or_else(|| PathBuf::from("out"))
    }

    pub fn solver(&self, refine: u32) -> Result<SolverConfig, CliError> {
        let s = &self.solver;
        let cfg = SolverConfig {
            m: s.m,
            dt: s.dt,
            theta: s.theta,
            startup_steps: s.startup_steps,
            upwind: s.upwind,
        }
        .refined(refine);
        cfg.validate().map_err(|e| CliError::Config(format!("[solver]: {e}")))?;
        Ok(cfg)
    }

    pub fn kernel_nodes(&self, refine: u32) -> Result<usize, CliError> {
        if self.kernel.nodes < 3 {
            return Err(CliError::Config("[kernel] nodes must be at least 3".into()));
        }
        Ok((self.kernel.nodes - 1) * (1 << refine) + 1)
    }

    pub fn growth(&self) -> Result<Growth, CliError> {
        if let Some(t) = self.target()? {
            return Ok(Growth::from(&t));
        }
        Growth::new(self.model.e0, self.model.v_bar).map_err(|e| CliError::Config(format!("[model]: {e}")))
    }

    pub fn params(&self) -> Result<Option<PvdParams>, CliError> {
        match (&self.model.pairs, self.model.n) {
            (None, None) => Ok(None),
            (Some(pairs), Some(n)) => PvdParams::from_pairs(n, pairs)
                .map(Some)
                .map_err(|e| CliError::Config(format!("[model] pairs: {e}"))),
            _ => Err(CliError::Config("[model] needs both n and pairs".into())),
        }
    }

    pub fn target(&self) -> Result<Option<TargetState>, CliError> {
        match &self.model.phi_bar {
            None => Ok(None),
            Some(phi) => TargetState::new(phi.clone(), self.model.e0)
                .map(Some)
                .map_err(|e| CliError::Config(format!("[model] phi_bar: {e}"))),
        }
    }

    pub fn require_positive(&self, what: &str, v: f64) -> Result<(), CliError> {
        if v > 0.0 && v.is_finite() {
            Ok(())
        } else {
            Err(CliError::Config(format!("{what} must be positive, got {v}")))
        }
    }
}
