//! Experiment configuration, read from TOML and resolved to concrete
//! values before a run.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::datagen::{InputLaw, NoiseLaw};
use crate::error::{Error, Result};
use crate::mala::PilotTuning;
use crate::net::NetworkArch;
use crate::rjmcmc::InitSupport;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SamplerKind {
    Mala,
    Rjmcmc,
}

impl SamplerKind {
    pub fn as_str(self) -> &'static str {
        match self {
            SamplerKind::Mala => "mala",
            SamplerKind::Rjmcmc => "rjmcmc",
        }
    }
}

impl std::str::FromStr for SamplerKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mala" => Ok(SamplerKind::Mala),
            "rjmcmc" => Ok(SamplerKind::Rjmcmc),
            other => Err(Error::config(format!(
                "unknown sampler '{other}' (expected mala or rjmcmc)"
            ))),
        }
    }
}

/// Which regression function generates the data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum TeacherConfig {
    /// Random sparse teacher network on the experiment architecture.
    Network { sparsity: usize, seed: u64 },
    /// Catalog function `a`, `b` or `c`.
    Builtin { id: String },
}

impl std::str::FromStr for TeacherConfig {
    type Err = Error;
    /// `builtin:<id>` or `network:<sparsity>[:<seed>]`.
    fn from_str(s: &str) -> Result<Self> {
        let mut parts = s.split(':');
        match (parts.next(), parts.next(), parts.next(), parts.next()) {
            (Some("builtin"), Some(id), None, None) => Ok(TeacherConfig::Builtin { id: id.to_string() }),
            (Some("network"), Some(k), seed, None) => {
                let sparsity = k
                    .parse()
                    .map_err(|_| Error::config(format!("bad teacher sparsity '{k}'")))?;
                let seed = match seed {
                    Some(v) => v
                        .parse()
                        .map_err(|_| Error::config(format!("bad teacher seed '{v}'")))?,
                    None => 0,
                };
                Ok(TeacherConfig::Network { sparsity, seed })
            }
            _ => Err(Error::config(format!(
                "teacher '{s}' not understood (expected builtin:<id> or network:<sparsity>[:<seed>])"
            ))),
        }
    }
}

/// Chain settings shared by both samplers. `lambda` defaults to `n / Xi_0`
/// (times `lambda_scale`), computed per dataset size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChainSettings {
    pub lambda: Option<f64>,
    pub lambda_scale: f64,
    pub gamma: f64,
    pub proposal_std: Option<f64>,
    pub burn_in: usize,
    pub gap: usize,
    pub n_keep: usize,
    pub pilot: Option<PilotTuning>,
    /// Starting support of the reversible-jump chain.
    pub init_support: InitSupport,
}

impl Default for ChainSettings {
    fn default() -> Self {
        ChainSettings {
            lambda: None,
            lambda_scale: 1.0,
            gamma: 1e-2,
            proposal_std: None,
            burn_in: 5000,
            gap: 50,
            n_keep: 20,
            pilot: Some(PilotTuning::default()),
            init_support: InitSupport::Full,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    /// Directory for `results.csv`, `summary.json` and sidecars.
    pub dir: PathBuf,
    /// Record wall-clock milliseconds per cell. Off by default so that
    /// seeded reruns produce byte-identical files.
    pub wall_time: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig {
            dir: PathBuf::from("gsn-out"),
            wall_time: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_name")]
    pub name: String,
    pub arch: NetworkArch,
    pub teacher: TeacherConfig,
    #[serde(default = "default_noise")]
    pub noise: NoiseLaw,
    #[serde(default = "default_input")]
    pub input: InputLaw,
    pub sampler: SamplerKind,
    #[serde(default = "default_base")]
    pub sparsity_base: f64,
    #[serde(default)]
    pub chain: ChainSettings,
    pub n_grid: Vec<usize>,
    pub seeds: Vec<u64>,
    /// Monte-Carlo points for excess-risk evaluation.
    #[serde(default = "default_eval_points")]
    pub eval_points: usize,
    #[serde(default = "default_eval_seed")]
    pub eval_seed: u64,
    #[serde(default)]
    pub output: OutputConfig,
}

fn default_name() -> String {
    "experiment".into()
}
fn default_noise() -> NoiseLaw {
    NoiseLaw::Gaussian { sigma: 0.1 }
}
fn default_input() -> InputLaw {
    InputLaw::Uniform
}
fn default_base() -> f64 {
    2.0
}
fn default_eval_points() -> usize {
    100_000
}
fn default_eval_seed() -> u64 {
    0x5eed
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(msg) => Error::config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.arch.validate()?;
        if self.n_grid.is_empty() || self.n_grid.windows(2).any(|w| w[0] >= w[1]) || self.n_grid[0] == 0 {
            return Err(Error::config(
                "n_grid must be nonempty, positive and strictly increasing",
            ));
        }
        if self.seeds.is_empty() {
            return Err(Error::config("at least one seed is required"));
        }
        if self.eval_points < 2 {
            return Err(Error::config("eval_points must be at least 2"));
        }
        if !(self.sparsity_base > 1.0) {
            return Err(Error::config("sparsity_base must exceed 1"));
        }
        let c = &self.chain;
        if let Some(l) = c.lambda {
            if !(l > 0.0) {
                return Err(Error::config("lambda must be positive"));
            }
        }
        if !(c.lambda_scale > 0.0) || !(c.gamma > 0.0) || c.gap == 0 || c.n_keep == 0 {
            return Err(Error::config(
                "chain needs lambda_scale > 0, gamma > 0, gap >= 1, n_keep >= 1",
            ));
        }
        if let Some(s) = c.proposal_std {
            if !(s > 0.0) {
                return Err(Error::config("proposal_std must be positive"));
            }
        }
        match self.noise {
            NoiseLaw::Gaussian { sigma } if !(sigma > 0.0) => {
                return Err(Error::config("noise sigma must be positive"));
            }
            NoiseLaw::Uniform { half_width } if !(half_width > 0.0) => {
                return Err(Error::config("noise half_width must be positive"));
            }
            _ => {}
        }
        match &self.teacher {
            TeacherConfig::Network { sparsity, .. } => {
                if *sparsity == 0 || *sparsity > self.arch.param_count() {
                    return Err(Error::config("teacher sparsity must be in 1..=P"));
                }
            }
            TeacherConfig::Builtin { id } => {
                let b = crate::datagen::Builtin::from_id(id)?;
                if self.arch.input_dim < b.min_input_dim() {
                    return Err(Error::config(format!(
                        "builtin '{id}' needs at least {} inputs",
                        b.min_input_dim()
                    )));
                }
            }
        }
        Ok(())
    }
}
