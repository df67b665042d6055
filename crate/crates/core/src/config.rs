//! Versioned JSON experiment configuration.
//!
//! ```json
//! {
//!   "version": 1,
//!   "model": "DLRM-RMC1",
//!   "cpu": "skylake",
//!   "accel": "default",
//!   "sla": "medium",
//!   "queries": 50000
//! }
//! ```
//!
//! `model`, `cpu` and `accel` take a built-in name or an inline spec. Omitted
//! keys take the defaults below; unknown keys are an error.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::loadgen::SizeDistribution;
use crate::model::{builtin_model, ModelSpec};
use crate::platform::{accelerator, cpu_platform, AcceleratorSpec, CpuPlatformSpec};
use crate::sim::TraceParams;
use crate::targets::{sla_seconds, SlaLevel};

pub const CONFIG_VERSION: u32 = 1;
pub const DEFAULT_SEED: u64 = 7;
pub const DEFAULT_QUERIES: usize = 50_000;
pub const DEFAULT_REPLICAS: usize = 3;
/// Overrides `base_seed` when set.
pub const SEED_ENV: &str = "RECSIM_SEED";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ModelRef {
    Name(String),
    Inline(ModelSpec),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum CpuRef {
    Name(String),
    Inline(CpuPlatformSpec),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AccelRef {
    Name(String),
    Inline(AcceleratorSpec),
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Grids {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub batch: Option<Vec<usize>>,
    /// `null` entries mean CPU-only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threshold: Option<Vec<Option<usize>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sla: Option<Vec<SlaLevel>>,
}

fn default_version() -> u32 {
    CONFIG_VERSION
}
fn default_cpu() -> CpuRef {
    CpuRef::Name("skylake".into())
}
fn default_sla() -> SlaLevel {
    SlaLevel::Medium
}
fn default_seed() -> u64 {
    DEFAULT_SEED
}
fn default_queries() -> usize {
    DEFAULT_QUERIES
}
fn default_replicas() -> usize {
    DEFAULT_REPLICAS
}
fn default_distribution() -> SizeDistribution {
    SizeDistribution::production()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_version")]
    pub version: u32,
    pub model: ModelRef,
    #[serde(default = "default_cpu")]
    pub cpu: CpuRef,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub accel: Option<AccelRef>,
    #[serde(default = "default_sla")]
    pub sla: SlaLevel,
    /// Explicit target in seconds; wins over `sla`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sla_s: Option<f64>,
    #[serde(default = "default_distribution")]
    pub distribution: SizeDistribution,
    #[serde(default = "default_seed")]
    pub base_seed: u64,
    #[serde(default = "default_queries")]
    pub queries: usize,
    #[serde(default = "default_replicas")]
    pub replicas: usize,
    #[serde(default)]
    pub grids: Grids,
}

impl ExperimentConfig {
    pub fn for_model(model: &str) -> Self {
        ExperimentConfig {
            version: CONFIG_VERSION,
            model: ModelRef::Name(model.into()),
            cpu: default_cpu(),
            accel: None,
            sla: default_sla(),
            sla_s: None,
            distribution: default_distribution(),
            base_seed: DEFAULT_SEED,
            queries: DEFAULT_QUERIES,
            replicas: DEFAULT_REPLICAS,
            grids: Grids::default(),
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig =
            serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        if cfg.version != CONFIG_VERSION {
            return Err(Error::Config(format!(
                "unsupported config version {} (expected {CONFIG_VERSION})",
                cfg.version
            )));
        }
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Resolves names and applies `RECSIM_SEED` from the process environment.
    pub fn resolve(&self) -> Result<Experiment> {
        let seed = match std::env::var(SEED_ENV) {
            Ok(v) => Some(
                v.trim()
                    .parse()
                    .map_err(|_| Error::Config(format!("{SEED_ENV}={v} is not a u64")))?,
            ),
            Err(_) => None,
        };
        self.resolve_with_seed(seed)
    }

    pub fn resolve_with_seed(&self, seed_override: Option<u64>) -> Result<Experiment> {
        let model = match &self.model {
            ModelRef::Name(n) => builtin_model(n)?,
            ModelRef::Inline(m) => {
                m.validate()?;
                m.clone()
            }
        };
        let cpu = match &self.cpu {
            CpuRef::Name(n) => cpu_platform(n)?,
            CpuRef::Inline(c) => {
                c.validate()?;
                c.clone()
            }
        };
        let accel = match &self.accel {
            None => None,
            Some(AccelRef::Name(n)) => Some(accelerator(n)?),
            Some(AccelRef::Inline(a)) => {
                a.validate()?;
                Some(a.clone())
            }
        };
        let sla = match self.sla_s {
            Some(s) if s > 0.0 && s.is_finite() => s,
            Some(s) => return Err(Error::Config(format!("sla_s must be positive, got {s}"))),
            None => sla_seconds(&model.name, self.sla).map_err(|_| {
                Error::Config(format!(
                    "model `{}` has no built-in targets; set sla_s",
                    model.name
                ))
            })?,
        };
        self.distribution.validate()?;
        if self.queries == 0 || self.replicas == 0 {
            return Err(Error::Config("queries and replicas must be >= 1".into()));
        }
        Ok(Experiment {
            model,
            cpu,
            accel,
            sla,
            params: TraceParams {
                distribution: self.distribution.clone(),
                queries: self.queries,
                base_seed: seed_override.unwrap_or(self.base_seed),
                replicas: self.replicas,
            },
        })
    }
}

/// A config with every name resolved.
#[derive(Clone, Debug, PartialEq)]
pub struct Experiment {
    pub model: ModelSpec,
    pub cpu: CpuPlatformSpec,
    pub accel: Option<AcceleratorSpec>,
    pub sla: f64,
    pub params: TraceParams,
}
