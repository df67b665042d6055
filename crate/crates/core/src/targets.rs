//! Per-model p95 latency targets.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SlaLevel {
    Low,
    Medium,
    High,
}

impl SlaLevel {
    pub const ALL: [SlaLevel; 3] = [SlaLevel::Low, SlaLevel::Medium, SlaLevel::High];

    pub fn factor(self) -> f64 {
        match self {
            SlaLevel::Low => 0.5,
            SlaLevel::Medium => 1.0,
            SlaLevel::High => 1.5,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            SlaLevel::Low => "low",
            SlaLevel::Medium => "medium",
            SlaLevel::High => "high",
        }
    }
}

impl fmt::Display for SlaLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SlaLevel {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "low" => Ok(SlaLevel::Low),
            "medium" => Ok(SlaLevel::Medium),
            "high" => Ok(SlaLevel::High),
            _ => Err(Error::Config(format!("unknown sla level `{s}` (low, medium, high)"))),
        }
    }
}

/// Medium target in seconds for a zoo model.
pub fn medium_sla(model: &str) -> Result<f64> {
    let ms = match model {
        "DLRM-RMC1" => 100.0,
        "DLRM-RMC2" => 400.0,
        "DLRM-RMC3" => 100.0,
        "NCF" => 5.0,
        "WND" => 25.0,
        "MT-WND" => 25.0,
        "DIN" => 100.0,
        "DIEN" => 35.0,
        _ => return Err(Error::UnknownModel(model.to_string())),
    };
    Ok(ms * 1e-3)
}

pub fn sla_seconds(model: &str, level: SlaLevel) -> Result<f64> {
    Ok(medium_sla(model)? * level.factor())
}
