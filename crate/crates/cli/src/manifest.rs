//! Run manifests: a TOML record of everything needed to reproduce a command,
//! written next to every output. Field order is fixed by the struct
//! declarations, so serialization is stable.

use anyhow::{Context, Result};
use derev_core::metrics::MetricReport;
use derev_core::rir::RirSpec;
use derev_core::sampler::SamplerConfig;
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub run: RunInfo,
    pub inputs: Inputs,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rir_spec: Option<RirSpec>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub measurement: Option<MeasurementInfo>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sampler: Option<SamplerConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub provider: Option<ProviderInfo>,
    pub outputs: Outputs,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub metrics: Option<MetricReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trace: Option<Trace>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunInfo {
    pub command: String,
    pub version: String,
}

/// Input paths as given on the command line (resolve relative paths against
/// the directory a rerun is invoked from).
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct Inputs {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub clean: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub measurement: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rir: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reference: Option<String>,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct MeasurementInfo {
    pub snr_db: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProviderInfo {
    pub kind: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub command: Option<Vec<String>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub timeout_secs: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub var: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sigma_min: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub target: Option<String>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct Outputs {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub estimate: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub measurement: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rir: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub metrics: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trace: Option<String>,
}

/// Per-step residual trace, duplicated inline for self-contained manifests.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Trace {
    pub tau: Vec<f64>,
    pub residual: Vec<f64>,
}

impl Manifest {
    pub fn new(command: &str) -> Self {
        Manifest {
            run: RunInfo {
                command: command.to_string(),
                version: env!("CARGO_PKG_VERSION").to_string(),
            },
            inputs: Inputs::default(),
            rir_spec: None,
            measurement: None,
            sampler: None,
            provider: None,
            outputs: Outputs::default(),
            metrics: None,
            trace: None,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = toml::to_string(self).context("serializing manifest")?;
        crate::write_atomic(path, text.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }
}
