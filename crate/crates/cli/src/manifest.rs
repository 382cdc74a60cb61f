use std::collections::BTreeMap;
use std::path::Path;

use plom::{PlomError, Result};
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const FAILED_FILE: &str = "FAILED";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Status {
    Ok,
    DryRun,
    Failed,
}

/// Quantities computed from the data; absent until the stage that produces them runs.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Derived {
    pub n_features: Option<usize>,
    pub n_samples: Option<usize>,
    pub nu: Option<usize>,
    pub err_pca: Option<f64>,
    pub s: Option<f64>,
    pub s_hat: Option<f64>,
    pub eps_opt: Option<f64>,
    pub m_opt: Option<usize>,
    pub gap_ratio: Option<f64>,
    /// Leading diffusion-maps eigenvalues at the chosen bandwidth.
    pub spectrum_head: Vec<f64>,
    pub n_clamped: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub version: String,
    pub command: String,
    pub status: Status,
    /// The configuration as given, before defaults were resolved.
    pub requested: RunConfig,
    /// Every value actually used; feeding this back as a config reproduces the run.
    pub resolved: RunConfig,
    pub derived: Derived,
    /// Artifact name to file name inside the output directory.
    pub artifacts: BTreeMap<String, String>,
    pub timings_seconds: BTreeMap<String, f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl RunManifest {
    pub fn new(command: &str, requested: RunConfig) -> Self {
        RunManifest {
            version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            status: Status::Ok,
            resolved: requested.clone(),
            requested,
            derived: Derived::default(),
            artifacts: BTreeMap::new(),
            timings_seconds: BTreeMap::new(),
            error: None,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes")
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        let path = dir.join(MANIFEST_FILE);
        std::fs::write(&path, self.to_json() + "\n").map_err(|e| PlomError::Io { path, source: e })
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        let text = std::fs::read_to_string(&path).map_err(|e| PlomError::Io { path: path.clone(), source: e })?;
        serde_json::from_str(&text).map_err(|e| PlomError::Json { path, source: e })
    }
}
