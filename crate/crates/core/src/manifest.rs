use std::collections::BTreeMap;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

/// Provenance block embedded in every emitted report.
///
/// Everything except `wall_clock_unix` is a pure function of the inputs, so
/// two runs with equal manifests produce identical numbers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub seed: Option<u64>,
    pub samples: BTreeMap<String, u64>,
    pub config_hash: Option<String>,
    pub classes: Vec<String>,
    pub parameters: BTreeMap<String, String>,
    pub wall_clock_unix: u64,
}

impl RunManifest {
    pub fn new(command: &str) -> Self {
        Self {
            tool: "modelrisk".to_string(),
            version: crate::VERSION.to_string(),
            command: command.to_string(),
            seed: None,
            samples: BTreeMap::new(),
            config_hash: None,
            classes: Vec::new(),
            parameters: BTreeMap::new(),
            wall_clock_unix: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map_or(0, |d| d.as_secs()),
        }
    }

    pub fn seed(mut self, seed: u64) -> Self {
        self.seed = Some(seed);
        self
    }

    pub fn samples(mut self, name: &str, n: u64) -> Self {
        self.samples.insert(name.to_string(), n);
        self
    }

    pub fn config_hash(mut self, hash: String) -> Self {
        self.config_hash = Some(hash);
        self
    }

    pub fn classes(mut self, classes: &[String]) -> Self {
        self.classes = classes.to_vec();
        self
    }

    pub fn param(mut self, key: &str, value: impl ToString) -> Self {
        self.parameters.insert(key.to_string(), value.to_string());
        self
    }
}

/// A report body together with its manifest.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Report<T> {
    pub manifest: RunManifest,
    #[serde(flatten)]
    pub body: T,
}
