//! Run manifest: which command produced an output directory, with which
//! settings, from which seed, and how long it took.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::files::write_atomic;
use crate::CliError;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub version: String,
    pub seed: u64,
    pub config: BTreeMap<String, String>,
    pub wall_time_secs: f64,
}

impl Manifest {
    pub fn new(command: &str, seed: u64) -> Self {
        Manifest {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            seed,
            config: BTreeMap::new(),
            wall_time_secs: 0.0,
        }
    }

    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.config.insert(key.to_string(), value.to_string());
    }

    /// Stamps the elapsed wall time and writes `manifest.json` into `dir`.
    pub fn write(mut self, dir: &Path, started: Instant) -> Result<(), CliError> {
        self.wall_time_secs = started.elapsed().as_secs_f64();
        let json = serde_json::to_string_pretty(&self).expect("manifest serialization cannot fail");
        write_atomic(&dir.join("manifest.json"), format!("{json}\n").as_bytes())
    }
}
