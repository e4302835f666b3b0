//! Run configuration: one JSON file with per-command sections, overridden
//! by command-line flags (flags win). Unknown keys are rejected.

use std::path::Path;

use serde::{Deserialize, Serialize};

use xtalgen::engine::{SamplerOptions, TrainConfig};
use xtalgen::eval::EvalOptions;
use xtalgen::util::{fnv1a64, mix64};
use xtalgen::{Error, Result};

/// Fixed seed for the hash text encoder so that training and sampling
/// derive identical embeddings regardless of the run seed.
pub const HASH_ENCODER_SEED: u64 = 0;

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub sampler: SamplerOptions,
    pub eval: EvalOptions,
}

pub fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    match path {
        None => Ok(RunConfig::default()),
        Some(p) => {
            let text =
                std::fs::read_to_string(p).map_err(|e| Error::io(p.display().to_string(), e))?;
            let cfg: RunConfig = serde_json::from_str(&text)
                .map_err(|e| Error::Config(format!("{}: {e}", p.display())))?;
            cfg.train.validate()?;
            Ok(cfg)
        }
    }
}

/// Stable fingerprint of the effective configuration.
pub fn config_hash(value: &impl Serialize) -> String {
    let canon = serde_json::to_string(value).unwrap_or_default();
    format!("{:016x}", mix64(fnv1a64(canon.as_bytes())))
}

/// Provenance header embedded in every output.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Provenance {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub config_hash: String,
    pub seed: u64,
}

impl Provenance {
    pub fn new(command: &str, cfg: &impl Serialize, seed: u64) -> Provenance {
        Provenance {
            tool: "xtalgen".to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            config_hash: config_hash(cfg),
            seed,
        }
    }

    /// First line of a JSONL output.
    pub fn jsonl_line(&self) -> String {
        serde_json::json!({ "provenance": self }).to_string()
    }
}

/// Build a rayon pool honoring `--jobs`; `None` keeps the default.
pub fn thread_pool(jobs: Option<usize>) -> Result<rayon::ThreadPool> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(j) = jobs {
        if j == 0 {
            return Err(Error::Config("--jobs must be >= 1".into()));
        }
        builder = builder.num_threads(j);
    }
    builder
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))
}
