//! Structured run configuration. Parsing is fail-closed: unknown keys are
//! rejected so a typo cannot silently fall back to a default.

use anyhow::{bail, Context};
use serde::Deserialize;
use std::path::Path;

/// Bench sweep description, loadable from TOML.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchConfig {
    pub kernels: Vec<String>,
    pub b: Vec<usize>,
    pub tokens: Vec<usize>,
    pub r: Vec<usize>,
    pub d1: usize,
    pub d2: usize,
    #[serde(default = "default_mode")]
    pub mode: String,
    #[serde(default = "default_precision")]
    pub precision: String,
    #[serde(default = "default_repetitions")]
    pub repetitions: usize,
    #[serde(default = "default_warmup")]
    pub warmup: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub out: Option<String>,
}

fn default_mode() -> String {
    "decode".into()
}

fn default_precision() -> String {
    "real32".into()
}

fn default_repetitions() -> usize {
    5
}

fn default_warmup() -> usize {
    1
}

impl BenchConfig {
    pub fn from_path(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let cfg: BenchConfig = toml::from_str(&text)
            .with_context(|| format!("parsing config {}", path.display()))?;
        if cfg.kernels.is_empty() || cfg.b.is_empty() || cfg.tokens.is_empty() || cfg.r.is_empty()
        {
            bail!("config must list at least one kernel, batch size, token count and rank");
        }
        Ok(cfg)
    }
}
