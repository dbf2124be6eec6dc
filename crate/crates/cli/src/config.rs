//! Settings file. Values here sit below flags and environment variables.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Deserialize;

pub const DEFAULT_CONFIG: &str = "scigraph.toml";

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub store: Option<PathBuf>,
    pub retries: Option<usize>,
    pub parallel: Option<usize>,
    pub prompts: Option<PathBuf>,
    pub llm_endpoint: Option<String>,
    pub llm_model: Option<String>,
    pub llm_api_key: Option<String>,
    pub llm_input_per_mtok: Option<f64>,
    pub llm_output_per_mtok: Option<f64>,
    pub embed_endpoint: Option<String>,
    pub embed_model: Option<String>,
    pub embed_api_key: Option<String>,
    pub embed_dim: Option<usize>,
}

impl FileConfig {
    /// Reads an explicit config file, or `scigraph.toml` in the working
    /// directory when it exists.
    pub fn load(explicit: Option<&Path>) -> Result<Self> {
        let path = match explicit {
            Some(p) => p.to_path_buf(),
            None => {
                let p = PathBuf::from(DEFAULT_CONFIG);
                if !p.exists() {
                    return Ok(FileConfig::default());
                }
                p
            }
        };
        let text = std::fs::read_to_string(&path).with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }
}

/// First of flag-or-env (clap has already merged those), then the file.
pub fn pick<T: Clone>(cli: &Option<T>, file: &Option<T>) -> Option<T> {
    cli.clone().or_else(|| file.clone())
}
