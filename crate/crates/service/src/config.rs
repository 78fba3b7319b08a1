//! Service configuration file. Every key is optional; command-line flags
//! override whatever the file sets.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::{Deserialize, Serialize};

use classroom_core::backend::BackendConfig;
use classroom_core::SessionConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    /// Offline: a fixture file if given, otherwise the built-in policy.
    #[default]
    Scripted,
    /// OpenAI-compatible chat-completions endpoint.
    Live,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ServerSection {
    pub bind: String,
    pub data_dir: PathBuf,
    pub courses_dir: PathBuf,
    pub quizzes_dir: PathBuf,
    /// Static bearer token required on every request when set.
    pub token: Option<String>,
    pub backend: BackendKind,
    pub fixture: Option<PathBuf>,
}

impl Default for ServerSection {
    fn default() -> Self {
        ServerSection {
            bind: "127.0.0.1:8080".into(),
            data_dir: "data/sessions".into(),
            courses_dir: "data/courses".into(),
            quizzes_dir: "data/quizzes".into(),
            token: None,
            backend: BackendKind::Scripted,
            fixture: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ServiceConfig {
    pub server: ServerSection,
    pub backend: BackendConfig,
    pub session: SessionConfig,
}

impl ServiceConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let config = if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
        } else {
            toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
        };
        Ok(config)
    }

    /// Loads `path` if given, otherwise returns defaults.
    pub fn load_or_default(path: Option<&Path>) -> anyhow::Result<Self> {
        path.map_or_else(|| Ok(ServiceConfig::default()), ServiceConfig::load)
    }
}
