//! Service configuration: `vd.yaml`, then `VD_*` environment overrides, then
//! command-line flags.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use serde::Deserialize;

pub const DEFAULT_ADDR: &str = "127.0.0.1:7878";

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceConfig {
    pub addr: String,
    pub data_dir: Option<PathBuf>,
    pub cache_budget_bytes: u64,
    pub auth: AuthConfig,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AuthConfig {
    pub enabled: bool,
    pub token_file: Option<PathBuf>,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        ServiceConfig {
            addr: DEFAULT_ADDR.to_string(),
            data_dir: None,
            cache_budget_bytes: vds_core::engine::DEFAULT_BUDGET,
            auth: AuthConfig::default(),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("reading {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("parsing {path}: {source}")]
    Parse { path: PathBuf, source: serde_yaml::Error },
    #[error("{var}={value:?} is not a byte count")]
    Env { var: &'static str, value: String },
    #[error("token file: {0}")]
    Tokens(String),
}

impl ServiceConfig {
    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        serde_yaml::from_str(&text).map_err(|source| ConfigError::Parse {
            path: path.to_path_buf(),
            source,
        })
    }

    /// Reads `path` if given, else `./vd.yaml` when present, else defaults.
    pub fn load(path: Option<&Path>) -> Result<Self, ConfigError> {
        match path {
            Some(p) => Self::from_file(p),
            None if Path::new("vd.yaml").exists() => Self::from_file(Path::new("vd.yaml")),
            None => Ok(Self::default()),
        }
    }

    pub fn apply_env(&mut self, env: &HashMap<String, String>) -> Result<(), ConfigError> {
        if let Some(a) = env.get("VD_ADDR") {
            self.addr = a.clone();
        }
        if let Some(d) = env.get("VD_DATA_DIR") {
            self.data_dir = Some(PathBuf::from(d));
        }
        if let Some(b) = env.get("VD_CACHE_BUDGET") {
            self.cache_budget_bytes = b.trim().parse().map_err(|_| ConfigError::Env {
                var: "VD_CACHE_BUDGET",
                value: b.clone(),
            })?;
        }
        Ok(())
    }

    pub fn workspace_config(&self) -> vds_core::Config {
        vds_core::Config {
            data_dir: self.data_dir.clone(),
            cache_budget: self.cache_budget_bytes,
            ..vds_core::Config::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Reader,
    Writer,
}

#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
pub struct TokenEntry {
    pub token: String,
    pub role: Role,
    #[serde(default)]
    pub principal: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tokens {
    pub tokens: Vec<TokenEntry>,
}

impl Tokens {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let t: Tokens = serde_yaml::from_str(text).map_err(|e| ConfigError::Tokens(e.to_string()))?;
        let mut seen = std::collections::HashSet::new();
        for e in &t.tokens {
            if e.token.is_empty() {
                return Err(ConfigError::Tokens("empty token".into()));
            }
            if !seen.insert(&e.token) {
                return Err(ConfigError::Tokens("duplicate token".into()));
            }
        }
        Ok(t)
    }

    pub fn read(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text)
    }

    /// Role and principal name for a presented bearer token.
    pub fn lookup(&self, token: &str) -> Option<(Role, String)> {
        self.tokens.iter().find(|e| e.token == token).map(|e| {
            let who = e.principal.clone().unwrap_or_else(|| format!("token:{}", &e.token[..e.token.len().min(4)]));
            (e.role, who)
        })
    }
}
