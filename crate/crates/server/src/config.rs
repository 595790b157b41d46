use std::fs;
use std::net::{IpAddr, Ipv4Addr, SocketAddr};
use std::path::{Path, PathBuf};

use atlas_core::backends::remote::RemoteConfig;
use atlas_core::tsne::TsneConfig;
use serde::{Deserialize, Serialize};

use crate::ServerError;

/// Which decoder answers `POST /layouts/{id}/decode`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecoderKind {
    /// Summary of the nearest stored document.
    #[default]
    NearestNeighbor,
    /// Nearest-neighbor decoding plus the unigram scoring stub.
    Mixture,
    /// A chat-completion endpoint, configured under `[remote]`.
    Remote,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServerConfig {
    pub host: IpAddr,
    pub port: u16,
    pub atlas: PathBuf,
    /// Directory served at `/`, normally the built UI bundle.
    pub static_dir: Option<PathBuf>,
    /// Layout computations allowed to run at once.
    pub max_concurrent_layouts: usize,
    pub decoder: DecoderKind,
    pub remote: RemoteConfig,
    /// Base t-SNE settings; requests may override individual fields.
    pub tsne: TsneConfig,
    /// Seconds clients are told to wait before polling a computing layout again.
    pub retry_after_secs: u64,
}

impl Default for ServerConfig {
    fn default() -> Self {
        ServerConfig {
            host: IpAddr::V4(Ipv4Addr::LOCALHOST),
            port: 8080,
            atlas: PathBuf::from("atlas.bin"),
            static_dir: None,
            max_concurrent_layouts: 2,
            decoder: DecoderKind::default(),
            remote: RemoteConfig::default(),
            tsne: TsneConfig::default(),
            retry_after_secs: 1,
        }
    }
}

fn parse_env<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, ServerError> {
    value.trim().parse().map_err(|_| ServerError::Config(format!("{key}={value:?} is not valid")))
}

impl ServerConfig {
    /// Defaults, then the TOML file if given, then `ATLAS_*` variables from `env`.
    pub fn load(file: Option<&Path>, env: impl Fn(&str) -> Option<String>) -> Result<Self, ServerError> {
        let mut cfg = match file {
            Some(path) => {
                let text = fs::read_to_string(path).map_err(|e| ServerError::Io(path.to_path_buf(), e))?;
                toml::from_str(&text).map_err(|e| ServerError::Config(format!("{}: {e}", path.display())))?
            }
            None => ServerConfig::default(),
        };
        cfg.apply_env(env)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn apply_env(&mut self, env: impl Fn(&str) -> Option<String>) -> Result<(), ServerError> {
        if let Some(v) = env("ATLAS_HOST") {
            self.host = parse_env("ATLAS_HOST", &v)?;
        }
        if let Some(v) = env("ATLAS_PORT") {
            self.port = parse_env("ATLAS_PORT", &v)?;
        }
        if let Some(v) = env("ATLAS_PATH") {
            self.atlas = PathBuf::from(v);
        }
        if let Some(v) = env("ATLAS_STATIC_DIR") {
            self.static_dir = Some(PathBuf::from(v));
        }
        if let Some(v) = env("ATLAS_MAX_LAYOUTS") {
            self.max_concurrent_layouts = parse_env("ATLAS_MAX_LAYOUTS", &v)?;
        }
        if let Some(v) = env("ATLAS_DECODER") {
            self.decoder = serde_json::from_value(serde_json::Value::String(v.clone()))
                .map_err(|_| ServerError::Config(format!("ATLAS_DECODER={v:?} is not a decoder kind")))?;
        }
        if let Some(v) = env("ATLAS_REMOTE_ENDPOINT") {
            self.remote.endpoint = v;
        }
        if let Some(v) = env("ATLAS_REMOTE_MODEL") {
            self.remote.model = v;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ServerError> {
        if self.max_concurrent_layouts == 0 {
            return Err(ServerError::Config("max_concurrent_layouts must be at least 1".into()));
        }
        self.tsne.validate().map_err(|e| ServerError::Config(e.to_string()))
    }

    pub fn addr(&self) -> SocketAddr {
        SocketAddr::new(self.host, self.port)
    }
}
