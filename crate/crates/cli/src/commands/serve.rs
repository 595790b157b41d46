use std::net::IpAddr;
use std::path::PathBuf;

use atlas_server::{DecoderKind, ServerConfig};

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
pub enum DecoderArg {
    #[value(alias = "nearest_neighbor")]
    NearestNeighbor,
    Mixture,
    Remote,
}

#[derive(Debug, clap::Args)]
pub struct Args {
    /// Server TOML file; flags and `ATLAS_*` variables override it.
    #[arg(long)]
    pub server_config: Option<PathBuf>,

    #[arg(long, env = "ATLAS_PATH")]
    pub atlas: Option<PathBuf>,

    #[arg(long, env = "ATLAS_HOST")]
    pub host: Option<IpAddr>,

    #[arg(long, env = "ATLAS_PORT")]
    pub port: Option<u16>,

    /// Directory with the browser UI build.
    #[arg(long, env = "ATLAS_STATIC_DIR")]
    pub static_dir: Option<PathBuf>,

    /// Layout computations running at once.
    #[arg(long, env = "ATLAS_MAX_LAYOUTS")]
    pub max_layouts: Option<usize>,

    #[arg(long, value_enum, env = "ATLAS_DECODER")]
    pub decoder: Option<DecoderArg>,

    #[arg(long, env = "ATLAS_REMOTE_ENDPOINT")]
    pub endpoint: Option<String>,

    #[arg(long, env = "ATLAS_REMOTE_MODEL")]
    pub model: Option<String>,
}

pub fn run(args: Args) -> anyhow::Result<()> {
    let mut cfg = ServerConfig::load(args.server_config.as_deref(), |k| std::env::var(k).ok())?;
    if let Some(v) = args.atlas {
        cfg.atlas = v;
    }
    if let Some(v) = args.host {
        cfg.host = v;
    }
    if let Some(v) = args.port {
        cfg.port = v;
    }
    if let Some(v) = args.static_dir {
        cfg.static_dir = Some(v);
    }
    if let Some(v) = args.max_layouts {
        cfg.max_concurrent_layouts = v;
    }
    if let Some(v) = args.decoder {
        cfg.decoder = match v {
            DecoderArg::NearestNeighbor => DecoderKind::NearestNeighbor,
            DecoderArg::Mixture => DecoderKind::Mixture,
            DecoderArg::Remote => DecoderKind::Remote,
        };
    }
    if let Some(v) = args.endpoint {
        cfg.remote.endpoint = v;
    }
    if let Some(v) = args.model {
        cfg.remote.model = v;
    }
    cfg.validate()?;
    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    rt.block_on(atlas_server::serve(cfg))?;
    Ok(())
}
