//! HTTP+JSON API over an atlas, versioned under `/v1`.
//!
//! | method | path | purpose |
//! |---|---|---|
//! | GET | `/v1/aspects` | aspect ids, dimensions, document counts |
//! | GET | `/v1/layouts` | every known layout handle |
//! | POST | `/v1/layouts` | request a layout for `{weights, tsne?}`; cached per atlas |
//! | GET | `/v1/layouts/{id}` | handle with status `computing`, `ready` or `failed` |
//! | GET | `/v1/layouts/{id}/points` | coordinates, doc ids, titles, labels |
//! | POST | `/v1/layouts/{id}/insert` | place `{text}` or `{embeddings}` into the layout |
//! | POST | `/v1/layouts/{id}/decode` | reconstruct and decode the embedding at `{x, y, aspect}` |
//! | POST | `/v1/similarity` | top-k neighbors of `{doc_id}` under `{weights}` |
//!
//! Errors are `{code, message, detail}`. Endpoints that need a finished
//! layout answer 503 with `Retry-After` while it is still computing.

pub mod config;
pub mod error;
pub mod routes;
pub mod state;

use std::path::PathBuf;

pub use config::{DecoderKind, ServerConfig};
pub use error::{ApiError, ErrorBody};
pub use routes::router;
pub use state::{AppState, LayoutStatus, SessionLayoutHandle};

#[derive(Debug, thiserror::Error)]
pub enum ServerError {
    #[error("configuration: {0}")]
    Config(String),

    #[error("i/o error on {0}: {1}")]
    Io(PathBuf, #[source] std::io::Error),

    #[error(transparent)]
    Atlas(#[from] atlas_core::Error),

    #[error("{}", .0.body.message)]
    Startup(ApiError),
}

/// Loads the configured atlas and serves until the process is stopped.
pub async fn serve(cfg: ServerConfig) -> Result<(), ServerError> {
    let atlas = atlas_core::store::load_atlas(&cfg.atlas)?;
    let addr = cfg.addr();
    let state = AppState::new(atlas, cfg).map_err(ServerError::Startup)?;
    let listener = tokio::net::TcpListener::bind(addr).await.map_err(|e| ServerError::Io(PathBuf::from(addr.to_string()), e))?;
    tracing::info!(%addr, "serving atlas");
    axum::serve(listener, router(state)).await.map_err(|e| ServerError::Io(PathBuf::from(addr.to_string()), e))
}
