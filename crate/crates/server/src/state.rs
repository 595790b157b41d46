use std::collections::{BTreeMap, HashMap};
use std::sync::{Arc, Mutex, RwLock};
use std::time::{SystemTime, UNIX_EPOCH};

use atlas_core::backends::remote::RemoteChatClient;
use atlas_core::backends::{DecoderBackend, EncoderBackend, MixtureLmDecoder, MockEncoder, NearestNeighborDecoder, PromptTemplates};
use atlas_core::eval::config_hash;
use atlas_core::geometry::AspectWeights;
use atlas_core::store::{atlas_fingerprint, Atlas, StoredLayout};
use atlas_core::tsne::{AffinityMatrix, TsneConfig};
use serde::{Deserialize, Serialize};
use tokio::sync::Semaphore;

use crate::config::{DecoderKind, ServerConfig};
use crate::error::{ApiError, ApiResult, ErrorBody};

/// One immutable version of the served atlas and the decoder built from it.
pub struct Snapshot {
    pub atlas: Atlas,
    pub fingerprint: String,
    pub decoder: Arc<dyn DecoderBackend>,
}

/// A finished layout together with everything insert and decode need.
pub struct ReadyLayout {
    pub snapshot: Arc<Snapshot>,
    pub stored: StoredLayout,
    pub affinities: AffinityMatrix,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayoutStatus {
    Computing,
    Ready,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionLayoutHandle {
    pub id: String,
    pub weights: AspectWeights,
    /// Milliseconds since the Unix epoch.
    pub created_at: u64,
    pub status: LayoutStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub final_kl: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<ErrorBody>,
}

struct LayoutEntry {
    handle: SessionLayoutHandle,
    ready: Option<Arc<ReadyLayout>>,
}

struct Inner {
    cfg: ServerConfig,
    snapshot: RwLock<Arc<Snapshot>>,
    layouts: Mutex<HashMap<String, LayoutEntry>>,
    permits: Semaphore,
    encoder: Arc<dyn EncoderBackend>,
    remote: Option<Arc<RemoteChatClient>>,
}

/// Shared server state. Cloning is cheap.
#[derive(Clone)]
pub struct AppState {
    inner: Arc<Inner>,
}

fn now_ms() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis() as u64).unwrap_or(0)
}

fn nearest_neighbor_decoder(atlas: &Atlas) -> atlas_core::Result<NearestNeighborDecoder> {
    let mut nn = NearestNeighborDecoder::new();
    for (aspect, store) in &atlas.aspects {
        for ((id, e), summaries) in store.doc_ids().iter().zip(store.embeddings()).zip(store.summaries()) {
            if summaries.is_empty() || e.norm() <= 0.0 {
                continue;
            }
            nn.insert(aspect.clone(), id.clone(), e, summaries.clone())?;
        }
    }
    Ok(nn)
}

impl AppState {
    /// State serving `atlas`. Text insertion uses the mock encoder at the
    /// atlas's embedding dimension; see [`AppState::with_encoder`].
    pub fn new(atlas: Atlas, cfg: ServerConfig) -> ApiResult<Self> {
        let dim = atlas.aspects.values().map(|s| s.dim()).max().unwrap_or(0).max(1);
        let remote = (cfg.decoder == DecoderKind::Remote)
            .then(|| Arc::new(RemoteChatClient::http(cfg.remote.clone(), PromptTemplates::default())));
        let state = AppState {
            inner: Arc::new(Inner {
                permits: Semaphore::new(cfg.max_concurrent_layouts.max(1)),
                snapshot: RwLock::new(Arc::new(Snapshot {
                    atlas: Atlas::default(),
                    fingerprint: String::new(),
                    decoder: Arc::new(NearestNeighborDecoder::new()),
                })),
                layouts: Mutex::new(HashMap::new()),
                encoder: Arc::new(MockEncoder::new(dim)),
                remote,
                cfg,
            }),
        };
        state.swap_atlas(atlas)?;
        Ok(state)
    }

    /// Replaces the text encoder. Only valid before the state is shared.
    pub fn with_encoder(self, encoder: Arc<dyn EncoderBackend>) -> Self {
        let inner = Arc::try_unwrap(self.inner).unwrap_or_else(|_| panic!("with_encoder called on shared state"));
        AppState { inner: Arc::new(Inner { encoder, ..inner }) }
    }

    pub fn config(&self) -> &ServerConfig {
        &self.inner.cfg
    }

    pub fn encoder(&self) -> &Arc<dyn EncoderBackend> {
        &self.inner.encoder
    }

    pub fn snapshot(&self) -> Arc<Snapshot> {
        self.inner.snapshot.read().expect("snapshot lock poisoned").clone()
    }

    /// Atomically serves a new atlas. Layouts computed against the previous
    /// snapshot stay queryable; the atlas's own stored layouts become ready
    /// handles.
    pub fn swap_atlas(&self, atlas: Atlas) -> ApiResult<()> {
        atlas.validate()?;
        let fingerprint = atlas_fingerprint(&atlas)?;
        let nn = nearest_neighbor_decoder(&atlas)?;
        let decoder: Arc<dyn DecoderBackend> = match (&self.inner.cfg.decoder, &self.inner.remote) {
            (DecoderKind::Remote, Some(remote)) => remote.clone(),
            (DecoderKind::Mixture, _) => Arc::new(MixtureLmDecoder::new(nn)),
            _ => Arc::new(nn),
        };
        let snapshot = Arc::new(Snapshot { atlas, fingerprint, decoder });
        let mut ready = Vec::new();
        for stored in &snapshot.atlas.layouts {
            let affinities = snapshot.atlas.layout_affinities(stored)?;
            ready.push(ReadyLayout { snapshot: snapshot.clone(), stored: stored.clone(), affinities });
        }
        let mut layouts = self.inner.layouts.lock().expect("layout lock poisoned");
        for r in ready {
            let handle = SessionLayoutHandle {
                id: r.stored.id.clone(),
                weights: r.stored.weights.clone(),
                created_at: now_ms(),
                status: LayoutStatus::Ready,
                final_kl: Some(r.stored.final_kl),
                error: None,
            };
            layouts.insert(r.stored.id.clone(), LayoutEntry { handle, ready: Some(Arc::new(r)) });
        }
        *self.inner.snapshot.write().expect("snapshot lock poisoned") = snapshot;
        Ok(())
    }

    pub fn handle(&self, id: &str) -> Option<SessionLayoutHandle> {
        self.inner.layouts.lock().expect("layout lock poisoned").get(id).map(|e| e.handle.clone())
    }

    /// The finished layout, a retry-after error while it computes, or the
    /// stored failure.
    pub fn ready(&self, id: &str) -> ApiResult<Arc<ReadyLayout>> {
        let layouts = self.inner.layouts.lock().expect("layout lock poisoned");
        let entry = layouts.get(id).ok_or_else(|| ApiError::not_found(format!("no layout {id}")))?;
        match (&entry.ready, entry.handle.status) {
            (Some(r), _) => Ok(r.clone()),
            (None, LayoutStatus::Failed) => {
                let body = entry.handle.error.clone();
                Err(ApiError::new(axum::http::StatusCode::CONFLICT, "layout_failed", format!("layout {id} failed"))
                    .with_detail(serde_json::to_value(body).unwrap_or_default()))
            }
            _ => Err(ApiError::not_ready(id, self.inner.cfg.retry_after_secs)),
        }
    }

    /// Returns the handle for `(weights, config)` on the current atlas,
    /// starting the computation if no such layout exists yet. The boolean is
    /// true when this call created it.
    pub fn request_layout(&self, weights: AspectWeights, config: TsneConfig) -> ApiResult<(SessionLayoutHandle, bool)> {
        let snapshot = self.snapshot();
        for (aspect, _) in weights.active() {
            snapshot.atlas.aspect(aspect)?;
        }
        let key = config_hash(&(&snapshot.fingerprint, &weights, &config))?;
        let id = format!("l-{}", &key[..16]);
        let handle = {
            let mut layouts = self.inner.layouts.lock().expect("layout lock poisoned");
            if let Some(existing) = layouts.get(&id) {
                return Ok((existing.handle.clone(), false));
            }
            let handle = SessionLayoutHandle {
                id: id.clone(),
                weights: weights.clone(),
                created_at: now_ms(),
                status: LayoutStatus::Computing,
                final_kl: None,
                error: None,
            };
            layouts.insert(id.clone(), LayoutEntry { handle: handle.clone(), ready: None });
            handle
        };
        let state = self.clone();
        tokio::spawn(async move {
            let _permit = state.inner.permits.acquire().await.expect("semaphore never closed");
            let snap = snapshot.clone();
            let layout_id = id.clone();
            let result = tokio::task::spawn_blocking(move || snap.atlas.compute_layout(layout_id, &weights, &config))
                .await
                .map_err(|e| ApiError::internal(format!("layout task panicked: {e}")))
                .and_then(|r| r.map_err(ApiError::from));
            state.finish(&id, snapshot, result);
        });
        Ok((handle, true))
    }

    fn finish(&self, id: &str, snapshot: Arc<Snapshot>, result: ApiResult<(StoredLayout, AffinityMatrix)>) {
        let mut layouts = self.inner.layouts.lock().expect("layout lock poisoned");
        let Some(entry) = layouts.get_mut(id) else { return };
        match result {
            Ok((stored, affinities)) => {
                tracing::info!(layout = id, kl = stored.final_kl, iterations = stored.iterations_run, "layout ready");
                entry.handle.status = LayoutStatus::Ready;
                entry.handle.final_kl = Some(stored.final_kl);
                entry.ready = Some(Arc::new(ReadyLayout { snapshot, stored, affinities }));
            }
            Err(e) => {
                tracing::warn!(layout = id, error = %e.body.message, "layout failed");
                entry.handle.status = LayoutStatus::Failed;
                entry.handle.error = Some(e.body);
            }
        }
    }

    /// Every known layout handle, ordered by id.
    pub fn handles(&self) -> Vec<SessionLayoutHandle> {
        let layouts = self.inner.layouts.lock().expect("layout lock poisoned");
        let sorted: BTreeMap<&String, &LayoutEntry> = layouts.iter().collect();
        sorted.values().map(|e| e.handle.clone()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use atlas_core::geometry::{AspectId, EmbeddingVector, Normalization};
    use atlas_core::store::{AbstractRecord, AspectStore, Split};
    use axum::http::StatusCode;
    use axum::response::IntoResponse;

    fn small_atlas() -> Atlas {
        let docs = (0..12)
            .map(|i| AbstractRecord {
                id: format!("d{i}"),
                title: String::new(),
                abstract_text: format!("text {i}"),
                split: Split::Train,
                labels: BTreeMap::new(),
            })
            .collect();
        let mut atlas = Atlas::new(docs, Normalization::Raw).unwrap();
        let entries = (0..12)
            .map(|i| {
                let v = vec![1.0 + (i % 3) as f64, (i * 7 % 5) as f64 - 2.0, 0.5 * i as f64 - 3.0];
                (format!("d{i}"), EmbeddingVector::new(v).unwrap(), vec![format!("s{i}")])
            })
            .collect();
        atlas.insert_aspect(AspectId::from("a"), AspectStore::new(entries).unwrap()).unwrap();
        atlas
    }

    #[tokio::test]
    async fn busy_slots_give_retry_after_until_the_layout_finishes() {
        let cfg = ServerConfig { max_concurrent_layouts: 1, retry_after_secs: 7, ..ServerConfig::default() };
        let state = AppState::new(small_atlas(), cfg).unwrap();
        let held = state.inner.permits.acquire().await.unwrap();
        let (handle, created) = state.request_layout(AspectWeights::single("a"), TsneConfig::default()).unwrap();
        assert!(created);
        assert_eq!(handle.status, LayoutStatus::Computing);
        tokio::time::sleep(std::time::Duration::from_millis(50)).await;
        let err = state.ready(&handle.id).err().expect("still computing");
        assert_eq!(err.body.code, "layout_not_ready");
        let resp = err.into_response();
        assert_eq!(resp.status(), StatusCode::SERVICE_UNAVAILABLE);
        assert_eq!(resp.headers()["retry-after"], "7");

        drop(held);
        for _ in 0..500 {
            if state.handle(&handle.id).unwrap().status != LayoutStatus::Computing {
                break;
            }
            tokio::time::sleep(std::time::Duration::from_millis(10)).await;
        }
        assert_eq!(state.handle(&handle.id).unwrap().status, LayoutStatus::Ready);
        assert!(state.ready(&handle.id).is_ok());
        let (again, created) = state.request_layout(AspectWeights::single("a"), TsneConfig::default()).unwrap();
        assert!(!created);
        assert_eq!(again.id, handle.id);
    }
}
