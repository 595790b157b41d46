use std::collections::BTreeMap;

use atlas_core::geometry::{AspectId, AspectWeights, EmbeddingVector};
use atlas_core::interact::{insert_sample, reconstruct_embedding, OptimizerConfig};
use atlas_core::tsne::TsneConfig;
use atlas_core::Error;
use axum::extract::{FromRequest, Path, Request, State};
use axum::http::StatusCode;
use axum::response::{Html, IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};
use tower_http::services::ServeDir;

use crate::error::{ApiError, ApiResult};
use crate::state::{AppState, ReadyLayout};

/// JSON body extractor whose rejections use the API error shape.
pub struct ApiJson<T>(pub T);

impl<S, T> FromRequest<S> for ApiJson<T>
where
    T: DeserializeOwned,
    S: Send + Sync,
{
    type Rejection = ApiError;

    async fn from_request(req: Request, state: &S) -> Result<Self, Self::Rejection> {
        match Json::<T>::from_request(req, state).await {
            Ok(Json(v)) => Ok(ApiJson(v)),
            Err(r) => Err(ApiError::new(r.status(), "validation", r.body_text())),
        }
    }
}

const PLACEHOLDER_INDEX: &str = "<!doctype html><title>atlas</title><p>The explorer bundle is not installed. \
The JSON API is under <code>/v1</code>.</p>";

pub fn router(state: AppState) -> Router {
    let api = Router::new()
        .route("/aspects", get(aspects))
        .route("/layouts", get(list_layouts).post(create_layout))
        .route("/layouts/{id}", get(layout_handle))
        .route("/layouts/{id}/points", get(layout_points))
        .route("/layouts/{id}/insert", post(insert))
        .route("/layouts/{id}/decode", post(decode))
        .route("/similarity", post(similarity))
        .fallback(|| async { ApiError::not_found("no such endpoint") });
    let app = Router::new().nest("/v1", api);
    let app = match &state.config().static_dir {
        Some(dir) => app.fallback_service(ServeDir::new(dir)),
        None => app.route("/", get(|| async { Html(PLACEHOLDER_INDEX) })),
    };
    app.with_state(state)
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> ApiResult<T> + Send + 'static) -> ApiResult<T> {
    tokio::task::spawn_blocking(f).await.map_err(|e| ApiError::internal(format!("worker panicked: {e}")))?
}

#[derive(Serialize)]
struct AspectInfo {
    id: AspectId,
    dim: usize,
    documents: usize,
    pca_components: Option<usize>,
}

async fn aspects(State(state): State<AppState>) -> Json<Value> {
    let snap = state.snapshot();
    let list: Vec<AspectInfo> = snap
        .atlas
        .aspects
        .iter()
        .map(|(id, store)| AspectInfo {
            id: id.clone(),
            dim: store.dim(),
            documents: store.len(),
            pca_components: snap.atlas.pca.get(id).map(|b| b.k()),
        })
        .collect();
    Json(json!({
        "aspects": list,
        "documents": snap.atlas.documents.len(),
        "fingerprint": snap.fingerprint,
        "decoder": snap.decoder.identity(),
    }))
}

fn parse_weights(raw: BTreeMap<AspectId, f64>) -> ApiResult<AspectWeights> {
    let sum: f64 = raw.values().sum();
    AspectWeights::new(raw).map_err(|e| ApiError::from(e).with_detail(json!({ "sum": sum })))
}

/// The server's base t-SNE config with `overrides` applied field by field.
fn merge_tsne(base: &TsneConfig, overrides: Option<Map<String, Value>>) -> ApiResult<TsneConfig> {
    let Some(overrides) = overrides else { return Ok(base.clone()) };
    let Value::Object(mut merged) = serde_json::to_value(base).map_err(Error::from)? else {
        return Err(ApiError::internal("t-SNE config did not serialize to an object"));
    };
    for (k, v) in overrides {
        if !merged.contains_key(&k) {
            return Err(ApiError::validation(format!("unknown t-SNE option {k:?}"))
                .with_detail(json!({ "allowed": merged.keys().collect::<Vec<_>>() })));
        }
        merged.insert(k, v);
    }
    let cfg: TsneConfig =
        serde_json::from_value(Value::Object(merged)).map_err(|e| ApiError::validation(format!("t-SNE options: {e}")))?;
    cfg.validate()?;
    Ok(cfg)
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct LayoutRequest {
    weights: BTreeMap<AspectId, f64>,
    #[serde(default)]
    tsne: Option<Map<String, Value>>,
}

async fn create_layout(State(state): State<AppState>, ApiJson(req): ApiJson<LayoutRequest>) -> ApiResult<Response> {
    let weights = parse_weights(req.weights)?;
    let cfg = merge_tsne(&state.config().tsne, req.tsne)?;
    let (handle, created) = state.request_layout(weights, cfg)?;
    let status = if created { StatusCode::ACCEPTED } else { StatusCode::OK };
    Ok((status, Json(handle)).into_response())
}

async fn list_layouts(State(state): State<AppState>) -> Json<Value> {
    Json(json!({ "layouts": state.handles() }))
}

async fn layout_handle(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<Response> {
    let handle = state.handle(&id).ok_or_else(|| ApiError::not_found(format!("no layout {id}")))?;
    Ok(Json(handle).into_response())
}

#[derive(Serialize)]
struct Point<'a> {
    doc_id: &'a str,
    coords: &'a [f64],
    title: &'a str,
    labels: Option<&'a BTreeMap<String, String>>,
}

async fn layout_points(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    let ready = state.ready(&id)?;
    let atlas = &ready.snapshot.atlas;
    let stored = &ready.stored;
    let points: Vec<Point> = stored
        .doc_ids
        .iter()
        .enumerate()
        .map(|(i, doc_id)| {
            let doc = atlas.document(doc_id);
            Point {
                doc_id,
                coords: stored.coords.point(i),
                title: doc.map_or("", |d| d.title.as_str()),
                labels: doc.map(|d| &d.labels).filter(|l| !l.is_empty()),
            }
        })
        .collect();
    Ok(Json(json!({
        "layout_id": stored.id,
        "weights": stored.weights,
        "dim": stored.coords.dim(),
        "final_kl": stored.final_kl,
        "points": points,
    })))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct InsertRequest {
    #[serde(default)]
    text: Option<String>,
    #[serde(default)]
    embeddings: Option<BTreeMap<AspectId, Vec<f64>>>,
}

/// Per-aspect embeddings of the new sample for every aspect the layout weights.
fn sample_embeddings(
    state: &AppState,
    ready: &ReadyLayout,
    req: InsertRequest,
) -> ApiResult<BTreeMap<AspectId, EmbeddingVector>> {
    let atlas = &ready.snapshot.atlas;
    let mut out = BTreeMap::new();
    match (req.text, req.embeddings) {
        (Some(text), None) => {
            for (aspect, _) in ready.stored.weights.active() {
                let e = state.encoder().encode(&text, aspect)?;
                out.insert(aspect.clone(), e.apply(atlas.normalization)?);
            }
        }
        (None, Some(given)) => {
            for (aspect, _) in ready.stored.weights.active() {
                let values = given
                    .get(aspect)
                    .ok_or_else(|| ApiError::validation(format!("missing embedding for weighted aspect {aspect}")))?;
                let dim = atlas.aspect(aspect)?.dim();
                if values.len() != dim {
                    return Err(Error::DimensionMismatch { expected: dim, got: values.len() }.into());
                }
                out.insert(aspect.clone(), EmbeddingVector::new(values.clone())?.apply(atlas.normalization)?);
            }
        }
        _ => return Err(ApiError::validation("give exactly one of \"text\" or \"embeddings\"")),
    }
    Ok(out)
}

async fn insert(
    State(state): State<AppState>,
    Path(id): Path<String>,
    ApiJson(req): ApiJson<InsertRequest>,
) -> ApiResult<Json<Value>> {
    let ready = state.ready(&id)?;
    let encoder_state = state.clone();
    blocking(move || {
        let sample = sample_embeddings(&encoder_state, &ready, req)?;
        let stored = &ready.stored;
        let dist = ready.snapshot.atlas.distances_to(&stored.weights, &stored.doc_ids, &sample)?;
        let result = insert_sample(&stored.to_layout(), &ready.affinities, &dist, &OptimizerConfig::insertion())?;
        let nearest = dist
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(b.1))
            .map(|(i, d)| json!({ "doc_id": stored.doc_ids[i], "distance": d }));
        Ok(Json(json!({
            "layout_id": stored.id,
            "coordinate": result.coordinate,
            "kl_init": result.kl_init,
            "kl_after": result.kl_after,
            "iterations": result.iterations,
            "init_fallback": result.init_fallback,
            "perplexity_unreached": result.perplexity_unreached,
            "nearest": nearest,
        })))
    })
    .await
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct DecodeRequest {
    x: f64,
    y: f64,
    #[serde(default)]
    z: Option<f64>,
    aspect: AspectId,
}

async fn decode(
    State(state): State<AppState>,
    Path(id): Path<String>,
    ApiJson(req): ApiJson<DecodeRequest>,
) -> ApiResult<Json<Value>> {
    let ready = state.ready(&id)?;
    blocking(move || {
        let stored = &ready.stored;
        let atlas = &ready.snapshot.atlas;
        let point: Vec<f64> = [Some(req.x), Some(req.y), req.z].into_iter().flatten().collect();
        if point.len() != stored.coords.dim() {
            return Err(ApiError::validation(format!(
                "layout is {}-dimensional, got a {}-dimensional point",
                stored.coords.dim(),
                point.len()
            )));
        }
        let store = atlas.aspect(&req.aspect)?;
        let basis = atlas.pca.get(&req.aspect).ok_or_else(|| {
            ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "capability", format!("atlas has no PCA basis for aspect {}", req.aspect))
        })?;
        let embeddings = stored
            .doc_ids
            .iter()
            .map(|d| {
                store.embedding(d).cloned().ok_or_else(|| {
                    ApiError::validation(format!("aspect {} does not cover layout document {d}", req.aspect))
                })
            })
            .collect::<ApiResult<Vec<_>>>()?;
        let recon = reconstruct_embedding(
            &stored.to_layout(),
            &ready.affinities,
            &point,
            &embeddings,
            basis,
            &OptimizerConfig::reconstruction(),
        )?;
        let decoded = ready.snapshot.decoder.decode(&recon.embedding, &req.aspect)?;
        Ok(Json(json!({
            "layout_id": stored.id,
            "aspect": req.aspect,
            "point": point,
            "text": decoded.text,
            "source_doc": decoded.source_doc,
            "confidence": decoded.confidence,
            "low_confidence": decoded.low_confidence,
            "decoder": ready.snapshot.decoder.identity(),
            "embedding": {
                "dim": recon.embedding.dim(),
                "norm": recon.embedding.norm(),
                "pca_coefficients": recon.pca_coefficients,
                "kl_init": recon.kl_init,
                "kl_after": recon.kl_after,
                "iterations": recon.iterations,
            },
        })))
    })
    .await
}

fn default_k() -> usize {
    10
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SimilarityRequest {
    doc_id: String,
    weights: BTreeMap<AspectId, f64>,
    #[serde(default = "default_k")]
    k: usize,
}

async fn similarity(State(state): State<AppState>, ApiJson(req): ApiJson<SimilarityRequest>) -> ApiResult<Json<Value>> {
    let weights = parse_weights(req.weights)?;
    if req.k == 0 {
        return Err(ApiError::validation("k must be at least 1"));
    }
    let snapshot = state.snapshot();
    blocking(move || {
        let atlas = &snapshot.atlas;
        if atlas.document(&req.doc_id).is_none() {
            return Err(ApiError::not_found(format!("no document {}", req.doc_id)));
        }
        let mut sample = BTreeMap::new();
        for (aspect, _) in weights.active() {
            let e = atlas.aspect(aspect)?.embedding(&req.doc_id).ok_or_else(|| {
                ApiError::validation(format!("document {} has no {aspect} embedding", req.doc_id))
            })?;
            sample.insert(aspect.clone(), e.clone());
        }
        let others: Vec<String> = atlas.layout_docs(&weights)?.into_iter().filter(|d| *d != req.doc_id).collect();
        let dist = atlas.distances_to(&weights, &others, &sample)?;
        let mut ranked: Vec<(usize, f64)> = dist.into_iter().enumerate().collect();
        ranked.sort_by(|a, b| a.1.total_cmp(&b.1).then_with(|| others[a.0].cmp(&others[b.0])));
        let neighbors: Vec<Value> = ranked
            .into_iter()
            .take(req.k)
            .map(|(i, d)| {
                let title = atlas.document(&others[i]).map_or("", |doc| doc.title.as_str());
                json!({ "doc_id": others[i], "distance": d, "title": title })
            })
            .collect();
        Ok(Json(json!({ "doc_id": req.doc_id, "weights": weights, "neighbors": neighbors })))
    })
    .await
}
