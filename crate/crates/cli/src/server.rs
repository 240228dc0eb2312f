//! HTTP API over a [`ServiceState`].
//!
//! Reads take the shared lock. An event is applied and appended to the audit
//! log under the exclusive lock, so readers see it either fully or not at all
//! and the log order is the apply order.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{BufReader, Write};
use std::path::Path;
use std::sync::Arc;

use anyhow::Context;
use axum::extract::rejection::JsonRejection;
use axum::extract::{Path as UrlPath, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use castid::annotation::{read_audit_log, write_audit_event, AuditEvent, RejectReason, ServiceState};
use castid::clustering::ClusterSet;
use castid::{AnnotationStore, Error};
use parking_lot::{Mutex, RwLock};
use serde::Deserialize;
use serde_json::{json, Value};

pub struct AppState {
    state: RwLock<ServiceState>,
    audit: Option<Mutex<Box<dyn Write + Send>>>,
}

pub type Shared = Arc<AppState>;

impl AppState {
    pub fn new(state: ServiceState, audit: Option<Box<dyn Write + Send>>) -> Shared {
        Arc::new(Self {
            state: RwLock::new(state),
            audit: audit.map(Mutex::new),
        })
    }

    pub fn snapshot(&self) -> ServiceState {
        self.state.read().clone()
    }

    fn record(
        &self,
        apply: impl FnOnce(&mut ServiceState) -> castid::Result<AuditEvent>,
    ) -> Result<AuditEvent, ApiError> {
        let mut state = self.state.write();
        let ev = apply(&mut state)?;
        if let Some(log) = &self.audit {
            write_audit_event(&mut *log.lock(), &ev).map_err(|e| ApiError::internal(format!("audit log: {e}")))?;
        }
        Ok(ev)
    }
}

/// Loads the initial state and replays an existing audit log, returning the
/// state and an append handle for the log.
pub fn open_state(
    store: AnnotationStore,
    clusters: BTreeMap<String, ClusterSet>,
    audit: Option<&Path>,
) -> anyhow::Result<Shared> {
    let Some(path) = audit else {
        return Ok(AppState::new(ServiceState::new(store, clusters)?, None));
    };
    let events = if path.exists() {
        let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
        read_audit_log(BufReader::new(file)).with_context(|| format!("reading {}", path.display()))?
    } else {
        Vec::new()
    };
    let state =
        ServiceState::replay(store, clusters, &events).with_context(|| format!("replaying {}", path.display()))?;
    let file = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .with_context(|| format!("opening {}", path.display()))?;
    Ok(AppState::new(state, Some(Box::new(file))))
}

pub struct ApiError {
    status: StatusCode,
    message: String,
}

impl ApiError {
    fn internal(message: String) -> Self {
        Self {
            status: StatusCode::INTERNAL_SERVER_ERROR,
            message,
        }
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::NotFound { .. } => StatusCode::NOT_FOUND,
            Error::Conflict(_) => StatusCode::CONFLICT,
            Error::UnknownCharacter { .. } | Error::InvalidArgument(_) | Error::Invariant { .. } => {
                StatusCode::UNPROCESSABLE_ENTITY
            }
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        let mut message = e.to_string();
        let mut cause = std::error::Error::source(&e);
        while let Some(c) = cause {
            message = format!("{message}: {c}");
            cause = c.source();
        }
        Self { status, message }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({ "error": self.message }))).into_response()
    }
}

impl From<JsonRejection> for ApiError {
    fn from(r: JsonRejection) -> Self {
        Self {
            status: r.status(),
            message: r.body_text(),
        }
    }
}

type Body<T> = Result<Json<T>, JsonRejection>;

type ApiResult = Result<Json<Value>, ApiError>;

fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

fn default_annotator() -> String {
    "anonymous".into()
}

#[derive(Deserialize)]
struct LabelBody {
    label: String,
    #[serde(default = "default_annotator")]
    annotator: String,
}

#[derive(Deserialize)]
struct RejectBody {
    reason: RejectReason,
    #[serde(default = "default_annotator")]
    annotator: String,
}

#[derive(Deserialize)]
struct SplitBody {
    track_ids: Vec<String>,
    #[serde(default = "default_annotator")]
    annotator: String,
}

pub fn router(state: Shared) -> Router {
    Router::new()
        .route("/movies", get(movies))
        .route("/movies/{id}/characters", get(characters))
        .route("/movies/{id}/clusters", get(clusters))
        .route("/clusters/{id}/tracks", get(cluster_tracks))
        .route("/clusters/{id}/label", post(label))
        .route("/clusters/{id}/reject", post(reject))
        .route("/clusters/{id}/split", post(split))
        .route("/export", get(export))
        .with_state(state)
}

async fn movies(State(app): State<Shared>) -> ApiResult {
    let s = app.state.read();
    let list: Vec<Value> = s
        .store
        .movies()
        .iter()
        .map(|(id, m)| {
            json!({
                "movie_id": id,
                "characters": m.characters.len(),
                "clips": m.clips.len(),
                "clusters": s.cluster_sets.get(id).map_or(0, |c| c.clusters.len()),
            })
        })
        .collect();
    Ok(Json(Value::Array(list)))
}

async fn characters(State(app): State<Shared>, UrlPath(id): UrlPath<String>) -> ApiResult {
    let s = app.state.read();
    let movie = s.store.movie(&id).ok_or(Error::NotFound {
        kind: "movie",
        id: id.clone(),
    })?;
    let list: Vec<Value> = movie
        .characters
        .iter()
        .map(|c| json!({ "name": c.canonical_name, "aliases": &c.aliases[1..] }))
        .collect();
    Ok(Json(Value::Array(list)))
}

async fn clusters(State(app): State<Shared>, UrlPath(id): UrlPath<String>) -> ApiResult {
    let summaries = app.state.read().cluster_summaries(&id)?;
    Ok(Json(serde_json::to_value(summaries).expect("serializable")))
}

async fn cluster_tracks(State(app): State<Shared>, UrlPath(id): UrlPath<String>) -> ApiResult {
    let tracks = app.state.read().cluster_tracks(&id)?;
    Ok(Json(serde_json::to_value(tracks).expect("serializable")))
}

fn event_response(app: &AppState, ev: AuditEvent) -> ApiResult {
    let s = app.state.read();
    let mut body = json!({ "event": ev, "cluster": s.cluster(&ev.cluster_id)? });
    if let Some(new_id) = &ev.new_cluster_id {
        body["new_cluster"] = serde_json::to_value(s.cluster(new_id)?).expect("serializable");
    }
    Ok(Json(body))
}

async fn label(State(app): State<Shared>, UrlPath(id): UrlPath<String>, body: Body<LabelBody>) -> ApiResult {
    let Json(body) = body?;
    let ev = app.record(|s| s.label(&id, &body.label, &body.annotator, &now()))?;
    event_response(&app, ev)
}

async fn reject(State(app): State<Shared>, UrlPath(id): UrlPath<String>, body: Body<RejectBody>) -> ApiResult {
    let Json(body) = body?;
    let ev = app.record(|s| s.reject(&id, body.reason, &body.annotator, &now()))?;
    event_response(&app, ev)
}

async fn split(State(app): State<Shared>, UrlPath(id): UrlPath<String>, body: Body<SplitBody>) -> ApiResult {
    let Json(body) = body?;
    let ev = app.record(|s| s.split(&id, &body.track_ids, &body.annotator, &now()))?;
    event_response(&app, ev)
}

async fn export(State(app): State<Shared>) -> Response {
    let text = app.state.read().store.to_json();
    ([(header::CONTENT_TYPE, "application/json")], text).into_response()
}
