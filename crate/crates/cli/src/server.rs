//! The `/v1` HTTP surface over a [`Workspace`].

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use axum::body::{Body, Bytes};
use axum::extract::{Path, Query, Request, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value as Json_};

use vds_core::catalog::{CatalogError, ObjectEntry};
use vds_core::ssvd::{canonical_serialize, parse_spec, DatasetKind};
use vds_core::{DatasetId, Direction, Error, MaterializeOptions, ObjectId, RegisterExplicit, RemoveMode, SearchFilter, Workspace};

use crate::config::{Role, Tokens};

/// Error body shared by every endpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApiError {
    pub code: String,
    pub message: String,
    #[serde(default)]
    pub details: Map<String, Json_>,
    #[serde(skip)]
    pub status: u16,
}

impl ApiError {
    pub fn new(status: u16, code: &str, message: impl Into<String>) -> Self {
        ApiError {
            code: code.to_string(),
            message: message.into(),
            details: Map::new(),
            status,
        }
    }

    fn detail(mut self, key: &str, v: impl Serialize) -> Self {
        self.details.insert(key.to_string(), serde_json::to_value(v).unwrap_or(Json_::Null));
        self
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let (code, status) = e.code_and_status();
        let err = ApiError::new(status, code, e.to_string());
        match &e {
            Error::Catalog(CatalogError::HasDependents(ids)) => err.detail("dependents", ids),
            Error::Validation(vds_core::ssvd::ValidationError::ParamError { key, .. }) => err.detail("key", key),
            _ => err,
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = StatusCode::from_u16(self.status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        (status, Json(self)).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

/// One line of the audit log.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditLine {
    pub time: String,
    pub principal: String,
    pub verb: String,
    pub target: String,
}

enum AuditSink {
    File(Mutex<File>, PathBuf),
    Memory(Mutex<Vec<AuditLine>>),
}

/// Shared state behind every handler.
pub struct AppState {
    ws: Arc<Workspace>,
    tokens: Option<Tokens>,
    audit: AuditSink,
    idempotency: tokio::sync::Mutex<HashMap<String, (String, DatasetId)>>,
    requests: AtomicU64,
    errors: AtomicU64,
}

impl AppState {
    /// Audit lines go to `<data_dir>/audit.log` when a directory is given.
    pub fn new(ws: Arc<Workspace>, tokens: Option<Tokens>, data_dir: Option<&std::path::Path>) -> std::io::Result<Self> {
        let audit = match data_dir {
            Some(dir) => {
                std::fs::create_dir_all(dir)?;
                let path = dir.join("audit.log");
                let f = OpenOptions::new().create(true).append(true).open(&path)?;
                AuditSink::File(Mutex::new(f), path)
            }
            None => AuditSink::Memory(Mutex::new(Vec::new())),
        };
        Ok(AppState {
            ws,
            tokens,
            audit,
            idempotency: Default::default(),
            requests: AtomicU64::new(0),
            errors: AtomicU64::new(0),
        })
    }

    pub fn workspace(&self) -> &Arc<Workspace> {
        &self.ws
    }

    pub fn audit_lines(&self) -> Vec<AuditLine> {
        match &self.audit {
            AuditSink::Memory(lines) => lines.lock().unwrap().clone(),
            AuditSink::File(_, path) => std::fs::read_to_string(path)
                .unwrap_or_default()
                .lines()
                .filter_map(|l| serde_json::from_str(l).ok())
                .collect(),
        }
    }

    fn record(&self, principal: &str, verb: &str, target: impl ToString) {
        let line = AuditLine {
            time: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Micros, true),
            principal: principal.to_string(),
            verb: verb.to_string(),
            target: target.to_string(),
        };
        match &self.audit {
            AuditSink::Memory(lines) => lines.lock().unwrap().push(line),
            AuditSink::File(f, _) => {
                let mut text = serde_json::to_string(&line).expect("plain struct");
                text.push('\n');
                if let Err(e) = f.lock().unwrap().write_all(text.as_bytes()) {
                    tracing::error!("audit log write failed: {e}");
                }
            }
        }
    }

    /// Principal allowed to perform the request.
    fn authorize(&self, headers: &HeaderMap, write: bool) -> ApiResult<String> {
        let Some(tokens) = &self.tokens else {
            return Ok("anonymous".to_string());
        };
        let presented = headers
            .get(header::AUTHORIZATION)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.strip_prefix("Bearer "))
            .map(str::trim);
        let Some((role, who)) = presented.and_then(|t| tokens.lookup(t)) else {
            return Err(ApiError::new(401, "UNAUTHORIZED", "missing or unknown bearer token"));
        };
        if write && role != Role::Writer {
            return Err(ApiError::new(403, "FORBIDDEN", format!("{who} may only read")));
        }
        Ok(who)
    }
}

async fn blocking<T, F>(state: &Arc<AppState>, f: F) -> ApiResult<T>
where
    F: FnOnce(&Workspace) -> Result<T, Error> + Send + 'static,
    T: Send + 'static,
{
    let ws = state.ws.clone();
    tokio::task::spawn_blocking(move || f(&ws))
        .await
        .map_err(|e| ApiError::new(500, "INTERNAL", e.to_string()))?
        .map_err(ApiError::from)
}

fn dataset_id(s: &str) -> ApiResult<DatasetId> {
    s.parse()
        .map_err(|_| ApiError::new(400, "INVALID_ID", format!("{s:?} is not a dataset id")))
}

fn bad_request(e: impl ToString) -> ApiError {
    ApiError::new(400, "INVALID_REQUEST", e.to_string())
}

#[derive(Debug, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ExplicitRequest {
    pub uri: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub format: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels_file: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(default, skip_serializing_if = "std::collections::BTreeMap::is_empty")]
    pub metadata: std::collections::BTreeMap<String, serde_yaml::Value>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Created {
    pub id: DatasetId,
}

async fn register(State(st): State<Arc<AppState>>, headers: HeaderMap, body: Bytes) -> ApiResult<Response> {
    let who = st.authorize(&headers, true)?;
    // JSON bodies are YAML documents too.
    let req: ExplicitRequest = serde_yaml::from_slice(&body).map_err(bad_request)?;
    let creator = who.clone();
    let rec = blocking(&st, move |ws| {
        ws.register_explicit(&RegisterExplicit {
            uri: req.uri,
            format: req.format,
            labels_file: req.labels_file,
            name: req.name,
            metadata: req.metadata,
            creator,
        })
    })
    .await?;
    st.record(&who, "register", rec.id);
    Ok((StatusCode::CREATED, Json(Created { id: rec.id })).into_response())
}

async fn create(State(st): State<Arc<AppState>>, headers: HeaderMap, body: String) -> ApiResult<Response> {
    let who = st.authorize(&headers, true)?;
    let spec = parse_spec(&body).map_err(|e| ApiError::from(Error::from(e)))?;
    let canonical = canonical_serialize(&spec);
    let key = headers
        .get("Idempotency-Key")
        .map(|v| v.to_str().map(str::to_string).map_err(bad_request))
        .transpose()?;
    // Held across creation so a concurrent retry cannot slip in between.
    let mut seen = match &key {
        Some(_) => Some(st.idempotency.lock().await),
        None => None,
    };
    if let (Some(k), Some(seen)) = (&key, seen.as_ref()) {
        if let Some((text, id)) = seen.get(k) {
            if *text != canonical {
                return Err(ApiError::new(409, "IDEMPOTENCY_CONFLICT", "key was used with a different spec")
                    .detail("id", id));
            }
            let id = *id;
            st.record(&who, "create", id);
            return Ok((StatusCode::OK, Json(Created { id })).into_response());
        }
    }
    let creator = who.clone();
    let rec = blocking(&st, move |ws| ws.create_virtual(&spec, &creator)).await?;
    if let (Some(k), Some(seen)) = (key, seen.as_mut()) {
        seen.insert(k, (canonical, rec.id));
    }
    st.record(&who, "create", rec.id);
    Ok((StatusCode::CREATED, Json(Created { id: rec.id })).into_response())
}

#[derive(Debug, Default, Deserialize, Serialize)]
pub struct ListQuery {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    /// `key=value`
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kind: Option<DatasetKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transform: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub creator: Option<String>,
}

impl ListQuery {
    pub fn filter(self) -> ApiResult<SearchFilter> {
        let label = match self.label {
            Some(l) => {
                let (k, v) = l
                    .split_once('=')
                    .ok_or_else(|| bad_request(format!("label filter {l:?} is not key=value")))?;
                Some((k.to_string(), v.to_string()))
            }
            None => None,
        };
        Ok(SearchFilter {
            name: self.name,
            label,
            kind: self.kind,
            transform_id: self.transform,
            creator: self.creator,
        })
    }
}

async fn list(State(st): State<Arc<AppState>>, headers: HeaderMap, Query(q): Query<ListQuery>) -> ApiResult<Response> {
    st.authorize(&headers, false)?;
    let filter = q.filter()?;
    let found = blocking(&st, move |ws| Ok(ws.search(&filter))).await?;
    Ok(Json(found).into_response())
}

async fn show(State(st): State<Arc<AppState>>, headers: HeaderMap, Path(id): Path<String>) -> ApiResult<Response> {
    st.authorize(&headers, false)?;
    let id = dataset_id(&id)?;
    let rec = blocking(&st, move |ws| ws.get(id)).await?;
    Ok(Json(rec).into_response())
}

#[derive(Debug, Default, Deserialize)]
struct LineageQuery {
    direction: Option<Direction>,
    depth: Option<usize>,
}

async fn lineage(
    State(st): State<Arc<AppState>>,
    headers: HeaderMap,
    Path(id): Path<String>,
    Query(q): Query<LineageQuery>,
) -> ApiResult<Response> {
    st.authorize(&headers, false)?;
    let id = dataset_id(&id)?;
    let dir = q.direction.unwrap_or(Direction::Backward);
    let g = blocking(&st, move |ws| ws.lineage(id, dir, q.depth)).await?;
    Ok(Json(g).into_response())
}

#[derive(Debug, Default, Deserialize)]
struct RemoveQuery {
    mode: Option<RemoveMode>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Removed {
    pub removed: Vec<DatasetId>,
}

async fn remove(
    State(st): State<Arc<AppState>>,
    headers: HeaderMap,
    Path(id): Path<String>,
    Query(q): Query<RemoveQuery>,
) -> ApiResult<Response> {
    let who = st.authorize(&headers, true)?;
    let id = dataset_id(&id)?;
    let mode = q.mode.unwrap_or(RemoveMode::Restrict);
    let removed = blocking(&st, move |ws| ws.remove(id, mode)).await?;
    st.record(&who, "remove", id);
    Ok(Json(Removed { removed }).into_response())
}

async fn objects(State(st): State<Arc<AppState>>, headers: HeaderMap, Path(id): Path<String>) -> ApiResult<Response> {
    st.authorize(&headers, false)?;
    let id = dataset_id(&id)?;
    let entries: Vec<ObjectEntry> = blocking(&st, move |ws| ws.objects(id)).await?;
    Ok(Json(entries).into_response())
}

async fn object(
    State(st): State<Arc<AppState>>,
    headers: HeaderMap,
    Path((id, oid)): Path<(String, String)>,
) -> ApiResult<Response> {
    st.authorize(&headers, false)?;
    let id = dataset_id(&id)?;
    let oid = ObjectId::new(oid);
    let table = blocking(&st, move |ws| ws.open_object(id, &oid)).await?;
    Ok((
        [(header::CONTENT_TYPE, "text/csv; charset=utf-8")],
        Body::from(table.to_csv()),
    )
        .into_response())
}

#[derive(Debug, Default, Deserialize, Serialize)]
pub struct MaterializeRequest {
    #[serde(default)]
    pub force_recompute: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaterializeResponse {
    pub dataset: DatasetId,
    pub objects: usize,
    pub stats: vds_core::RunStats,
}

async fn materialize(
    State(st): State<Arc<AppState>>,
    headers: HeaderMap,
    Path(id): Path<String>,
    body: Bytes,
) -> ApiResult<Response> {
    let who = st.authorize(&headers, true)?;
    let id = dataset_id(&id)?;
    let req: MaterializeRequest = if body.iter().all(u8::is_ascii_whitespace) {
        MaterializeRequest::default()
    } else {
        serde_yaml::from_slice(&body).map_err(bad_request)?
    };
    let opts = MaterializeOptions {
        force_recompute: req.force_recompute,
    };
    let m = blocking(&st, move |ws| ws.materialize(id, opts)).await?;
    st.record(&who, "materialize", id);
    Ok(Json(MaterializeResponse {
        dataset: m.dataset,
        objects: m.objects.len(),
        stats: m.stats,
    })
    .into_response())
}

async fn transforms(State(st): State<Arc<AppState>>, headers: HeaderMap) -> ApiResult<Response> {
    st.authorize(&headers, false)?;
    Ok(Json(st.ws.transforms()).into_response())
}

async fn cache_stats(State(st): State<Arc<AppState>>, headers: HeaderMap) -> ApiResult<Response> {
    st.authorize(&headers, false)?;
    Ok(Json(st.ws.cache_stats()).into_response())
}

async fn metrics(State(st): State<Arc<AppState>>, headers: HeaderMap) -> ApiResult<Response> {
    st.authorize(&headers, false)?;
    let c = st.ws.cache_stats();
    let e = st.ws.engine_counters();
    let records = st.ws.catalog().records();
    let kind = |k: DatasetKind| records.iter().filter(|r| r.kind == k && r.is_active()).count();
    let text = format!(
        "vd_requests_total {}\n\
         vd_request_errors_total {}\n\
         vd_datasets{{kind=\"explicit\"}} {}\n\
         vd_datasets{{kind=\"virtual\"}} {}\n\
         vd_cache_entries {}\n\
         vd_cache_bytes {}\n\
         vd_cache_budget_bytes {}\n\
         vd_cache_hits_total {}\n\
         vd_cache_misses_total {}\n\
         vd_cache_evictions_total {}\n\
         vd_materializations_total {}\n\
         vd_transforms_executed_total {}\n\
         vd_objects_opened_total {}\n\
         vd_audit_lines_total {}\n",
        st.requests.load(Ordering::Relaxed),
        st.errors.load(Ordering::Relaxed),
        kind(DatasetKind::Explicit),
        kind(DatasetKind::Virtual),
        c.entries,
        c.bytes,
        c.budget,
        c.hits,
        c.misses,
        c.evictions,
        e.materializations,
        e.transforms_executed,
        e.objects_opened,
        st.audit_lines().len(),
    );
    Ok(([(header::CONTENT_TYPE, "text/plain; version=0.0.4")], text).into_response())
}

async fn count(State(st): State<Arc<AppState>>, req: Request, next: Next) -> Response {
    st.requests.fetch_add(1, Ordering::Relaxed);
    let res = next.run(req).await;
    if res.status().is_client_error() || res.status().is_server_error() {
        st.errors.fetch_add(1, Ordering::Relaxed);
    }
    res
}

async fn fallback() -> ApiError {
    ApiError::new(404, "NOT_FOUND", "no such endpoint")
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/v1/datasets", get(list))
        .route("/v1/datasets/explicit", post(register))
        .route("/v1/datasets/virtual", post(create))
        .route("/v1/datasets/{id}", get(show).delete(remove))
        .route("/v1/datasets/{id}/lineage", get(lineage))
        .route("/v1/datasets/{id}/objects", get(objects))
        .route("/v1/datasets/{id}/objects/{oid}", get(object))
        .route("/v1/datasets/{id}/materialize", post(materialize))
        .route("/v1/transforms", get(transforms))
        .route("/v1/cache/stats", get(cache_stats))
        .route("/v1/metrics", get(metrics))
        .fallback(fallback)
        .layer(middleware::from_fn_with_state(state.clone(), count))
        .with_state(state)
}

pub async fn serve(
    listener: tokio::net::TcpListener,
    state: Arc<AppState>,
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    axum::serve(listener, router(state)).with_graceful_shutdown(shutdown).await
}

/// A server on a background thread with its own runtime; stops on drop.
pub struct Running {
    pub addr: SocketAddr,
    pub state: Arc<AppState>,
    stop: Option<tokio::sync::oneshot::Sender<()>>,
    thread: Option<std::thread::JoinHandle<std::io::Result<()>>>,
}

impl Running {
    pub fn base_url(&self) -> String {
        format!("http://{}", self.addr)
    }
}

pub fn spawn(state: Arc<AppState>, addr: &str) -> std::io::Result<Running> {
    let std_listener = std::net::TcpListener::bind(addr)?;
    std_listener.set_nonblocking(true)?;
    let addr = std_listener.local_addr()?;
    let (tx, rx) = tokio::sync::oneshot::channel::<()>();
    let st = state.clone();
    let thread = std::thread::Builder::new().name("vd-server".into()).spawn(move || {
        let rt = tokio::runtime::Builder::new_multi_thread().worker_threads(2).enable_all().build()?;
        rt.block_on(async move {
            let listener = tokio::net::TcpListener::from_std(std_listener)?;
            serve(listener, st, async {
                let _ = rx.await;
            })
            .await
        })
    })?;
    Ok(Running {
        addr,
        state,
        stop: Some(tx),
        thread: Some(thread),
    })
}

impl Drop for Running {
    fn drop(&mut self) {
        if let Some(tx) = self.stop.take() {
            let _ = tx.send(());
        }
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}
