//! Blocking client for the `/v1` surface.

use std::time::Duration;

use reqwest::blocking::{Client as Http, RequestBuilder, Response};
use reqwest::{StatusCode, Url};
use serde::de::DeserializeOwned;

use vds_core::catalog::{LineageGraph, ObjectEntry};
use vds_core::engine::CacheStats;
use vds_core::transforms::TransformDescriptor;
use vds_core::{DatasetId, DatasetRecord, Direction, RemoveMode};

use crate::server::{ApiError, Created, ExplicitRequest, ListQuery, MaterializeRequest, MaterializeResponse, Removed};

#[derive(Debug, thiserror::Error)]
pub enum ClientError {
    #[error("{} {}: {}", .0.status, .0.code, .0.message)]
    Api(ApiError),
    #[error("transport: {0}")]
    Transport(String),
}

impl ClientError {
    pub fn code(&self) -> Option<&str> {
        match self {
            ClientError::Api(e) => Some(&e.code),
            ClientError::Transport(_) => None,
        }
    }
}

impl From<reqwest::Error> for ClientError {
    fn from(e: reqwest::Error) -> Self {
        ClientError::Transport(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, ClientError>;

pub struct Client {
    base: Url,
    token: Option<String>,
    http: Http,
}

fn lower<T: serde::Serialize>(v: T) -> String {
    serde_json::to_value(v)
        .ok()
        .and_then(|v| v.as_str().map(str::to_string))
        .unwrap_or_default()
}

impl Client {
    pub fn new(base: &str, token: Option<String>) -> Result<Self> {
        let base = Url::parse(base).map_err(|e| ClientError::Transport(format!("{base}: {e}")))?;
        let http = Http::builder().timeout(Duration::from_secs(600)).build()?;
        Ok(Client { base, token, http })
    }

    fn url(&self, segments: &[&str]) -> Url {
        let mut u = self.base.clone();
        {
            let mut p = u.path_segments_mut().expect("http base url");
            p.pop_if_empty().push("v1");
            for s in segments {
                p.push(s);
            }
        }
        u
    }

    fn auth(&self, rb: RequestBuilder) -> RequestBuilder {
        match &self.token {
            Some(t) => rb.bearer_auth(t),
            None => rb,
        }
    }

    fn send(&self, rb: RequestBuilder) -> Result<Response> {
        let res = self.auth(rb).send()?;
        if res.status().is_success() {
            return Ok(res);
        }
        let status = res.status().as_u16();
        let text = res.text()?;
        let mut err = serde_json::from_str::<ApiError>(&text)
            .unwrap_or_else(|_| ApiError::new(status, "HTTP_ERROR", text.trim().to_string()));
        err.status = status;
        Err(ClientError::Api(err))
    }

    fn json<T: DeserializeOwned>(&self, rb: RequestBuilder) -> Result<T> {
        Ok(self.send(rb)?.json()?)
    }

    pub fn register(&self, req: &ExplicitRequest) -> Result<DatasetId> {
        let c: Created = self.json(self.http.post(self.url(&["datasets", "explicit"])).json(req))?;
        Ok(c.id)
    }

    /// Returns the id and whether a new dataset was created.
    pub fn create_virtual(&self, yaml: &str, idempotency_key: Option<&str>) -> Result<(DatasetId, bool)> {
        let mut rb = self
            .http
            .post(self.url(&["datasets", "virtual"]))
            .header("Content-Type", "application/yaml")
            .body(yaml.to_string());
        if let Some(k) = idempotency_key {
            rb = rb.header("Idempotency-Key", k);
        }
        let res = self.send(rb)?;
        let created = res.status() == StatusCode::CREATED;
        let c: Created = res.json()?;
        Ok((c.id, created))
    }

    pub fn list(&self, q: &ListQuery) -> Result<Vec<DatasetRecord>> {
        self.json(self.http.get(self.url(&["datasets"])).query(q))
    }

    pub fn get(&self, id: DatasetId) -> Result<DatasetRecord> {
        self.json(self.http.get(self.url(&["datasets", &id.to_string()])))
    }

    pub fn lineage(&self, id: DatasetId, direction: Direction, depth: Option<usize>) -> Result<LineageGraph> {
        let mut q = vec![("direction", lower(direction))];
        if let Some(d) = depth {
            q.push(("depth", d.to_string()));
        }
        self.json(self.http.get(self.url(&["datasets", &id.to_string(), "lineage"])).query(&q))
    }

    pub fn remove(&self, id: DatasetId, mode: RemoveMode) -> Result<Vec<DatasetId>> {
        let r: Removed = self.json(
            self.http
                .delete(self.url(&["datasets", &id.to_string()]))
                .query(&[("mode", lower(mode))]),
        )?;
        Ok(r.removed)
    }

    pub fn objects(&self, id: DatasetId) -> Result<Vec<ObjectEntry>> {
        self.json(self.http.get(self.url(&["datasets", &id.to_string(), "objects"])))
    }

    /// CSV text of one object.
    pub fn object(&self, id: DatasetId, object_id: &str) -> Result<String> {
        Ok(self
            .send(self.http.get(self.url(&["datasets", &id.to_string(), "objects", object_id])))?
            .text()?)
    }

    pub fn materialize(&self, id: DatasetId, force_recompute: bool) -> Result<MaterializeResponse> {
        self.json(
            self.http
                .post(self.url(&["datasets", &id.to_string(), "materialize"]))
                .json(&MaterializeRequest { force_recompute }),
        )
    }

    pub fn transforms(&self) -> Result<Vec<TransformDescriptor>> {
        self.json(self.http.get(self.url(&["transforms"])))
    }

    pub fn cache_stats(&self) -> Result<CacheStats> {
        self.json(self.http.get(self.url(&["cache", "stats"])))
    }

    pub fn metrics(&self) -> Result<String> {
        Ok(self.send(self.http.get(self.url(&["metrics"])))?.text()?)
    }
}
