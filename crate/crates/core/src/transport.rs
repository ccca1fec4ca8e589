//! HTTP transport abstraction.
//!
//! Every remote call in the harness (knowledge-graph queries, statistics,
//! descriptions and model backends) goes through a [`Transport`]. The live
//! implementation wraps a blocking `reqwest` client; [`RecordingTransport`]
//! and [`ReplayTransport`] persist and serve responses from a fixture store
//! with one JSON file per request, keyed by [`request_key`].

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Method {
    Get,
    Post,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Get => "GET",
            Method::Post => "POST",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HttpRequest {
    pub method: Method,
    pub url: String,
    /// Headers are sent but never part of the fixture key, so credentials
    /// are not written to disk.
    pub headers: Vec<(String, String)>,
    pub body: Option<String>,
    pub timeout: Option<Duration>,
}

impl HttpRequest {
    pub fn get(url: impl Into<String>) -> Self {
        Self {
            method: Method::Get,
            url: url.into(),
            headers: Vec::new(),
            body: None,
            timeout: None,
        }
    }

    pub fn post_json(url: impl Into<String>, body: impl Into<String>) -> Self {
        Self {
            method: Method::Post,
            url: url.into(),
            headers: vec![("Content-Type".into(), "application/json".into())],
            body: Some(body.into()),
            timeout: None,
        }
    }

    pub fn with_header(mut self, name: impl Into<String>, value: impl Into<String>) -> Self {
        self.headers.push((name.into(), value.into()));
        self
    }

    pub fn with_timeout(mut self, timeout: Option<Duration>) -> Self {
        self.timeout = timeout;
        self
    }

    pub fn host(&self) -> String {
        url::Url::parse(&self.url)
            .ok()
            .and_then(|u| u.host_str().map(str::to_owned))
            .unwrap_or_default()
    }

    pub fn key(&self) -> String {
        request_key(self.method, &self.url, self.body.as_deref())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HttpResponse {
    pub status: u16,
    pub body: String,
}

impl HttpResponse {
    pub fn ok(body: impl Into<String>) -> Self {
        Self {
            status: 200,
            body: body.into(),
        }
    }

    pub fn is_success(&self) -> bool {
        (200..300).contains(&self.status)
    }
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum TransportError {
    #[error("request to {url} timed out")]
    Timeout { url: String },
    #[error("connection to {url} failed: {message}")]
    Connect { url: String, message: String },
    #[error("no recorded fixture for {method} {url} (key {key})")]
    NotRecorded { method: String, url: String, key: String },
    #[error("fixture store i/o error: {0}")]
    Store(String),
}

/// A synchronous request/response channel. Implementations must be safe to
/// share across worker threads.
pub trait Transport: Send + Sync {
    fn send(&self, request: &HttpRequest) -> Result<HttpResponse, TransportError>;
}

impl<T: Transport + ?Sized> Transport for Arc<T> {
    fn send(&self, request: &HttpRequest) -> Result<HttpResponse, TransportError> {
        (**self).send(request)
    }
}

/// Stable fixture key: hex SHA-256 over method, url and body.
pub fn request_key(method: Method, url: &str, body: Option<&str>) -> String {
    let mut hasher = Sha256::new();
    hasher.update(method.as_str().as_bytes());
    hasher.update([0u8]);
    hasher.update(url.as_bytes());
    hasher.update([0u8]);
    hasher.update(body.unwrap_or("").as_bytes());
    hex::encode(hasher.finalize())
}

/// Live transport over a blocking reqwest client.
pub struct HttpTransport {
    client: reqwest::blocking::Client,
}

impl HttpTransport {
    pub fn new(user_agent: &str) -> Result<Self, TransportError> {
        let client = reqwest::blocking::Client::builder()
            .user_agent(user_agent.to_owned())
            .build()
            .map_err(|e| TransportError::Connect {
                url: String::new(),
                message: e.to_string(),
            })?;
        Ok(Self { client })
    }
}

impl Transport for HttpTransport {
    fn send(&self, request: &HttpRequest) -> Result<HttpResponse, TransportError> {
        let mut builder = match request.method {
            Method::Get => self.client.get(&request.url),
            Method::Post => self.client.post(&request.url),
        };
        for (name, value) in &request.headers {
            builder = builder.header(name, value);
        }
        if let Some(body) = &request.body {
            builder = builder.body(body.clone());
        }
        if let Some(timeout) = request.timeout {
            builder = builder.timeout(timeout);
        }
        let response = builder.send().map_err(|e| classify(&request.url, e))?;
        let status = response.status().as_u16();
        let body = response.text().map_err(|e| classify(&request.url, e))?;
        Ok(HttpResponse { status, body })
    }
}

fn classify(url: &str, err: reqwest::Error) -> TransportError {
    if err.is_timeout() {
        TransportError::Timeout { url: url.into() }
    } else {
        TransportError::Connect {
            url: url.into(),
            message: err.to_string(),
        }
    }
}

/// On-disk fixture entry.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FixtureEntry {
    pub method: Method,
    pub url: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub body: Option<String>,
    pub status: u16,
    pub response: String,
}

/// Directory of recorded exchanges, one `<key>.json` file per request.
/// Writes are append-only: an existing entry is never overwritten.
pub struct FixtureStore {
    dir: PathBuf,
    write_lock: Mutex<()>,
}

impl FixtureStore {
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self, TransportError> {
        let dir = dir.into();
        fs::create_dir_all(&dir).map_err(|e| TransportError::Store(e.to_string()))?;
        Ok(Self {
            dir,
            write_lock: Mutex::new(()),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn path_for(&self, key: &str) -> PathBuf {
        self.dir.join(format!("{key}.json"))
    }

    pub fn load(&self, request: &HttpRequest) -> Result<Option<FixtureEntry>, TransportError> {
        let path = self.path_for(&request.key());
        match fs::read_to_string(&path) {
            Ok(text) => serde_json::from_str(&text)
                .map(Some)
                .map_err(|e| TransportError::Store(format!("{}: {e}", path.display()))),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(TransportError::Store(e.to_string())),
        }
    }

    pub fn save(&self, request: &HttpRequest, response: &HttpResponse) -> Result<(), TransportError> {
        let _guard = self.write_lock.lock().unwrap_or_else(|e| e.into_inner());
        let path = self.path_for(&request.key());
        if path.exists() {
            return Ok(());
        }
        let entry = FixtureEntry {
            method: request.method,
            url: request.url.clone(),
            body: request.body.clone(),
            status: response.status,
            response: response.body.clone(),
        };
        let text = serde_json::to_string_pretty(&entry).map_err(|e| TransportError::Store(e.to_string()))?;
        let tmp = path.with_extension("json.tmp");
        fs::write(&tmp, text).map_err(|e| TransportError::Store(e.to_string()))?;
        fs::rename(&tmp, &path).map_err(|e| TransportError::Store(e.to_string()))
    }
}

/// Forwards to an inner transport and records every response it receives.
pub struct RecordingTransport<T> {
    inner: T,
    store: Arc<FixtureStore>,
}

impl<T: Transport> RecordingTransport<T> {
    pub fn new(inner: T, store: Arc<FixtureStore>) -> Self {
        Self { inner, store }
    }
}

impl<T: Transport> Transport for RecordingTransport<T> {
    fn send(&self, request: &HttpRequest) -> Result<HttpResponse, TransportError> {
        let response = self.inner.send(request)?;
        self.store.save(request, &response)?;
        Ok(response)
    }
}

/// Serves responses exclusively from a fixture store. Never touches the
/// network; an unrecorded request is an error.
pub struct ReplayTransport {
    store: Arc<FixtureStore>,
}

impl ReplayTransport {
    pub fn new(store: Arc<FixtureStore>) -> Self {
        Self { store }
    }
}

impl Transport for ReplayTransport {
    fn send(&self, request: &HttpRequest) -> Result<HttpResponse, TransportError> {
        match self.store.load(request)? {
            Some(entry) => Ok(HttpResponse {
                status: entry.status,
                body: entry.response,
            }),
            None => Err(TransportError::NotRecorded {
                method: request.method.as_str().into(),
                url: request.url.clone(),
                key: request.key(),
            }),
        }
    }
}

type Handler = dyn Fn(&HttpRequest) -> Result<HttpResponse, TransportError> + Send + Sync;

/// Scriptable in-memory transport that records the time and request of
/// every call. Used to test retry, rate limiting and wire formats.
pub struct InstrumentedTransport {
    handler: Box<Handler>,
    calls: Mutex<Vec<(std::time::Instant, HttpRequest)>>,
}

impl InstrumentedTransport {
    pub fn new<F>(handler: F) -> Self
    where
        F: Fn(&HttpRequest) -> Result<HttpResponse, TransportError> + Send + Sync + 'static,
    {
        Self {
            handler: Box::new(handler),
            calls: Mutex::new(Vec::new()),
        }
    }

    /// Answers each url with a fixed body; unknown urls get a 404.
    pub fn from_routes(routes: HashMap<String, HttpResponse>) -> Self {
        Self::new(move |req| {
            Ok(routes.get(&req.url).cloned().unwrap_or(HttpResponse {
                status: 404,
                body: String::new(),
            }))
        })
    }

    pub fn calls(&self) -> Vec<(std::time::Instant, HttpRequest)> {
        self.calls.lock().unwrap().clone()
    }

    pub fn call_count(&self) -> usize {
        self.calls.lock().unwrap().len()
    }
}

impl Transport for InstrumentedTransport {
    fn send(&self, request: &HttpRequest) -> Result<HttpResponse, TransportError> {
        self.calls
            .lock()
            .unwrap()
            .push((std::time::Instant::now(), request.clone()));
        (self.handler)(request)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn key_depends_on_method_url_and_body_only() {
        let a = HttpRequest::post_json("http://h/x", "{}");
        let b = HttpRequest::post_json("http://h/x", "{}").with_header("Authorization", "secret");
        assert_eq!(a.key(), b.key());
        assert_ne!(a.key(), HttpRequest::post_json("http://h/x", "{ }").key());
        assert_ne!(a.key(), HttpRequest::get("http://h/x").key());
        assert_eq!(a.key().len(), 64);
    }

    #[test]
    fn record_then_replay_is_identical() {
        let dir = tempfile::tempdir().unwrap();
        let store = Arc::new(FixtureStore::open(dir.path()).unwrap());
        let live = InstrumentedTransport::new(|req| Ok(HttpResponse::ok(format!("echo {}", req.url))));
        let recorder = RecordingTransport::new(live, store.clone());
        let req = HttpRequest::get("http://example.org/a?b=1");
        let recorded = recorder.send(&req).unwrap();

        let replay = ReplayTransport::new(store);
        assert_eq!(replay.send(&req).unwrap(), recorded);
        let missing = replay.send(&HttpRequest::get("http://example.org/other"));
        assert!(matches!(missing, Err(TransportError::NotRecorded { .. })));
    }

    #[test]
    fn store_is_append_only() {
        let dir = tempfile::tempdir().unwrap();
        let store = FixtureStore::open(dir.path()).unwrap();
        let req = HttpRequest::get("http://example.org/");
        store.save(&req, &HttpResponse::ok("first")).unwrap();
        store.save(&req, &HttpResponse::ok("second")).unwrap();
        assert_eq!(store.load(&req).unwrap().unwrap().response, "first");
    }

    #[test]
    fn host_extraction() {
        assert_eq!(
            HttpRequest::get("https://query.wikidata.org/sparql?q=1").host(),
            "query.wikidata.org"
        );
        assert_eq!(HttpRequest::get("not a url").host(), "");
    }
}
