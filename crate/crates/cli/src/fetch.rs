//! Client for a remote embedding provider.
//!
//! Protocol `tqx-embed/1`: the client POSTs
//! `{"version": "tqx-embed/1", "items": [{"id": .., "text": ..}, ...]}`
//! (or `"image"` references instead of `"text"`) and expects
//! `{"dim": D, "embeddings": [{"id": .., "values": [..]}, ...]}`.
//! Items are sent in fixed-size batches, a bounded number at a time; the
//! resulting matrix is always in input order. Complete results are cached
//! as TQXE files keyed by a hash of the request content.

use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::thread;
use std::time::Duration;

use log::{debug, warn};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;
use tqx_core::io::{decode, encode};
use tqx_core::Embeddings;

pub const PROTOCOL_VERSION: &str = "tqx-embed/1";
/// Environment variable holding the bearer token, if any.
pub const TOKEN_ENV: &str = "TQX_PROVIDER_TOKEN";
pub const DEFAULT_RETRIES: u32 = 3;
pub const DEFAULT_CONCURRENCY: usize = 4;
pub const DEFAULT_BATCH: usize = 256;

#[derive(Debug, Error)]
pub enum FetchError {
    #[error("provider answered with HTTP status {0}")]
    ProviderError(u16),

    #[error("provider unreachable: {0}")]
    Transport(String),

    #[error("embedding dimension {found} does not match {expected}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("provider returned no embedding for {} id(s): {}", .0.len(), .0.join(", "))]
    MissingIds(Vec<String>),

    #[error("malformed provider response: {0}")]
    Protocol(String),

    #[error("invalid request: {0}")]
    InvalidRequest(String),

    #[error("cache {}: {reason}", path.display())]
    Cache { path: PathBuf, reason: String },
}

impl FetchError {
    fn is_transient(&self) -> bool {
        match self {
            FetchError::Transport(_) => true,
            FetchError::ProviderError(status) => *status == 429 || *status >= 500,
            _ => false,
        }
    }
}

/// What the provider should embed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Payload {
    Text(String),
    /// An image reference the provider understands (path, URL or data URI).
    Image(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FetchItem {
    pub id: String,
    #[serde(flatten)]
    pub payload: Payload,
}

impl FetchItem {
    pub fn text(id: impl Into<String>, text: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            payload: Payload::Text(text.into()),
        }
    }

    pub fn image(id: impl Into<String>, reference: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            payload: Payload::Image(reference.into()),
        }
    }
}

#[derive(Serialize)]
struct Request<'a> {
    version: &'static str,
    items: &'a [FetchItem],
}

#[derive(Deserialize)]
struct Response {
    dim: usize,
    embeddings: Vec<ResponseRow>,
}

#[derive(Deserialize)]
struct ResponseRow {
    id: String,
    values: Vec<f32>,
}

struct Batch {
    dim: usize,
    rows: HashMap<String, Vec<f32>>,
}

#[derive(Debug, Clone)]
pub struct ProviderClient {
    endpoint: String,
    token: Option<String>,
    pub max_retries: u32,
    /// Delay before the first retry; doubled for each further one.
    pub backoff: Duration,
    pub batch_size: usize,
    pub concurrency: usize,
    pub cache_dir: Option<PathBuf>,
    /// Reject responses whose dimension differs.
    pub expected_dim: Option<usize>,
    agent: ureq::Agent,
}

impl ProviderClient {
    /// A client for `endpoint`, authenticating with [`TOKEN_ENV`] if set.
    pub fn new(endpoint: impl Into<String>) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(120)))
            .http_status_as_error(false)
            .build()
            .into();
        Self {
            endpoint: endpoint.into(),
            token: std::env::var(TOKEN_ENV).ok().filter(|t| !t.is_empty()),
            max_retries: DEFAULT_RETRIES,
            backoff: Duration::from_millis(250),
            batch_size: DEFAULT_BATCH,
            concurrency: DEFAULT_CONCURRENCY,
            cache_dir: None,
            expected_dim: None,
            agent,
        }
    }

    pub fn with_token(mut self, token: Option<String>) -> Self {
        self.token = token;
        self
    }

    pub fn with_cache_dir(mut self, dir: impl Into<PathBuf>) -> Self {
        self.cache_dir = Some(dir.into());
        self
    }

    /// Content hash identifying a request: protocol, endpoint and items.
    pub fn cache_key(&self, items: &[FetchItem]) -> String {
        let mut h = Sha256::new();
        h.update(PROTOCOL_VERSION.as_bytes());
        h.update([0]);
        h.update(self.endpoint.as_bytes());
        h.update([0]);
        h.update(serde_json::to_vec(items).expect("items always serialize"));
        hex::encode(h.finalize())
    }

    fn cache_path(&self, items: &[FetchItem]) -> Option<PathBuf> {
        self.cache_dir
            .as_ref()
            .map(|d| d.join(format!("{}.tqxe", self.cache_key(items))))
    }

    /// Embeds every item; rows follow the order of `items`.
    pub fn fetch(&self, items: &[FetchItem]) -> Result<Embeddings, FetchError> {
        if items.is_empty() {
            return Err(FetchError::InvalidRequest("no items".into()));
        }
        let mut seen = BTreeSet::new();
        if let Some(dup) = items.iter().find(|i| !seen.insert(i.id.as_str())) {
            return Err(FetchError::InvalidRequest(format!("id `{}` appears twice", dup.id)));
        }
        let cache = self.cache_path(items);
        if let Some(path) = &cache {
            if path.is_file() {
                debug!("cache hit {}", path.display());
                return read_cache(path, self.expected_dim);
            }
        }

        let batches: Vec<&[FetchItem]> = items.chunks(self.batch_size.max(1)).collect();
        let results = self.fetch_batches(&batches);

        let mut dim = self.expected_dim;
        let mut values = Vec::new();
        let mut missing = Vec::new();
        for (chunk, result) in batches.iter().zip(results) {
            let mut batch = result?;
            match dim {
                Some(d) if d != batch.dim => {
                    return Err(FetchError::DimensionMismatch {
                        expected: d,
                        found: batch.dim,
                    })
                }
                _ => dim = Some(batch.dim),
            }
            for item in *chunk {
                match batch.rows.remove(&item.id) {
                    Some(row) => values.extend(row),
                    None => missing.push(item.id.clone()),
                }
            }
        }
        if !missing.is_empty() {
            return Err(FetchError::MissingIds(missing));
        }
        let ids = items.iter().map(|i| i.id.clone()).collect();
        let matrix = Embeddings::new(ids, dim.expect("at least one batch"), values)
            .map_err(|e| FetchError::Protocol(e.to_string()))?;
        if let Some(path) = &cache {
            write_cache(path, &matrix)?;
        }
        Ok(matrix)
    }

    /// Runs every batch with at most `concurrency` requests in flight;
    /// results are indexed like `batches`.
    fn fetch_batches(&self, batches: &[&[FetchItem]]) -> Vec<Result<Batch, FetchError>> {
        let slots: Vec<Mutex<Option<Result<Batch, FetchError>>>> = batches.iter().map(|_| Mutex::new(None)).collect();
        let next = AtomicUsize::new(0);
        let workers = self.concurrency.clamp(1, batches.len());
        thread::scope(|scope| {
            for _ in 0..workers {
                scope.spawn(|| loop {
                    let b = next.fetch_add(1, Ordering::Relaxed);
                    if b >= batches.len() {
                        break;
                    }
                    let result = self.fetch_with_retry(batches[b]);
                    *slots[b].lock().expect("slot lock") = Some(result);
                });
            }
        });
        slots
            .into_iter()
            .map(|s| s.into_inner().expect("slot lock").expect("every batch ran"))
            .collect()
    }

    fn fetch_with_retry(&self, items: &[FetchItem]) -> Result<Batch, FetchError> {
        let mut attempt = 0;
        loop {
            match self.post(items) {
                Err(e) if e.is_transient() && attempt < self.max_retries => {
                    let delay = self.backoff * 2u32.pow(attempt);
                    warn!("{e}; retrying in {delay:?}");
                    thread::sleep(delay);
                    attempt += 1;
                }
                other => return other,
            }
        }
    }

    fn post(&self, items: &[FetchItem]) -> Result<Batch, FetchError> {
        let body = serde_json::to_vec(&Request {
            version: PROTOCOL_VERSION,
            items,
        })
        .expect("request always serializes");
        let mut request = self.agent.post(&self.endpoint).header("Content-Type", "application/json");
        if let Some(token) = &self.token {
            request = request.header("Authorization", format!("Bearer {token}"));
        }
        let mut response = request
            .send(&body[..])
            .map_err(|e| FetchError::Transport(e.to_string()))?;
        let status = response.status().as_u16();
        if !(200..300).contains(&status) {
            return Err(FetchError::ProviderError(status));
        }
        let bytes = response
            .body_mut()
            .with_config()
            .limit(u64::MAX)
            .read_to_vec()
            .map_err(|e| FetchError::Transport(e.to_string()))?;
        parse_response(&bytes, items)
    }
}

fn parse_response(bytes: &[u8], items: &[FetchItem]) -> Result<Batch, FetchError> {
    let response: Response = serde_json::from_slice(bytes).map_err(|e| FetchError::Protocol(e.to_string()))?;
    if response.dim == 0 {
        return Err(FetchError::Protocol("dimension 0".into()));
    }
    let requested: BTreeSet<&str> = items.iter().map(|i| i.id.as_str()).collect();
    let mut rows = HashMap::with_capacity(response.embeddings.len());
    for row in response.embeddings {
        if row.values.len() != response.dim {
            return Err(FetchError::DimensionMismatch {
                expected: response.dim,
                found: row.values.len(),
            });
        }
        if !requested.contains(row.id.as_str()) {
            return Err(FetchError::Protocol(format!("unrequested id `{}`", row.id)));
        }
        if rows.insert(row.id.clone(), row.values).is_some() {
            return Err(FetchError::Protocol(format!("id `{}` returned twice", row.id)));
        }
    }
    Ok(Batch {
        dim: response.dim,
        rows,
    })
}

fn read_cache(path: &Path, expected_dim: Option<usize>) -> Result<Embeddings, FetchError> {
    let cache_err = |reason: String| FetchError::Cache {
        path: path.to_path_buf(),
        reason,
    };
    let bytes = fs::read(path).map_err(|e| cache_err(e.to_string()))?;
    let m: Embeddings = decode(&bytes, path).map_err(|e| cache_err(e.to_string()))?;
    match expected_dim {
        Some(d) if d != m.dim() => Err(FetchError::DimensionMismatch {
            expected: d,
            found: m.dim(),
        }),
        _ => Ok(m),
    }
}

fn write_cache(path: &Path, m: &Embeddings) -> Result<(), FetchError> {
    let cache_err = |reason: String| FetchError::Cache {
        path: path.to_path_buf(),
        reason,
    };
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| cache_err(e.to_string()))?;
    }
    let tmp = path.with_extension("tqxe.tmp");
    fs::write(&tmp, encode(m)).map_err(|e| cache_err(e.to_string()))?;
    fs::rename(&tmp, path).map_err(|e| cache_err(e.to_string()))
}

/// Fetches `items` from `endpoint` with default client settings.
pub fn fetch_remote_embeddings(endpoint: &str, items: &[FetchItem]) -> Result<Embeddings, FetchError> {
    ProviderClient::new(endpoint).fetch(items)
}

/// Reads fetch items from JSON lines (`{"id": .., "text": ..}` or
/// `{"id": .., "image": ..}`).
pub fn read_items(path: &Path) -> Result<Vec<FetchItem>, crate::CliError> {
    let text = fs::read_to_string(path).map_err(|e| crate::CliError::input(path, e.to_string()))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, l)| {
            serde_json::from_str(l).map_err(|e| crate::CliError::input(path, format!("line {}: {e}", n + 1)))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wire_format() {
        let items = [FetchItem::text("a", "tumor"), FetchItem::image("b", "x.png")];
        let body = serde_json::to_string(&Request {
            version: PROTOCOL_VERSION,
            items: &items,
        })
        .unwrap();
        assert_eq!(
            body,
            r#"{"version":"tqx-embed/1","items":[{"id":"a","text":"tumor"},{"id":"b","image":"x.png"}]}"#
        );
        let back: FetchItem = serde_json::from_str(r#"{"id":"a","text":"tumor"}"#).unwrap();
        assert_eq!(back, items[0]);
    }

    #[test]
    fn cache_key_depends_on_content_and_endpoint() {
        let c = ProviderClient::new("http://a/embed");
        let items = [FetchItem::text("a", "x")];
        assert_eq!(c.cache_key(&items), c.cache_key(&items));
        assert_ne!(c.cache_key(&items), c.cache_key(&[FetchItem::text("a", "y")]));
        assert_ne!(c.cache_key(&items), ProviderClient::new("http://b/embed").cache_key(&items));
    }

    #[test]
    fn response_validation() {
        let items = [FetchItem::text("a", "x"), FetchItem::text("b", "y")];
        let ok = parse_response(br#"{"dim":2,"embeddings":[{"id":"a","values":[1,2]}]}"#, &items).unwrap();
        assert_eq!(ok.rows["a"], vec![1.0, 2.0]);
        let short = parse_response(br#"{"dim":2,"embeddings":[{"id":"a","values":[1]}]}"#, &items);
        assert!(matches!(short, Err(FetchError::DimensionMismatch { expected: 2, found: 1 })));
        let stranger = parse_response(br#"{"dim":1,"embeddings":[{"id":"z","values":[1]}]}"#, &items);
        assert!(matches!(stranger, Err(FetchError::Protocol(_))));
    }

    #[test]
    fn transient_classification() {
        assert!(FetchError::ProviderError(503).is_transient());
        assert!(FetchError::ProviderError(429).is_transient());
        assert!(!FetchError::ProviderError(401).is_transient());
        assert!(!FetchError::MissingIds(vec![]).is_transient());
    }

    #[test]
    fn duplicate_request_ids_are_rejected() {
        let c = ProviderClient::new("http://127.0.0.1:9/none");
        let err = c.fetch(&[FetchItem::text("a", "x"), FetchItem::text("a", "y")]).unwrap_err();
        assert!(matches!(err, FetchError::InvalidRequest(_)));
    }
}
