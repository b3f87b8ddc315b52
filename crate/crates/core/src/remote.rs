//! HTTP clients for an external embedding service and an external completion service.
//!
//! Embedding: `POST <base>/embed` with `{"texts": [...]}`, reply `{"vectors": [[...], ...]}`.
//! Completion: `POST <base>/complete` with `{"prompt": "..."}`, reply `{"text": "..."}`.
//! Failures come back as a non-2xx status with `{"error": "..."}`.
//!
//! A bearer token is read from the environment variable named by [`TOKEN_ENV`]
//! when set. It is sent in the `Authorization` header and never logged.

use std::sync::OnceLock;
use std::time::Duration;

use reqwest::blocking::{Client, RequestBuilder};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::embedding::{EmbeddingProvider, EmbeddingVector};
use crate::error::{Error, Result};
use crate::llm::LlmProvider;

pub const TOKEN_ENV: &str = "KELP_API_TOKEN";
pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(60);

#[derive(Debug, Serialize, Deserialize)]
pub struct EmbedRequest {
    pub texts: Vec<String>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct EmbedResponse {
    pub vectors: Vec<Vec<f64>>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct CompleteRequest {
    pub prompt: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct CompleteResponse {
    pub text: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ErrorResponse {
    pub error: String,
}

fn endpoint(base: &str, route: &str) -> String {
    let base = base.trim_end_matches('/');
    if base.ends_with(route) {
        base.to_owned()
    } else {
        format!("{base}{route}")
    }
}

#[derive(Clone)]
struct HttpClient {
    url: String,
    client: Client,
    token: Option<String>,
}

impl std::fmt::Debug for HttpClient {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HttpClient")
            .field("url", &self.url)
            .field("token", &self.token.as_ref().map(|_| "<redacted>"))
            .finish()
    }
}

impl HttpClient {
    fn new(url: String, timeout: Duration) -> Result<Self> {
        let client = Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| Error::provider_fatal(format!("cannot build HTTP client: {e}")))?;
        let token = std::env::var(TOKEN_ENV).ok().filter(|t| !t.is_empty());
        Ok(HttpClient { url, client, token })
    }

    fn request(&self) -> RequestBuilder {
        let req = self.client.post(&self.url);
        match &self.token {
            Some(t) => req.bearer_auth(t),
            None => req,
        }
    }

    fn post<B: Serialize, R: DeserializeOwned>(&self, body: &B) -> Result<R> {
        let resp = self
            .request()
            .json(body)
            .send()
            .map_err(|e| Error::provider(format!("request to {} failed: {e}", self.url)))?;
        let status = resp.status();
        let text = resp
            .text()
            .map_err(|e| Error::provider(format!("reading reply from {} failed: {e}", self.url)))?;
        if !status.is_success() {
            let detail = serde_json::from_str::<ErrorResponse>(&text)
                .map(|e| e.error)
                .unwrap_or(text);
            let message = format!("{} returned {status}: {detail}", self.url);
            return Err(if status.is_server_error() || status.as_u16() == 429 {
                Error::provider(message)
            } else {
                Error::provider_fatal(message)
            });
        }
        serde_json::from_str(&text)
            .map_err(|e| Error::provider_fatal(format!("malformed reply from {}: {e}", self.url)))
    }
}

/// Embeddings from a remote service. The dimension is fixed by the first reply.
#[derive(Debug)]
pub struct RemoteEmbeddingProvider {
    http: HttpClient,
    dim: OnceLock<usize>,
}

impl RemoteEmbeddingProvider {
    pub fn new(base_url: &str) -> Result<Self> {
        Self::with_timeout(base_url, DEFAULT_TIMEOUT)
    }

    pub fn with_timeout(base_url: &str, timeout: Duration) -> Result<Self> {
        Ok(RemoteEmbeddingProvider {
            http: HttpClient::new(endpoint(base_url, "/embed"), timeout)?,
            dim: OnceLock::new(),
        })
    }

    pub fn url(&self) -> &str {
        &self.http.url
    }
}

impl EmbeddingProvider for RemoteEmbeddingProvider {
    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>> {
        if texts.is_empty() {
            return Ok(Vec::new());
        }
        let reply: EmbedResponse = self.http.post(&EmbedRequest {
            texts: texts.iter().map(|t| t.to_string()).collect(),
        })?;
        if reply.vectors.len() != texts.len() {
            return Err(Error::provider_fatal(format!(
                "{} returned {} vectors for {} texts",
                self.http.url,
                reply.vectors.len(),
                texts.len()
            )));
        }
        let first_dim = reply.vectors[0].len();
        if first_dim == 0 {
            return Err(Error::provider_fatal(format!("{} returned empty vectors", self.http.url)));
        }
        let dim = *self.dim.get_or_init(|| first_dim);
        for v in &reply.vectors {
            if v.len() != dim {
                return Err(Error::provider_fatal(format!(
                    "{} returned a {}-dimensional vector, expected {dim}",
                    self.http.url,
                    v.len()
                )));
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::provider_fatal(format!("{} returned a non-finite value", self.http.url)));
            }
        }
        Ok(reply.vectors.into_iter().map(EmbeddingVector).collect())
    }

    fn dimension(&self) -> Option<usize> {
        self.dim.get().copied()
    }
}

/// Completions from a remote service.
#[derive(Debug)]
pub struct RemoteLlm {
    http: HttpClient,
}

impl RemoteLlm {
    pub fn new(base_url: &str) -> Result<Self> {
        Self::with_timeout(base_url, DEFAULT_TIMEOUT)
    }

    pub fn with_timeout(base_url: &str, timeout: Duration) -> Result<Self> {
        Ok(RemoteLlm {
            http: HttpClient::new(endpoint(base_url, "/complete"), timeout)?,
        })
    }

    pub fn url(&self) -> &str {
        &self.http.url
    }
}

impl LlmProvider for RemoteLlm {
    fn complete(&self, prompt: &str) -> Result<String> {
        let reply: CompleteResponse = self.http.post(&CompleteRequest {
            prompt: prompt.to_owned(),
        })?;
        Ok(reply.text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn endpoints() {
        assert_eq!(endpoint("http://h:1", "/embed"), "http://h:1/embed");
        assert_eq!(endpoint("http://h:1/", "/embed"), "http://h:1/embed");
        assert_eq!(endpoint("http://h:1/embed", "/embed"), "http://h:1/embed");
        assert_eq!(endpoint("http://h:1/v1", "/complete"), "http://h:1/v1/complete");
    }

    #[test]
    fn debug_hides_token() {
        let mut http = HttpClient::new("http://h/embed".into(), DEFAULT_TIMEOUT).unwrap();
        http.token = Some("s3cret".into());
        assert!(!format!("{http:?}").contains("s3cret"));
    }

    #[test]
    fn unreachable_server_is_retriable() {
        let p = RemoteEmbeddingProvider::with_timeout("http://127.0.0.1:1", Duration::from_secs(2)).unwrap();
        let err = p.embed_batch(&["x"]).unwrap_err();
        assert!(err.is_retriable(), "{err}");
        assert_eq!(p.dimension(), None);
    }
}
