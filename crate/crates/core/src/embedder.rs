//! Fixed-dimension embedding vectors, produced either by a remote
//! embeddings service or by a deterministic hashed bag-of-words backend for
//! offline runs and tests.

use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::normalized_token_list;
use crate::remote::{self, RemoteError, RequestGate};

/// An embedding of one text under one model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    pub values: Vec<f64>,
    pub model_id: String,
}

impl EmbeddingVector {
    pub fn dimension(&self) -> usize {
        self.values.len()
    }

    pub fn l2_norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|v| *v == 0.0)
    }
}

/// Cosine similarity; defined as 0 when either vector has zero norm.
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "cosine on mismatched dimensions");
    let mut dot = 0.0;
    let mut na = 0.0;
    let mut nb = 0.0;
    for (x, y) in a.iter().zip(b) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na.sqrt() * nb.sqrt())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EmbedderBackend {
    Remote,
    LocalHash,
}

/// Which embedder to use and how to reach it. The named commercial models
/// from the evaluation are `model_id` values under the `remote` backend.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmbedderConfig {
    pub backend: EmbedderBackend,
    pub model_id: String,
    /// Remote only: embeddings endpoint URL.
    pub endpoint: Option<String>,
    /// Vector dimension. Required for local-hash (default 256); for remote
    /// backends it is an optional contract check on responses.
    pub dimension: Option<usize>,
    /// Name of the environment variable holding the API key (remote only).
    pub api_key_env: Option<String>,
    /// Prepend the page title to the content before embedding.
    pub include_title: bool,
}

impl Default for EmbedderConfig {
    fn default() -> Self {
        EmbedderConfig {
            backend: EmbedderBackend::LocalHash,
            model_id: "local-hash-256".to_owned(),
            endpoint: None,
            dimension: Some(256),
            api_key_env: None,
            include_title: false,
        }
    }
}

impl EmbedderConfig {
    pub fn local_hash(dimension: usize) -> Self {
        EmbedderConfig {
            model_id: format!("local-hash-{dimension}"),
            dimension: Some(dimension),
            ..EmbedderConfig::default()
        }
    }

    pub fn validate(&self) -> Result<(), EmbedError> {
        match self.backend {
            EmbedderBackend::LocalHash => match self.dimension {
                Some(d) if d > 0 => Ok(()),
                _ => Err(EmbedError::Config(
                    "local-hash backend requires a positive dimension".into(),
                )),
            },
            EmbedderBackend::Remote => {
                if self.endpoint.as_deref().unwrap_or("").is_empty() {
                    return Err(EmbedError::Config(
                        "remote backend requires an endpoint".into(),
                    ));
                }
                if self.api_key_env.as_deref().unwrap_or("").is_empty() {
                    return Err(EmbedError::Config(
                        "remote backend requires api_key_env".into(),
                    ));
                }
                Ok(())
            }
        }
    }
}

#[derive(Debug, Error)]
pub enum EmbedError {
    #[error("invalid embedder config: {0}")]
    Config(String),
    #[error("embedding batch must not be empty")]
    EmptyBatch,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("transport failure after {attempts} attempts: {message}")]
    Transport { attempts: u32, message: String },
    #[error("embeddings endpoint returned HTTP {status}: {message}")]
    Http { status: u16, message: String },
    #[error("malformed embeddings response: {0}")]
    MalformedResponse(String),
    #[error("api key environment variable {0} is not set")]
    MissingApiKey(String),
}

impl From<RemoteError> for EmbedError {
    fn from(err: RemoteError) -> Self {
        match err {
            RemoteError::Transport { attempts, message } => {
                EmbedError::Transport { attempts, message }
            }
            RemoteError::Http { status, message } => EmbedError::Http { status, message },
            RemoteError::Malformed(m) => EmbedError::MalformedResponse(m),
            RemoteError::MissingApiKey(v) => EmbedError::MissingApiKey(v),
        }
    }
}

/// Embed one text under `cfg`. Deterministic for the local-hash backend.
pub fn embed_text(text: &str, cfg: &EmbedderConfig) -> Result<EmbeddingVector, EmbedError> {
    cfg.validate()?;
    match cfg.backend {
        EmbedderBackend::LocalHash => Ok(embed_local(
            text,
            &cfg.model_id,
            cfg.dimension.expect("validated"),
        )),
        EmbedderBackend::Remote => {
            let client = RemoteEmbeddingsClient::from_config(cfg)?;
            let mut vectors = client.embed(&[text.to_owned()])?;
            Ok(vectors.pop().expect("one vector per input"))
        }
    }
}

/// Embed a non-empty batch, preserving input order. Element `i` equals
/// `embed_text(texts[i], cfg)`; a partial remote failure fails the whole
/// batch.
pub fn embed_batch(
    texts: &[String],
    cfg: &EmbedderConfig,
) -> Result<Vec<EmbeddingVector>, EmbedError> {
    cfg.validate()?;
    if texts.is_empty() {
        return Err(EmbedError::EmptyBatch);
    }
    match cfg.backend {
        EmbedderBackend::LocalHash => {
            let dim = cfg.dimension.expect("validated");
            Ok(texts
                .iter()
                .map(|t| embed_local(t, &cfg.model_id, dim))
                .collect())
        }
        EmbedderBackend::Remote => RemoteEmbeddingsClient::from_config(cfg)?.embed(texts),
    }
}

/// Stable 64-bit FNV-1a. The std hasher is not guaranteed stable across
/// releases, and bucket assignment must never move between runs.
fn fnv1a_64(bytes: &[u8]) -> u64 {
    let mut hash = 0xcbf2_9ce4_8422_2325u64;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

pub(crate) fn hash_bucket(token: &str, dimension: usize) -> usize {
    (fnv1a_64(token.as_bytes()) % dimension as u64) as usize
}

/// Hashed bag-of-words: each normalized token adds one count to its hash
/// bucket; the result is L2-normalized. Empty text maps to the zero vector.
fn embed_local(text: &str, model_id: &str, dimension: usize) -> EmbeddingVector {
    let mut values = vec![0.0f64; dimension];
    for token in normalized_token_list(text) {
        values[hash_bucket(&token, dimension)] += 1.0;
    }
    let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm > 0.0 {
        for v in &mut values {
            *v /= norm;
        }
    }
    EmbeddingVector {
        values,
        model_id: model_id.to_owned(),
    }
}

/// Blocking client for the de-facto embeddings wire protocol:
/// `POST endpoint {"model", "input": [...]}` with bearer auth, response
/// `{"data": [{"index", "embedding"}]}`.
pub struct RemoteEmbeddingsClient {
    http: reqwest::blocking::Client,
    endpoint: String,
    model_id: String,
    api_key: String,
    declared_dimension: Option<usize>,
    max_retries: u32,
    retry_base_delay: Duration,
    gate: RequestGate,
}

impl RemoteEmbeddingsClient {
    pub fn from_config(cfg: &EmbedderConfig) -> Result<Self, EmbedError> {
        cfg.validate()?;
        let key_env = cfg.api_key_env.as_deref().expect("validated");
        let api_key = remote::api_key_from_env(key_env)?;
        Ok(RemoteEmbeddingsClient {
            http: reqwest::blocking::Client::new(),
            endpoint: cfg.endpoint.clone().expect("validated"),
            model_id: cfg.model_id.clone(),
            api_key,
            declared_dimension: cfg.dimension,
            max_retries: remote::DEFAULT_MAX_RETRIES,
            retry_base_delay: remote::DEFAULT_RETRY_BASE_DELAY,
            gate: RequestGate::new(remote::DEFAULT_MAX_IN_FLIGHT),
        })
    }

    pub fn with_retry(mut self, max_retries: u32, base_delay: Duration) -> Self {
        self.max_retries = max_retries;
        self.retry_base_delay = base_delay;
        self
    }

    pub fn with_max_in_flight(mut self, max_in_flight: usize) -> Self {
        self.gate = RequestGate::new(max_in_flight);
        self
    }

    pub fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, EmbedError> {
        if texts.is_empty() {
            return Err(EmbedError::EmptyBatch);
        }
        let body = serde_json::json!({ "model": self.model_id, "input": texts });
        let _permit = self.gate.acquire();
        let response = remote::post_json_with_retry(
            &self.http,
            &self.endpoint,
            &self.api_key,
            &body,
            self.max_retries,
            self.retry_base_delay,
        )?;
        self.parse_response(response, texts.len())
    }

    fn parse_response(
        &self,
        response: serde_json::Value,
        expected: usize,
    ) -> Result<Vec<EmbeddingVector>, EmbedError> {
        #[derive(Deserialize)]
        struct Entry {
            index: usize,
            embedding: Vec<f64>,
        }
        #[derive(Deserialize)]
        struct Body {
            data: Vec<Entry>,
        }
        let body: Body = serde_json::from_value(response)
            .map_err(|e| EmbedError::MalformedResponse(e.to_string()))?;
        if body.data.len() != expected {
            return Err(EmbedError::MalformedResponse(format!(
                "expected {expected} embeddings, got {}",
                body.data.len()
            )));
        }
        let mut slots: Vec<Option<Vec<f64>>> = vec![None; expected];
        for entry in body.data {
            let slot = slots.get_mut(entry.index).ok_or_else(|| {
                EmbedError::MalformedResponse(format!("index {} out of range", entry.index))
            })?;
            if slot.replace(entry.embedding).is_some() {
                return Err(EmbedError::MalformedResponse(format!(
                    "duplicate index {}",
                    entry.index
                )));
            }
        }
        let mut vectors = Vec::with_capacity(expected);
        let mut dimension = self.declared_dimension;
        for (i, slot) in slots.into_iter().enumerate() {
            let values = slot.ok_or_else(|| {
                EmbedError::MalformedResponse(format!("missing embedding for index {i}"))
            })?;
            if values.iter().any(|v| !v.is_finite()) {
                return Err(EmbedError::MalformedResponse(format!(
                    "non-finite component in embedding {i}"
                )));
            }
            match dimension {
                Some(d) if values.len() != d => {
                    return Err(EmbedError::DimensionMismatch {
                        expected: d,
                        got: values.len(),
                    })
                }
                Some(_) => {}
                None => dimension = Some(values.len()),
            }
            vectors.push(EmbeddingVector {
                values,
                model_id: self.model_id.clone(),
            });
        }
        Ok(vectors)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn repeated_token_puts_full_mass_in_one_bucket() {
        // Hashed bag-of-words by hand: "a a" feeds a single bucket twice;
        // after L2 normalization that bucket holds exactly 1.0.
        let cfg = EmbedderConfig::local_hash(4);
        let v = embed_text("a a", &cfg).unwrap();
        assert_eq!(v.dimension(), 4);
        let nonzero: Vec<f64> = v.values.iter().copied().filter(|x| *x != 0.0).collect();
        assert_eq!(nonzero, vec![1.0]);
        assert_eq!(v.values[hash_bucket("a", 4)], 1.0);
    }

    #[test]
    fn empty_text_is_zero_vector() {
        let cfg = EmbedderConfig::local_hash(4);
        let v = embed_text("", &cfg).unwrap();
        assert_eq!(v.values, vec![0.0; 4]);
        assert!(v.is_zero());
    }

    #[test]
    fn local_hash_is_deterministic() {
        let cfg = EmbedderConfig::local_hash(16);
        let a = embed_text("natural numbers form a set", &cfg).unwrap();
        let b = embed_text("natural numbers form a set", &cfg).unwrap();
        assert_eq!(a, b);
        assert!((cosine_similarity(&a.values, &b.values) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn nonzero_vectors_are_unit_norm() {
        let cfg = EmbedderConfig::local_hash(32);
        let v = embed_text("several distinct tokens here", &cfg).unwrap();
        assert!((v.l2_norm() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn zero_norm_cosine_is_zero() {
        assert_eq!(cosine_similarity(&[0.0, 0.0], &[1.0, 0.0]), 0.0);
        assert_eq!(cosine_similarity(&[0.0, 0.0], &[0.0, 0.0]), 0.0);
    }

    #[test]
    fn batch_preserves_order_and_matches_elementwise() {
        let cfg = EmbedderConfig::local_hash(8);
        let texts = vec!["one".to_owned(), "two".to_owned(), "three".to_owned()];
        let batch = embed_batch(&texts, &cfg).unwrap();
        assert_eq!(batch.len(), 3);
        for (text, vector) in texts.iter().zip(&batch) {
            assert_eq!(vector, &embed_text(text, &cfg).unwrap());
        }
    }

    #[test]
    fn empty_batch_is_an_error() {
        let cfg = EmbedderConfig::local_hash(8);
        assert!(matches!(
            embed_batch(&[], &cfg),
            Err(EmbedError::EmptyBatch)
        ));
    }

    #[test]
    fn batch_of_200_synthetic_pages_yields_200_vectors() {
        let cfg = EmbedderConfig::local_hash(64);
        let texts: Vec<String> = (0..200).map(|i| format!("page {i} body text")).collect();
        let batch = embed_batch(&texts, &cfg).unwrap();
        assert_eq!(batch.len(), 200);
        assert!(batch.iter().all(|v| v.dimension() == 64));
    }

    #[test]
    fn remote_config_requires_endpoint_and_key_env() {
        let cfg = EmbedderConfig {
            backend: EmbedderBackend::Remote,
            ..EmbedderConfig::default()
        };
        assert!(matches!(cfg.validate(), Err(EmbedError::Config(_))));
    }

    proptest! {
        /// The local embedder sees a token multiset: word order never matters.
        #[test]
        fn order_insensitive(mut words in proptest::collection::vec("[a-z]{1,6}", 1..20)) {
            let cfg = EmbedderConfig::local_hash(32);
            let forward = embed_text(&words.join(" "), &cfg).unwrap();
            words.reverse();
            let backward = embed_text(&words.join(" "), &cfg).unwrap();
            prop_assert_eq!(forward, backward);
        }

        /// All vectors under one config share the declared dimension.
        #[test]
        fn dimension_constancy(texts in proptest::collection::vec("\\PC{0,40}", 1..10)) {
            let cfg = EmbedderConfig::local_hash(24);
            let batch = embed_batch(&texts, &cfg).unwrap();
            prop_assert!(batch.iter().all(|v| v.dimension() == 24));
        }
    }
}
