//! Text encoders and the cosine similarity used by retrieval.
//!
//! Two backends share the [`Encoder`] trait:
//!
//! - [`HashEncoder`]: deterministic feature hashing, no model needed.
//! - [`RemoteEncoder`]: posts text to an HTTP embedding service.
//!
//! Hashing scheme of [`HashEncoder`]: the text is lowercased and split on
//! every non-alphanumeric character. Each token's UTF-8 bytes are hashed with
//! 64-bit FNV-1a. The low 32 bits modulo `D` give the bucket; bit 63 gives the
//! sign (clear is `+1`, set is `-1`). Buckets are accumulated and the vector is
//! L2-normalized. An input with no tokens encodes to the zero vector.

use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_DIMENSION: usize = 384;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

#[derive(Debug, Error)]
pub enum EncoderError {
    #[error("embedding dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("embedding contains a non-finite value at index {0}")]
    NonFinite(usize),
    #[error("encoder transport failure: {0}")]
    Transport(String),
    #[error("malformed encoder response: {0}")]
    Response(String),
    #[error("encoder configuration: {0}")]
    Config(String),
}

/// A fixed-dimension real vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct Embedding(Vec<f64>);

impl Embedding {
    /// Wraps `values`, rejecting NaN and infinities.
    pub fn new(values: Vec<f64>) -> Result<Self, EncoderError> {
        if let Some(idx) = values.iter().position(|v| !v.is_finite()) {
            return Err(EncoderError::NonFinite(idx));
        }
        Ok(Self(values))
    }

    pub fn zeros(dimension: usize) -> Self {
        Self(vec![0.0; dimension])
    }

    pub fn dimension(&self) -> usize {
        self.0.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn norm(&self) -> f64 {
        dot(&self.0, &self.0).sqrt()
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|v| *v == 0.0)
    }
}

impl TryFrom<Vec<f64>> for Embedding {
    type Error = EncoderError;

    fn try_from(values: Vec<f64>) -> Result<Self, Self::Error> {
        Self::new(values)
    }
}

impl From<Embedding> for Vec<f64> {
    fn from(e: Embedding) -> Self {
        e.0
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Cosine similarity, clamped to `[-1, 1]`. Zero when either side is the
/// zero vector.
///
/// Panics when the dimensions differ; callers validate dimensions first.
pub fn cosine(a: &Embedding, b: &Embedding) -> f64 {
    assert_eq!(
        a.dimension(),
        b.dimension(),
        "cosine of embeddings with different dimensions"
    );
    let na = a.norm();
    let nb = b.norm();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    (dot(&a.0, &b.0) / (na * nb)).clamp(-1.0, 1.0)
}

pub trait Encoder: Send + Sync {
    fn dimension(&self) -> usize;

    fn encode(&self, text: &str) -> Result<Embedding, EncoderError>;
}

/// 64-bit FNV-1a.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    bytes.iter().fold(FNV_OFFSET, |hash, byte| {
        (hash ^ u64::from(*byte)).wrapping_mul(FNV_PRIME)
    })
}

/// Lowercases `text` and splits it on non-alphanumeric characters.
pub fn tokenize(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
}

#[derive(Debug, Clone)]
pub struct HashEncoder {
    dimension: usize,
}

impl HashEncoder {
    pub fn new(dimension: usize) -> Result<Self, EncoderError> {
        if dimension == 0 {
            return Err(EncoderError::Config("dimension must be positive".into()));
        }
        Ok(Self { dimension })
    }

    fn bucket(&self, token: &str) -> (usize, f64) {
        let hash = fnv1a64(token.as_bytes());
        let index = (hash & 0xffff_ffff) as usize % self.dimension;
        let sign = if hash >> 63 == 0 { 1.0 } else { -1.0 };
        (index, sign)
    }
}

impl Default for HashEncoder {
    fn default() -> Self {
        Self {
            dimension: DEFAULT_DIMENSION,
        }
    }
}

impl Encoder for HashEncoder {
    fn dimension(&self) -> usize {
        self.dimension
    }

    fn encode(&self, text: &str) -> Result<Embedding, EncoderError> {
        let mut values = vec![0.0; self.dimension];
        for token in tokenize(text) {
            let (index, sign) = self.bucket(&token);
            values[index] += sign;
        }
        let norm = dot(&values, &values).sqrt();
        if norm > 0.0 {
            values.iter_mut().for_each(|v| *v /= norm);
        }
        Ok(Embedding(values))
    }
}

/// Client for an HTTP embedding service.
///
/// Sends `{"input": text}` (plus `"model"` when configured) as a JSON POST.
/// Accepts a bare numeric array, `{"embedding": [...]}`, or the
/// `{"data": [{"embedding": [...]}]}` shape. Vectors are stored as returned.
pub struct RemoteEncoder {
    endpoint: String,
    model: Option<String>,
    api_key: Option<String>,
    dimension: usize,
    client: reqwest::blocking::Client,
}

impl RemoteEncoder {
    pub fn new(
        endpoint: impl Into<String>,
        model: Option<String>,
        api_key: Option<String>,
        dimension: usize,
        timeout: Duration,
    ) -> Result<Self, EncoderError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| EncoderError::Config(e.to_string()))?;
        Ok(Self {
            endpoint: endpoint.into(),
            model,
            api_key,
            dimension,
            client,
        })
    }

    fn parse_response(&self, body: &serde_json::Value) -> Result<Vec<f64>, EncoderError> {
        let array = match body {
            serde_json::Value::Array(_) => body,
            serde_json::Value::Object(map) => map
                .get("embedding")
                .or_else(|| {
                    map.get("data")
                        .and_then(|d| d.get(0))
                        .and_then(|d| d.get("embedding"))
                })
                .ok_or_else(|| EncoderError::Response("no embedding array in response".into()))?,
            _ => return Err(EncoderError::Response("unexpected response type".into())),
        };
        let items = array
            .as_array()
            .ok_or_else(|| EncoderError::Response("embedding is not an array".into()))?;
        items
            .iter()
            .map(|v| {
                v.as_f64()
                    .ok_or_else(|| EncoderError::Response("non-numeric embedding entry".into()))
            })
            .collect()
    }
}

impl Encoder for RemoteEncoder {
    fn dimension(&self) -> usize {
        self.dimension
    }

    fn encode(&self, text: &str) -> Result<Embedding, EncoderError> {
        let mut payload = serde_json::json!({ "input": text });
        if let Some(model) = &self.model {
            payload["model"] = serde_json::Value::String(model.clone());
        }
        let mut request = self.client.post(&self.endpoint).json(&payload);
        if let Some(key) = &self.api_key {
            request = request.bearer_auth(key);
        }
        let response = request
            .send()
            .map_err(|e| EncoderError::Transport(e.to_string()))?;
        let status = response.status();
        if !status.is_success() {
            return Err(EncoderError::Transport(format!("HTTP status {status}")));
        }
        let body: serde_json::Value = response
            .json()
            .map_err(|e| EncoderError::Response(e.to_string()))?;
        let values = self.parse_response(&body)?;
        if values.len() != self.dimension {
            return Err(EncoderError::DimensionMismatch {
                expected: self.dimension,
                actual: values.len(),
            });
        }
        Embedding::new(values)
    }
}

fn default_timeout_secs() -> u64 {
    30
}

fn default_dimension() -> usize {
    DEFAULT_DIMENSION
}

/// Encoder selection as it appears in run configuration files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum EncoderBackend {
    DeterministicHash {
        #[serde(default = "default_dimension")]
        dimension: usize,
    },
    RemoteService {
        endpoint: String,
        #[serde(default)]
        model: Option<String>,
        /// Name of the environment variable holding the credential.
        #[serde(default)]
        api_key_env: Option<String>,
        #[serde(default = "default_dimension")]
        dimension: usize,
        #[serde(default = "default_timeout_secs")]
        timeout_secs: u64,
    },
}

impl Default for EncoderBackend {
    fn default() -> Self {
        Self::DeterministicHash {
            dimension: DEFAULT_DIMENSION,
        }
    }
}

impl EncoderBackend {
    pub fn dimension(&self) -> usize {
        match self {
            Self::DeterministicHash { dimension } | Self::RemoteService { dimension, .. } => {
                *dimension
            }
        }
    }

    pub fn build(&self) -> Result<Box<dyn Encoder>, EncoderError> {
        match self {
            Self::DeterministicHash { dimension } => Ok(Box::new(HashEncoder::new(*dimension)?)),
            Self::RemoteService {
                endpoint,
                model,
                api_key_env,
                dimension,
                timeout_secs,
            } => {
                let api_key = match api_key_env {
                    Some(var) => Some(std::env::var(var).map_err(|_| {
                        EncoderError::Config(format!("environment variable {var} is not set"))
                    })?),
                    None => None,
                };
                Ok(Box::new(RemoteEncoder::new(
                    endpoint.clone(),
                    model.clone(),
                    api_key,
                    *dimension,
                    Duration::from_secs(*timeout_secs),
                )?))
            }
        }
    }
}
