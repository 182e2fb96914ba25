//! External model contracts.
//!
//! Every model the engine talks to sits behind one of the traits here. Each
//! has a remote implementation speaking a small JSON-over-HTTP protocol
//! ([`remote`]) and a deterministic offline implementation ([`offline`])
//! used for tests and reproducible benchmark runs.

use std::fmt;
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use uuid::Uuid;

use crate::corpus::AssetKind;

pub mod cache;
pub mod offline;
pub mod remote;
pub mod stub;

pub use cache::CachedDescriber;
pub use offline::{
    OfflineGenerator, OfflineImageDescriber, OfflineJudge, OfflineMultiModalEmbedder,
    OfflineSimilarityScorer, OfflineTextEmbedder,
};
pub use remote::RemoteProvider;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProviderError {
    #[error("input is empty")]
    EmptyInput,
    #[error("provider unreachable: {0}")]
    ProviderUnreachable(String),
    #[error("provider rejected request with status {status}: {body}")]
    ProviderRejected { status: u16, body: String },
    #[error("image bytes are not a decodable image")]
    UndecodableImage,
    #[error("context too large for the generator")]
    ContextTooLarge,
    #[error("no fixture for prompt sha256 {0}")]
    FixtureMiss(String),
    #[error("no sidecar description for asset {0}")]
    MissingSidecar(Uuid),
    #[error("malformed provider response: {0}")]
    MalformedResponse(String),
    #[error("embedding has dimension {got}, provider dimension is {expected}")]
    DimMismatch { expected: usize, got: usize },
    #[error("embedding contains non-finite values")]
    NonFinite,
}

/// A dense embedding with finite components.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f32>", into = "Vec<f32>")]
pub struct EmbeddingVector(Vec<f32>);

impl EmbeddingVector {
    pub fn new(values: Vec<f32>) -> Result<Self, ProviderError> {
        if values.is_empty() {
            return Err(ProviderError::EmptyInput);
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(ProviderError::NonFinite);
        }
        Ok(Self(values))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f32> {
        self.0
    }
}

impl TryFrom<Vec<f32>> for EmbeddingVector {
    type Error = ProviderError;

    fn try_from(v: Vec<f32>) -> Result<Self, Self::Error> {
        Self::new(v)
    }
}

impl From<EmbeddingVector> for Vec<f32> {
    fn from(v: EmbeddingVector) -> Self {
        v.0
    }
}

/// Image bytes together with the catalog identity they came from.
#[derive(Debug, Clone, Copy)]
pub struct ImageRef<'a> {
    pub uuid: Uuid,
    pub kind: AssetKind,
    pub bytes: &'a [u8],
}

/// Where a provider lives.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum Endpoint {
    Offline,
    Url(String),
}

impl fmt::Display for Endpoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Endpoint::Offline => f.write_str("offline"),
            Endpoint::Url(u) => f.write_str(u),
        }
    }
}

impl std::str::FromStr for Endpoint {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        if s == "offline" {
            Ok(Endpoint::Offline)
        } else if s.starts_with("http://") || s.starts_with("https://") {
            Ok(Endpoint::Url(s.to_owned()))
        } else {
            Err(format!("endpoint must be `offline` or an http(s) URL, got `{s}`"))
        }
    }
}

impl From<Endpoint> for String {
    fn from(e: Endpoint) -> Self {
        e.to_string()
    }
}

impl TryFrom<String> for Endpoint {
    type Error = String;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProviderConfig {
    pub endpoint: Endpoint,
    pub model_name: String,
    pub timeout: Duration,
    /// Name of the environment variable holding the API key, if any.
    pub api_key_env: Option<String>,
    pub temperature: f32,
    pub max_in_flight: usize,
}

impl ProviderConfig {
    pub fn offline(model_name: impl Into<String>) -> Self {
        Self {
            endpoint: Endpoint::Offline,
            model_name: model_name.into(),
            timeout: Duration::from_secs(60),
            api_key_env: None,
            temperature: 0.0,
            max_in_flight: 4,
        }
    }

    pub fn remote(url: impl Into<String>, model_name: impl Into<String>) -> Self {
        Self {
            endpoint: Endpoint::Url(url.into()),
            ..Self::offline(model_name)
        }
    }
}

pub trait TextEmbedder: Send + Sync {
    fn model_name(&self) -> &str;
    fn embed_text(&self, text: &str) -> Result<EmbeddingVector, ProviderError>;
}

/// Embeds text and images into one shared space.
pub trait MultiModalEmbedder: Send + Sync {
    fn model_name(&self) -> &str;
    fn embed_mm_text(&self, text: &str) -> Result<EmbeddingVector, ProviderError>;
    fn embed_mm_image(&self, image: &ImageRef<'_>) -> Result<EmbeddingVector, ProviderError>;
}

/// Text-only (no images) or multi-modal answer generation.
pub trait Generator: Send + Sync {
    fn model_name(&self) -> &str;
    fn generate(&self, prompt: &str, images: &[ImageRef<'_>]) -> Result<String, ProviderError>;
}

pub trait ImageDescriber: Send + Sync {
    fn model_name(&self) -> &str;
    fn describe_image(&self, image: &ImageRef<'_>) -> Result<String, ProviderError>;
}

/// Claim decomposition and entailment used by the claim-based metrics.
pub trait Judge: Send + Sync {
    fn model_name(&self) -> &str;
    fn decompose_claims(&self, text: &str) -> Result<Vec<String>, ProviderError>;
    fn entails(&self, claim: &str, premise: &str) -> Result<bool, ProviderError>;
}

pub trait SimilarityScorer: Send + Sync {
    fn model_name(&self) -> &str;
    /// Score in `[0, 1]`.
    fn similarity_score(&self, answer: &str, reference: &str) -> Result<f64, ProviderError>;
}

/// The full set of models one pipeline run needs.
#[derive(Clone)]
pub struct Providers {
    pub text_embedder: Arc<dyn TextEmbedder>,
    pub mm_embedder: Arc<dyn MultiModalEmbedder>,
    pub generator: Arc<dyn Generator>,
    pub describer: Arc<dyn ImageDescriber>,
    pub judge: Arc<dyn Judge>,
    pub scorer: Arc<dyn SimilarityScorer>,
}

impl Providers {
    pub fn model_names(&self) -> ProviderModels {
        ProviderModels {
            text_embedder: self.text_embedder.model_name().to_owned(),
            mm_embedder: self.mm_embedder.model_name().to_owned(),
            generator: self.generator.model_name().to_owned(),
            describer: self.describer.model_name().to_owned(),
            judge: self.judge.model_name().to_owned(),
            scorer: self.scorer.model_name().to_owned(),
        }
    }
}

impl fmt::Debug for Providers {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_tuple("Providers").field(&self.model_names()).finish()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProviderModels {
    pub text_embedder: String,
    pub mm_embedder: String,
    pub generator: String,
    pub describer: String,
    pub judge: String,
    pub scorer: String,
}

pub(crate) fn require_text(text: &str) -> Result<(), ProviderError> {
    if text.trim().is_empty() {
        Err(ProviderError::EmptyInput)
    } else {
        Ok(())
    }
}

pub(crate) fn require_decodable(bytes: &[u8]) -> Result<(), ProviderError> {
    if bytes.is_empty() {
        return Err(ProviderError::UndecodableImage);
    }
    image::guess_format(bytes)
        .map(|_| ())
        .map_err(|_| ProviderError::UndecodableImage)
}
