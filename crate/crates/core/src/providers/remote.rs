//! HTTP providers.
//!
//! Every task is a `POST` to the configured endpoint with body
//! `{"task": ..., "model": ..., "input": ...}` and a `{"output": ...}`
//! response. Image bytes travel base64-encoded.
//!
//! | task             | input                                          | output            |
//! |------------------|------------------------------------------------|-------------------|
//! | `embed_text`     | string                                         | array of numbers  |
//! | `embed_mm_text`  | string                                         | array of numbers  |
//! | `embed_mm_image` | `{"image", "kind"}`                            | array of numbers  |
//! | `generate`       | `{"prompt", "images", "temperature"}`          | string            |
//! | `describe_image` | `{"image", "kind"}`                            | string            |
//! | `decompose`      | `{"text", "temperature"}`                      | array of strings  |
//! | `entails`        | `{"claim", "premise", "temperature"}`          | bool              |
//! | `similarity`     | `{"answer", "reference"}`                      | number            |

use std::sync::{Condvar, Mutex, OnceLock};

use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{
    require_decodable, require_text, EmbeddingVector, Endpoint, Generator, ImageDescriber,
    ImageRef, Judge, MultiModalEmbedder, ProviderConfig, ProviderError, SimilarityScorer,
    TextEmbedder,
};

#[derive(Debug, Serialize, Deserialize)]
pub struct WireRequest {
    pub task: String,
    pub model: String,
    pub input: Value,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct WireResponse {
    pub output: Value,
}

pub fn encode_image(image: &ImageRef<'_>) -> Value {
    json!({ "image": BASE64.encode(image.bytes), "kind": image.kind.as_str() })
}

struct InFlight {
    slots: Mutex<usize>,
    freed: Condvar,
}

impl InFlight {
    fn new(limit: usize) -> Self {
        Self {
            slots: Mutex::new(limit.max(1)),
            freed: Condvar::new(),
        }
    }

    fn acquire(&self) -> InFlightGuard<'_> {
        let mut slots = self.slots.lock().expect("in-flight lock poisoned");
        while *slots == 0 {
            slots = self.freed.wait(slots).expect("in-flight lock poisoned");
        }
        *slots -= 1;
        InFlightGuard(self)
    }
}

struct InFlightGuard<'a>(&'a InFlight);

impl Drop for InFlightGuard<'_> {
    fn drop(&mut self) {
        *self.0.slots.lock().expect("in-flight lock poisoned") += 1;
        self.0.freed.notify_one();
    }
}

/// A remote model reachable over the wire contract above. One instance can
/// serve any of the provider traits.
pub struct RemoteProvider {
    config: ProviderConfig,
    url: String,
    agent: ureq::Agent,
    in_flight: InFlight,
    dim: OnceLock<usize>,
}

impl RemoteProvider {
    pub fn new(config: ProviderConfig) -> Result<Self, ProviderError> {
        let url = match &config.endpoint {
            Endpoint::Url(u) => u.clone(),
            Endpoint::Offline => {
                return Err(ProviderError::ProviderUnreachable(
                    "remote provider configured with the offline endpoint".into(),
                ))
            }
        };
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(config.timeout))
            .http_status_as_error(false)
            .build()
            .into();
        Ok(Self {
            in_flight: InFlight::new(config.max_in_flight),
            config,
            url,
            agent,
            dim: OnceLock::new(),
        })
    }

    pub fn config(&self) -> &ProviderConfig {
        &self.config
    }

    /// Sends one task and returns the `output` field of the response.
    pub fn call(&self, task: &str, input: Value) -> Result<Value, ProviderError> {
        let body = WireRequest {
            task: task.to_owned(),
            model: self.config.model_name.clone(),
            input,
        };
        let _slot = self.in_flight.acquire();
        let mut req = self.agent.post(&self.url);
        if let Some(var) = &self.config.api_key_env {
            if let Ok(key) = std::env::var(var) {
                req = req.header("Authorization", &format!("Bearer {key}"));
            }
        }
        let mut resp = req
            .send_json(&body)
            .map_err(|e| ProviderError::ProviderUnreachable(e.to_string()))?;
        let status = resp.status().as_u16();
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| ProviderError::ProviderUnreachable(e.to_string()))?;
        match status {
            200..=299 => {}
            413 => return Err(ProviderError::ContextTooLarge),
            _ => return Err(ProviderError::ProviderRejected { status, body: text }),
        }
        let parsed: WireResponse = serde_json::from_str(&text)
            .map_err(|e| ProviderError::MalformedResponse(e.to_string()))?;
        Ok(parsed.output)
    }

    fn embedding(&self, output: Value) -> Result<EmbeddingVector, ProviderError> {
        let values: Vec<f32> = serde_json::from_value(output)
            .map_err(|e| ProviderError::MalformedResponse(e.to_string()))?;
        let v = EmbeddingVector::new(values)?;
        let expected = *self.dim.get_or_init(|| v.dim());
        if v.dim() != expected {
            return Err(ProviderError::DimMismatch {
                expected,
                got: v.dim(),
            });
        }
        Ok(v)
    }

    fn string(output: Value) -> Result<String, ProviderError> {
        match output {
            Value::String(s) => Ok(s),
            other => Err(ProviderError::MalformedResponse(format!(
                "expected a string, got {other}"
            ))),
        }
    }
}

impl TextEmbedder for RemoteProvider {
    fn model_name(&self) -> &str {
        &self.config.model_name
    }

    fn embed_text(&self, text: &str) -> Result<EmbeddingVector, ProviderError> {
        require_text(text)?;
        let out = self.call("embed_text", json!(text))?;
        self.embedding(out)
    }
}

impl MultiModalEmbedder for RemoteProvider {
    fn model_name(&self) -> &str {
        &self.config.model_name
    }

    fn embed_mm_text(&self, text: &str) -> Result<EmbeddingVector, ProviderError> {
        require_text(text)?;
        let out = self.call("embed_mm_text", json!(text))?;
        self.embedding(out)
    }

    fn embed_mm_image(&self, image: &ImageRef<'_>) -> Result<EmbeddingVector, ProviderError> {
        require_decodable(image.bytes)?;
        let out = self.call("embed_mm_image", encode_image(image))?;
        self.embedding(out)
    }
}

impl Generator for RemoteProvider {
    fn model_name(&self) -> &str {
        &self.config.model_name
    }

    fn generate(&self, prompt: &str, images: &[ImageRef<'_>]) -> Result<String, ProviderError> {
        require_text(prompt)?;
        let images: Vec<Value> = images.iter().map(encode_image).collect();
        let out = self.call(
            "generate",
            json!({
                "prompt": prompt,
                "images": images,
                "temperature": self.config.temperature,
            }),
        )?;
        Self::string(out)
    }
}

impl ImageDescriber for RemoteProvider {
    fn model_name(&self) -> &str {
        &self.config.model_name
    }

    fn describe_image(&self, image: &ImageRef<'_>) -> Result<String, ProviderError> {
        require_decodable(image.bytes)?;
        let out = self.call("describe_image", encode_image(image))?;
        Self::string(out)
    }
}

impl Judge for RemoteProvider {
    fn model_name(&self) -> &str {
        &self.config.model_name
    }

    fn decompose_claims(&self, text: &str) -> Result<Vec<String>, ProviderError> {
        require_text(text)?;
        let out = self.call(
            "decompose",
            json!({ "text": text, "temperature": self.config.temperature }),
        )?;
        serde_json::from_value(out).map_err(|e| ProviderError::MalformedResponse(e.to_string()))
    }

    fn entails(&self, claim: &str, premise: &str) -> Result<bool, ProviderError> {
        let out = self.call(
            "entails",
            json!({
                "claim": claim,
                "premise": premise,
                "temperature": self.config.temperature,
            }),
        )?;
        out.as_bool()
            .ok_or_else(|| ProviderError::MalformedResponse(format!("expected a bool, got {out}")))
    }
}

impl SimilarityScorer for RemoteProvider {
    fn model_name(&self) -> &str {
        &self.config.model_name
    }

    fn similarity_score(&self, answer: &str, reference: &str) -> Result<f64, ProviderError> {
        require_text(answer)?;
        require_text(reference)?;
        let out = self.call("similarity", json!({ "answer": answer, "reference": reference }))?;
        let score = out
            .as_f64()
            .ok_or_else(|| ProviderError::MalformedResponse(format!("expected a number, got {out}")))?;
        if !score.is_finite() {
            return Err(ProviderError::NonFinite);
        }
        Ok(score.clamp(0.0, 1.0))
    }
}
