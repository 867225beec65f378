//! The single boundary to language models.
//!
//! Everything that talks to a model goes through [`Gateway::complete`], which
//! applies the retry policy and persists the request/response transcript to
//! the run store before any caller gets to parse the text. Providers are
//! pluggable: [`HttpProvider`] speaks the common chat-completions wire format
//! and [`ScriptedMock`] replays a scenario file for offline, reproducible runs.

mod http;
mod mock;
mod parse;
mod template;

pub use http::HttpProvider;
pub use mock::{FailureKind, Scenario, ScenarioEntry, ScriptedMock};
pub use parse::{
    extract_json, parse_annotation_response, parse_taxonomy_response, AnnotationParse, ParseFailure, ParseMode,
};
pub use template::{
    constraints_block, render_prompt, Criteria, MultilevelLimits, PromptTemplate, CONSTRAINTS_BLOCK,
    CRITERIA_BLOCK, DATA_BLOCK, NEGATIVE_EXAMPLES_FLAG, TAXONOMY_BLOCK,
};

use crate::store::{ArtifactKind, RunStore, StoreError};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Purpose {
    GenerateTaxonomy,
    GenerateMultilevel,
    Annotate,
    ExpandClarity,
}

impl fmt::Display for Purpose {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Purpose::GenerateTaxonomy => "generate_taxonomy",
            Purpose::GenerateMultilevel => "generate_multilevel",
            Purpose::Annotate => "annotate",
            Purpose::ExpandClarity => "expand_clarity",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub request_id: String,
    pub purpose: Purpose,
    /// Scenario lookup key for scripted providers (usually a record id).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub key: Option<String>,
    pub provider: String,
    pub model: String,
    pub prompt: String,
    pub temperature: f64,
    pub max_output_tokens: u32,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenUsage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

/// What a provider returns for one attempt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawCompletion {
    pub text: String,
    pub usage: TokenUsage,
    pub latency_ms: u64,
    pub status: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionResponse {
    pub request_id: String,
    pub text: String,
    pub usage: TokenUsage,
    pub latency_ms: u64,
    pub status: String,
    pub attempts: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize, Deserialize)]
#[serde(tag = "kind", content = "detail", rename_all = "snake_case")]
pub enum ProviderError {
    #[error("transient provider failure: {0}")]
    Transient(String),
    #[error("authentication failed: {0}")]
    Auth(String),
    #[error("mock scenario exhausted for {0}")]
    ScenarioExhausted(String),
    #[error("provider failure: {0}")]
    Fatal(String),
}

#[derive(Debug, Error)]
pub enum LlmError {
    #[error("template placeholder {{{{{0}}}}} is not bound")]
    UnboundPlaceholder(String),
    #[error("template {0} rendered to an empty prompt")]
    EmptyPrompt(String),
    #[error("request {request_id} failed after {attempts} attempt(s): {source}")]
    Provider {
        request_id: String,
        attempts: u32,
        #[source]
        source: ProviderError,
    },
    #[error("invalid provider config: {0}")]
    Config(String),
    #[error(transparent)]
    Store(#[from] StoreError),
}

impl LlmError {
    pub fn is_auth(&self) -> bool {
        matches!(self, LlmError::Provider { source: ProviderError::Auth(_), .. })
    }
}

pub trait Provider: Send + Sync {
    fn name(&self) -> &str;
    fn model(&self) -> &str;
    fn send(&self, request: &CompletionRequest) -> Result<RawCompletion, ProviderError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    /// Delay before the second attempt; doubles for each later attempt.
    pub backoff_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 3,
            backoff_ms: 500,
        }
    }
}

/// Sampling temperatures by phase. Annotation defaults to 0 for repeatability;
/// generation is warmer so bootstrap runs can differ.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Temperatures {
    pub generate: f64,
    pub annotate: f64,
}

impl Default for Temperatures {
    fn default() -> Self {
        Self {
            generate: 0.7,
            annotate: 0.0,
        }
    }
}

impl Temperatures {
    pub fn for_purpose(&self, purpose: Purpose) -> f64 {
        match purpose {
            Purpose::Annotate => self.annotate,
            _ => self.generate,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProviderKind {
    HttpProvider {
        endpoint: String,
        /// Name of the environment variable holding the bearer token.
        credential_env: String,
        #[serde(default = "default_timeout_secs")]
        timeout_secs: u64,
    },
    ScriptedMock {
        scenario: PathBuf,
    },
}

fn default_timeout_secs() -> u64 {
    120
}

fn default_parallelism() -> usize {
    4
}

fn default_max_output_tokens() -> u32 {
    4096
}

/// Provider settings as loaded from a config file. Holds environment variable
/// names, never credential values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProviderConfig {
    pub id: String,
    pub model: String,
    #[serde(flatten)]
    pub kind: ProviderKind,
    #[serde(default)]
    pub retry: RetryPolicy,
    #[serde(default = "default_parallelism")]
    pub parallelism: usize,
    #[serde(default)]
    pub temperature: Temperatures,
    #[serde(default = "default_max_output_tokens")]
    pub max_output_tokens: u32,
}

impl ProviderConfig {
    pub fn mock(id: impl Into<String>, scenario: impl Into<PathBuf>) -> Self {
        Self {
            id: id.into(),
            model: "scripted".into(),
            kind: ProviderKind::ScriptedMock {
                scenario: scenario.into(),
            },
            retry: RetryPolicy::default(),
            parallelism: default_parallelism(),
            temperature: Temperatures::default(),
            max_output_tokens: default_max_output_tokens(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self, LlmError> {
        serde_json::from_str(text).map_err(|e| LlmError::Config(e.to_string()))
    }

    pub fn build_provider(&self) -> Result<Arc<dyn Provider>, LlmError> {
        Ok(match &self.kind {
            ProviderKind::HttpProvider {
                endpoint,
                credential_env,
                timeout_secs,
            } => Arc::new(HttpProvider::new(
                self.id.clone(),
                self.model.clone(),
                endpoint.clone(),
                credential_env.clone(),
                Duration::from_secs(*timeout_secs),
            )),
            ProviderKind::ScriptedMock { scenario } => {
                let scenario = Scenario::load(scenario).map_err(|e| LlmError::Config(e.to_string()))?;
                Arc::new(ScriptedMock::new(self.id.clone(), scenario))
            }
        })
    }

    pub fn gateway(&self, store: Option<Arc<RunStore>>) -> Result<Gateway, LlmError> {
        let mut gw = Gateway::new(self.build_provider()?)
            .with_retry(self.retry)
            .with_parallelism(self.parallelism)
            .with_temperatures(self.temperature);
        gw.max_output_tokens = self.max_output_tokens;
        if let Some(store) = store {
            gw = gw.with_store(store);
        }
        Ok(gw)
    }
}

/// One persisted exchange. Stored under `transcript/{request_id}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transcript {
    pub request: CompletionRequest,
    pub response: Option<CompletionResponse>,
    pub error: Option<ProviderError>,
    pub attempts: u32,
}

pub fn transcript_key(request_id: &str) -> String {
    format!("transcript/{request_id}")
}

#[derive(Clone)]
pub struct Gateway {
    provider: Arc<dyn Provider>,
    retry: RetryPolicy,
    parallelism: usize,
    temperatures: Temperatures,
    pub max_output_tokens: u32,
    store: Option<Arc<RunStore>>,
}

impl fmt::Debug for Gateway {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Gateway")
            .field("provider", &self.provider.name())
            .field("model", &self.provider.model())
            .field("retry", &self.retry)
            .field("parallelism", &self.parallelism)
            .finish()
    }
}

impl Gateway {
    pub fn new(provider: Arc<dyn Provider>) -> Self {
        Self {
            provider,
            retry: RetryPolicy::default(),
            parallelism: default_parallelism(),
            temperatures: Temperatures::default(),
            max_output_tokens: default_max_output_tokens(),
            store: None,
        }
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn with_parallelism(mut self, parallelism: usize) -> Self {
        self.parallelism = parallelism.max(1);
        self
    }

    pub fn with_temperatures(mut self, t: Temperatures) -> Self {
        self.temperatures = t;
        self
    }

    pub fn with_store(mut self, store: Arc<RunStore>) -> Self {
        self.store = Some(store);
        self
    }

    pub fn provider_name(&self) -> &str {
        self.provider.name()
    }

    pub fn model(&self) -> &str {
        self.provider.model()
    }

    pub fn parallelism(&self) -> usize {
        self.parallelism
    }

    pub fn store(&self) -> Option<&Arc<RunStore>> {
        self.store.as_ref()
    }

    pub fn request(&self, request_id: impl Into<String>, purpose: Purpose, key: Option<&str>, prompt: String) -> CompletionRequest {
        CompletionRequest {
            request_id: request_id.into(),
            purpose,
            key: key.map(str::to_string),
            provider: self.provider.name().to_string(),
            model: self.provider.model().to_string(),
            prompt,
            temperature: self.temperatures.for_purpose(purpose),
            max_output_tokens: self.max_output_tokens,
        }
    }

    /// Sends `request`, retrying transient failures, and persists the
    /// transcript (successful or not) before returning.
    pub fn complete(&self, request: &CompletionRequest) -> Result<CompletionResponse, LlmError> {
        let max = self.retry.max_attempts.max(1);
        let mut attempt = 0;
        let outcome = loop {
            attempt += 1;
            match self.provider.send(request) {
                Ok(raw) => break Ok(raw),
                Err(ProviderError::Transient(msg)) if attempt < max => {
                    tracing::warn!(request = %request.request_id, attempt, "transient failure: {msg}");
                    let delay = self.retry.backoff_ms.saturating_mul(1 << (attempt - 1).min(16));
                    if delay > 0 {
                        std::thread::sleep(Duration::from_millis(delay));
                    }
                }
                Err(e) => break Err(e),
            }
        };
        let (response, error) = match outcome {
            Ok(raw) => (
                Some(CompletionResponse {
                    request_id: request.request_id.clone(),
                    text: raw.text,
                    usage: raw.usage,
                    latency_ms: raw.latency_ms,
                    status: raw.status,
                    attempts: attempt,
                }),
                None,
            ),
            Err(e) => (None, Some(e)),
        };
        let transcript = Transcript {
            request: request.clone(),
            response,
            error,
            attempts: attempt,
        };
        if let Some(store) = &self.store {
            store.put(ArtifactKind::Transcript, &transcript_key(&request.request_id), &transcript)?;
        }
        match (transcript.response, transcript.error) {
            (Some(r), _) => Ok(r),
            (None, Some(source)) => Err(LlmError::Provider {
                request_id: request.request_id.clone(),
                attempts: attempt,
                source,
            }),
            (None, None) => unreachable!("transcript has neither response nor error"),
        }
    }
}
