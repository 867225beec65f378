//! Chat-completions client over blocking HTTP.

use super::{CompletionRequest, Provider, ProviderError, RawCompletion, TokenUsage};
use serde_json::{json, Value};
use std::time::{Duration, Instant};

pub struct HttpProvider {
    name: String,
    model: String,
    endpoint: String,
    credential_env: String,
    agent: ureq::Agent,
}

impl HttpProvider {
    pub fn new(name: String, model: String, endpoint: String, credential_env: String, timeout: Duration) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        Self {
            name,
            model,
            endpoint,
            credential_env,
            agent,
        }
    }

    fn credential(&self) -> Result<String, ProviderError> {
        match std::env::var(&self.credential_env) {
            Ok(v) if !v.trim().is_empty() => Ok(v),
            _ => Err(ProviderError::Auth(format!(
                "environment variable {} is not set",
                self.credential_env
            ))),
        }
    }
}

/// Maps an HTTP status to the failure class the gateway retries on.
pub(crate) fn classify_status(status: u16, body: &str) -> Option<ProviderError> {
    let snippet: String = body.chars().take(200).collect();
    match status {
        200..=299 => None,
        401 | 403 => Some(ProviderError::Auth(format!("HTTP {status}: {snippet}"))),
        408 | 429 | 500..=599 => Some(ProviderError::Transient(format!("HTTP {status}: {snippet}"))),
        _ => Some(ProviderError::Fatal(format!("HTTP {status}: {snippet}"))),
    }
}

pub(crate) fn extract_completion(body: &Value) -> Result<(String, TokenUsage), ProviderError> {
    let text = body
        .pointer("/choices/0/message/content")
        .and_then(Value::as_str)
        .ok_or_else(|| ProviderError::Fatal("response has no choices[0].message.content".into()))?;
    let usage = TokenUsage {
        prompt_tokens: body.pointer("/usage/prompt_tokens").and_then(Value::as_u64).unwrap_or(0),
        completion_tokens: body.pointer("/usage/completion_tokens").and_then(Value::as_u64).unwrap_or(0),
    };
    Ok((text.to_string(), usage))
}

impl Provider for HttpProvider {
    fn name(&self) -> &str {
        &self.name
    }

    fn model(&self) -> &str {
        &self.model
    }

    fn send(&self, request: &CompletionRequest) -> Result<RawCompletion, ProviderError> {
        let key = self.credential()?;
        let payload = json!({
            "model": self.model,
            "messages": [{"role": "user", "content": request.prompt}],
            "temperature": request.temperature,
            "max_tokens": request.max_output_tokens,
        });
        let started = Instant::now();
        let mut resp = self
            .agent
            .post(&self.endpoint)
            .header("Authorization", &format!("Bearer {key}"))
            .send_json(&payload)
            .map_err(|e| ProviderError::Transient(e.to_string()))?;
        let status = resp.status().as_u16();
        let body = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| ProviderError::Transient(e.to_string()))?;
        if let Some(err) = classify_status(status, &body) {
            return Err(err);
        }
        let value: Value =
            serde_json::from_str(&body).map_err(|e| ProviderError::Fatal(format!("malformed response body: {e}")))?;
        let (text, usage) = extract_completion(&value)?;
        Ok(RawCompletion {
            text,
            usage,
            latency_ms: started.elapsed().as_millis() as u64,
            status: status.to_string(),
        })
    }
}
