use std::time::Duration;

use serde::Deserialize;
use serde_json::json;

use super::{Backend, GenRequest};
use crate::embed::excerpt;
use crate::error::{Error, Result};

/// Environment variable holding the bearer token for the HTTP backend.
pub const API_KEY_ENV: &str = "MRAG_API_KEY";

#[derive(Debug, Clone)]
pub struct HttpBackendConfig {
    /// Base URL; requests go to `<endpoint>/chat/completions`.
    pub endpoint: String,
    pub model: String,
    pub timeout: Duration,
    pub retries: u32,
    pub api_key: Option<String>,
}

impl HttpBackendConfig {
    pub fn new(endpoint: impl Into<String>, model: impl Into<String>) -> Self {
        Self {
            endpoint: endpoint.into(),
            model: model.into(),
            timeout: Duration::from_secs(60),
            retries: 2,
            api_key: std::env::var(API_KEY_ENV).ok().filter(|k| !k.is_empty()),
        }
    }
}

/// Chat-completions client. The prompt is sent as a single user message.
#[derive(Debug, Clone)]
pub struct HttpBackend {
    cfg: HttpBackendConfig,
    client: reqwest::blocking::Client,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    message: ChatMessage,
}

#[derive(Deserialize)]
struct ChatMessage {
    content: Option<String>,
}

impl HttpBackend {
    pub fn new(cfg: HttpBackendConfig) -> Result<Self> {
        let client = reqwest::blocking::Client::builder()
            .timeout(cfg.timeout)
            .build()
            .map_err(|e| Error::InvalidConfig(e.to_string()))?;
        Ok(Self { cfg, client })
    }

    fn url(&self) -> String {
        format!("{}/chat/completions", self.cfg.endpoint.trim_end_matches('/'))
    }

    pub fn request_body(&self, req: &GenRequest) -> serde_json::Value {
        json!({
            "model": self.cfg.model,
            "messages": [{ "role": "user", "content": req.prompt }],
            "temperature": req.temperature,
            "max_tokens": req.max_tokens,
            "seed": req.seed,
        })
    }

    fn try_complete(&self, req: &GenRequest) -> Result<String> {
        let mut builder = self.client.post(self.url()).json(&self.request_body(req));
        if let Some(key) = &self.cfg.api_key {
            builder = builder.bearer_auth(key);
        }
        let resp = builder.send().map_err(|e| {
            if e.is_timeout() {
                Error::Timeout(e.to_string())
            } else {
                Error::BackendUnavailable { status: 0, body: e.to_string() }
            }
        })?;
        let status = resp.status();
        let body = resp.text().map_err(|e| Error::BackendUnavailable { status: status.as_u16(), body: e.to_string() })?;
        if !status.is_success() {
            return Err(Error::BackendUnavailable { status: status.as_u16(), body: excerpt(&body) });
        }
        let parsed: ChatResponse = serde_json::from_str(&body)
            .map_err(|e| Error::BackendUnavailable { status: status.as_u16(), body: format!("{e}: {}", excerpt(&body)) })?;
        parsed
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .ok_or_else(|| Error::BackendUnavailable { status: status.as_u16(), body: "response has no choices[0].message.content".into() })
    }
}

impl Backend for HttpBackend {
    fn id(&self) -> String {
        format!("http:{}:{}", self.cfg.endpoint.trim_end_matches('/'), self.cfg.model)
    }

    fn complete(&self, req: &GenRequest) -> Result<String> {
        let mut attempt = 0;
        loop {
            match self.try_complete(req) {
                Ok(text) => return Ok(text),
                Err(e) if attempt < self.cfg.retries && retryable(&e) => {
                    attempt += 1;
                    log::warn!("generation attempt {attempt} failed: {e}; retrying");
                    std::thread::sleep(Duration::from_millis(200 * u64::from(attempt)));
                }
                Err(e) => return Err(e),
            }
        }
    }
}

fn retryable(e: &Error) -> bool {
    match e {
        Error::Timeout(_) => true,
        Error::BackendUnavailable { status, .. } => *status == 0 || *status == 429 || *status >= 500,
        _ => false,
    }
}
