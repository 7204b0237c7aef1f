//! Chat-completion backends.

use std::collections::BTreeMap;
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::prompts::Message;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BackendConfig {
    /// Base URL; requests go to `{endpoint}/chat/completions`.
    pub endpoint: String,
    /// Backbone name to provider model name. Unlisted backbones are sent as-is.
    pub models: BTreeMap<String, String>,
    pub temperature: f64,
    pub max_tokens: u32,
    /// Environment variable holding the bearer token; empty disables auth.
    pub api_key_env: String,
    pub max_attempts: u32,
    pub backoff_ms: u64,
    pub max_backoff_ms: u64,
    pub timeout_secs: u64,
}

impl Default for BackendConfig {
    fn default() -> Self {
        BackendConfig {
            endpoint: "https://api.together.xyz/v1".into(),
            models: BTreeMap::new(),
            temperature: 0.2,
            max_tokens: 3000,
            api_key_env: "TOGETHER_API_KEY".into(),
            max_attempts: 5,
            backoff_ms: 500,
            max_backoff_ms: 30_000,
            timeout_secs: 120,
        }
    }
}

impl BackendConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature >= 0.0) {
            return Err(Error::Config("temperature must be >= 0".into()));
        }
        if self.max_tokens == 0 {
            return Err(Error::Config("max_tokens must be > 0".into()));
        }
        if self.max_attempts == 0 {
            return Err(Error::Config("max_attempts must be > 0".into()));
        }
        Ok(())
    }

    pub fn model_for(&self, backbone: &str) -> String {
        self.models
            .get(backbone)
            .cloned()
            .unwrap_or_else(|| backbone.to_string())
    }

    /// Delay before retry number `attempt` (1-based).
    pub fn backoff(&self, attempt: u32, retry_after: Option<Duration>) -> Duration {
        let exp = self
            .backoff_ms
            .saturating_mul(1u64 << (attempt - 1).min(20))
            .min(self.max_backoff_ms);
        let base = Duration::from_millis(exp);
        match retry_after {
            Some(r) => r.min(Duration::from_millis(self.max_backoff_ms)).max(base),
            None => base,
        }
    }
}

pub trait ChatBackend: Send + Sync {
    fn complete(&self, model: &str, messages: &[Message], temperature: f64) -> Result<String>;
}

/// OpenAI-style `POST /chat/completions` over HTTP.
pub struct HttpBackend {
    config: BackendConfig,
    client: reqwest::blocking::Client,
    api_key: Option<String>,
}

impl HttpBackend {
    pub fn new(config: BackendConfig) -> Result<Self> {
        config.validate()?;
        let api_key = if config.api_key_env.is_empty() {
            None
        } else {
            Some(std::env::var(&config.api_key_env).map_err(|_| {
                Error::Config(format!(
                    "API key variable {} is not set",
                    config.api_key_env
                ))
            })?)
        };
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs))
            .build()
            .map_err(|e| Error::Backend(e.to_string()))?;
        Ok(HttpBackend {
            config,
            client,
            api_key,
        })
    }

    pub fn config(&self) -> &BackendConfig {
        &self.config
    }

    fn url(&self) -> String {
        format!(
            "{}/chat/completions",
            self.config.endpoint.trim_end_matches('/')
        )
    }
}

fn retry_after(resp: &reqwest::blocking::Response) -> Option<Duration> {
    resp.headers()
        .get(reqwest::header::RETRY_AFTER)?
        .to_str()
        .ok()?
        .trim()
        .parse::<f64>()
        .ok()
        .filter(|s| s.is_finite() && *s >= 0.0)
        .map(Duration::from_secs_f64)
}

impl ChatBackend for HttpBackend {
    fn complete(&self, model: &str, messages: &[Message], temperature: f64) -> Result<String> {
        let body = json!({
            "model": model,
            "messages": messages,
            "temperature": temperature,
            "max_tokens": self.config.max_tokens,
        });
        let mut last_err = String::new();
        for attempt in 1..=self.config.max_attempts {
            let mut req = self.client.post(self.url()).json(&body);
            if let Some(key) = &self.api_key {
                req = req.bearer_auth(key);
            }
            let wait = match req.send() {
                Ok(resp) => {
                    let status = resp.status();
                    if status.is_success() {
                        let v: serde_json::Value = resp
                            .json()
                            .map_err(|e| Error::Backend(format!("bad response body: {e}")))?;
                        return v["choices"][0]["message"]["content"]
                            .as_str()
                            .map(str::to_string)
                            .ok_or_else(|| {
                                Error::Backend("response has no message content".into())
                            });
                    }
                    let ra = retry_after(&resp);
                    last_err = format!("HTTP {status}");
                    if status.as_u16() != 429 && !status.is_server_error() {
                        return Err(Error::Backend(last_err));
                    }
                    ra
                }
                Err(e) => {
                    last_err = e.to_string();
                    None
                }
            };
            if attempt < self.config.max_attempts {
                let d = self.config.backoff(attempt, wait);
                tracing::warn!(
                    attempt,
                    delay_ms = d.as_millis() as u64,
                    "{last_err}, retrying"
                );
                thread::sleep(d);
            }
        }
        Err(Error::Backend(format!(
            "giving up after {} attempts: {last_err}",
            self.config.max_attempts
        )))
    }
}
