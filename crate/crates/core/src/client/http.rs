use super::runner::RateLimiter;
use super::{ChannelError, ChannelFailure, ObserverChannel, Reply};
use crate::session::PromptBundle;
use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::Path;
use std::sync::{Arc, Mutex};
use std::time::Duration;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReasoningControl {
    Off,
    Minimum,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EndpointConfig {
    /// Full chat-completions URL.
    pub base_url: String,
    pub model_name: String,
    /// Name of the environment variable holding the API key, if any.
    pub api_key_env: Option<String>,
    pub temperature: f64,
    pub max_tokens: u32,
    pub timeout_s: f64,
    /// Retries after the first attempt.
    pub retry_budget: u32,
    pub reasoning_control: Option<ReasoningControl>,
    /// Backoff before retry `a` (0-based) is `backoff_base_ms · 2^a`, jittered ±50%.
    pub backoff_base_ms: u64,
}

impl Default for EndpointConfig {
    fn default() -> Self {
        EndpointConfig {
            base_url: "http://127.0.0.1:8000/v1/chat/completions".into(),
            model_name: String::new(),
            api_key_env: None,
            temperature: 0.7,
            max_tokens: 32,
            timeout_s: 60.0,
            retry_budget: 4,
            reasoning_control: None,
            backoff_base_ms: 1000,
        }
    }
}

impl EndpointConfig {
    pub fn request_body(&self, bundle: &PromptBundle) -> Value {
        let mut body = json!({
            "model": self.model_name,
            "messages": bundle.to_messages(),
            "temperature": self.temperature,
            "max_tokens": self.max_tokens,
        });
        if let Some(r) = self.reasoning_control {
            body["reasoning_effort"] = json!(match r {
                ReasoningControl::Off => "none",
                ReasoningControl::Minimum => "minimal",
            });
        }
        body
    }
}

/// Message text from a chat-completion reply; content may be a string or a
/// list of typed parts.
pub(crate) fn extract_content(reply: &Value) -> Result<String, ChannelError> {
    let content = reply
        .pointer("/choices/0/message/content")
        .ok_or_else(|| ChannelError::Malformed("missing choices[0].message.content".into()))?;
    match content {
        Value::String(s) => Ok(s.clone()),
        Value::Array(parts) => {
            Ok(parts.iter().filter_map(|p| p.get("text").and_then(Value::as_str)).collect::<Vec<_>>().join(""))
        }
        Value::Null => Ok(String::new()),
        other => Err(ChannelError::Malformed(format!("unexpected content {other}"))),
    }
}

pub struct HttpChannel {
    config: EndpointConfig,
    agent: ureq::Agent,
    api_key: Option<String>,
    limiter: Option<Arc<RateLimiter>>,
    exchange_log: Option<Mutex<File>>,
}

impl HttpChannel {
    /// Reads the API key from the configured environment variable.
    pub fn new(config: EndpointConfig) -> Result<Self, ChannelError> {
        let api_key = match &config.api_key_env {
            Some(var) => Some(
                std::env::var(var)
                    .map_err(|_| ChannelError::Config(format!("environment variable {var} is not set")))?,
            ),
            None => None,
        };
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs_f64(config.timeout_s.max(0.001))))
            .http_status_as_error(false)
            .build()
            .into();
        Ok(HttpChannel { config, agent, api_key, limiter: None, exchange_log: None })
    }

    pub fn with_limiter(mut self, limiter: Arc<RateLimiter>) -> Self {
        self.limiter = Some(limiter);
        self
    }

    /// Appends every request/response pair (without credentials) to `path`.
    pub fn with_exchange_log(mut self, path: &Path) -> std::io::Result<Self> {
        let f = OpenOptions::new().create(true).append(true).open(path)?;
        self.exchange_log = Some(Mutex::new(f));
        Ok(self)
    }

    pub fn config(&self) -> &EndpointConfig {
        &self.config
    }

    fn log_exchange(&self, request: &Value, status: Option<u16>, body: &str) {
        if let Some(log) = &self.exchange_log {
            let line = json!({"request": request, "status": status, "response": body});
            if let Ok(mut f) = log.lock() {
                let _ = writeln!(f, "{line}");
            }
        }
    }

    fn attempt(&self, body: &Value, payload: &str) -> Result<String, ChannelError> {
        if let Some(l) = &self.limiter {
            l.acquire();
        }
        let mut req = self.agent.post(&self.config.base_url).header("Content-Type", "application/json");
        if let Some(k) = &self.api_key {
            req = req.header("Authorization", format!("Bearer {k}"));
        }
        let mut resp = req.send(payload).map_err(map_transport)?;
        let status = resp.status().as_u16();
        let text = resp.body_mut().read_to_string().map_err(map_transport)?;
        self.log_exchange(body, Some(status), &text);
        match status {
            200..=299 => {}
            401 | 403 => return Err(ChannelError::Auth(status)),
            s => return Err(ChannelError::Status(s)),
        }
        let reply: Value = serde_json::from_str(&text).map_err(|e| ChannelError::Malformed(e.to_string()))?;
        extract_content(&reply)
    }
}

fn map_transport(e: ureq::Error) -> ChannelError {
    match e {
        ureq::Error::Timeout(_) => ChannelError::Timeout,
        ureq::Error::Io(io) if io.kind() == std::io::ErrorKind::TimedOut => ChannelError::Timeout,
        other => ChannelError::Transport(other.to_string()),
    }
}

impl ObserverChannel for HttpChannel {
    fn kind(&self) -> &'static str {
        "http"
    }

    fn ask(&self, bundle: &PromptBundle) -> Result<Reply, ChannelFailure> {
        let body = self.config.request_body(bundle);
        let payload = body.to_string();
        let mut attempts = 0u32;
        loop {
            attempts += 1;
            match self.attempt(&body, &payload) {
                Ok(text) => return Ok(Reply { text, attempts }),
                Err(error) => {
                    let retry = attempts - 1;
                    if !error.is_retryable() || retry >= self.config.retry_budget {
                        return Err(ChannelFailure { error, attempts });
                    }
                    let base = self.config.backoff_base_ms as f64 * 2f64.powi(retry as i32);
                    let jitter = rand::rng().random_range(0.5..1.5);
                    std::thread::sleep(Duration::from_secs_f64(base * jitter / 1000.0));
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn content_shapes() {
        let s = json!({"choices": [{"message": {"content": "0.4"}}]});
        assert_eq!(extract_content(&s).unwrap(), "0.4");
        let parts = json!({"choices": [{"message": {"content": [{"type": "text", "text": "0."}, {"type": "text", "text": "4"}]}}]});
        assert_eq!(extract_content(&parts).unwrap(), "0.4");
        assert!(matches!(extract_content(&json!({"error": "x"})), Err(ChannelError::Malformed(_))));
    }

    #[test]
    fn body_fields() {
        let cfg = EndpointConfig {
            model_name: "m".into(),
            reasoning_control: Some(ReasoningControl::Minimum),
            ..Default::default()
        };
        let bundle = PromptBundle {
            system_text: "sys".into(),
            history: vec![],
            current: crate::session::Payload { text: Some("x".into()), image_png: None, true_value: 0.0 },
            modality: crate::session::Modality::Text,
            trial_index: 0,
        };
        let b = cfg.request_body(&bundle);
        assert_eq!(b["temperature"], 0.7);
        assert_eq!(b["max_tokens"], 32);
        assert_eq!(b["reasoning_effort"], "minimal");
        assert_eq!(b["messages"][0]["content"], "sys");
    }

    #[test]
    fn missing_key_variable_is_a_config_error() {
        let cfg = EndpointConfig { api_key_env: Some("BAYESBENCH_TEST_UNSET_KEY_VAR".into()), ..Default::default() };
        assert!(matches!(HttpChannel::new(cfg), Err(ChannelError::Config(_))));
    }
}
