use std::time::{Duration, Instant};

use base64::Engine as _;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{ChatClient, ChatRequest, ChatResponse, LlmError, Usage};

/// Settings for an OpenAI-compatible `chat/completions` endpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HttpChatConfig {
    pub endpoint: String,
    /// Environment variable holding the bearer token. No auth header when unset.
    #[serde(default)]
    pub api_key_env: Option<String>,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
    #[serde(default = "default_retries")]
    pub max_retries: u32,
    #[serde(default = "default_backoff_ms")]
    pub backoff_ms: u64,
}

fn default_timeout_ms() -> u64 {
    120_000
}
fn default_retries() -> u32 {
    1
}
fn default_backoff_ms() -> u64 {
    500
}

impl HttpChatConfig {
    pub fn new(endpoint: impl Into<String>) -> Self {
        HttpChatConfig {
            endpoint: endpoint.into(),
            api_key_env: None,
            timeout_ms: default_timeout_ms(),
            max_retries: default_retries(),
            backoff_ms: default_backoff_ms(),
        }
    }
}

pub struct HttpChatClient {
    http: reqwest::blocking::Client,
    config: HttpChatConfig,
    api_key: Option<String>,
}

impl std::fmt::Debug for HttpChatClient {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HttpChatClient").field("endpoint", &self.config.endpoint).finish()
    }
}

impl HttpChatClient {
    pub fn new(config: HttpChatConfig) -> Result<Self, LlmError> {
        let api_key = match &config.api_key_env {
            Some(var) => Some(std::env::var(var).map_err(|_| {
                LlmError::Config(format!("credential variable {var} is not set"))
            })?),
            None => None,
        };
        let http = reqwest::blocking::Client::builder()
            .timeout(Duration::from_millis(config.timeout_ms))
            .build()
            .map_err(|e| LlmError::Config(e.to_string()))?;
        Ok(HttpChatClient { http, config, api_key })
    }

    fn body(&self, req: &ChatRequest) -> Result<Value, LlmError> {
        let mut user_content = vec![json!({ "type": "text", "text": req.user_text })];
        if let Some(image) = &req.image {
            let url = if image.is_remote() && image.bytes.is_none() {
                image.location.clone()
            } else {
                let bytes = image.load_bytes().map_err(|e| {
                    LlmError::InvalidRequest(format!("cannot read image {}: {e}", image.location))
                })?;
                format!(
                    "data:{};base64,{}",
                    image.media_type,
                    base64::engine::general_purpose::STANDARD.encode(bytes)
                )
            };
            user_content.push(json!({ "type": "image_url", "image_url": { "url": url } }));
        }
        let mut messages = Vec::new();
        if !req.system_text.is_empty() {
            messages.push(json!({ "role": "system", "content": req.system_text }));
        }
        messages.push(json!({ "role": "user", "content": user_content }));
        Ok(json!({
            "model": req.model_id,
            "temperature": req.decoding.temperature,
            "max_tokens": req.decoding.max_tokens,
            "messages": messages,
        }))
    }

    fn attempt(&self, body: &Value) -> Result<ChatResponse, LlmError> {
        let started = Instant::now();
        let mut call = self.http.post(&self.config.endpoint).json(body);
        if let Some(key) = &self.api_key {
            call = call.bearer_auth(key);
        }
        let resp = call.send().map_err(|e| {
            if e.is_timeout() {
                LlmError::Timeout(e.to_string())
            } else {
                LlmError::Transport(e.to_string())
            }
        })?;
        let status = resp.status();
        let text = resp.text().map_err(|e| LlmError::Transport(e.to_string()))?;
        if status.as_u16() == 429 || status.is_server_error() {
            return Err(LlmError::Unavailable { status: status.as_u16(), body: text });
        }
        if !status.is_success() {
            return Err(LlmError::Rejected { status: status.as_u16(), body: text });
        }
        parse_completion(&text, started.elapsed().as_millis() as u64)
    }
}

fn parse_completion(text: &str, latency_ms: u64) -> Result<ChatResponse, LlmError> {
    let v: Value = serde_json::from_str(text).map_err(|e| LlmError::BadResponse(e.to_string()))?;
    let content = &v["choices"][0]["message"]["content"];
    let text = match content {
        Value::String(s) => s.clone(),
        // Some providers return content parts.
        Value::Array(parts) => parts
            .iter()
            .filter_map(|p| p["text"].as_str())
            .collect::<Vec<_>>()
            .join(""),
        Value::Null => String::new(),
        other => return Err(LlmError::BadResponse(format!("unexpected content {other}"))),
    };
    let usage = Usage {
        input_tokens: v["usage"]["prompt_tokens"].as_u64().unwrap_or(0),
        output_tokens: v["usage"]["completion_tokens"].as_u64().unwrap_or(0),
    };
    Ok(ChatResponse { text, usage, latency_ms })
}

impl ChatClient for HttpChatClient {
    fn complete(&self, req: &ChatRequest) -> Result<ChatResponse, LlmError> {
        req.validate()?;
        let body = self.body(req)?;
        let mut attempt = 0;
        loop {
            match self.attempt(&body) {
                Err(e) if e.is_retryable() && attempt < self.config.max_retries => {
                    let delay = self.config.backoff_ms.saturating_mul(1 << attempt.min(16));
                    log::warn!("chat request failed ({e}); retrying in {delay} ms");
                    std::thread::sleep(Duration::from_millis(delay));
                    attempt += 1;
                }
                other => return other,
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_string_and_part_content() {
        let r = parse_completion(
            r#"{"choices":[{"message":{"content":"hi"}}],"usage":{"prompt_tokens":3,"completion_tokens":1}}"#,
            5,
        )
        .unwrap();
        assert_eq!(r.text, "hi");
        assert_eq!(r.usage, Usage { input_tokens: 3, output_tokens: 1 });
        let r = parse_completion(
            r#"{"choices":[{"message":{"content":[{"type":"text","text":"a"},{"type":"text","text":"b"}]}}]}"#,
            0,
        )
        .unwrap();
        assert_eq!(r.text, "ab");
        assert!(matches!(parse_completion("nope", 0), Err(LlmError::BadResponse(_))));
    }

    #[test]
    fn missing_credential_is_a_config_error() {
        let mut cfg = HttpChatConfig::new("http://127.0.0.1:9/v1/chat/completions");
        cfg.api_key_env = Some("COMPLIANCE_AGENT_TEST_UNSET_VAR".into());
        assert!(matches!(HttpChatClient::new(cfg), Err(LlmError::Config(_))));
    }

    #[test]
    fn image_is_sent_as_data_url() {
        let client = HttpChatClient::new(HttpChatConfig::new("http://127.0.0.1:9")).unwrap();
        let mut img = crate::image::ImageRef::new("i", "i.png");
        img.bytes = Some(vec![0xff]);
        let body = client.body(&ChatRequest::new("m", "s", "u").with_image(Some(img))).unwrap();
        assert_eq!(body["messages"][1]["content"][1]["image_url"]["url"], "data:image/png;base64,/w==");
        assert_eq!(body["temperature"], 0.0);
    }
}
