use std::collections::HashMap;
use std::time::Duration;

use base64::Engine as _;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{ImageRef, ToolArgs, ToolError, ToolInvoker, ToolOutput};

/// Endpoint settings for one remotely hosted tool.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemoteToolConfig {
    pub name: String,
    pub endpoint: String,
    #[serde(default)]
    pub auth_env: Option<String>,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
}

fn default_timeout_ms() -> u64 {
    30_000
}

/// Calls remote tools over a single JSON contract:
///
/// `POST {"tool", "image": {"id", "media_type", "location", "data_base64"?}, "args"}`
/// answered by a serialized [`ToolOutput`].
pub struct HttpToolInvoker {
    http: reqwest::blocking::Client,
    tools: HashMap<String, (RemoteToolConfig, Option<String>)>,
}

impl std::fmt::Debug for HttpToolInvoker {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HttpToolInvoker").field("tools", &self.tools.keys().collect::<Vec<_>>()).finish()
    }
}

impl HttpToolInvoker {
    pub fn new(configs: Vec<RemoteToolConfig>) -> Result<Self, ToolError> {
        let http = reqwest::blocking::Client::builder()
            .build()
            .map_err(|e| ToolError::Invocation { tool: "http".into(), message: e.to_string() })?;
        let mut tools = HashMap::new();
        for cfg in configs {
            let token = match &cfg.auth_env {
                Some(var) => Some(std::env::var(var).map_err(|_| ToolError::Invocation {
                    tool: cfg.name.clone(),
                    message: format!("credential variable {var} is not set"),
                })?),
                None => None,
            };
            if tools.insert(cfg.name.clone(), (cfg.clone(), token)).is_some() {
                return Err(ToolError::Duplicate(cfg.name));
            }
        }
        Ok(HttpToolInvoker { http, tools })
    }

    pub fn tool_names(&self) -> impl Iterator<Item = &str> {
        self.tools.keys().map(String::as_str)
    }
}

impl ToolInvoker for HttpToolInvoker {
    fn invoke(&self, tool: &str, image: &ImageRef, args: &ToolArgs) -> Result<ToolOutput, ToolError> {
        let (cfg, token) = self.tools.get(tool).ok_or_else(|| ToolError::UnknownTool(tool.to_string()))?;
        let fail = |message: String| ToolError::Invocation { tool: tool.to_string(), message };
        let mut image_json = json!({
            "id": image.id,
            "media_type": image.media_type,
            "location": image.location,
        });
        if image.bytes.is_some() || !image.is_remote() {
            let bytes = image.load_bytes().map_err(|e| fail(format!("cannot read image: {e}")))?;
            image_json["data_base64"] = base64::engine::general_purpose::STANDARD.encode(bytes).into();
        }
        let mut call = self
            .http
            .post(&cfg.endpoint)
            .timeout(Duration::from_millis(cfg.timeout_ms))
            .json(&json!({ "tool": tool, "image": image_json, "args": args }));
        if let Some(token) = token {
            call = call.bearer_auth(token);
        }
        let resp = call.send().map_err(|e| fail(e.to_string()))?;
        let status = resp.status();
        let body = resp.text().map_err(|e| fail(e.to_string()))?;
        if !status.is_success() {
            return Err(fail(format!("HTTP {}: {body}", status.as_u16())));
        }
        let mut output: ToolOutput = serde_json::from_str(&body).map_err(|e| ToolError::Parse {
            path: cfg.endpoint.clone(),
            message: e.to_string(),
        })?;
        if output.tool_name.is_empty() {
            output.tool_name = tool.to_string();
        }
        output.normalize_scores();
        Ok(output)
    }
}
