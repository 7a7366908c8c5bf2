use std::path::{Path, PathBuf};

use serde_json::Value;

use super::{ImageRef, ToolArgs, ToolError, ToolInvoker, ToolOutput};

/// Serves stored tool outputs from `<root>/<tool>/<image_id>.json`.
///
/// A fixture whose top-level object holds only an `"error"` string replays a
/// failed invocation carrying that message.
#[derive(Debug, Clone)]
pub struct FixtureInvoker {
    root: PathBuf,
}

impl FixtureInvoker {
    pub fn new(root: impl Into<PathBuf>) -> Result<Self, ToolError> {
        let root = root.into();
        if !root.is_dir() {
            return Err(ToolError::Invocation {
                tool: "fixtures".into(),
                message: format!("fixture store {} does not exist", root.display()),
            });
        }
        Ok(FixtureInvoker { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path_for(&self, tool: &str, image_id: &str) -> PathBuf {
        self.root.join(tool).join(format!("{image_id}.json"))
    }

    /// Reads and parses one fixture file.
    pub fn read(path: &Path, tool: &str) -> Result<ToolOutput, ToolError> {
        let text = std::fs::read_to_string(path).map_err(|e| ToolError::Parse {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        let parse_err = |message: String| ToolError::Parse { path: path.display().to_string(), message };
        let value: Value = serde_json::from_str(&text).map_err(|e| parse_err(e.to_string()))?;
        if let Some(obj) = value.as_object() {
            if obj.len() == 1 {
                if let Some(msg) = obj.get("error").and_then(Value::as_str) {
                    return Err(ToolError::Invocation { tool: tool.to_string(), message: msg.to_string() });
                }
            }
        }
        let mut output: ToolOutput = serde_json::from_value(value).map_err(|e| parse_err(e.to_string()))?;
        if output.tool_name.is_empty() {
            output.tool_name = tool.to_string();
        }
        Ok(output)
    }
}

impl ToolInvoker for FixtureInvoker {
    fn invoke(&self, tool: &str, image: &ImageRef, _args: &ToolArgs) -> Result<ToolOutput, ToolError> {
        let path = self.path_for(tool, &image.id);
        if !path.is_file() {
            return Err(ToolError::FixtureMiss {
                tool: tool.to_string(),
                image: image.id.clone(),
                path: path.display().to_string(),
            });
        }
        FixtureInvoker::read(&path, tool)
    }
}
