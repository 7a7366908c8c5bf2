//! Engine configuration file.
//!
//! Relative paths are resolved against the directory holding the config file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::llm::{Decoding, HttpChatConfig};
use crate::planner::RunConfig;
use crate::tools::RemoteToolConfig;
use crate::trace::Pipeline;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid config {path}: {message}")]
    Malformed { path: String, message: String },
    #[error("config references missing {what} {path}")]
    MissingFile { what: &'static str, path: String },
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Scripted model replies and fixture tool outputs. No network access.
    Replay,
    /// Real providers and remote tools.
    Live,
}

impl std::str::FromStr for Mode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "replay" => Ok(Mode::Replay),
            "live" => Ok(Mode::Live),
            other => Err(format!("unknown mode {other:?} (expected live or replay)")),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScriptPaths {
    pub agentic: Option<PathBuf>,
    pub routing: Option<PathBuf>,
    pub zero_shot: Option<PathBuf>,
}

impl ScriptPaths {
    pub fn get(&self, p: Pipeline) -> Option<&PathBuf> {
        match p {
            Pipeline::Agentic => self.agentic.as_ref(),
            Pipeline::Routing => self.routing.as_ref(),
            Pipeline::ZeroShot => self.zero_shot.as_ref(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSettings {
    pub max_steps: usize,
    pub repeat_call_limit: usize,
    pub fused_mode: bool,
    pub workers: usize,
    pub evidence_char_budget: usize,
    pub attach_image_to_planner: bool,
    pub temperature: f64,
    pub max_tokens: u32,
}

impl Default for RunSettings {
    fn default() -> Self {
        let r = RunConfig::default();
        RunSettings {
            max_steps: r.max_steps,
            repeat_call_limit: r.repeat_call_limit,
            fused_mode: r.fused_mode,
            workers: 4,
            evidence_char_budget: r.evidence_char_budget,
            attach_image_to_planner: r.attach_image_to_planner,
            temperature: r.decoding.temperature,
            max_tokens: r.decoding.max_tokens,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProviderSettings {
    pub endpoint: String,
    #[serde(default)]
    pub api_key_env: Option<String>,
    pub planner_model: String,
    pub verifier_model: String,
    #[serde(default = "default_timeout")]
    pub timeout_ms: u64,
    #[serde(default = "default_retries")]
    pub max_retries: u32,
}

fn default_timeout() -> u64 {
    120_000
}
fn default_retries() -> u32 {
    1
}

impl ProviderSettings {
    pub fn http_config(&self) -> HttpChatConfig {
        HttpChatConfig {
            timeout_ms: self.timeout_ms,
            max_retries: self.max_retries,
            api_key_env: self.api_key_env.clone(),
            ..HttpChatConfig::new(&self.endpoint)
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AblationSettings {
    /// Tool names or category names to disable.
    #[serde(default)]
    pub disabled: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EngineConfig {
    pub policy: PathBuf,
    #[serde(default)]
    pub manifest: Option<PathBuf>,
    #[serde(default)]
    pub fixtures: Option<PathBuf>,
    #[serde(default)]
    pub cluster_map: Option<PathBuf>,
    #[serde(default)]
    pub scripts: ScriptPaths,
    #[serde(default)]
    pub run: RunSettings,
    #[serde(default)]
    pub provider: Option<ProviderSettings>,
    #[serde(default)]
    pub remote_tools: Vec<RemoteToolConfig>,
    #[serde(default)]
    pub ablation: AblationSettings,
}

fn resolve(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

impl EngineConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let p = path.display().to_string();
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: p.clone(), source })?;
        let mut cfg = Self::from_toml_str(&text).map_err(|e| match e {
            ConfigError::Malformed { message, .. } => ConfigError::Malformed { path: p.clone(), message },
            other => other,
        })?;
        cfg.resolve_paths(path.parent().unwrap_or(Path::new(".")));
        Ok(cfg)
    }

    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Malformed { path: "<string>".into(), message: e.to_string() })
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        resolve(base, &mut self.policy);
        for p in [
            &mut self.manifest,
            &mut self.fixtures,
            &mut self.cluster_map,
            &mut self.scripts.agentic,
            &mut self.scripts.routing,
            &mut self.scripts.zero_shot,
        ]
        .into_iter()
        .flatten()
        {
            resolve(base, p);
        }
    }

    pub fn run_config(&self) -> RunConfig {
        let (planner, verifier) = match &self.provider {
            Some(p) => (p.planner_model.clone(), p.verifier_model.clone()),
            None => {
                let d = RunConfig::default();
                (d.planner_model_id, d.verifier_model_id)
            }
        };
        RunConfig {
            max_steps: self.run.max_steps,
            repeat_call_limit: self.run.repeat_call_limit,
            planner_model_id: planner,
            verifier_model_id: verifier,
            fused_mode: self.run.fused_mode,
            evidence_char_budget: self.run.evidence_char_budget,
            attach_image_to_planner: self.run.attach_image_to_planner,
            decoding: Decoding { temperature: self.run.temperature, max_tokens: self.run.max_tokens },
        }
    }

    /// Checks that the files needed by `mode` and `pipeline` exist.
    pub fn validate(&self, mode: Mode, pipeline: Pipeline) -> Result<(), ConfigError> {
        let must_exist = |what: &'static str, p: &Path| {
            if p.exists() {
                Ok(())
            } else {
                Err(ConfigError::MissingFile { what, path: p.display().to_string() })
            }
        };
        must_exist("policy file", &self.policy)?;
        if let Some(m) = &self.cluster_map {
            must_exist("cluster map", m)?;
        }
        self.run_config().validate().map_err(ConfigError::Invalid)?;
        if self.run.workers == 0 {
            return Err(ConfigError::Invalid("run.workers must be at least 1".into()));
        }
        match mode {
            Mode::Replay => {
                let fixtures = self
                    .fixtures
                    .as_ref()
                    .ok_or_else(|| ConfigError::Invalid("replay mode needs a fixtures directory".into()))?;
                must_exist("fixture store", fixtures)?;
                let script = self.scripts.get(pipeline).ok_or_else(|| {
                    ConfigError::Invalid(format!("replay mode needs scripts.{pipeline}"))
                })?;
                must_exist("script", script)?;
            }
            Mode::Live => {
                let p = self
                    .provider
                    .as_ref()
                    .ok_or_else(|| ConfigError::Invalid("live mode needs a [provider] section".into()))?;
                if p.endpoint.trim().is_empty() {
                    return Err(ConfigError::Invalid("provider.endpoint is empty".into()));
                }
                if p.planner_model.trim().is_empty() || p.verifier_model.trim().is_empty() {
                    return Err(ConfigError::Invalid("provider model ids must be non-empty in live mode".into()));
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = r#"
policy = "policies/p.toml"
fixtures = "fx"

[scripts]
agentic = "scripts/a.jsonl"

[run]
max_steps = 5
workers = 2

[provider]
endpoint = "http://localhost:1/v1/chat/completions"
planner_model = "planner-x"
verifier_model = "verifier-y"

[[remote_tools]]
name = "face_detection"
endpoint = "http://localhost:2/face"

[ablation]
disabled = ["safe_clip"]
"#;

    #[test]
    fn parses_and_resolves() {
        let mut c = EngineConfig::from_toml_str(SAMPLE).unwrap();
        c.resolve_paths(Path::new("/base"));
        assert_eq!(c.policy, PathBuf::from("/base/policies/p.toml"));
        assert_eq!(c.scripts.agentic, Some(PathBuf::from("/base/scripts/a.jsonl")));
        assert_eq!(c.scripts.routing, None);
        let r = c.run_config();
        assert_eq!((r.max_steps, r.repeat_call_limit), (5, 2));
        assert_eq!(r.planner_model_id, "planner-x");
        assert_eq!(c.remote_tools[0].timeout_ms, 30_000);
        assert_eq!(c.ablation.disabled, vec!["safe_clip".to_string()]);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(EngineConfig::from_toml_str("policy = \"p\"\nbogus = 1\n").is_err());
    }

    #[test]
    fn validation_names_missing_files() {
        let dir = tempfile::tempdir().unwrap();
        let mut c = EngineConfig::from_toml_str(SAMPLE).unwrap();
        c.resolve_paths(dir.path());
        match c.validate(Mode::Replay, Pipeline::Agentic) {
            Err(ConfigError::MissingFile { what, path }) => {
                assert_eq!(what, "policy file");
                assert!(path.ends_with("p.toml"));
            }
            other => panic!("{other:?}"),
        }
        std::fs::create_dir_all(dir.path().join("policies")).unwrap();
        std::fs::write(dir.path().join("policies/p.toml"), "").unwrap();
        assert!(matches!(c.validate(Mode::Live, Pipeline::Agentic), Ok(())));
        assert!(matches!(c.validate(Mode::Replay, Pipeline::Agentic), Err(ConfigError::MissingFile { .. })));
        assert!(matches!(c.validate(Mode::Replay, Pipeline::Routing), Err(ConfigError::MissingFile { .. }) | Err(ConfigError::Invalid(_))));
    }
}
