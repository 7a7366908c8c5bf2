//! Consistency checks for a replay bundle.
//!
//! Layout: `manifest.jsonl`, `fixtures/<tool>/<image>.json`,
//! `scripts/<pipeline>.jsonl` and `golden/`.

use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;

use crate::eval::load_manifest;
use crate::llm::ScriptedClient;
use crate::planner::called_tool;
use crate::tools::{FixtureInvoker, BUNDLED_TOOL_NAMES};

pub const SCRIPT_NAMES: [&str; 3] = ["agentic", "routing", "zero_shot"];

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub enum Finding {
    MissingManifest,
    InvalidManifest(String),
    MissingImage { image: String, path: String },
    MissingFixture { tool: String, image: String },
    InvalidFixture { path: String, message: String },
    /// A fixture directory or a script `CALL` names a tool that does not exist.
    UnknownTool { tool: String, location: String },
    /// A fixture file or script scope names an image absent from the manifest.
    UnknownImage { image: String, location: String },
    MissingScript(String),
    InvalidScript { script: String, message: String },
}

impl fmt::Display for Finding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Finding::MissingManifest => write!(f, "manifest.jsonl is missing"),
            Finding::InvalidManifest(m) => write!(f, "manifest is invalid: {m}"),
            Finding::MissingImage { image, path } => write!(f, "image file for {image} is missing: {path}"),
            Finding::MissingFixture { tool, image } => write!(f, "missing fixture for tool {tool} on image {image}"),
            Finding::InvalidFixture { path, message } => write!(f, "invalid fixture {path}: {message}"),
            Finding::UnknownTool { tool, location } => write!(f, "unknown tool {tool} referenced in {location}"),
            Finding::UnknownImage { image, location } => write!(f, "unknown image {image} referenced in {location}"),
            Finding::MissingScript(s) => write!(f, "script {s} is missing"),
            Finding::InvalidScript { script, message } => write!(f, "script {script} is invalid: {message}"),
        }
    }
}

/// Cross-checks manifest ids, fixture files and script references. An empty
/// result means the bundle is consistent.
pub fn validate_bundle(root: &Path) -> Vec<Finding> {
    let mut findings = BTreeSet::new();
    let known_tools: BTreeSet<&str> = BUNDLED_TOOL_NAMES.iter().copied().collect();

    let manifest = root.join("manifest.jsonl");
    let mut ids = BTreeSet::new();
    if !manifest.is_file() {
        findings.insert(Finding::MissingManifest);
    } else {
        match load_manifest(&manifest) {
            Ok(samples) => {
                for s in samples {
                    if !s.image.is_remote() && !Path::new(&s.image.location).is_file() {
                        findings.insert(Finding::MissingImage {
                            image: s.id.clone(),
                            path: s.image.location.clone(),
                        });
                    }
                    ids.insert(s.id);
                }
            }
            Err(e) => {
                findings.insert(Finding::InvalidManifest(e.to_string()));
            }
        }
    }

    let fixtures = root.join("fixtures");
    for tool in BUNDLED_TOOL_NAMES {
        for id in &ids {
            let path = fixtures.join(tool).join(format!("{id}.json"));
            if !path.is_file() {
                findings.insert(Finding::MissingFixture { tool: tool.to_string(), image: id.clone() });
            } else if let Err(e) = FixtureInvoker::read(&path, tool) {
                if !matches!(e, crate::tools::ToolError::Invocation { .. }) {
                    findings.insert(Finding::InvalidFixture { path: path.display().to_string(), message: e.to_string() });
                }
            }
        }
    }
    if let Ok(dirs) = std::fs::read_dir(&fixtures) {
        for dir in dirs.flatten().filter(|d| d.path().is_dir()) {
            let name = dir.file_name().to_string_lossy().into_owned();
            let location = dir.path().display().to_string();
            if !known_tools.contains(name.as_str()) {
                findings.insert(Finding::UnknownTool { tool: name, location });
                continue;
            }
            for file in std::fs::read_dir(dir.path()).into_iter().flatten().flatten() {
                let path = file.path();
                if path.extension().is_some_and(|e| e == "json") {
                    let stem = path.file_stem().unwrap_or_default().to_string_lossy().into_owned();
                    if !ids.contains(&stem) {
                        findings.insert(Finding::UnknownImage { image: stem, location: path.display().to_string() });
                    }
                }
            }
        }
    }

    for name in SCRIPT_NAMES {
        let path = root.join("scripts").join(format!("{name}.jsonl"));
        let label = format!("scripts/{name}.jsonl");
        if !path.is_file() {
            findings.insert(Finding::MissingScript(label));
            continue;
        }
        let client = match ScriptedClient::load(&path) {
            Ok(c) => c,
            Err(e) => {
                findings.insert(Finding::InvalidScript { script: label, message: e.to_string() });
                continue;
            }
        };
        for scope in client.scopes() {
            if !ids.contains(scope) {
                findings.insert(Finding::UnknownImage { image: scope.to_string(), location: label.clone() });
            }
        }
        for (scope, text) in client.response_texts() {
            if let Some(tool) = called_tool(text) {
                if !known_tools.contains(tool) {
                    let location = match scope {
                        Some(s) => format!("{label} ({s})"),
                        None => label.clone(),
                    };
                    findings.insert(Finding::UnknownTool { tool: tool.to_string(), location });
                }
            }
        }
    }
    findings.into_iter().collect()
}
