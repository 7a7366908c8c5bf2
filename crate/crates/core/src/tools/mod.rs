//! Tool registry and execution.
//!
//! Every tool is a [`ToolDescriptor`] (what the planner reads) paired with a
//! [`ToolInvoker`] (what actually runs). All tools return the same
//! [`ToolOutput`] schema.

mod bundled;
mod fixture;
mod http;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

pub use crate::image::ImageRef;
pub use bundled::{bundled_descriptors, BUNDLED_TOOL_NAMES};
pub use fixture::FixtureInvoker;
pub use http::{HttpToolInvoker, RemoteToolConfig};

pub type ToolArgs = Map<String, Value>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ToolCategory {
    Summarization,
    ContentDetection,
    SpecializedCompliance,
}

impl ToolCategory {
    pub const ALL: [ToolCategory; 3] = [
        ToolCategory::Summarization,
        ToolCategory::ContentDetection,
        ToolCategory::SpecializedCompliance,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ToolCategory::Summarization => "summarization",
            ToolCategory::ContentDetection => "content_detection",
            ToolCategory::SpecializedCompliance => "specialized_compliance",
        }
    }
}

impl fmt::Display for ToolCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ToolCategory {
    type Err = ToolError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm = normalize_name(s);
        let norm = norm.strip_suffix("_tools").unwrap_or(&norm);
        ToolCategory::ALL
            .into_iter()
            .find(|c| c.as_str() == norm)
            .ok_or_else(|| ToolError::UnknownTool(s.to_string()))
    }
}

/// Lowercases and maps spaces and dashes to underscores, so that
/// `"LlavaGuard Classification"` names `llavaguard_classification`.
pub fn normalize_name(s: &str) -> String {
    s.trim()
        .chars()
        .map(|c| if c == ' ' || c == '-' { '_' } else { c.to_ascii_lowercase() })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArgType {
    String,
    Integer,
    Number,
    Boolean,
    StringList,
}

impl ArgType {
    fn accepts(self, v: &Value) -> bool {
        match self {
            ArgType::String => v.is_string(),
            ArgType::Integer => v.is_i64() || v.is_u64(),
            ArgType::Number => v.is_number(),
            ArgType::Boolean => v.is_boolean(),
            ArgType::StringList => v.as_array().is_some_and(|a| a.iter().all(Value::is_string)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArgSpec {
    pub name: String,
    #[serde(rename = "type")]
    pub kind: ArgType,
    pub required: bool,
    #[serde(default)]
    pub description: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolDescriptor {
    pub name: String,
    pub description: String,
    pub args_schema: Vec<ArgSpec>,
    pub category: ToolCategory,
}

impl ToolDescriptor {
    pub fn check_args(&self, args: &ToolArgs) -> Result<(), ToolError> {
        let violation = |msg: String| ToolError::ArgsSchema { tool: self.name.clone(), message: msg };
        for spec in &self.args_schema {
            match args.get(&spec.name) {
                None if spec.required => {
                    return Err(violation(format!("missing required argument {:?}", spec.name)))
                }
                Some(v) if !spec.kind.accepts(v) => {
                    return Err(violation(format!(
                        "argument {:?} must be {:?}, got {v}",
                        spec.name, spec.kind
                    )))
                }
                _ => {}
            }
        }
        if let Some(extra) = args.keys().find(|k| !self.args_schema.iter().any(|s| &s.name == *k)) {
            return Err(violation(format!("unexpected argument {extra:?}")));
        }
        Ok(())
    }
}

/// Normalized rectangle, all coordinates in [0, 1].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub left: f64,
    pub top: f64,
    pub width: f64,
    pub height: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub label: String,
    pub score: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bbox: Option<BoundingBox>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModerationLabel {
    pub label: String,
    pub score: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub severity: Option<String>,
}

/// The standardized result every tool emits.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ToolOutput {
    #[serde(default)]
    pub tool_name: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub detections: Vec<Detection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub summary: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub moderation_labels: Vec<ModerationLabel>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub extra: BTreeMap<String, String>,
}

impl ToolOutput {
    pub fn is_empty(&self) -> bool {
        self.detections.is_empty()
            && self.summary.is_none()
            && self.moderation_labels.is_empty()
            && self.extra.is_empty()
    }

    /// Maps percentage scores (as returned by several cloud detectors) onto
    /// [0, 1]. Scores already in range are untouched; nothing is filtered.
    pub fn normalize_scores(&mut self) {
        fn norm(s: &mut f64) {
            if *s > 1.0 && *s <= 100.0 {
                *s /= 100.0;
            }
        }
        self.detections.iter_mut().for_each(|d| norm(&mut d.score));
        self.moderation_labels.iter_mut().for_each(|m| norm(&mut m.score));
    }

    pub fn validate(&self, tool: &str) -> Result<(), ToolError> {
        let invalid = |msg: String| ToolError::InvalidOutput { tool: tool.to_string(), message: msg };
        if self.tool_name != tool {
            return Err(invalid(format!("tool_name {:?} does not match", self.tool_name)));
        }
        let scores = self
            .detections
            .iter()
            .map(|d| (&d.label, d.score))
            .chain(self.moderation_labels.iter().map(|m| (&m.label, m.score)));
        for (label, score) in scores {
            if !(0.0..=1.0).contains(&score) {
                return Err(invalid(format!("score {score} for {label:?} outside [0, 1]")));
            }
        }
        for d in &self.detections {
            if let Some(b) = d.bbox {
                let coords = [b.left, b.top, b.width, b.height];
                if coords.iter().any(|c| !(0.0..=1.0).contains(c)) {
                    return Err(invalid(format!("bbox for {:?} is not normalized", d.label)));
                }
            }
        }
        if self.is_empty() {
            return Err(invalid("output carries no content".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, thiserror::Error)]
pub enum ToolError {
    #[error("unknown tool {0:?}")]
    UnknownTool(String),
    #[error("tool {0:?} is disabled")]
    Disabled(String),
    #[error("tool {0:?} is already registered")]
    Duplicate(String),
    #[error("invalid descriptor for {tool:?}: {message}")]
    InvalidDescriptor { tool: String, message: String },
    #[error("arguments for {tool:?} violate its schema: {message}")]
    ArgsSchema { tool: String, message: String },
    #[error("no fixture for tool {tool:?} on image {image:?} at {path}")]
    FixtureMiss { tool: String, image: String, path: String },
    #[error("cannot parse {path}: {message}")]
    Parse { path: String, message: String },
    #[error("tool {tool:?} returned invalid output: {message}")]
    InvalidOutput { tool: String, message: String },
    #[error("tool {tool:?} failed: {message}")]
    Invocation { tool: String, message: String },
}

impl ToolError {
    /// Short machine-readable kind, used in evidence records.
    pub fn kind(&self) -> &'static str {
        match self {
            ToolError::UnknownTool(_) => "unknown_tool",
            ToolError::Disabled(_) => "disabled_tool",
            ToolError::Duplicate(_) => "duplicate_tool",
            ToolError::InvalidDescriptor { .. } => "invalid_descriptor",
            ToolError::ArgsSchema { .. } => "args_schema",
            ToolError::FixtureMiss { .. } => "fixture_miss",
            ToolError::Parse { .. } => "parse",
            ToolError::InvalidOutput { .. } => "invalid_output",
            ToolError::Invocation { .. } => "invocation",
        }
    }
}

/// Runs a named tool on an image. Implementations must tolerate concurrent calls.
pub trait ToolInvoker: Send + Sync {
    fn invoke(&self, tool: &str, image: &ImageRef, args: &ToolArgs) -> Result<ToolOutput, ToolError>;
}

impl<F> ToolInvoker for F
where
    F: Fn(&str, &ImageRef, &ToolArgs) -> Result<ToolOutput, ToolError> + Send + Sync,
{
    fn invoke(&self, tool: &str, image: &ImageRef, args: &ToolArgs) -> Result<ToolOutput, ToolError> {
        self(tool, image, args)
    }
}

/// A successful tool run.
#[derive(Debug, Clone, PartialEq)]
pub struct ToolExecution {
    pub output: ToolOutput,
    pub elapsed_ms: u64,
}

/// A failed tool run, with its timing.
#[derive(Debug, Clone)]
pub struct ToolFailure {
    pub error: ToolError,
    pub elapsed_ms: u64,
}

#[derive(Clone)]
struct Entry {
    descriptor: ToolDescriptor,
    invoker: Arc<dyn ToolInvoker>,
}

/// Registered tools in registration order, with an optional disabled set.
///
/// Cloning is cheap; invokers are shared.
#[derive(Clone, Default)]
pub struct ToolRegistry {
    entries: Vec<Entry>,
    index: HashMap<String, usize>,
    disabled_tools: BTreeSet<String>,
    disabled_categories: BTreeSet<ToolCategory>,
}

impl fmt::Debug for ToolRegistry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ToolRegistry")
            .field("tools", &self.entries.iter().map(|e| &e.descriptor.name).collect::<Vec<_>>())
            .field("disabled", &self.disabled())
            .finish()
    }
}

impl ToolRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers the eight bundled descriptors, all backed by `invoker`.
    pub fn with_bundled(invoker: Arc<dyn ToolInvoker>) -> Self {
        let mut r = ToolRegistry::new();
        for d in bundled_descriptors() {
            r.register(d, invoker.clone()).expect("bundled tool names are unique");
        }
        r
    }

    pub fn register(
        &mut self,
        descriptor: ToolDescriptor,
        invoker: Arc<dyn ToolInvoker>,
    ) -> Result<(), ToolError> {
        if descriptor.name.trim().is_empty() {
            return Err(ToolError::InvalidDescriptor {
                tool: descriptor.name,
                message: "empty name".into(),
            });
        }
        if descriptor.description.trim().is_empty() {
            return Err(ToolError::InvalidDescriptor {
                tool: descriptor.name,
                message: "empty description".into(),
            });
        }
        if self.index.contains_key(&descriptor.name) {
            return Err(ToolError::Duplicate(descriptor.name));
        }
        self.index.insert(descriptor.name.clone(), self.entries.len());
        self.entries.push(Entry { descriptor, invoker });
        Ok(())
    }

    /// Disables a tool by name or a whole category. Names are matched after
    /// [`normalize_name`], so display names such as `"Safe-CLIP"` work.
    pub fn disable(&mut self, target: &str) -> Result<(), ToolError> {
        if let Ok(cat) = target.parse::<ToolCategory>() {
            self.disabled_categories.insert(cat);
            return Ok(());
        }
        let norm = normalize_name(target);
        let name = self
            .entries
            .iter()
            .map(|e| &e.descriptor.name)
            .find(|n| **n == target || normalize_name(n) == norm)
            .ok_or_else(|| ToolError::UnknownTool(target.to_string()))?;
        self.disabled_tools.insert(name.clone());
        Ok(())
    }

    /// A copy of this registry with additional entries disabled.
    pub fn with_disabled<S: AsRef<str>>(&self, targets: &[S]) -> Result<ToolRegistry, ToolError> {
        let mut r = self.clone();
        for t in targets {
            r.disable(t.as_ref())?;
        }
        Ok(r)
    }

    /// Disabled tool names and categories, sorted.
    pub fn disabled(&self) -> Vec<String> {
        self.disabled_categories
            .iter()
            .map(|c| c.as_str().to_string())
            .chain(self.disabled_tools.iter().cloned())
            .collect()
    }

    pub fn is_enabled(&self, name: &str) -> bool {
        match self.index.get(name) {
            Some(&i) => self.entry_enabled(&self.entries[i]),
            None => false,
        }
    }

    fn entry_enabled(&self, e: &Entry) -> bool {
        !self.disabled_tools.contains(&e.descriptor.name)
            && !self.disabled_categories.contains(&e.descriptor.category)
    }

    /// Enabled descriptors in registration order.
    pub fn list_descriptors(&self) -> Vec<ToolDescriptor> {
        self.entries
            .iter()
            .filter(|e| self.entry_enabled(e))
            .map(|e| e.descriptor.clone())
            .collect()
    }

    /// Every registered name, enabled or not.
    pub fn all_names(&self) -> Vec<String> {
        self.entries.iter().map(|e| e.descriptor.name.clone()).collect()
    }

    pub fn contains(&self, name: &str) -> bool {
        self.index.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn descriptor(&self, name: &str) -> Result<&ToolDescriptor, ToolError> {
        let &i = self.index.get(name).ok_or_else(|| ToolError::UnknownTool(name.to_string()))?;
        let e = &self.entries[i];
        if !self.entry_enabled(e) {
            return Err(ToolError::Disabled(name.to_string()));
        }
        Ok(&e.descriptor)
    }

    /// Validates arguments, runs the tool and checks its output. Failures are
    /// returned as values with elapsed time; nothing here panics on bad input.
    pub fn execute_tool(
        &self,
        name: &str,
        image: &ImageRef,
        args: &ToolArgs,
    ) -> Result<ToolExecution, ToolFailure> {
        let started = Instant::now();
        let fail = |error: ToolError| ToolFailure { error, elapsed_ms: started.elapsed().as_millis() as u64 };
        let descriptor = self.descriptor(name).map_err(fail)?;
        descriptor.check_args(args).map_err(fail)?;
        let invoker = &self.entries[self.index[name]].invoker;
        let mut output = match invoker.invoke(name, image, args) {
            Ok(o) => o,
            Err(e) => {
                return Err(fail(match e {
                    ToolError::Invocation { .. }
                    | ToolError::FixtureMiss { .. }
                    | ToolError::Parse { .. }
                    | ToolError::InvalidOutput { .. } => e,
                    other => ToolError::Invocation { tool: name.to_string(), message: other.to_string() },
                }))
            }
        };
        if output.tool_name.is_empty() {
            output.tool_name = name.to_string();
        }
        output.normalize_scores();
        output.validate(name).map_err(fail)?;
        Ok(ToolExecution { output, elapsed_ms: started.elapsed().as_millis() as u64 })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn ok_invoker() -> Arc<dyn ToolInvoker> {
        Arc::new(|tool: &str, _: &ImageRef, _: &ToolArgs| {
            Ok(ToolOutput { tool_name: tool.to_string(), summary: Some("ok".into()), ..Default::default() })
        })
    }

    fn descriptor(name: &str, category: ToolCategory) -> ToolDescriptor {
        ToolDescriptor {
            name: name.into(),
            description: format!("{name} does things"),
            args_schema: vec![ArgSpec {
                name: "max_labels".into(),
                kind: ArgType::Integer,
                required: false,
                description: String::new(),
            }],
            category,
        }
    }

    fn img() -> ImageRef {
        ImageRef::new("img1", "img1.png")
    }

    #[test]
    fn register_and_list() {
        let mut r = ToolRegistry::new();
        assert!(r.list_descriptors().is_empty());
        r.register(descriptor("face_detection", ToolCategory::ContentDetection), ok_invoker()).unwrap();
        assert_eq!(r.list_descriptors()[0].name, "face_detection");
        assert!(matches!(
            r.register(descriptor("face_detection", ToolCategory::ContentDetection), ok_invoker()),
            Err(ToolError::Duplicate(_))
        ));
    }

    #[test]
    fn bundled_registry_has_eight_tools() {
        let r = ToolRegistry::with_bundled(ok_invoker());
        assert_eq!(r.list_descriptors().len(), 8);
    }

    #[test]
    fn disabling_by_category_and_display_name() {
        let r = ToolRegistry::with_bundled(ok_invoker());
        let names = |r: &ToolRegistry| r.list_descriptors().into_iter().map(|d| d.name).collect::<Vec<_>>();
        let no_spec = r.with_disabled(&["specialized_compliance"]).unwrap();
        assert_eq!(
            names(&no_spec),
            ["image_summary", "face_detection", "object_detection", "text_detection", "content_moderation"]
        );
        let no_lg = r.with_disabled(&["LlavaGuard Classification"]).unwrap();
        assert_eq!(names(&no_lg).len(), 7);
        assert!(!names(&no_lg).contains(&"llavaguard_classification".to_string()));
        assert!(r.with_disabled(&["Safe-CLIP"]).unwrap().descriptor("safe_clip").is_err());
        assert!(r.with_disabled(&["Summarization tools"]).is_ok());
        assert!(matches!(r.with_disabled(&["nope"]), Err(ToolError::UnknownTool(_))));
    }

    #[test]
    fn execute_unknown_and_disabled() {
        let r = ToolRegistry::with_bundled(ok_invoker());
        let err = r.execute_tool("nope", &img(), &ToolArgs::new()).unwrap_err();
        assert!(matches!(err.error, ToolError::UnknownTool(_)));
        let r = r.with_disabled(&["safe_clip"]).unwrap();
        let err = r.execute_tool("safe_clip", &img(), &ToolArgs::new()).unwrap_err();
        assert!(matches!(err.error, ToolError::Disabled(_)));
    }

    #[test]
    fn args_schema_is_enforced() {
        let mut r = ToolRegistry::new();
        r.register(descriptor("object_detection", ToolCategory::ContentDetection), ok_invoker()).unwrap();
        let args = |v: Value| v.as_object().unwrap().clone();
        assert!(r.execute_tool("object_detection", &img(), &args(json!({"max_labels": 5}))).is_ok());
        for bad in [json!({"max_labels": "five"}), json!({"other": 1})] {
            let err = r.execute_tool("object_detection", &img(), &args(bad)).unwrap_err();
            assert!(matches!(err.error, ToolError::ArgsSchema { .. }));
        }
        let mut d = descriptor("text_detection", ToolCategory::ContentDetection);
        d.args_schema[0].required = true;
        r.register(d, ok_invoker()).unwrap();
        assert!(r.execute_tool("text_detection", &img(), &ToolArgs::new()).is_err());
    }

    #[test]
    fn invoker_failures_are_wrapped_with_tool_name() {
        let mut r = ToolRegistry::new();
        let failing: Arc<dyn ToolInvoker> = Arc::new(|_: &str, _: &ImageRef, _: &ToolArgs| {
            Err(ToolError::UnknownTool("inner".into()))
        });
        r.register(descriptor("face_detection", ToolCategory::ContentDetection), failing).unwrap();
        let err = r.execute_tool("face_detection", &img(), &ToolArgs::new()).unwrap_err();
        match err.error {
            ToolError::Invocation { tool, .. } => assert_eq!(tool, "face_detection"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn output_validation() {
        let mut out = ToolOutput { tool_name: "t".into(), ..Default::default() };
        assert!(out.validate("t").is_err(), "empty output");
        out.detections.push(Detection { label: "knife".into(), score: 97.0, bbox: None, text: None });
        out.normalize_scores();
        assert!((out.detections[0].score - 0.97).abs() < 1e-12);
        assert!(out.validate("t").is_ok());
        assert!(out.validate("u").is_err());
        out.detections[0].score = -0.1;
        assert!(out.validate("t").is_err());
        out.detections[0].score = f64::NAN;
        assert!(out.validate("t").is_err());
    }

    #[test]
    fn empty_descriptor_fields_rejected() {
        let mut r = ToolRegistry::new();
        let mut d = descriptor("x", ToolCategory::Summarization);
        d.description = " ".into();
        assert!(r.register(d, ok_invoker()).is_err());
    }
}
