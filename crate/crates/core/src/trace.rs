//! Evidence records and per-run traces, plus their line-delimited log format.

use std::fmt;
use std::io::{BufRead, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::routing::RouteDecision;
use crate::tools::{ToolArgs, ToolOutput};
use crate::verifier::Assessment;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pipeline {
    Agentic,
    Routing,
    ZeroShot,
}

impl Pipeline {
    pub fn as_str(self) -> &'static str {
        match self {
            Pipeline::Agentic => "agentic",
            Pipeline::Routing => "routing",
            Pipeline::ZeroShot => "zero_shot",
        }
    }
}

impl fmt::Display for Pipeline {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Pipeline {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "agentic" => Ok(Pipeline::Agentic),
            "routing" => Ok(Pipeline::Routing),
            "zero_shot" | "zeroshot" => Ok(Pipeline::ZeroShot),
            other => Err(format!("unknown pipeline {other:?} (expected agentic, routing or zero_shot)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvidenceError {
    pub kind: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvidenceOutcome {
    Output(ToolOutput),
    Error(EvidenceError),
}

/// The recorded result of one tool call.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evidence {
    pub step_index: usize,
    pub tool_name: String,
    pub args: ToolArgs,
    #[serde(flatten)]
    pub outcome: EvidenceOutcome,
    pub elapsed_ms: u64,
}

impl Evidence {
    pub fn output(&self) -> Option<&ToolOutput> {
        match &self.outcome {
            EvidenceOutcome::Output(o) => Some(o),
            EvidenceOutcome::Error(_) => None,
        }
    }

    pub fn error(&self) -> Option<&EvidenceError> {
        match &self.outcome {
            EvidenceOutcome::Output(_) => None,
            EvidenceOutcome::Error(e) => Some(e),
        }
    }

    /// Compact single-line JSON used in prompts. Timing is left out.
    pub fn prompt_line(&self) -> String {
        let mut v = serde_json::json!({
            "step": self.step_index,
            "tool": self.tool_name,
            "args": self.args,
        });
        match &self.outcome {
            EvidenceOutcome::Output(o) => {
                let mut out = serde_json::to_value(o).expect("tool output serializes");
                if let Some(obj) = out.as_object_mut() {
                    obj.remove("tool_name");
                }
                v["output"] = out;
            }
            EvidenceOutcome::Error(e) => v["error"] = format!("{}: {}", e.kind, e.message).into(),
        }
        v.to_string()
    }
}

/// Renders evidence chronologically, one JSON object per line. When the
/// text would exceed `budget` characters the oldest entries are dropped and
/// replaced by a marker line.
pub fn render_evidence(evidence: &[Evidence], budget: usize) -> String {
    if evidence.is_empty() {
        return "No tools have been called yet.".to_string();
    }
    let lines: Vec<String> = evidence.iter().map(Evidence::prompt_line).collect();
    let mut kept = lines.len();
    let mut total = 0usize;
    for (i, line) in lines.iter().enumerate().rev() {
        let cost = line.chars().count() + 1;
        if total + cost > budget && kept != lines.len() {
            break;
        }
        total += cost;
        kept = i;
    }
    let mut out = String::new();
    if kept > 0 {
        out.push_str(&format!("[{kept} earlier evidence entries omitted]\n"));
    }
    for line in &lines[kept..] {
        out.push_str(line);
        out.push('\n');
    }
    out.pop();
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceStep {
    /// Model text that produced this step's action.
    pub action_raw: String,
    pub evidence: Evidence,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Timings {
    pub total_ms: u64,
    pub planner_ms: u64,
    pub tools_ms: u64,
    pub verifier_ms: u64,
}

/// Everything one verification run produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub image_id: String,
    pub policy_id: String,
    pub pipeline: Pipeline,
    pub trajectory: Vec<String>,
    pub steps: Vec<TraceStep>,
    pub assessment: Option<Assessment>,
    pub truncated: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub route: Option<RouteDecision>,
    #[serde(default)]
    pub raw_model_texts: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default)]
    pub timings: Timings,
}

impl TraceRecord {
    pub fn new(image_id: &str, policy_id: &str, pipeline: Pipeline) -> Self {
        TraceRecord {
            image_id: image_id.to_string(),
            policy_id: policy_id.to_string(),
            pipeline,
            trajectory: Vec::new(),
            steps: Vec::new(),
            assessment: None,
            truncated: false,
            route: None,
            raw_model_texts: Vec::new(),
            error: None,
            timings: Timings::default(),
        }
    }

    pub fn push_step(&mut self, action_raw: String, evidence: Evidence) {
        self.trajectory.push(evidence.tool_name.clone());
        self.steps.push(TraceStep { action_raw, evidence });
    }

    pub fn evidence(&self) -> impl Iterator<Item = &Evidence> {
        self.steps.iter().map(|s| &s.evidence)
    }

    /// Zeroes every wall-clock field so replayed traces compare byte for byte.
    pub fn strip_timings(&mut self) {
        self.timings = Timings::default();
        for s in &mut self.steps {
            s.evidence.elapsed_ms = 0;
        }
    }

    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("trace record serializes")
    }
}

#[derive(Debug, thiserror::Error)]
pub enum TraceLogError {
    #[error("cannot access trace log {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: invalid trace record: {message}")]
    Parse { path: String, line: usize, message: String },
}

pub fn write_trace_log(path: &Path, records: &[TraceRecord]) -> Result<(), TraceLogError> {
    let io = |source| TraceLogError::Io { path: path.display().to_string(), source };
    let mut file = std::io::BufWriter::new(std::fs::File::create(path).map_err(io)?);
    for r in records {
        writeln!(file, "{}", r.to_json_line()).map_err(io)?;
    }
    file.flush().map_err(io)
}

pub fn read_trace_log(path: &Path) -> Result<Vec<TraceRecord>, TraceLogError> {
    let io = |source| TraceLogError::Io { path: path.display().to_string(), source };
    let file = std::io::BufReader::new(std::fs::File::open(path).map_err(io)?);
    let mut records = Vec::new();
    for (n, line) in file.lines().enumerate() {
        let line = line.map_err(io)?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line).map_err(|e| TraceLogError::Parse {
            path: path.display().to_string(),
            line: n + 1,
            message: e.to_string(),
        })?;
        records.push(rec);
    }
    Ok(records)
}
