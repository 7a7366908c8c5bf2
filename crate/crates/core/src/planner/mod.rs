//! The planning agent and the verification loop.
//!
//! Each iteration asks the planner model for one action. A tool call is
//! executed and appended to the evidence log; a conclusion hands the state to
//! the verifier. The loop is capped at `max_steps` tool calls, after which the
//! verifier runs on whatever evidence exists and the trace is marked
//! truncated.

pub mod prompt;

use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::extract;
use crate::image::ImageRef;
use crate::llm::{ChatClient, Decoding, LlmError};
use crate::policy::Policy;
use crate::tools::{ToolArgs, ToolDescriptor, ToolRegistry};
use crate::trace::{Evidence, EvidenceError, EvidenceOutcome, Pipeline, TraceRecord};
use crate::verifier::{self, parse_json_assessment, AssessError, Assessment, AssessmentParseError, VerifierConfig};

pub use prompt::planner_request;

/// Evidence kind recorded when a call is refused for repeating itself.
pub const REPEAT_LIMIT_KIND: &str = "repeat_limit";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub max_steps: usize,
    pub repeat_call_limit: usize,
    pub planner_model_id: String,
    pub verifier_model_id: String,
    /// Accept the planner's concluding JSON as the final assessment instead
    /// of running the separate verifier.
    pub fused_mode: bool,
    pub evidence_char_budget: usize,
    pub attach_image_to_planner: bool,
    pub decoding: Decoding,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            max_steps: 10,
            repeat_call_limit: 2,
            planner_model_id: "planner".into(),
            verifier_model_id: "verifier".into(),
            fused_mode: false,
            evidence_char_budget: 20_000,
            attach_image_to_planner: true,
            decoding: Decoding::default(),
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.max_steps == 0 {
            return Err("max_steps must be at least 1".into());
        }
        if self.repeat_call_limit == 0 {
            return Err("repeat_call_limit must be at least 1".into());
        }
        Ok(())
    }

    pub fn verifier_config(&self) -> VerifierConfig {
        VerifierConfig {
            model_id: self.verifier_model_id.clone(),
            decoding: self.decoding,
            evidence_char_budget: self.evidence_char_budget,
            attach_image: true,
        }
    }
}

/// The planner's view of a run: image, policy and accumulated evidence.
#[derive(Debug, Clone, PartialEq)]
pub struct VerificationState {
    pub image: ImageRef,
    pub policy: Arc<Policy>,
    pub evidence: Vec<Evidence>,
    pub step: usize,
}

impl VerificationState {
    pub fn new(image: ImageRef, policy: Arc<Policy>) -> Self {
        VerificationState { image, policy, evidence: Vec::new(), step: 0 }
    }

    /// Appends evidence for the current step and advances the step counter.
    pub fn update_state(mut self, evidence: Evidence) -> Result<Self, PlanErrorKind> {
        if evidence.step_index != self.step {
            return Err(PlanErrorKind::StepMismatch { expected: self.step, got: evidence.step_index });
        }
        self.evidence.push(evidence);
        self.step += 1;
        Ok(self)
    }

    /// Length of the trailing run of calls identical to `(tool, args)`.
    fn trailing_repeats(&self, tool: &str, args: &ToolArgs) -> usize {
        self.evidence
            .iter()
            .rev()
            .take_while(|e| e.tool_name == tool && &e.args == args)
            .count()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Action {
    ToolCall { tool_name: String, args: ToolArgs },
    /// Stop gathering evidence. Carries the planner's own assessment when it
    /// wrote one.
    Conclude { proposed: Option<Assessment> },
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ActionParseError {
    #[error("no CALL line and no assessment JSON found")]
    NoAction,
    #[error("CALL line has no tool name")]
    MissingToolName,
    #[error("arguments for {tool} are not a JSON object")]
    BadArgs { tool: String },
    #[error("concluding assessment is invalid: {0}")]
    BadAssessment(AssessmentParseError),
}

fn strip_call_prefix(line: &str) -> Option<&str> {
    let mut l = line.trim().trim_start_matches(['`', '*', '>']).trim_start();
    if l.len() >= 7 && l[..7].eq_ignore_ascii_case("action:") {
        l = l[7..].trim_start();
    }
    if l.len() > 4 && l[..4].eq_ignore_ascii_case("call") && l[4..].starts_with(char::is_whitespace) {
        Some(l[4..].trim_start())
    } else {
        None
    }
}

/// Name of the tool in the first `CALL` line of `text`, if any.
pub fn called_tool(text: &str) -> Option<&str> {
    text.lines().find_map(|line| {
        let rest = strip_call_prefix(line)?;
        let end = rest
            .find(|c: char| !(c.is_ascii_alphanumeric() || c == '_' || c == '-'))
            .unwrap_or(rest.len());
        (end > 0).then(|| &rest[..end])
    })
}

/// Interprets planner output. A `CALL <tool> {args}` line takes precedence;
/// otherwise a JSON assessment (or a bare `CONCLUDE` line) concludes.
pub fn parse_action(text: &str, policy: &Policy) -> Result<Action, ActionParseError> {
    let mut offset = 0;
    for line in text.split_inclusive('\n') {
        let line_start = offset;
        offset += line.len();
        let Some(rest) = strip_call_prefix(line) else { continue };
        let name_len = rest
            .find(|c: char| !(c.is_ascii_alphanumeric() || c == '_' || c == '-'))
            .unwrap_or(rest.len());
        if name_len == 0 {
            return Err(ActionParseError::MissingToolName);
        }
        let tool_name = rest[..name_len].to_string();
        // Arguments may continue past the end of the line.
        let rest_start = line_start + (line.len() - line.trim_start().len());
        let after_name = &text[rest_start..];
        let after_name = &after_name[after_name.find(&tool_name).map(|i| i + name_len).unwrap_or(0)..];
        let same_line = after_name.lines().next().unwrap_or("").trim().trim_matches('`');
        let args = if same_line.is_empty() || same_line.starts_with("(no arguments)") {
            ToolArgs::new()
        } else if same_line.starts_with('{') {
            match extract::leading_json_object(after_name) {
                Some((serde_json::Value::Object(map), _)) => map,
                _ => return Err(ActionParseError::BadArgs { tool: tool_name }),
            }
        } else {
            return Err(ActionParseError::BadArgs { tool: tool_name });
        };
        return Ok(Action::ToolCall { tool_name, args });
    }
    if let Some(parsed) = parse_json_assessment(text, policy) {
        return parsed
            .map(|a| Action::Conclude { proposed: Some(a) })
            .map_err(ActionParseError::BadAssessment);
    }
    let bare_conclude = text
        .lines()
        .any(|l| l.trim().trim_matches(['`', '*', '.']).eq_ignore_ascii_case("conclude"));
    if bare_conclude {
        return Ok(Action::Conclude { proposed: None });
    }
    Err(ActionParseError::NoAction)
}

#[derive(Debug, thiserror::Error)]
pub enum PlanErrorKind {
    #[error("planner output unusable after reprompt: {0}")]
    Parse(ActionParseError),
    #[error("planner named unknown or disabled tool {0:?} after reprompt")]
    InvalidTool(String),
    #[error("planner model call failed: {0}")]
    Llm(#[from] LlmError),
    #[error("step limit reached")]
    StepLimit,
    #[error("evidence for step {got} offered to state at step {expected}")]
    StepMismatch { expected: usize, got: usize },
}

#[derive(Debug, thiserror::Error)]
#[error("{kind}")]
pub struct PlanError {
    pub kind: PlanErrorKind,
    pub raw_texts: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct PlanOutcome {
    pub action: Action,
    /// Reply the action was parsed from.
    pub raw_text: String,
    /// Every reply consumed, including a rejected first attempt.
    pub raw_texts: Vec<String>,
}

enum Rejection {
    Parse(ActionParseError),
    InvalidTool(String),
}

impl std::fmt::Display for Rejection {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Rejection::Parse(e) => e.fmt(f),
            Rejection::InvalidTool(t) => write!(f, "tool {t:?} is not in the tool list"),
        }
    }
}

/// Asks the planner for its next action, reprompting once on unusable output.
pub fn plan_step(
    state: &VerificationState,
    descriptors: &[ToolDescriptor],
    llm: &dyn ChatClient,
    cfg: &RunConfig,
) -> Result<PlanOutcome, PlanError> {
    let mut raw_texts = Vec::new();
    if state.step >= cfg.max_steps {
        return Err(PlanError { kind: PlanErrorKind::StepLimit, raw_texts });
    }
    let req = planner_request(state, descriptors, cfg);
    let interpret = |text: &str| -> Result<Action, Rejection> {
        let action = parse_action(text, &state.policy).map_err(Rejection::Parse)?;
        if let Action::ToolCall { tool_name, .. } = &action {
            if !descriptors.iter().any(|d| &d.name == tool_name) {
                return Err(Rejection::InvalidTool(tool_name.clone()));
            }
        }
        Ok(action)
    };
    let outcome = verifier::complete_and_parse(
        llm,
        &req,
        "Reply with exactly one CALL line naming a listed tool, or with the final assessment JSON.",
        &mut raw_texts,
        interpret,
    );
    match outcome {
        Ok(Ok(action)) => {
            let raw_text = raw_texts.last().cloned().unwrap_or_default();
            Ok(PlanOutcome { action, raw_text, raw_texts })
        }
        Ok(Err((rejection, _))) => {
            let kind = match rejection {
                Rejection::Parse(e) => PlanErrorKind::Parse(e),
                Rejection::InvalidTool(t) => PlanErrorKind::InvalidTool(t),
            };
            Err(PlanError { kind, raw_texts })
        }
        Err(e) => Err(PlanError { kind: PlanErrorKind::Llm(e), raw_texts }),
    }
}

#[derive(Debug, thiserror::Error)]
pub enum RunErrorKind {
    #[error(transparent)]
    Plan(PlanErrorKind),
    #[error(transparent)]
    Assess(AssessError),
    #[error("invalid run configuration: {0}")]
    Config(String),
}

/// A failed run. The partial trace holds everything recorded before failure.
#[derive(Debug, thiserror::Error)]
#[error("verification of {} failed: {kind}", partial.image_id)]
pub struct RunError {
    pub kind: RunErrorKind,
    pub partial: Box<TraceRecord>,
}

fn elapsed_ms(since: Instant) -> u64 {
    since.elapsed().as_millis() as u64
}

/// Runs the full plan / act / conclude loop for one image.
pub fn run_verification(
    image: &ImageRef,
    policy: &Arc<Policy>,
    registry: &ToolRegistry,
    llm: &dyn ChatClient,
    cfg: &RunConfig,
) -> Result<TraceRecord, RunError> {
    let started = Instant::now();
    let mut trace = TraceRecord::new(&image.id, &policy.id, Pipeline::Agentic);
    let fail = |kind: RunErrorKind, mut trace: TraceRecord| {
        trace.timings.total_ms = elapsed_ms(started);
        trace.error = Some(kind.to_string());
        RunError { kind, partial: Box::new(trace) }
    };
    if let Err(msg) = cfg.validate() {
        return Err(fail(RunErrorKind::Config(msg), trace));
    }
    if registry.is_empty() {
        return Err(fail(RunErrorKind::Config("tool registry is empty".into()), trace));
    }
    let descriptors = registry.list_descriptors();
    let mut state = VerificationState::new(image.clone(), policy.clone());
    let mut concluded: Option<Option<Assessment>> = None;

    while state.step < cfg.max_steps {
        let plan_started = Instant::now();
        let planned = plan_step(&state, &descriptors, llm, cfg);
        trace.timings.planner_ms += elapsed_ms(plan_started);
        let plan = match planned {
            Ok(p) => p,
            Err(e) => {
                trace.raw_model_texts.extend(e.raw_texts);
                return Err(fail(RunErrorKind::Plan(e.kind), trace));
            }
        };
        trace.raw_model_texts.extend(plan.raw_texts);
        let (tool_name, args) = match plan.action {
            Action::Conclude { proposed } => {
                concluded = Some(proposed);
                break;
            }
            Action::ToolCall { tool_name, args } => (tool_name, args),
        };
        let (outcome, elapsed) = if state.trailing_repeats(&tool_name, &args) >= cfg.repeat_call_limit {
            let message = format!(
                "identical call to {tool_name} already made {} times in a row; choose a different tool or arguments, or conclude",
                cfg.repeat_call_limit
            );
            (EvidenceOutcome::Error(EvidenceError { kind: REPEAT_LIMIT_KIND.into(), message }), 0)
        } else {
            match registry.execute_tool(&tool_name, image, &args) {
                Ok(exec) => (EvidenceOutcome::Output(exec.output), exec.elapsed_ms),
                Err(f) => (
                    EvidenceOutcome::Error(EvidenceError {
                        kind: f.error.kind().into(),
                        message: f.error.to_string(),
                    }),
                    f.elapsed_ms,
                ),
            }
        };
        trace.timings.tools_ms += elapsed;
        log::debug!("{} step {}: {tool_name}", image.id, state.step);
        let evidence = Evidence { step_index: state.step, tool_name, args, outcome, elapsed_ms: elapsed };
        trace.push_step(plan.raw_text, evidence.clone());
        state = match state.update_state(evidence) {
            Ok(s) => s,
            Err(kind) => return Err(fail(RunErrorKind::Plan(kind), trace)),
        };
    }

    let proposed = match concluded {
        Some(p) => p,
        None => {
            log::debug!("{}: step limit {} reached", image.id, cfg.max_steps);
            trace.truncated = true;
            None
        }
    };
    let assessment = match proposed {
        Some(a) if cfg.fused_mode => a,
        _ => {
            let verify_started = Instant::now();
            let out = verifier::assess(&state, llm, &cfg.verifier_config());
            trace.timings.verifier_ms = elapsed_ms(verify_started);
            trace.raw_model_texts.extend(out.raw_texts);
            match out.result {
                Ok(a) => a,
                Err(e) => return Err(fail(RunErrorKind::Assess(e), trace)),
            }
        }
    };
    trace.assessment = Some(assessment);
    trace.timings.total_ms = elapsed_ms(started);
    Ok(trace)
}
