use std::sync::{Arc, Mutex};

use compliance_agent::image::ImageRef;
use compliance_agent::llm::{ChatClient, ChatRequest, ChatResponse, LlmError, ScriptedClient};
use compliance_agent::planner::{run_verification, RunConfig, RunErrorKind, PlanErrorKind, REPEAT_LIMIT_KIND};
use compliance_agent::policy::{bundled_policy_dir, CategoryLabel, Policy};
use compliance_agent::routing::{
    assess_with_routing, zero_shot_assess, ClusterMap, RoutingError, NO_METADATA,
};
use compliance_agent::tools::{
    BoundingBox, Detection, ModerationLabel, ToolArgs, ToolError, ToolOutput, ToolRegistry,
};
use compliance_agent::verifier::Rating;

struct Recorder {
    inner: ScriptedClient,
    seen: Mutex<Vec<ChatRequest>>,
}

impl Recorder {
    fn new<S: Into<String>>(texts: impl IntoIterator<Item = S>) -> Self {
        Recorder { inner: ScriptedClient::from_texts(texts), seen: Mutex::new(Vec::new()) }
    }

    fn requests(&self) -> Vec<ChatRequest> {
        self.seen.lock().unwrap().clone()
    }
}

impl ChatClient for Recorder {
    fn complete(&self, req: &ChatRequest) -> Result<ChatResponse, LlmError> {
        self.seen.lock().unwrap().push(req.clone());
        self.inner.complete(req)
    }
}

fn policy() -> Arc<Policy> {
    Arc::new(Policy::load(bundled_policy_dir().join("llavaguard.toml")).unwrap())
}

fn image() -> ImageRef {
    ImageRef::new("img7", "img7.png")
}

fn canned(tool: &str) -> Result<ToolOutput, ToolError> {
    match tool {
        "object_detection" => Ok(ToolOutput {
            tool_name: tool.into(),
            detections: vec![
                Detection { label: "fork".into(), score: 0.4, bbox: None, text: None },
                Detection {
                    label: "knife".into(),
                    score: 0.91,
                    bbox: Some(BoundingBox { left: 0.1, top: 0.2, width: 0.3, height: 0.4 }),
                    text: None,
                },
            ],
            ..Default::default()
        }),
        "content_moderation" => Err(ToolError::Invocation { tool: tool.into(), message: "quota exceeded".into() }),
        "text_detection" => Ok(ToolOutput {
            tool_name: tool.into(),
            detections: vec![Detection { label: "word".into(), score: 0.99, bbox: None, text: Some("SALE".into()) }],
            ..Default::default()
        }),
        "face_detection" => Ok(ToolOutput {
            tool_name: tool.into(),
            moderation_labels: vec![
                ModerationLabel { label: "Distress".into(), score: 0.2, severity: None },
                ModerationLabel { label: "Minor".into(), score: 0.7, severity: Some("high".into()) },
            ],
            ..Default::default()
        }),
        _ => Ok(ToolOutput { tool_name: tool.into(), summary: Some(format!("{tool} says hi")), ..Default::default() }),
    }
}

fn registry() -> ToolRegistry {
    ToolRegistry::with_bundled(Arc::new(|tool: &str, _: &ImageRef, _: &ToolArgs| canned(tool)))
}

const SAFE_JSON: &str = r#"{"rating": "Safe", "category": "NA: None applying", "rationale": "Cutlery on a table."}"#;
const UNSAFE_TAGGED: &str =
    "<rating>Unsafe</rating>\n<category>O6: Weapons or Substance Abuse</category>\n<rationale>A knife is brandished.</rationale>";

#[test]
fn agentic_loop_collects_evidence_then_verifies() {
    let llm = Recorder::new([
        "CALL image_summary {}",
        "CALL object_detection {\"max_labels\": 2}",
        "CALL content_moderation",
        "CONCLUDE",
        SAFE_JSON,
    ]);
    let t = run_verification(&image(), &policy(), &registry(), &llm, &RunConfig::default()).unwrap();
    assert_eq!(t.trajectory, ["image_summary", "object_detection", "content_moderation"]);
    assert!(!t.truncated);
    assert_eq!(t.steps[2].evidence.error().unwrap().kind, "invocation");
    assert_eq!(t.assessment.unwrap().rating, Rating::Safe);
    assert_eq!(t.raw_model_texts.len(), 5);

    let reqs = llm.requests();
    assert!(reqs[..4].iter().all(|r| r.model_id == "planner"));
    assert_eq!(reqs[4].model_id, "verifier");
    // Evidence reaches later prompts, including the failed call.
    assert!(reqs[3].user_text.contains("knife"));
    assert!(reqs[4].user_text.contains("quota exceeded"));
    assert!(reqs.iter().all(|r| r.image.as_ref().map(|i| i.id.as_str()) == Some("img7")));
}

#[test]
fn invalid_tool_gets_one_reprompt() {
    let llm = Recorder::new(["CALL mind_reader {}", "CALL face_detection {}", "CONCLUDE", SAFE_JSON]);
    let t = run_verification(&image(), &policy(), &registry(), &llm, &RunConfig::default()).unwrap();
    assert_eq!(t.trajectory, ["face_detection"]);
    assert_eq!(t.raw_model_texts[0], "CALL mind_reader {}");
    let reqs = llm.requests();
    assert!(reqs[1].user_text.contains("mind_reader"), "reprompt should name the rejected tool");

    let llm = ScriptedClient::from_texts(["CALL mind_reader {}", "CALL mind_reader {}"]);
    let err = run_verification(&image(), &policy(), &registry(), &llm, &RunConfig::default()).unwrap_err();
    assert!(matches!(err.kind, RunErrorKind::Plan(PlanErrorKind::InvalidTool(ref t)) if t == "mind_reader"));
    assert_eq!(err.partial.raw_model_texts.len(), 2);
    assert!(err.partial.error.is_some());
}

#[test]
fn disabled_tools_are_not_offered_or_executed() {
    let reg = registry().with_disabled(&["content_detection"]).unwrap();
    let llm = Recorder::new(["CALL object_detection {}", "CALL image_summary {}", "CONCLUDE", SAFE_JSON]);
    let t = run_verification(&image(), &policy(), &reg, &llm, &RunConfig::default()).unwrap();
    assert_eq!(t.trajectory, ["image_summary"]);
    let first = &llm.requests()[0];
    let listing = format!("{}\n{}", first.system_text, first.user_text);
    assert!(!listing.contains("object_detection"));
    assert!(listing.contains("llavaguard_classification"));
}

#[test]
fn fused_mode_skips_the_verifier() {
    let cfg = RunConfig { fused_mode: true, ..Default::default() };
    let llm = Recorder::new(["CALL image_summary {}", SAFE_JSON]);
    let t = run_verification(&image(), &policy(), &registry(), &llm, &cfg).unwrap();
    assert_eq!(t.assessment.unwrap().rationale, "Cutlery on a table.");
    assert_eq!(llm.requests().len(), 2);

    // A bare CONCLUDE still needs the verifier.
    let llm = Recorder::new(["CONCLUDE", UNSAFE_TAGGED]);
    let t = run_verification(&image(), &policy(), &registry(), &llm, &cfg).unwrap();
    assert_eq!(t.assessment.unwrap().category, CategoryLabel::Code("O6".into()));
    assert_eq!(llm.requests()[1].model_id, "verifier");
}

#[test]
fn proposed_assessment_is_rechecked_by_default() {
    let llm = Recorder::new([SAFE_JSON, UNSAFE_TAGGED]);
    let t = run_verification(&image(), &policy(), &registry(), &llm, &RunConfig::default()).unwrap();
    assert!(t.trajectory.is_empty());
    assert_eq!(t.assessment.unwrap().rating, Rating::Unsafe);
}

#[test]
fn repeated_identical_calls_are_rejected_as_evidence() {
    let call = "CALL object_detection {\"max_labels\": 3}";
    let llm = ScriptedClient::from_texts([call, call, call, "CALL object_detection {}", "CONCLUDE", SAFE_JSON]);
    let t = run_verification(&image(), &policy(), &registry(), &llm, &RunConfig::default()).unwrap();
    assert_eq!(t.steps.len(), 4);
    assert!(t.steps[1].evidence.output().is_some());
    assert_eq!(t.steps[2].evidence.error().unwrap().kind, REPEAT_LIMIT_KIND);
    assert!(t.steps[3].evidence.output().is_some(), "different args reset the count");
}

#[test]
fn step_limit_truncates_and_still_verifies() {
    let cfg = RunConfig { max_steps: 2, ..Default::default() };
    let llm = ScriptedClient::from_texts(["CALL image_summary", "CALL safe_clip", UNSAFE_TAGGED]);
    let t = run_verification(&image(), &policy(), &registry(), &llm, &cfg).unwrap();
    assert!(t.truncated);
    assert_eq!(t.trajectory.len(), 2);
    assert_eq!(t.assessment.unwrap().rating, Rating::Unsafe);
}

#[test]
fn exhausted_script_is_an_llm_failure() {
    let llm = ScriptedClient::from_texts(["CALL image_summary"]);
    let err = run_verification(&image(), &policy(), &registry(), &llm, &RunConfig::default()).unwrap_err();
    assert!(matches!(err.kind, RunErrorKind::Plan(PlanErrorKind::Llm(LlmError::ScriptExhausted { .. }))));
    assert_eq!(err.partial.trajectory, ["image_summary"]);
}

#[test]
fn bad_config_fails_before_any_model_call() {
    let llm = Recorder::new(Vec::<String>::new());
    let cfg = RunConfig { max_steps: 0, ..Default::default() };
    let err = run_verification(&image(), &policy(), &registry(), &llm, &cfg).unwrap_err();
    assert!(matches!(err.kind, RunErrorKind::Config(_)));
    let err = run_verification(&image(), &policy(), &ToolRegistry::new(), &llm, &RunConfig::default()).unwrap_err();
    assert!(matches!(err.kind, RunErrorKind::Config(_)));
    assert!(llm.requests().is_empty());
}

fn route_reply(cluster: u8) -> String {
    format!("<description>Cutlery.</description>\n<cluster>Cluster {cluster}</cluster>\n<reasoning>Sharp objects.</reasoning>")
}

#[test]
fn routing_fuses_cluster_evidence() {
    let llm = Recorder::new([route_reply(1), UNSAFE_TAGGED.to_string()]);
    let out = assess_with_routing(&image(), &policy(), &registry(), &ClusterMap::default(), &llm, &RunConfig::default())
        .unwrap();
    assert_eq!(out.route.cluster, 1);
    let expected = "## object_detection\n\
                    detections:\n\
                    - knife (0.91) at [0.100, 0.200, 0.300, 0.400]\n\
                    - fork (0.40)\n\
                    \n\
                    ## content_moderation\n\
                    error: invocation: tool \"content_moderation\" failed: quota exceeded";
    assert_eq!(out.fused, expected);
    assert_eq!(out.assessment.rating, Rating::Unsafe);

    let reqs = llm.requests();
    assert_eq!(reqs[0].model_id, "planner");
    assert_eq!(reqs[1].model_id, "verifier");
    let prompt = &reqs[1].user_text;
    assert!(prompt.contains(&format!("<image_metadata>\n{expected}\n</image_metadata>")));
    assert!(prompt.contains("<assesment_category>\nCluster 1\nSharp objects.\n</assesment_category>"));
}

#[test]
fn routing_cluster_five_runs_no_tools() {
    let llm = Recorder::new([route_reply(5), UNSAFE_TAGGED.to_string()]);
    let out = assess_with_routing(&image(), &policy(), &registry(), &ClusterMap::default(), &llm, &RunConfig::default())
        .unwrap();
    assert!(out.evidence.is_empty());
    assert_eq!(out.fused, NO_METADATA);
}

#[test]
fn routing_skips_disabled_cluster_tools() {
    let reg = registry().with_disabled(&["image_summary"]).unwrap();
    let llm = ScriptedClient::from_texts([route_reply(3), UNSAFE_TAGGED.to_string()]);
    let out = assess_with_routing(&image(), &policy(), &reg, &ClusterMap::default(), &llm, &RunConfig::default()).unwrap();
    let ran: Vec<_> = out.evidence.iter().map(|e| e.tool_name.as_str()).collect();
    assert_eq!(ran, ["text_detection"]);
    assert!(out.fused.contains("text \"SALE\""));
}

#[test]
fn routing_failures_keep_partial_state() {
    let llm = ScriptedClient::from_texts([route_reply(7)]);
    let err = assess_with_routing(&image(), &policy(), &registry(), &ClusterMap::default(), &llm, &RunConfig::default())
        .unwrap_err();
    assert!(matches!(err.kind, RoutingError::Parse(_)));
    assert_eq!(err.raw_texts.len(), 1);

    let llm = ScriptedClient::from_texts([route_reply(2), "no idea".into(), "still no idea".into()]);
    let err = assess_with_routing(&image(), &policy(), &registry(), &ClusterMap::default(), &llm, &RunConfig::default())
        .unwrap_err();
    assert!(matches!(err.kind, RoutingError::Assess(_)));
    assert_eq!(err.route.unwrap().cluster, 2);
    assert_eq!(err.evidence.len(), 3);
    assert_eq!(err.raw_texts.len(), 3);

    let broken = ClusterMap::from_toml_str("[clusters]\n1 = [\"laser\"]\n2 = []\n3 = []\n4 = []\n5 = []\n").unwrap();
    let llm = ScriptedClient::from_texts(Vec::<String>::new());
    let err = assess_with_routing(&image(), &policy(), &registry(), &broken, &llm, &RunConfig::default()).unwrap_err();
    assert!(matches!(err.kind, RoutingError::ClusterMap(_)));
}

#[test]
fn zero_shot_uses_policy_prompt_without_slots() {
    let llm = Recorder::new([UNSAFE_TAGGED]);
    let (a, raw) = zero_shot_assess(&image(), &policy(), &llm, &RunConfig::default()).unwrap();
    assert_eq!(a.category, CategoryLabel::Code("O6".into()));
    assert_eq!(raw.len(), 1);
    let prompt = &llm.requests()[0].user_text;
    assert!(prompt.contains("O9: Disasters or Emergencies"));
    assert!(prompt.contains("Respond ONLY in this exact format"));
    assert!(!prompt.contains("<image_metadata>"));
}
