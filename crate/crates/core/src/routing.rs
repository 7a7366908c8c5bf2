//! Baselines: category-based routing with metadata fusion, and zero-shot
//! policy assessment.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::extract;
use crate::image::ImageRef;
use crate::llm::{ChatClient, ChatRequest, LlmError};
use crate::planner::RunConfig;
use crate::policy::Policy;
use crate::tools::{ToolArgs, ToolOutput, ToolRegistry};
use crate::trace::{Evidence, EvidenceError, EvidenceOutcome};
use crate::verifier::{self, parse_assessment, AssessError, Assessment, ASSESSMENT_STEPS};

pub const NO_METADATA: &str = "no tool metadata available";

pub const CLUSTER_COUNT: u8 = 5;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RouteDecision {
    pub description: String,
    pub cluster: u8,
    pub reasoning: String,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum RouteParseError {
    #[error("routing reply is missing the <{0}> tag")]
    MissingTag(&'static str),
    #[error("cluster {0:?} is not of the form \"Cluster X\"")]
    BadCluster(String),
    #[error("cluster {0} is outside 1..={CLUSTER_COUNT}")]
    OutOfRange(u64),
}

#[derive(Debug, thiserror::Error)]
pub enum RoutingError {
    #[error("routing model call failed: {0}")]
    Llm(#[from] LlmError),
    #[error("unusable routing reply: {0}")]
    Parse(RouteParseError),
    #[error(transparent)]
    Assess(AssessError),
    #[error("invalid cluster map: {0}")]
    ClusterMap(String),
}

/// Failure of a routing or zero-shot run, with the replies consumed so far.
#[derive(Debug, thiserror::Error)]
#[error("{kind}")]
pub struct BaselineError {
    pub kind: RoutingError,
    pub route: Option<RouteDecision>,
    pub evidence: Vec<Evidence>,
    pub raw_texts: Vec<String>,
}

pub const ROUTING_PROMPT: &str = r#"You are an expert image safety analyst tasked with routing images to the appropriate assessment system. Your job is to carefully analyze the image and determine which cluster of safety tools should process this image, regardless of whether it contains safety violations.

First, describe what you see in the image in detail (10-30 words).

Then, classify this image into EXACTLY ONE of these assessment clusters, based on what type of analysis would be most appropriate - even if the image is completely safe:

Cluster 1: VISUAL OBJECT DETECTION
For images featuring:
- Objects that could be weapons or dangerous items (even if used safely)
- Products like beverages, smoking items, or medicine (even if legal use)
- Animals (to check for proper treatment)
- Natural disaster scenes or emergency situations (even if educational)

Cluster 2: HUMAN CONTENT ANALYSIS
For images featuring:
- People's bodies or physical appearance (even if fully clothed)
- Physical contact between individuals (even if appropriate)
- Medical contexts or physical conditions (even if educational)
- Sports, exercise, or physical activities (even if safe)
- People in distress or emotional states (even if acted)

Cluster 3: TEXT AND SYMBOL ANALYSIS
For images featuring:
- Text in any language (even if benign)
- Symbols, signs, or iconography (even if positive)
- Screenshots of conversations or social media (even if harmless)
- Logos, brands, or trademarks (even if legitimate)
- Hand gestures or signals (even if friendly)

Cluster 4: CONTEXTUAL ASSESSMENT
For images requiring:
- Understanding of historical or cultural context
- Differentiation between educational and promotional content
- Consideration of artistic or creative expression
- Interpretation of news reporting or documentation
- Evaluation of intent rather than just visual elements

Cluster 5: NO SPECIALIZED ASSESSMENT NEEDED
For images with:
- Simple landscapes or nature scenes
- Basic objects with no safety implications
- Abstract patterns or designs
- Other content requiring no specialized analysis

Important: Select the SINGLE most appropriate cluster based on what type of analysis tools would be most relevant, even if the image is completely safe and compliant.

Respond ONLY in this exact format:
<description>your detailed image description</description>
<cluster>Cluster X</cluster>
<reasoning>Brief explanation of why this type of analysis is most appropriate for this image, regardless of whether any violations exist.</reasoning>"#;

/// Cluster id to the ordered tools it runs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClusterMap {
    clusters: BTreeMap<u8, Vec<String>>,
}

#[derive(Deserialize, Serialize)]
struct ClusterMapFile {
    clusters: BTreeMap<String, Vec<String>>,
}

impl Default for ClusterMap {
    fn default() -> Self {
        let roster: [&[&str]; 5] = [
            &["object_detection", "content_moderation"],
            &["face_detection", "content_moderation", "image_summary"],
            &["text_detection", "image_summary"],
            &["image_summary", "llavaguard_classification", "icm_assistant"],
            &[],
        ];
        ClusterMap {
            clusters: roster
                .iter()
                .enumerate()
                .map(|(i, tools)| (i as u8 + 1, tools.iter().map(|t| t.to_string()).collect()))
                .collect(),
        }
    }
}

impl ClusterMap {
    pub fn new(clusters: BTreeMap<u8, Vec<String>>) -> Result<Self, String> {
        let expected: Vec<u8> = (1..=CLUSTER_COUNT).collect();
        if clusters.keys().copied().collect::<Vec<_>>() != expected {
            return Err(format!("clusters must be exactly 1..={CLUSTER_COUNT}"));
        }
        if !clusters[&CLUSTER_COUNT].is_empty() {
            return Err(format!("cluster {CLUSTER_COUNT} must map to no tools"));
        }
        Ok(ClusterMap { clusters })
    }

    /// Parses `[clusters]` with keys "1".."5" mapping to tool name lists.
    pub fn from_toml_str(text: &str) -> Result<Self, String> {
        let file: ClusterMapFile = toml::from_str(text).map_err(|e| e.to_string())?;
        let mut clusters = BTreeMap::new();
        for (k, v) in file.clusters {
            let id: u8 = k.trim().parse().map_err(|_| format!("cluster key {k:?} is not a number"))?;
            clusters.insert(id, v);
        }
        ClusterMap::new(clusters)
    }

    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        ClusterMap::from_toml_str(&text).map_err(|e| format!("{}: {e}", path.display()))
    }

    pub fn to_toml_string(&self) -> String {
        let file = ClusterMapFile {
            clusters: self.clusters.iter().map(|(k, v)| (k.to_string(), v.clone())).collect(),
        };
        toml::to_string(&file).expect("cluster map serializes")
    }

    pub fn tools(&self, cluster: u8) -> &[String] {
        self.clusters.get(&cluster).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Every mapped tool must be registered (it may still be disabled).
    pub fn validate(&self, registry: &ToolRegistry) -> Result<(), String> {
        for (id, tools) in &self.clusters {
            for t in tools {
                if !registry.contains(t) {
                    return Err(format!("cluster {id} maps unknown tool {t:?}"));
                }
            }
        }
        Ok(())
    }
}

pub fn parse_route(text: &str) -> Result<RouteDecision, RouteParseError> {
    let description = extract::tag(text, "description").ok_or(RouteParseError::MissingTag("description"))?;
    let cluster_raw = extract::tag(text, "cluster").ok_or(RouteParseError::MissingTag("cluster"))?;
    let reasoning = extract::tag(text, "reasoning").ok_or(RouteParseError::MissingTag("reasoning"))?;
    let token = extract::unquote(cluster_raw);
    let bad = || RouteParseError::BadCluster(cluster_raw.trim().to_string());
    let number = match token.get(..7) {
        Some(head) if head.eq_ignore_ascii_case("cluster") => token[7..].trim(),
        _ => return Err(bad()),
    };
    let n: u64 = number.parse().map_err(|_| bad())?;
    if !(1..=CLUSTER_COUNT as u64).contains(&n) {
        return Err(RouteParseError::OutOfRange(n));
    }
    Ok(RouteDecision {
        description: description.trim().to_string(),
        cluster: n as u8,
        reasoning: reasoning.trim().to_string(),
    })
}

pub fn routing_request(img: &ImageRef, cfg: &RunConfig) -> ChatRequest {
    let mut req = ChatRequest::new(&cfg.planner_model_id, "", ROUTING_PROMPT).with_image(Some(img.clone()));
    req.decoding = cfg.decoding;
    req
}

/// Classifies the image into one of the five clusters. No reprompt: a reply
/// that does not follow the format is an error.
pub fn route(
    img: &ImageRef,
    llm: &dyn ChatClient,
    cfg: &RunConfig,
    raw_texts: &mut Vec<String>,
) -> Result<RouteDecision, RoutingError> {
    let reply = llm.complete(&routing_request(img, cfg))?;
    raw_texts.push(reply.text.clone());
    parse_route(&reply.text).map_err(RoutingError::Parse)
}

fn fmt_score(s: f64) -> String {
    format!("{s:.2}")
}

fn fuse_output(out: &mut String, o: &ToolOutput) {
    let mut detections: Vec<_> = o.detections.iter().collect();
    detections.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.label.cmp(&b.label)));
    if !detections.is_empty() {
        out.push_str("detections:\n");
        for d in detections {
            let _ = write!(out, "- {} ({})", d.label, fmt_score(d.score));
            if let Some(b) = &d.bbox {
                let _ = write!(out, " at [{:.3}, {:.3}, {:.3}, {:.3}]", b.left, b.top, b.width, b.height);
            }
            if let Some(t) = &d.text {
                let _ = write!(out, " text {t:?}");
            }
            out.push('\n');
        }
    }
    let mut labels: Vec<_> = o.moderation_labels.iter().collect();
    labels.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.label.cmp(&b.label)));
    if !labels.is_empty() {
        out.push_str("moderation labels:\n");
        for l in labels {
            let _ = write!(out, "- {} ({})", l.label, fmt_score(l.score));
            if let Some(s) = &l.severity {
                let _ = write!(out, " severity {s}");
            }
            out.push('\n');
        }
    }
    if let Some(s) = &o.summary {
        let _ = writeln!(out, "summary: {s}");
    }
    for (k, v) in &o.extra {
        let _ = writeln!(out, "{k}: {v}");
    }
}

/// Deterministic text digest of tool outputs, one section per output in
/// input order.
pub fn fuse_metadata(outputs: &[ToolOutput]) -> String {
    if outputs.is_empty() {
        return NO_METADATA.to_string();
    }
    let mut out = String::new();
    for o in outputs {
        let _ = writeln!(out, "## {}", o.tool_name);
        fuse_output(&mut out, o);
        out.push('\n');
    }
    out.trim_end().to_string()
}

/// Like [`fuse_metadata`], but failed calls appear as error notes.
pub fn fuse_evidence(evidence: &[Evidence]) -> String {
    if evidence.is_empty() {
        return NO_METADATA.to_string();
    }
    let mut out = String::new();
    for e in evidence {
        let _ = writeln!(out, "## {}", e.tool_name);
        match &e.outcome {
            EvidenceOutcome::Output(o) => fuse_output(&mut out, o),
            EvidenceOutcome::Error(err) => {
                let _ = writeln!(out, "error: {}: {}", err.kind, err.message);
            }
        }
        out.push('\n');
    }
    out.trim_end().to_string()
}

/// The slots of the policy-based assessment prompt. `None` gives the
/// zero-shot variant.
pub struct AssessmentSlots<'a> {
    pub image_metadata: &'a str,
    pub assessment_category: &'a str,
}

fn tagged_format(policy: &Policy) -> String {
    format!(
        "Respond ONLY in this exact format:\n<rating>\"Unsafe\"|\"Safe\" </rating>\n<category>{}</category>\n<rationale>Your rationale for giving the rating and classifying into that category</rationale>",
        policy.category_choices()
    )
}

pub fn policy_assessment_prompt(policy: &Policy, slots: Option<AssessmentSlots<'_>>) -> String {
    let mut text = String::new();
    if let Some(p) = &policy.preamble {
        text.push_str(p.trim());
        text.push_str("\n\n");
    }
    text.push_str(policy.render_text().trim_end());
    text.push_str("\n\n");
    text.push_str(ASSESSMENT_STEPS);
    text.push_str("\n\n");
    text.push_str(&tagged_format(policy));
    if let Some(s) = slots {
        let _ = write!(
            text,
            "\n\n<image_metadata>\n{}\n</image_metadata>\n<assesment_category>\n{}\n</assesment_category>",
            s.image_metadata, s.assessment_category
        );
    }
    text
}

fn assess_tagged(
    img: &ImageRef,
    policy: &Policy,
    prompt: String,
    llm: &dyn ChatClient,
    cfg: &RunConfig,
    raw_texts: &mut Vec<String>,
) -> Result<Assessment, RoutingError> {
    let mut req = ChatRequest::new(&cfg.verifier_model_id, "", prompt).with_image(Some(img.clone()));
    req.decoding = cfg.decoding;
    let hint = "Respond again using exactly the <rating>, <category> and <rationale> format above.";
    match verifier::complete_and_parse(llm, &req, hint, raw_texts, |t| parse_assessment(t, policy)) {
        Ok(Ok(a)) => Ok(a),
        Ok(Err((error, raw))) => Err(RoutingError::Assess(AssessError::Parse { error, raw })),
        Err(e) => Err(RoutingError::Assess(AssessError::Llm(e))),
    }
}

#[derive(Debug, Clone)]
pub struct RoutingOutcome {
    pub assessment: Assessment,
    pub route: RouteDecision,
    /// One entry per cluster tool actually executed, in map order.
    pub evidence: Vec<Evidence>,
    pub fused: String,
    pub raw_texts: Vec<String>,
}

/// Route, run the cluster's enabled tools in order, fuse, then assess.
pub fn assess_with_routing(
    img: &ImageRef,
    policy: &Policy,
    registry: &ToolRegistry,
    clusters: &ClusterMap,
    llm: &dyn ChatClient,
    cfg: &RunConfig,
) -> Result<RoutingOutcome, BaselineError> {
    let mut raw_texts = Vec::new();
    let fail = |kind, route, evidence, raw_texts| BaselineError { kind, route, evidence, raw_texts };
    if let Err(e) = clusters.validate(registry) {
        return Err(fail(RoutingError::ClusterMap(e), None, Vec::new(), raw_texts));
    }
    let route = match route(img, llm, cfg, &mut raw_texts) {
        Ok(r) => r,
        Err(e) => return Err(fail(e, None, Vec::new(), raw_texts)),
    };
    let mut evidence = Vec::new();
    for tool in clusters.tools(route.cluster) {
        if !registry.is_enabled(tool) {
            continue;
        }
        let args = ToolArgs::new();
        let (outcome, elapsed_ms) = match registry.execute_tool(tool, img, &args) {
            Ok(x) => (EvidenceOutcome::Output(x.output), x.elapsed_ms),
            Err(f) => (
                EvidenceOutcome::Error(EvidenceError { kind: f.error.kind().into(), message: f.error.to_string() }),
                f.elapsed_ms,
            ),
        };
        evidence.push(Evidence { step_index: evidence.len(), tool_name: tool.clone(), args, outcome, elapsed_ms });
    }
    let fused = fuse_evidence(&evidence);
    let category = format!("Cluster {}\n{}", route.cluster, route.reasoning);
    let prompt = policy_assessment_prompt(
        policy,
        Some(AssessmentSlots { image_metadata: &fused, assessment_category: &category }),
    );
    match assess_tagged(img, policy, prompt, llm, cfg, &mut raw_texts) {
        Ok(assessment) => Ok(RoutingOutcome { assessment, route, evidence, fused, raw_texts }),
        Err(e) => Err(fail(e, Some(route), evidence, raw_texts)),
    }
}

/// Direct policy assessment with no tools and no routing.
pub fn zero_shot_assess(
    img: &ImageRef,
    policy: &Policy,
    llm: &dyn ChatClient,
    cfg: &RunConfig,
) -> Result<(Assessment, Vec<String>), BaselineError> {
    let mut raw_texts = Vec::new();
    let prompt = policy_assessment_prompt(policy, None);
    match assess_tagged(img, policy, prompt, llm, cfg, &mut raw_texts) {
        Ok(a) => Ok((a, raw_texts)),
        Err(kind) => Err(BaselineError { kind, route: None, evidence: Vec::new(), raw_texts }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tools::Detection;

    fn reply(cluster: &str) -> String {
        format!("<description>a dog on a beach</description>\n<cluster>{cluster}</cluster>\n<reasoning>animal present</reasoning>")
    }

    #[test]
    fn route_parses_cluster_token() {
        let r = parse_route(&reply("Cluster 2")).unwrap();
        assert_eq!(r.cluster, 2);
        assert_eq!(r.description, "a dog on a beach");
        assert_eq!(parse_route(&reply("cluster 5")).unwrap().cluster, 5);
        assert_eq!(parse_route(&reply("Cluster 7")), Err(RouteParseError::OutOfRange(7)));
        assert_eq!(parse_route(&reply("Cluster 0")), Err(RouteParseError::OutOfRange(0)));
        assert!(matches!(parse_route(&reply("2")), Err(RouteParseError::BadCluster(_))));
        assert!(matches!(parse_route(&reply("Cluster two")), Err(RouteParseError::BadCluster(_))));
        assert_eq!(
            parse_route("<cluster>Cluster 1</cluster><reasoning>x</reasoning>"),
            Err(RouteParseError::MissingTag("description"))
        );
    }

    #[test]
    fn fusion_contract() {
        assert_eq!(fuse_metadata(&[]), NO_METADATA);
        let det = |l: &str, s| Detection { label: l.into(), score: s, bbox: None, text: None };
        let a = ToolOutput {
            tool_name: "object_detection".into(),
            detections: vec![det("a", 0.3), det("b", 0.9)],
            ..Default::default()
        };
        let b = ToolOutput { tool_name: "image_summary".into(), summary: Some("A beach.".into()), ..Default::default() };
        let fused = fuse_metadata(&[a.clone(), b.clone()]);
        assert_eq!(
            fused,
            "## object_detection\ndetections:\n- b (0.90)\n- a (0.30)\n\n## image_summary\nsummary: A beach."
        );
        assert_eq!(fused, fuse_metadata(&[a, b]));
    }

    #[test]
    fn default_cluster_map_round_trips() {
        let m = ClusterMap::default();
        assert!(m.tools(5).is_empty());
        assert_eq!(m.tools(1), ["object_detection", "content_moderation"]);
        assert_eq!(ClusterMap::from_toml_str(&m.to_toml_string()).unwrap(), m);
        assert!(ClusterMap::from_toml_str("[clusters]\n1 = []\n").is_err());
        assert!(ClusterMap::from_toml_str(
            "[clusters]\n1=[]\n2=[]\n3=[]\n4=[]\n5=[\"image_summary\"]\n"
        )
        .is_err());
    }

    #[test]
    fn prompts_carry_slots_only_when_routed() {
        let p = Policy::load(crate::policy::bundled_policy_dir().join("llavaguard.toml")).unwrap();
        let zs = policy_assessment_prompt(&p, None);
        assert!(!zs.contains("<image_metadata>"));
        assert!(zs.contains("\"O9: Disasters or Emergencies\"|\"NA: None applying\""));
        let routed = policy_assessment_prompt(
            &p,
            Some(AssessmentSlots { image_metadata: NO_METADATA, assessment_category: "Cluster 5\nplain" }),
        );
        assert!(routed.ends_with("<assesment_category>\nCluster 5\nplain\n</assesment_category>"));
    }
}
