use super::{ArgSpec, ArgType, ToolCategory, ToolDescriptor};

pub const BUNDLED_TOOL_NAMES: [&str; 8] = [
    "image_summary",
    "face_detection",
    "object_detection",
    "text_detection",
    "content_moderation",
    "llavaguard_classification",
    "safe_clip",
    "icm_assistant",
];

fn arg(name: &str, kind: ArgType, description: &str) -> ArgSpec {
    ArgSpec { name: name.into(), kind, required: false, description: description.into() }
}

fn tool(name: &str, category: ToolCategory, description: &str, args_schema: Vec<ArgSpec>) -> ToolDescriptor {
    ToolDescriptor { name: name.into(), description: description.trim().into(), args_schema, category }
}

/// Descriptors for the standard tool suite, in the order the planner sees them.
pub fn bundled_descriptors() -> Vec<ToolDescriptor> {
    vec![
        tool(
            "image_summary",
            ToolCategory::Summarization,
            r#"
Produces a natural-language description of the whole image by combining several captioning models.
Capabilities: scene type, people and their activities, salient objects, setting, visible text at a coarse level, overall mood.
Use it first to establish context before choosing specialized tools.
Limitations: may miss small or partially occluded details and does not judge policy compliance.
Returns: `summary` text; `extra` may hold per-model captions."#,
            vec![arg("focus", ArgType::String, "optional aspect to describe in more detail")],
        ),
        tool(
            "face_detection",
            ToolCategory::ContentDetection,
            r#"
Detects faces and estimates facial attributes (approximate age range, expression, occlusion) without identifying people.
Use it when a policy depends on who is depicted, e.g. minors, distress, or intimate contact.
Limitations: unreliable on small, profile or heavily stylized faces; age ranges are estimates.
Returns: `detections` labelled "face" with confidence `score` in [0,1] and normalized `bbox`; attributes in `extra`."#,
            vec![],
        ),
        tool(
            "object_detection",
            ToolCategory::ContentDetection,
            r#"
Identifies and localizes objects (weapons, drugs, alcohol, tobacco, animals, vehicles, household items, ...) with confidence scores.
Use it to confirm or rule out specific items a policy names.
Limitations: cannot tell intent or context (a kitchen knife versus a threat); low scores are common for rare objects.
Returns: `detections` with `label`, `score` in [0,1] and normalized `bbox`."#,
            vec![arg("max_labels", ArgType::Integer, "upper bound on returned detections")],
        ),
        tool(
            "text_detection",
            ToolCategory::ContentDetection,
            r#"
Runs word-level optical character recognition and returns the text found in the image.
Use it for signs, posters, memes, screenshots, tattoos and any policy concerning written content or symbols with text.
Limitations: handwriting and stylized fonts degrade accuracy; the tool does not interpret meaning.
Returns: `detections` with the recognized string in `text`, `score` in [0,1] and `bbox`."#,
            vec![],
        ),
        tool(
            "content_moderation",
            ToolCategory::ContentDetection,
            r#"
Screens the image with several moderation models and returns unsafe-content labels (explicit nudity, violence, drugs, hate symbols, gore, ...) with severities.
Use it as a broad first check for unsafe categories.
Limitations: tuned for generic platforms, over-flags artistic or educational content and knows nothing of policy exceptions.
Returns: `moderation_labels` with `label`, `score` in [0,1] and optional `severity`."#,
            vec![],
        ),
        tool(
            "llavaguard_classification",
            ToolCategory::SpecializedCompliance,
            r#"
Expert safety classifier trained on policy-based assessments. Returns a safety rating, the violated category and a rationale.
Use it for a policy-grounded second opinion, especially for nuanced categories and exceptions.
Limitations: bound to its training taxonomy; can be overconfident on out-of-distribution images.
Returns: `moderation_labels` holding the predicted category and rating; rationale in `summary`."#,
            vec![arg("categories", ArgType::StringList, "optional subset of policy categories to check")],
        ),
        tool(
            "safe_clip",
            ToolCategory::SpecializedCompliance,
            r#"
Zero-shot toxicity detector scoring the image against seven predefined categories such as explicit content, violence and prohibited substances.
Use it for a fast, calibrated signal on broad harm categories.
Limitations: coarse categories, no localization and no explanation; high recall but many false alarms.
Returns: `moderation_labels` with per-category `score` in [0,1]."#,
            vec![],
        ),
        tool(
            "icm_assistant",
            ToolCategory::SpecializedCompliance,
            r#"
Template-based verifier that matches visual content against predefined violation templates and explains which visual elements trigger which rule.
Use it when an auditable, element-by-element justification is needed.
Limitations: only recognizes violations covered by its templates; slower than the other tools.
Returns: `summary` with the explanation; matched templates in `moderation_labels`."#,
            vec![],
        ),
    ]
}
