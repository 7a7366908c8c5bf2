use crate::llm::ChatRequest;
use crate::tools::ToolDescriptor;
use crate::trace::render_evidence;
use crate::verifier::json_template;

use super::{RunConfig, VerificationState};

fn render_tools(descriptors: &[ToolDescriptor]) -> String {
    let mut out = String::new();
    for d in descriptors {
        out.push_str(&format!("### {} ({})\n", d.name, d.category));
        if d.args_schema.is_empty() {
            out.push_str("arguments: none\n");
        } else {
            out.push_str("arguments:\n");
            for a in &d.args_schema {
                let req = if a.required { "required" } else { "optional" };
                let kind = serde_json::to_value(a.kind).expect("arg type serializes");
                out.push_str(&format!("- {} ({}, {req})", a.name, kind.as_str().unwrap_or("")));
                if !a.description.is_empty() {
                    out.push_str(&format!(": {}", a.description));
                }
                out.push('\n');
            }
        }
        out.push_str(&d.description);
        out.push_str("\n\n");
    }
    out
}

/// The planner's system prompt: policy, instructions, tool list and action syntax.
pub fn system_prompt(state: &VerificationState, descriptors: &[ToolDescriptor], cfg: &RunConfig) -> String {
    let policy = &state.policy;
    format!(
        r#"You are a helpful assistant who provides a safety assessment for the content provided by the user.
Use the provided tools and the image to determine compliance or violation against our safety policy by reviewing the following policy categories.

<policy>{policy_text}</policy>

<instruction>
- Call the image summary tools first to get an overview of the image and then call specialized tools.
- Use the tools to fetch required metadata for the image.
- Select a safety "rating". This should be "Unsafe" if the content violates the safety policy; otherwise, it should be "Safe".
- Assign a policy "category". If none of the policy categories are applicable, select "{na}".
- Provide a "rationale". Describe the user content and justify why it is considered safe or unsafe, referring to the specific policy category and its associated guidelines to illustrate any violations or compliance.
To provide your assessment use the following json template:
{template}
</instruction>

<tools>
{tools}</tools>

<protocol>
Work one step at a time. In each reply, reason briefly and then do exactly one of:
1. Call one tool with a single line of the form
CALL <tool_name> {{"argument": value}}
Use {{}} when no arguments are needed. Only the tools listed above exist.
2. When the evidence is sufficient, give the final assessment using the json template above, without any CALL line.
Repeating an identical call more than {repeat} times in a row is rejected.
</protocol>"#,
        policy_text = policy.render_text(),
        na = policy.na_label,
        template = json_template(policy),
        tools = render_tools(descriptors),
        repeat = cfg.repeat_call_limit,
    )
}

pub fn user_prompt(state: &VerificationState, cfg: &RunConfig) -> String {
    format!(
        "Image id: {id}\nStep {step} of at most {max}.\n\n<evidence>\n{evidence}\n</evidence>\n\nDecide the next action.",
        id = state.image.id,
        step = state.step + 1,
        max = cfg.max_steps,
        evidence = render_evidence(&state.evidence, cfg.evidence_char_budget),
    )
}

pub fn planner_request(state: &VerificationState, descriptors: &[ToolDescriptor], cfg: &RunConfig) -> ChatRequest {
    let mut req = ChatRequest::new(
        &cfg.planner_model_id,
        system_prompt(state, descriptors, cfg),
        user_prompt(state, cfg),
    )
    .with_image(cfg.attach_image_to_planner.then(|| state.image.clone()));
    req.decoding = cfg.decoding;
    req
}
