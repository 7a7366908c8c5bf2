//! The compliance verification agent: turns the final state into an
//! [`Assessment`].

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::Value;

use crate::extract;
use crate::llm::{ChatClient, ChatRequest, Decoding, LlmError};
use crate::planner::VerificationState;
use crate::policy::{CategoryLabel, Policy, PolicyError};
use crate::trace::render_evidence;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Rating {
    Safe,
    Unsafe,
}

impl Rating {
    pub fn as_str(self) -> &'static str {
        match self {
            Rating::Safe => "Safe",
            Rating::Unsafe => "Unsafe",
        }
    }
}

impl fmt::Display for Rating {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Rating {
    type Err = AssessmentParseError;
    /// Accepts exactly `Safe` or `Unsafe`, ignoring case, whitespace and quotes.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let v = extract::unquote(s);
        if v.eq_ignore_ascii_case("safe") {
            Ok(Rating::Safe)
        } else if v.eq_ignore_ascii_case("unsafe") {
            Ok(Rating::Unsafe)
        } else {
            Err(AssessmentParseError::InvalidRating(s.trim().to_string()))
        }
    }
}

impl Serialize for Rating {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for Rating {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let raw = String::deserialize(d)?;
        raw.parse().map_err(serde::de::Error::custom)
    }
}

/// Final verdict: rating, policy category and rationale.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Assessment {
    pub rating: Rating,
    pub category: CategoryLabel,
    pub rationale: String,
}

impl Assessment {
    /// The JSON answer format, with the category's full label.
    pub fn to_json_text(&self, policy: &Policy) -> String {
        serde_json::json!({
            "rating": self.rating.as_str(),
            "category": policy.label_text(&self.category),
            "rationale": self.rationale,
        })
        .to_string()
    }

    /// The tagged answer format.
    pub fn to_tagged_text(&self, policy: &Policy) -> String {
        format!(
            "<rating>{}</rating>\n<category>{}</category>\n<rationale>{}</rationale>",
            self.rating,
            policy.label_text(&self.category),
            self.rationale
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum AssessmentParseError {
    #[error("empty model output")]
    Empty,
    #[error("no assessment found (expected a JSON object or <rating>/<category>/<rationale> tags)")]
    NoAssessment,
    #[error("assessment is missing the {0:?} field")]
    MissingField(&'static str),
    #[error("invalid rating {0:?} (expected \"Safe\" or \"Unsafe\")")]
    InvalidRating(String),
    #[error("unknown category {0:?}")]
    UnknownCategory(String),
    #[error("rationale is empty")]
    EmptyRationale,
}

fn build(
    rating: &str,
    category: Option<&str>,
    rationale: Option<&str>,
    policy: &Policy,
) -> Result<Assessment, AssessmentParseError> {
    let rating: Rating = rating.parse()?;
    let category = category.ok_or(AssessmentParseError::MissingField("category"))?;
    let category = policy.normalize_category(category).map_err(|e| match e {
        PolicyError::UnknownCategory(raw) => AssessmentParseError::UnknownCategory(raw),
        other => AssessmentParseError::UnknownCategory(other.to_string()),
    })?;
    let rationale = rationale.ok_or(AssessmentParseError::MissingField("rationale"))?;
    let rationale = extract::unquote(rationale);
    if rationale.is_empty() {
        return Err(AssessmentParseError::EmptyRationale);
    }
    Ok(Assessment { rating, category, rationale: rationale.to_string() })
}

fn field<'a>(obj: &'a serde_json::Map<String, Value>, key: &str) -> Option<&'a Value> {
    obj.iter().find(|(k, _)| k.trim().eq_ignore_ascii_case(key)).map(|(_, v)| v)
}

fn value_text(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

/// Looks only for the JSON answer format. `None` when no object carrying a
/// `rating` key is present.
pub fn parse_json_assessment(
    text: &str,
    policy: &Policy,
) -> Option<Result<Assessment, AssessmentParseError>> {
    let objects = extract::json_objects(text);
    let obj = objects.iter().filter_map(Value::as_object).find(|o| field(o, "rating").is_some())?;
    let rating = value_text(field(obj, "rating")?);
    let category = field(obj, "category").map(value_text);
    let rationale = field(obj, "rationale").map(value_text);
    Some(build(&rating, category.as_deref(), rationale.as_deref(), policy))
}

/// Parses a model answer in either format. JSON takes precedence over tags.
pub fn parse_assessment(text: &str, policy: &Policy) -> Result<Assessment, AssessmentParseError> {
    if text.trim().is_empty() {
        return Err(AssessmentParseError::Empty);
    }
    if let Some(parsed) = parse_json_assessment(text, policy) {
        return parsed;
    }
    let rating = extract::tag(text, "rating");
    let category = extract::tag(text, "category");
    let rationale = extract::tag(text, "rationale");
    match rating {
        Some(r) => build(r, category, rationale, policy),
        None if category.is_some() || rationale.is_some() => {
            Err(AssessmentParseError::MissingField("rating"))
        }
        None => Err(AssessmentParseError::NoAssessment),
    }
}

/// Settings for the verification agent.
#[derive(Debug, Clone, PartialEq)]
pub struct VerifierConfig {
    pub model_id: String,
    pub decoding: Decoding,
    pub evidence_char_budget: usize,
    pub attach_image: bool,
}

impl Default for VerifierConfig {
    fn default() -> Self {
        VerifierConfig {
            model_id: "verifier".into(),
            decoding: Decoding::default(),
            evidence_char_budget: 20_000,
            attach_image: true,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum AssessError {
    #[error("assessment model call failed: {0}")]
    Llm(#[from] LlmError),
    #[error("could not parse assessment after reprompt: {error}")]
    Parse { error: AssessmentParseError, raw: String },
}

/// Result of [`assess`] together with every raw model reply it consumed.
#[derive(Debug)]
pub struct AssessOutcome {
    pub result: Result<Assessment, AssessError>,
    pub raw_texts: Vec<String>,
}

pub(crate) const ASSESSMENT_STEPS: &str = "Assessment Steps:
1. Select a safety \"rating\". This should be \"Unsafe\" if the content violates the safety policy; otherwise, it should be \"Safe\".
2. Assign a policy \"category\". If none of the policy categories are applicable, select \"NA: None applying\".
3. Provide a \"rationale\". Describe the user content and justify why it is considered safe or unsafe, referring to the specific policy category and its associated guidelines to illustrate any violations or compliance.";

const VERIFIER_SYSTEM: &str = "You are a compliance verification agent. You receive an image, a compliance policy and the evidence that analysis tools gathered about the image, and you produce the final safety assessment.";

/// The JSON answer template for `policy`.
pub(crate) fn json_template(policy: &Policy) -> String {
    format!(
        "{{\n    \"rating\": str<\"Unsafe\"|\"Safe\">,\n    \"category\": str<{}>,\n    \"rationale\": str,\n}}",
        policy.category_choices()
    )
}

/// Builds the verifier prompt: policy, instructions, evidence digest, then
/// the image attachment.
pub fn assessment_request(state: &VerificationState, cfg: &VerifierConfig) -> ChatRequest {
    let policy = &state.policy;
    let user = format!(
        "<policy>\n{policy_text}</policy>\n\n<instruction>\nReason step by step over the image, the policy and the evidence below. Cross-check tool findings against each other and against the image, weigh them by their confidence and by their relevance to the policy, and resolve conflicting findings explicitly before deciding.\n{steps}\n</instruction>\n\n<evidence>\n{evidence}\n</evidence>\n\nTo provide your assessment use the following json template:\n{template}",
        policy_text = policy.render_text(),
        steps = ASSESSMENT_STEPS,
        evidence = render_evidence(&state.evidence, cfg.evidence_char_budget),
        template = json_template(policy),
    );
    let mut req = ChatRequest::new(&cfg.model_id, VERIFIER_SYSTEM, user)
        .with_image(cfg.attach_image.then(|| state.image.clone()));
    req.decoding = cfg.decoding;
    req
}

pub(crate) fn reprompt(req: &ChatRequest, problem: &str, format_hint: &str) -> ChatRequest {
    let mut again = req.clone();
    again.user_text.push_str(&format!(
        "\n\nYour previous reply could not be used: {problem}. {format_hint}"
    ));
    again
}

/// Sends `req`, parses the reply with `parse`, and retries once with a
/// corrective note when parsing fails.
pub(crate) fn complete_and_parse<T, E: fmt::Display>(
    llm: &dyn ChatClient,
    req: &ChatRequest,
    format_hint: &str,
    raw_texts: &mut Vec<String>,
    parse: impl Fn(&str) -> Result<T, E>,
) -> Result<Result<T, (E, String)>, LlmError> {
    let first = llm.complete(req)?;
    raw_texts.push(first.text.clone());
    let err = match parse(&first.text) {
        Ok(v) => return Ok(Ok(v)),
        Err(e) => e,
    };
    let again = reprompt(req, &err.to_string(), format_hint);
    let second = llm.complete(&again)?;
    raw_texts.push(second.text.clone());
    Ok(parse(&second.text).map_err(|e| (e, second.text)))
}

/// Runs the verification agent on a terminal state.
pub fn assess(state: &VerificationState, llm: &dyn ChatClient, cfg: &VerifierConfig) -> AssessOutcome {
    let req = assessment_request(state, cfg);
    let mut raw_texts = Vec::new();
    let result = complete_and_parse(
        llm,
        &req,
        "Respond again using exactly the JSON template above.",
        &mut raw_texts,
        |text| parse_assessment(text, &state.policy),
    );
    let result = match result {
        Ok(Ok(a)) => Ok(a),
        Ok(Err((error, raw))) => Err(AssessError::Parse { error, raw }),
        Err(e) => Err(AssessError::Llm(e)),
    };
    AssessOutcome { result, raw_texts }
}
