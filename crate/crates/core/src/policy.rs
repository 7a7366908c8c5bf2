//! Compliance policies as structured category taxonomies.
//!
//! A [`Policy`] is loaded from a TOML (or JSON) document and rendered into the
//! text block the agents receive inside their prompts. Rendering is
//! deterministic and can be parsed back with [`Policy::parse_rendered`].

use std::collections::HashSet;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// Code used for the distinguished "no category applies" label.
pub const NA_CODE: &str = "NA";

#[derive(Debug, thiserror::Error)]
pub enum PolicyError {
    #[error("failed to read policy file {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed policy document: {0}")]
    Malformed(String),
    #[error("policy has no categories")]
    NoCategories,
    #[error("duplicate category code {0:?}")]
    DuplicateCode(String),
    #[error("category {0:?} has an empty code")]
    EmptyCode(String),
    #[error("category {0:?} has no \"should not\" rules")]
    EmptyShouldNot(String),
    #[error("na_label {0:?} is missing or collides with a category code")]
    InvalidNaLabel(String),
    #[error("unknown category {0:?}")]
    UnknownCategory(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolicyCategory {
    pub code: String,
    pub title: String,
    pub should_not: Vec<String>,
    #[serde(default)]
    pub can: Vec<String>,
}

impl PolicyCategory {
    /// `"O3: Sexual Content"`
    pub fn label(&self) -> String {
        format!("{}: {}", self.code, self.title)
    }
}

/// An ordered category taxonomy plus the label used when nothing applies.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Policy {
    pub id: String,
    pub name: String,
    pub na_label: String,
    /// Introductory instruction placed ahead of the category list in
    /// assessment prompts. Taxonomies phrase this differently.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preamble: Option<String>,
    pub categories: Vec<PolicyCategory>,
}

/// The category assigned by an assessment: a policy code or NA.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum CategoryLabel {
    Code(String),
    Na,
}

impl CategoryLabel {
    pub fn code(&self) -> &str {
        match self {
            CategoryLabel::Code(c) => c,
            CategoryLabel::Na => NA_CODE,
        }
    }

    pub fn is_na(&self) -> bool {
        matches!(self, CategoryLabel::Na)
    }
}

impl fmt::Display for CategoryLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl Serialize for CategoryLabel {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.code())
    }
}

impl<'de> Deserialize<'de> for CategoryLabel {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let raw = String::deserialize(d)?;
        Ok(CategoryLabel::from_code_loose(&raw))
    }
}

impl CategoryLabel {
    /// Parses a label without a policy at hand: `NA...` maps to [`CategoryLabel::Na`],
    /// anything else keeps its uppercased leading code token.
    pub fn from_code_loose(raw: &str) -> Self {
        let token = leading_token(raw);
        if token.eq_ignore_ascii_case(NA_CODE) {
            CategoryLabel::Na
        } else {
            CategoryLabel::Code(token.to_ascii_uppercase())
        }
    }
}

fn leading_token(raw: &str) -> &str {
    let trimmed = trim_label(raw);
    match trimmed.find(':') {
        Some(i) => trim_label(&trimmed[..i]),
        None => trimmed,
    }
}

fn trim_label(s: &str) -> &str {
    s.trim_matches(|c: char| c.is_whitespace() || matches!(c, '"' | '\'' | '`' | '(' | ')'))
}

impl Policy {
    pub fn load(path: impl AsRef<Path>) -> Result<Policy, PolicyError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| PolicyError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let is_json = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
        if is_json {
            Policy::from_json_str(&text)
        } else {
            Policy::from_toml_str(&text)
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Policy, PolicyError> {
        let policy: Policy =
            toml::from_str(text).map_err(|e| PolicyError::Malformed(e.to_string()))?;
        policy.validate()?;
        Ok(policy)
    }

    pub fn from_json_str(text: &str) -> Result<Policy, PolicyError> {
        let policy: Policy =
            serde_json::from_str(text).map_err(|e| PolicyError::Malformed(e.to_string()))?;
        policy.validate()?;
        Ok(policy)
    }

    pub fn validate(&self) -> Result<(), PolicyError> {
        if self.categories.is_empty() {
            return Err(PolicyError::NoCategories);
        }
        let mut seen = HashSet::new();
        for c in &self.categories {
            if c.code.trim().is_empty() {
                return Err(PolicyError::EmptyCode(c.title.clone()));
            }
            if !seen.insert(c.code.to_ascii_uppercase()) {
                return Err(PolicyError::DuplicateCode(c.code.clone()));
            }
            if c.should_not.is_empty() {
                return Err(PolicyError::EmptyShouldNot(c.code.clone()));
            }
        }
        let na = leading_token(&self.na_label);
        if na.is_empty()
            || !na.eq_ignore_ascii_case(NA_CODE)
            || seen.contains(&na.to_ascii_uppercase())
        {
            return Err(PolicyError::InvalidNaLabel(self.na_label.clone()));
        }
        Ok(())
    }

    pub fn category(&self, code: &str) -> Option<&PolicyCategory> {
        self.categories.iter().find(|c| c.code.eq_ignore_ascii_case(code))
    }

    /// Full display label, e.g. `"O5: Criminal Planning"` or the NA label.
    pub fn label_text(&self, label: &CategoryLabel) -> String {
        match label {
            CategoryLabel::Na => self.na_label.clone(),
            CategoryLabel::Code(code) => match self.category(code) {
                Some(c) => c.label(),
                None => code.clone(),
            },
        }
    }

    /// All valid labels in policy order, NA last.
    pub fn labels(&self) -> Vec<CategoryLabel> {
        self.categories
            .iter()
            .map(|c| CategoryLabel::Code(c.code.clone()))
            .chain(std::iter::once(CategoryLabel::Na))
            .collect()
    }

    /// Renders the category list as prompt text.
    pub fn render_text(&self) -> String {
        let mut out = String::new();
        for (i, c) in self.categories.iter().enumerate() {
            if i > 0 {
                out.push('\n');
            }
            out.push_str(&c.label());
            out.push('\n');
            out.push_str("Should not:\n");
            for rule in &c.should_not {
                out.push_str("- ");
                out.push_str(rule);
                out.push('\n');
            }
            if !c.can.is_empty() {
                out.push_str("Can:\n");
                for rule in &c.can {
                    out.push_str("- ");
                    out.push_str(rule);
                    out.push('\n');
                }
            }
        }
        out
    }

    /// `"O1: ..."|"O2: ..."|...|"NA: None applying"`, used in answer-format
    /// instructions.
    pub fn category_choices(&self) -> String {
        self.categories
            .iter()
            .map(|c| format!("\"{}\"", c.label()))
            .chain(std::iter::once(format!("\"{}\"", self.na_label)))
            .collect::<Vec<_>>()
            .join("|")
    }

    /// Recovers a policy from text produced by [`Policy::render_text`].
    pub fn parse_rendered(
        id: &str,
        name: &str,
        na_label: &str,
        text: &str,
    ) -> Result<Policy, PolicyError> {
        #[derive(PartialEq)]
        enum Section {
            None,
            ShouldNot,
            Can,
        }
        let mut categories: Vec<PolicyCategory> = Vec::new();
        let mut section = Section::None;
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim_end();
            if line.is_empty() {
                continue;
            }
            if let Some(rule) = line.strip_prefix("- ") {
                let current = categories.last_mut().ok_or_else(|| {
                    PolicyError::Malformed(format!("line {}: rule before header", lineno + 1))
                })?;
                match section {
                    Section::ShouldNot => current.should_not.push(rule.to_string()),
                    Section::Can => current.can.push(rule.to_string()),
                    Section::None => {
                        return Err(PolicyError::Malformed(format!(
                            "line {}: rule outside a rule list",
                            lineno + 1
                        )))
                    }
                }
            } else if line == "Should not:" {
                section = Section::ShouldNot;
            } else if line == "Can:" {
                section = Section::Can;
            } else {
                let (code, title) = line.split_once(": ").ok_or_else(|| {
                    PolicyError::Malformed(format!("line {}: expected \"code: title\"", lineno + 1))
                })?;
                categories.push(PolicyCategory {
                    code: code.to_string(),
                    title: title.to_string(),
                    should_not: Vec::new(),
                    can: Vec::new(),
                });
                section = Section::None;
            }
        }
        let policy = Policy {
            id: id.to_string(),
            name: name.to_string(),
            na_label: na_label.to_string(),
            preamble: None,
            categories,
        };
        policy.validate()?;
        Ok(policy)
    }

    /// Maps free-form model output such as `"O3: Sexual Content"` onto a label.
    ///
    /// Matching is case-insensitive on the token before the first `:`. Bare
    /// numbers and `Category N` resolve to `ON` when the policy numbers its
    /// codes that way.
    pub fn normalize_category(&self, raw: &str) -> Result<CategoryLabel, PolicyError> {
        let token = leading_token(raw);
        if token.is_empty() {
            return Err(PolicyError::UnknownCategory(raw.to_string()));
        }
        if token.eq_ignore_ascii_case(NA_CODE) {
            return Ok(CategoryLabel::Na);
        }
        if let Some(c) = self.category(token) {
            return Ok(CategoryLabel::Code(c.code.clone()));
        }
        let digits = token
            .strip_prefix("Category ")
            .or_else(|| token.strip_prefix("category "))
            .unwrap_or(token)
            .trim();
        if !digits.is_empty() && digits.bytes().all(|b| b.is_ascii_digit()) {
            let n: u32 = digits.parse().map_err(|_| PolicyError::UnknownCategory(raw.into()))?;
            if let Some(c) = self.category(&format!("O{n}")) {
                return Ok(CategoryLabel::Code(c.code.clone()));
            }
        }
        Err(PolicyError::UnknownCategory(raw.to_string()))
    }
}

pub fn bundled_policy_dir() -> std::path::PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("policies")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn llavaguard() -> Policy {
        Policy::load(bundled_policy_dir().join("llavaguard.toml")).unwrap()
    }

    fn unsafebench() -> Policy {
        Policy::load(bundled_policy_dir().join("unsafebench.toml")).unwrap()
    }

    #[test]
    fn bundled_policies_have_expected_taxonomies() {
        let lg = llavaguard();
        let codes: Vec<_> = lg.categories.iter().map(|c| c.code.as_str()).collect();
        assert_eq!(codes, ["O1", "O2", "O3", "O4", "O5", "O6", "O7", "O8", "O9"]);
        assert_eq!(lg.na_label, "NA: None applying");
        assert_eq!(unsafebench().categories.len(), 11);
    }

    #[test]
    fn duplicate_code_is_rejected() {
        let doc = r#"
id = "x"
name = "x"
na_label = "NA: None applying"
[[categories]]
code = "O1"
title = "A"
should_not = ["a"]
[[categories]]
code = "O1"
title = "B"
should_not = ["b"]
"#;
        assert!(matches!(
            Policy::from_toml_str(doc),
            Err(PolicyError::DuplicateCode(c)) if c == "O1"
        ));
    }

    #[test]
    fn empty_should_not_and_empty_policy_are_rejected() {
        let doc = r#"
id = "x"
name = "x"
na_label = "NA: None applying"
[[categories]]
code = "O1"
title = "A"
should_not = []
"#;
        assert!(matches!(Policy::from_toml_str(doc), Err(PolicyError::EmptyShouldNot(_))));
        let empty = "id = \"x\"\nname = \"x\"\nna_label = \"NA\"\ncategories = []\n";
        assert!(matches!(Policy::from_toml_str(empty), Err(PolicyError::NoCategories)));
        assert!(matches!(
            Policy::from_toml_str("id = 3"),
            Err(PolicyError::Malformed(_))
        ));
    }

    #[test]
    fn na_label_must_be_distinct() {
        let doc = r#"
id = "x"
name = "x"
na_label = "O1: nothing"
[[categories]]
code = "O1"
title = "A"
should_not = ["a"]
"#;
        assert!(matches!(Policy::from_toml_str(doc), Err(PolicyError::InvalidNaLabel(_))));
    }

    #[test]
    fn render_starts_with_first_header_and_is_stable() {
        let p = llavaguard();
        let text = p.render_text();
        assert_eq!(text.lines().next(), Some("O1: Hate, Humiliation, Harassment"));
        assert_eq!(text, p.render_text());
    }

    #[test]
    fn render_omits_empty_can_block() {
        let p = Policy {
            id: "t".into(),
            name: "t".into(),
            na_label: "NA: None applying".into(),
            preamble: None,
            categories: vec![PolicyCategory {
                code: "O1".into(),
                title: "Only".into(),
                should_not: vec!["do the bad thing".into()],
                can: vec![],
            }],
        };
        assert_eq!(p.render_text(), "O1: Only\nShould not:\n- do the bad thing\n");
    }

    #[test]
    fn rendered_text_round_trips() {
        for p in [llavaguard(), unsafebench()] {
            let back = Policy::parse_rendered(&p.id, &p.name, &p.na_label, &p.render_text()).unwrap();
            assert_eq!(back.categories, p.categories);
        }
    }

    #[test]
    fn normalize_examples() {
        let p = llavaguard();
        assert_eq!(
            p.normalize_category("O3: Sexual Content").unwrap(),
            CategoryLabel::Code("O3".into())
        );
        assert_eq!(p.normalize_category("na: none applying").unwrap(), CategoryLabel::Na);
        assert_eq!(p.normalize_category("\"o6\"").unwrap(), CategoryLabel::Code("O6".into()));
        assert!(matches!(
            p.normalize_category("Q7: Gibberish"),
            Err(PolicyError::UnknownCategory(raw)) if raw == "Q7: Gibberish"
        ));
        assert!(p.normalize_category("   ").is_err());
    }

    #[test]
    fn normalize_accepts_unprefixed_unsafebench_numbers() {
        let p = unsafebench();
        let ten = CategoryLabel::Code("O10".into());
        assert_eq!(p.normalize_category("10: Public and Personal Health").unwrap(), ten);
        assert_eq!(p.normalize_category("Category 10: Public and Personal Health").unwrap(), ten);
        assert_eq!(
            p.normalize_category("11: \"Spam\"").unwrap(),
            CategoryLabel::Code("O11".into())
        );
        assert_eq!(p.normalize_category("O4:Self-Harm").unwrap(), CategoryLabel::Code("O4".into()));
        assert!(p.normalize_category("12: Other").is_err());
    }

    #[test]
    fn normalize_is_identity_on_rendered_labels() {
        for p in [llavaguard(), unsafebench()] {
            for c in &p.categories {
                let label = p.normalize_category(&c.label()).unwrap();
                assert_eq!(label, CategoryLabel::Code(c.code.clone()));
                let again = p.normalize_category(&p.label_text(&label)).unwrap();
                assert_eq!(again, label);
            }
            assert_eq!(p.normalize_category(&p.na_label).unwrap(), CategoryLabel::Na);
        }
    }

    #[test]
    fn category_label_serde_uses_codes() {
        let json = serde_json::to_string(&vec![CategoryLabel::Code("O5".into()), CategoryLabel::Na])
            .unwrap();
        assert_eq!(json, r#"["O5","NA"]"#);
        let back: Vec<CategoryLabel> = serde_json::from_str(r#"["o5: Criminal Planning","NA"]"#).unwrap();
        assert_eq!(back, vec![CategoryLabel::Code("O5".into()), CategoryLabel::Na]);
    }
}
