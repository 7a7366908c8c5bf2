use std::collections::{BTreeMap, HashMap};
use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{ChatClient, ChatRequest, ChatResponse, LlmError, Usage};

/// How a script entry is matched against incoming requests.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum ScriptKey {
    /// Exact request fingerprint (see [`ChatRequest::fingerprint`]).
    Fingerprint(String),
    /// Position in replay order. Scoped entries advance per image id, which
    /// keeps replay deterministic when many images run concurrently.
    Ordinal { image: Option<String>, index: usize },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScriptEntry {
    pub key: ScriptKey,
    pub response_text: String,
}

impl ScriptEntry {
    pub fn ordinal(index: usize, text: impl Into<String>) -> Self {
        ScriptEntry {
            key: ScriptKey::Ordinal { image: None, index },
            response_text: text.into(),
        }
    }

    pub fn scoped(image: impl Into<String>, index: usize, text: impl Into<String>) -> Self {
        ScriptEntry {
            key: ScriptKey::Ordinal { image: Some(image.into()), index },
            response_text: text.into(),
        }
    }

    pub fn keyed(fingerprint: impl Into<String>, text: impl Into<String>) -> Self {
        ScriptEntry {
            key: ScriptKey::Fingerprint(fingerprint.into()),
            response_text: text.into(),
        }
    }
}

/// One line of a script file.
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScriptRecord {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    key: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    image: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    index: Option<usize>,
    response_text: String,
}

/// Replays predetermined responses.
///
/// A request is answered by the entry matching its fingerprint when one
/// exists; otherwise by the next ordinal entry scoped to the request's image,
/// falling back to the unscoped ordinal sequence.
#[derive(Debug, Default)]
pub struct ScriptedClient {
    keyed: HashMap<String, String>,
    ordinal: HashMap<Option<String>, Vec<String>>,
    cursors: Mutex<HashMap<Option<String>, usize>>,
}

impl ScriptedClient {
    pub fn new(entries: Vec<ScriptEntry>) -> Result<Self, LlmError> {
        let mut keyed = HashMap::new();
        let mut ordinal: HashMap<Option<String>, BTreeMap<usize, String>> = HashMap::new();
        for entry in entries {
            match entry.key {
                ScriptKey::Fingerprint(k) => {
                    if keyed.insert(k.clone(), entry.response_text).is_some() {
                        return Err(LlmError::Config(format!("duplicate script key {k}")));
                    }
                }
                ScriptKey::Ordinal { image, index } => {
                    let seq = ordinal.entry(image.clone()).or_default();
                    if seq.insert(index, entry.response_text).is_some() {
                        return Err(LlmError::Config(format!(
                            "duplicate script index {index} for scope {image:?}"
                        )));
                    }
                }
            }
        }
        let mut sequences = HashMap::new();
        for (scope, seq) in ordinal {
            if let Some((pos, idx)) = seq.keys().enumerate().find(|(pos, idx)| pos != *idx) {
                return Err(LlmError::Config(format!(
                    "script indices for scope {scope:?} are not contiguous: expected {pos}, found {idx}"
                )));
            }
            sequences.insert(scope, seq.into_values().collect());
        }
        Ok(ScriptedClient { keyed, ordinal: sequences, cursors: Mutex::new(HashMap::new()) })
    }

    /// Convenience for tests: an unscoped ordinal script.
    pub fn from_texts<I, S>(texts: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let entries = texts.into_iter().enumerate().map(|(i, t)| ScriptEntry::ordinal(i, t)).collect();
        ScriptedClient::new(entries).expect("sequential indices are always valid")
    }

    /// Loads a line-delimited script. Each line carries either `key` or
    /// `index` (optionally with `image`) plus `response_text`.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, LlmError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| LlmError::Config(format!("cannot read script {}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| match e {
            LlmError::Config(msg) => LlmError::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn parse(text: &str) -> Result<Self, LlmError> {
        let mut entries = Vec::new();
        for (n, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let rec: ScriptRecord = serde_json::from_str(line)
                .map_err(|e| LlmError::Config(format!("line {}: {e}", n + 1)))?;
            let key = match (rec.key, rec.index) {
                (Some(k), None) if rec.image.is_none() => ScriptKey::Fingerprint(k),
                (None, Some(index)) => ScriptKey::Ordinal { image: rec.image, index },
                _ => {
                    return Err(LlmError::Config(format!(
                        "line {}: exactly one of \"key\" or \"index\" is required",
                        n + 1
                    )))
                }
            };
            entries.push(ScriptEntry { key, response_text: rec.response_text });
        }
        Self::new(entries)
    }

    /// Serializes entries into the script file format.
    pub fn render(entries: &[ScriptEntry]) -> String {
        let mut out = String::new();
        for e in entries {
            let rec = match &e.key {
                ScriptKey::Fingerprint(k) => ScriptRecord {
                    key: Some(k.clone()),
                    image: None,
                    index: None,
                    response_text: e.response_text.clone(),
                },
                ScriptKey::Ordinal { image, index } => ScriptRecord {
                    key: None,
                    image: image.clone(),
                    index: Some(*index),
                    response_text: e.response_text.clone(),
                },
            };
            out.push_str(&serde_json::to_string(&rec).expect("script record serializes"));
            out.push('\n');
        }
        out
    }

    /// Rewinds every ordinal cursor.
    pub fn reset(&self) {
        self.cursors.lock().expect("cursor lock").clear();
    }

    /// Image scopes that carry ordinal entries.
    pub fn scopes(&self) -> impl Iterator<Item = &str> {
        self.ordinal.keys().filter_map(|k| k.as_deref())
    }

    /// All response texts, in no particular order.
    pub fn response_texts(&self) -> impl Iterator<Item = (Option<&str>, &str)> {
        self.keyed
            .values()
            .map(|t| (None, t.as_str()))
            .chain(self.ordinal.iter().flat_map(|(scope, seq)| {
                seq.iter().map(move |t| (scope.as_deref(), t.as_str()))
            }))
    }

    fn next_ordinal(&self, scope: Option<String>) -> Option<String> {
        let seq = self.ordinal.get(&scope)?;
        let mut cursors = self.cursors.lock().expect("cursor lock");
        let cursor = cursors.entry(scope).or_insert(0);
        let text = seq.get(*cursor)?.clone();
        *cursor += 1;
        Some(text)
    }
}

fn word_count(s: &str) -> u64 {
    s.split_whitespace().count() as u64
}

impl ChatClient for ScriptedClient {
    fn complete(&self, req: &ChatRequest) -> Result<ChatResponse, LlmError> {
        req.validate()?;
        let fingerprint = req.fingerprint();
        let image = req.image.as_ref().map(|i| i.id.clone());
        let text = match self.keyed.get(&fingerprint) {
            Some(t) => Some(t.clone()),
            None => {
                let scoped = image.clone().filter(|id| self.ordinal.contains_key(&Some(id.clone())));
                match scoped {
                    Some(id) => self.next_ordinal(Some(id)),
                    None => self.next_ordinal(None),
                }
            }
        };
        let text = text.ok_or(LlmError::ScriptExhausted { fingerprint, image })?;
        Ok(ChatResponse {
            usage: Usage {
                input_tokens: word_count(&req.system_text) + word_count(&req.user_text),
                output_tokens: word_count(&text),
            },
            text,
            latency_ms: 0,
        })
    }
}
