//! Pulling structured fragments out of free-form model output.

use serde_json::Value;

/// Returns the end (exclusive) of the balanced `{...}` starting at `start`,
/// honouring JSON string literals and escapes.
fn balanced_end(bytes: &[u8], start: usize) -> Option<usize> {
    debug_assert_eq!(bytes[start], b'{');
    let mut depth = 0usize;
    let mut in_string = false;
    let mut escaped = false;
    for (i, &b) in bytes.iter().enumerate().skip(start) {
        if in_string {
            match b {
                _ if escaped => escaped = false,
                b'\\' => escaped = true,
                b'"' => in_string = false,
                _ => {}
            }
            continue;
        }
        match b {
            b'"' => in_string = true,
            b'{' => depth += 1,
            b'}' => {
                depth -= 1;
                if depth == 0 {
                    return Some(i + 1);
                }
            }
            _ => {}
        }
    }
    None
}

/// Removes commas that directly precede `}` or `]` outside string literals.
fn strip_trailing_commas(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    let chars: Vec<char> = s.chars().collect();
    let mut in_string = false;
    let mut escaped = false;
    for (i, &c) in chars.iter().enumerate() {
        if in_string {
            match c {
                _ if escaped => escaped = false,
                '\\' => escaped = true,
                '"' => in_string = false,
                _ => {}
            }
            out.push(c);
            continue;
        }
        if c == '"' {
            in_string = true;
        }
        if c == ',' {
            let next = chars[i + 1..].iter().find(|c| !c.is_whitespace());
            if matches!(next, Some('}') | Some(']')) {
                continue;
            }
        }
        out.push(c);
    }
    out
}

/// Parses `s` as JSON, tolerating trailing commas.
pub fn parse_lenient(s: &str) -> Option<Value> {
    serde_json::from_str(s)
        .ok()
        .or_else(|| serde_json::from_str(&strip_trailing_commas(s)).ok())
}

/// Every JSON object embedded in `text`, in order of appearance. Objects
/// nested inside an already returned object are not returned separately.
pub fn json_objects(text: &str) -> Vec<Value> {
    let bytes = text.as_bytes();
    let mut found = Vec::new();
    let mut pos = 0;
    while pos < bytes.len() {
        if bytes[pos] != b'{' {
            pos += 1;
            continue;
        }
        match balanced_end(bytes, pos).and_then(|end| {
            parse_lenient(&text[pos..end]).filter(Value::is_object).map(|v| (end, v))
        }) {
            Some((end, v)) => {
                found.push(v);
                pos = end;
            }
            None => pos += 1,
        }
    }
    found
}

/// Parses a JSON object that starts at the beginning of `text` (after
/// whitespace). Returns the object and the remaining text.
pub fn leading_json_object(text: &str) -> Option<(Value, &str)> {
    let trimmed = text.trim_start();
    if !trimmed.starts_with('{') {
        return None;
    }
    let end = balanced_end(trimmed.as_bytes(), 0)?;
    let v = parse_lenient(&trimmed[..end]).filter(Value::is_object)?;
    Some((v, &trimmed[end..]))
}

/// Content of the first `<name>...</name>` element, matched case-insensitively.
pub fn tag<'a>(text: &'a str, name: &str) -> Option<&'a str> {
    // ASCII lowercasing keeps byte offsets aligned with `text`.
    let lower = text.to_ascii_lowercase();
    let open = format!("<{}>", name.to_ascii_lowercase());
    let close = format!("</{}>", name.to_ascii_lowercase());
    let start = lower.find(&open)? + open.len();
    let end = start + lower[start..].find(&close)?;
    Some(&text[start..end])
}

/// Trims whitespace and one layer of surrounding quotes.
pub fn unquote(s: &str) -> &str {
    let t = s.trim();
    for q in ['"', '\'', '`'] {
        if let Some(inner) = t.strip_prefix(q).and_then(|x| x.strip_suffix(q)) {
            return inner.trim();
        }
    }
    t
}
