use serde_json::Value;

/// A response with no parseable JSON. Carries the raw text so the caller can
/// report it back to the model.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("no parseable JSON in response ({} bytes)", raw.len())]
pub struct ParseFailure {
    pub raw: String,
}

/// Strips an info string such as `json` from the first line of a fence body.
fn fence_body(segment: &str) -> &str {
    if let Some((first, rest)) = segment.split_once('\n') {
        let tag = first.trim();
        if !tag.is_empty() && tag.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-') {
            return rest;
        }
    }
    segment
}

/// JSON inside the last well-formed triple-backtick fence; when the response
/// has no fence at all, the whole body.
pub fn parse_fenced_json(response: &str) -> Result<Value, ParseFailure> {
    let segments: Vec<&str> = response.split("```").collect();
    // Fence bodies sit at odd positions; an unterminated trailing fence has no closing pair.
    let fenced: Vec<&str> = segments
        .iter()
        .enumerate()
        .filter(|(i, _)| i % 2 == 1 && i + 1 < segments.len())
        .map(|(_, s)| fence_body(s))
        .collect();
    if fenced.is_empty() {
        return serde_json::from_str(response.trim()).map_err(|_| ParseFailure {
            raw: response.to_string(),
        });
    }
    fenced
        .iter()
        .rev()
        .find_map(|body| serde_json::from_str(body.trim()).ok())
        .ok_or_else(|| ParseFailure {
            raw: response.to_string(),
        })
}
