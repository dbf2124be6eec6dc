//! Prompt templates with `<<VARIABLE: name>>` placeholders.

use std::fs;
use std::path::Path;

const CONTRIBUTIONS: &str = include_str!("../../prompts/contributions.txt");
const PREREQUISITES: &str = include_str!("../../prompts/prerequisites.txt");
const ALIGNMENT: &str = include_str!("../../prompts/alignment.txt");
const RANKING: &str = include_str!("../../prompts/ranking.txt");

pub const VAR_PAPER_TEXT: &str = "paper_text";
pub const VAR_CONTRIBUTION: &str = "contribution (JSON)";
pub const VAR_OTHER_CONTRIBUTIONS: &str = "other_contributions (JSON)";
pub const VAR_SOURCE_WITH_PREREQUISITE: &str = "source_contribution_with_prerequisite (JSON)";
pub const VAR_CITED_RECORD: &str = "cited_paper_record (JSON)";
pub const VAR_TARGET: &str = "target (JSON)";
pub const VAR_CANDIDATES: &str = "candidates (JSON)";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptSet {
    pub contributions: String,
    pub prerequisites: String,
    pub alignment: String,
    pub ranking: String,
}

impl Default for PromptSet {
    fn default() -> Self {
        PromptSet {
            contributions: CONTRIBUTIONS.to_string(),
            prerequisites: PREREQUISITES.to_string(),
            alignment: ALIGNMENT.to_string(),
            ranking: RANKING.to_string(),
        }
    }
}

impl PromptSet {
    /// Built-in templates, overridden by any of `contributions.txt`,
    /// `prerequisites.txt`, `alignment.txt`, `ranking.txt` found in `dir`.
    pub fn load_dir(dir: &Path) -> std::io::Result<Self> {
        let mut set = PromptSet::default();
        for (file, slot) in [
            ("contributions.txt", &mut set.contributions),
            ("prerequisites.txt", &mut set.prerequisites),
            ("alignment.txt", &mut set.alignment),
            ("ranking.txt", &mut set.ranking),
        ] {
            let path = dir.join(file);
            if path.exists() {
                *slot = fs::read_to_string(path)?;
            }
        }
        Ok(set)
    }
}

/// Substitutes placeholders in one left-to-right pass. Values are inserted
/// literally and never rescanned, so paper text that happens to contain a
/// placeholder is left alone. Unknown placeholders stay as they are.
pub fn render(template: &str, vars: &[(&str, &str)]) -> String {
    const OPEN: &str = "<<VARIABLE: ";
    const CLOSE: &str = ">>";
    let mut out = String::with_capacity(template.len() + vars.iter().map(|(_, v)| v.len()).sum::<usize>());
    let mut rest = template;
    while let Some(start) = rest.find(OPEN) {
        out.push_str(&rest[..start]);
        let after = &rest[start + OPEN.len()..];
        match after.find(CLOSE) {
            Some(end) => {
                let name = &after[..end];
                match vars.iter().find(|(k, _)| *k == name) {
                    Some((_, value)) => out.push_str(value),
                    None => out.push_str(&rest[start..start + OPEN.len() + end + CLOSE.len()]),
                }
                rest = &after[end + CLOSE.len()..];
            }
            None => {
                out.push_str(&rest[start..]);
                rest = "";
            }
        }
    }
    out.push_str(rest);
    out
}
