//! The three generation-backed stages and their response validators.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::backend::{GenParams, GenerationBackend, Usage};
use super::fenced::parse_fenced_json;
use super::prompts::{self, render, PromptSet};
use super::{PipelineError, Stage};
use crate::graph::{lenient, Contribution, CorpusId, Match, PaperRef, Prerequisite, Reference, TypeTag};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    /// Extra attempts after a schema violation.
    pub retries: usize,
    pub params: GenParams,
    /// Paper text beyond this many characters is cut off.
    pub max_text_chars: Option<usize>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            retries: 2,
            params: GenParams::default(),
            max_text_chars: None,
        }
    }
}

/// A paper handed to the extractor.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PaperInput {
    pub corpus_id: CorpusId,
    pub title: String,
    pub year: i32,
    pub full_text: String,
}

/// A contribution in the shape the prompts exchange.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtractedContribution {
    #[serde(deserialize_with = "lenient::string")]
    pub key: String,
    pub name: String,
    pub description: String,
    #[serde(rename = "contribution_type", alias = "types", serialize_with = "types_as_prompted")]
    pub types: Vec<TypeTag>,
    pub sections: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub prerequisites: Vec<Prerequisite>,
}

fn types_as_prompted<S: serde::Serializer>(types: &[TypeTag], s: S) -> Result<S::Ok, S::Error> {
    s.collect_seq(
        types
            .iter()
            .map(|t| json!({"type": t.category, "justification": t.explanation})),
    )
}

/// Per-paper accounting, filled in by every backend call.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Tally {
    pub usage: Usage,
    pub warnings: Vec<String>,
}

/// The dependent side of an alignment call.
#[derive(Debug, Clone, Copy)]
pub struct AlignSource<'a> {
    pub paper: &'a CorpusId,
    pub name: &'a str,
    pub description: &'a str,
}

pub struct Pipeline<'a> {
    backend: &'a dyn GenerationBackend,
    prompts: PromptSet,
    config: PipelineConfig,
}

fn retry_prompt(original: &str, error: &str) -> String {
    format!(
        "{original}\n\n# Correction\nYour previous response could not be used: {error}\nPlease answer again, following the required JSON response format exactly.\n"
    )
}

fn pretty(v: &impl Serialize) -> String {
    serde_json::to_string_pretty(v).expect("serializable prompt payload")
}

fn field<'v>(doc: &'v Value, key: &str) -> Result<&'v Vec<Value>, String> {
    doc.get(key)
        .and_then(Value::as_array)
        .ok_or_else(|| format!("expected a JSON object with a `{key}` list"))
}

#[derive(Deserialize)]
struct RawContribution {
    #[serde(default)]
    name: String,
    #[serde(default)]
    description: String,
    #[serde(alias = "types", default)]
    contribution_type: Vec<TypeTag>,
    #[serde(default)]
    sections: Vec<String>,
}

#[derive(Deserialize)]
struct RawSplit {
    #[serde(default, deserialize_with = "lenient::opt_id")]
    key: Option<String>,
    name: Option<String>,
    description: Option<String>,
    #[serde(alias = "types")]
    contribution_type: Option<Vec<TypeTag>>,
    sections: Option<Vec<String>>,
    #[serde(alias = "prerequisites_list", default)]
    prerequisites: Vec<Prerequisite>,
}

fn check_labels(what: &str, types: &[TypeTag], sections: &[String]) -> Result<(), String> {
    if types.is_empty() || types.iter().any(|t| t.category.trim().is_empty()) {
        return Err(format!("{what}: `contribution_type` needs at least one non-empty `type`"));
    }
    if sections.is_empty() || sections.iter().all(|s| s.trim().is_empty()) {
        return Err(format!("{what}: `sections` needs at least one section"));
    }
    Ok(())
}

fn is_split_of(key: &str, parent: &str) -> bool {
    key.strip_prefix(parent)
        .and_then(|rest| rest.strip_prefix('-'))
        .is_some_and(|n| !n.is_empty() && n.chars().all(|c| c.is_ascii_digit()))
}

fn validate_contributions(text: &str) -> Result<Vec<ExtractedContribution>, String> {
    let doc = parse_fenced_json(text).map_err(|e| e.to_string())?;
    let mut out = Vec::new();
    for (i, item) in field(&doc, "contributions")?.iter().enumerate() {
        let raw: RawContribution =
            serde_json::from_value(item.clone()).map_err(|e| format!("contribution {i}: {e}"))?;
        if raw.name.trim().is_empty() || raw.description.trim().is_empty() {
            return Err(format!("contribution {i}: `name` and `description` must be non-empty"));
        }
        check_labels(&format!("contribution {i}"), &raw.contribution_type, &raw.sections)?;
        out.push(ExtractedContribution {
            key: i.to_string(),
            name: raw.name,
            description: raw.description,
            types: raw.contribution_type,
            sections: raw.sections,
            prerequisites: Vec::new(),
        });
    }
    Ok(out)
}

fn validate_prerequisites(
    text: &str,
    input: &ExtractedContribution,
    others: &[ExtractedContribution],
) -> Result<Vec<ExtractedContribution>, String> {
    let doc = parse_fenced_json(text).map_err(|e| e.to_string())?;
    let items = field(&doc, "contributions")?;
    if items.is_empty() {
        return Err(format!("the response must contain contribution `{}`", input.key));
    }
    let mut raws = Vec::with_capacity(items.len());
    for (i, item) in items.iter().enumerate() {
        let raw: RawSplit =
            serde_json::from_value(item.clone()).map_err(|e| format!("contribution {i}: {e}"))?;
        raws.push(raw);
    }
    let split = raws.len() > 1 || raws[0].key.as_deref().is_some_and(|k| k != input.key);
    let mut keys = Vec::with_capacity(raws.len());
    for (i, raw) in raws.iter().enumerate() {
        let key = match &raw.key {
            Some(k) => k.clone(),
            None if raws.len() == 1 => input.key.clone(),
            None => return Err(format!("contribution {i}: missing `key`")),
        };
        let ok = if split { is_split_of(&key, &input.key) } else { key == input.key };
        if !ok {
            return Err(format!(
                "key `{key}` must be `{0}` or a split of it such as `{0}-1`",
                input.key
            ));
        }
        if keys.contains(&key) {
            return Err(format!("duplicate key `{key}`"));
        }
        keys.push(key);
    }

    let mut out = Vec::with_capacity(raws.len());
    for (raw, key) in raws.into_iter().zip(&keys) {
        let inherit = key == &input.key;
        let name = raw.name.filter(|s| !s.trim().is_empty());
        let description = raw.description.filter(|s| !s.trim().is_empty());
        let (name, description) = match (name, description) {
            (Some(n), Some(d)) => (n, d),
            (n, d) if inherit => (
                n.unwrap_or_else(|| input.name.clone()),
                d.unwrap_or_else(|| input.description.clone()),
            ),
            _ => return Err(format!("split contribution `{key}` needs a `name` and `description`")),
        };
        let types = raw.contribution_type.unwrap_or_else(|| input.types.clone());
        let sections = raw.sections.unwrap_or_else(|| input.sections.clone());
        check_labels(&format!("contribution `{key}`"), &types, &sections)?;

        let internal_targets: HashSet<&str> = others
            .iter()
            .map(|o| o.key.as_str())
            .filter(|k| *k != input.key)
            .chain(keys.iter().map(String::as_str).filter(|k| *k != key))
            .collect();
        let mut prerequisites = raw.prerequisites;
        for (p, prereq) in prerequisites.iter_mut().enumerate() {
            if prereq.name.trim().is_empty() {
                return Err(format!("contribution `{key}` prerequisite {p}: empty `name`"));
            }
            for r in prereq.references.iter_mut() {
                match r {
                    Reference::Internal(internal) => {
                        let target = internal.contribution_id.trim();
                        if !internal_targets.contains(target) {
                            return Err(format!(
                                "contribution `{key}` prerequisite {p}: internal `contribution_key` `{target}` is not the key of another contribution of this paper"
                            ));
                        }
                    }
                    Reference::Paper(paper) => {
                        if paper.paper_title.trim().is_empty() && paper.corpus_id.is_none() {
                            return Err(format!(
                                "contribution `{key}` prerequisite {p}: paper reference needs a `paper_title` or `corpus_id`"
                            ));
                        }
                        paper.matches.clear();
                    }
                    Reference::Artifact(a) => {
                        if a.url.trim().is_empty() {
                            return Err(format!("contribution `{key}` prerequisite {p}: `other` reference needs a `url`"));
                        }
                    }
                }
            }
        }
        out.push(ExtractedContribution {
            key: key.clone(),
            name,
            description,
            types,
            sections,
            prerequisites,
        });
    }
    Ok(out)
}

fn validate_alignment(text: &str, allowed: &HashSet<String>) -> Result<Vec<Match>, String> {
    let doc = parse_fenced_json(text).map_err(|e| e.to_string())?;
    let mut out: Vec<Match> = Vec::new();
    for (i, item) in field(&doc, "matches")?.iter().enumerate() {
        let m: Match = serde_json::from_value(item.clone()).map_err(|e| format!("match {i}: {e}"))?;
        if !allowed.contains(&m.contribution_id) {
            return Err(format!(
                "match {i}: `contribution_key` `{}` is not one of the cited paper's keys",
                m.contribution_id
            ));
        }
        if !out.iter().any(|o| o.contribution_id == m.contribution_id) {
            out.push(m);
        }
    }
    Ok(out)
}

impl<'a> Pipeline<'a> {
    pub fn new(backend: &'a dyn GenerationBackend, prompts: PromptSet, config: PipelineConfig) -> Self {
        Pipeline {
            backend,
            prompts,
            config,
        }
    }

    pub fn backend(&self) -> &dyn GenerationBackend {
        self.backend
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    pub fn prompts(&self) -> &PromptSet {
        &self.prompts
    }

    /// One backend call per attempt, at most `retries + 1` attempts.
    fn call_validated<T>(
        &self,
        paper: &CorpusId,
        stage: Stage,
        prompt: &str,
        tally: &mut Tally,
        validate: impl Fn(&str) -> Result<T, String>,
    ) -> Result<T, PipelineError> {
        let attempts = self.config.retries + 1;
        let mut current = prompt.to_string();
        let mut last_error = String::new();
        for attempt in 1..=attempts {
            let out = self
                .backend
                .generate(&current, &self.config.params)
                .map_err(|source| PipelineError::Backend {
                    paper: paper.clone(),
                    stage,
                    source,
                })?;
            tally.usage += out.usage;
            match validate(&out.text) {
                Ok(v) => return Ok(v),
                Err(e) => {
                    log::debug!("{paper}: {stage} attempt {attempt} rejected: {e}");
                    current = retry_prompt(prompt, &e);
                    last_error = e;
                }
            }
        }
        Err(PipelineError::StageFailure {
            paper: paper.clone(),
            stage,
            attempts,
            last_error,
        })
    }

    fn paper_text<'t>(&self, paper: &'t PaperInput, tally: &mut Tally) -> &'t str {
        let text = paper.full_text.as_str();
        match self.config.max_text_chars {
            Some(limit) => match text.char_indices().nth(limit) {
                Some((cut, _)) => {
                    tally.warnings.push(format!(
                        "{}: text truncated to {limit} of {} characters",
                        paper.corpus_id,
                        text.chars().count()
                    ));
                    &text[..cut]
                }
                None => text,
            },
            None => text,
        }
    }

    /// Contributions of a paper, keyed `"0"`, `"1"`, … in response order.
    pub fn extract_contributions(
        &self,
        paper: &PaperInput,
        tally: &mut Tally,
    ) -> Result<Vec<ExtractedContribution>, PipelineError> {
        if paper.full_text.trim().is_empty() {
            return Err(PipelineError::InvalidInput {
                paper: paper.corpus_id.clone(),
                reason: "empty full text".into(),
            });
        }
        let text = self.paper_text(paper, tally);
        let prompt = render(&self.prompts.contributions, &[(prompts::VAR_PAPER_TEXT, text)]);
        self.call_validated(&paper.corpus_id, Stage::Contributions, &prompt, tally, validate_contributions)
    }

    /// Prerequisites of one contribution. The result holds either the input
    /// key alone or its dash-suffixed splits.
    pub fn extract_prerequisites(
        &self,
        contribution: &ExtractedContribution,
        others: &[ExtractedContribution],
        paper: &PaperInput,
        tally: &mut Tally,
    ) -> Result<Vec<ExtractedContribution>, PipelineError> {
        let text = self.paper_text(paper, tally);
        let prompt = render(
            &self.prompts.prerequisites,
            &[
                (prompts::VAR_PAPER_TEXT, text),
                (prompts::VAR_CONTRIBUTION, &pretty(contribution)),
                (prompts::VAR_OTHER_CONTRIBUTIONS, &pretty(&others)),
            ],
        );
        self.call_validated(&paper.corpus_id, Stage::Prerequisites, &prompt, tally, |t| {
            validate_prerequisites(t, contribution, others)
        })
    }

    /// Which contributions of the cited paper the `reference_index`-th
    /// reference of `prereq` points at. No call is made when the cited paper
    /// has no contributions.
    pub fn align_prerequisite(
        &self,
        dep: AlignSource<'_>,
        prereq: &Prerequisite,
        reference_index: usize,
        cited: &[&Contribution],
        tally: &mut Tally,
    ) -> Result<Vec<Match>, PipelineError> {
        let Some(first) = cited.first() else {
            return Ok(Vec::new());
        };
        let corpus = &first.id.corpus;
        if cited.iter().any(|c| &c.id.corpus != corpus) {
            return Err(PipelineError::InvalidInput {
                paper: dep.paper.clone(),
                reason: "cited contributions span several papers".into(),
            });
        }
        let reference: Option<&PaperRef> = match prereq.references.get(reference_index) {
            Some(Reference::Paper(p)) => Some(p),
            _ => None,
        };
        let Some(reference) = reference else {
            return Err(PipelineError::InvalidInput {
                paper: dep.paper.clone(),
                reason: format!("prerequisite `{}` has no paper reference #{reference_index}", prereq.name),
            });
        };
        let mut shown_ref = reference.clone();
        shown_ref.matches.clear();
        let source = json!({
            "contribution": {"name": dep.name, "description": dep.description},
            "prerequisite": {
                "name": prereq.name,
                "description": prereq.description,
                "justification": prereq.explanation,
                "core_or_peripheral": prereq.core_or_peripheral,
                "reference": shown_ref,
            },
        });
        let record = json!({
            "corpus_id": corpus,
            "contributions": cited
                .iter()
                .map(|c| json!({"key": c.id.to_string(), "name": c.name, "description": c.description}))
                .collect::<Vec<_>>(),
        });
        let prompt = render(
            &self.prompts.alignment,
            &[
                (prompts::VAR_SOURCE_WITH_PREREQUISITE, &pretty(&source)),
                (prompts::VAR_CITED_RECORD, &pretty(&record)),
            ],
        );
        let allowed: HashSet<String> = cited.iter().map(|c| c.id.to_string()).collect();
        self.call_validated(dep.paper, Stage::Alignment, &prompt, tally, |t| {
            validate_alignment(t, &allowed)
        })
    }
}
