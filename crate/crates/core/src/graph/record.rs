//! The per-paper extraction record exchanged in `records.jsonl`.
//!
//! Records arrive either in the released shape (contributions carry
//! `contribution_id`, prerequisites carry `explanation`/`references`) or in
//! the shape the generation prompts ask for (`key`, `contribution_type`,
//! `justification`, `references_in_paper`). [`ExtractionRecord::normalize`]
//! folds both into the released shape with dense `<corpus_id>.c<i>` ids.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::types::{
    lenient, ContributionId, CorpusId, Prerequisite, Reference, TypeTag,
};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtractionRecord {
    pub corpus_id: CorpusId,
    #[serde(default)]
    pub title: String,
    pub year: i32,
    #[serde(default)]
    pub contributions: Vec<RecordContribution>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecordContribution {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub contribution_id: Option<String>,
    #[serde(
        default,
        skip_serializing_if = "Option::is_none",
        deserialize_with = "lenient::opt_id"
    )]
    pub key: Option<String>,
    pub name: String,
    pub description: String,
    #[serde(alias = "contribution_type", default)]
    pub types: Vec<TypeTag>,
    #[serde(default)]
    pub sections: Vec<String>,
    #[serde(default)]
    pub prerequisites: Vec<Prerequisite>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split_key: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum RecordError {
    #[error("record has an empty corpus_id")]
    EmptyCorpusId,
    #[error("contribution #{position}: {reason}")]
    BadContributionId { position: usize, reason: String },
    #[error("contribution #{position}: duplicate key `{key}`")]
    DuplicateKey { position: usize, key: String },
    #[error("contribution {id}: empty {field}")]
    EmptyField { id: String, field: &'static str },
    #[error("contribution {id}, prerequisite {prereq}: internal reference `{target}` does not resolve to a contribution of this record")]
    DanglingInternal {
        id: String,
        prereq: usize,
        target: String,
    },
    #[error("contribution {id}, prerequisite {prereq}: internal reference `{target}` points at another paper")]
    CrossPaperInternal {
        id: String,
        prereq: usize,
        target: String,
    },
    #[error("contribution {id}, prerequisite {prereq}: internal reference points at itself")]
    SelfReference { id: String, prereq: usize },
    #[error("contribution {id}, prerequisite {prereq}: artifact reference without url")]
    EmptyArtifactUrl { id: String, prereq: usize },
}

impl ExtractionRecord {
    /// Assign dense ids in record order and rewrite internal references to them.
    ///
    /// Idempotent: normalizing a normalized record returns it unchanged.
    pub fn normalize(mut self) -> Result<ExtractionRecord, RecordError> {
        if self.corpus_id.as_str().trim().is_empty() {
            return Err(RecordError::EmptyCorpusId);
        }
        let corpus = self.corpus_id.clone();

        // Every spelling a contribution may be referred to by, mapped to its final id.
        let mut aliases: HashMap<String, ContributionId> = HashMap::new();
        let mut split_parents: HashMap<String, ContributionId> = HashMap::new();
        for (position, c) in self.contributions.iter().enumerate() {
            let assigned = corpus.contribution(position as u32);
            if let Some(given) = &c.contribution_id {
                let parsed: ContributionId =
                    given.parse().map_err(|e: super::types::ParseIdError| {
                        RecordError::BadContributionId {
                            position,
                            reason: e.to_string(),
                        }
                    })?;
                if parsed != assigned {
                    return Err(RecordError::BadContributionId {
                        position,
                        reason: format!("id `{given}` disagrees with record order (expected `{assigned}`)"),
                    });
                }
            }
            let keys = c.key.iter().chain(c.split_key.iter());
            for key in keys {
                if let Some(prev) = aliases.insert(key.clone(), assigned.clone()) {
                    if prev != assigned {
                        return Err(RecordError::DuplicateKey {
                            position,
                            key: key.clone(),
                        });
                    }
                }
                if let Some((parent, _)) = key.rsplit_once('-') {
                    split_parents
                        .entry(parent.to_string())
                        .or_insert_with(|| assigned.clone());
                }
            }
            aliases.insert(assigned.to_string(), assigned.clone());
        }
        // A reference to a key that was split points at its first piece.
        for (parent, first) in split_parents {
            aliases.entry(parent).or_insert(first);
        }

        for (position, c) in self.contributions.iter_mut().enumerate() {
            let assigned = corpus.contribution(position as u32);
            let id = assigned.to_string();
            if c.name.trim().is_empty() {
                return Err(RecordError::EmptyField { id, field: "name" });
            }
            if c.description.trim().is_empty() {
                return Err(RecordError::EmptyField {
                    id,
                    field: "description",
                });
            }
            if let Some(key) = c.key.take() {
                if key.contains('-') && c.split_key.is_none() {
                    c.split_key = Some(key);
                }
            }
            for (prereq, p) in c.prerequisites.iter_mut().enumerate() {
                for r in p.references.iter_mut() {
                    match r {
                        Reference::Internal(internal) => {
                            let target = internal.contribution_id.trim().to_string();
                            let resolved = match aliases.get(&target) {
                                Some(found) => found.clone(),
                                None => {
                                    let other_paper = target
                                        .parse::<ContributionId>()
                                        .map(|t| t.corpus != corpus)
                                        .unwrap_or(false);
                                    return Err(if other_paper {
                                        RecordError::CrossPaperInternal {
                                            id,
                                            prereq,
                                            target,
                                        }
                                    } else {
                                        RecordError::DanglingInternal {
                                            id,
                                            prereq,
                                            target,
                                        }
                                    });
                                }
                            };
                            if resolved == assigned {
                                return Err(RecordError::SelfReference { id, prereq });
                            }
                            internal.contribution_id = resolved.to_string();
                        }
                        Reference::Artifact(a) if a.url.trim().is_empty() => {
                            return Err(RecordError::EmptyArtifactUrl { id, prereq });
                        }
                        _ => {}
                    }
                }
            }
            c.contribution_id = Some(id);
        }
        Ok(self)
    }

    pub fn contribution_ids(&self) -> impl Iterator<Item = ContributionId> + '_ {
        (0..self.contributions.len()).map(|i| self.corpus_id.contribution(i as u32))
    }
}
