use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// Corpus identifier of a source paper (an opaque string key).
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CorpusId(pub String);

impl CorpusId {
    pub fn new(id: impl Into<String>) -> Self {
        CorpusId(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    /// Id of the `index`-th contribution of this paper.
    pub fn contribution(&self, index: u32) -> ContributionId {
        ContributionId {
            corpus: self.clone(),
            index,
        }
    }
}

impl fmt::Display for CorpusId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for CorpusId {
    fn from(s: &str) -> Self {
        CorpusId(s.to_string())
    }
}

/// Contribution node id, written `<corpus_id>.c<index>`.
///
/// Ordering compares the corpus id as a string and then the index
/// numerically, so `X.c2` sorts before `X.c10`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ContributionId {
    pub corpus: CorpusId,
    pub index: u32,
}

impl ContributionId {
    pub fn new(corpus: impl Into<String>, index: u32) -> Self {
        ContributionId {
            corpus: CorpusId(corpus.into()),
            index,
        }
    }
}

impl Ord for ContributionId {
    fn cmp(&self, other: &Self) -> Ordering {
        self.corpus
            .cmp(&other.corpus)
            .then(self.index.cmp(&other.index))
    }
}

impl PartialOrd for ContributionId {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for ContributionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.c{}", self.corpus, self.index)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("malformed contribution id `{0}` (expected `<corpus_id>.c<index>`)")]
pub struct ParseIdError(pub String);

impl FromStr for ContributionId {
    type Err = ParseIdError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (corpus, index) = s
            .rsplit_once(".c")
            .ok_or_else(|| ParseIdError(s.to_string()))?;
        if corpus.is_empty() || index.is_empty() || !index.bytes().all(|b| b.is_ascii_digit()) {
            return Err(ParseIdError(s.to_string()));
        }
        let index = index.parse().map_err(|_| ParseIdError(s.to_string()))?;
        Ok(ContributionId::new(corpus, index))
    }
}

impl Serialize for ContributionId {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for ContributionId {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Publication date at whatever granularity is known.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct PubDate {
    pub year: i32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub month: Option<u8>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub day: Option<u8>,
}

impl PubDate {
    pub fn year(year: i32) -> Self {
        PubDate {
            year,
            month: None,
            day: None,
        }
    }

    pub fn month(year: i32, month: u8) -> Self {
        PubDate {
            year,
            month: Some(month),
            day: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PaperStatus {
    #[default]
    Pending,
    Extracted,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PaperMeta {
    pub corpus_id: CorpusId,
    pub title: String,
    pub year: i32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub date: Option<PubDate>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub venue: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub first_author_last: Option<String>,
    #[serde(default)]
    pub status: PaperStatus,
}

impl PaperMeta {
    pub fn new(corpus_id: impl Into<String>, title: impl Into<String>, year: i32) -> Self {
        PaperMeta {
            corpus_id: CorpusId(corpus_id.into()),
            title: title.into(),
            year,
            date: None,
            venue: None,
            first_author_last: None,
            status: PaperStatus::Pending,
        }
    }

    /// The most precise date known, falling back to the bare year.
    pub fn effective_date(&self) -> PubDate {
        self.date.unwrap_or(PubDate::year(self.year))
    }
}

/// One category assignment of a contribution.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TypeTag {
    #[serde(rename = "type")]
    pub category: String,
    #[serde(alias = "justification", default)]
    pub explanation: String,
}

/// The seventeen example categories offered to the extraction model.
pub const CONTRIBUTION_CATEGORIES: [&str; 17] = [
    "problem_formulation",
    "theoretical_insight",
    "conceptual_framework",
    "resource_benchmark",
    "resource_dataset",
    "tool_system_software",
    "empirical_evaluation",
    "analysis",
    "models_or_architectures",
    "techniques_algorithms",
    "representational",
    "research_methods_procedures",
    "metrics_instruments",
    "position_statement",
    "real_world_application",
    "society_ethics_policy",
    "other",
];

pub fn is_known_category(category: &str) -> bool {
    CONTRIBUTION_CATEGORIES.contains(&category)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Contribution {
    #[serde(rename = "contribution_id")]
    pub id: ContributionId,
    pub name: String,
    pub description: String,
    pub types: Vec<TypeTag>,
    pub sections: Vec<String>,
    /// Pipeline key this node came from when its contribution was split (e.g. `2-1`).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split_key: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CoreOrPeripheral {
    Core,
    Peripheral,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MatchType {
    // Declared weakest first so that `max` picks the strongest grade.
    Weak,
    Strong,
}

impl fmt::Display for MatchType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MatchType::Strong => "strong",
            MatchType::Weak => "weak",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Author {
    #[serde(default, deserialize_with = "lenient::string")]
    pub last_name: String,
    #[serde(default, deserialize_with = "lenient::string")]
    pub first_name: String,
    #[serde(default, deserialize_with = "lenient::string")]
    pub middle_names: String,
}

/// Alignment of a paper reference onto one contribution of the cited paper.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Match {
    #[serde(alias = "contribution_key")]
    pub contribution_id: String,
    #[serde(default)]
    pub explanation: String,
    pub match_type: MatchType,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PaperRef {
    #[serde(alias = "title", default)]
    pub paper_title: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub first_author: Option<Author>,
    #[serde(alias = "year", default, deserialize_with = "lenient::opt_year")]
    pub paper_year: Option<i32>,
    #[serde(alias = "venue", default)]
    pub paper_venue: Option<String>,
    #[serde(default, deserialize_with = "lenient::opt_id")]
    pub corpus_id: Option<String>,
    #[serde(default)]
    pub matches: Vec<Match>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InternalRef {
    #[serde(default)]
    pub contribution_name: String,
    #[serde(alias = "contribution_key", deserialize_with = "lenient::string")]
    pub contribution_id: String,
    #[serde(alias = "justification", default)]
    pub explanation: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArtifactRef {
    #[serde(default)]
    pub name: String,
    #[serde(default)]
    pub url: String,
}

/// Where a prerequisite comes from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type")]
pub enum Reference {
    #[serde(rename = "paper")]
    Paper(PaperRef),
    #[serde(rename = "internal")]
    Internal(InternalRef),
    #[serde(rename = "other", alias = "artifact")]
    Artifact(ArtifactRef),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prerequisite {
    pub name: String,
    #[serde(default)]
    pub description: String,
    #[serde(alias = "justification", default)]
    pub explanation: String,
    pub core_or_peripheral: CoreOrPeripheral,
    #[serde(alias = "references_in_paper", default)]
    pub references: Vec<Reference>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Edge {
    pub pre_id: ContributionId,
    pub dep_id: ContributionId,
    pub match_type: MatchType,
    pub explanation: String,
    pub prereq_index: usize,
}

/// Deserializers that accept the loose shapes generation backends emit
/// (numeric ids, `"None"` strings, years as strings).
pub(crate) mod lenient {
    use serde::{Deserialize, Deserializer};
    use serde_json::Value;

    fn scalar_to_string(v: Value) -> Option<String> {
        match v {
            Value::Null => None,
            Value::String(s) => {
                let t = s.trim();
                if t.is_empty() || t.eq_ignore_ascii_case("none") || t.eq_ignore_ascii_case("null") {
                    None
                } else {
                    Some(t.to_string())
                }
            }
            Value::Number(n) => Some(n.to_string()),
            Value::Bool(b) => Some(b.to_string()),
            other => Some(other.to_string()),
        }
    }

    pub fn opt_id<'de, D: Deserializer<'de>>(d: D) -> Result<Option<String>, D::Error> {
        Ok(scalar_to_string(Value::deserialize(d)?))
    }

    pub fn string<'de, D: Deserializer<'de>>(d: D) -> Result<String, D::Error> {
        Ok(scalar_to_string(Value::deserialize(d)?).unwrap_or_default())
    }

    pub fn opt_year<'de, D: Deserializer<'de>>(d: D) -> Result<Option<i32>, D::Error> {
        match Value::deserialize(d)? {
            Value::Null => Ok(None),
            Value::Number(n) => n
                .as_i64()
                .and_then(|y| i32::try_from(y).ok())
                .map(Some)
                .ok_or_else(|| serde::de::Error::custom(format!("invalid year {n}"))),
            Value::String(s) => {
                let t = s.trim();
                if t.is_empty() || t.eq_ignore_ascii_case("none") {
                    Ok(None)
                } else {
                    t.parse()
                        .map(Some)
                        .map_err(|_| serde::de::Error::custom(format!("invalid year `{s}`")))
                }
            }
            other => Err(serde::de::Error::custom(format!("invalid year {other}"))),
        }
    }
}
