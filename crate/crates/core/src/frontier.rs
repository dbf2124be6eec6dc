//! Paper selection for the next crawl batch: reference resolution against a
//! catalog, the histogram of cited-but-unextracted papers, and top-k
//! selection by citation count.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::graph::{ContributionGraph, CorpusId, PaperMeta, PaperRef, Reference};
use crate::jsonl::{self, JsonlError};

/// One line of the catalog file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CatalogEntry {
    pub corpus_id: CorpusId,
    pub title: String,
    pub year: i32,
    #[serde(default)]
    pub first_author_last: Option<String>,
    #[serde(default)]
    pub open_access: bool,
    #[serde(default)]
    pub text_path: Option<String>,
}

impl From<&PaperMeta> for CatalogEntry {
    fn from(meta: &PaperMeta) -> Self {
        CatalogEntry {
            corpus_id: meta.corpus_id.clone(),
            title: meta.title.clone(),
            year: meta.year,
            first_author_last: meta.first_author_last.clone(),
            open_access: false,
            text_path: None,
        }
    }
}

impl CatalogEntry {
    pub fn to_meta(&self) -> PaperMeta {
        let mut meta = PaperMeta::new(self.corpus_id.as_str(), self.title.clone(), self.year);
        meta.first_author_last = self.first_author_last.clone();
        meta
    }
}

/// Known papers indexed by normalized title.
#[derive(Debug, Clone, Default)]
pub struct Catalog {
    entries: BTreeMap<CorpusId, CatalogEntry>,
    by_title: HashMap<String, Vec<CorpusId>>,
}

impl Catalog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn load(path: &Path) -> Result<Catalog, JsonlError> {
        Ok(jsonl::read::<CatalogEntry>(path)?.into_iter().collect())
    }

    /// Inserts or replaces the entry for its corpus id.
    pub fn insert(&mut self, entry: CatalogEntry) {
        if let Some(old) = self.entries.get(&entry.corpus_id) {
            let key = normalize_title(&old.title);
            if let Some(ids) = self.by_title.get_mut(&key) {
                ids.retain(|id| id != &entry.corpus_id);
            }
        }
        self.by_title
            .entry(normalize_title(&entry.title))
            .or_default()
            .push(entry.corpus_id.clone());
        self.entries.insert(entry.corpus_id.clone(), entry);
    }

    pub fn get(&self, id: &CorpusId) -> Option<&CatalogEntry> {
        self.entries.get(id)
    }

    pub fn entries(&self) -> impl Iterator<Item = &CatalogEntry> {
        self.entries.values()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    fn with_title(&self, normalized: &str) -> impl Iterator<Item = &CatalogEntry> {
        self.by_title
            .get(normalized)
            .into_iter()
            .flatten()
            .filter_map(|id| self.entries.get(id))
    }
}

impl FromIterator<CatalogEntry> for Catalog {
    fn from_iter<I: IntoIterator<Item = CatalogEntry>>(iter: I) -> Self {
        let mut c = Catalog::new();
        for e in iter {
            c.insert(e);
        }
        c
    }
}

/// Casefold, drop punctuation, collapse whitespace.
pub fn normalize_title(title: &str) -> String {
    let cleaned: String = title
        .chars()
        .flat_map(char::to_lowercase)
        .filter(|c| c.is_alphanumeric() || c.is_whitespace())
        .collect();
    cleaned.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Corpus id a paper reference points at.
///
/// An explicit corpus id is passed through. Otherwise the normalized title
/// must match a catalog entry whose year is within one of the reference's
/// year; several such entries are separated by first-author last name.
/// Anything still ambiguous resolves to `None`.
pub fn resolve_reference(r: &PaperRef, catalog: &Catalog) -> Option<CorpusId> {
    if let Some(id) = &r.corpus_id {
        return Some(CorpusId::new(id.clone()));
    }
    let key = normalize_title(&r.paper_title);
    if key.is_empty() {
        return None;
    }
    let candidates: Vec<&CatalogEntry> = catalog
        .with_title(&key)
        .filter(|e| r.paper_year.is_none_or(|y| (e.year - y).abs() <= 1))
        .collect();
    match candidates.as_slice() {
        [] => None,
        [only] => Some(only.corpus_id.clone()),
        many => {
            let author = r
                .first_author
                .as_ref()
                .map(|a| normalize_title(&a.last_name))
                .filter(|a| !a.is_empty());
            let agreeing: Vec<&&CatalogEntry> = match &author {
                Some(author) => many
                    .iter()
                    .filter(|e| e.first_author_last.as_deref().map(normalize_title).as_ref() == Some(author))
                    .collect(),
                None => Vec::new(),
            };
            if let [one] = agreeing.as_slice() {
                Some(one.corpus_id.clone())
            } else {
                log::warn!(
                    "ambiguous reference `{}` ({:?}): {} catalog candidates",
                    r.paper_title,
                    r.paper_year,
                    many.len()
                );
                None
            }
        }
    }
}

/// Histogram bucket: a resolved corpus id, or the normalized title and year
/// of a reference nobody could resolve.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PaperKey {
    Corpus(CorpusId),
    Title { title: String, year: Option<i32> },
}

impl PaperKey {
    pub fn corpus_id(&self) -> Option<&CorpusId> {
        match self {
            PaperKey::Corpus(id) => Some(id),
            PaperKey::Title { .. } => None,
        }
    }
}

impl fmt::Display for PaperKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PaperKey::Corpus(id) => write!(f, "{id}"),
            PaperKey::Title { title, year: Some(y) } => write!(f, "title:{title}|{y}"),
            PaperKey::Title { title, year: None } => write!(f, "title:{title}|?"),
        }
    }
}

pub type Histogram = BTreeMap<PaperKey, usize>;

/// Counts paper references, over every prerequisite in the graph, whose
/// cited paper is not extracted.
pub fn build_histogram(graph: &ContributionGraph) -> Histogram {
    let mut hist = Histogram::new();
    for c in graph.contributions() {
        for p in graph.prerequisites(&c.id) {
            for r in &p.references {
                let Reference::Paper(paper) = r else { continue };
                let key = match resolve_reference(paper, graph.catalog()) {
                    Some(id) if graph.is_extracted(&id) => continue,
                    Some(id) => PaperKey::Corpus(id),
                    None => PaperKey::Title {
                        title: normalize_title(&paper.paper_title),
                        year: paper.paper_year,
                    },
                };
                *hist.entry(key).or_default() += 1;
            }
        }
    }
    hist
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("batch size must be at least 1")]
pub struct ZeroBatch;

/// Top-`k` available keys by descending count, ties by ascending key.
pub fn select_batch(
    histogram: &Histogram,
    available: impl Fn(&PaperKey) -> bool,
    k: usize,
) -> Result<Vec<PaperKey>, ZeroBatch> {
    if k == 0 {
        return Err(ZeroBatch);
    }
    let mut ranked: Vec<(&PaperKey, usize)> = histogram
        .iter()
        .filter(|(key, _)| available(key))
        .map(|(key, &n)| (key, n))
        .collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    Ok(ranked.into_iter().take(k).map(|(key, _)| key.clone()).collect())
}
