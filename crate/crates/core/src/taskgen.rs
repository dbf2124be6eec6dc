//! Prerequisite-prediction ranking problems: a target contribution, its gold
//! precursors, and embedding-retrieved distractors that are temporally valid
//! and not directly linked to the target's paper.

use std::collections::{BTreeSet, HashSet};
use std::fmt;
use std::ops::RangeInclusive;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::embed::{EmbedError, EmbeddingIndex};
use crate::graph::{canonical_view, ContributionGraph, ContributionId, CorpusId, PubDate};

pub const DEFAULT_CANDIDATES: usize = 100;

/// Sub-seed for one labelled unit of work, stable across platforms.
pub fn derive_seed(seed: u64, label: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(label.as_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("8 bytes"))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Target {
    pub id: ContributionId,
    pub name: String,
    pub description: String,
    pub year: i32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub date: Option<PubDate>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Candidate {
    pub id: ContributionId,
    pub name: String,
    pub description: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Problem {
    pub problem_id: String,
    pub target: Target,
    pub candidates: Vec<Candidate>,
    /// Sorted ascending.
    pub gold_ids: Vec<ContributionId>,
    pub seed: u64,
}

impl Problem {
    pub fn candidate_ids(&self) -> Vec<ContributionId> {
        self.candidates.iter().map(|c| c.id.clone()).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "reason", rename_all = "kebab-case")]
pub enum SkipReason {
    NoGold,
    TooManyGold { gold: usize, k: usize },
    InsufficientCandidates { found: usize, needed: usize },
    NotIndexed,
}

impl fmt::Display for SkipReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SkipReason::NoGold => write!(f, "no gold after filtering"),
            SkipReason::TooManyGold { gold, k } => write!(f, "{gold} gold exceed {k} candidates"),
            SkipReason::InsufficientCandidates { found, needed } => {
                write!(f, "insufficient candidates ({found} of {needed} distractors)")
            }
            SkipReason::NotIndexed => write!(f, "target has no embedding"),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum TaskgenError {
    #[error("unknown contribution {0}")]
    UnknownTarget(ContributionId),
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error("candidate count must be at least 1")]
    ZeroCandidates,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskgenConfig {
    pub years: RangeInclusive<i32>,
    pub per_year: usize,
    pub seed: u64,
    pub candidates: usize,
    pub strong_only: bool,
}

impl Default for TaskgenConfig {
    fn default() -> Self {
        TaskgenConfig {
            years: 2021..=2025,
            per_year: 400,
            seed: 0,
            candidates: DEFAULT_CANDIDATES,
            strong_only: false,
        }
    }
}

fn year_of(graph: &ContributionGraph, id: &ContributionId) -> Option<i32> {
    graph.paper_of(id).map(|p| p.year)
}

/// Up to `per_year` targets per year, drawn uniformly without replacement
/// among contributions with at least one incoming edge.
pub fn sample_targets(
    graph: &ContributionGraph,
    years: RangeInclusive<i32>,
    per_year: usize,
    seed: u64,
    strong_only: bool,
) -> (Vec<ContributionId>, Vec<String>) {
    let mut out = Vec::new();
    let mut warnings = Vec::new();
    for year in years {
        let eligible: Vec<&ContributionId> = graph
            .contributions()
            .map(|c| &c.id)
            .filter(|id| year_of(graph, id) == Some(year) && !graph.precursors(id, strong_only).is_empty())
            .collect();
        if eligible.is_empty() {
            warnings.push(format!("year {year}: no contribution with incoming edges"));
            continue;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &format!("year:{year}")));
        let mut chosen: Vec<ContributionId> = eligible
            .choose_multiple(&mut rng, per_year.min(eligible.len()))
            .map(|id| (*id).clone())
            .collect();
        chosen.shuffle(&mut rng);
        out.extend(chosen);
    }
    (out, warnings)
}

/// Papers whose contributions may not be distractors for a target in
/// `corpus`: the paper itself and every paper with an edge, either way, to
/// one of its contributions.
pub fn linked_papers(graph: &ContributionGraph, corpus: &CorpusId) -> HashSet<CorpusId> {
    let mut out = HashSet::from([corpus.clone()]);
    for c in graph.contributions_of(corpus) {
        for e in graph.incoming_edges(&c.id).into_iter().flatten() {
            out.insert(e.pre_id.corpus.clone());
        }
        for e in graph.outgoing_edges(&c.id).into_iter().flatten() {
            out.insert(e.dep_id.corpus.clone());
        }
    }
    out
}

/// Builds one problem, or says why the target cannot have one.
pub fn build_problem(
    target_id: &ContributionId,
    graph: &ContributionGraph,
    index: &EmbeddingIndex,
    k: usize,
    strong_only: bool,
    seed: u64,
) -> Result<Result<Problem, SkipReason>, TaskgenError> {
    if k == 0 {
        return Err(TaskgenError::ZeroCandidates);
    }
    let target = graph
        .contribution(target_id)
        .ok_or_else(|| TaskgenError::UnknownTarget(target_id.clone()))?;
    let paper = graph
        .paper_of(target_id)
        .ok_or_else(|| TaskgenError::UnknownTarget(target_id.clone()))?;
    let year = paper.year;

    let gold: BTreeSet<ContributionId> = graph
        .precursors(target_id, strong_only)
        .into_iter()
        .filter(|g| g != target_id && year_of(graph, g).is_some_and(|y| y <= year))
        .collect();
    if gold.is_empty() {
        return Ok(Err(SkipReason::NoGold));
    }
    if gold.len() > k {
        return Ok(Err(SkipReason::TooManyGold { gold: gold.len(), k }));
    }
    if !index.contains(target_id) {
        return Ok(Err(SkipReason::NotIndexed));
    }
    let query = index.query_vector(target_id)?;
    let excluded = linked_papers(graph, &target_id.corpus);
    let admissible = |id: &ContributionId| {
        id != target_id
            && !gold.contains(id)
            && !excluded.contains(&id.corpus)
            && year_of(graph, id).is_some_and(|y| y <= year)
            && graph.contribution(id).is_some()
    };

    let needed = k - gold.len();
    let mut distractors: Vec<ContributionId> = Vec::new();
    if needed > 0 {
        let mut fetch = 4 * k;
        loop {
            let hits = index.cosine_top_k(&query, fetch.min(index.len()).max(1), None)?;
            distractors = hits
                .into_iter()
                .map(|(id, _)| id)
                .filter(|id| admissible(id))
                .take(needed)
                .collect();
            if distractors.len() == needed || fetch >= index.len() {
                break;
            }
            fetch *= 2;
        }
    }
    if distractors.len() < needed {
        return Ok(Err(SkipReason::InsufficientCandidates {
            found: distractors.len(),
            needed,
        }));
    }

    let mut ids: Vec<ContributionId> = gold.iter().cloned().chain(distractors).collect();
    ids.sort();
    let problem_seed = derive_seed(seed, &target_id.to_string());
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(problem_seed));
    let candidates = ids
        .into_iter()
        .map(|id| {
            let c = graph.contribution(&id).expect("candidate exists");
            Candidate {
                id,
                name: c.name.clone(),
                description: c.description.clone(),
            }
        })
        .collect();
    Ok(Ok(Problem {
        problem_id: format!("prob-{target_id}"),
        target: Target {
            id: target_id.clone(),
            name: target.name.clone(),
            description: target.description.clone(),
            year,
            date: paper.date,
        },
        candidates,
        gold_ids: gold.into_iter().collect(),
        seed: problem_seed,
    }))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Skipped {
    pub target: ContributionId,
    #[serde(flatten)]
    pub reason: SkipReason,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskgenManifest {
    pub seed: u64,
    pub years: (i32, i32),
    pub per_year: usize,
    pub candidates: usize,
    pub strong_only: bool,
    pub graph_hash: String,
    pub index_provider: String,
    pub targets: usize,
    pub problems: usize,
    pub skipped: Vec<Skipped>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaskgenOutput {
    pub problems: Vec<Problem>,
    pub manifest: TaskgenManifest,
}

pub fn graph_hash(graph: &ContributionGraph) -> String {
    hex::encode(Sha256::digest(canonical_view(graph).as_bytes()))
}

/// Samples targets and builds their problems in parallel, keeping sample order.
pub fn generate(
    graph: &ContributionGraph,
    index: &EmbeddingIndex,
    config: &TaskgenConfig,
) -> Result<TaskgenOutput, TaskgenError> {
    use rayon::prelude::*;
    let (targets, warnings) = sample_targets(
        graph,
        config.years.clone(),
        config.per_year,
        config.seed,
        config.strong_only,
    );
    let built: Vec<Result<Result<Problem, SkipReason>, TaskgenError>> = targets
        .par_iter()
        .map(|t| build_problem(t, graph, index, config.candidates, config.strong_only, config.seed))
        .collect();
    let mut problems = Vec::new();
    let mut skipped = Vec::new();
    for (t, r) in targets.iter().zip(built) {
        match r? {
            Ok(p) => problems.push(p),
            Err(reason) => {
                log::info!("skipping {t}: {reason}");
                skipped.push(Skipped {
                    target: t.clone(),
                    reason,
                });
            }
        }
    }
    let manifest = TaskgenManifest {
        seed: config.seed,
        years: (*config.years.start(), *config.years.end()),
        per_year: config.per_year,
        candidates: config.candidates,
        strong_only: config.strong_only,
        graph_hash: graph_hash(graph),
        index_provider: index.provider().to_string(),
        targets: targets.len(),
        problems: problems.len(),
        skipped,
        warnings,
    };
    Ok(TaskgenOutput { problems, manifest })
}
