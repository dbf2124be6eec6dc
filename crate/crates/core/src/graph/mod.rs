//! In-memory contribution graph: papers, contribution nodes, their extracted
//! prerequisites, and the resolved precursor→dependent edges.

mod record;
mod store;
mod types;
mod validate;

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::frontier::{resolve_reference, Catalog, CatalogEntry};

pub use record::{ExtractionRecord, RecordContribution, RecordError};
pub use store::{
    canonical_view, AlignmentEntry, NodeRow, Store, StoreError, StoreLock, ALIGNMENTS_FILE, EDGES_FILE,
    NODES_FILE, PAPERS_FILE, RECORDS_FILE,
};
pub use types::{
    is_known_category, ArtifactRef, Author, ContributionId, Contribution, CoreOrPeripheral,
    CorpusId, Edge, InternalRef, Match, MatchType, PaperMeta, PaperRef, PaperStatus,
    ParseIdError, Prerequisite, PubDate, Reference, TypeTag, CONTRIBUTION_CATEGORIES,
};
pub use validate::{Violation, ViolationKind};
pub(crate) use types::lenient;

#[derive(Debug, thiserror::Error)]
pub enum GraphError {
    #[error("paper {0} is already extracted")]
    DuplicatePaper(CorpusId),
    #[error("invalid record for {corpus}: {source}")]
    InvalidRecord {
        corpus: CorpusId,
        #[source]
        source: RecordError,
    },
    #[error("unknown contribution {0}")]
    NotFound(ContributionId),
    #[error("unknown paper {0}")]
    UnknownPaper(CorpusId),
    #[error("no pending alignment for {dep_id} prerequisite {prereq_index} reference {reference_index}")]
    NotAwaiting {
        dep_id: ContributionId,
        prereq_index: usize,
        reference_index: usize,
    },
    #[error("alignment match `{id}` is not a contribution of cited paper {corpus}")]
    ForeignMatch { id: String, corpus: CorpusId },
}

/// A paper reference whose cited paper is not (yet) extracted.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UnresolvedRef {
    pub dep_id: ContributionId,
    pub prereq_index: usize,
    pub reference_index: usize,
    /// Corpus id of the cited paper, when known or resolvable from the catalog.
    pub cited: Option<CorpusId>,
    /// Matches the record already carried, applied once the cited paper arrives.
    pub pending: Vec<Match>,
}

/// A paper reference whose cited paper is now extracted but which has not
/// been aligned yet.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct AlignmentTask {
    pub dep_id: ContributionId,
    pub prereq_index: usize,
    pub reference_index: usize,
    pub cited: CorpusId,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct GraphDelta {
    pub nodes_added: usize,
    pub edges_added: usize,
    pub unresolved_added: usize,
    pub alignment_tasks_added: usize,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, Default)]
pub struct ContributionGraph {
    papers: BTreeMap<CorpusId, PaperMeta>,
    catalog: Catalog,
    nodes: BTreeMap<ContributionId, Contribution>,
    prereqs: BTreeMap<ContributionId, Vec<Prerequisite>>,
    edges: Vec<Edge>,
    incoming: HashMap<ContributionId, Vec<usize>>,
    outgoing: HashMap<ContributionId, Vec<usize>>,
    unresolved: Vec<UnresolvedRef>,
    awaiting: Vec<AlignmentTask>,
}

impl ContributionGraph {
    pub fn new() -> Self {
        Self::default()
    }

    /// Add a known (not necessarily extracted) paper. Returns false when the
    /// corpus id is already registered, in which case nothing changes.
    pub fn register_paper(&mut self, meta: PaperMeta) -> bool {
        if self.papers.contains_key(&meta.corpus_id) {
            return false;
        }
        self.catalog.insert(CatalogEntry::from(&meta));
        self.papers.insert(meta.corpus_id.clone(), meta);
        true
    }

    pub fn set_status(&mut self, corpus: &CorpusId, status: PaperStatus) -> Result<(), GraphError> {
        let meta = self
            .papers
            .get_mut(corpus)
            .ok_or_else(|| GraphError::UnknownPaper(corpus.clone()))?;
        meta.status = status;
        Ok(())
    }

    pub fn paper(&self, corpus: &CorpusId) -> Option<&PaperMeta> {
        self.papers.get(corpus)
    }

    pub fn papers(&self) -> impl Iterator<Item = &PaperMeta> {
        self.papers.values()
    }

    pub fn catalog(&self) -> &Catalog {
        &self.catalog
    }

    pub fn is_extracted(&self, corpus: &CorpusId) -> bool {
        self.papers
            .get(corpus)
            .is_some_and(|p| p.status == PaperStatus::Extracted)
    }

    pub fn contribution(&self, id: &ContributionId) -> Option<&Contribution> {
        self.nodes.get(id)
    }

    pub fn contributions(&self) -> impl Iterator<Item = &Contribution> {
        self.nodes.values()
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    /// Contributions of one paper in index order.
    pub fn contributions_of(&self, corpus: &CorpusId) -> Vec<&Contribution> {
        self.nodes
            .range(corpus.contribution(0)..=corpus.contribution(u32::MAX))
            .map(|(_, c)| c)
            .collect()
    }

    /// Source paper of a contribution.
    pub fn paper_of(&self, id: &ContributionId) -> Option<&PaperMeta> {
        self.papers.get(&id.corpus)
    }

    pub fn prerequisites(&self, id: &ContributionId) -> &[Prerequisite] {
        self.prereqs.get(id).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Direct mutable access to a node's prerequisite list. Bypasses every
    /// check; meant for repair tools and for corrupting fixtures in tests.
    #[doc(hidden)]
    pub fn prerequisites_mut(&mut self, id: &ContributionId) -> Option<&mut Vec<Prerequisite>> {
        self.prereqs.get_mut(id)
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn unresolved(&self) -> &[UnresolvedRef] {
        &self.unresolved
    }

    /// References to extracted papers that still need an alignment call, in
    /// deterministic order.
    pub fn awaiting_alignment(&self) -> Vec<AlignmentTask> {
        let mut tasks = self.awaiting.clone();
        tasks.sort();
        tasks
    }

    fn require(&self, id: &ContributionId) -> Result<(), GraphError> {
        if self.nodes.contains_key(id) {
            Ok(())
        } else {
            Err(GraphError::NotFound(id.clone()))
        }
    }

    fn adjacent(&self, index: &HashMap<ContributionId, Vec<usize>>, id: &ContributionId, peer: fn(&Edge) -> &ContributionId) -> Vec<&Edge> {
        let mut out: Vec<&Edge> = index
            .get(id)
            .map(|ix| ix.iter().map(|&i| &self.edges[i]).collect())
            .unwrap_or_default();
        out.sort_by(|a, b| peer(a).cmp(peer(b)).then(a.prereq_index.cmp(&b.prereq_index)));
        out
    }

    /// Edges whose dependent is `id`, ordered by (precursor id, prereq_index).
    pub fn incoming_edges(&self, id: &ContributionId) -> Result<Vec<&Edge>, GraphError> {
        self.require(id)?;
        Ok(self.adjacent(&self.incoming, id, |e| &e.pre_id))
    }

    /// Edges whose precursor is `id`, ordered by (dependent id, prereq_index).
    pub fn outgoing_edges(&self, id: &ContributionId) -> Result<Vec<&Edge>, GraphError> {
        self.require(id)?;
        Ok(self.adjacent(&self.outgoing, id, |e| &e.dep_id))
    }

    /// One edge per (precursor, dependent) pair, keeping the strongest grade.
    /// Among equally strong edges the lowest prereq_index wins. Ordered by
    /// (dependent, precursor).
    pub fn dedup_edges(&self) -> Vec<Edge> {
        let mut best: BTreeMap<(ContributionId, ContributionId), &Edge> = BTreeMap::new();
        for e in &self.edges {
            best.entry((e.dep_id.clone(), e.pre_id.clone()))
                .and_modify(|cur| {
                    let better = e.match_type > cur.match_type
                        || (e.match_type == cur.match_type && e.prereq_index < cur.prereq_index);
                    if better {
                        *cur = e;
                    }
                })
                .or_insert(e);
        }
        best.into_values().cloned().collect()
    }

    /// Distinct precursor ids of `id`, optionally restricted to strong matches.
    pub fn precursors(&self, id: &ContributionId, strong_only: bool) -> Vec<ContributionId> {
        let mut out: Vec<ContributionId> = self
            .incoming
            .get(id)
            .into_iter()
            .flatten()
            .map(|&i| &self.edges[i])
            .filter(|e| !strong_only || e.match_type == MatchType::Strong)
            .map(|e| e.pre_id.clone())
            .collect();
        out.sort();
        out.dedup();
        out
    }

    /// Distinct dependent ids of `id`.
    pub fn dependents(&self, id: &ContributionId) -> Vec<ContributionId> {
        let mut out: Vec<ContributionId> = self
            .outgoing
            .get(id)
            .into_iter()
            .flatten()
            .map(|&i| self.edges[i].dep_id.clone())
            .collect();
        out.sort();
        out.dedup();
        out
    }

    fn push_edge(&mut self, edge: Edge) {
        let i = self.edges.len();
        self.incoming.entry(edge.dep_id.clone()).or_default().push(i);
        self.outgoing.entry(edge.pre_id.clone()).or_default().push(i);
        self.edges.push(edge);
    }

    /// Append an edge without any checks. Exists so tests can inject
    /// invariant violations; never use it to build a real graph.
    #[doc(hidden)]
    pub fn insert_edge_unchecked(&mut self, edge: Edge) {
        self.push_edge(edge);
    }

    /// Turn recorded matches into edges, dropping ids that are not
    /// contributions of `cited`.
    fn match_edges(
        &self,
        staged: &BTreeMap<ContributionId, ()>,
        cited: &CorpusId,
        dep_id: &ContributionId,
        prereq_index: usize,
        matches: &[Match],
        warnings: &mut Vec<String>,
    ) -> Vec<Edge> {
        let mut out = Vec::new();
        for m in matches {
            let target = match m.contribution_id.parse::<ContributionId>() {
                Ok(t) if &t.corpus == cited && (self.nodes.contains_key(&t) || staged.contains_key(&t)) => t,
                _ => {
                    warnings.push(format!(
                        "{dep_id} prerequisite {prereq_index}: dropped match `{}` (not a contribution of {cited})",
                        m.contribution_id
                    ));
                    continue;
                }
            };
            if &target == dep_id {
                warnings.push(format!("{dep_id} prerequisite {prereq_index}: dropped self-match"));
                continue;
            }
            out.push(Edge {
                pre_id: target,
                dep_id: dep_id.clone(),
                match_type: m.match_type,
                explanation: m.explanation.clone(),
                prereq_index,
            });
        }
        out
    }

    /// Insert one paper's extraction record.
    ///
    /// Contributions get ids `<corpus_id>.c<i>` in record order. Internal
    /// references become edges immediately; paper references into extracted
    /// papers become edges through their matches; the rest are kept as
    /// unresolved and bound when the cited paper arrives. The record is
    /// checked in full before anything is written, so a rejected record
    /// leaves the graph untouched.
    pub fn add_paper_record(&mut self, record: ExtractionRecord) -> Result<GraphDelta, GraphError> {
        let corpus = record.corpus_id.clone();
        if self.is_extracted(&corpus) {
            return Err(GraphError::DuplicatePaper(corpus));
        }
        let record = record.normalize().map_err(|source| GraphError::InvalidRecord {
            corpus: corpus.clone(),
            source,
        })?;

        let mut delta = GraphDelta::default();
        let staged: BTreeMap<ContributionId, ()> =
            record.contribution_ids().map(|id| (id, ())).collect();
        let mut new_edges = Vec::new();
        let mut new_unresolved = Vec::new();

        for (position, c) in record.contributions.iter().enumerate() {
            let dep_id = corpus.contribution(position as u32);
            for t in &c.types {
                if !is_known_category(&t.category) {
                    delta.warnings.push(format!(
                        "{dep_id}: category `{}` is not one of the standard labels",
                        t.category
                    ));
                }
            }
            for (prereq_index, p) in c.prerequisites.iter().enumerate() {
                for (reference_index, r) in p.references.iter().enumerate() {
                    match r {
                        Reference::Internal(internal) => {
                            // normalize() guarantees a same-paper, non-self target
                            let pre_id: ContributionId = internal
                                .contribution_id
                                .parse()
                                .expect("normalized internal reference");
                            new_edges.push(Edge {
                                pre_id,
                                dep_id: dep_id.clone(),
                                match_type: MatchType::Strong,
                                explanation: internal.explanation.clone(),
                                prereq_index,
                            });
                        }
                        Reference::Paper(paper) => {
                            let cited = resolve_reference(paper, &self.catalog);
                            let cited_here = cited
                                .as_ref()
                                .is_some_and(|c| c == &corpus || self.is_extracted(c));
                            if cited_here {
                                let cited = cited.unwrap();
                                new_edges.extend(self.match_edges(
                                    &staged,
                                    &cited,
                                    &dep_id,
                                    prereq_index,
                                    &paper.matches,
                                    &mut delta.warnings,
                                ));
                            } else {
                                new_unresolved.push(UnresolvedRef {
                                    dep_id: dep_id.clone(),
                                    prereq_index,
                                    reference_index,
                                    cited,
                                    pending: paper.matches.clone(),
                                });
                            }
                        }
                        Reference::Artifact(_) => {}
                    }
                }
            }
        }

        // Everything below is infallible.
        let meta = self
            .papers
            .entry(corpus.clone())
            .or_insert_with(|| PaperMeta::new(corpus.as_str(), record.title.clone(), record.year));
        if !record.title.is_empty() {
            meta.title = record.title.clone();
        }
        meta.year = record.year;
        meta.status = PaperStatus::Extracted;
        let entry = CatalogEntry::from(&*meta);
        self.catalog.insert(entry);

        for (position, c) in record.contributions.into_iter().enumerate() {
            let id = corpus.contribution(position as u32);
            self.nodes.insert(
                id.clone(),
                Contribution {
                    id: id.clone(),
                    name: c.name,
                    description: c.description,
                    types: c.types,
                    sections: c.sections,
                    split_key: c.split_key,
                },
            );
            self.prereqs.insert(id, c.prerequisites);
            delta.nodes_added += 1;
        }
        delta.edges_added += new_edges.len();
        for e in new_edges {
            self.push_edge(e);
        }
        delta.unresolved_added = new_unresolved.len();
        self.unresolved.extend(new_unresolved);

        let (edges, tasks) = self.bind_arrived(&corpus, &mut delta.warnings);
        delta.edges_added += edges;
        delta.alignment_tasks_added += tasks;
        Ok(delta)
    }

    /// Move unresolved references that cite `corpus` (now extracted) out of
    /// the unresolved set: carried matches become edges, the rest await
    /// alignment.
    fn bind_arrived(&mut self, corpus: &CorpusId, warnings: &mut Vec<String>) -> (usize, usize) {
        let (arrived, rest): (Vec<_>, Vec<_>) = std::mem::take(&mut self.unresolved)
            .into_iter()
            .partition(|u| u.cited.as_ref() == Some(corpus));
        self.unresolved = rest;
        let mut edges = 0;
        let mut tasks = 0;
        let empty = BTreeMap::new();
        for u in arrived {
            if u.pending.is_empty() {
                self.awaiting.push(AlignmentTask {
                    dep_id: u.dep_id,
                    prereq_index: u.prereq_index,
                    reference_index: u.reference_index,
                    cited: corpus.clone(),
                });
                tasks += 1;
            } else {
                let new = self.match_edges(&empty, corpus, &u.dep_id, u.prereq_index, &u.pending, warnings);
                edges += new.len();
                for e in new {
                    self.push_edge(e);
                }
            }
        }
        (edges, tasks)
    }

    /// Re-run reference resolution for unresolved references that had no
    /// corpus id, e.g. after new catalog entries were registered.
    pub fn refresh_unresolved(&mut self) -> GraphDelta {
        let mut delta = GraphDelta::default();
        let mut arrived = Vec::new();
        for i in 0..self.unresolved.len() {
            if self.unresolved[i].cited.is_some() {
                continue;
            }
            let u = &self.unresolved[i];
            let Some(Reference::Paper(paper)) = self
                .prereqs
                .get(&u.dep_id)
                .and_then(|ps| ps.get(u.prereq_index))
                .and_then(|p| p.references.get(u.reference_index))
            else {
                continue;
            };
            if let Some(found) = resolve_reference(paper, &self.catalog) {
                if self.is_extracted(&found) && !arrived.contains(&found) {
                    arrived.push(found.clone());
                }
                self.unresolved[i].cited = Some(found);
            }
        }
        for corpus in arrived {
            let (edges, tasks) = self.bind_arrived(&corpus, &mut delta.warnings);
            delta.edges_added += edges;
            delta.alignment_tasks_added += tasks;
        }
        delta
    }

    /// Record the outcome of a late alignment call for an awaiting reference.
    pub fn apply_alignment(&mut self, entry: &AlignmentEntry) -> Result<usize, GraphError> {
        let pos = self
            .awaiting
            .iter()
            .position(|t| {
                t.dep_id == entry.dep_id
                    && t.prereq_index == entry.prereq_index
                    && t.reference_index == entry.reference_index
                    && t.cited == entry.corpus_id
            })
            .ok_or_else(|| GraphError::NotAwaiting {
                dep_id: entry.dep_id.clone(),
                prereq_index: entry.prereq_index,
                reference_index: entry.reference_index,
            })?;
        let mut new_edges = Vec::with_capacity(entry.matches.len());
        for m in &entry.matches {
            let target = m
                .contribution_id
                .parse::<ContributionId>()
                .ok()
                .filter(|t| t.corpus == entry.corpus_id && self.nodes.contains_key(t) && t != &entry.dep_id)
                .ok_or_else(|| GraphError::ForeignMatch {
                    id: m.contribution_id.clone(),
                    corpus: entry.corpus_id.clone(),
                })?;
            new_edges.push(Edge {
                pre_id: target,
                dep_id: entry.dep_id.clone(),
                match_type: m.match_type,
                explanation: m.explanation.clone(),
                prereq_index: entry.prereq_index,
            });
        }
        self.awaiting.remove(pos);
        if let Some(Reference::Paper(paper)) = self
            .prereqs
            .get_mut(&entry.dep_id)
            .and_then(|ps| ps.get_mut(entry.prereq_index))
            .and_then(|p| p.references.get_mut(entry.reference_index))
        {
            paper.matches = entry.matches.clone();
            paper.corpus_id.get_or_insert_with(|| entry.corpus_id.0.clone());
        }
        let n = new_edges.len();
        for e in new_edges {
            self.push_edge(e);
        }
        Ok(n)
    }

    /// Join of each contribution with its paper metadata, in id order.
    pub fn node_rows(&self) -> Vec<NodeRow> {
        self.nodes
            .values()
            .map(|c| {
                let paper = &self.papers[&c.id.corpus];
                NodeRow {
                    contribution: c.clone(),
                    corpus_id: paper.corpus_id.clone(),
                    title: paper.title.clone(),
                    year: paper.year,
                    date: paper.date,
                    venue: paper.venue.clone(),
                }
            })
            .collect()
    }

    /// Rebuild a graph from node and edge rows alone (no prerequisite text).
    pub fn from_nodes_edges(nodes: Vec<NodeRow>, edges: Vec<Edge>) -> Self {
        let mut g = ContributionGraph::new();
        for row in nodes {
            if !g.papers.contains_key(&row.corpus_id) {
                let mut meta = PaperMeta::new(row.corpus_id.as_str(), row.title.clone(), row.year);
                meta.date = row.date;
                meta.venue = row.venue.clone();
                meta.status = PaperStatus::Extracted;
                g.register_paper(meta);
            }
            g.nodes.insert(row.contribution.id.clone(), row.contribution);
        }
        for e in edges {
            g.push_edge(e);
        }
        g
    }

    /// All type invariants; empty when the graph is consistent.
    pub fn validate(&self) -> Vec<Violation> {
        validate::run(self)
    }
}
