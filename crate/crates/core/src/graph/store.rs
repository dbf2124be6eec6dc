//! On-disk store directory.
//!
//! `records.jsonl` and `alignments.jsonl` are append-only logs and the
//! source of truth; replaying them rebuilds the graph. `papers.jsonl`
//! carries catalog metadata and failure status. `nodes.jsonl` and
//! `edges.jsonl` are derived views rewritten by [`Store::save`].

use std::fs::{self, OpenOptions};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{
    Contribution, ContributionGraph, ContributionId, CorpusId, Edge, ExtractionRecord, GraphError,
    Match, PaperMeta, PaperStatus, PubDate,
};
use crate::jsonl::{self, JsonlError};

pub const PAPERS_FILE: &str = "papers.jsonl";
pub const RECORDS_FILE: &str = "records.jsonl";
pub const ALIGNMENTS_FILE: &str = "alignments.jsonl";
pub const NODES_FILE: &str = "nodes.jsonl";
pub const EDGES_FILE: &str = "edges.jsonl";
const LOCK_FILE: &str = ".lock";

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error(transparent)]
    Jsonl(#[from] JsonlError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("replaying {file}: {source}")]
    Replay {
        file: &'static str,
        #[source]
        source: GraphError,
    },
    #[error("store {0} is locked by another process (remove the .lock file if stale)")]
    Locked(PathBuf),
}

/// One line of `nodes.jsonl`: a contribution joined with its paper metadata.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeRow {
    #[serde(flatten)]
    pub contribution: Contribution,
    pub corpus_id: CorpusId,
    pub title: String,
    pub year: i32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub date: Option<PubDate>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub venue: Option<String>,
}

/// One line of `alignments.jsonl`: the result of aligning a reference after
/// its cited paper arrived.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AlignmentEntry {
    pub dep_id: ContributionId,
    pub prereq_index: usize,
    pub reference_index: usize,
    pub corpus_id: CorpusId,
    pub matches: Vec<Match>,
}

pub struct Store {
    dir: PathBuf,
    graph: ContributionGraph,
}

/// Exclusive write access to a store directory; released on drop.
#[derive(Debug)]
pub struct StoreLock {
    path: PathBuf,
}

impl Drop for StoreLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

impl Store {
    /// Opens (creating if needed) a store directory and replays its logs.
    pub fn open(dir: impl Into<PathBuf>) -> Result<Store, StoreError> {
        let dir = dir.into();
        fs::create_dir_all(&dir).map_err(|source| StoreError::Io {
            path: dir.clone(),
            source,
        })?;
        let mut graph = ContributionGraph::new();
        for mut meta in jsonl::read::<PaperMeta>(&dir.join(PAPERS_FILE))? {
            // extraction status is re-established by the record log
            if meta.status == PaperStatus::Extracted {
                meta.status = PaperStatus::Pending;
            }
            graph.register_paper(meta);
        }
        for record in jsonl::read::<ExtractionRecord>(&dir.join(RECORDS_FILE))? {
            graph
                .add_paper_record(record)
                .map_err(|source| StoreError::Replay {
                    file: RECORDS_FILE,
                    source,
                })?;
        }
        for entry in jsonl::read::<AlignmentEntry>(&dir.join(ALIGNMENTS_FILE))? {
            graph
                .apply_alignment(&entry)
                .map_err(|source| StoreError::Replay {
                    file: ALIGNMENTS_FILE,
                    source,
                })?;
        }
        Ok(Store { dir, graph })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn path(&self, file: &str) -> PathBuf {
        self.dir.join(file)
    }

    pub fn graph(&self) -> &ContributionGraph {
        &self.graph
    }

    pub fn graph_mut(&mut self) -> &mut ContributionGraph {
        &mut self.graph
    }

    pub fn lock(&self) -> Result<StoreLock, StoreError> {
        let path = self.dir.join(LOCK_FILE);
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(_) => Ok(StoreLock { path }),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                Err(StoreError::Locked(self.dir.clone()))
            }
            Err(source) => Err(StoreError::Io { path, source }),
        }
    }

    /// Applies a record to the graph and appends it to the record log.
    /// Nothing is logged when the graph rejects the record.
    pub fn add_record(&mut self, record: ExtractionRecord) -> Result<super::GraphDelta, StoreError> {
        let normalized = record.clone().normalize().map_err(|source| StoreError::Replay {
            file: RECORDS_FILE,
            source: GraphError::InvalidRecord {
                corpus: record.corpus_id.clone(),
                source,
            },
        })?;
        let delta = self
            .graph
            .add_paper_record(normalized.clone())
            .map_err(|source| StoreError::Replay {
                file: RECORDS_FILE,
                source,
            })?;
        jsonl::append(&self.path(RECORDS_FILE), &normalized)?;
        Ok(delta)
    }

    pub fn add_alignment(&mut self, entry: AlignmentEntry) -> Result<usize, StoreError> {
        let n = self
            .graph
            .apply_alignment(&entry)
            .map_err(|source| StoreError::Replay {
                file: ALIGNMENTS_FILE,
                source,
            })?;
        jsonl::append(&self.path(ALIGNMENTS_FILE), &entry)?;
        Ok(n)
    }

    /// Rewrites `papers.jsonl`, `nodes.jsonl` and `edges.jsonl`.
    pub fn save(&self) -> Result<(), StoreError> {
        let papers: Vec<&PaperMeta> = self.graph.papers().collect();
        jsonl::write(&self.path(PAPERS_FILE), &papers)?;
        jsonl::write(&self.path(NODES_FILE), &self.graph.node_rows())?;
        jsonl::write(&self.path(EDGES_FILE), &sorted_edges(&self.graph))?;
        Ok(())
    }

    /// Loads a graph from the derived node and edge views only.
    pub fn load_view(dir: &Path) -> Result<ContributionGraph, StoreError> {
        let nodes: Vec<NodeRow> = jsonl::read(&dir.join(NODES_FILE))?;
        let edges: Vec<Edge> = jsonl::read(&dir.join(EDGES_FILE))?;
        Ok(ContributionGraph::from_nodes_edges(nodes, edges))
    }
}

/// Edges in a canonical order, independent of insertion history.
pub(crate) fn sorted_edges(g: &ContributionGraph) -> Vec<Edge> {
    let mut edges = g.edges().to_vec();
    edges.sort_by(|a, b| {
        (&a.dep_id, a.prereq_index, &a.pre_id, a.match_type, &a.explanation).cmp(&(
            &b.dep_id,
            b.prereq_index,
            &b.pre_id,
            b.match_type,
            &b.explanation,
        ))
    });
    edges
}

/// Canonical JSONL text of the node and edge views, used for hashing.
pub fn canonical_view(g: &ContributionGraph) -> String {
    let mut s = jsonl::to_string(&g.node_rows());
    s.push_str(&jsonl::to_string(&sorted_edges(g)));
    s
}
