//! Per-paper orchestration and batch application through the store.

use std::collections::HashSet;

use serde::Serialize;

use super::stages::{AlignSource, PaperInput, Pipeline, Tally};
use super::{PipelineError, Usage};
use crate::frontier::resolve_reference;
use crate::graph::{
    AlignmentEntry, ContributionGraph, ExtractionRecord, GraphDelta, PaperMeta, PaperStatus,
    RecordContribution, Reference, Store, StoreError,
};

/// A finished extraction that has not been applied yet.
#[derive(Debug, Clone)]
pub struct Extraction {
    pub record: ExtractionRecord,
    /// (contribution position, prerequisite, reference) already aligned.
    aligned: HashSet<(usize, usize, usize)>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PaperOutcome {
    pub corpus_id: crate::graph::CorpusId,
    pub status: PaperStatus,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub usage: Usage,
    pub delta: GraphDelta,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct LateReport {
    pub aligned: usize,
    pub edges_added: usize,
    pub failed: usize,
    pub usage: Usage,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct BatchReport {
    pub papers: Vec<PaperOutcome>,
    pub late: LateReport,
    pub usage: Usage,
}

impl BatchReport {
    pub fn failed(&self) -> usize {
        self.papers.iter().filter(|p| p.status == PaperStatus::Failed).count()
    }
}

impl Pipeline<'_> {
    /// Runs all three stages for one paper against a read-only graph.
    /// References into papers already extracted in `graph` are aligned here.
    pub fn extract_paper(
        &self,
        paper: &PaperInput,
        graph: &ContributionGraph,
        tally: &mut Tally,
    ) -> Result<Extraction, PipelineError> {
        if graph.is_extracted(&paper.corpus_id) {
            return Err(PipelineError::InvalidInput {
                paper: paper.corpus_id.clone(),
                reason: "paper is already extracted".into(),
            });
        }
        let contributions = self.extract_contributions(paper, tally)?;
        let mut expanded = Vec::with_capacity(contributions.len());
        for c in &contributions {
            let others: Vec<_> = contributions.iter().filter(|o| o.key != c.key).cloned().collect();
            expanded.extend(self.extract_prerequisites(c, &others, paper, tally)?);
        }
        let record = ExtractionRecord {
            corpus_id: paper.corpus_id.clone(),
            title: paper.title.clone(),
            year: paper.year,
            contributions: expanded
                .into_iter()
                .map(|e| RecordContribution {
                    contribution_id: None,
                    key: Some(e.key),
                    name: e.name,
                    description: e.description,
                    types: e.types,
                    sections: e.sections,
                    prerequisites: e.prerequisites,
                    split_key: None,
                })
                .collect(),
        }
        .normalize()
        .map_err(|e| PipelineError::InvalidInput {
            paper: paper.corpus_id.clone(),
            reason: e.to_string(),
        })?;
        let mut extraction = Extraction {
            record,
            aligned: HashSet::new(),
        };
        self.complete_alignments(&mut extraction, graph, tally)?;
        Ok(extraction)
    }

    /// Aligns every paper reference whose cited paper is extracted in `graph`
    /// and that has not been aligned before.
    fn complete_alignments(
        &self,
        extraction: &mut Extraction,
        graph: &ContributionGraph,
        tally: &mut Tally,
    ) -> Result<(), PipelineError> {
        let Extraction { record, aligned } = extraction;
        let corpus = record.corpus_id.clone();
        for pos in 0..record.contributions.len() {
            for pi in 0..record.contributions[pos].prerequisites.len() {
                for ri in 0..record.contributions[pos].prerequisites[pi].references.len() {
                    if aligned.contains(&(pos, pi, ri)) {
                        continue;
                    }
                    let c = &record.contributions[pos];
                    let Reference::Paper(p) = &c.prerequisites[pi].references[ri] else {
                        continue;
                    };
                    let Some(cited) = resolve_reference(p, graph.catalog()) else {
                        continue;
                    };
                    if cited == corpus || !graph.is_extracted(&cited) {
                        continue;
                    }
                    let source = AlignSource {
                        paper: &corpus,
                        name: &c.name,
                        description: &c.description,
                    };
                    let matches = self.align_prerequisite(
                        source,
                        &c.prerequisites[pi],
                        ri,
                        &graph.contributions_of(&cited),
                        tally,
                    )?;
                    if let Reference::Paper(p) = &mut record.contributions[pos].prerequisites[pi].references[ri] {
                        p.matches = matches;
                    }
                    aligned.insert((pos, pi, ri));
                }
            }
        }
        Ok(())
    }

    fn mark_failed(store: &mut Store, paper: &PaperInput) {
        let g = store.graph_mut();
        g.register_paper(PaperMeta::new(paper.corpus_id.as_str(), paper.title.clone(), paper.year));
        g.set_status(&paper.corpus_id, PaperStatus::Failed)
            .expect("paper registered above");
    }

    fn apply(
        &self,
        paper: &PaperInput,
        result: Result<Extraction, PipelineError>,
        mut tally: Tally,
        store: &mut Store,
    ) -> Result<PaperOutcome, StoreError> {
        let result = result.and_then(|mut ext| {
            self.complete_alignments(&mut ext, store.graph(), &mut tally)?;
            Ok(ext)
        });
        let failed = |error: String, tally: Tally| PaperOutcome {
            corpus_id: paper.corpus_id.clone(),
            status: PaperStatus::Failed,
            error: Some(error),
            usage: tally.usage,
            delta: GraphDelta::default(),
            warnings: tally.warnings,
        };
        let ext = match result {
            Ok(ext) => ext,
            Err(e) => {
                log::warn!("{e}");
                Self::mark_failed(store, paper);
                return Ok(failed(e.to_string(), tally));
            }
        };
        store
            .graph_mut()
            .register_paper(PaperMeta::new(paper.corpus_id.as_str(), paper.title.clone(), paper.year));
        match store.add_record(ext.record) {
            Ok(delta) => {
                let mut warnings = tally.warnings;
                warnings.extend(delta.warnings.iter().cloned());
                Ok(PaperOutcome {
                    corpus_id: paper.corpus_id.clone(),
                    status: PaperStatus::Extracted,
                    error: None,
                    usage: tally.usage,
                    delta,
                    warnings,
                })
            }
            Err(StoreError::Replay { source, .. }) => {
                log::warn!("{}: record rejected: {source}", paper.corpus_id);
                Self::mark_failed(store, paper);
                Ok(failed(source.to_string(), tally))
            }
            Err(e) => Err(e),
        }
    }

    pub fn run_paper(&self, paper: &PaperInput, store: &mut Store) -> Result<PaperOutcome, StoreError> {
        let mut report = self.run_batch(std::slice::from_ref(paper), store, 1)?;
        Ok(report.papers.remove(0))
    }

    /// Extracts a batch concurrently against the current graph, then applies
    /// the results one by one in input order. Papers already extracted, and
    /// repeated ids, are skipped.
    pub fn run_batch(
        &self,
        papers: &[PaperInput],
        store: &mut Store,
        parallel: usize,
    ) -> Result<BatchReport, StoreError> {
        let mut seen = HashSet::new();
        let todo: Vec<&PaperInput> = papers
            .iter()
            .filter(|p| !store.graph().is_extracted(&p.corpus_id) && seen.insert(p.corpus_id.clone()))
            .collect();
        let snapshot = store.graph();
        let run = |p: &&PaperInput| {
            let mut tally = Tally::default();
            let r = self.extract_paper(p, snapshot, &mut tally);
            (r, tally)
        };
        let results: Vec<_> = if parallel > 1 && todo.len() > 1 {
            use rayon::prelude::*;
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(parallel)
                .build()
                .expect("thread pool");
            pool.install(|| todo.par_iter().map(run).collect())
        } else {
            todo.iter().map(run).collect()
        };

        let mut report = BatchReport::default();
        for (paper, (result, tally)) in todo.into_iter().zip(results) {
            let outcome = self.apply(paper, result, tally, store)?;
            report.usage += outcome.usage;
            report.papers.push(outcome);
            let late = self.bind_late(store)?;
            report.usage += late.usage;
            report.late.aligned += late.aligned;
            report.late.edges_added += late.edges_added;
            report.late.failed += late.failed;
            report.late.usage += late.usage;
        }
        store.save()?;
        Ok(report)
    }

    /// Aligns references that were waiting for their cited paper and logs
    /// the results. A failed alignment stays queued.
    pub fn bind_late(&self, store: &mut Store) -> Result<LateReport, StoreError> {
        let mut report = LateReport::default();
        for task in store.graph().awaiting_alignment() {
            let g = store.graph();
            let Some(dep) = g.contribution(&task.dep_id) else { continue };
            let Some(prereq) = g.prerequisites(&task.dep_id).get(task.prereq_index) else {
                continue;
            };
            let mut tally = Tally::default();
            let source = AlignSource {
                paper: &task.dep_id.corpus,
                name: &dep.name,
                description: &dep.description,
            };
            let result = self.align_prerequisite(
                source,
                prereq,
                task.reference_index,
                &g.contributions_of(&task.cited),
                &mut tally,
            );
            report.usage += tally.usage;
            match result {
                Ok(matches) => {
                    let entry = AlignmentEntry {
                        dep_id: task.dep_id.clone(),
                        prereq_index: task.prereq_index,
                        reference_index: task.reference_index,
                        corpus_id: task.cited.clone(),
                        matches,
                    };
                    report.edges_added += store.add_alignment(entry)?;
                    report.aligned += 1;
                }
                Err(e) => {
                    log::warn!("late alignment of {}: {e}", task.dep_id);
                    report.failed += 1;
                }
            }
        }
        Ok(report)
    }
}
