use std::collections::HashMap;
use std::fmt;

use serde::Serialize;

use super::{ContributionGraph, ContributionId, PaperStatus, Reference};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationKind {
    EmptyCorpusId,
    UnknownPaper,
    EmptyName,
    EmptyDescription,
    SelfLoop,
    DanglingEdge,
    BadPrereqIndex,
    CrossPaperInternal,
    DanglingInternal,
    EmptyArtifactUrl,
    AdjacencyMismatch,
    StaleUnresolved,
}

impl fmt::Display for ViolationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ViolationKind::EmptyCorpusId => "empty-corpus-id",
            ViolationKind::UnknownPaper => "unknown-paper",
            ViolationKind::EmptyName => "empty-name",
            ViolationKind::EmptyDescription => "empty-description",
            ViolationKind::SelfLoop => "self-loop",
            ViolationKind::DanglingEdge => "dangling-edge",
            ViolationKind::BadPrereqIndex => "bad-prereq-index",
            ViolationKind::CrossPaperInternal => "cross-paper-internal",
            ViolationKind::DanglingInternal => "dangling-internal",
            ViolationKind::EmptyArtifactUrl => "empty-artifact-url",
            ViolationKind::AdjacencyMismatch => "adjacency-mismatch",
            ViolationKind::StaleUnresolved => "stale-unresolved",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Violation {
    pub kind: ViolationKind,
    /// Offending paper, contribution, or edge.
    pub subject: String,
    pub detail: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {}: {}", self.kind, self.subject, self.detail)
    }
}

pub(super) fn run(g: &ContributionGraph) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut push = |kind, subject: String, detail: String| out.push(Violation { kind, subject, detail });

    for (corpus, meta) in &g.papers {
        if corpus.as_str().trim().is_empty() || meta.corpus_id != *corpus {
            push(ViolationKind::EmptyCorpusId, corpus.to_string(), "corpus id empty or mismatched key".into());
        }
    }

    for (id, c) in &g.nodes {
        if !g.papers.contains_key(&id.corpus) {
            push(ViolationKind::UnknownPaper, id.to_string(), format!("paper {} not in store", id.corpus));
        }
        if c.name.trim().is_empty() {
            push(ViolationKind::EmptyName, id.to_string(), "name is empty".into());
        }
        if c.description.trim().is_empty() {
            push(ViolationKind::EmptyDescription, id.to_string(), "description is empty".into());
        }
    }

    for (owner, prereqs) in &g.prereqs {
        for (pi, p) in prereqs.iter().enumerate() {
            for r in &p.references {
                match r {
                    Reference::Internal(internal) => match internal.contribution_id.parse::<ContributionId>() {
                        Ok(target) if target.corpus != owner.corpus => push(
                            ViolationKind::CrossPaperInternal,
                            owner.to_string(),
                            format!("prerequisite {pi} internally references {target}"),
                        ),
                        Ok(target) if g.nodes.contains_key(&target) => {}
                        _ => push(
                            ViolationKind::DanglingInternal,
                            owner.to_string(),
                            format!("prerequisite {pi} references unknown `{}`", internal.contribution_id),
                        ),
                    },
                    Reference::Artifact(a) if a.url.trim().is_empty() => push(
                        ViolationKind::EmptyArtifactUrl,
                        owner.to_string(),
                        format!("prerequisite {pi} artifact `{}` has no url", a.name),
                    ),
                    _ => {}
                }
            }
        }
    }

    let mut incoming: HashMap<&ContributionId, Vec<usize>> = HashMap::new();
    let mut outgoing: HashMap<&ContributionId, Vec<usize>> = HashMap::new();
    for (i, e) in g.edges.iter().enumerate() {
        let subject = format!("{}->{}", e.pre_id, e.dep_id);
        if e.pre_id == e.dep_id {
            push(ViolationKind::SelfLoop, subject.clone(), "precursor equals dependent".into());
        }
        for end in [&e.pre_id, &e.dep_id] {
            if !g.nodes.contains_key(end) {
                push(ViolationKind::DanglingEdge, subject.clone(), format!("{end} not in store"));
            }
        }
        if let Some(ps) = g.prereqs.get(&e.dep_id) {
            if e.prereq_index >= ps.len() {
                push(
                    ViolationKind::BadPrereqIndex,
                    subject.clone(),
                    format!("prereq_index {} but {} prerequisites", e.prereq_index, ps.len()),
                );
            }
        }
        incoming.entry(&e.dep_id).or_default().push(i);
        outgoing.entry(&e.pre_id).or_default().push(i);
    }
    for (name, built, index) in [("incoming", &incoming, &g.incoming), ("outgoing", &outgoing, &g.outgoing)] {
        let mut keys: Vec<&ContributionId> = built.keys().copied().chain(index.keys()).collect();
        keys.sort();
        keys.dedup();
        for k in keys {
            let mut a = built.get(k).cloned().unwrap_or_default();
            let mut b = index.get(k).cloned().unwrap_or_default();
            a.sort_unstable();
            b.sort_unstable();
            if a != b {
                push(ViolationKind::AdjacencyMismatch, k.to_string(), format!("{name} index disagrees with edge list"));
            }
        }
    }

    for u in &g.unresolved {
        if let Some(cited) = &u.cited {
            if g.papers.get(cited).is_some_and(|p| p.status == PaperStatus::Extracted) {
                push(
                    ViolationKind::StaleUnresolved,
                    u.dep_id.to_string(),
                    format!("reference to extracted paper {cited} still unresolved"),
                );
            }
        }
    }
    out
}
