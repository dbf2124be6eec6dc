//! Generation-backed extraction: contributions, their prerequisites, and the
//! alignment of cited prerequisites onto contributions of earlier papers.

pub mod backend;
mod crawl;
mod fenced;
pub mod prompts;
mod stages;

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::graph::CorpusId;

pub use backend::{
    estimate_tokens, prompt_hash, BackendError, GenParams, Generation, GenerationBackend, MockBackend,
    OpenAiCompatBackend, Pricing, RecordingBackend, Usage,
};
pub use crawl::{BatchReport, Extraction, LateReport, PaperOutcome};
pub use fenced::{parse_fenced_json, ParseFailure};
pub use prompts::PromptSet;
pub use stages::{AlignSource, ExtractedContribution, PaperInput, Pipeline, PipelineConfig, Tally};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Contributions,
    Prerequisites,
    Alignment,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Contributions => "contributions",
            Stage::Prerequisites => "prerequisites",
            Stage::Alignment => "alignment",
        })
    }
}

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("{paper}: {stage} stage failed after {attempts} attempts: {last_error}")]
    StageFailure {
        paper: CorpusId,
        stage: Stage,
        attempts: usize,
        last_error: String,
    },
    #[error("{paper}: backend error in {stage} stage: {source}")]
    Backend {
        paper: CorpusId,
        stage: Stage,
        #[source]
        source: BackendError,
    },
    #[error("{paper}: {reason}")]
    InvalidInput { paper: CorpusId, reason: String },
}

impl PipelineError {
    pub fn paper(&self) -> &CorpusId {
        match self {
            PipelineError::StageFailure { paper, .. }
            | PipelineError::Backend { paper, .. }
            | PipelineError::InvalidInput { paper, .. } => paper,
        }
    }
}
