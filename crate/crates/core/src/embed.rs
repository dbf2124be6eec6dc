//! Per-contribution embedding index with exact cosine top-k retrieval.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::graph::{Contribution, ContributionGraph, ContributionId};

pub const MAGIC: &[u8; 4] = b"SCGE";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum EmbedError {
    #[error("vector has dimension {got}, index has {expected}")]
    DimMismatch { expected: usize, got: usize },
    #[error("dimension must be positive")]
    ZeroDim,
    #[error("k must be at least 1")]
    ZeroK,
    #[error("no vector for {0}")]
    UnknownId(ContributionId),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: malformed embeddings file: {reason}")]
    Format { path: PathBuf, reason: String },
    #[error("embedding provider: {0}")]
    Provider(String),
}

/// Text a contribution is embedded by.
pub fn embedding_text(c: &Contribution) -> String {
    format!("{}: {}", c.name, c.description)
}

pub trait EmbeddingProvider: Send + Sync {
    fn tag(&self) -> String;

    fn dim(&self) -> usize;

    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, EmbedError>;
}

/// Deterministic pseudo-random unit vectors seeded by the SHA-256 of the text.
#[derive(Debug, Clone, Copy)]
pub struct MockEmbedder {
    dim: usize,
}

impl MockEmbedder {
    pub fn new(dim: usize) -> Result<Self, EmbedError> {
        if dim == 0 {
            return Err(EmbedError::ZeroDim);
        }
        Ok(MockEmbedder { dim })
    }

    pub fn vector(&self, text: &str) -> Vec<f64> {
        let seed: [u8; 32] = Sha256::digest(text.as_bytes()).into();
        let mut rng = ChaCha8Rng::from_seed(seed);
        loop {
            let v: Vec<f64> = (0..self.dim).map(|_| rng.random_range(-1.0..1.0)).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 1e-12 {
                return v.into_iter().map(|x| x / norm).collect();
            }
        }
    }
}

impl EmbeddingProvider for MockEmbedder {
    fn tag(&self) -> String {
        format!("mock:{}", self.dim)
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, EmbedError> {
        Ok(texts.iter().map(|t| self.vector(t)).collect())
    }
}

pub const ENV_EMBED_ENDPOINT: &str = "SCIGRAPH_EMBED_ENDPOINT";
pub const ENV_EMBED_API_KEY: &str = "SCIGRAPH_EMBED_API_KEY";
pub const ENV_EMBED_MODEL: &str = "SCIGRAPH_EMBED_MODEL";

/// Client for an OpenAI-compatible `/embeddings` endpoint.
pub struct HttpEmbedder {
    endpoint: String,
    api_key: Option<String>,
    model: String,
    dim: usize,
    agent: ureq::Agent,
}

impl HttpEmbedder {
    pub fn new(endpoint: impl Into<String>, api_key: Option<String>, model: impl Into<String>, dim: usize) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(300)))
            .build()
            .into();
        HttpEmbedder {
            endpoint: endpoint.into().trim_end_matches('/').to_string(),
            api_key,
            model: model.into(),
            dim,
            agent,
        }
    }

    pub fn from_env(dim: usize) -> Result<Self, EmbedError> {
        let endpoint = std::env::var(ENV_EMBED_ENDPOINT)
            .map_err(|_| EmbedError::Provider(format!("{ENV_EMBED_ENDPOINT} is not set")))?;
        let model = std::env::var(ENV_EMBED_MODEL)
            .map_err(|_| EmbedError::Provider(format!("{ENV_EMBED_MODEL} is not set")))?;
        Ok(Self::new(endpoint, std::env::var(ENV_EMBED_API_KEY).ok(), model, dim))
    }
}

#[derive(Deserialize)]
struct EmbeddingResponse {
    data: Vec<EmbeddingDatum>,
}

#[derive(Deserialize)]
struct EmbeddingDatum {
    index: usize,
    embedding: Vec<f64>,
}

impl EmbeddingProvider for HttpEmbedder {
    fn tag(&self) -> String {
        format!("http:{}", self.model)
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, EmbedError> {
        let mut req = self.agent.post(format!("{}/embeddings", self.endpoint));
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", format!("Bearer {key}"));
        }
        let mut resp = req
            .send_json(serde_json::json!({"model": self.model, "input": texts}))
            .map_err(|e| EmbedError::Provider(e.to_string()))?;
        let mut body: EmbeddingResponse = resp
            .body_mut()
            .read_json()
            .map_err(|e| EmbedError::Provider(e.to_string()))?;
        if body.data.len() != texts.len() {
            return Err(EmbedError::Provider(format!(
                "asked for {} embeddings, got {}",
                texts.len(),
                body.data.len()
            )));
        }
        body.data.sort_by_key(|d| d.index);
        Ok(body.data.into_iter().map(|d| d.embedding).collect())
    }
}

/// Sidecar written next to `embeddings.bin`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndexManifest {
    pub provider: String,
    pub dim: usize,
    pub count: usize,
}

/// Unit-normalized vectors keyed by contribution id, stored as `f32`.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingIndex {
    dim: usize,
    provider: String,
    entries: BTreeMap<ContributionId, Vec<f32>>,
}

fn unit_f32(v: &[f64]) -> Vec<f32> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 || !norm.is_finite() {
        return vec![0.0; v.len()];
    }
    v.iter().map(|x| (x / norm) as f32).collect()
}

impl EmbeddingIndex {
    pub fn new(dim: usize, provider: impl Into<String>) -> Result<Self, EmbedError> {
        if dim == 0 {
            return Err(EmbedError::ZeroDim);
        }
        Ok(EmbeddingIndex {
            dim,
            provider: provider.into(),
            entries: BTreeMap::new(),
        })
    }

    /// Embeds every contribution of the graph, `batch` texts per provider call.
    pub fn build(graph: &ContributionGraph, provider: &dyn EmbeddingProvider, batch: usize) -> Result<Self, EmbedError> {
        let mut index = EmbeddingIndex::new(provider.dim(), provider.tag())?;
        let nodes: Vec<&Contribution> = graph.contributions().collect();
        for chunk in nodes.chunks(batch.max(1)) {
            let texts: Vec<String> = chunk.iter().map(|c| embedding_text(c)).collect();
            let vectors = provider.embed(&texts)?;
            if vectors.len() != chunk.len() {
                return Err(EmbedError::Provider(format!(
                    "asked for {} embeddings, got {}",
                    chunk.len(),
                    vectors.len()
                )));
            }
            for (c, v) in chunk.iter().zip(vectors) {
                index.insert(c.id.clone(), &v)?;
            }
        }
        Ok(index)
    }

    /// Adds or replaces a vector. A zero vector is kept and scores 0
    /// against everything.
    pub fn insert(&mut self, id: ContributionId, vector: &[f64]) -> Result<(), EmbedError> {
        if vector.len() != self.dim {
            return Err(EmbedError::DimMismatch {
                expected: self.dim,
                got: vector.len(),
            });
        }
        self.entries.insert(id, unit_f32(vector));
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn provider(&self) -> &str {
        &self.provider
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn contains(&self, id: &ContributionId) -> bool {
        self.entries.contains_key(id)
    }

    pub fn get(&self, id: &ContributionId) -> Option<&[f32]> {
        self.entries.get(id).map(Vec::as_slice)
    }

    /// Stored vector widened to `f64`, usable as a query.
    pub fn query_vector(&self, id: &ContributionId) -> Result<Vec<f64>, EmbedError> {
        self.get(id)
            .map(|v| v.iter().map(|&x| x as f64).collect())
            .ok_or_else(|| EmbedError::UnknownId(id.clone()))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&ContributionId, &[f32])> {
        self.entries.iter().map(|(k, v)| (k, v.as_slice()))
    }

    /// Cosine similarity between `query` and one stored vector.
    pub fn score(&self, query: &[f64], id: &ContributionId) -> Result<f64, EmbedError> {
        let q = self.unit_query(query)?;
        let v = self.get(id).ok_or_else(|| EmbedError::UnknownId(id.clone()))?;
        Ok(dot(&q, v))
    }

    fn unit_query(&self, query: &[f64]) -> Result<Vec<f64>, EmbedError> {
        if query.len() != self.dim {
            return Err(EmbedError::DimMismatch {
                expected: self.dim,
                got: query.len(),
            });
        }
        let norm = query.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 || !norm.is_finite() {
            return Ok(vec![0.0; self.dim]);
        }
        Ok(query.iter().map(|x| x / norm).collect())
    }

    /// Exact top-`k` by cosine over entries passing `filter`, descending,
    /// ties by ascending id.
    pub fn cosine_top_k(
        &self,
        query: &[f64],
        k: usize,
        filter: Option<&dyn Fn(&ContributionId) -> bool>,
    ) -> Result<Vec<(ContributionId, f64)>, EmbedError> {
        if k == 0 {
            return Err(EmbedError::ZeroK);
        }
        let q = self.unit_query(query)?;
        let mut scored: Vec<(&ContributionId, f64)> = self
            .entries
            .iter()
            .filter(|(id, _)| filter.is_none_or(|f| f(id)))
            .map(|(id, v)| (id, dot(&q, v)))
            .collect();
        let by_rank = |a: &(&ContributionId, f64), b: &(&ContributionId, f64)| {
            b.1.total_cmp(&a.1).then_with(|| a.0.cmp(b.0))
        };
        if scored.len() > k {
            scored.select_nth_unstable_by(k - 1, by_rank);
            scored.truncate(k);
        }
        scored.sort_by(by_rank);
        Ok(scored.into_iter().map(|(id, s)| (id.clone(), s)).collect())
    }

    pub fn manifest_path(path: &Path) -> PathBuf {
        path.with_extension("json")
    }

    /// Writes the binary file and its JSON manifest.
    pub fn save(&self, path: &Path) -> Result<(), EmbedError> {
        let io = |source| EmbedError::Io {
            path: path.to_path_buf(),
            source,
        };
        let tmp = path.with_extension("bin.tmp");
        {
            let file = fs::File::create(&tmp).map_err(io)?;
            let mut w = BufWriter::new(file);
            w.write_all(MAGIC).map_err(io)?;
            w.write_all(&FORMAT_VERSION.to_le_bytes()).map_err(io)?;
            w.write_all(&(self.dim as u32).to_le_bytes()).map_err(io)?;
            w.write_all(&(self.entries.len() as u64).to_le_bytes()).map_err(io)?;
            for (id, v) in &self.entries {
                let id = id.to_string();
                let len = u16::try_from(id.len()).map_err(|_| EmbedError::Format {
                    path: path.to_path_buf(),
                    reason: format!("id `{id}` is longer than {} bytes", u16::MAX),
                })?;
                w.write_all(&len.to_le_bytes()).map_err(io)?;
                w.write_all(id.as_bytes()).map_err(io)?;
                for x in v {
                    w.write_all(&x.to_le_bytes()).map_err(io)?;
                }
            }
            w.into_inner().map_err(|e| io(e.into_error()))?.sync_all().map_err(io)?;
        }
        fs::rename(&tmp, path).map_err(io)?;
        let manifest = IndexManifest {
            provider: self.provider.clone(),
            dim: self.dim,
            count: self.entries.len(),
        };
        let mpath = Self::manifest_path(path);
        fs::write(&mpath, serde_json::to_string_pretty(&manifest).expect("manifest") + "\n")
            .map_err(|source| EmbedError::Io { path: mpath, source })?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, EmbedError> {
        let io = |source| EmbedError::Io {
            path: path.to_path_buf(),
            source,
        };
        let bad = |reason: String| EmbedError::Format {
            path: path.to_path_buf(),
            reason,
        };
        let mut r = BufReader::new(fs::File::open(path).map_err(io)?);
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(io)?;
        if &magic != MAGIC {
            return Err(bad("bad magic".into()));
        }
        let mut b4 = [0u8; 4];
        let mut b8 = [0u8; 8];
        r.read_exact(&mut b4).map_err(io)?;
        let version = u32::from_le_bytes(b4);
        if version != FORMAT_VERSION {
            return Err(bad(format!("unsupported version {version}")));
        }
        r.read_exact(&mut b4).map_err(io)?;
        let dim = u32::from_le_bytes(b4) as usize;
        r.read_exact(&mut b8).map_err(io)?;
        let count = u64::from_le_bytes(b8);
        let provider = fs::read_to_string(Self::manifest_path(path))
            .ok()
            .and_then(|s| serde_json::from_str::<IndexManifest>(&s).ok())
            .map(|m| m.provider)
            .unwrap_or_else(|| "unknown".into());
        let mut index = EmbeddingIndex::new(dim, provider).map_err(|_| bad("zero dimension".into()))?;
        let mut buf = vec![0u8; dim * 4];
        for _ in 0..count {
            let mut b2 = [0u8; 2];
            r.read_exact(&mut b2).map_err(io)?;
            let mut idb = vec![0u8; u16::from_le_bytes(b2) as usize];
            r.read_exact(&mut idb).map_err(io)?;
            let id: ContributionId = String::from_utf8(idb)
                .map_err(|e| bad(e.to_string()))?
                .parse()
                .map_err(|e: crate::graph::ParseIdError| bad(e.to_string()))?;
            r.read_exact(&mut buf).map_err(io)?;
            let v = buf
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect();
            index.entries.insert(id, v);
        }
        if r.read(&mut [0u8; 1]).map_err(io)? != 0 {
            return Err(bad("trailing bytes".into()));
        }
        Ok(index)
    }
}

fn dot(q: &[f64], v: &[f32]) -> f64 {
    let s: f64 = q.iter().zip(v).map(|(a, &b)| a * b as f64).sum();
    s.clamp(-1.0, 1.0)
}
