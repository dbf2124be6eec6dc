//! Text-generation backends: the contract, a replay mock keyed by prompt
//! hash, a recorder that writes such mocks, and an OpenAI-compatible HTTP
//! client.

use std::collections::HashMap;
use std::fs;
use std::ops::AddAssign;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GenParams {
    pub temperature: Option<f32>,
    pub max_output_tokens: Option<u32>,
}

impl Default for GenParams {
    fn default() -> Self {
        GenParams {
            temperature: Some(0.0),
            max_output_tokens: None,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Usage {
    pub calls: u64,
    pub input_tokens: u64,
    pub output_tokens: u64,
    pub cost_usd: f64,
}

impl AddAssign for Usage {
    fn add_assign(&mut self, rhs: Usage) {
        self.calls += rhs.calls;
        self.input_tokens += rhs.input_tokens;
        self.output_tokens += rhs.output_tokens;
        self.cost_usd += rhs.cost_usd;
    }
}

/// USD per million tokens.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Pricing {
    pub input_per_mtok: f64,
    pub output_per_mtok: f64,
}

impl Pricing {
    pub fn cost(&self, input_tokens: u64, output_tokens: u64) -> f64 {
        (input_tokens as f64 * self.input_per_mtok + output_tokens as f64 * self.output_per_mtok) / 1e6
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Generation {
    pub text: String,
    pub usage: Usage,
}

#[derive(Debug, thiserror::Error)]
pub enum BackendError {
    #[error("no canned response for prompt {hash}")]
    MockMiss { hash: String },
    #[error("backend transport error: {0}")]
    Transport(String),
    #[error("unexpected backend response: {0}")]
    Protocol(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("backend not configured: {0}")]
    Config(String),
}

/// Anything that turns a prompt into text. Implementations must tolerate
/// concurrent calls.
pub trait GenerationBackend: Send + Sync {
    fn name(&self) -> &str;

    fn model(&self) -> &str;

    fn tag(&self) -> String {
        format!("{}:{}", self.name(), self.model())
    }

    fn generate(&self, prompt: &str, params: &GenParams) -> Result<Generation, BackendError>;
}

impl<B: GenerationBackend + ?Sized> GenerationBackend for &B {
    fn name(&self) -> &str {
        (**self).name()
    }
    fn model(&self) -> &str {
        (**self).model()
    }
    fn generate(&self, prompt: &str, params: &GenParams) -> Result<Generation, BackendError> {
        (**self).generate(prompt, params)
    }
}

/// Hex SHA-256 of a fully rendered prompt; the replay-mock key.
pub fn prompt_hash(prompt: &str) -> String {
    hex::encode(Sha256::digest(prompt.as_bytes()))
}

/// Rough token count for backends that do not report one.
pub fn estimate_tokens(text: &str) -> u64 {
    (text.chars().count() as u64).div_ceil(4)
}

const MOCK_EXT: &str = "txt";

/// Replays canned responses looked up by [`prompt_hash`].
///
/// In strict mode an unknown prompt is an error; otherwise the fallback
/// response (empty text by default) is returned.
#[derive(Debug, Clone, Default)]
pub struct MockBackend {
    responses: HashMap<String, String>,
    strict: bool,
    fallback: String,
    model: String,
}

impl MockBackend {
    pub fn new(strict: bool) -> Self {
        MockBackend {
            strict,
            model: "replay".into(),
            ..Default::default()
        }
    }

    /// Loads every `<hash>.txt` file of a replay directory.
    pub fn load_dir(dir: &Path, strict: bool) -> Result<Self, BackendError> {
        let io = |source| BackendError::Io {
            path: dir.to_path_buf(),
            source,
        };
        let mut mock = MockBackend::new(strict);
        mock.model = dir
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| "replay".into());
        for entry in fs::read_dir(dir).map_err(io)? {
            let path = entry.map_err(io)?.path();
            if path.extension().and_then(|e| e.to_str()) != Some(MOCK_EXT) {
                continue;
            }
            let Some(hash) = path.file_stem().and_then(|s| s.to_str()) else {
                continue;
            };
            let text = fs::read_to_string(&path).map_err(|source| BackendError::Io {
                path: path.clone(),
                source,
            })?;
            mock.responses.insert(hash.to_string(), text);
        }
        Ok(mock)
    }

    pub fn with_fallback(mut self, response: impl Into<String>) -> Self {
        self.fallback = response.into();
        self
    }

    /// Registers the response for a prompt.
    pub fn insert(&mut self, prompt: &str, response: impl Into<String>) {
        self.responses.insert(prompt_hash(prompt), response.into());
    }

    pub fn insert_hash(&mut self, hash: impl Into<String>, response: impl Into<String>) {
        self.responses.insert(hash.into(), response.into());
    }

    pub fn len(&self) -> usize {
        self.responses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.responses.is_empty()
    }
}

impl GenerationBackend for MockBackend {
    fn name(&self) -> &str {
        "mock"
    }

    fn model(&self) -> &str {
        &self.model
    }

    fn generate(&self, prompt: &str, _params: &GenParams) -> Result<Generation, BackendError> {
        let hash = prompt_hash(prompt);
        let text = match self.responses.get(&hash) {
            Some(t) => t.clone(),
            None if self.strict => return Err(BackendError::MockMiss { hash }),
            None => self.fallback.clone(),
        };
        let usage = Usage {
            calls: 1,
            input_tokens: estimate_tokens(prompt),
            output_tokens: estimate_tokens(&text),
            cost_usd: 0.0,
        };
        Ok(Generation { text, usage })
    }
}

/// Wraps a backend and writes every response into a replay directory.
pub struct RecordingBackend<B> {
    inner: B,
    dir: PathBuf,
}

impl<B: GenerationBackend> RecordingBackend<B> {
    pub fn new(inner: B, dir: impl Into<PathBuf>) -> Result<Self, BackendError> {
        let dir = dir.into();
        fs::create_dir_all(&dir).map_err(|source| BackendError::Io {
            path: dir.clone(),
            source,
        })?;
        Ok(RecordingBackend { inner, dir })
    }
}

impl<B: GenerationBackend> GenerationBackend for RecordingBackend<B> {
    fn name(&self) -> &str {
        self.inner.name()
    }

    fn model(&self) -> &str {
        self.inner.model()
    }

    fn generate(&self, prompt: &str, params: &GenParams) -> Result<Generation, BackendError> {
        let out = self.inner.generate(prompt, params)?;
        let path = self.dir.join(format!("{}.{MOCK_EXT}", prompt_hash(prompt)));
        fs::write(&path, &out.text).map_err(|source| BackendError::Io { path, source })?;
        Ok(out)
    }
}

pub const ENV_LLM_ENDPOINT: &str = "SCIGRAPH_LLM_ENDPOINT";
pub const ENV_LLM_API_KEY: &str = "SCIGRAPH_LLM_API_KEY";
pub const ENV_LLM_MODEL: &str = "SCIGRAPH_LLM_MODEL";

/// Client for any server speaking the OpenAI chat-completions protocol.
pub struct OpenAiCompatBackend {
    endpoint: String,
    api_key: Option<String>,
    model: String,
    pricing: Pricing,
    agent: ureq::Agent,
}

impl OpenAiCompatBackend {
    pub fn new(endpoint: impl Into<String>, api_key: Option<String>, model: impl Into<String>, pricing: Pricing) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(600)))
            .build()
            .into();
        OpenAiCompatBackend {
            endpoint: endpoint.into().trim_end_matches('/').to_string(),
            api_key,
            model: model.into(),
            pricing,
            agent,
        }
    }

    /// Reads `SCIGRAPH_LLM_ENDPOINT`, `SCIGRAPH_LLM_MODEL` and the optional
    /// `SCIGRAPH_LLM_API_KEY`.
    pub fn from_env(pricing: Pricing) -> Result<Self, BackendError> {
        let endpoint = std::env::var(ENV_LLM_ENDPOINT)
            .map_err(|_| BackendError::Config(format!("{ENV_LLM_ENDPOINT} is not set")))?;
        let model = std::env::var(ENV_LLM_MODEL)
            .map_err(|_| BackendError::Config(format!("{ENV_LLM_MODEL} is not set")))?;
        let api_key = std::env::var(ENV_LLM_API_KEY).ok();
        Ok(Self::new(endpoint, api_key, model, pricing))
    }
}

impl GenerationBackend for OpenAiCompatBackend {
    fn name(&self) -> &str {
        "openai-compat"
    }

    fn model(&self) -> &str {
        &self.model
    }

    fn generate(&self, prompt: &str, params: &GenParams) -> Result<Generation, BackendError> {
        let mut body = serde_json::json!({
            "model": self.model,
            "messages": [{"role": "user", "content": prompt}],
        });
        if let Some(t) = params.temperature {
            body["temperature"] = t.into();
        }
        if let Some(n) = params.max_output_tokens {
            body["max_tokens"] = n.into();
        }
        let mut req = self.agent.post(format!("{}/chat/completions", self.endpoint));
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", format!("Bearer {key}"));
        }
        let mut resp = req
            .send_json(&body)
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        let value: serde_json::Value = resp
            .body_mut()
            .read_json()
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        let text = value["choices"][0]["message"]["content"]
            .as_str()
            .ok_or_else(|| BackendError::Protocol("missing choices[0].message.content".into()))?
            .to_string();
        let input_tokens = value["usage"]["prompt_tokens"]
            .as_u64()
            .unwrap_or_else(|| estimate_tokens(prompt));
        let output_tokens = value["usage"]["completion_tokens"]
            .as_u64()
            .unwrap_or_else(|| estimate_tokens(&text));
        Ok(Generation {
            text,
            usage: Usage {
                calls: 1,
                input_tokens,
                output_tokens,
                cost_usd: self.pricing.cost(input_tokens, output_tokens),
            },
        })
    }
}
