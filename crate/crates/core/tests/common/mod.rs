#![allow(dead_code)]

pub mod corpus10;
pub mod oracles;

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use scigraph_core::graph::{ContributionGraph, CorpusId, ExtractionRecord, PaperMeta};
use scigraph_core::pipeline::{estimate_tokens, BackendError, GenParams, Generation, GenerationBackend, PaperInput, Usage};
use scigraph_core::taskgen::{Candidate, Problem, Target};
use serde_json::{json, Value};

pub fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests").join("fixtures")
}

pub fn load_record(path: &Path) -> ExtractionRecord {
    let text = std::fs::read_to_string(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    serde_json::from_str(&text).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

pub const BERT: &str = "52967399";
pub const BERT_CITED: [&str; 3] = ["13756489", "3603249", "3626819"];

pub fn bert_record(corpus: &str) -> ExtractionRecord {
    load_record(&fixtures().join("bert").join(format!("{corpus}.json")))
}

fn register(g: &mut ContributionGraph, r: &ExtractionRecord) {
    g.register_paper(PaperMeta::new(r.corpus_id.as_str(), r.title.clone(), r.year));
}

/// The BERT record ingested after (or before) its three cited papers.
pub fn bert_graph(cited_first: bool) -> ContributionGraph {
    let mut g = ContributionGraph::new();
    let bert = bert_record(BERT);
    let cited: Vec<_> = BERT_CITED.iter().map(|c| bert_record(c)).collect();
    for r in cited.iter().chain([&bert]) {
        register(&mut g, r);
    }
    if cited_first {
        for r in cited {
            g.add_paper_record(r).unwrap();
        }
        g.add_paper_record(bert).unwrap();
    } else {
        g.add_paper_record(bert).unwrap();
        for r in cited {
            g.add_paper_record(r).unwrap();
        }
    }
    g
}

/// A random citation graph built through ordinary records: paper `i` is
/// published in `first_year + i / papers_per_year` and cites earlier papers
/// with matches onto their contributions.
pub fn random_graph(seed: u64, papers: usize, per_paper: usize, cites: usize, first_year: i32, papers_per_year: usize) -> ContributionGraph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut g = ContributionGraph::new();
    for p in 0..papers {
        let corpus = format!("{}", 10_000 + p);
        let year = first_year + (p / papers_per_year.max(1)) as i32;
        g.register_paper(PaperMeta::new(corpus.clone(), format!("Paper {p}"), year));
        let contributions: Vec<Value> = (0..per_paper)
            .map(|k| {
                let mut prereqs = Vec::new();
                if p > 0 {
                    for _ in 0..rng.random_range(0..=cites) {
                        let cited = rng.random_range(0..p);
                        let n_match = rng.random_range(1..=2);
                        let matches: Vec<Value> = (0..n_match)
                            .map(|_| {
                                json!({
                                    "contribution_id": format!("{}.c{}", 10_000 + cited, rng.random_range(0..per_paper)),
                                    "explanation": "",
                                    "match_type": if rng.random_bool(0.6) { "strong" } else { "weak" },
                                })
                            })
                            .collect();
                        prereqs.push(json!({
                            "name": format!("prereq of {corpus}.{k}"),
                            "core_or_peripheral": "core",
                            "references": [{"type": "paper", "paper_title": format!("Paper {cited}"), "corpus_id": format!("{}", 10_000 + cited), "matches": matches}],
                        }));
                    }
                }
                if k > 0 && rng.random_bool(0.2) {
                    prereqs.push(json!({
                        "name": "internal",
                        "core_or_peripheral": "peripheral",
                        "references": [{"type": "internal", "contribution_id": format!("{corpus}.c{}", rng.random_range(0..k))}],
                    }));
                }
                json!({
                    "name": format!("Contribution {k} of paper {p}"),
                    "description": format!("Synthetic description {k}/{p} {}", rng.random::<u32>()),
                    "types": [{"type": "analysis", "explanation": ""}],
                    "sections": ["1"],
                    "prerequisites": prereqs,
                })
            })
            .collect();
        let record: ExtractionRecord = serde_json::from_value(json!({
            "corpus_id": corpus, "title": format!("Paper {p}"), "year": year, "contributions": contributions,
        }))
        .unwrap();
        g.add_paper_record(record).unwrap();
    }
    g
}

/// Backend driven by a closure over (call number, prompt).
pub struct FnBackend<F> {
    f: F,
    calls: AtomicUsize,
    pub prompts: Mutex<Vec<String>>,
}

impl<F> FnBackend<F>
where
    F: Fn(usize, &str) -> Result<String, BackendError> + Send + Sync,
{
    pub fn new(f: F) -> Self {
        FnBackend {
            f,
            calls: AtomicUsize::new(0),
            prompts: Mutex::new(Vec::new()),
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl<F> GenerationBackend for FnBackend<F>
where
    F: Fn(usize, &str) -> Result<String, BackendError> + Send + Sync,
{
    fn name(&self) -> &str {
        "fn"
    }

    fn model(&self) -> &str {
        "test"
    }

    fn generate(&self, prompt: &str, _params: &GenParams) -> Result<Generation, BackendError> {
        let n = self.calls.fetch_add(1, Ordering::SeqCst);
        self.prompts.lock().unwrap().push(prompt.to_string());
        let text = (self.f)(n, prompt)?;
        Ok(Generation {
            usage: Usage {
                calls: 1,
                input_tokens: estimate_tokens(prompt),
                output_tokens: estimate_tokens(&text),
                cost_usd: 0.0,
            },
            text,
        })
    }
}

pub fn input(corpus: &str, year: i32, text: &str) -> PaperInput {
    PaperInput {
        corpus_id: CorpusId::new(corpus),
        title: format!("Paper {corpus}"),
        year,
        full_text: text.to_string(),
    }
}

/// Answers the extraction prompts for the BERT paper from its fixture
/// record, the way a well-behaved model would.
pub struct BertScript {
    record: Value,
}

impl BertScript {
    pub const TEXT: &'static str = "BERT-PAPER-TEXT\nPre-training of deep bidirectional transformers.\n";

    pub fn new() -> Self {
        let text = std::fs::read_to_string(fixtures().join("bert").join(format!("{BERT}.json"))).unwrap();
        BertScript {
            record: serde_json::from_str(&text).unwrap(),
        }
    }

    fn contributions(&self) -> &Vec<Value> {
        self.record["contributions"].as_array().unwrap()
    }

    fn as_prompted(c: &Value, key: usize) -> Value {
        let types: Vec<Value> = c["types"]
            .as_array()
            .unwrap()
            .iter()
            .map(|t| json!({"type": t["type"], "justification": t["explanation"]}))
            .collect();
        json!({"key": key.to_string(), "name": c["name"], "description": c["description"], "contribution_type": types, "sections": c["sections"]})
    }

    pub fn respond(&self, prompt: &str) -> String {
        if prompt.starts_with("# Contribution Extraction Prompt") {
            let list: Vec<Value> = self
                .contributions()
                .iter()
                .enumerate()
                .map(|(i, c)| {
                    let mut v = Self::as_prompted(c, i);
                    v.as_object_mut().unwrap().remove("key");
                    v
                })
                .collect();
            return format!("```json\n{}\n```", json!({"contributions": list}));
        }
        if prompt.starts_with("# Prerequisite Extraction Prompt") {
            let section = &prompt[prompt.find("# Specific Contribution/Claim Being Analyzed").unwrap()..];
            let rest = &section[section.find("\"key\": \"").unwrap() + 8..];
            let key: usize = rest[..rest.find('"').unwrap()].parse().unwrap();
            let c = &self.contributions()[key];
            let prereqs: Vec<Value> = c
                .get("prerequisites")
                .and_then(Value::as_array)
                .cloned()
                .unwrap_or_default()
                .into_iter()
                .map(|mut p| {
                    for r in p["references"].as_array_mut().unwrap() {
                        let obj = r.as_object_mut().unwrap();
                        obj.remove("matches");
                        if obj["type"] == "internal" {
                            let full = obj["contribution_id"].as_str().unwrap().to_string();
                            obj.remove("contribution_id");
                            obj.insert("contribution_key".into(), json!(full.rsplit(".c").next().unwrap()));
                        }
                    }
                    p
                })
                .collect();
            let mut v = Self::as_prompted(c, key);
            v["prerequisites"] = json!(prereqs);
            return format!("Prerequisites below.\n```json\n{}\n```", json!({"contributions": [v]}));
        }
        if prompt.starts_with("# Cross-paper") {
            let source = &prompt[prompt.find("# Source Paper Information").unwrap()..];
            let cited_part = &prompt[prompt.find("# Cited Paper Information").unwrap()..];
            let p = &source[source.find("\"prerequisite\":").unwrap()..];
            let p = &p[p.find("\"name\": \"").unwrap() + 9..];
            let name = &p[..p.find('"').unwrap()];
            let c = &cited_part[cited_part.find("\"corpus_id\": \"").unwrap() + 14..];
            let cited = &c[..c.find('"').unwrap()];
            let mut matches = Vec::new();
            for c in self.contributions() {
                for p in c.get("prerequisites").and_then(Value::as_array).into_iter().flatten() {
                    if p["name"] != name {
                        continue;
                    }
                    for r in p["references"].as_array().unwrap() {
                        if r["type"] == "paper" && r["corpus_id"] == cited {
                            matches.extend(r["matches"].as_array().unwrap().iter().cloned());
                        }
                    }
                }
            }
            return format!("```json\n{}\n```", json!({"matches": matches}));
        }
        panic!("unexpected prompt");
    }
}

/// A one-candidate problem whose target has the given date.
pub fn problem_stub(i: usize, year: i32, date: Option<scigraph_core::graph::PubDate>) -> Problem {
    let id = scigraph_core::graph::ContributionId::new(format!("{i}"), 0);
    let only = scigraph_core::graph::ContributionId::new("x", 0);
    Problem {
        problem_id: format!("prob-{id}"),
        target: Target {
            id,
            name: "t".into(),
            description: "d".into(),
            year,
            date,
        },
        candidates: vec![Candidate {
            id: only.clone(),
            name: "x".into(),
            description: "x".into(),
        }],
        gold_ids: vec![only],
        seed: 0,
    }
}
