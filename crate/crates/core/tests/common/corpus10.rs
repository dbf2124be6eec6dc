//! Ten synthetic papers and a backend that answers the extraction prompts
//! for them from a fixed script. Its recorded responses form the replay
//! directory under `fixtures/corpus10/mock`.

use std::collections::BTreeMap;
use std::path::PathBuf;

use scigraph_core::frontier::CatalogEntry;
use scigraph_core::graph::{CorpusId, MatchType};
use scigraph_core::pipeline::{
    estimate_tokens, BackendError, GenParams, Generation, GenerationBackend, PaperInput, Usage,
};
use serde_json::{json, Value};

pub const PAPERS: [(&str, &str, i32, &str); 10] = [
    ("1000", "Foundations of Sparse Signal Routing", 2016, "Abel"),
    ("1001", "Hierarchical Routing Networks", 2017, "Baker"),
    ("1002", "Routing Networks at Scale", 2018, "Chen"),
    ("1003", "Adaptive Routing for Streaming Data", 2018, "Diaz"),
    ("1004", "Composable Routing Modules", 2019, "Evans"),
    ("1005", "A Survey of Routing Methods", 2020, "Fox"),
    ("1006", "Modular Routing with Learned Gates", 2021, "Gupta"),
    ("1007", "Routing under Distribution Shift", 2022, "Hale"),
    ("1008", "Universal Routing Pretraining", 2023, "Ito"),
    ("1009", "Routing Meets Retrieval", 2024, "Jones"),
];

pub const CONTRIBUTIONS_PER_PAPER: usize = 20;

pub fn dir() -> PathBuf {
    super::fixtures().join("corpus10")
}

pub fn mock_dir() -> PathBuf {
    dir().join("mock")
}

pub fn paper_text(corpus: &str) -> String {
    let (_, title, year, author) = PAPERS.iter().find(|p| p.0 == corpus).unwrap();
    format!(
        "SYNTHETIC-PAPER {corpus}\n{title}\n{author} et al., {year}\n\n1 Introduction\nThis synthetic paper exists to exercise the extraction pipeline.\n"
    )
}

pub fn inputs() -> Vec<PaperInput> {
    PAPERS
        .iter()
        .map(|(id, title, year, _)| PaperInput {
            corpus_id: CorpusId::new(*id),
            title: title.to_string(),
            year: *year,
            full_text: paper_text(id),
        })
        .collect()
}

pub fn catalog() -> Vec<CatalogEntry> {
    PAPERS
        .iter()
        .map(|(id, title, year, author)| CatalogEntry {
            corpus_id: CorpusId::new(*id),
            title: title.to_string(),
            year: *year,
            first_author_last: Some(author.to_string()),
            open_access: true,
            text_path: Some(format!("texts/{id}.txt")),
        })
        .collect()
}

/// The frozen edge set the corpus must produce: (pre, dep, grade).
pub fn oracle_edges() -> Vec<(&'static str, &'static str, MatchType)> {
    use MatchType::*;
    vec![
        ("1000.c0", "1000.c1", Strong),
        ("1000.c0", "1001.c0", Strong),
        ("1000.c1", "1001.c0", Weak),
        ("1001.c0", "1001.c1", Strong),
        ("1000.c0", "1002.c0", Strong),
        ("1001.c0", "1002.c0", Strong),
        ("1002.c0", "1003.c0", Weak),
        ("1003.c0", "1004.c0", Strong),
        ("1000.c2", "1004.c2", Strong),
        ("1004.c0", "1004.c3", Strong),
        ("1004.c2", "1006.c0", Strong),
        ("1004.c3", "1006.c0", Weak),
        ("1008.c0", "1007.c0", Strong),
        ("1007.c0", "1009.c0", Strong),
        ("1008.c1", "1009.c0", Strong),
        ("1006.c0", "1009.c1", Weak),
    ]
}

fn paper_ref(corpus: Option<&str>, title: &str, year: i32) -> Value {
    json!({
        "type": "paper",
        "paper_title": title,
        "first_author": {"last_name": "Someone", "first_name": "A", "middle_names": ""},
        "year": year,
        "venue": "Synthetic Proceedings",
        // numeric ids, as models tend to write them
        "corpus_id": corpus.map(|c| Value::from(c.parse::<u64>().unwrap())).unwrap_or(Value::Null),
    })
}

fn cite(corpus: &str) -> Value {
    let (_, title, year, _) = PAPERS.iter().find(|p| p.0 == corpus).unwrap();
    paper_ref(Some(corpus), title, *year)
}

fn internal(key: &str) -> Value {
    json!({"type": "internal", "contribution_name": format!("contribution {key}"), "contribution_key": key, "justification": "Builds on it."})
}

fn prereq(name: &str, refs: Vec<Value>) -> Value {
    json!({
        "name": name,
        "description": format!("Knowledge captured by {name}."),
        "justification": "Needed for the contribution.",
        "core_or_peripheral": "core",
        "references_in_paper": refs,
    })
}

/// Prerequisites per (paper, output key).
fn prerequisites() -> BTreeMap<(&'static str, &'static str), Vec<Value>> {
    let mut m = BTreeMap::new();
    m.insert(("1000", "1"), vec![prereq("P1000-1-a", vec![internal("0")])]);
    m.insert(("1001", "0"), vec![prereq("P1001-0-a", vec![cite("1000")])]);
    m.insert(("1001", "1"), vec![prereq("P1001-1-a", vec![internal("0")])]);
    m.insert(
        ("1002", "0"),
        vec![prereq("P1002-0-a", vec![cite("1000")]), prereq("P1002-0-b", vec![cite("1001")])],
    );
    m.insert(
        ("1003", "0"),
        vec![prereq("P1003-0-a", vec![paper_ref(None, "routing networks at SCALE!", 2019)])],
    );
    m.insert(("1004", "0"), vec![prereq("P1004-0-a", vec![cite("1003")])]);
    m.insert(
        ("1004", "2-1"),
        vec![
            prereq("P1004-2-1-a", vec![cite("1000")]),
            prereq(
                "P1004-2-1-b",
                vec![json!({"type": "other", "name": "routing-kit", "url": "https://example.org/routing-kit"})],
            ),
        ],
    );
    m.insert(("1004", "2-2"), vec![prereq("P1004-2-2-a", vec![internal("0")])]);
    m.insert(
        ("1005", "0"),
        vec![
            prereq("P1005-0-a", vec![paper_ref(Some("9999"), "An Unavailable Paper", 2015)]),
            prereq("P1005-0-b", vec![paper_ref(None, "Some Unknown Work", 2019)]),
        ],
    );
    m.insert(("1006", "0"), vec![prereq("P1006-0-a", vec![cite("1004")])]);
    m.insert(("1007", "0"), vec![prereq("P1007-0-a", vec![cite("1008")])]);
    m.insert(("1008", "0"), vec![prereq("P1008-0-a", vec![cite("1005")])]);
    m.insert(
        ("1009", "0"),
        vec![prereq("P1009-0-a", vec![cite("1007")]), prereq("P1009-0-b", vec![cite("1008")])],
    );
    m.insert(("1009", "1"), vec![prereq("P1009-1-a", vec![cite("1006")])]);
    m
}

/// Alignment answers per (prerequisite name, cited corpus).
fn alignments() -> BTreeMap<(&'static str, &'static str), Vec<(&'static str, &'static str)>> {
    let mut m = BTreeMap::new();
    m.insert(("P1001-0-a", "1000"), vec![("1000.c0", "strong"), ("1000.c1", "weak")]);
    m.insert(("P1002-0-a", "1000"), vec![("1000.c0", "strong")]);
    m.insert(("P1002-0-b", "1001"), vec![("1001.c0", "strong")]);
    m.insert(("P1003-0-a", "1002"), vec![("1002.c0", "weak")]);
    m.insert(("P1004-0-a", "1003"), vec![("1003.c0", "strong")]);
    m.insert(("P1004-2-1-a", "1000"), vec![("1000.c2", "strong")]);
    m.insert(("P1006-0-a", "1004"), vec![("1004.c2", "strong"), ("1004.c3", "weak")]);
    m.insert(("P1007-0-a", "1008"), vec![("1008.c0", "strong")]);
    m.insert(("P1008-0-a", "1005"), vec![]);
    m.insert(("P1009-0-a", "1007"), vec![("1007.c0", "strong")]);
    m.insert(("P1009-0-b", "1008"), vec![("1008.c1", "strong")]);
    m.insert(("P1009-1-a", "1006"), vec![("1006.c0", "weak")]);
    m
}

fn fenced(v: &Value) -> String {
    format!(
        "Here is my analysis.\n\n```json\n{}\n```\n",
        serde_json::to_string_pretty(v).unwrap()
    )
}

fn after<'a>(haystack: &'a str, marker: &str) -> &'a str {
    &haystack[haystack.find(marker).map(|i| i + marker.len()).unwrap_or(haystack.len())..]
}

fn quoted_after(haystack: &str, marker: &str) -> Option<String> {
    let rest = after(haystack, marker);
    let rest = rest.trim_start();
    let rest = rest.strip_prefix('"')?;
    Some(rest[..rest.find('"')?].to_string())
}

fn paper_of(prompt: &str) -> Option<String> {
    let rest = after(prompt, "SYNTHETIC-PAPER ");
    let id: String = rest.chars().take_while(|c| c.is_ascii_digit()).collect();
    (!id.is_empty()).then_some(id)
}

fn contribution(corpus: &str, key: &str) -> Value {
    json!({
        "name": format!("Routing idea {key} of paper {corpus}"),
        "description": format!("Contribution {key} of synthetic paper {corpus}, describing one routing technique and its evaluation."),
        "contribution_type": [{"type": "techniques_algorithms", "justification": "A technique."}],
        "sections": [format!("Section {key}")],
    })
}

/// Answers the three extraction prompts for the ten synthetic papers.
pub struct ScriptedBackend;

impl ScriptedBackend {
    pub fn respond(&self, prompt: &str) -> String {
        if prompt.starts_with("# Contribution Extraction Prompt") {
            let corpus = paper_of(prompt).expect("paper marker");
            let list: Vec<Value> = (0..CONTRIBUTIONS_PER_PAPER)
                .map(|k| contribution(&corpus, &k.to_string()))
                .collect();
            return fenced(&json!({"contributions": list}));
        }
        if prompt.starts_with("# Prerequisite Extraction Prompt") {
            let corpus = paper_of(prompt).expect("paper marker");
            let section = after(prompt, "# Specific Contribution/Claim Being Analyzed");
            let key = quoted_after(section, "\"key\":").expect("input key");
            let script = prerequisites();
            let pieces: Vec<String> = if corpus == "1004" && key == "2" {
                vec!["2-1".into(), "2-2".into()]
            } else {
                vec![key.clone()]
            };
            let list: Vec<Value> = pieces
                .iter()
                .map(|k| {
                    let mut c = contribution(&corpus, k);
                    c["key"] = json!(k);
                    c["prerequisites"] = json!(script
                        .iter()
                        .find(|((p, kk), _)| *p == corpus && *kk == k)
                        .map(|(_, v)| v.clone())
                        .unwrap_or_default());
                    c
                })
                .collect();
            return fenced(&json!({"contributions": list}));
        }
        if prompt.starts_with("# Cross-paper Prerequisite-to-Contribution Alignment Prompt") {
            let source = after(prompt, "# Source Paper Information");
            let cited_part = after(prompt, "# Cited Paper Information");
            let prereq = quoted_after(after(source, "\"prerequisite\":"), "\"name\":").unwrap_or_default();
            let cited = quoted_after(cited_part, "\"corpus_id\":").unwrap_or_default();
            let matches: Vec<Value> = alignments()
                .iter()
                .find(|((p, c), _)| *p == prereq && *c == cited)
                .map(|(_, v)| {
                    v.iter()
                        .map(|(id, grade)| json!({"contribution_key": id, "explanation": "Same technique.", "match_type": grade}))
                        .collect()
                })
                .unwrap_or_default();
            return fenced(&json!({"matches": matches, "overall_explanation": "Compared by name."}));
        }
        "I do not understand the request.".into()
    }
}

impl GenerationBackend for ScriptedBackend {
    fn name(&self) -> &str {
        "scripted"
    }

    fn model(&self) -> &str {
        "corpus10"
    }

    fn generate(&self, prompt: &str, _params: &GenParams) -> Result<Generation, BackendError> {
        let text = self.respond(prompt);
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
