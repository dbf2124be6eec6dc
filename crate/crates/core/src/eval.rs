//! Ranking the candidates of a problem, average precision, and the split of
//! results around a model's knowledge cutoff.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::graph::{ContributionId, PubDate};
use crate::pipeline::prompts::{self, render};
use crate::pipeline::{parse_fenced_json, BackendError, GenParams, GenerationBackend, Usage};
use crate::taskgen::{derive_seed, Problem};

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("gold must be non-empty")]
    EmptyGold,
    #[error("gold item {0} is not in the ranking")]
    GoldNotRanked(String),
    #[error("no submission for problem {0}")]
    MissingSubmission(String),
    #[error("two submissions for problem {0}")]
    DuplicateSubmission(String),
    #[error("submission for unknown problem {0}")]
    UnknownProblem(String),
    #[error("invalid cutoff `{0}`: expected YYYY or YYYY-MM")]
    BadCutoff(String),
}

/// Mean over gold items of the precision at each gold item's 1-based rank.
pub fn average_precision<T: Eq + std::hash::Hash + fmt::Display>(ranked: &[T], gold: &[T]) -> Result<f64, EvalError> {
    let gold: HashSet<&T> = gold.iter().collect();
    if gold.is_empty() {
        return Err(EvalError::EmptyGold);
    }
    let mut hits = 0usize;
    let mut sum = 0.0;
    let mut seen = HashSet::new();
    for (i, id) in ranked.iter().enumerate() {
        if gold.contains(id) && seen.insert(id) {
            hits += 1;
            sum += hits as f64 / (i + 1) as f64;
        }
    }
    if hits < gold.len() {
        let missing = gold.iter().find(|g| !seen.contains(*g)).expect("a gold item is unranked");
        return Err(EvalError::GoldNotRanked(missing.to_string()));
    }
    Ok(sum / gold.len() as f64)
}

/// Turns raw model output into a permutation of the candidates: unknown ids
/// and repeats are dropped, missing candidates follow in stored order.
pub fn repair_submission(raw: &[String], problem: &Problem) -> Vec<ContributionId> {
    let by_text: HashMap<String, &ContributionId> =
        problem.candidates.iter().map(|c| (c.id.to_string(), &c.id)).collect();
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(problem.candidates.len());
    for r in raw {
        if let Some(id) = by_text.get(r.trim()) {
            if seen.insert(*id) {
                out.push((*id).clone());
            }
        }
    }
    for c in &problem.candidates {
        if !seen.contains(&c.id) {
            out.push(c.id.clone());
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankingSubmission {
    pub problem_id: String,
    pub ranked_ids: Vec<ContributionId>,
    pub backend: String,
    #[serde(default)]
    pub usage: Usage,
    /// Output could not be parsed; the stored order was used.
    #[serde(default)]
    pub flagged: bool,
}

/// A knowledge cutoff, month optional. Written `YYYY` or `YYYY-MM`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Cutoff {
    pub year: i32,
    pub month: Option<u8>,
}

impl fmt::Display for Cutoff {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.month {
            Some(m) => write!(f, "{:04}-{m:02}", self.year),
            None => write!(f, "{:04}", self.year),
        }
    }
}

impl FromStr for Cutoff {
    type Err = EvalError;

    fn from_str(s: &str) -> Result<Self, EvalError> {
        let bad = || EvalError::BadCutoff(s.to_string());
        let (y, m) = match s.trim().split_once('-') {
            Some((y, m)) => (y, Some(m)),
            None => (s.trim(), None),
        };
        let year: i32 = y.parse().map_err(|_| bad())?;
        if !(1900..=2200).contains(&year) {
            return Err(bad());
        }
        let month = match m {
            Some(m) => {
                let m: u8 = m.parse().map_err(|_| bad())?;
                if !(1..=12).contains(&m) {
                    return Err(bad());
                }
                Some(m)
            }
            None => None,
        };
        Ok(Cutoff { year, month })
    }
}

impl Serialize for Cutoff {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Cutoff {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Pre,
    Post,
    Discarded,
}

/// Which side of the cutoff a target published at `year` (and maybe `date`)
/// falls on. Month-level comparison needs a month on both sides; otherwise
/// years are compared and an equal year is discarded.
pub fn classify(year: i32, date: Option<PubDate>, cutoff: Cutoff) -> Side {
    let month = date.filter(|d| d.year == year).and_then(|d| d.month);
    match (month, cutoff.month) {
        (Some(m), Some(cm)) => {
            if (year, m) <= (cutoff.year, cm) {
                Side::Pre
            } else {
                Side::Post
            }
        }
        _ => match year.cmp(&cutoff.year) {
            std::cmp::Ordering::Less => Side::Pre,
            std::cmp::Ordering::Greater => Side::Post,
            std::cmp::Ordering::Equal => Side::Discarded,
        },
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CutoffSplit<'a> {
    pub pre: Vec<&'a Problem>,
    pub post: Vec<&'a Problem>,
    pub discarded: Vec<&'a Problem>,
}

pub fn split_by_cutoff(problems: &[Problem], cutoff: Cutoff) -> CutoffSplit<'_> {
    let mut split = CutoffSplit::default();
    for p in problems {
        match classify(p.target.year, p.target.date, cutoff) {
            Side::Pre => split.pre.push(p),
            Side::Post => split.post.push(p),
            Side::Discarded => split.discarded.push(p),
        }
    }
    split
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub backend: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cutoff: Option<Cutoff>,
    /// `None` when the split is empty.
    pub map_overall: Option<f64>,
    pub map_pre: Option<f64>,
    pub map_post: Option<f64>,
    pub n_problems: usize,
    pub n_pre: usize,
    pub n_post: usize,
    pub n_discarded: usize,
    pub n_flagged: usize,
    pub total_cost: f64,
    pub cost_per_1k: f64,
}

fn mean(values: &[f64]) -> Option<f64> {
    (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
}

/// Macro MAP overall and on each side of the cutoff. Without a cutoff every
/// problem counts as pre-cutoff.
pub fn score_run(
    problems: &[Problem],
    submissions: &[RankingSubmission],
    cutoff: Option<Cutoff>,
) -> Result<EvalReport, EvalError> {
    let known: HashSet<&str> = problems.iter().map(|p| p.problem_id.as_str()).collect();
    let mut by_id: HashMap<&str, &RankingSubmission> = HashMap::new();
    for s in submissions {
        if !known.contains(s.problem_id.as_str()) {
            return Err(EvalError::UnknownProblem(s.problem_id.clone()));
        }
        if by_id.insert(&s.problem_id, s).is_some() {
            return Err(EvalError::DuplicateSubmission(s.problem_id.clone()));
        }
    }
    // Sorting by id makes the float sums independent of input order.
    let mut ordered: Vec<&Problem> = problems.iter().collect();
    ordered.sort_by(|a, b| a.problem_id.cmp(&b.problem_id));

    let mut all = Vec::new();
    let mut pre = Vec::new();
    let mut post = Vec::new();
    let mut discarded = 0;
    let mut flagged = 0;
    let mut cost = 0.0;
    let mut backend = None;
    for p in ordered {
        let s = by_id
            .get(p.problem_id.as_str())
            .ok_or_else(|| EvalError::MissingSubmission(p.problem_id.clone()))?;
        backend.get_or_insert_with(|| s.backend.clone());
        let ap = average_precision(&s.ranked_ids, &p.gold_ids)?;
        all.push(ap);
        cost += s.usage.cost_usd;
        flagged += usize::from(s.flagged);
        match cutoff.map_or(Side::Pre, |c| classify(p.target.year, p.target.date, c)) {
            Side::Pre => pre.push(ap),
            Side::Post => post.push(ap),
            Side::Discarded => discarded += 1,
        }
    }
    Ok(EvalReport {
        backend: backend.unwrap_or_default(),
        cutoff,
        map_overall: mean(&all),
        map_pre: mean(&pre),
        map_post: mean(&post),
        n_problems: all.len(),
        n_pre: pre.len(),
        n_post: post.len(),
        n_discarded: discarded,
        n_flagged: flagged,
        total_cost: cost,
        cost_per_1k: if all.is_empty() { 0.0 } else { cost * 1000.0 / all.len() as f64 },
    })
}

/// Anything that orders a problem's candidates.
pub trait Ranker: Send + Sync {
    fn tag(&self) -> String;

    fn rank(&self, problem: &Problem) -> Result<RankingSubmission, BackendError>;
}

/// Uniformly random order, seeded per problem.
#[derive(Debug, Clone, Copy)]
pub struct RandomBaseline {
    pub seed: u64,
}

impl Ranker for RandomBaseline {
    fn tag(&self) -> String {
        "random".into()
    }

    fn rank(&self, problem: &Problem) -> Result<RankingSubmission, BackendError> {
        let mut ids = problem.candidate_ids();
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.seed, &problem.problem_id));
        ids.shuffle(&mut rng);
        Ok(RankingSubmission {
            problem_id: problem.problem_id.clone(),
            ranked_ids: ids,
            backend: self.tag(),
            usage: Usage::default(),
            flagged: false,
        })
    }
}

/// Asks a generation backend to rank the candidates.
pub struct ModelRanker<'a> {
    pub backend: &'a dyn GenerationBackend,
    pub template: String,
    pub params: GenParams,
    pub retries: usize,
}

impl<'a> ModelRanker<'a> {
    pub fn new(backend: &'a dyn GenerationBackend) -> Self {
        ModelRanker {
            backend,
            template: crate::pipeline::PromptSet::default().ranking,
            params: GenParams::default(),
            retries: 2,
        }
    }
}

impl Ranker for ModelRanker<'_> {
    fn tag(&self) -> String {
        self.backend.tag()
    }

    fn rank(&self, problem: &Problem) -> Result<RankingSubmission, BackendError> {
        rank_with_model(problem, self.backend, &self.template, &self.params, self.retries)
    }
}

/// The ranking prompt for a problem, candidates in stored order.
pub fn ranking_prompt(problem: &Problem, template: &str) -> String {
    let target = json!({"name": problem.target.name, "description": problem.target.description});
    let candidates: Vec<Value> = problem
        .candidates
        .iter()
        .map(|c| json!({"id": c.id.to_string(), "name": c.name, "description": c.description}))
        .collect();
    render(
        template,
        &[
            (prompts::VAR_TARGET, &serde_json::to_string_pretty(&target).expect("json")),
            (prompts::VAR_CANDIDATES, &serde_json::to_string_pretty(&candidates).expect("json")),
        ],
    )
}

fn ranked_strings(text: &str) -> Result<Vec<String>, String> {
    let doc = parse_fenced_json(text).map_err(|e| e.to_string())?;
    let list = match &doc {
        Value::Array(a) => a,
        Value::Object(o) => o
            .get("ranking")
            .and_then(Value::as_array)
            .ok_or("expected an object with a `ranking` list")?,
        _ => return Err("expected an object with a `ranking` list".into()),
    };
    Ok(list
        .iter()
        .filter_map(|v| match v {
            Value::String(s) => Some(s.clone()),
            Value::Number(n) => Some(n.to_string()),
            Value::Object(o) => o.get("id").and_then(Value::as_str).map(String::from),
            _ => None,
        })
        .collect())
}

/// Renders the ranking prompt, parses the returned ids and repairs them
/// into a permutation. Output that stays unparseable after `retries` extra
/// attempts yields the stored order, flagged.
pub fn rank_with_model(
    problem: &Problem,
    backend: &dyn GenerationBackend,
    template: &str,
    params: &GenParams,
    retries: usize,
) -> Result<RankingSubmission, BackendError> {
    let prompt = ranking_prompt(problem, template);
    let mut current = prompt.clone();
    let mut usage = Usage::default();
    let mut parsed = None;
    for _ in 0..=retries {
        let out = backend.generate(&current, params)?;
        usage += out.usage;
        match ranked_strings(&out.text) {
            Ok(ids) => {
                parsed = Some(ids);
                break;
            }
            Err(e) => {
                current = format!(
                    "{prompt}\n\n# Correction\nYour previous response could not be used: {e}\nPlease answer again, following the required JSON response format exactly.\n"
                );
            }
        }
    }
    let flagged = parsed.is_none();
    if flagged {
        log::warn!("{}: unparseable ranking, using stored order", problem.problem_id);
    }
    Ok(RankingSubmission {
        problem_id: problem.problem_id.clone(),
        ranked_ids: repair_submission(&parsed.unwrap_or_default(), problem),
        backend: backend.tag(),
        usage,
        flagged,
    })
}

/// Ranks every problem with at most `parallel` concurrent calls, keeping
/// problem order.
pub fn rank_all(
    problems: &[Problem],
    ranker: &dyn Ranker,
    parallel: usize,
) -> Result<Vec<RankingSubmission>, BackendError> {
    if parallel <= 1 {
        return problems.iter().map(|p| ranker.rank(p)).collect();
    }
    use rayon::prelude::*;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(parallel)
        .build()
        .expect("thread pool");
    pool.install(|| problems.par_iter().map(|p| ranker.rank(p)).collect())
}

/// Reports keyed by backend tag, in tag order.
pub type ReportSet = BTreeMap<String, EvalReport>;
