use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use log::{info, warn};
use scigraph_core::embed::{EmbeddingIndex, EmbeddingProvider, HttpEmbedder, MockEmbedder};
use scigraph_core::eval::{rank_all, score_run, Cutoff, ModelRanker, RandomBaseline, Ranker, RankingSubmission, ReportSet};
use scigraph_core::frontier::{build_histogram, select_batch, Catalog, CatalogEntry};
use scigraph_core::graph::{ContributionId, CorpusId, ExtractionRecord, Store};
use scigraph_core::jsonl;
use scigraph_core::pipeline::{
    GenParams, GenerationBackend, MockBackend, OpenAiCompatBackend, PaperInput, Pipeline, PipelineConfig, Pricing,
    PromptSet, RecordingBackend,
};
use scigraph_core::roadmap::{export_dot, export_json, impact_tree, precursor_tree};
use scigraph_core::taskgen::{self, Problem, TaskgenConfig};

use crate::config::{pick, FileConfig};
use crate::{
    Cli, Command, DirectionArg, EmbedArgs, EvalArgs, ExportArgs, ExtractArgs, Format, FrontierArgs, Global, IngestArgs,
    RankArgs, TaskgenArgs,
};

pub const DEFAULT_STORE: &str = "scigraph-store";
/// Catalog the store keeps for itself, text paths made absolute.
pub const CATALOG_FILE: &str = "catalog.jsonl";
pub const INDEX_FILE: &str = "embeddings.bin";
pub const PROBLEMS_FILE: &str = "problems.jsonl";
pub const MANIFEST_FILE: &str = "taskgen_manifest.json";
pub const SUBMISSIONS_FILE: &str = "submissions.jsonl";
pub const REPORT_FILE: &str = "report.json";
const DEFAULT_EMBED_DIM: usize = 256;

/// Flags and environment already merged by clap, the file underneath.
struct Settings {
    store: PathBuf,
    prompts: PromptSet,
    retries: usize,
    parallel: usize,
    force: bool,
    llm_endpoint: Option<String>,
    llm_model: Option<String>,
    llm_api_key: Option<String>,
    pricing: Pricing,
    embed_endpoint: Option<String>,
    embed_model: Option<String>,
    embed_api_key: Option<String>,
    embed_dim: Option<usize>,
}

impl Settings {
    fn resolve(g: &Global) -> Result<Self> {
        let file = FileConfig::load(g.config.as_deref())?;
        let prompts = match pick(&g.prompts, &file.prompts) {
            Some(dir) => PromptSet::load_dir(&dir).with_context(|| format!("loading prompts from {}", dir.display()))?,
            None => PromptSet::default(),
        };
        Ok(Settings {
            store: pick(&g.store, &file.store).unwrap_or_else(|| PathBuf::from(DEFAULT_STORE)),
            prompts,
            retries: file.retries.unwrap_or(PipelineConfig::default().retries),
            parallel: file.parallel.unwrap_or(1).max(1),
            force: g.force,
            llm_endpoint: pick(&g.llm_endpoint, &file.llm_endpoint),
            llm_model: pick(&g.llm_model, &file.llm_model),
            llm_api_key: pick(&g.llm_api_key, &file.llm_api_key),
            pricing: Pricing {
                input_per_mtok: file.llm_input_per_mtok.unwrap_or(0.0),
                output_per_mtok: file.llm_output_per_mtok.unwrap_or(0.0),
            },
            embed_endpoint: pick(&g.embed_endpoint, &file.embed_endpoint),
            embed_model: pick(&g.embed_model, &file.embed_model),
            embed_api_key: pick(&g.embed_api_key, &file.embed_api_key),
            embed_dim: file.embed_dim,
        })
    }

    fn in_store(&self, file: &str) -> PathBuf {
        self.store.join(file)
    }

    fn live_backend(&self) -> Result<OpenAiCompatBackend> {
        let endpoint = self.llm_endpoint.clone().ok_or_else(|| anyhow!("no LLM endpoint (--llm-endpoint or SCIGRAPH_LLM_ENDPOINT)"))?;
        let model = self.llm_model.clone().ok_or_else(|| anyhow!("no LLM model (--llm-model or SCIGRAPH_LLM_MODEL)"))?;
        Ok(OpenAiCompatBackend::new(endpoint, self.llm_api_key.clone(), model, self.pricing))
    }
}

pub fn run(cli: Cli) -> Result<ExitCode> {
    let s = Settings::resolve(&cli.global)?;
    match cli.command {
        Command::Ingest(a) => ingest(&s, a),
        Command::Extract(a) => extract(&s, a),
        Command::Frontier(a) => frontier(&s, a),
        Command::Embed(a) => embed(&s, a),
        Command::Taskgen(a) => taskgen_cmd(&s, a),
        Command::Rank(a) => rank(&s, a),
        Command::Eval(a) => eval(&s, a),
        Command::Export(a) => export(&s, a),
        Command::Validate => validate(&s),
    }
}

pub fn parse_years(s: &str) -> Result<(i32, i32), String> {
    let parse = |x: &str| x.trim().parse::<i32>().map_err(|_| format!("bad year `{x}`"));
    let (a, b) = match s.split_once('-') {
        Some((a, b)) => (parse(a)?, parse(b)?),
        None => {
            let y = parse(s)?;
            (y, y)
        }
    };
    if a > b {
        return Err(format!("empty year range {a}-{b}"));
    }
    Ok((a, b))
}

fn refuse_clobber(path: &Path, force: bool) -> Result<()> {
    if path.exists() && !force {
        bail!("{} exists; pass --force to overwrite", path.display());
    }
    Ok(())
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn store_catalog(s: &Settings) -> Result<Catalog> {
    let path = s.in_store(CATALOG_FILE);
    Catalog::load(&path).with_context(|| format!("reading {}", path.display()))
}

/// A file holding one JSON record, or JSONL.
fn read_records(path: &Path) -> Result<Vec<ExtractionRecord>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    if let Ok(record) = serde_json::from_str::<ExtractionRecord>(&text) {
        return Ok(vec![record]);
    }
    jsonl::read(path).with_context(|| format!("parsing records in {}", path.display()))
}

fn ingest(s: &Settings, a: IngestArgs) -> Result<ExitCode> {
    if a.catalog.is_none() && a.records.is_empty() {
        bail!("nothing to ingest: pass --catalog and/or --records");
    }
    let mut store = Store::open(&s.store)?;
    let _lock = store.lock()?;

    if let Some(path) = &a.catalog {
        let base = match &a.texts {
            Some(dir) => dir.clone(),
            None => path.parent().map(Path::to_path_buf).unwrap_or_default(),
        };
        let base = std::path::absolute(&base).with_context(|| format!("resolving {}", base.display()))?;
        let mut catalog = store_catalog(s)?;
        let incoming: Vec<CatalogEntry> = jsonl::read(path).with_context(|| format!("reading {}", path.display()))?;
        let mut registered = 0;
        for mut entry in incoming {
            entry.text_path = entry.text_path.map(|p| base.join(p).to_string_lossy().into_owned());
            registered += usize::from(store.graph_mut().register_paper(entry.to_meta()));
            catalog.insert(entry);
        }
        let entries: Vec<&CatalogEntry> = catalog.entries().collect();
        jsonl::write(&s.in_store(CATALOG_FILE), &entries)?;
        println!("catalog: {} entries, {registered} new papers", entries.len());
    }

    let mut nodes = 0;
    let mut edges = 0;
    let mut imported = 0;
    for path in &a.records {
        for record in read_records(path)? {
            if store.graph().is_extracted(&record.corpus_id) {
                warn!("{} is already extracted; record skipped", record.corpus_id);
                continue;
            }
            let delta = store.add_record(record)?;
            nodes += delta.nodes_added;
            edges += delta.edges_added;
            imported += 1;
        }
    }
    store.save()?;
    if !a.records.is_empty() {
        println!("records: {imported} imported, {nodes} nodes, {edges} edges");
    }
    Ok(ExitCode::SUCCESS)
}

fn paper_input(entry: &CatalogEntry) -> Result<PaperInput> {
    let path = entry
        .text_path
        .as_ref()
        .ok_or_else(|| anyhow!("{} has no text", entry.corpus_id))?;
    let full_text = fs::read_to_string(path).with_context(|| format!("reading text of {}", entry.corpus_id))?;
    Ok(PaperInput {
        corpus_id: entry.corpus_id.clone(),
        title: entry.title.clone(),
        year: entry.year,
        full_text,
    })
}

fn has_text(entry: &CatalogEntry) -> bool {
    entry.open_access && entry.text_path.is_some()
}

fn extract(s: &Settings, a: ExtractArgs) -> Result<ExitCode> {
    let mut store = Store::open(&s.store)?;
    let _lock = store.lock()?;
    let catalog = store_catalog(s)?;

    let entries: Vec<&CatalogEntry> = if !a.papers.is_empty() {
        a.papers
            .iter()
            .map(|id| catalog.get(&CorpusId::new(id.trim())).ok_or_else(|| anyhow!("{id} is not in the catalog")))
            .collect::<Result<_>>()?
    } else if a.all {
        catalog
            .entries()
            .filter(|e| has_text(e) && !store.graph().is_extracted(&e.corpus_id))
            .collect()
    } else {
        let hist = build_histogram(store.graph());
        let ok = |key: &scigraph_core::frontier::PaperKey| {
            key.corpus_id().and_then(|id| catalog.get(id)).is_some_and(has_text)
        };
        select_batch(&hist, ok, a.k)?
            .iter()
            .filter_map(|key| key.corpus_id().and_then(|id| catalog.get(id)))
            .collect()
    };
    if entries.is_empty() {
        println!("nothing to extract");
        return Ok(ExitCode::SUCCESS);
    }
    let inputs: Vec<PaperInput> = entries.into_iter().map(paper_input).collect::<Result<_>>()?;

    let backend: Box<dyn GenerationBackend> = match (&a.mock, &a.record) {
        (Some(dir), _) => Box::new(MockBackend::load_dir(dir, true)?),
        (None, Some(dir)) => Box::new(RecordingBackend::new(s.live_backend()?, dir)?),
        (None, None) => Box::new(s.live_backend()?),
    };
    let config = PipelineConfig {
        retries: a.retries.unwrap_or(s.retries),
        params: GenParams::default(),
        max_text_chars: a.max_text_chars,
    };
    let pipeline = Pipeline::new(backend.as_ref(), s.prompts.clone(), config);
    let report = pipeline.run_batch(&inputs, &mut store, a.parallel.unwrap_or(s.parallel).max(1))?;

    for p in &report.papers {
        match &p.error {
            Some(e) => println!("{}\t{:?}\t{e}", p.corpus_id, p.status),
            None => println!(
                "{}\t{:?}\t{} nodes, {} edges",
                p.corpus_id, p.status, p.delta.nodes_added, p.delta.edges_added
            ),
        }
        for w in &p.warnings {
            warn!("{}: {w}", p.corpus_id);
        }
    }
    println!(
        "{} papers, {} failed, {} late alignments, {} calls, ${:.4}",
        report.papers.len(),
        report.failed(),
        report.late.aligned,
        report.usage.calls,
        report.usage.cost_usd
    );
    Ok(ExitCode::SUCCESS)
}

fn frontier(s: &Settings, a: FrontierArgs) -> Result<ExitCode> {
    let store = Store::open(&s.store)?;
    let catalog = store_catalog(s)?;
    let hist = build_histogram(store.graph());
    let ok = |key: &scigraph_core::frontier::PaperKey| {
        a.include_unavailable || key.corpus_id().and_then(|id| catalog.get(id)).is_some_and(has_text)
    };
    for key in select_batch(&hist, ok, a.k)? {
        let title = key
            .corpus_id()
            .and_then(|id| store.graph().paper(id))
            .map(|p| p.title.as_str())
            .unwrap_or("");
        println!("{}\t{key}\t{title}", hist[&key]);
    }
    Ok(ExitCode::SUCCESS)
}

fn embed(s: &Settings, a: EmbedArgs) -> Result<ExitCode> {
    let out = a.out.unwrap_or_else(|| s.in_store(INDEX_FILE));
    refuse_clobber(&out, s.force)?;
    let graph = Store::open(&s.store)?.graph().clone();
    let dim = a.dim.or(s.embed_dim);
    let provider: Box<dyn EmbeddingProvider> = match a.provider.as_str() {
        "mock" => Box::new(MockEmbedder::new(dim.unwrap_or(DEFAULT_EMBED_DIM))?),
        "http" => {
            let endpoint = s.embed_endpoint.clone().ok_or_else(|| anyhow!("no embedding endpoint"))?;
            let model = s.embed_model.clone().ok_or_else(|| anyhow!("no embedding model"))?;
            let dim = dim.ok_or_else(|| anyhow!("--dim is required for the http provider"))?;
            Box::new(HttpEmbedder::new(endpoint, s.embed_api_key.clone(), model, dim))
        }
        other => bail!("unknown embedding provider `{other}` (mock or http)"),
    };
    let index = EmbeddingIndex::build(&graph, provider.as_ref(), a.batch.max(1))?;
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    index.save(&out)?;
    println!("{} vectors of dim {} -> {}", index.len(), index.dim(), out.display());
    Ok(ExitCode::SUCCESS)
}

fn taskgen_cmd(s: &Settings, a: TaskgenArgs) -> Result<ExitCode> {
    let out = a.out.unwrap_or_else(|| s.in_store(PROBLEMS_FILE));
    let manifest_path = out.with_file_name(MANIFEST_FILE);
    refuse_clobber(&out, s.force)?;
    refuse_clobber(&manifest_path, s.force)?;
    let graph = Store::open(&s.store)?.graph().clone();
    let index_path = a.index.unwrap_or_else(|| s.in_store(INDEX_FILE));
    let index = EmbeddingIndex::load(&index_path).with_context(|| format!("loading {}", index_path.display()))?;
    let config = TaskgenConfig {
        years: a.years.0..=a.years.1,
        per_year: a.per_year,
        seed: a.seed,
        candidates: a.candidates,
        strong_only: a.strong_only,
    };
    let output = taskgen::generate(&graph, &index, &config)?;
    for w in &output.manifest.warnings {
        warn!("{w}");
    }
    write_file(&out, &jsonl::to_string(&output.problems))?;
    write_file(&manifest_path, &serde_json::to_string_pretty(&output.manifest)?)?;
    println!(
        "{} problems from {} targets ({} skipped) -> {}",
        output.manifest.problems,
        output.manifest.targets,
        output.manifest.skipped.len(),
        out.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn load_problems(s: &Settings, path: Option<PathBuf>) -> Result<Vec<Problem>> {
    let path = path.unwrap_or_else(|| s.in_store(PROBLEMS_FILE));
    jsonl::read(&path).with_context(|| format!("reading {}", path.display()))
}

fn rank(s: &Settings, a: RankArgs) -> Result<ExitCode> {
    let out = a.out.unwrap_or_else(|| s.in_store(SUBMISSIONS_FILE));
    refuse_clobber(&out, s.force)?;
    let problems = load_problems(s, a.problems)?;
    let parallel = a.parallel.unwrap_or(s.parallel).max(1);
    let retries = a.retries.unwrap_or(s.retries);

    let model_submissions = |backend: &dyn GenerationBackend| -> Result<Vec<RankingSubmission>> {
        let mut ranker = ModelRanker::new(backend);
        ranker.template = s.prompts.ranking.clone();
        ranker.retries = retries;
        Ok(rank_all(&problems, &ranker, parallel)?)
    };
    let submissions = match a.backend.as_str() {
        "random" => {
            let ranker = RandomBaseline { seed: a.seed };
            info!("ranking {} problems with {}", problems.len(), ranker.tag());
            rank_all(&problems, &ranker, parallel)?
        }
        "live" => model_submissions(&s.live_backend()?)?,
        other => match other.strip_prefix("mock:") {
            Some(dir) => model_submissions(&MockBackend::load_dir(Path::new(dir), true)?)?,
            None => bail!("unknown backend `{other}` (random, mock:DIR or live)"),
        },
    };
    let flagged = submissions.iter().filter(|x| x.flagged).count();
    let cost: f64 = submissions.iter().map(|x| x.usage.cost_usd).sum();
    write_file(&out, &jsonl::to_string(&submissions))?;
    println!(
        "{} submissions ({flagged} flagged, ${cost:.4}) -> {}",
        submissions.len(),
        out.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn eval(s: &Settings, a: EvalArgs) -> Result<ExitCode> {
    let out = a.out.unwrap_or_else(|| s.in_store(REPORT_FILE));
    refuse_clobber(&out, s.force)?;
    if let Some(csv) = &a.csv {
        refuse_clobber(csv, s.force)?;
    }
    let problems = load_problems(s, a.problems)?;
    let cutoffs: BTreeMap<String, Cutoff> = match &a.cutoffs {
        Some(path) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            serde_json::from_str(&text).with_context(|| format!("parsing cutoffs in {}", path.display()))?
        }
        None => BTreeMap::new(),
    };
    let files = if a.submissions.is_empty() {
        vec![s.in_store(SUBMISSIONS_FILE)]
    } else {
        a.submissions
    };

    let mut reports = ReportSet::new();
    for path in &files {
        let subs: Vec<RankingSubmission> = jsonl::read(path).with_context(|| format!("reading {}", path.display()))?;
        let tag = subs
            .first()
            .map(|x| x.backend.clone())
            .unwrap_or_else(|| path.display().to_string());
        let report = score_run(&problems, &subs, cutoffs.get(&tag).copied())
            .with_context(|| format!("scoring {}", path.display()))?;
        if reports.insert(tag.clone(), report).is_some() {
            bail!("two submission files for backend {tag}");
        }
    }
    for tag in cutoffs.keys().filter(|t| !reports.contains_key(*t)) {
        warn!("cutoff given for {tag}, which has no submissions");
    }

    let fmt = |x: Option<f64>| x.map_or_else(|| "-".to_string(), |v| format!("{v:.4}"));
    println!("backend\tmap\tpre\tpost\tn\tflagged\tcost_per_1k");
    for (tag, r) in &reports {
        println!(
            "{tag}\t{}\t{}\t{}\t{}\t{}\t{:.4}",
            fmt(r.map_overall),
            fmt(r.map_pre),
            fmt(r.map_post),
            r.n_problems,
            r.n_flagged,
            r.cost_per_1k
        );
    }
    let json = if reports.len() == 1 {
        serde_json::to_string_pretty(reports.values().next().expect("one report"))?
    } else {
        serde_json::to_string_pretty(&reports)?
    };
    write_file(&out, &json)?;

    if let Some(path) = &a.csv {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["backend", "cost_per_1k", "map", "map_pre", "map_post"])?;
        let cell = |x: Option<f64>| x.map(|v| v.to_string()).unwrap_or_default();
        for (tag, r) in &reports {
            w.write_record([
                tag.clone(),
                r.cost_per_1k.to_string(),
                cell(r.map_overall),
                cell(r.map_pre),
                cell(r.map_post),
            ])?;
        }
        write_file(path, &String::from_utf8(w.into_inner()?)?)?;
    }
    Ok(ExitCode::SUCCESS)
}

fn export(s: &Settings, a: ExportArgs) -> Result<ExitCode> {
    if let Some(out) = &a.out {
        refuse_clobber(out, s.force)?;
    }
    let store = Store::open(&s.store)?;
    let root: ContributionId = a.root.parse().map_err(|e| anyhow!("bad root id: {e}"))?;
    let tree = match a.direction {
        DirectionArg::Pre => precursor_tree(store.graph(), &root, a.depth)?,
        DirectionArg::Post => impact_tree(store.graph(), &root, a.depth, a.top_k)?,
    };
    let text = match a.format {
        Format::Dot => export_dot(&tree),
        Format::Json => export_json(&tree),
    };
    match &a.out {
        Some(path) => write_file(path, &text)?,
        None => print!("{text}"),
    }
    Ok(ExitCode::SUCCESS)
}

fn validate(s: &Settings) -> Result<ExitCode> {
    let store = Store::open(&s.store)?;
    let violations = store.graph().validate();
    for v in &violations {
        println!("{v}");
    }
    println!("{} violations", violations.len());
    Ok(if violations.is_empty() { ExitCode::SUCCESS } else { ExitCode::from(1) })
}
