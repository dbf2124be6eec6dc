mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

/// Build a graph of scientific contributions from paper text, then generate
/// and score prerequisite-ranking problems over it.
#[derive(Debug, Parser)]
#[command(name = "scigraph", version)]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Global {
    /// Store directory holding the graph logs and derived files.
    #[arg(long, global = true, env = "SCIGRAPH_STORE")]
    pub store: Option<PathBuf>,

    /// TOML settings file (default: ./scigraph.toml when present).
    #[arg(long, global = true, env = "SCIGRAPH_CONFIG")]
    pub config: Option<PathBuf>,

    /// Directory with prompt template overrides.
    #[arg(long, global = true, env = "SCIGRAPH_PROMPTS")]
    pub prompts: Option<PathBuf>,

    #[arg(long, global = true, env = "SCIGRAPH_LLM_ENDPOINT")]
    pub llm_endpoint: Option<String>,

    #[arg(long, global = true, env = "SCIGRAPH_LLM_MODEL")]
    pub llm_model: Option<String>,

    #[arg(long, global = true, env = "SCIGRAPH_LLM_API_KEY", hide_env_values = true)]
    pub llm_api_key: Option<String>,

    #[arg(long, global = true, env = "SCIGRAPH_EMBED_ENDPOINT")]
    pub embed_endpoint: Option<String>,

    #[arg(long, global = true, env = "SCIGRAPH_EMBED_MODEL")]
    pub embed_model: Option<String>,

    #[arg(long, global = true, env = "SCIGRAPH_EMBED_API_KEY", hide_env_values = true)]
    pub embed_api_key: Option<String>,

    /// Overwrite existing output files.
    #[arg(long, global = true)]
    pub force: bool,

    /// More log output (repeat for more).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Register catalog papers and import extraction records into the store.
    Ingest(IngestArgs),
    /// Run the extraction pipeline over a batch of papers.
    Extract(ExtractArgs),
    /// Print the next papers to extract, most cited first.
    Frontier(FrontierArgs),
    /// Build the contribution embedding index.
    Embed(EmbedArgs),
    /// Generate ranking problems.
    Taskgen(TaskgenArgs),
    /// Rank every problem's candidates with a backend.
    Rank(RankArgs),
    /// Score submissions, optionally split by knowledge cutoff.
    Eval(EvalArgs),
    /// Write a precursor or impact tree as DOT or JSON.
    Export(ExportArgs),
    /// Check the store's graph invariants.
    Validate,
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    /// Catalog JSONL of {corpus_id, title, year, first_author_last, open_access, text_path}.
    #[arg(long)]
    pub catalog: Option<PathBuf>,

    /// Directory that relative text paths are resolved against (default: the catalog's directory).
    #[arg(long)]
    pub texts: Option<PathBuf>,

    /// Extraction records, one JSON object per file or JSONL.
    #[arg(long = "records", num_args = 1..)]
    pub records: Vec<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ExtractArgs {
    /// Papers to extract (comma separated). Default: the next frontier batch.
    #[arg(long, value_delimiter = ',')]
    pub papers: Vec<String>,

    /// Extract every catalog paper that is pending and has text.
    #[arg(long, conflicts_with = "papers")]
    pub all: bool,

    /// Frontier batch size when no papers are named.
    #[arg(long, default_value_t = 10)]
    pub k: usize,

    /// Replay responses from a mock directory instead of a live backend.
    #[arg(long)]
    pub mock: Option<PathBuf>,

    /// Also write every live response into this mock directory.
    #[arg(long, conflicts_with = "mock")]
    pub record: Option<PathBuf>,

    /// Extra attempts after a schema violation.
    #[arg(long)]
    pub retries: Option<usize>,

    /// Papers extracted concurrently.
    #[arg(long)]
    pub parallel: Option<usize>,

    /// Truncate paper text to this many characters.
    #[arg(long)]
    pub max_text_chars: Option<usize>,
}

#[derive(Debug, Args)]
pub struct FrontierArgs {
    #[arg(long, default_value_t = 10)]
    pub k: usize,

    /// Include papers without open-access text.
    #[arg(long)]
    pub include_unavailable: bool,
}

#[derive(Debug, Args)]
pub struct EmbedArgs {
    /// `mock` or `http`.
    #[arg(long, default_value = "mock")]
    pub provider: String,

    /// Vector dimension.
    #[arg(long)]
    pub dim: Option<usize>,

    /// Texts per provider call.
    #[arg(long, default_value_t = 64)]
    pub batch: usize,

    /// Index path (default: STORE/embeddings.bin).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TaskgenArgs {
    /// Inclusive year range, `YYYY-YYYY` or `YYYY`.
    #[arg(long, default_value = "2021-2025", value_parser = commands::parse_years)]
    pub years: (i32, i32),

    #[arg(long, default_value_t = 400)]
    pub per_year: usize,

    #[arg(long, default_value_t = 0)]
    pub seed: u64,

    /// Only strong edges count as gold.
    #[arg(long)]
    pub strong_only: bool,

    #[arg(long, default_value_t = scigraph_core::taskgen::DEFAULT_CANDIDATES)]
    pub candidates: usize,

    /// Index path (default: STORE/embeddings.bin).
    #[arg(long)]
    pub index: Option<PathBuf>,

    /// Problems path (default: STORE/problems.jsonl).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RankArgs {
    /// `random`, `mock:DIR` or `live`.
    #[arg(long)]
    pub backend: String,

    /// Problems path (default: STORE/problems.jsonl).
    #[arg(long)]
    pub problems: Option<PathBuf>,

    /// Submissions path (default: STORE/submissions.jsonl).
    #[arg(long)]
    pub out: Option<PathBuf>,

    #[arg(long)]
    pub parallel: Option<usize>,

    /// Seed for the random baseline.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,

    #[arg(long)]
    pub retries: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Problems path (default: STORE/problems.jsonl).
    #[arg(long)]
    pub problems: Option<PathBuf>,

    /// Submission files, one backend each (default: STORE/submissions.jsonl).
    #[arg(long, num_args = 1..)]
    pub submissions: Vec<PathBuf>,

    /// JSON object mapping backend tag to cutoff `YYYY` or `YYYY-MM`.
    #[arg(long)]
    pub cutoffs: Option<PathBuf>,

    /// Report path (default: STORE/report.json).
    #[arg(long)]
    pub out: Option<PathBuf>,

    /// Also write backend, cost per 1k problems and MAP as CSV.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum DirectionArg {
    Pre,
    Post,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Format {
    Dot,
    Json,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    /// Root contribution id, e.g. 52967399.c0.
    #[arg(long)]
    pub root: String,

    #[arg(long, value_enum, default_value = "pre")]
    pub direction: DirectionArg,

    #[arg(long, default_value_t = 3)]
    pub depth: usize,

    /// Children kept per node in impact trees.
    #[arg(long, default_value_t = 5)]
    pub top_k: usize,

    #[arg(long, value_enum, default_value = "dot")]
    pub format: Format,

    /// Output file (default: stdout).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    let level = match cli.global.verbose {
        0 => "warn",
        1 => "info",
        2 => "debug",
        _ => "trace",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match commands::run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
