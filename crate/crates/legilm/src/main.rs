//! `legilm` command line: the corpus pipeline end to end.
//!
//! Subcommands mirror the pipeline stages: ingest raw sources, build the
//! clause index, retrieve, derive and augment the instruction dataset,
//! balance and split it, consult a served model with retrieved premises,
//! evaluate against a benchmark, and render comparison reports.
//!
//! Exit codes: 0 on success, 1 on a domain error (one JSON record on
//! stderr), 2 on a usage error.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use legilm::dataset::{
    self, balance, case_to_example, make_contrastive, read_jsonl, split, write_jsonl,
    DEFAULT_RETRY_BUDGET,
};
use legilm::eval::{load_benchmark, render_report, run_eval, EvalReport};
use legilm::gateway::{
    backend_from_spec, consult, ChatBackend, ChatMessage, EndpointConfig, ANALYST_SYSTEM_PROMPT,
};
use legilm::ingest::{
    parse_enforcement_records, parse_regulation, read_cases, read_clauses, write_cases,
    write_clauses, DocumentKind, SourceDocument,
};
use legilm::lexer::PhraseLexicon;
use legilm::retriever::{build_index, explain_score, search, ClauseIndex};

#[derive(Parser)]
#[command(name = "legilm", version, about = "GDPR clause retrieval, dataset construction, and model evaluation")]
struct Cli {
    /// TOML file with endpoint settings (see README)
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for every randomized step
    #[arg(long, global = true, default_value_t = 17)]
    seed: u64,
    /// Worker threads for evaluation requests
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,
    /// Suppress progress logging
    #[arg(long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum IngestKind {
    Regulation,
    Enforcement,
}

#[derive(Subcommand)]
enum Command {
    /// Parse a raw source document into clause or case records
    Ingest {
        #[arg(long, value_enum)]
        kind: IngestKind,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        /// Regulation identifier used in citations
        #[arg(long, default_value = "GDPR")]
        regulation_id: String,
        #[arg(long)]
        title: Option<String>,
        #[arg(long, default_value = "EU")]
        jurisdiction: String,
    },
    /// Build the clause retrieval index from a clause file
    BuildIndex {
        #[arg(long)]
        clauses: PathBuf,
        #[arg(long)]
        output: PathBuf,
        /// Newline-delimited phrase lexicon; defaults to the built-in seed
        #[arg(long)]
        lexicon: Option<PathBuf>,
    },
    /// Query the index and print ranked clauses
    Retrieve {
        #[arg(long)]
        index: PathBuf,
        #[arg(long)]
        query: String,
        #[arg(short, default_value_t = 5)]
        k: usize,
        /// Also print per-term score contributions for each hit
        #[arg(long)]
        explain: bool,
    },
    /// Turn enforcement cases into instruction records
    BuildDataset {
        #[arg(long)]
        cases: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
    /// Generate validated contrastive counterexamples for a dataset
    Contrast {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        /// Backend spec: echo | const:TEXT | fixture:PATH | an http(s) URL
        #[arg(long)]
        backend: String,
        #[arg(long, default_value_t = DEFAULT_RETRY_BUDGET)]
        retry_budget: usize,
        /// Keep originals whose counterexample was rejected
        #[arg(long)]
        keep_rejected: bool,
    },
    /// Downsample to a class-balanced dataset
    Balance {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
    /// Stratified train/validation split that keeps pairs together
    Split {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        train_output: PathBuf,
        #[arg(long)]
        validation_output: PathBuf,
        #[arg(long, default_value_t = 0.8)]
        train_fraction: f64,
    },
    /// Ask a served model one question with retrieved premises
    Consult {
        #[arg(long)]
        index: PathBuf,
        #[arg(long)]
        question: String,
        #[arg(short, default_value_t = 5)]
        k: usize,
        #[arg(long)]
        backend: String,
    },
    /// Run a benchmark against a backend and write a report
    Evaluate {
        #[arg(long)]
        benchmark: PathBuf,
        /// Retrieval index for premise augmentation; omit for closed-book
        #[arg(long)]
        index: Option<PathBuf>,
        #[arg(long)]
        backend: String,
        /// Name reported for this run; defaults to the backend's own name
        #[arg(long)]
        model_name: Option<String>,
        #[arg(short, default_value_t = 5)]
        k: usize,
        #[arg(long)]
        output: PathBuf,
        /// Omit the timestamp so repeated runs are byte-identical
        #[arg(long)]
        no_timestamp: bool,
    },
    /// Render a comparison table from one or more report files
    Report {
        /// Report files produced by `evaluate`
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
    },
}

// ---------------------------------------------------------------------------
// configuration

#[derive(Default, Deserialize)]
struct ConfigFile {
    #[serde(default)]
    endpoint: EndpointSection,
}

#[derive(Default, Deserialize)]
struct EndpointSection {
    base_url: Option<String>,
    model_name: Option<String>,
    api_key: Option<String>,
    timeout_secs: Option<f64>,
    max_retries: Option<usize>,
    temperature: Option<f64>,
    backoff_base_secs: Option<f64>,
}

fn endpoint_config(path: Option<&Path>) -> Result<EndpointConfig, CliError> {
    let mut config = EndpointConfig::default();
    if let Some(path) = path {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::new("config", format!("{}: {e}", path.display())))?;
        let file: ConfigFile = toml::from_str(&text)
            .map_err(|e| CliError::new("config", format!("{}: {e}", path.display())))?;
        let section = file.endpoint;
        if let Some(v) = section.base_url {
            config.base_url = v;
        }
        if let Some(v) = section.model_name {
            config.model_name = v;
        }
        if let Some(v) = section.api_key {
            config.api_key = v;
        }
        if let Some(v) = section.timeout_secs {
            config.timeout_secs = v;
        }
        if let Some(v) = section.max_retries {
            config.max_retries = v;
        }
        if let Some(v) = section.temperature {
            config.temperature = v;
        }
        if let Some(v) = section.backoff_base_secs {
            config.backoff_base_secs = v;
        }
    }
    Ok(config.with_env_overrides())
}

// ---------------------------------------------------------------------------
// error plumbing

#[derive(Debug, Serialize)]
struct CliError {
    kind: String,
    error: String,
}

impl CliError {
    fn new(kind: &str, error: String) -> CliError {
        CliError {
            kind: kind.to_string(),
            error,
        }
    }
}

macro_rules! from_domain_error {
    ($ty:ty, $kind:literal) => {
        impl From<$ty> for CliError {
            fn from(e: $ty) -> CliError {
                CliError::new($kind, e.to_string())
            }
        }
    };
}

from_domain_error!(legilm::ingest::IngestError, "ingest");
from_domain_error!(legilm::retriever::RetrieverError, "retriever");
from_domain_error!(legilm::dataset::DatasetError, "dataset");
from_domain_error!(legilm::gateway::GatewayError, "gateway");
from_domain_error!(legilm::gateway::ConsultError, "gateway");
from_domain_error!(legilm::eval::EvalError, "eval");
from_domain_error!(std::io::Error, "io");

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.quiet { "error" } else { "info" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", serde_json::to_string(&e).expect("serializable error"));
            ExitCode::FAILURE
        }
    }
}

fn load_index(path: &Path) -> Result<ClauseIndex, CliError> {
    Ok(ClauseIndex::load(path)?)
}

fn load_lexicon(path: Option<&Path>) -> Result<PhraseLexicon, CliError> {
    match path {
        Some(path) => Ok(PhraseLexicon::from_file(path)?),
        None => Ok(PhraseLexicon::default_seed()),
    }
}

fn make_backend(spec: &str, config: EndpointConfig) -> Result<Box<dyn ChatBackend>, CliError> {
    Ok(backend_from_spec(spec, config)?)
}

/// Timestamped wrapper written by `evaluate` and read back by `report`.
#[derive(Serialize, Deserialize)]
struct ReportFile {
    #[serde(skip_serializing_if = "Option::is_none")]
    generated_at: Option<String>,
    report: EvalReport,
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Ingest {
            kind,
            input,
            output,
            regulation_id,
            title,
            jurisdiction,
        } => {
            let raw = std::fs::read_to_string(&input)?;
            let doc_id = input
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "document".to_string());
            match kind {
                IngestKind::Regulation => {
                    let mut doc = SourceDocument::new(&doc_id, DocumentKind::Regulation, &raw);
                    if let Some(title) = title {
                        doc.metadata.insert("title".to_string(), title);
                    }
                    doc.metadata
                        .insert("jurisdiction".to_string(), jurisdiction);
                    let regulation = parse_regulation(&doc, &regulation_id)?;
                    write_clauses(&regulation.clauses, &output)?;
                    log::info!(
                        "parsed {} clauses ({} articles) from {}",
                        regulation.clauses.len(),
                        regulation.articles().count(),
                        input.display()
                    );
                }
                IngestKind::Enforcement => {
                    let mut doc =
                        SourceDocument::new(&doc_id, DocumentKind::EnforcementRecord, &raw);
                    doc.metadata
                        .insert("regulation_id".to_string(), regulation_id);
                    let parsed = parse_enforcement_records(&doc)?;
                    for reject in &parsed.rejects {
                        log::warn!("rejected line {}: {}", reject.line, reject.reason);
                    }
                    write_cases(&parsed.cases, &output)?;
                    log::info!(
                        "parsed {} cases ({} rejected) from {}",
                        parsed.cases.len(),
                        parsed.rejects.len(),
                        input.display()
                    );
                }
            }
        }

        Command::BuildIndex {
            clauses,
            output,
            lexicon,
        } => {
            let clauses = read_clauses(&clauses)?;
            let lexicon = load_lexicon(lexicon.as_deref())?;
            let index = build_index(&clauses, &lexicon)?;
            index.save(&output)?;
            log::info!(
                "indexed {} clauses (avg length {:.2}) into {}",
                index.n_docs(),
                index.avg_doc_length(),
                output.display()
            );
        }

        Command::Retrieve {
            index,
            query,
            k,
            explain,
        } => {
            let index = load_index(&index)?;
            let hits = search(&index, &query, k)?;
            let mut rows = Vec::new();
            for hit in hits {
                let mut row = serde_json::json!({
                    "rank": hit.rank,
                    "citation": hit.clause_citation,
                    "score": hit.score,
                    "text": index.clause_text(&hit.clause_citation),
                });
                if explain {
                    let terms: BTreeMap<String, f64> =
                        explain_score(&index, &query, &hit.clause_citation)?
                            .into_iter()
                            .collect();
                    row["contributions"] = serde_json::to_value(terms).unwrap();
                }
                rows.push(row);
            }
            println!("{}", serde_json::to_string_pretty(&rows).unwrap());
        }

        Command::BuildDataset { cases, output } => {
            let cases = read_cases(&cases)?;
            let examples: Vec<_> = cases
                .iter()
                .map(case_to_example)
                .collect::<Result<_, _>>()?;
            write_jsonl(&examples, &output)?;
            log::info!("wrote {} instruction records", examples.len());
        }

        Command::Contrast {
            input,
            output,
            backend,
            retry_budget,
            keep_rejected,
        } => {
            let config = endpoint_config(cli.config.as_deref())?;
            let backend = make_backend(&backend, config)?;
            let mut generator = |prompt: &str| {
                backend
                    .complete(&[
                        ChatMessage::system(ANALYST_SYSTEM_PROMPT),
                        ChatMessage::user(prompt),
                    ])
                    .map_err(|e| dataset::DatasetError::GeneratorFailed(e.to_string()))
            };
            let originals = read_jsonl(&input)?;
            let mut out = Vec::new();
            let mut rejected = 0usize;
            for original in &originals {
                out.push(original.clone());
                match make_contrastive(original, &mut generator, retry_budget) {
                    Ok(contrastive) => out.push(contrastive),
                    Err(e @ dataset::DatasetError::GenerationRejected { .. }) => {
                        log::warn!("{}: {e}", original.example_id);
                        rejected += 1;
                        if !keep_rejected {
                            out.pop();
                        }
                    }
                    Err(e) => return Err(e.into()),
                }
            }
            write_jsonl(&out, &output)?;
            log::info!(
                "wrote {} records ({} originals, {} counterexamples rejected)",
                out.len(),
                originals.len(),
                rejected
            );
        }

        Command::Balance { input, output } => {
            let examples = read_jsonl(&input)?;
            let balanced = balance(&examples, cli.seed)?;
            write_jsonl(&balanced, &output)?;
            log::info!(
                "kept {} of {} records after balancing",
                balanced.len(),
                examples.len()
            );
        }

        Command::Split {
            input,
            train_output,
            validation_output,
            train_fraction,
        } => {
            let examples = read_jsonl(&input)?;
            let (train, validation) =
                split(&examples, train_fraction, 1.0 - train_fraction, cli.seed)?;
            write_jsonl(&train, &train_output)?;
            write_jsonl(&validation, &validation_output)?;
            log::info!("split into {} train / {} validation", train.len(), validation.len());
        }

        Command::Consult {
            index,
            question,
            k,
            backend,
        } => {
            let config = endpoint_config(cli.config.as_deref())?;
            let backend = make_backend(&backend, config)?;
            let index = load_index(&index)?;
            let consultation = consult(backend.as_ref(), &index, &question, k)?;
            let premises: Vec<&str> = consultation
                .hits
                .iter()
                .map(|(hit, _)| hit.clause_citation.as_str())
                .collect();
            println!(
                "{}",
                serde_json::to_string_pretty(&serde_json::json!({
                    "answer": consultation.text,
                    "premises": premises,
                }))
                .unwrap()
            );
        }

        Command::Evaluate {
            benchmark,
            index,
            backend,
            model_name,
            k,
            output,
            no_timestamp,
        } => {
            let config = endpoint_config(cli.config.as_deref())?;
            let backend = make_backend(&backend, config)?;
            let index = index.as_deref().map(load_index).transpose()?;
            let benchmark = load_benchmark(&benchmark)?;
            let mut report = run_eval(backend.as_ref(), index.as_ref(), &benchmark, k, cli.jobs)?;
            if let Some(name) = model_name {
                report.model_name = name;
            }
            log::info!(
                "{}: accuracy {:.2}%, macro-F1 {:.2}",
                report.model_name,
                report.accuracy * 100.0,
                report.macro_f1 * 100.0
            );
            let wrapper = ReportFile {
                generated_at: (!no_timestamp).then(|| chrono::Utc::now().to_rfc3339()),
                report,
            };
            std::fs::write(
                &output,
                serde_json::to_string_pretty(&wrapper).unwrap() + "\n",
            )?;
        }

        Command::Report { inputs } => {
            let mut reports = Vec::new();
            for path in &inputs {
                let text = std::fs::read_to_string(path)?;
                let wrapper: ReportFile = serde_json::from_str(&text)
                    .map_err(|e| CliError::new("report", format!("{}: {e}", path.display())))?;
                reports.push(wrapper.report);
            }
            print!("{}", render_report(&reports));
        }
    }
    Ok(())
}
