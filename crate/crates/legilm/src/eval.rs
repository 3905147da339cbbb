//! Benchmark evaluation harness: load the three-part benchmark, obtain model
//! predictions, extract verdicts and citations, compute LQA accuracy,
//! macro-F1, and a citation-recall justification grade, and render
//! comparison reports.
//!
//! Scoring rules:
//! - accuracy is computed over all items; an unparseable verdict (Abstain)
//!   is always incorrect
//! - macro-F1 is the unweighted mean of per-class F1 over {Yes, No},
//!   computed from open-ended and case-study items only (choice keys are
//!   not Yes/No classes); a zero denominator yields 0
//! - justification quality is the grade of the median gold-article citation
//!   recall across items that have gold articles (High >= 0.75,
//!   Medium >= 0.25, Low below)

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::citation::Citation;
use crate::gateway::{assemble_rag_prompt, ChatBackend, GatewayError};
use crate::retriever::{search, ClauseIndex, RetrievalHit, RetrieverError};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("malformed benchmark item at line {line}: {message}")]
    MalformedItem { line: usize, message: String },
    #[error("no prediction for item {0}")]
    MissingPrediction(String),
    #[error("duplicate prediction for item {0}")]
    DuplicatePrediction(String),
    #[error("prediction {0} matches no benchmark item")]
    UnknownItem(String),
    #[error("every request failed; first error: {0}")]
    AllRequestsFailed(String),
    #[error("benchmark is empty")]
    EmptyBenchmark,
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ItemKind {
    MultipleChoice,
    OpenEnded,
    CaseStudy,
}

impl ItemKind {
    pub fn label(self) -> &'static str {
        match self {
            ItemKind::MultipleChoice => "multiple_choice",
            ItemKind::OpenEnded => "open_ended",
            ItemKind::CaseStudy => "case_study",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkItem {
    pub item_id: String,
    pub kind: ItemKind,
    pub prompt: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub choices: Option<BTreeMap<String, String>>,
    pub gold_answer: String,
    #[serde(default)]
    pub gold_articles: Vec<Citation>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_actions: Option<Vec<String>>,
}

impl BenchmarkItem {
    fn validate(&self) -> Result<(), String> {
        match self.kind {
            ItemKind::MultipleChoice => {
                let choices = self
                    .choices
                    .as_ref()
                    .filter(|c| !c.is_empty())
                    .ok_or("multiple_choice item without choices")?;
                if !choices.contains_key(&self.gold_answer) {
                    return Err(format!(
                        "gold answer {:?} is not a choice key",
                        self.gold_answer
                    ));
                }
            }
            ItemKind::OpenEnded | ItemKind::CaseStudy => {
                if self.gold_answer != "Yes" && self.gold_answer != "No" {
                    return Err(format!(
                        "gold answer {:?} must be Yes or No",
                        self.gold_answer
                    ));
                }
            }
        }
        Ok(())
    }
}

/// Load a record-per-line benchmark file, validating every item.
pub fn load_benchmark(path: &Path) -> Result<Vec<BenchmarkItem>, EvalError> {
    let reader = BufReader::new(File::open(path)?);
    let mut items = Vec::new();
    let mut seen = HashSet::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let item: BenchmarkItem =
            serde_json::from_str(&line).map_err(|e| EvalError::MalformedItem {
                line: idx + 1,
                message: e.to_string(),
            })?;
        item.validate().map_err(|message| EvalError::MalformedItem {
            line: idx + 1,
            message,
        })?;
        if !seen.insert(item.item_id.clone()) {
            return Err(EvalError::MalformedItem {
                line: idx + 1,
                message: format!("duplicate item_id {:?}", item.item_id),
            });
        }
        items.push(item);
    }
    Ok(items)
}

/// Item counts per kind.
pub fn benchmark_counts(items: &[BenchmarkItem]) -> BTreeMap<String, usize> {
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for kind in [ItemKind::MultipleChoice, ItemKind::OpenEnded, ItemKind::CaseStudy] {
        counts.insert(kind.label().to_string(), 0);
    }
    for item in items {
        *counts.get_mut(item.kind.label()).unwrap() += 1;
    }
    counts
}

// ---------------------------------------------------------------------------
// answer and citation extraction

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "verdict", content = "key", rename_all = "snake_case")]
pub enum ExtractedAnswer {
    Yes,
    No,
    ChoiceKey(String),
    Abstain,
}

fn sentence_prefix(text: &str, sentences: usize) -> &str {
    let mut seen = 0;
    for (i, c) in text.char_indices() {
        if matches!(c, '.' | '!' | '?' | '\n') {
            seen += 1;
            if seen >= sentences {
                return &text[..i];
            }
        }
    }
    text
}

/// Extract the model's verdict from raw reply text.
///
/// Open-ended and case-study replies: the first standalone yes/no token
/// (case-insensitive, punctuation-delimited) within the first two sentences.
/// Multiple choice: the first standalone token equal to one of
/// `choice_keys` (case-insensitive). Anything else is Abstain.
pub fn extract_answer(raw_text: &str, kind: ItemKind, choice_keys: &[String]) -> ExtractedAnswer {
    match kind {
        ItemKind::MultipleChoice => {
            for token in raw_text.split(|c: char| !c.is_alphanumeric()) {
                if token.is_empty() {
                    continue;
                }
                if let Some(key) = choice_keys.iter().find(|k| k.eq_ignore_ascii_case(token)) {
                    return ExtractedAnswer::ChoiceKey(key.clone());
                }
            }
            ExtractedAnswer::Abstain
        }
        ItemKind::OpenEnded | ItemKind::CaseStudy => {
            let head = sentence_prefix(raw_text, 2);
            for token in head.split(|c: char| !c.is_alphanumeric()) {
                if token.eq_ignore_ascii_case("yes") {
                    return ExtractedAnswer::Yes;
                }
                if token.eq_ignore_ascii_case("no") {
                    return ExtractedAnswer::No;
                }
            }
            ExtractedAnswer::Abstain
        }
    }
}

fn citation_pattern() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(
            r"(?:\b(?P<reg>[A-Z]{2,})\s+)?(?i:\bart(?:icle|\.)?)\s*(?P<num>\d+)(?:\s*\(\s*(?P<para>\d+)\s*\))?(?:\s*\(\s*(?P<point>[a-z])\s*\))?",
        )
        .unwrap()
    })
}

/// All article references in `raw_text`, canonicalized and deduplicated in
/// order of first appearance. Bare references default to GDPR.
pub fn extract_citations(raw_text: &str) -> Vec<Citation> {
    let mut out = Vec::new();
    for caps in citation_pattern().captures_iter(raw_text) {
        let regulation = caps
            .name("reg")
            .map(|m| m.as_str().to_uppercase())
            .unwrap_or_else(|| "GDPR".to_string());
        let article: u32 = match caps["num"].parse() {
            Ok(n) if n > 0 => n,
            _ => continue,
        };
        let paragraph: Option<u32> = caps.name("para").map(|m| m.as_str().parse().unwrap());
        let point = caps
            .name("point")
            .map(|m| m.as_str().chars().next().unwrap().to_ascii_lowercase());
        let citation = Citation {
            regulation_id: regulation,
            article,
            paragraph,
            point: if paragraph.is_some() { point } else { None },
        };
        if !out.contains(&citation) {
            out.push(citation);
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub item_id: String,
    pub raw_text: String,
    pub extracted_answer: ExtractedAnswer,
    pub cited_articles: Vec<Citation>,
}

impl Prediction {
    /// Derive a prediction from raw reply text using the documented
    /// extraction rules.
    pub fn from_raw(item: &BenchmarkItem, raw_text: String) -> Prediction {
        let keys: Vec<String> = item
            .choices
            .as_ref()
            .map(|c| c.keys().cloned().collect())
            .unwrap_or_default();
        Prediction {
            item_id: item.item_id.clone(),
            extracted_answer: extract_answer(&raw_text, item.kind, &keys),
            cited_articles: extract_citations(&raw_text),
            raw_text,
        }
    }
}

// ---------------------------------------------------------------------------
// justification grading

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Grade {
    Low,
    Medium,
    High,
}

impl std::fmt::Display for Grade {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Grade::Low => "Low",
            Grade::Medium => "Medium",
            Grade::High => "High",
        })
    }
}

pub fn grade_for_recall(recall: f64) -> Grade {
    if recall >= 0.75 {
        Grade::High
    } else if recall >= 0.25 {
        Grade::Medium
    } else {
        Grade::Low
    }
}

/// Citation recall against the item's gold articles, with its grade.
/// Returns `None` when the item has no gold articles (not applicable).
pub fn score_justification(pred: &Prediction, item: &BenchmarkItem) -> Option<(f64, Grade)> {
    if item.gold_articles.is_empty() {
        return None;
    }
    let cited: HashSet<&Citation> = pred.cited_articles.iter().collect();
    let hit = item
        .gold_articles
        .iter()
        .filter(|g| cited.contains(g))
        .count();
    let recall = hit as f64 / item.gold_articles.len() as f64;
    Some((recall, grade_for_recall(recall)))
}

fn median(values: &mut [f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = values.len();
    Some(if n % 2 == 1 {
        values[n / 2]
    } else {
        (values[n / 2 - 1] + values[n / 2]) / 2.0
    })
}

// ---------------------------------------------------------------------------
// metrics

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerItemResult {
    pub item_id: String,
    pub kind: ItemKind,
    pub gold_answer: String,
    pub extracted: ExtractedAnswer,
    pub correct: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub citation_recall: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grade: Option<Grade>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gold_actions: Option<Vec<String>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub model_name: String,
    pub n_items: BTreeMap<String, usize>,
    pub accuracy: f64,
    pub macro_f1: f64,
    pub justification_quality: Option<Grade>,
    pub per_item: Vec<PerItemResult>,
}

fn is_correct(pred: &ExtractedAnswer, item: &BenchmarkItem) -> bool {
    match (pred, item.kind) {
        (ExtractedAnswer::ChoiceKey(k), ItemKind::MultipleChoice) => *k == item.gold_answer,
        (ExtractedAnswer::Yes, ItemKind::OpenEnded | ItemKind::CaseStudy) => {
            item.gold_answer == "Yes"
        }
        (ExtractedAnswer::No, ItemKind::OpenEnded | ItemKind::CaseStudy) => {
            item.gold_answer == "No"
        }
        _ => false,
    }
}

fn f1(tp: usize, fp: usize, fn_: usize) -> f64 {
    let denom = 2 * tp + fp + fn_;
    if denom == 0 {
        0.0
    } else {
        2.0 * tp as f64 / denom as f64
    }
}

/// Aggregate predictions into an evaluation report.
pub fn compute_metrics(
    predictions: &[Prediction],
    items: &[BenchmarkItem],
    model_name: &str,
) -> Result<EvalReport, EvalError> {
    if items.is_empty() {
        return Err(EvalError::EmptyBenchmark);
    }
    let item_index: HashMap<&str, &BenchmarkItem> =
        items.iter().map(|i| (i.item_id.as_str(), i)).collect();
    let mut by_id: HashMap<&str, &Prediction> = HashMap::new();
    for pred in predictions {
        if !item_index.contains_key(pred.item_id.as_str()) {
            return Err(EvalError::UnknownItem(pred.item_id.clone()));
        }
        if by_id.insert(pred.item_id.as_str(), pred).is_some() {
            return Err(EvalError::DuplicatePrediction(pred.item_id.clone()));
        }
    }

    let mut correct = 0usize;
    // confusion counts over {Yes, No} for non-MCQ items
    let (mut tp_yes, mut fp_yes, mut fn_yes) = (0usize, 0usize, 0usize);
    let (mut tp_no, mut fp_no, mut fn_no) = (0usize, 0usize, 0usize);
    let mut recalls = Vec::new();
    let mut per_item = Vec::new();

    for item in items {
        let pred = by_id
            .get(item.item_id.as_str())
            .ok_or_else(|| EvalError::MissingPrediction(item.item_id.clone()))?;
        let ok = is_correct(&pred.extracted_answer, item);
        if ok {
            correct += 1;
        }
        if item.kind != ItemKind::MultipleChoice {
            let gold_yes = item.gold_answer == "Yes";
            match &pred.extracted_answer {
                ExtractedAnswer::Yes => {
                    if gold_yes {
                        tp_yes += 1;
                    } else {
                        fp_yes += 1;
                        fn_no += 1;
                    }
                }
                ExtractedAnswer::No => {
                    if gold_yes {
                        fp_no += 1;
                        fn_yes += 1;
                    } else {
                        tp_no += 1;
                    }
                }
                _ => {
                    if gold_yes {
                        fn_yes += 1;
                    } else {
                        fn_no += 1;
                    }
                }
            }
        }
        let scored = score_justification(pred, item);
        if let Some((recall, _)) = scored {
            recalls.push(recall);
        }
        per_item.push(PerItemResult {
            item_id: item.item_id.clone(),
            kind: item.kind,
            gold_answer: item.gold_answer.clone(),
            extracted: pred.extracted_answer.clone(),
            correct: ok,
            citation_recall: scored.map(|(r, _)| r),
            grade: scored.map(|(_, g)| g),
            gold_actions: item.gold_actions.clone(),
            error: None,
        });
    }

    let macro_f1 = (f1(tp_yes, fp_yes, fn_yes) + f1(tp_no, fp_no, fn_no)) / 2.0;
    Ok(EvalReport {
        model_name: model_name.to_string(),
        n_items: benchmark_counts(items),
        accuracy: correct as f64 / items.len() as f64,
        macro_f1,
        justification_quality: median(&mut recalls).map(grade_for_recall),
        per_item,
    })
}

// ---------------------------------------------------------------------------
// end-to-end run

fn render_item_prompt(item: &BenchmarkItem) -> String {
    match &item.choices {
        Some(choices) => {
            let mut prompt = item.prompt.clone();
            prompt.push('\n');
            for (key, text) in choices {
                prompt.push_str(&format!("({key}) {text}\n"));
            }
            prompt.push_str("Answer with the letter of the correct choice.");
            prompt
        }
        None => item.prompt.clone(),
    }
}

fn eval_one(
    backend: &dyn ChatBackend,
    index: Option<&ClauseIndex>,
    item: &BenchmarkItem,
    k: usize,
) -> Result<String, GatewayError> {
    let hits: Vec<(RetrievalHit, String)> = match index {
        Some(index) => match search(index, &item.prompt, k) {
            Ok(hits) => hits
                .into_iter()
                .map(|h| {
                    let text = index
                        .clause_text(&h.clause_citation)
                        .unwrap_or_default()
                        .to_string();
                    (h, text)
                })
                .collect(),
            // a query of pure stopwords just gets no premise
            Err(RetrieverError::EmptyQuery) => Vec::new(),
            Err(e) => {
                log::warn!("retrieval failed for {}: {e}", item.item_id);
                Vec::new()
            }
        },
        None => Vec::new(),
    };
    let messages = assemble_rag_prompt(&render_item_prompt(item), &hits);
    backend.complete(&messages)
}

/// Run the benchmark against a backend. Partial failures are recorded as
/// Abstain with an error note; the run aborts only if every request fails.
pub fn run_eval(
    backend: &dyn ChatBackend,
    index: Option<&ClauseIndex>,
    benchmark: &[BenchmarkItem],
    k: usize,
    jobs: usize,
) -> Result<EvalReport, EvalError> {
    if benchmark.is_empty() {
        return Err(EvalError::EmptyBenchmark);
    }
    let jobs = jobs.max(1);
    let results: Vec<Result<String, GatewayError>> = if jobs == 1 {
        benchmark
            .iter()
            .map(|item| eval_one(backend, index, item, k))
            .collect()
    } else {
        parallel_map(benchmark, jobs, |item| eval_one(backend, index, item, k))
    };

    let mut errors = Vec::new();
    let mut predictions = Vec::new();
    for (item, result) in benchmark.iter().zip(results) {
        match result {
            Ok(raw) => predictions.push((Prediction::from_raw(item, raw), None)),
            Err(e) => {
                let note = e.to_string();
                predictions.push((
                    Prediction {
                        item_id: item.item_id.clone(),
                        raw_text: String::new(),
                        extracted_answer: ExtractedAnswer::Abstain,
                        cited_articles: Vec::new(),
                    },
                    Some(note.clone()),
                ));
                errors.push(note);
            }
        }
    }
    if errors.len() == benchmark.len() {
        return Err(EvalError::AllRequestsFailed(errors.swap_remove(0)));
    }
    let notes: HashMap<String, String> = predictions
        .iter()
        .filter_map(|(p, e)| e.clone().map(|e| (p.item_id.clone(), e)))
        .collect();
    let preds: Vec<Prediction> = predictions.into_iter().map(|(p, _)| p).collect();
    let mut report = compute_metrics(&preds, benchmark, &backend.name())?;
    for item in &mut report.per_item {
        if let Some(note) = notes.get(&item.item_id) {
            item.error = Some(note.clone());
        }
    }
    Ok(report)
}

/// Order-preserving bounded-parallelism map over benchmark items.
fn parallel_map<'a, T, F>(items: &'a [BenchmarkItem], jobs: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(&'a BenchmarkItem) -> T + Sync,
{
    use std::sync::atomic::{AtomicUsize, Ordering};
    let next = AtomicUsize::new(0);
    let mut slots: Vec<Option<T>> = (0..items.len()).map(|_| None).collect();
    let slots_ptr = std::sync::Mutex::new(&mut slots);
    std::thread::scope(|scope| {
        for _ in 0..jobs.min(items.len()) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= items.len() {
                    break;
                }
                let value = f(&items[i]);
                let mut guard = slots_ptr.lock().unwrap();
                guard[i] = Some(value);
            });
        }
    });
    slots.into_iter().map(|s| s.unwrap()).collect()
}

// ---------------------------------------------------------------------------
// report rendering

/// Render a comparison table: one row per model, sorted by accuracy
/// descending, accuracy as a percentage and F1 x 100, both to two decimals.
pub fn render_report(reports: &[EvalReport]) -> String {
    let mut sorted: Vec<&EvalReport> = reports.iter().collect();
    sorted.sort_by(|a, b| {
        b.accuracy
            .partial_cmp(&a.accuracy)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then_with(|| a.model_name.cmp(&b.model_name))
    });
    let name_width = sorted
        .iter()
        .map(|r| r.model_name.len())
        .chain(["Model".len()])
        .max()
        .unwrap_or(5);
    let mut out = String::new();
    out.push_str(&format!(
        "{:<name_width$} | Accuracy | F1    | Justification\n",
        "Model"
    ));
    out.push_str(&format!(
        "{:-<name_width$}-|----------|-------|--------------\n",
        ""
    ));
    for report in sorted {
        let grade = report
            .justification_quality
            .map(|g| g.to_string())
            .unwrap_or_else(|| "-".to_string());
        out.push_str(&format!(
            "{:<name_width$} | {:.2}% | {:.2} | {}\n",
            report.model_name,
            report.accuracy * 100.0,
            report.macro_f1 * 100.0,
            grade
        ));
    }
    out
}
