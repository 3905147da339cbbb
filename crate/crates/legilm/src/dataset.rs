//! Instruction-tuning dataset construction.
//!
//! Records follow the `instruction` / `answer` (Yes|No) / `output` shape,
//! extended with provenance fields. Enforcement cases become non-compliant
//! originals; a pluggable generator produces contrastive counterexamples
//! whose verdict flips; pair validation, class balancing, and stratified
//! splitting keep contrastive pairs intact.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::citation::Citation;
use crate::ingest::EnforcementCase;
use crate::lexer::{tokenize, PhraseLexicon, TokenKind};
use crate::stopwords::is_stopword;

/// Jaccard overlap two paired instructions must reach to count as mirrored.
pub const MIRROR_OVERLAP_THRESHOLD: f64 = 0.5;
/// Maximum class skew |P(Yes) - P(No)| after balancing.
pub const BALANCE_TOLERANCE: f64 = 0.05;
/// Generation attempts before a contrastive candidate is rejected for good.
pub const DEFAULT_RETRY_BUDGET: usize = 3;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("enforcement case {0} has no summary")]
    MissingSummary(String),
    #[error("contrastive generation rejected after {attempts} attempts: {reasons}")]
    GenerationRejected { attempts: usize, reasons: String },
    #[error("generator failed: {0}")]
    GeneratorFailed(String),
    #[error("cannot balance: class {0:?} has no examples")]
    BalanceImpossible(Answer),
    #[error("split fractions must be in (0,1) and sum to 1, got {train}/{validation}")]
    BadFractions { train: f64, validation: f64 },
    #[error("cannot split an empty example list")]
    EmptySplit,
    #[error("malformed record at line {line}: {message}")]
    MalformedRecord { line: usize, message: String },
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Answer {
    Yes,
    No,
}

impl Answer {
    pub fn flipped(self) -> Answer {
        match self {
            Answer::Yes => Answer::No,
            Answer::No => Answer::Yes,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Original,
    Contrastive,
    CaseDerived,
}

/// One training record. The first three fields are the wire format's
/// required names; the rest is provenance bookkeeping.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstructionExample {
    pub instruction: String,
    pub answer: Answer,
    pub output: String,
    #[serde(default)]
    pub example_id: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub gold_articles: Vec<Citation>,
    #[serde(default = "default_provenance")]
    pub provenance: Provenance,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pair_id: Option<String>,
}

fn default_provenance() -> Provenance {
    Provenance::Original
}

impl InstructionExample {
    /// Identifier of the contrastive pair group this record belongs to.
    /// Anchor records carry no `pair_id`; their own id names the group.
    pub fn group_id(&self) -> &str {
        self.pair_id.as_deref().unwrap_or(&self.example_id)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub n_examples: usize,
    pub class_counts: BTreeMap<String, usize>,
    pub split_fractions: BTreeMap<String, f64>,
    pub seed: u64,
}

impl DatasetManifest {
    pub fn new(examples: &[InstructionExample], train: f64, validation: f64, seed: u64) -> Self {
        let mut class_counts = BTreeMap::new();
        for ex in examples {
            let key = match ex.answer {
                Answer::Yes => "Yes",
                Answer::No => "No",
            };
            *class_counts.entry(key.to_string()).or_insert(0) += 1;
        }
        let mut split_fractions = BTreeMap::new();
        split_fractions.insert("train".to_string(), train);
        split_fractions.insert("validation".to_string(), validation);
        DatasetManifest {
            n_examples: examples.len(),
            class_counts,
            split_fractions,
            seed,
        }
    }
}

// ---------------------------------------------------------------------------
// case-derived originals

fn article_phrase(citation: &Citation) -> String {
    let mut s = format!("{} Article {}", citation.regulation_id, citation.article);
    if let Some(p) = citation.paragraph {
        s.push_str(&format!("({p})"));
    }
    if let Some(pt) = citation.point {
        s.push_str(&format!("({pt})"));
    }
    // short statutory gloss for the articles that dominate fine records
    let gloss = match (citation.regulation_id.as_str(), citation.article) {
        ("GDPR", 5) => Some("which sets the principles for processing personal data"),
        ("GDPR", 6) => Some("which mandates a lawful basis for any data processing"),
        ("GDPR", 13) => Some("which requires informing the data subject at collection"),
        ("GDPR", 17) => Some("which grants the right to erasure"),
        ("GDPR", 32) => Some("which requires appropriate security of processing"),
        ("GDPR", 33) => Some("which requires breach notification to the supervisory authority"),
        _ => None,
    };
    if let Some(gloss) = gloss {
        s.push_str(", ");
        s.push_str(gloss);
    }
    s
}

/// Turn a fine record into a non-compliant training original.
pub fn case_to_example(case: &EnforcementCase) -> Result<InstructionExample, DatasetError> {
    if case.summary.trim().is_empty() {
        return Err(DatasetError::MissingSummary(case.case_id.clone()));
    }
    let summary = case.summary.trim().trim_end_matches('.');
    let instruction = format!(
        "{} {}. Is this action compliant with GDPR?",
        case.entity, summary
    );
    let cited: Vec<String> = case.articles_violated.iter().map(article_phrase).collect();
    let output = format!(
        "The action taken by {} violates {}. {}.",
        case.entity,
        join_prose(&cited),
        summary_sentence(summary)
    );
    Ok(InstructionExample {
        instruction,
        answer: Answer::No,
        output,
        example_id: case.case_id.clone(),
        gold_articles: case.articles_violated.clone(),
        provenance: Provenance::CaseDerived,
        pair_id: None,
    })
}

fn join_prose(parts: &[String]) -> String {
    match parts.len() {
        0 => String::new(),
        1 => parts[0].clone(),
        _ => format!(
            "{} and {}",
            parts[..parts.len() - 1].join("; "),
            parts[parts.len() - 1]
        ),
    }
}

fn summary_sentence(summary: &str) -> String {
    let mut chars = summary.chars();
    match chars.next() {
        Some(first) => format!(
            "The conduct described ({}{}) falls short of these requirements",
            first.to_lowercase(),
            chars.as_str()
        ),
        None => String::new(),
    }
}

// ---------------------------------------------------------------------------
// pair validation

/// Outcome of checking a contrastive pair, with the reasons for rejection.
#[derive(Debug, Clone, PartialEq)]
pub struct PairVerdict {
    pub accepted: bool,
    pub failures: Vec<String>,
    pub overlap: f64,
}

fn instruction_token_set(text: &str) -> Vec<String> {
    let lexicon = PhraseLexicon::default_seed();
    let mut set: Vec<String> = tokenize(text, &lexicon)
        .into_iter()
        .filter(|t| t.kind != TokenKind::Word || !is_stopword(&t.surface))
        .map(|t| t.surface)
        .collect();
    set.sort();
    set.dedup();
    set
}

/// Jaccard overlap of the two instructions' token sets, stopwords removed.
pub fn instruction_overlap(a: &str, b: &str) -> f64 {
    let sa = instruction_token_set(a);
    let sb = instruction_token_set(b);
    if sa.is_empty() && sb.is_empty() {
        return 1.0;
    }
    let intersection = sa.iter().filter(|t| sb.binary_search(t).is_ok()).count();
    let union = sa.len() + sb.len() - intersection;
    intersection as f64 / union as f64
}

fn has_citation_token(text: &str) -> bool {
    tokenize(text, &PhraseLexicon::default_seed())
        .iter()
        .any(|t| t.kind == TokenKind::Citation)
}

/// Validate a contrastive pair: flipped answers, matching pair group,
/// mirrored but non-identical instructions, cited outputs.
pub fn validate_pair(a: &InstructionExample, b: &InstructionExample) -> PairVerdict {
    let mut failures = Vec::new();
    if a.answer == b.answer {
        failures.push("answers do not differ".to_string());
    }
    if a.group_id() != b.group_id() {
        failures.push("pair ids do not match".to_string());
    }
    if a.instruction == b.instruction {
        failures.push("instructions are identical".to_string());
    }
    let overlap = instruction_overlap(&a.instruction, &b.instruction);
    if overlap < MIRROR_OVERLAP_THRESHOLD {
        failures.push(format!(
            "insufficient mirror overlap ({overlap:.2} < {MIRROR_OVERLAP_THRESHOLD})"
        ));
    }
    if !has_citation_token(&a.output) {
        failures.push("first output cites no article".to_string());
    }
    if !has_citation_token(&b.output) {
        failures.push("second output cites no article".to_string());
    }
    PairVerdict {
        accepted: failures.is_empty(),
        failures,
        overlap,
    }
}

// ---------------------------------------------------------------------------
// contrastive generation

/// Text-completion function used to draft counterexamples. Implemented by
/// the gateway's backends and by deterministic test stubs.
pub trait Generator {
    fn generate(&mut self, prompt: &str) -> Result<String, DatasetError>;
}

impl<F> Generator for F
where
    F: FnMut(&str) -> Result<String, DatasetError>,
{
    fn generate(&mut self, prompt: &str) -> Result<String, DatasetError> {
        self(prompt)
    }
}

/// Prompt sent to the generator for one original.
pub fn contrastive_prompt(original: &InstructionExample) -> String {
    let flipped = match original.answer.flipped() {
        Answer::Yes => "Yes",
        Answer::No => "No",
    };
    format!(
        "You are drafting counterexamples for a GDPR compliance training set.\n\
         Original record:\n\
         instruction: {}\n\
         answer: {:?}\n\
         output: {}\n\n\
         Write one JSON object with exactly the fields \"instruction\", \"answer\", \
         and \"output\". The new instruction must closely mirror the original \
         scenario, changing one key legal fact so that the correct answer becomes \
         \"{}\". The output must justify that verdict and cite at least one GDPR \
         article. Reply with the JSON object only.",
        original.instruction, original.answer, original.output, flipped
    )
}

#[derive(Deserialize)]
struct CandidateRecord {
    instruction: String,
    answer: Answer,
    output: String,
}

fn first_json_object(text: &str) -> Option<&str> {
    let start = text.find('{')?;
    let mut depth = 0usize;
    let mut in_string = false;
    let mut escaped = false;
    for (i, c) in text[start..].char_indices() {
        if in_string {
            match c {
                '\\' if !escaped => escaped = true,
                '"' if !escaped => in_string = false,
                _ => escaped = false,
            }
            if c != '\\' {
                escaped = false;
            }
            continue;
        }
        match c {
            '"' => in_string = true,
            '{' => depth += 1,
            '}' => {
                depth -= 1;
                if depth == 0 {
                    return Some(&text[start..start + i + 1]);
                }
            }
            _ => {}
        }
    }
    None
}

/// Generate a validated counterexample for `original`, retrying up to
/// `retry_budget` times before rejecting. The original is not mutated; the
/// returned record links back to it through `pair_id`.
pub fn make_contrastive(
    original: &InstructionExample,
    generator: &mut dyn Generator,
    retry_budget: usize,
) -> Result<InstructionExample, DatasetError> {
    let prompt = contrastive_prompt(original);
    let mut last_reasons = String::from("generator produced no candidate");
    for attempt in 1..=retry_budget.max(1) {
        let reply = generator.generate(&prompt)?;
        let Some(json) = first_json_object(&reply) else {
            last_reasons = "reply contains no JSON object".to_string();
            continue;
        };
        let record: CandidateRecord = match serde_json::from_str(json) {
            Ok(r) => r,
            Err(e) => {
                last_reasons = format!("candidate JSON invalid: {e}");
                continue;
            }
        };
        let candidate = InstructionExample {
            instruction: record.instruction,
            answer: record.answer,
            gold_articles: citations_in_text(&record.output),
            output: record.output,
            example_id: format!("{}-contrast", original.group_id()),
            provenance: Provenance::Contrastive,
            pair_id: Some(original.group_id().to_string()),
        };
        let verdict = validate_pair(original, &candidate);
        if verdict.accepted {
            return Ok(candidate);
        }
        last_reasons = verdict.failures.join("; ");
        log::debug!("contrastive attempt {attempt} rejected: {last_reasons}");
    }
    Err(DatasetError::GenerationRejected {
        attempts: retry_budget.max(1),
        reasons: last_reasons,
    })
}

fn citations_in_text(text: &str) -> Vec<Citation> {
    let mut out = Vec::new();
    for token in tokenize(text, &PhraseLexicon::default_seed()) {
        if token.kind == TokenKind::Citation {
            if let Ok(c) = Citation::parse(&token.surface, "GDPR") {
                if !out.contains(&c) {
                    out.push(c);
                }
            }
        }
    }
    out
}

// ---------------------------------------------------------------------------
// balancing and splitting

#[derive(Debug)]
struct Group {
    indices: Vec<usize>,
    yes: usize,
    no: usize,
}

fn group_examples(examples: &[InstructionExample]) -> Vec<Group> {
    let mut order: Vec<String> = Vec::new();
    let mut map: BTreeMap<String, Group> = BTreeMap::new();
    for (i, ex) in examples.iter().enumerate() {
        let id = ex.group_id().to_string();
        let group = map.entry(id.clone()).or_insert_with(|| {
            order.push(id);
            Group {
                indices: Vec::new(),
                yes: 0,
                no: 0,
            }
        });
        group.indices.push(i);
        match ex.answer {
            Answer::Yes => group.yes += 1,
            Answer::No => group.no += 1,
        }
    }
    order.into_iter().map(|id| map.remove(&id).unwrap()).collect()
}

/// Downsample to a class-balanced subset, keeping contrastive pair groups
/// atomically. Deterministic under `seed`; preserves input order.
pub fn balance(
    examples: &[InstructionExample],
    seed: u64,
) -> Result<Vec<InstructionExample>, DatasetError> {
    let groups = group_examples(examples);
    let mut yes: i64 = groups.iter().map(|g| g.yes as i64).sum();
    let mut no: i64 = groups.iter().map(|g| g.no as i64).sum();
    if yes == 0 {
        return Err(DatasetError::BalanceImpossible(Answer::Yes));
    }
    if no == 0 {
        return Err(DatasetError::BalanceImpossible(Answer::No));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut removable: Vec<usize> = (0..groups.len())
        .filter(|&i| groups[i].yes != groups[i].no)
        .collect();
    removable.shuffle(&mut rng);

    let mut kept = vec![true; groups.len()];
    let skew = |yes: i64, no: i64| (yes - no).abs() as f64 / (yes + no) as f64;
    while skew(yes, no) > BALANCE_TOLERANCE + 1e-12 {
        // the majority side can flip between iterations, so rescan each time
        let majority_is_yes = yes > no;
        let next = removable.iter().copied().find(|&i| {
            kept[i]
                && if majority_is_yes {
                    groups[i].yes > groups[i].no
                } else {
                    groups[i].no > groups[i].yes
                }
        });
        let Some(idx) = next else {
            return Err(DatasetError::BalanceImpossible(if majority_is_yes {
                Answer::No
            } else {
                Answer::Yes
            }));
        };
        kept[idx] = false;
        yes -= groups[idx].yes as i64;
        no -= groups[idx].no as i64;
    }

    let mut keep_record = vec![false; examples.len()];
    for (gi, group) in groups.iter().enumerate() {
        if kept[gi] {
            for &i in &group.indices {
                keep_record[i] = true;
            }
        }
    }
    Ok(examples
        .iter()
        .enumerate()
        .filter(|(i, _)| keep_record[*i])
        .map(|(_, ex)| ex.clone())
        .collect())
}

/// Stratified train/validation split. Pair groups never straddle splits;
/// per-class counts deviate from the target fraction by at most one record.
pub fn split(
    examples: &[InstructionExample],
    train_fraction: f64,
    validation_fraction: f64,
    seed: u64,
) -> Result<(Vec<InstructionExample>, Vec<InstructionExample>), DatasetError> {
    if examples.is_empty() {
        return Err(DatasetError::EmptySplit);
    }
    let ok = train_fraction > 0.0
        && train_fraction < 1.0
        && validation_fraction > 0.0
        && validation_fraction < 1.0
        && (train_fraction + validation_fraction - 1.0).abs() < 1e-9;
    if !ok {
        return Err(DatasetError::BadFractions {
            train: train_fraction,
            validation: validation_fraction,
        });
    }

    let groups = group_examples(examples);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut balanced: Vec<usize> = Vec::new();
    let mut yes_heavy: Vec<usize> = Vec::new();
    let mut no_heavy: Vec<usize> = Vec::new();
    for (i, g) in groups.iter().enumerate() {
        if g.yes == g.no {
            balanced.push(i);
        } else if g.yes > g.no {
            yes_heavy.push(i);
        } else {
            no_heavy.push(i);
        }
    }
    balanced.shuffle(&mut rng);
    yes_heavy.shuffle(&mut rng);
    no_heavy.shuffle(&mut rng);

    let total_yes: usize = groups.iter().map(|g| g.yes).sum();
    let total_no: usize = groups.iter().map(|g| g.no).sum();

    let mut to_train = vec![false; groups.len()];
    let pairs_train = (train_fraction * balanced.len() as f64).round() as usize;
    let mut yes_in_train = 0usize;
    let mut no_in_train = 0usize;
    for &i in balanced.iter().take(pairs_train) {
        to_train[i] = true;
        yes_in_train += groups[i].yes;
        no_in_train += groups[i].no;
    }
    let yes_target = (train_fraction * total_yes as f64).round() as usize;
    let no_target = (train_fraction * total_no as f64).round() as usize;
    for &i in &yes_heavy {
        if yes_in_train + groups[i].yes <= yes_target {
            to_train[i] = true;
            yes_in_train += groups[i].yes;
            no_in_train += groups[i].no;
        }
    }
    for &i in &no_heavy {
        if no_in_train + groups[i].no <= no_target {
            to_train[i] = true;
            no_in_train += groups[i].no;
        }
    }

    let mut record_to_train = vec![false; examples.len()];
    for (gi, group) in groups.iter().enumerate() {
        if to_train[gi] {
            for &i in &group.indices {
                record_to_train[i] = true;
            }
        }
    }
    let mut train = Vec::new();
    let mut validation = Vec::new();
    for (i, ex) in examples.iter().enumerate() {
        if record_to_train[i] {
            train.push(ex.clone());
        } else {
            validation.push(ex.clone());
        }
    }
    Ok((train, validation))
}

// ---------------------------------------------------------------------------
// JSONL persistence

pub fn write_jsonl(examples: &[InstructionExample], path: &Path) -> Result<(), DatasetError> {
    let mut out = BufWriter::new(File::create(path)?);
    for ex in examples {
        let line = serde_json::to_string(ex).expect("serializable example");
        out.write_all(line.as_bytes())?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_jsonl(path: &Path) -> Result<Vec<InstructionExample>, DatasetError> {
    let reader = BufReader::new(File::open(path)?);
    let mut examples = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let ex: InstructionExample =
            serde_json::from_str(&line).map_err(|e| DatasetError::MalformedRecord {
                line: idx + 1,
                message: e.to_string(),
            })?;
        examples.push(ex);
    }
    Ok(examples)
}

// ---------------------------------------------------------------------------

/// The two template records used throughout the tests: a fined contract
/// extension and its opt-out counterexample.
#[cfg(any(test, feature = "fixtures"))]
pub fn template_pair() -> (InstructionExample, InstructionExample) {
    let original = InstructionExample {
        instruction: "INGENIERIA Y TELECOM JAEN, S.L. extended a contract without the consent \
                      of the data subject. Is this action compliant with GDPR?"
            .to_string(),
        answer: Answer::No,
        output: "The action taken by INGENIERIA Y TELECOM JAEN, S.L. violates GDPR Article 6, \
                 which mandates a lawful basis for any data processing. Extending a contract \
                 without explicit consent from the data subject bypasses the legal prerequisites \
                 for processing personal data."
            .to_string(),
        example_id: "ingenieria".to_string(),
        gold_articles: vec![Citation::article("GDPR", 6)],
        provenance: Provenance::CaseDerived,
        pair_id: None,
    };
    let contrastive = InstructionExample {
        instruction: "INGENIERIA Y TELECOM JAEN, S.L. extended a contract after automatically \
                      renewing the consent of the data subject via an opt-out mechanism provided \
                      in the initial agreement. Is this action compliant with GDPR?"
            .to_string(),
        answer: Answer::Yes,
        output: "The action taken by INGENIERIA Y TELECOM JAEN, S.L. is compliant with GDPR \
                 Article 6. The contract extension under the terms of an opt-out consent renewal \
                 mechanism, which was clearly stipulated in the initial agreement and to which \
                 the data subject did not object, provides a lawful basis for processing personal \
                 data."
            .to_string(),
        example_id: "ingenieria-contrast".to_string(),
        gold_articles: vec![Citation::article("GDPR", 6)],
        provenance: Provenance::Contrastive,
        pair_id: Some("ingenieria".to_string()),
    };
    (original, contrastive)
}
