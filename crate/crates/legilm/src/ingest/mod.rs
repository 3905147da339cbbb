//! Corpus ingestion: normalize raw source documents and parse them into a
//! uniform data model of regulations, clauses, and enforcement cases.

mod enforcement;
mod normalize;
mod regulation;
pub mod store;

pub use enforcement::{parse_enforcement_records, EnforcementParse, RejectedRow};
pub use normalize::normalize_text;
pub use regulation::parse_regulation;
pub use store::{read_cases, read_clauses, write_cases, write_clauses};

use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use thiserror::Error;

use crate::citation::Citation;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("document {doc_id} has kind {actual:?}, expected {expected:?}")]
    WrongKind {
        doc_id: String,
        expected: DocumentKind,
        actual: DocumentKind,
    },
    #[error("structure error at line {line}: {message}")]
    Structure { line: usize, message: String },
    #[error("duplicate citation {0}")]
    DuplicateCitation(Citation),
    #[error("no parseable records in input")]
    EmptyInput,
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed record at line {line}: {message}")]
    MalformedRecord { line: usize, message: String },
}

/// The six source categories of the corpus.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DocumentKind {
    Regulation,
    Guideline,
    CaseLaw,
    Contract,
    PrivacyPolicy,
    EnforcementRecord,
}

/// A raw ingested document before structural parsing. Guidelines, case law,
/// contracts, and privacy policies stay at this flat granularity; regulations
/// and enforcement records are parsed further.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SourceDocument {
    pub doc_id: String,
    pub kind: DocumentKind,
    pub raw_text: String,
    #[serde(default)]
    pub metadata: HashMap<String, String>,
}

impl SourceDocument {
    pub fn new(doc_id: &str, kind: DocumentKind, raw_text: &str) -> Self {
        SourceDocument {
            doc_id: doc_id.to_string(),
            kind,
            raw_text: raw_text.to_string(),
            metadata: HashMap::new(),
        }
    }
}

/// A regulation parsed into addressable clauses, in document order.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Regulation {
    pub regulation_id: String,
    pub title: String,
    pub jurisdiction: String,
    pub clauses: Vec<LegalClause>,
}

impl Regulation {
    /// Article-level clauses only.
    pub fn articles(&self) -> impl Iterator<Item = &LegalClause> {
        self.clauses
            .iter()
            .filter(|c| c.citation.paragraph.is_none())
    }
}

/// One addressable unit of a regulation with normalized text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LegalClause {
    pub citation: Citation,
    pub regulation_id: String,
    pub article_number: u32,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub paragraph: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub point: Option<char>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub title: Option<String>,
    pub text: String,
}

/// One regulator fine record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnforcementCase {
    pub case_id: String,
    pub country: String,
    pub authority: String,
    /// ISO-8601 calendar date.
    pub date: String,
    pub entity: String,
    pub articles_violated: Vec<Citation>,
    pub fine_amount_eur: f64,
    pub summary: String,
}

impl EnforcementCase {
    /// Citations that do not resolve to any clause of `regulation`.
    /// Article-level citations resolve when the article exists; deeper
    /// citations must match a clause exactly or fall back to their article.
    pub fn unresolved_citations(&self, regulation: &Regulation) -> Vec<Citation> {
        self.articles_violated
            .iter()
            .filter(|c| {
                c.regulation_id == regulation.regulation_id
                    && !regulation
                        .clauses
                        .iter()
                        .any(|cl| cl.citation == **c || cl.citation == c.to_article_level())
            })
            .cloned()
            .collect()
    }
}
