//! Legal clause retriever: an inverted index over clauses with BM25 ranking.
//!
//! Scoring follows the standard probabilistic ranking function
//!
//! ```text
//! score(q, d) = sum over unique query terms t of
//!     idf(t) * tf * (k1 + 1) / (tf + k1 * (1 - b + b * len(d) / avglen))
//! idf(t) = ln(1 + (N - df + 0.5) / (df + 0.5))
//! ```
//!
//! with k1 = 1.2 and b = 0.75 by default. Terms are the lexer's tokens minus
//! the fixed stopword list; phrase and citation tokens are never filtered.
//! Ties are broken by lexicographic citation order, so ranking is fully
//! deterministic and independent of corpus insertion order.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::LegalClause;
use crate::lexer::{tokenize, PhraseLexicon, TokenKind};
use crate::stopwords::is_stopword;

pub const DEFAULT_K1: f64 = 1.2;
pub const DEFAULT_B: f64 = 0.75;

const INDEX_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum RetrieverError {
    #[error("cannot index an empty corpus")]
    EmptyCorpus,
    #[error("duplicate clause citation {0}")]
    DuplicateCitation(String),
    #[error("query is empty after normalization")]
    EmptyQuery,
    #[error("unknown citation {0}")]
    UnknownCitation(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("corrupt index file at line {line}: {message}")]
    Corrupt { line: usize, message: String },
}

/// A ranked, scored clause reference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalHit {
    pub clause_citation: String,
    pub score: f64,
    pub rank: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct DocEntry {
    len: usize,
    text: String,
}

/// Immutable BM25 index over clauses. Stores clause texts so downstream
/// consumers (prompt assembly, CLI output) need no second lookup.
#[derive(Debug, Clone, PartialEq)]
pub struct ClauseIndex {
    postings: BTreeMap<String, Vec<(String, u32)>>,
    docs: BTreeMap<String, DocEntry>,
    avg_doc_length: f64,
    lexicon: PhraseLexicon,
    pub k1: f64,
    pub b: f64,
}

impl ClauseIndex {
    pub fn n_docs(&self) -> usize {
        self.docs.len()
    }

    pub fn avg_doc_length(&self) -> f64 {
        self.avg_doc_length
    }

    pub fn clause_text(&self, citation: &str) -> Option<&str> {
        self.docs.get(citation).map(|d| d.text.as_str())
    }

    pub fn citations(&self) -> impl Iterator<Item = &str> {
        self.docs.keys().map(String::as_str)
    }
}

fn index_terms(text: &str, lexicon: &PhraseLexicon) -> Vec<String> {
    tokenize(text, lexicon)
        .into_iter()
        .filter(|t| t.kind != TokenKind::Word || !is_stopword(&t.surface))
        .map(|t| t.surface)
        .collect()
}

/// Build an immutable index over `clauses`.
pub fn build_index(
    clauses: &[LegalClause],
    lexicon: &PhraseLexicon,
) -> Result<ClauseIndex, RetrieverError> {
    if clauses.is_empty() {
        return Err(RetrieverError::EmptyCorpus);
    }
    let mut postings: BTreeMap<String, Vec<(String, u32)>> = BTreeMap::new();
    let mut docs = BTreeMap::new();
    for clause in clauses {
        let citation = clause.citation.to_string();
        // titles are searchable alongside the clause body
        let indexed_text = match &clause.title {
            Some(title) if !clause.text.contains(title.as_str()) => {
                format!("{title} {}", clause.text)
            }
            _ => clause.text.clone(),
        };
        let terms = index_terms(&indexed_text, lexicon);
        if docs
            .insert(
                citation.clone(),
                DocEntry {
                    len: terms.len(),
                    text: clause.text.clone(),
                },
            )
            .is_some()
        {
            return Err(RetrieverError::DuplicateCitation(citation));
        }
        let mut tf: BTreeMap<String, u32> = BTreeMap::new();
        for term in terms {
            *tf.entry(term).or_insert(0) += 1;
        }
        for (term, count) in tf {
            postings.entry(term).or_default().push((citation.clone(), count));
        }
    }
    // postings sorted by citation for order-independent serialization
    for list in postings.values_mut() {
        list.sort_by(|a, b| a.0.cmp(&b.0));
    }
    let avg_doc_length =
        docs.values().map(|d| d.len as f64).sum::<f64>() / docs.len() as f64;
    Ok(ClauseIndex {
        postings,
        docs,
        avg_doc_length,
        lexicon: lexicon.clone(),
        k1: DEFAULT_K1,
        b: DEFAULT_B,
    })
}

fn idf(n_docs: usize, df: usize) -> f64 {
    (1.0 + (n_docs as f64 - df as f64 + 0.5) / (df as f64 + 0.5)).ln()
}

fn term_score(index: &ClauseIndex, tf: u32, df: usize, doc_len: usize) -> f64 {
    let tf = tf as f64;
    let norm = 1.0 - index.b + index.b * doc_len as f64 / index.avg_doc_length;
    idf(index.n_docs(), df) * tf * (index.k1 + 1.0) / (tf + index.k1 * norm)
}

fn query_terms(index: &ClauseIndex, query: &str) -> Result<Vec<String>, RetrieverError> {
    let mut terms = Vec::new();
    for term in index_terms(query, &index.lexicon) {
        if !terms.contains(&term) {
            terms.push(term);
        }
    }
    if terms.is_empty() {
        return Err(RetrieverError::EmptyQuery);
    }
    Ok(terms)
}

/// Rank clauses against `query`, returning at most `k` hits with nonzero
/// scores, sorted by score descending with lexicographic citation tie-break.
pub fn search(
    index: &ClauseIndex,
    query: &str,
    k: usize,
) -> Result<Vec<RetrievalHit>, RetrieverError> {
    assert!(k >= 1, "k must be at least 1");
    let terms = query_terms(index, query)?;
    let mut scores: HashMap<&str, f64> = HashMap::new();
    for term in &terms {
        let Some(list) = index.postings.get(term) else { continue };
        let df = list.len();
        for (citation, tf) in list {
            let doc_len = index.docs[citation].len;
            *scores.entry(citation.as_str()).or_insert(0.0) +=
                term_score(index, *tf, df, doc_len);
        }
    }
    let mut ranked: Vec<(&str, f64)> = scores.into_iter().filter(|(_, s)| *s > 0.0).collect();
    ranked.sort_by(|a, b| {
        b.1.partial_cmp(&a.1)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then_with(|| a.0.cmp(b.0))
    });
    Ok(ranked
        .into_iter()
        .take(k)
        .enumerate()
        .map(|(i, (citation, score))| RetrievalHit {
            clause_citation: citation.to_string(),
            score,
            rank: i + 1,
        })
        .collect())
}

/// Per-term score contributions of `citation` for `query`. Contributions sum
/// to the clause's total search score.
pub fn explain_score(
    index: &ClauseIndex,
    query: &str,
    citation: &str,
) -> Result<Vec<(String, f64)>, RetrieverError> {
    let doc = index
        .docs
        .get(citation)
        .ok_or_else(|| RetrieverError::UnknownCitation(citation.to_string()))?;
    let terms = query_terms(index, query)?;
    let mut breakdown = Vec::new();
    for term in terms {
        let Some(list) = index.postings.get(&term) else { continue };
        let df = list.len();
        if let Some((_, tf)) = list.iter().find(|(c, _)| c == citation) {
            breakdown.push((term, term_score(index, *tf, df, doc.len)));
        }
    }
    Ok(breakdown)
}

// ---------------------------------------------------------------------------
// serialization: record-per-line, deterministic (BTreeMap iteration order)

#[derive(Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
enum IndexRecord {
    Header {
        version: u32,
        k1: f64,
        b: f64,
        lexicon: Vec<String>,
    },
    Doc {
        citation: String,
        len: usize,
        text: String,
    },
    Term {
        term: String,
        postings: Vec<(String, u32)>,
    },
}

impl ClauseIndex {
    pub fn save(&self, path: &Path) -> Result<(), RetrieverError> {
        let mut out = BufWriter::new(File::create(path)?);
        let mut write = |record: &IndexRecord| -> Result<(), RetrieverError> {
            let line = serde_json::to_string(record).expect("serializable index record");
            out.write_all(line.as_bytes())?;
            out.write_all(b"\n")?;
            Ok(())
        };
        write(&IndexRecord::Header {
            version: INDEX_FORMAT_VERSION,
            k1: self.k1,
            b: self.b,
            lexicon: self.lexicon.entries().map(str::to_string).collect(),
        })?;
        for (citation, doc) in &self.docs {
            write(&IndexRecord::Doc {
                citation: citation.clone(),
                len: doc.len,
                text: doc.text.clone(),
            })?;
        }
        for (term, postings) in &self.postings {
            write(&IndexRecord::Term {
                term: term.clone(),
                postings: postings.clone(),
            })?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<ClauseIndex, RetrieverError> {
        let reader = BufReader::new(File::open(path)?);
        let mut header: Option<(f64, f64, PhraseLexicon)> = None;
        let mut docs = BTreeMap::new();
        let mut postings = BTreeMap::new();
        for (idx, line) in reader.lines().enumerate() {
            let line = line?;
            let record: IndexRecord =
                serde_json::from_str(&line).map_err(|e| RetrieverError::Corrupt {
                    line: idx + 1,
                    message: e.to_string(),
                })?;
            match record {
                IndexRecord::Header { version, k1, b, lexicon } => {
                    if version != INDEX_FORMAT_VERSION {
                        return Err(RetrieverError::Corrupt {
                            line: idx + 1,
                            message: format!("unsupported index version {version}"),
                        });
                    }
                    let refs: Vec<&str> = lexicon.iter().map(String::as_str).collect();
                    header = Some((k1, b, PhraseLexicon::build(&refs)));
                }
                IndexRecord::Doc { citation, len, text } => {
                    docs.insert(citation, DocEntry { len, text });
                }
                IndexRecord::Term { term, postings: list } => {
                    postings.insert(term, list);
                }
            }
        }
        let (k1, b, lexicon) = header.ok_or(RetrieverError::Corrupt {
            line: 1,
            message: "missing header record".to_string(),
        })?;
        if docs.is_empty() {
            return Err(RetrieverError::EmptyCorpus);
        }
        let avg_doc_length =
            docs.values().map(|d| d.len as f64).sum::<f64>() / docs.len() as f64;
        Ok(ClauseIndex {
            postings,
            docs,
            avg_doc_length,
            lexicon,
            k1,
            b,
        })
    }
}
