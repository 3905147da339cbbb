//! Structure-aware parser for regulation texts.
//!
//! Grammar (line oriented, applied to the raw document):
//!
//! - `Article N` starts a new article; an optional title follows the number
//!   on the same line, separated by whitespace or `-`/`–`/`:`.
//! - `N.` at the start of a line opens paragraph N of the current article.
//! - `(a)` or `a.` at the start of a line opens point (a). Points appearing
//!   before any explicit paragraph attach to paragraph 1 (the shape of
//!   GDPR Art. 32(1)(a)–(d)).
//! - Any other line continues the text of the innermost open unit.
//!
//! Every article yields an article-level clause whose text is the title plus
//! any prose before the first paragraph or point. Paragraphs and points each
//! yield their own clause; a paragraph that consists only of points yields no
//! clause of its own. Concatenating clause texts in order and re-normalizing
//! reproduces the normalized document body minus the structural markers.

use std::collections::HashSet;
use std::sync::OnceLock;

use regex::Regex;

use super::{normalize_text, DocumentKind, IngestError, LegalClause, Regulation, SourceDocument};
use crate::citation::Citation;

struct ArticleHeading {
    number: u32,
    title: Option<String>,
}

fn match_article(line: &str) -> Option<ArticleHeading> {
    static RE: OnceLock<Regex> = OnceLock::new();
    let re = RE
        .get_or_init(|| Regex::new(r"^Article\s+(\d+)\s*(?:[-–:]\s*)?(.*)$").unwrap());
    let caps = re.captures(line.trim())?;
    let number: u32 = caps[1].parse().ok()?;
    let rest = caps[2].trim();
    Some(ArticleHeading {
        number,
        title: (!rest.is_empty()).then(|| rest.to_string()),
    })
}

fn match_paragraph(line: &str) -> Option<(u32, String)> {
    static RE: OnceLock<Regex> = OnceLock::new();
    let re = RE.get_or_init(|| Regex::new(r"^(\d+)\.\s+(.*)$").unwrap());
    let caps = re.captures(line.trim())?;
    Some((caps[1].parse().ok()?, caps[2].to_string()))
}

fn match_point(line: &str) -> Option<(char, String)> {
    static RE: OnceLock<Regex> = OnceLock::new();
    let re = RE.get_or_init(|| Regex::new(r"^(?:\(([a-z])\)|([a-z])\.)\s+(.*)$").unwrap());
    let caps = re.captures(line.trim())?;
    let letter = caps
        .get(1)
        .or_else(|| caps.get(2))?
        .as_str()
        .chars()
        .next()?;
    Some((letter, caps[3].to_string()))
}

/// Parse a regulation document into its clause list.
pub fn parse_regulation(
    doc: &SourceDocument,
    regulation_id: &str,
) -> Result<Regulation, IngestError> {
    if doc.kind != DocumentKind::Regulation {
        return Err(IngestError::WrongKind {
            doc_id: doc.doc_id.clone(),
            expected: DocumentKind::Regulation,
            actual: doc.kind,
        });
    }

    let mut builder = ClauseBuilder::new(regulation_id);
    for (idx, raw_line) in doc.raw_text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw_line.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(heading) = match_article(line) {
            builder.open_article(heading)?;
        } else if let Some((number, text)) = match_paragraph(line) {
            builder.open_paragraph(line_no, number, text)?;
        } else if let Some((letter, text)) = match_point(line) {
            builder.open_point(line_no, letter, text)?;
        } else {
            builder.push_text(line_no, line)?;
        }
    }
    let clauses = builder.finish()?;

    Ok(Regulation {
        regulation_id: regulation_id.to_string(),
        title: doc
            .metadata
            .get("title")
            .cloned()
            .unwrap_or_else(|| regulation_id.to_string()),
        jurisdiction: doc.metadata.get("jurisdiction").cloned().unwrap_or_default(),
        clauses,
    })
}

struct ClauseBuilder {
    regulation_id: String,
    clauses: Vec<LegalClause>,
    seen: HashSet<Citation>,
    current: Option<OpenClause>,
    article: Option<u32>,
    paragraph: Option<u32>,
}

struct OpenClause {
    citation: Citation,
    title: Option<String>,
    text: String,
}

impl ClauseBuilder {
    fn new(regulation_id: &str) -> Self {
        ClauseBuilder {
            regulation_id: regulation_id.to_string(),
            clauses: Vec::new(),
            seen: HashSet::new(),
            current: None,
            article: None,
            paragraph: None,
        }
    }

    fn open_article(&mut self, heading: ArticleHeading) -> Result<(), IngestError> {
        self.flush()?;
        self.article = Some(heading.number);
        self.paragraph = None;
        let text = heading.title.clone().unwrap_or_default();
        self.current = Some(OpenClause {
            citation: Citation::article(&self.regulation_id, heading.number),
            title: heading.title,
            text,
        });
        Ok(())
    }

    fn open_paragraph(&mut self, line: usize, number: u32, text: String) -> Result<(), IngestError> {
        let article = self.article.ok_or_else(|| IngestError::Structure {
            line,
            message: format!("paragraph {number}. before any article heading"),
        })?;
        self.flush()?;
        self.paragraph = Some(number);
        self.current = Some(OpenClause {
            citation: Citation::paragraph(&self.regulation_id, article, number),
            title: None,
            text,
        });
        Ok(())
    }

    fn open_point(&mut self, line: usize, letter: char, text: String) -> Result<(), IngestError> {
        let article = self.article.ok_or_else(|| IngestError::Structure {
            line,
            message: format!("point ({letter}) before any article heading"),
        })?;
        self.flush()?;
        // orphan points attach to paragraph 1
        let paragraph = *self.paragraph.get_or_insert(1);
        self.current = Some(OpenClause {
            citation: Citation::point(&self.regulation_id, article, paragraph, letter),
            title: None,
            text,
        });
        Ok(())
    }

    fn push_text(&mut self, line: usize, text: &str) -> Result<(), IngestError> {
        let current = self.current.as_mut().ok_or_else(|| IngestError::Structure {
            line,
            message: "body text before any article heading".to_string(),
        })?;
        if !current.text.is_empty() {
            current.text.push(' ');
        }
        current.text.push_str(text);
        Ok(())
    }

    fn flush(&mut self) -> Result<(), IngestError> {
        let Some(open) = self.current.take() else {
            return Ok(());
        };
        let text = normalize_text(&open.text);
        // paragraphs that carry no prose of their own (only points) emit
        // no clause; their points still cite the paragraph number
        if text.is_empty() {
            return Ok(());
        }
        if !self.seen.insert(open.citation.clone()) {
            return Err(IngestError::DuplicateCitation(open.citation));
        }
        self.clauses.push(LegalClause {
            regulation_id: open.citation.regulation_id.clone(),
            article_number: open.citation.article,
            paragraph: open.citation.paragraph,
            point: open.citation.point,
            title: open.title.map(|t| normalize_text(&t)),
            text,
            citation: open.citation,
        });
        Ok(())
    }

    fn finish(mut self) -> Result<Vec<LegalClause>, IngestError> {
        self.flush()?;
        Ok(self.clauses)
    }
}
