//! Parser for regulator fine feeds (CSV with a header row).
//!
//! Expected columns: `country, authority, date, entity, articles, fine,
//! summary`, with an optional leading `case_id` column. The `articles` field
//! holds one or more citations separated by `;`. Malformed rows are collected
//! into a rejects list with their line numbers rather than dropped.

use super::{normalize_text, DocumentKind, EnforcementCase, IngestError, SourceDocument};
use crate::citation::Citation;

#[derive(Debug, Clone, PartialEq)]
pub struct RejectedRow {
    pub line: usize,
    pub reason: String,
}

#[derive(Debug, Clone)]
pub struct EnforcementParse {
    pub cases: Vec<EnforcementCase>,
    pub rejects: Vec<RejectedRow>,
}

pub fn parse_enforcement_records(doc: &SourceDocument) -> Result<EnforcementParse, IngestError> {
    if doc.kind != DocumentKind::EnforcementRecord {
        return Err(IngestError::WrongKind {
            doc_id: doc.doc_id.clone(),
            expected: DocumentKind::EnforcementRecord,
            actual: doc.kind,
        });
    }

    let default_reg = doc
        .metadata
        .get("regulation_id")
        .map(String::as_str)
        .unwrap_or("GDPR");

    let mut reader = csv::ReaderBuilder::new()
        .flexible(true)
        .from_reader(doc.raw_text.as_bytes());
    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| IngestError::MalformedRecord {
            line: 1,
            message: e.to_string(),
        })?
        .iter()
        .map(|h| h.trim().to_lowercase())
        .collect();

    let col = |name: &str| headers.iter().position(|h| h == name);
    let required = ["country", "authority", "date", "entity", "articles", "fine", "summary"];
    for name in required {
        if col(name).is_none() {
            return Err(IngestError::MalformedRecord {
                line: 1,
                message: format!("missing column {name:?}"),
            });
        }
    }
    let id_col = col("case_id");

    let mut cases = Vec::new();
    let mut rejects = Vec::new();
    for (idx, record) in reader.records().enumerate() {
        let line = idx + 2; // header is line 1
        let record = match record {
            Ok(r) => r,
            Err(e) => {
                rejects.push(RejectedRow {
                    line,
                    reason: e.to_string(),
                });
                continue;
            }
        };
        let field = |name: &str| {
            col(name)
                .and_then(|i| record.get(i))
                .unwrap_or("")
                .trim()
                .to_string()
        };
        match build_case(line, id_col.map(|_| field("case_id")), &field, default_reg) {
            Ok(case) => cases.push(case),
            Err(reason) => rejects.push(RejectedRow { line, reason }),
        }
    }

    if cases.is_empty() {
        return Err(IngestError::EmptyInput);
    }
    Ok(EnforcementParse { cases, rejects })
}

fn build_case(
    line: usize,
    case_id: Option<String>,
    field: &dyn Fn(&str) -> String,
    default_reg: &str,
) -> Result<EnforcementCase, String> {
    let entity = field("entity");
    if entity.is_empty() {
        return Err("empty entity".to_string());
    }
    let date = field("date");
    if !is_iso_date(&date) {
        return Err(format!("bad date {date:?}, expected YYYY-MM-DD"));
    }
    let fine_raw = field("fine");
    let fine_amount_eur: f64 = fine_raw
        .replace([',', ' '], "")
        .parse()
        .map_err(|_| format!("unparseable fine {fine_raw:?}"))?;
    if fine_amount_eur < 0.0 || !fine_amount_eur.is_finite() {
        return Err(format!("negative or non-finite fine {fine_raw:?}"));
    }
    let articles_raw = field("articles");
    let mut articles_violated = Vec::new();
    for part in articles_raw.split(';').map(str::trim).filter(|p| !p.is_empty()) {
        let citation = Citation::parse(part, default_reg)
            .map_err(|e| format!("bad citation {part:?}: {e}"))?;
        articles_violated.push(citation);
    }
    if articles_violated.is_empty() {
        return Err("no violated articles".to_string());
    }
    let summary = normalize_text(&field("summary"));

    Ok(EnforcementCase {
        case_id: case_id
            .filter(|id| !id.is_empty())
            .unwrap_or_else(|| format!("case-{:04}", line - 1)),
        country: field("country"),
        authority: field("authority"),
        date,
        entity: normalize_text(&entity),
        articles_violated,
        fine_amount_eur,
        summary,
    })
}

fn is_iso_date(s: &str) -> bool {
    chrono::NaiveDate::parse_from_str(s, "%Y-%m-%d").is_ok()
}
