//! Record-per-line corpus store: one file of clauses, one of cases.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{de::DeserializeOwned, Serialize};

use super::{EnforcementCase, IngestError, LegalClause};

fn write_jsonl<T: Serialize>(records: &[T], path: &Path) -> Result<(), IngestError> {
    let mut out = BufWriter::new(File::create(path)?);
    for record in records {
        let line = serde_json::to_string(record).expect("serializable record");
        out.write_all(line.as_bytes())?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, IngestError> {
    let reader = BufReader::new(File::open(path)?);
    let mut records = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record =
            serde_json::from_str(&line).map_err(|e| IngestError::MalformedRecord {
                line: idx + 1,
                message: e.to_string(),
            })?;
        records.push(record);
    }
    Ok(records)
}

pub fn write_clauses(clauses: &[LegalClause], path: &Path) -> Result<(), IngestError> {
    write_jsonl(clauses, path)
}

pub fn read_clauses(path: &Path) -> Result<Vec<LegalClause>, IngestError> {
    read_jsonl(path)
}

pub fn write_cases(cases: &[EnforcementCase], path: &Path) -> Result<(), IngestError> {
    write_jsonl(cases, path)
}

pub fn read_cases(path: &Path) -> Result<Vec<EnforcementCase>, IngestError> {
    read_jsonl(path)
}
