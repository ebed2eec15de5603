//! Query and corpus JSONL readers, and query text assembly.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryRecord {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub page_title: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub section_title: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub context_page_description: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub context_section_description: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DocumentRecord {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub caption: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_embedding_ref: Option<String>,
}

/// Query text from `page_title`, `section_title` and
/// `context_section_description`, space-joined. `context_page_description`
/// is never used. Absent or blank fields are skipped.
pub fn build_query_text(q: &QueryRecord) -> String {
    [
        &q.page_title,
        &q.section_title,
        &q.context_section_description,
    ]
    .into_iter()
    .filter_map(|f| f.as_deref().map(str::trim))
    .filter(|f| !f.is_empty())
    .collect::<Vec<_>>()
    .join(" ")
}

/// Query texts for a whole file, plus the number of queries whose text came
/// out empty.
pub fn build_query_texts(queries: &[QueryRecord]) -> (Vec<String>, usize) {
    let texts: Vec<String> = queries.iter().map(build_query_text).collect();
    let empty = texts.iter().filter(|t| t.is_empty()).count();
    (texts, empty)
}

trait HasId {
    fn id(&self) -> &str;
    fn validate(&self) -> std::result::Result<(), String> {
        if self.id().is_empty() {
            return Err("empty id".into());
        }
        Ok(())
    }
}

impl HasId for QueryRecord {
    fn id(&self) -> &str {
        &self.id
    }
}

impl HasId for DocumentRecord {
    fn id(&self) -> &str {
        &self.id
    }
    fn validate(&self) -> std::result::Result<(), String> {
        if self.id.is_empty() {
            return Err("empty id".into());
        }
        if self.caption.is_none() && self.image_embedding_ref.is_none() {
            return Err(format!(
                "document {:?} has neither caption nor image_embedding_ref",
                self.id
            ));
        }
        Ok(())
    }
}

fn load_records<T: DeserializeOwned + HasId>(path: &Path) -> Result<Vec<T>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut records = Vec::new();
    let mut seen: HashMap<String, usize> = HashMap::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let lineno = n + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: T =
            serde_json::from_str(&line).map_err(|e| Error::parse(path, lineno, e.to_string()))?;
        record
            .validate()
            .map_err(|m| Error::parse(path, lineno, m))?;
        if let Some(first) = seen.insert(record.id().to_string(), lineno) {
            return Err(Error::parse(
                path,
                lineno,
                format!("duplicate id {:?} (first on line {first})", record.id()),
            ));
        }
        records.push(record);
    }
    Ok(records)
}

fn write_records<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

pub fn load_corpus(path: impl AsRef<Path>) -> Result<Vec<DocumentRecord>> {
    load_records(path.as_ref())
}

pub fn load_queries(path: impl AsRef<Path>) -> Result<Vec<QueryRecord>> {
    load_records(path.as_ref())
}

pub fn write_corpus(path: impl AsRef<Path>, docs: &[DocumentRecord]) -> Result<()> {
    write_records(path.as_ref(), docs)
}

pub fn write_queries(path: impl AsRef<Path>, queries: &[QueryRecord]) -> Result<()> {
    write_records(path.as_ref(), queries)
}
