//! Sparse bag-of-terms vectors.
//!
//! A [`SparseVector`] stores `(term_id, weight)` pairs with strictly
//! increasing term ids and strictly positive finite weights. Zero weights are
//! never stored, so the entry count is the number of active dimensions.

use std::cmp::Ordering;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vocab::TermId;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<(TermId, f64)>", into = "Vec<(TermId, f64)>")]
pub struct SparseVector {
    entries: Vec<(TermId, f64)>,
}

impl SparseVector {
    pub fn empty() -> Self {
        Self::default()
    }

    /// Builds a vector from entries that already satisfy the invariants.
    pub fn from_sorted(entries: Vec<(TermId, f64)>) -> Result<Self> {
        for (i, &(term, weight)) in entries.iter().enumerate() {
            if !(weight.is_finite() && weight > 0.0) {
                return Err(Error::Data(format!(
                    "weight {weight} for term {term} must be finite and > 0"
                )));
            }
            if i > 0 && entries[i - 1].0 >= term {
                return Err(Error::Data(format!(
                    "term ids must be strictly increasing (saw {} then {term})",
                    entries[i - 1].0
                )));
            }
        }
        Ok(Self { entries })
    }

    /// Sorts, sums duplicate ids, and drops non-positive results.
    pub fn from_unsorted(mut entries: Vec<(TermId, f64)>) -> Self {
        entries.sort_by_key(|&(t, _)| t);
        let mut out: Vec<(TermId, f64)> = Vec::with_capacity(entries.len());
        for (term, weight) in entries {
            match out.last_mut() {
                Some(last) if last.0 == term => last.1 += weight,
                _ => out.push((term, weight)),
            }
        }
        out.retain(|&(_, w)| w > 0.0);
        Self { entries: out }
    }

    /// Keeps the strictly positive coordinates of a dense weight vector.
    pub fn from_dense(weights: &[f64]) -> Self {
        Self {
            entries: weights
                .iter()
                .enumerate()
                .filter(|(_, &w)| w > 0.0)
                .map(|(i, &w)| (i as TermId, w))
                .collect(),
        }
    }

    pub fn entries(&self) -> &[(TermId, f64)] {
        &self.entries
    }

    pub fn iter(&self) -> impl Iterator<Item = (TermId, f64)> + '_ {
        self.entries.iter().copied()
    }

    pub fn term_ids(&self) -> impl Iterator<Item = TermId> + '_ {
        self.entries.iter().map(|&(t, _)| t)
    }

    pub fn nnz(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, term: TermId) -> Option<f64> {
        self.entries
            .binary_search_by_key(&term, |&(t, _)| t)
            .ok()
            .map(|i| self.entries[i].1)
    }

    pub fn total_weight(&self) -> f64 {
        self.entries.iter().map(|&(_, w)| w).sum()
    }

    /// Dense copy of length `vocab_size`.
    pub fn to_dense(&self, vocab_size: usize) -> Vec<f64> {
        let mut dense = vec![0.0; vocab_size];
        for &(t, w) in &self.entries {
            dense[t as usize] = w;
        }
        dense
    }

    pub fn check_vocab(&self, vocab_size: usize) -> Result<()> {
        match self.entries.last() {
            Some(&(t, _)) if t as usize >= vocab_size => Err(Error::Data(format!(
                "term id {t} out of range for vocabulary of size {vocab_size}"
            ))),
            _ => Ok(()),
        }
    }

    /// Keeps the `k` heaviest entries, breaking ties toward smaller term ids.
    pub fn top_k(&self, k: usize) -> Self {
        if self.entries.len() <= k {
            return self.clone();
        }
        let mut ranked = self.entries.clone();
        ranked.sort_by(by_weight_desc);
        ranked.truncate(k);
        ranked.sort_by_key(|&(t, _)| t);
        Self { entries: ranked }
    }

    /// Elementwise sum.
    pub fn add(&self, other: &Self) -> Self {
        self.merge(other, |a, b| a + b)
    }

    /// Elementwise maximum.
    pub fn max(&self, other: &Self) -> Self {
        self.merge(other, f64::max)
    }

    fn merge(&self, other: &Self, both: impl Fn(f64, f64) -> f64) -> Self {
        let (a, b) = (&self.entries, &other.entries);
        let mut out = Vec::with_capacity(a.len() + b.len());
        let (mut i, mut j) = (0, 0);
        while i < a.len() && j < b.len() {
            match a[i].0.cmp(&b[j].0) {
                Ordering::Less => {
                    out.push(a[i]);
                    i += 1;
                }
                Ordering::Greater => {
                    out.push(b[j]);
                    j += 1;
                }
                Ordering::Equal => {
                    out.push((a[i].0, both(a[i].1, b[j].1)));
                    i += 1;
                    j += 1;
                }
            }
        }
        out.extend_from_slice(&a[i..]);
        out.extend_from_slice(&b[j..]);
        Self { entries: out }
    }
}

/// Orders `(term, weight)` pairs by weight descending, then term ascending.
pub(crate) fn by_weight_desc(a: &(TermId, f64), b: &(TermId, f64)) -> Ordering {
    b.1.total_cmp(&a.1).then(a.0.cmp(&b.0))
}

impl TryFrom<Vec<(TermId, f64)>> for SparseVector {
    type Error = Error;

    fn try_from(entries: Vec<(TermId, f64)>) -> Result<Self> {
        Self::from_sorted(entries)
    }
}

impl From<SparseVector> for Vec<(TermId, f64)> {
    fn from(v: SparseVector) -> Self {
        v.entries
    }
}

/// Sparse dot product, merging the two sorted supports.
pub fn dot(a: &SparseVector, b: &SparseVector) -> f64 {
    let (a, b) = (&a.entries, &b.entries);
    let (mut i, mut j) = (0, 0);
    let mut sum = 0.0;
    while i < a.len() && j < b.len() {
        match a[i].0.cmp(&b[j].0) {
            Ordering::Less => i += 1,
            Ordering::Greater => j += 1,
            Ordering::Equal => {
                sum += a[i].1 * b[j].1;
                i += 1;
                j += 1;
            }
        }
    }
    sum
}

/// One line of a sparse-vector JSONL file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparseRecord {
    pub id: String,
    pub vector: SparseVector,
}

pub fn write_jsonl(path: impl AsRef<Path>, records: &[SparseRecord]) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    for record in records {
        serde_json::to_writer(&mut out, record)?;
        out.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

pub fn read_jsonl(path: impl AsRef<Path>) -> Result<Vec<SparseRecord>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut records = Vec::new();
    let mut seen = std::collections::HashMap::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: SparseRecord = serde_json::from_str(&line)
            .map_err(|e| Error::parse(path, lineno + 1, e.to_string()))?;
        if let Some(first) = seen.insert(record.id.clone(), lineno + 1) {
            return Err(Error::parse(
                path,
                lineno + 1,
                format!("duplicate id {:?} (first on line {first})", record.id),
            ));
        }
        records.push(record);
    }
    Ok(records)
}
