//! Co-activation statistics and term dumps for inspecting sparse encoders.
//!
//! Co-activation density is the mean, over terms active in at least one
//! vector, of `df_i / N`. It is `1.0` when every vector activates the same
//! terms and `1/N` when active term sets are pairwise disjoint.

use std::collections::HashSet;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::sparse::{by_weight_desc, SparseVector};
use crate::vocab::{TermId, Vocabulary};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoActivationReport {
    pub vocab_size: usize,
    pub doc_count: usize,
    pub document_frequency: Vec<usize>,
    pub active_terms: usize,
    pub mean_active_dims: f64,
    pub min_active_dims: usize,
    pub max_active_dims: usize,
    pub density: f64,
    pub expected_postings_per_active_term: f64,
}

pub fn coactivation_report(vectors: &[SparseVector], vocab_size: usize) -> CoActivationReport {
    let mut df = vec![0usize; vocab_size];
    for v in vectors {
        for t in v.term_ids() {
            df[t as usize] += 1;
        }
    }
    let n = vectors.len();
    let active: Vec<usize> = df.iter().copied().filter(|&c| c > 0).collect();
    let total: usize = active.iter().sum();
    let (density, expected) = if active.is_empty() {
        (0.0, 0.0)
    } else {
        let a = active.len() as f64;
        (
            active.iter().map(|&c| c as f64 / n as f64).sum::<f64>() / a,
            total as f64 / a,
        )
    };
    let sizes = vectors.iter().map(SparseVector::nnz);
    CoActivationReport {
        vocab_size,
        doc_count: n,
        active_terms: active.len(),
        mean_active_dims: if n == 0 { 0.0 } else { total as f64 / n as f64 },
        min_active_dims: sizes.clone().min().unwrap_or(0),
        max_active_dims: sizes.max().unwrap_or(0),
        density,
        expected_postings_per_active_term: expected,
        document_frequency: df,
    }
}

/// Highest-weighted terms, ties broken by ascending term id.
pub fn top_terms(vec: &SparseVector, vocab: &Vocabulary, k: usize) -> Vec<(String, f64)> {
    let mut entries: Vec<(TermId, f64)> = vec.entries().to_vec();
    entries.sort_by(by_weight_desc);
    entries
        .into_iter()
        .take(k)
        .map(|(t, w)| {
            let term = vocab
                .term(t)
                .map_or_else(|| format!("#{t}"), str::to_string);
            (term, w)
        })
        .collect()
}

/// Share of total weight placed on stoplisted terms.
pub fn stopword_mass(vec: &SparseVector, vocab: &Vocabulary, stoplist: &HashSet<String>) -> f64 {
    let total = vec.total_weight();
    if total == 0.0 {
        return 0.0;
    }
    let stop: f64 = vec
        .iter()
        .filter(|&(t, _)| vocab.term(t).is_some_and(|s| stoplist.contains(s)))
        .map(|(_, w)| w)
        .sum();
    stop / total
}

/// TSV rows `doc_id rank term weight` for each vector's top terms.
pub fn top_terms_tsv(vectors: &[(String, SparseVector)], vocab: &Vocabulary, k: usize) -> String {
    let mut out = String::from("doc_id\trank\tterm\tweight\n");
    for (id, v) in vectors {
        for (rank, (term, w)) in top_terms(v, vocab, k).into_iter().enumerate() {
            writeln!(out, "{id}\t{}\t{term}\t{w:.6}", rank + 1).unwrap();
        }
    }
    out
}
