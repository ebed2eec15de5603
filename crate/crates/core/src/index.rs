//! Impact-scored inverted index with exact document-at-a-time top-k search.
//!
//! Postings keep full `f64` impacts. Hits are ordered by score descending,
//! then external document id ascending; documents sharing no term with the
//! query are never returned.
//!
//! On disk an index is a directory holding `manifest.json`
//! (`{"doc_count", "vocab_size"}`), `doc_table.tsv` (`ordinal<TAB>doc_id`)
//! and `postings.bin`: for every term id in order, a little-endian `u32`
//! posting count followed by that many `(u32 ordinal, f64 impact)` pairs.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap};
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sparse::{dot, SparseVector};
use crate::vocab::TermId;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Posting {
    pub doc_ordinal: u32,
    pub impact: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InvertedIndex {
    postings: Vec<Vec<Posting>>,
    doc_table: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hit {
    pub doc_id: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedList {
    pub query_id: String,
    pub hits: Vec<Hit>,
}

/// Canonical hit order: score descending, then doc id ascending.
pub fn hit_order(a: &Hit, b: &Hit) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then_with(|| a.doc_id.cmp(&b.doc_id))
}

/// Heap entry whose `Ord` puts the worst-ranked hit on top of a max-heap.
struct Candidate<'a> {
    score: f64,
    doc_id: &'a str,
}

impl PartialEq for Candidate<'_> {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Candidate<'_> {}

impl PartialOrd for Candidate<'_> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Candidate<'_> {
    fn cmp(&self, other: &Self) -> Ordering {
        // "Greater" means ranked lower.
        other
            .score
            .total_cmp(&self.score)
            .then_with(|| self.doc_id.cmp(other.doc_id))
    }
}

/// Bounded selection of the best `k` hits.
struct TopK<'a> {
    k: usize,
    heap: BinaryHeap<Candidate<'a>>,
}

impl<'a> TopK<'a> {
    fn new(k: usize) -> Self {
        Self {
            k,
            heap: BinaryHeap::with_capacity(k + 1),
        }
    }

    fn offer(&mut self, score: f64, doc_id: &'a str) {
        let cand = Candidate { score, doc_id };
        if self.heap.len() < self.k {
            self.heap.push(cand);
        } else if let Some(worst) = self.heap.peek() {
            if cand < *worst {
                self.heap.pop();
                self.heap.push(cand);
            }
        }
    }

    fn into_hits(self) -> Vec<Hit> {
        let mut hits: Vec<Hit> = self
            .heap
            .into_iter()
            .map(|c| Hit {
                doc_id: c.doc_id.to_string(),
                score: c.score,
            })
            .collect();
        hits.sort_by(hit_order);
        hits
    }
}

impl InvertedIndex {
    /// Ordinals follow input order. Terms beyond `vocab_size` are rejected.
    pub fn build(docs: &[(String, SparseVector)], vocab_size: usize) -> Result<Self> {
        let mut postings = vec![Vec::new(); vocab_size];
        let mut doc_table = Vec::with_capacity(docs.len());
        let mut seen = HashMap::with_capacity(docs.len());
        for (ordinal, (id, vector)) in docs.iter().enumerate() {
            if seen.insert(id.as_str(), ordinal).is_some() {
                return Err(Error::Data(format!("duplicate document id {id:?}")));
            }
            vector
                .check_vocab(vocab_size)
                .map_err(|e| Error::Data(format!("document {id:?}: {e}")))?;
            for (term, impact) in vector.iter() {
                postings[term as usize].push(Posting {
                    doc_ordinal: ordinal as u32,
                    impact,
                });
            }
            doc_table.push(id.clone());
        }
        Ok(Self {
            postings,
            doc_table,
        })
    }

    pub fn doc_count(&self) -> usize {
        self.doc_table.len()
    }

    pub fn vocab_size(&self) -> usize {
        self.postings.len()
    }

    pub fn doc_id(&self, ordinal: u32) -> &str {
        &self.doc_table[ordinal as usize]
    }

    pub fn postings(&self, term: TermId) -> &[Posting] {
        self.postings
            .get(term as usize)
            .map_or(&[][..], Vec::as_slice)
    }

    pub fn total_postings(&self) -> usize {
        self.postings.iter().map(Vec::len).sum()
    }

    /// Rebuilds every indexed vector from the postings.
    pub fn reconstruct(&self) -> Vec<(String, SparseVector)> {
        let mut entries: Vec<Vec<(TermId, f64)>> = vec![Vec::new(); self.doc_count()];
        for (term, list) in self.postings.iter().enumerate() {
            for p in list {
                entries[p.doc_ordinal as usize].push((term as TermId, p.impact));
            }
        }
        self.doc_table
            .iter()
            .cloned()
            .zip(entries.into_iter().map(|e| {
                SparseVector::from_sorted(e).expect("postings hold sorted positive impacts")
            }))
            .collect()
    }

    /// Exact top-`k` by sparse dot product, traversing the query's posting
    /// lists document-at-a-time.
    pub fn search(&self, query_id: &str, query: &SparseVector, k: usize) -> RankedList {
        let mut top = TopK::new(k);
        // (query weight, posting list, cursor), in ascending term order so the
        // per-document sum accumulates in the same order as `dot`.
        let mut cursors: Vec<(f64, &[Posting], usize)> = query
            .iter()
            .map(|(t, w)| (w, self.postings(t), 0))
            .filter(|(_, list, _)| !list.is_empty())
            .collect();
        if k > 0 {
            loop {
                let next = cursors
                    .iter()
                    .filter(|(_, list, pos)| *pos < list.len())
                    .map(|(_, list, pos)| list[*pos].doc_ordinal)
                    .min();
                let Some(doc) = next else { break };
                let mut score = 0.0;
                for (w, list, pos) in cursors.iter_mut() {
                    if *pos < list.len() && list[*pos].doc_ordinal == doc {
                        score += *w * list[*pos].impact;
                        *pos += 1;
                    }
                }
                top.offer(score, self.doc_id(doc));
            }
        }
        RankedList {
            query_id: query_id.to_string(),
            hits: top.into_hits(),
        }
    }

    pub fn stats(&self) -> IndexStats {
        let lengths: Vec<usize> = self
            .postings
            .iter()
            .map(Vec::len)
            .filter(|&l| l > 0)
            .collect();
        let total: usize = lengths.iter().sum();
        IndexStats {
            doc_count: self.doc_count(),
            vocab_size: self.vocab_size(),
            terms_used: lengths.len(),
            total_postings: total,
            mean_posting_length: if lengths.is_empty() {
                0.0
            } else {
                total as f64 / lengths.len() as f64
            },
            max_posting_length: lengths.iter().copied().max().unwrap_or(0),
        }
    }

    /// Posting-list length of each query term, in term order.
    pub fn query_postings(&self, query: &SparseVector) -> Vec<(TermId, usize)> {
        query
            .term_ids()
            .map(|t| (t, self.postings(t).len()))
            .collect()
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;

        let manifest = Manifest {
            doc_count: self.doc_count(),
            vocab_size: self.vocab_size(),
        };
        let path = dir.join(MANIFEST);
        fs::write(&path, serde_json::to_string(&manifest)? + "\n")
            .map_err(|e| Error::io(&path, e))?;

        let path = dir.join(DOC_TABLE);
        let mut table = String::new();
        for (i, id) in self.doc_table.iter().enumerate() {
            table.push_str(&format!("{i}\t{id}\n"));
        }
        fs::write(&path, table).map_err(|e| Error::io(&path, e))?;

        let path = dir.join(POSTINGS);
        let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
        let mut out = BufWriter::new(file);
        let io = |e| Error::io(dir.join(POSTINGS), e);
        for list in &self.postings {
            out.write_u32::<LittleEndian>(list.len() as u32)
                .map_err(io)?;
            for p in list {
                out.write_u32::<LittleEndian>(p.doc_ordinal).map_err(io)?;
                out.write_f64::<LittleEndian>(p.impact).map_err(io)?;
            }
        }
        out.flush().map_err(io)
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let path = dir.join(MANIFEST);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let manifest: Manifest = serde_json::from_str(&text)
            .map_err(|e| Error::parse(&path, e.line(), e.to_string()))?;

        let path = dir.join(DOC_TABLE);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let mut doc_table = Vec::with_capacity(manifest.doc_count);
        for (n, line) in text.lines().enumerate() {
            let (ordinal, id) = line
                .split_once('\t')
                .ok_or_else(|| Error::parse(&path, n + 1, "expected ordinal<TAB>doc_id"))?;
            if ordinal.parse::<usize>().ok() != Some(n) {
                return Err(Error::parse(&path, n + 1, format!("expected ordinal {n}")));
            }
            doc_table.push(id.to_string());
        }
        if doc_table.len() != manifest.doc_count {
            return Err(Error::Data(format!(
                "doc table has {} rows, manifest says {}",
                doc_table.len(),
                manifest.doc_count
            )));
        }

        let path = dir.join(POSTINGS);
        let file = File::open(&path).map_err(|e| Error::io(&path, e))?;
        let mut input = BufReader::new(file);
        let io = |e| Error::io(dir.join(POSTINGS), e);
        let mut postings = Vec::with_capacity(manifest.vocab_size);
        for term in 0..manifest.vocab_size {
            let len = input.read_u32::<LittleEndian>().map_err(io)? as usize;
            let mut list = Vec::with_capacity(len);
            for _ in 0..len {
                let doc_ordinal = input.read_u32::<LittleEndian>().map_err(io)?;
                let impact = input.read_f64::<LittleEndian>().map_err(io)?;
                if doc_ordinal as usize >= manifest.doc_count || impact.is_nan() || impact <= 0.0 {
                    return Err(Error::Data(format!(
                        "corrupt posting ({doc_ordinal}, {impact}) for term {term}"
                    )));
                }
                if list
                    .last()
                    .is_some_and(|p: &Posting| p.doc_ordinal >= doc_ordinal)
                {
                    return Err(Error::Data(format!("unsorted postings for term {term}")));
                }
                list.push(Posting {
                    doc_ordinal,
                    impact,
                });
            }
            postings.push(list);
        }
        let mut rest = Vec::new();
        input.read_to_end(&mut rest).map_err(io)?;
        if !rest.is_empty() {
            return Err(Error::Data(format!(
                "{} trailing bytes in postings file",
                rest.len()
            )));
        }
        Ok(Self {
            postings,
            doc_table,
        })
    }
}

const MANIFEST: &str = "manifest.json";
const DOC_TABLE: &str = "doc_table.tsv";
const POSTINGS: &str = "postings.bin";

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    doc_count: usize,
    vocab_size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexStats {
    pub doc_count: usize,
    pub vocab_size: usize,
    pub terms_used: usize,
    pub total_postings: usize,
    /// Mean length over non-empty posting lists.
    pub mean_posting_length: f64,
    pub max_posting_length: usize,
}

/// Scores every document with `dot` and applies the same ordering and
/// zero-overlap exclusion as [`InvertedIndex::search`].
pub fn brute_force_search(
    docs: &[(String, SparseVector)],
    query_id: &str,
    query: &SparseVector,
    k: usize,
) -> RankedList {
    let mut hits: Vec<Hit> = docs
        .iter()
        .filter(|(_, v)| v.term_ids().any(|t| query.get(t).is_some()))
        .map(|(id, v)| Hit {
            doc_id: id.clone(),
            score: dot(query, v),
        })
        .collect();
    hits.sort_by(hit_order);
    hits.truncate(k);
    RankedList {
        query_id: query_id.to_string(),
        hits,
    }
}
