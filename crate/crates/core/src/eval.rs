//! TREC-style evaluation: NDCG@k, MAP@k and Recall@k over run files and
//! qrels.
//!
//! NDCG uses linear gain and a `log2(rank + 1)` discount; the ideal ordering
//! ranks all judged documents by grade. MAP and Recall use binary relevance
//! (`grade > 0`) and normalise by the total number of relevant documents.
//! Unjudged documents count as grade 0.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::index::{Hit, RankedList};

/// Relevance judgments, `query_id -> doc_id -> grade`.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Qrels {
    judgments: BTreeMap<String, BTreeMap<String, u32>>,
}

impl Qrels {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, query_id: &str, doc_id: &str, grade: u32) -> Result<()> {
        let prev = self
            .judgments
            .entry(query_id.to_string())
            .or_default()
            .insert(doc_id.to_string(), grade);
        if prev.is_some() {
            return Err(Error::Data(format!(
                "duplicate judgment for ({query_id}, {doc_id})"
            )));
        }
        Ok(())
    }

    pub fn query(&self, query_id: &str) -> Option<&BTreeMap<String, u32>> {
        self.judgments.get(query_id)
    }

    pub fn grade(&self, query_id: &str, doc_id: &str) -> u32 {
        self.query(query_id)
            .and_then(|j| j.get(doc_id))
            .copied()
            .unwrap_or(0)
    }

    pub fn relevant_count(&self, query_id: &str) -> usize {
        self.query(query_id)
            .map_or(0, |j| j.values().filter(|&&g| g > 0).count())
    }

    pub fn query_ids(&self) -> impl Iterator<Item = &str> {
        self.judgments.keys().map(String::as_str)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut qrels = Self::new();
        for (n, line) in text.lines().enumerate() {
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.is_empty() {
                continue;
            }
            let [qid, _iter, did, grade] = fields[..] else {
                return Err(Error::parse(
                    path,
                    n + 1,
                    "expected: query_id 0 doc_id grade",
                ));
            };
            let grade: u32 = grade
                .parse()
                .map_err(|_| Error::parse(path, n + 1, format!("bad grade {grade:?}")))?;
            qrels
                .insert(qid, did, grade)
                .map_err(|e| Error::parse(path, n + 1, e.to_string()))?;
        }
        Ok(qrels)
    }

    /// Lines are written sorted by (query_id, doc_id).
    pub fn to_trec_string(&self) -> String {
        let mut out = String::new();
        for (q, docs) in &self.judgments {
            for (d, g) in docs {
                writeln!(out, "{q} 0 {d} {g}").unwrap();
            }
        }
        out
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_trec_string()).map_err(|e| Error::io(path, e))
    }
}

/// A TREC run: ranked lists sharing one tag.
#[derive(Debug, Clone, PartialEq)]
pub struct Run {
    pub tag: String,
    pub lists: Vec<RankedList>,
}

impl Run {
    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut tag: Option<String> = None;
        let mut by_query: BTreeMap<String, Vec<(usize, Hit)>> = BTreeMap::new();
        for (n, line) in text.lines().enumerate() {
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.is_empty() {
                continue;
            }
            let [qid, _q0, did, rank, score, line_tag] = fields[..] else {
                return Err(Error::parse(
                    path,
                    n + 1,
                    "expected: query_id Q0 doc_id rank score tag",
                ));
            };
            let rank: usize = rank
                .parse()
                .map_err(|_| Error::parse(path, n + 1, format!("bad rank {rank:?}")))?;
            let score: f64 = score
                .parse()
                .map_err(|_| Error::parse(path, n + 1, format!("bad score {score:?}")))?;
            match &tag {
                None => tag = Some(line_tag.to_string()),
                Some(t) if t != line_tag => {
                    return Err(Error::parse(
                        path,
                        n + 1,
                        format!("run tag {line_tag:?} differs from {t:?}"),
                    ))
                }
                Some(_) => {}
            }
            by_query.entry(qid.to_string()).or_default().push((
                rank,
                Hit {
                    doc_id: did.to_string(),
                    score,
                },
            ));
        }
        let mut lists = Vec::with_capacity(by_query.len());
        for (query_id, mut hits) in by_query {
            hits.sort_by_key(|(rank, _)| *rank);
            let mut seen = HashSet::new();
            for (_, h) in &hits {
                if !seen.insert(h.doc_id.as_str()) {
                    return Err(Error::Data(format!(
                        "run lists {:?} twice for query {query_id:?}",
                        h.doc_id
                    )));
                }
            }
            lists.push(RankedList {
                query_id,
                hits: hits.into_iter().map(|(_, h)| h).collect(),
            });
        }
        Ok(Self {
            tag: tag.unwrap_or_default(),
            lists,
        })
    }

    /// `query_id Q0 doc_id rank score tag`, ordered by query id then rank,
    /// scores with 6 decimals.
    pub fn to_trec_string(&self) -> String {
        let mut lists: Vec<&RankedList> = self.lists.iter().collect();
        lists.sort_by(|a, b| a.query_id.cmp(&b.query_id));
        let mut out = String::new();
        for list in lists {
            for (i, hit) in list.hits.iter().enumerate() {
                writeln!(
                    out,
                    "{} Q0 {} {} {:.6} {}",
                    list.query_id,
                    hit.doc_id,
                    i + 1,
                    hit.score,
                    self.tag
                )
                .unwrap();
            }
        }
        out
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_trec_string()).map_err(|e| Error::io(path, e))
    }
}

fn top(ranked: &RankedList, k: usize) -> &[Hit] {
    &ranked.hits[..ranked.hits.len().min(k)]
}

pub fn ndcg_at_k(ranked: &RankedList, qrels: &Qrels, k: usize) -> f64 {
    let Some(judged) = qrels.query(&ranked.query_id) else {
        return 0.0;
    };
    let dcg: f64 = top(ranked, k)
        .iter()
        .enumerate()
        .map(|(i, h)| f64::from(qrels.grade(&ranked.query_id, &h.doc_id)) / ((i + 2) as f64).log2())
        .sum();
    let mut grades: Vec<u32> = judged.values().copied().filter(|&g| g > 0).collect();
    grades.sort_unstable_by(|a, b| b.cmp(a));
    let idcg: f64 = grades
        .iter()
        .take(k)
        .enumerate()
        .map(|(i, &g)| f64::from(g) / ((i + 2) as f64).log2())
        .sum();
    if idcg > 0.0 {
        dcg / idcg
    } else {
        0.0
    }
}

pub fn map_at_k(ranked: &RankedList, qrels: &Qrels, k: usize) -> f64 {
    let total_relevant = qrels.relevant_count(&ranked.query_id);
    if total_relevant == 0 {
        return 0.0;
    }
    let mut found = 0usize;
    let mut sum = 0.0;
    for (i, h) in top(ranked, k).iter().enumerate() {
        if qrels.grade(&ranked.query_id, &h.doc_id) > 0 {
            found += 1;
            sum += found as f64 / (i + 1) as f64;
        }
    }
    sum / total_relevant as f64
}

pub fn recall_at_k(ranked: &RankedList, qrels: &Qrels, k: usize) -> f64 {
    let total_relevant = qrels.relevant_count(&ranked.query_id);
    if total_relevant == 0 {
        return 0.0;
    }
    let found = top(ranked, k)
        .iter()
        .filter(|h| qrels.grade(&ranked.query_id, &h.doc_id) > 0)
        .count();
    found as f64 / total_relevant as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Metric {
    #[serde(rename = "NDCG")]
    Ndcg,
    #[serde(rename = "MAP")]
    Map,
    #[serde(rename = "R")]
    Recall,
}

impl Metric {
    pub fn label(self, k: usize) -> String {
        match self {
            Metric::Ndcg => format!("NDCG@{k}"),
            Metric::Map => format!("MAP@{k}"),
            Metric::Recall => format!("R@{k}"),
        }
    }

    pub fn compute(self, ranked: &RankedList, qrels: &Qrels, k: usize) -> f64 {
        match self {
            Metric::Ndcg => ndcg_at_k(ranked, qrels, k),
            Metric::Map => map_at_k(ranked, qrels, k),
            Metric::Recall => recall_at_k(ranked, qrels, k),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Cutoffs {
    pub ndcg: Vec<usize>,
    pub map: Vec<usize>,
    pub recall: Vec<usize>,
}

impl Default for Cutoffs {
    fn default() -> Self {
        Self {
            ndcg: vec![5, 10, 100, 500, 1000],
            map: vec![5, 10, 100, 500, 1000],
            recall: vec![20, 100, 500, 1000],
        }
    }
}

impl Cutoffs {
    /// The same cutoffs for every metric.
    pub fn uniform(ks: &[usize]) -> Self {
        Self {
            ndcg: ks.to_vec(),
            map: ks.to_vec(),
            recall: ks.to_vec(),
        }
    }

    pub fn columns(&self) -> Vec<(Metric, usize)> {
        let mut cols = Vec::new();
        cols.extend(self.ndcg.iter().map(|&k| (Metric::Ndcg, k)));
        cols.extend(self.map.iter().map(|&k| (Metric::Map, k)));
        cols.extend(self.recall.iter().map(|&k| (Metric::Recall, k)));
        cols
    }

    pub fn validate(&self) -> Result<()> {
        if self.columns().iter().any(|&(_, k)| k == 0) {
            return Err(Error::Contract("metric cutoffs must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricValue {
    pub metric: String,
    pub value: f64,
    pub percent: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryMetrics {
    pub query_id: String,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub columns: Vec<String>,
    pub mean: Vec<MetricValue>,
    pub per_query: Vec<QueryMetrics>,
    pub evaluated_queries: usize,
    /// Run queries without any judgments.
    pub skipped_queries: Vec<String>,
    /// Judged run queries with no relevant document; excluded from means.
    pub no_relevant_queries: Vec<String>,
}

impl MetricReport {
    pub fn value(&self, label: &str) -> Option<f64> {
        self.mean
            .iter()
            .find(|m| m.metric == label)
            .map(|m| m.value)
    }

    pub fn query_value(&self, query_id: &str, label: &str) -> Option<f64> {
        let col = self.columns.iter().position(|c| c == label)?;
        self.per_query
            .iter()
            .find(|q| q.query_id == query_id)
            .map(|q| q.values[col])
    }

    /// Tab-separated summary: one fraction row (4 decimals) and one percent
    /// row (2 decimals).
    pub fn to_table(&self, tag: &str) -> String {
        let mut out = format!("run\tunit\t{}\n", self.columns.join("\t"));
        let row = |unit: &str, vals: Vec<String>| format!("{tag}\t{unit}\t{}\n", vals.join("\t"));
        out.push_str(&row(
            "fraction",
            self.mean
                .iter()
                .map(|m| format!("{:.4}", m.value))
                .collect(),
        ));
        out.push_str(&row(
            "percent",
            self.mean
                .iter()
                .map(|m| format!("{:.2}", m.percent))
                .collect(),
        ));
        out
    }
}

pub fn evaluate_run(run: &[RankedList], qrels: &Qrels, cutoffs: &Cutoffs) -> Result<MetricReport> {
    cutoffs.validate()?;
    let mut seen = HashSet::new();
    for list in run {
        if !seen.insert(list.query_id.as_str()) {
            return Err(Error::Data(format!(
                "query {:?} appears twice in the run",
                list.query_id
            )));
        }
    }
    let columns = cutoffs.columns();
    let mut per_query = Vec::new();
    let mut skipped = Vec::new();
    let mut no_relevant = Vec::new();
    let mut sorted: Vec<&RankedList> = run.iter().collect();
    sorted.sort_by(|a, b| a.query_id.cmp(&b.query_id));
    for list in sorted {
        if qrels.query(&list.query_id).is_none() {
            skipped.push(list.query_id.clone());
            continue;
        }
        if qrels.relevant_count(&list.query_id) == 0 {
            no_relevant.push(list.query_id.clone());
            continue;
        }
        per_query.push(QueryMetrics {
            query_id: list.query_id.clone(),
            values: columns
                .iter()
                .map(|&(m, k)| m.compute(list, qrels, k))
                .collect(),
        });
    }
    let n = per_query.len();
    let mean = columns
        .iter()
        .enumerate()
        .map(|(c, &(m, k))| {
            let value = if n == 0 {
                0.0
            } else {
                per_query.iter().map(|q| q.values[c]).sum::<f64>() / n as f64
            };
            MetricValue {
                metric: m.label(k),
                value,
                percent: value * 100.0,
            }
        })
        .collect();
    Ok(MetricReport {
        columns: columns.iter().map(|&(m, k)| m.label(k)).collect(),
        mean,
        per_query,
        evaluated_queries: n,
        skipped_queries: skipped,
        no_relevant_queries: no_relevant,
    })
}
