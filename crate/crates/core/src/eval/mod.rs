//! Effectiveness metrics, retention and index-size accounting.

mod trec;

use std::collections::BTreeMap;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::index::SearchHit;

pub use trec::{read_qrels, read_run, write_run};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunEntry {
    pub doc_id: String,
    pub rank: usize,
    pub score: f32,
}

/// Ranked results per query.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RankedRun {
    queries: BTreeMap<String, Vec<RunEntry>>,
}

impl RankedRun {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds one query's ranking. Ranks must run 1, 2, ... with
    /// non-increasing scores.
    pub fn insert(&mut self, query_id: impl Into<String>, entries: Vec<RunEntry>) -> Result<()> {
        let query_id = query_id.into();
        for (i, e) in entries.iter().enumerate() {
            if e.rank != i + 1 {
                return Err(Error::Eval(format!(
                    "query {query_id:?}: rank {} at position {}",
                    e.rank,
                    i + 1
                )));
            }
            if i > 0 && e.score > entries[i - 1].score {
                return Err(Error::Eval(format!(
                    "query {query_id:?}: score increases at rank {}",
                    e.rank
                )));
            }
        }
        if self.queries.insert(query_id.clone(), entries).is_some() {
            return Err(Error::Eval(format!("query {query_id:?} appears twice")));
        }
        Ok(())
    }

    pub fn insert_hits(&mut self, query_id: impl Into<String>, hits: Vec<SearchHit>) -> Result<()> {
        let entries = hits
            .into_iter()
            .map(|h| RunEntry {
                doc_id: h.doc_id,
                rank: h.rank,
                score: h.score,
            })
            .collect();
        self.insert(query_id, entries)
    }

    pub fn get(&self, query_id: &str) -> Option<&[RunEntry]> {
        self.queries.get(query_id).map(Vec::as_slice)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[RunEntry])> {
        self.queries.iter().map(|(q, e)| (q.as_str(), e.as_slice()))
    }

    pub fn len(&self) -> usize {
        self.queries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queries.is_empty()
    }
}

/// Relevance judgments: query -> doc -> grade.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Qrels {
    judgments: BTreeMap<String, BTreeMap<String, u32>>,
}

impl Qrels {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, query_id: impl Into<String>, doc_id: impl Into<String>, grade: u32) {
        self.judgments
            .entry(query_id.into())
            .or_default()
            .insert(doc_id.into(), grade);
    }

    pub fn grade(&self, query_id: &str, doc_id: &str) -> u32 {
        self.judgments
            .get(query_id)
            .and_then(|m| m.get(doc_id))
            .copied()
            .unwrap_or(0)
    }

    pub fn relevant_count(&self, query_id: &str) -> usize {
        self.judgments
            .get(query_id)
            .map_or(0, |m| m.values().filter(|&&g| g >= 1).count())
    }

    pub fn queries(&self) -> impl Iterator<Item = &str> {
        self.judgments.keys().map(String::as_str)
    }

    pub fn is_empty(&self) -> bool {
        self.judgments.is_empty()
    }
}

fn check_inputs(qrels: &Qrels, k: usize) -> Result<()> {
    if k == 0 {
        return Err(Error::Eval("cutoff k must be >= 1".into()));
    }
    if qrels.is_empty() {
        return Err(Error::Eval("empty qrels".into()));
    }
    Ok(())
}

fn reciprocal_rank(run: &RankedRun, qrels: &Qrels, query: &str, k: usize) -> f64 {
    run.get(query)
        .unwrap_or(&[])
        .iter()
        .take_while(|e| e.rank <= k)
        .find(|e| qrels.grade(query, &e.doc_id) >= 1)
        .map_or(0.0, |e| 1.0 / e.rank as f64)
}

/// `None` when the query has no relevant documents.
fn query_recall(run: &RankedRun, qrels: &Qrels, query: &str, k: usize) -> Option<f64> {
    let relevant = qrels.relevant_count(query);
    if relevant == 0 {
        return None;
    }
    let found = run
        .get(query)
        .unwrap_or(&[])
        .iter()
        .take_while(|e| e.rank <= k)
        .filter(|e| qrels.grade(query, &e.doc_id) >= 1)
        .count();
    Some(found as f64 / relevant as f64)
}

/// Mean reciprocal rank of the first relevant document within `k`, over
/// every judged query. Unanswered queries count as 0.
pub fn mrr_at_k(run: &RankedRun, qrels: &Qrels, k: usize) -> Result<f64> {
    check_inputs(qrels, k)?;
    let (sum, n) = qrels
        .queries()
        .fold((0.0, 0usize), |(s, n), q| (s + reciprocal_rank(run, qrels, q, k), n + 1));
    Ok(sum / n as f64)
}

/// Mean fraction of relevant documents within `k`, over queries with at
/// least one relevant document.
pub fn recall_at_k(run: &RankedRun, qrels: &Qrels, k: usize) -> Result<f64> {
    check_inputs(qrels, k)?;
    let recalls: Vec<f64> = qrels
        .queries()
        .filter_map(|q| query_recall(run, qrels, q, k))
        .collect();
    if recalls.is_empty() {
        return Err(Error::Eval("no query has a relevant document".into()));
    }
    Ok(recalls.iter().sum::<f64>() / recalls.len() as f64)
}

/// Embedding payload size: `tokens * d * bytes_per_dim`. Per-token
/// metadata is not counted.
pub fn index_size_bytes(total_tokens: u64, d: u64, bytes_per_dim: u64) -> u64 {
    total_tokens * d * bytes_per_dim
}

/// Kept tokens as a percentage of the original count.
pub fn retention(kept_tokens: u64, original_tokens: u64) -> Result<f64> {
    if original_tokens == 0 {
        return Err(Error::Eval("original token count is zero".into()));
    }
    Ok(100.0 * kept_tokens as f64 / original_tokens as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QueryEval {
    pub query_id: String,
    pub reciprocal_rank: f64,
    /// Absent for queries without relevant documents.
    pub recall: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub mrr_cutoff: usize,
    pub mrr_at_k: f64,
    pub recall_cutoff: usize,
    pub recall_at_k: f64,
    pub queries: usize,
    /// Percentage of tokens kept, when the corpora were supplied.
    pub token_retention: Option<f64>,
    /// Embedding payload bytes of the evaluated index, when supplied.
    pub index_bytes: Option<u64>,
    pub per_query: Vec<QueryEval>,
}

pub fn evaluate(run: &RankedRun, qrels: &Qrels, mrr_k: usize, recall_k: usize) -> Result<EvalReport> {
    let mrr = mrr_at_k(run, qrels, mrr_k)?;
    let recall = recall_at_k(run, qrels, recall_k)?;
    let per_query: Vec<QueryEval> = qrels
        .queries()
        .map(|q| QueryEval {
            query_id: q.to_owned(),
            reciprocal_rank: reciprocal_rank(run, qrels, q, mrr_k),
            recall: query_recall(run, qrels, q, recall_k),
        })
        .collect();
    Ok(EvalReport {
        mrr_cutoff: mrr_k,
        mrr_at_k: mrr,
        recall_cutoff: recall_k,
        recall_at_k: recall,
        queries: per_query.len(),
        token_retention: None,
        index_bytes: None,
        per_query,
    })
}
