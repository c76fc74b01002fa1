//! Index-time token selection.
//!
//! Four strategies reduce a document to at most `k` token records:
//! the first `k` positions, the `k` rarest tokens by IDF, the `k` reserved
//! "unused" tokens the encoder prepended, or the `k` tokens receiving the
//! most last-layer attention. Ties always go to the earliest position, and
//! kept records are emitted in their original order.

use std::collections::{BTreeMap, HashMap};

use serde::Serialize;

use crate::corpus::{EncodedDocument, PruningMethod, TokenRecord};
use crate::error::{Error, Result};

/// Row sums of an attention tensor must be within this of 1.
pub const STOCHASTIC_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq)]
pub struct PrunedDocument {
    pub doc_id: String,
    pub kept: Vec<TokenRecord>,
    pub method: PruningMethod,
    pub k: usize,
    /// Token count of the source document.
    pub original_len: usize,
}

impl PrunedDocument {
    pub fn into_document(self) -> EncodedDocument {
        EncodedDocument {
            doc_id: self.doc_id,
            tokens: self.kept,
        }
    }
}

fn check_budget(k: usize) -> Result<()> {
    if k == 0 {
        return Err(Error::Config("pruning budget k must be >= 1".into()));
    }
    Ok(())
}

/// Indices of the `k` highest-scoring eligible entries, returned in
/// ascending index order. Equal scores prefer the lower index.
pub fn top_k_indices<S: PartialOrd + Copy>(
    scores: impl IntoIterator<Item = (usize, S)>,
    k: usize,
) -> Vec<usize> {
    let mut ranked: Vec<(usize, S)> = scores.into_iter().collect();
    ranked.sort_by(|a, b| {
        b.1.partial_cmp(&a.1)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.0.cmp(&b.0))
    });
    ranked.truncate(k);
    let mut idx: Vec<usize> = ranked.into_iter().map(|(i, _)| i).collect();
    idx.sort_unstable();
    idx
}

fn select(doc: &EncodedDocument, idx: &[usize], method: PruningMethod, k: usize) -> PrunedDocument {
    PrunedDocument {
        doc_id: doc.doc_id.clone(),
        kept: idx.iter().map(|&i| doc.tokens[i].clone()).collect(),
        method,
        k,
        original_len: doc.tokens.len(),
    }
}

/// Document frequencies over a corpus and the smoothed IDF derived from them.
#[derive(Debug, Clone, PartialEq)]
pub struct IdfTable {
    n_docs: usize,
    df: HashMap<u32, u32>,
}

impl IdfTable {
    pub fn n_docs(&self) -> usize {
        self.n_docs
    }

    pub fn df(&self, token_id: u32) -> Option<u32> {
        self.df.get(&token_id).copied()
    }

    pub fn len(&self) -> usize {
        self.df.len()
    }

    pub fn is_empty(&self) -> bool {
        self.df.is_empty()
    }

    /// `ln((N + 1) / (df + 1))`
    pub fn idf(&self, token_id: u32) -> Option<f64> {
        self.df(token_id)
            .map(|df| ((self.n_docs as f64 + 1.0) / (df as f64 + 1.0)).ln())
    }

    /// Writes each record's IDF from this table.
    pub fn stamp(&self, docs: &mut [EncodedDocument]) -> Result<()> {
        for doc in docs {
            for tok in &mut doc.tokens {
                tok.idf = self.idf(tok.token_id).ok_or(Error::MissingIdf(tok.token_id))? as f32;
            }
        }
        Ok(())
    }
}

pub fn build_idf_table(docs: &[EncodedDocument]) -> Result<IdfTable> {
    if docs.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let mut df: HashMap<u32, u32> = HashMap::new();
    let mut seen: Vec<u32> = Vec::new();
    for doc in docs {
        seen.clear();
        seen.extend(doc.tokens.iter().map(|t| t.token_id));
        seen.sort_unstable();
        seen.dedup();
        for &id in &seen {
            *df.entry(id).or_insert(0) += 1;
        }
    }
    Ok(IdfTable {
        n_docs: docs.len(),
        df,
    })
}

/// Keeps positions `0..min(k, t)`, punctuation and special tokens included.
pub fn prune_first_k(doc: &EncodedDocument, k: usize) -> Result<PrunedDocument> {
    check_budget(k)?;
    let idx: Vec<usize> = (0..doc.tokens.len().min(k)).collect();
    Ok(select(doc, &idx, PruningMethod::First, k))
}

/// Keeps the `k` highest-IDF tokens, ignoring punctuation and special tokens.
pub fn prune_idf_top_k(doc: &EncodedDocument, k: usize, table: &IdfTable) -> Result<PrunedDocument> {
    check_budget(k)?;
    let mut scores = Vec::with_capacity(doc.tokens.len());
    for (i, tok) in doc.tokens.iter().enumerate() {
        if tok.is_punctuation() || tok.is_special() {
            continue;
        }
        let idf = table.idf(tok.token_id).ok_or(Error::MissingIdf(tok.token_id))?;
        scores.push((i, idf));
    }
    let idx = top_k_indices(scores, k);
    Ok(select(doc, &idx, PruningMethod::Idf, k))
}

/// Keeps exactly the first `k` unused-flagged records.
pub fn prune_unused_tokens(doc: &EncodedDocument, k: usize) -> Result<PrunedDocument> {
    check_budget(k)?;
    let idx: Vec<usize> = doc
        .tokens
        .iter()
        .enumerate()
        .filter(|(_, t)| t.is_unused())
        .map(|(i, _)| i)
        .take(k)
        .collect();
    if idx.len() < k {
        return Err(Error::NotEnoughUnused {
            doc_id: doc.doc_id.clone(),
            found: idx.len(),
            k,
        });
    }
    Ok(select(doc, &idx, PruningMethod::Unused, k))
}

/// Keeps the `k` non-punctuation tokens with the highest attention
/// importance. Repeated token ids are kept as-is.
pub fn prune_attention_top_k(doc: &EncodedDocument, k: usize) -> Result<PrunedDocument> {
    check_budget(k)?;
    let scores = doc
        .tokens
        .iter()
        .enumerate()
        .filter(|(_, t)| !t.is_punctuation())
        .map(|(i, t)| (i, t.attention_importance));
    let idx = top_k_indices(scores, k);
    Ok(select(doc, &idx, PruningMethod::Attention, k))
}

/// Dispatches on `method`. `None` keeps every token.
pub fn prune(
    doc: &EncodedDocument,
    method: PruningMethod,
    k: usize,
    idf: Option<&IdfTable>,
) -> Result<PrunedDocument> {
    match method {
        PruningMethod::None => Ok(PrunedDocument {
            doc_id: doc.doc_id.clone(),
            kept: doc.tokens.clone(),
            method,
            k,
            original_len: doc.tokens.len(),
        }),
        PruningMethod::First => prune_first_k(doc, k),
        PruningMethod::Idf => {
            let table =
                idf.ok_or_else(|| Error::Config("idf pruning requires an idf table".into()))?;
            prune_idf_top_k(doc, k, table)
        }
        PruningMethod::Unused => prune_unused_tokens(doc, k),
        PruningMethod::Attention => prune_attention_top_k(doc, k),
    }
}

/// Last-layer attention of one document: `heads` stacked `(len x len)`
/// matrices, each row summing to 1.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionTensor {
    heads: usize,
    len: usize,
    data: Vec<f32>,
}

impl AttentionTensor {
    pub fn new(heads: usize, len: usize, data: Vec<f32>) -> Result<Self> {
        if heads == 0 || len == 0 {
            return Err(Error::Config("attention tensor needs heads >= 1 and len >= 1".into()));
        }
        if data.len() != heads * len * len {
            return Err(Error::DimensionMismatch {
                context: "attention tensor".into(),
                expected: heads * len * len,
                found: data.len(),
            });
        }
        Ok(Self { heads, len, data })
    }

    pub fn heads(&self) -> usize {
        self.heads
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Weight token `from` assigns to token `to` in `head`.
    pub fn get(&self, head: usize, from: usize, to: usize) -> f32 {
        self.data[(head * self.len + from) * self.len + to]
    }

    fn row(&self, head: usize, from: usize) -> &[f32] {
        let start = (head * self.len + from) * self.len;
        &self.data[start..start + self.len]
    }
}

/// Total attention each token receives, summed over heads and over all
/// attending tokens. Rows sum to 1, so the result sums to `heads * len`.
pub fn attention_importance(attention: &AttentionTensor) -> Result<Vec<f32>> {
    let t = attention.len;
    let mut acc = vec![0.0f64; t];
    for head in 0..attention.heads {
        for from in 0..t {
            let row = attention.row(head, from);
            let mut sum = 0.0f64;
            for &w in row {
                if !(w >= 0.0 && w.is_finite()) {
                    return Err(Error::NotStochastic {
                        head,
                        row: from,
                        sum: w as f64,
                    });
                }
                sum += w as f64;
            }
            if (sum - 1.0).abs() > STOCHASTIC_TOLERANCE {
                return Err(Error::NotStochastic {
                    head,
                    row: from,
                    sum,
                });
            }
            for (a, &w) in acc.iter_mut().zip(row) {
                *a += w as f64;
            }
        }
    }
    Ok(acc.into_iter().map(|v| v as f32).collect())
}

/// Stores [`attention_importance`] into each record of `doc`.
pub fn assign_attention_importance(doc: &mut EncodedDocument, attention: &AttentionTensor) -> Result<()> {
    if attention.len != doc.tokens.len() {
        return Err(Error::DimensionMismatch {
            context: doc.doc_id.clone(),
            expected: doc.tokens.len(),
            found: attention.len,
        });
    }
    let scores = attention_importance(attention)?;
    for (tok, s) in doc.tokens.iter_mut().zip(scores) {
        tok.attention_importance = s;
    }
    Ok(())
}

/// Aggregate selection statistics for one (method, k) group.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SelectionReport {
    pub method: PruningMethod,
    pub k: usize,
    pub documents: usize,
    pub original_tokens: u64,
    pub kept_tokens: u64,
    /// Percentage of original tokens kept.
    pub retention: f64,
    /// Fraction of kept records whose token id occurs more than once in
    /// the same kept set.
    pub duplicate_rate: f64,
    pub punctuation_share: f64,
}

fn duplicated_records(kept: &[TokenRecord]) -> usize {
    let mut counts: HashMap<u32, usize> = HashMap::new();
    for t in kept {
        *counts.entry(t.token_id).or_insert(0) += 1;
    }
    counts.values().filter(|&&c| c > 1).sum()
}

pub fn selection_diagnostics(pruned: &[PrunedDocument]) -> Vec<SelectionReport> {
    #[derive(Default)]
    struct Acc {
        docs: usize,
        original: u64,
        kept: u64,
        dup: u64,
        punct: u64,
    }
    let mut groups: BTreeMap<(PruningMethod, usize), Acc> = BTreeMap::new();
    for p in pruned {
        let acc = groups.entry((p.method, p.k)).or_default();
        acc.docs += 1;
        acc.original += p.original_len as u64;
        acc.kept += p.kept.len() as u64;
        acc.dup += duplicated_records(&p.kept) as u64;
        acc.punct += p.kept.iter().filter(|t| t.is_punctuation()).count() as u64;
    }
    let ratio = |num: u64, den: u64| if den == 0 { 0.0 } else { num as f64 / den as f64 };
    groups
        .into_iter()
        .map(|((method, k), a)| SelectionReport {
            method,
            k,
            documents: a.docs,
            original_tokens: a.original,
            kept_tokens: a.kept,
            retention: 100.0 * ratio(a.kept, a.original),
            duplicate_rate: ratio(a.dup, a.kept),
            punctuation_share: ratio(a.punct, a.kept),
        })
        .collect()
}
