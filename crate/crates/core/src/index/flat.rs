//! Exhaustive MaxSim search over every stored document.

use rayon::prelude::*;

use super::{rank_hits, SearchHit, SearchParams};
use crate::corpus::{
    f16_round_trip, validate_corpus, Dtype, EncodedDocument, EncodedQuery, IndexKind,
    IndexManifest, EXPANDED_QUERY_LEN,
};
use crate::error::{Error, Result};
use crate::scoring::{maxsim_unchecked, normalize_row, query_matrix, TokenMatrix};

#[derive(Debug, Clone)]
pub struct FlatIndex {
    manifest: IndexManifest,
    docs: Vec<EncodedDocument>,
    matrices: Vec<TokenMatrix>,
    total_tokens: usize,
}

/// Builds a flat index. Rows are normalized when the manifest asks for it
/// and rounded to the storage dtype, so in-memory scores match a reload.
pub fn build_flat(docs: Vec<EncodedDocument>, manifest: &IndexManifest) -> Result<FlatIndex> {
    let manifest = IndexManifest {
        index_kind: IndexKind::Flat,
        n_clusters: 0,
        ..*manifest
    };
    FlatIndex::build(docs, manifest)
}

impl FlatIndex {
    pub(crate) fn build(mut docs: Vec<EncodedDocument>, manifest: IndexManifest) -> Result<Self> {
        if docs.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        validate_corpus(&docs, &manifest)?;
        for doc in &mut docs {
            for (i, tok) in doc.tokens.iter_mut().enumerate() {
                if manifest.normalized && !normalize_row(&mut tok.embedding) {
                    return Err(Error::validation(
                        &doc.doc_id,
                        format!("token {i} has a zero-norm embedding"),
                    ));
                }
                if manifest.dtype == Dtype::F16 {
                    for v in &mut tok.embedding {
                        *v = f16_round_trip(*v);
                    }
                }
            }
        }
        Self::from_stored(docs, manifest)
    }

    /// Wraps documents whose embeddings are already in stored form.
    pub(crate) fn from_stored(docs: Vec<EncodedDocument>, manifest: IndexManifest) -> Result<Self> {
        if docs.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        let dim = manifest.dim();
        let matrices = docs
            .iter()
            .map(|d| TokenMatrix::from_records(dim, &d.tokens))
            .collect::<Result<Vec<_>>>()?;
        let total_tokens = matrices.iter().map(TokenMatrix::n_rows).sum();
        Ok(Self {
            manifest,
            docs,
            matrices,
            total_tokens,
        })
    }

    pub fn manifest(&self) -> &IndexManifest {
        &self.manifest
    }

    pub(crate) fn set_manifest(&mut self, manifest: IndexManifest) {
        self.manifest = manifest;
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    pub fn total_tokens(&self) -> usize {
        self.total_tokens
    }

    pub fn documents(&self) -> &[EncodedDocument] {
        &self.docs
    }

    pub fn doc_id(&self, doc: usize) -> &str {
        &self.docs[doc].doc_id
    }

    pub fn matrix(&self, doc: usize) -> &TokenMatrix {
        &self.matrices[doc]
    }

    /// Query matrix under this index's normalization and expansion settings.
    pub fn prepare_query(&self, query: &EncodedQuery) -> Result<TokenMatrix> {
        if self.manifest.query_expansion && query.tokens.len() != EXPANDED_QUERY_LEN {
            return Err(Error::validation(
                &query.query_id,
                format!(
                    "index expects expanded queries of {EXPANDED_QUERY_LEN} tokens, got {}",
                    query.tokens.len()
                ),
            ));
        }
        query_matrix(query, self.manifest.dim(), self.manifest.normalized)
    }

    /// MaxSim of a prepared query against the given documents.
    pub(crate) fn score_docs(&self, q: &TokenMatrix, docs: &[usize]) -> Vec<(usize, f32)> {
        docs.par_iter()
            .map(|&d| (d, maxsim_unchecked(q, &self.matrices[d])))
            .collect()
    }

    pub(crate) fn rank(&self, scored: Vec<(usize, f32)>, top_n: usize) -> Vec<SearchHit> {
        rank_hits(scored, |d| self.doc_id(d), top_n)
    }

    pub fn search(&self, query: &EncodedQuery, params: &SearchParams) -> Result<Vec<SearchHit>> {
        params.validate(None)?;
        let q = self.prepare_query(query)?;
        let all: Vec<usize> = (0..self.docs.len()).collect();
        let scored = self.score_docs(&q, &all);
        Ok(self.rank(scored, params.top_n))
    }
}
