//! Domain model for encoded documents and queries, plus the binary
//! interchange format used between the encoder and the engine.
//!
//! A document is a sequence of [`TokenRecord`]s, one row of its token
//! embedding matrix each. The [`IndexManifest`] travels with every file and
//! records the dimensionality, the on-disk dtype and how the embeddings were
//! produced (normalization, query expansion) or reduced (pruning).

mod format;

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use bitflags::bitflags;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use format::{
    f16_round_trip, read_corpus, read_queries, write_corpus, write_queries, CORPUS_MAGIC,
    FORMAT_VERSION, QUERY_MAGIC,
};
pub(crate) use format::{ByteReader, ByteWriter};

/// Length every query must have when query expansion is enabled.
pub const EXPANDED_QUERY_LEN: usize = 32;

bitflags! {
    #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
    pub struct TokenFlags: u8 {
        const PUNCTUATION = 0b001;
        /// `[CLS]`, `[SEP]`, `[MASK]` and friends.
        const SPECIAL = 0b010;
        /// Reserved-vocabulary token prepended in unused-token mode.
        const UNUSED = 0b100;
    }
}

/// One token of an encoded item: a row of its embedding matrix plus the
/// per-token statistics the pruning strategies select on.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenRecord {
    pub token_id: u32,
    /// Detokenized surface form; empty when the encoder did not supply one.
    pub surface: String,
    pub position: u32,
    pub flags: TokenFlags,
    pub idf: f32,
    pub attention_importance: f32,
    pub embedding: Vec<f32>,
}

impl TokenRecord {
    pub fn new(token_id: u32, position: u32, embedding: Vec<f32>) -> Self {
        Self {
            token_id,
            surface: String::new(),
            position,
            flags: TokenFlags::empty(),
            idf: 0.0,
            attention_importance: 0.0,
            embedding,
        }
    }

    pub fn is_punctuation(&self) -> bool {
        self.flags.contains(TokenFlags::PUNCTUATION)
    }

    pub fn is_special(&self) -> bool {
        self.flags.contains(TokenFlags::SPECIAL)
    }

    pub fn is_unused(&self) -> bool {
        self.flags.contains(TokenFlags::UNUSED)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncodedDocument {
    pub doc_id: String,
    pub tokens: Vec<TokenRecord>,
}

impl EncodedDocument {
    pub fn new(doc_id: impl Into<String>, tokens: Vec<TokenRecord>) -> Self {
        Self {
            doc_id: doc_id.into(),
            tokens,
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncodedQuery {
    pub query_id: String,
    pub tokens: Vec<TokenRecord>,
}

impl EncodedQuery {
    pub fn new(query_id: impl Into<String>, tokens: Vec<TokenRecord>) -> Self {
        Self {
            query_id: query_id.into(),
            tokens,
        }
    }
}

/// Storage precision of embeddings at rest. Scoring always runs in f32.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dtype {
    F16,
    F32,
}

impl Dtype {
    pub fn bytes_per_dim(self) -> usize {
        match self {
            Dtype::F16 => 2,
            Dtype::F32 => 4,
        }
    }

    pub(crate) fn tag(self) -> u8 {
        match self {
            Dtype::F16 => 0,
            Dtype::F32 => 1,
        }
    }

    pub(crate) fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(Dtype::F16),
            1 => Some(Dtype::F32),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PruningMethod {
    None,
    First,
    Idf,
    Unused,
    Attention,
}

impl PruningMethod {
    pub(crate) fn tag(self) -> u8 {
        match self {
            PruningMethod::None => 0,
            PruningMethod::First => 1,
            PruningMethod::Idf => 2,
            PruningMethod::Unused => 3,
            PruningMethod::Attention => 4,
        }
    }

    pub(crate) fn from_tag(tag: u8) -> Option<Self> {
        Some(match tag {
            0 => PruningMethod::None,
            1 => PruningMethod::First,
            2 => PruningMethod::Idf,
            3 => PruningMethod::Unused,
            4 => PruningMethod::Attention,
            _ => return None,
        })
    }

    pub fn as_str(self) -> &'static str {
        match self {
            PruningMethod::None => "none",
            PruningMethod::First => "first",
            PruningMethod::Idf => "idf",
            PruningMethod::Unused => "unused",
            PruningMethod::Attention => "attention",
        }
    }
}

impl fmt::Display for PruningMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PruningMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(PruningMethod::None),
            "first" => Ok(PruningMethod::First),
            "idf" => Ok(PruningMethod::Idf),
            "unused" => Ok(PruningMethod::Unused),
            "attention" => Ok(PruningMethod::Attention),
            other => Err(Error::Config(format!("unknown pruning method {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IndexKind {
    Flat,
    Ivf,
}

impl IndexKind {
    pub(crate) fn tag(self) -> u8 {
        match self {
            IndexKind::Flat => 0,
            IndexKind::Ivf => 1,
        }
    }

    pub(crate) fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(IndexKind::Flat),
            1 => Some(IndexKind::Ivf),
            _ => None,
        }
    }
}

/// Describes how a corpus, query set or index was produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndexManifest {
    pub d: u32,
    pub dtype: Dtype,
    pub normalized: bool,
    pub query_expansion: bool,
    pub pruning: PruningMethod,
    /// Token budget; meaningful only when `pruning` is not `None`.
    pub k: u32,
    pub index_kind: IndexKind,
    /// Meaningful only for IVF indexes.
    pub n_clusters: u32,
    pub seed: u64,
}

impl Default for IndexManifest {
    fn default() -> Self {
        Self {
            d: 128,
            dtype: Dtype::F16,
            normalized: false,
            query_expansion: false,
            pruning: PruningMethod::None,
            k: 0,
            index_kind: IndexKind::Flat,
            n_clusters: 0,
            seed: 0,
        }
    }
}

impl IndexManifest {
    pub fn with_dim(d: u32, dtype: Dtype) -> Self {
        Self {
            d,
            dtype,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d == 0 {
            return Err(Error::Config("d must be positive".into()));
        }
        if self.pruning != PruningMethod::None && self.k == 0 {
            return Err(Error::Config(format!(
                "pruning method {} requires k >= 1",
                self.pruning
            )));
        }
        if self.index_kind == IndexKind::Ivf && self.n_clusters == 0 {
            return Err(Error::Config("ivf index requires n_clusters >= 1".into()));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.d as usize
    }
}

fn validate_tokens(id: &str, tokens: &[TokenRecord], manifest: &IndexManifest) -> Result<()> {
    if tokens.is_empty() {
        return Err(Error::validation(id, "no tokens"));
    }
    // Pruned corpora keep original positions, so only the order survives.
    let contiguous = manifest.pruning == PruningMethod::None;
    let mut prev: Option<u32> = None;
    for (i, tok) in tokens.iter().enumerate() {
        if tok.embedding.len() != manifest.dim() {
            return Err(Error::DimensionMismatch {
                context: id.to_owned(),
                expected: manifest.dim(),
                found: tok.embedding.len(),
            });
        }
        if let Some(bad) = tok.embedding.iter().find(|v| !v.is_finite()) {
            return Err(Error::validation(
                id,
                format!("token {i} has non-finite embedding value {bad}"),
            ));
        }
        if contiguous {
            if tok.position as usize != i {
                return Err(Error::validation(
                    id,
                    format!("token {i} has position {}, expected {i}", tok.position),
                ));
            }
        } else if prev.is_some_and(|p| tok.position <= p) {
            return Err(Error::validation(
                id,
                format!("positions not strictly increasing at token {i}"),
            ));
        }
        prev = Some(tok.position);
        if !(tok.idf >= 0.0 && tok.idf.is_finite()) {
            return Err(Error::validation(id, format!("token {i} has idf {}", tok.idf)));
        }
        if !(tok.attention_importance >= 0.0 && tok.attention_importance.is_finite()) {
            return Err(Error::validation(
                id,
                format!(
                    "token {i} has attention importance {}",
                    tok.attention_importance
                ),
            ));
        }
    }
    Ok(())
}

/// Checks every document invariant plus doc_id uniqueness.
pub fn validate_corpus(docs: &[EncodedDocument], manifest: &IndexManifest) -> Result<()> {
    manifest.validate()?;
    let mut seen = HashSet::with_capacity(docs.len());
    for doc in docs {
        validate_tokens(&doc.doc_id, &doc.tokens, manifest)?;
        if !seen.insert(doc.doc_id.as_str()) {
            return Err(Error::DuplicateDocId(doc.doc_id.clone()));
        }
    }
    Ok(())
}

/// Query positions are always contiguous, whatever the corpus pruning is.
pub fn validate_queries(queries: &[EncodedQuery], manifest: &IndexManifest) -> Result<()> {
    let query_manifest = IndexManifest {
        pruning: PruningMethod::None,
        k: 0,
        ..*manifest
    };
    query_manifest.validate()?;
    let mut seen = HashSet::with_capacity(queries.len());
    for q in queries {
        validate_query(q, &query_manifest)?;
        if !seen.insert(q.query_id.as_str()) {
            return Err(Error::DuplicateDocId(q.query_id.clone()));
        }
    }
    Ok(())
}

pub fn validate_query(query: &EncodedQuery, manifest: &IndexManifest) -> Result<()> {
    let query_manifest = IndexManifest {
        pruning: PruningMethod::None,
        ..*manifest
    };
    validate_tokens(&query.query_id, &query.tokens, &query_manifest)?;
    if manifest.query_expansion && query.tokens.len() != EXPANDED_QUERY_LEN {
        return Err(Error::validation(
            &query.query_id,
            format!(
                "query expansion requires {EXPANDED_QUERY_LEN} tokens, found {}",
                query.tokens.len()
            ),
        ));
    }
    Ok(())
}
