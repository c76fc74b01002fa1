//! Token-level indexes.
//!
//! [`FlatIndex`] scores every document exhaustively. [`IvfIndex`] adds a
//! k-means partition of all stored token vectors: each query token probes
//! its `nprobe` closest partitions, keeps its `token_topk` best tokens, and
//! every document owning one of those tokens is then rescored exactly.

mod flat;
mod ivf;
mod kmeans;
mod persist;

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::corpus::{EncodedQuery, IndexKind, IndexManifest};
use crate::error::{Error, Result};

pub use flat::{build_flat, FlatIndex};
pub use ivf::{build_ivf, default_n_clusters, IvfIndex, KMEANS_SAMPLE_CAP};
pub use kmeans::{kmeans_train, KMeansModel, DEFAULT_MAX_ITERS};
pub use persist::{read_index, write_index, INDEX_MAGIC};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchParams {
    pub top_n: usize,
    /// Partitions probed per query token (IVF only).
    pub nprobe: usize,
    /// Candidate tokens kept per query token before exact rescoring (IVF only).
    pub token_topk: usize,
}

impl Default for SearchParams {
    fn default() -> Self {
        Self {
            top_n: 1000,
            nprobe: 128,
            token_topk: 8192,
        }
    }
}

impl SearchParams {
    pub fn validate(&self, n_clusters: Option<usize>) -> Result<()> {
        if self.top_n == 0 {
            return Err(Error::Config("top_n must be >= 1".into()));
        }
        if let Some(n) = n_clusters {
            if self.nprobe == 0 || self.nprobe > n {
                return Err(Error::Config(format!(
                    "nprobe must be in 1..={n}, got {}",
                    self.nprobe
                )));
            }
            if self.token_topk == 0 {
                return Err(Error::Config("token_topk must be >= 1".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SearchHit {
    pub doc_id: String,
    /// 1-based.
    pub rank: usize,
    pub score: f32,
}

/// Descending score, then ascending doc id.
pub(crate) fn rank_hits<'a>(
    mut scored: Vec<(usize, f32)>,
    doc_id: impl Fn(usize) -> &'a str,
    top_n: usize,
) -> Vec<SearchHit> {
    let cmp = |a: &(usize, f32), b: &(usize, f32)| -> Ordering {
        b.1.total_cmp(&a.1).then_with(|| doc_id(a.0).cmp(doc_id(b.0)))
    };
    if scored.len() > top_n {
        scored.select_nth_unstable_by(top_n - 1, cmp);
        scored.truncate(top_n);
    }
    scored.sort_by(cmp);
    scored
        .into_iter()
        .enumerate()
        .map(|(i, (d, score))| SearchHit {
            doc_id: doc_id(d).to_owned(),
            rank: i + 1,
            score,
        })
        .collect()
}

/// A loaded index of either kind.
#[derive(Debug, Clone)]
pub enum Index {
    Flat(FlatIndex),
    Ivf(IvfIndex),
}

impl Index {
    pub fn manifest(&self) -> &IndexManifest {
        match self {
            Index::Flat(f) => f.manifest(),
            Index::Ivf(i) => i.manifest(),
        }
    }

    pub fn flat(&self) -> &FlatIndex {
        match self {
            Index::Flat(f) => f,
            Index::Ivf(i) => i.flat(),
        }
    }

    pub fn kind(&self) -> IndexKind {
        self.manifest().index_kind
    }

    /// Searches with the index's own strategy, or `kind` when given.
    /// An IVF index can always be searched exhaustively.
    pub fn search(
        &self,
        query: &EncodedQuery,
        params: &SearchParams,
        kind: Option<IndexKind>,
    ) -> Result<Vec<SearchHit>> {
        match (self, kind.unwrap_or(self.kind())) {
            (_, IndexKind::Flat) => self.flat().search(query, params),
            (Index::Ivf(ivf), IndexKind::Ivf) => ivf.search(query, params),
            (Index::Flat(_), IndexKind::Ivf) => Err(Error::Config(
                "ivf search requested on a flat index".into(),
            )),
        }
    }
}
