//! Inverted-file index over token vectors with exact document rescoring.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::flat::FlatIndex;
use super::kmeans::{assign_all, kmeans_train, DEFAULT_MAX_ITERS};
use super::{SearchHit, SearchParams};
use crate::corpus::{EncodedDocument, EncodedQuery, IndexKind, IndexManifest};
use crate::error::{Error, Result};
use crate::scoring::{dot, squared_l2, TokenMatrix};

/// Upper bound on the number of token vectors k-means trains on.
pub const KMEANS_SAMPLE_CAP: usize = 1 << 20;

/// `ceil(sqrt(total_tokens))`, at least 1.
pub fn default_n_clusters(total_tokens: usize) -> usize {
    ((total_tokens as f64).sqrt().ceil() as usize).max(1)
}

/// Token vectors of one partition, stored contiguously.
#[derive(Debug, Clone, Default)]
struct InvertedList {
    /// (document index, token index within document)
    refs: Vec<(u32, u32)>,
    vectors: Vec<f32>,
}

#[derive(Debug, Clone)]
pub struct IvfIndex {
    flat: FlatIndex,
    centroids: TokenMatrix,
    lists: Vec<InvertedList>,
    /// Partition of every token, in corpus order.
    assignments: Vec<u32>,
}

pub fn build_ivf(
    docs: Vec<EncodedDocument>,
    manifest: &IndexManifest,
    n_clusters: Option<usize>,
    seed: u64,
) -> Result<IvfIndex> {
    let base = IndexManifest {
        index_kind: IndexKind::Flat,
        n_clusters: 0,
        ..*manifest
    };
    let mut flat = FlatIndex::build(docs, base)?;
    let total = flat.total_tokens();
    let n_clusters = n_clusters.unwrap_or_else(|| default_n_clusters(total));
    let all = all_tokens(&flat);

    let sample = if total <= KMEANS_SAMPLE_CAP {
        all.clone()
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut picked = rand::seq::index::sample(&mut rng, total, KMEANS_SAMPLE_CAP).into_vec();
        picked.sort_unstable();
        let mut data = Vec::with_capacity(picked.len() * all.dim());
        for i in picked {
            data.extend_from_slice(all.row(i));
        }
        TokenMatrix::new(all.dim(), data)?
    };
    let model = kmeans_train(&sample, n_clusters, seed, DEFAULT_MAX_ITERS)?;
    let assignments: Vec<u32> = assign_all(&all, &model.centroids)
        .into_iter()
        .map(|(c, _)| c)
        .collect();

    flat.set_manifest(IndexManifest {
        index_kind: IndexKind::Ivf,
        n_clusters: u32::try_from(n_clusters)
            .map_err(|_| Error::Config("n_clusters exceeds u32".into()))?,
        seed,
        ..*flat.manifest()
    });
    IvfIndex::from_parts(flat, model.centroids, assignments)
}

fn all_tokens(flat: &FlatIndex) -> TokenMatrix {
    let mut data = Vec::with_capacity(flat.total_tokens() * flat.manifest().dim());
    for d in 0..flat.len() {
        data.extend_from_slice(flat.matrix(d).as_slice());
    }
    TokenMatrix::new(flat.manifest().dim(), data).expect("rows share the index dimension")
}

impl IvfIndex {
    pub(crate) fn from_parts(
        flat: FlatIndex,
        centroids: TokenMatrix,
        assignments: Vec<u32>,
    ) -> Result<Self> {
        let n_clusters = flat.manifest().n_clusters as usize;
        if centroids.n_rows() != n_clusters || centroids.dim() != flat.manifest().dim() {
            return Err(Error::Format(format!(
                "expected {n_clusters} centroids of dimension {}, found {} of dimension {}",
                flat.manifest().d,
                centroids.n_rows(),
                centroids.dim()
            )));
        }
        if assignments.len() != flat.total_tokens() {
            return Err(Error::Format(format!(
                "{} assignments for {} tokens",
                assignments.len(),
                flat.total_tokens()
            )));
        }
        let dim = flat.manifest().dim();
        let mut lists = vec![InvertedList::default(); n_clusters];
        let mut next = assignments.iter();
        for d in 0..flat.len() {
            for (t, row) in flat.matrix(d).rows().enumerate() {
                let &c = next.next().expect("length checked");
                let list = lists.get_mut(c as usize).ok_or_else(|| {
                    Error::Format(format!("assignment {c} out of range for {n_clusters} clusters"))
                })?;
                list.refs.push((d as u32, t as u32));
                list.vectors.extend_from_slice(row);
            }
        }
        debug_assert!(lists.iter().all(|l| l.vectors.len() == l.refs.len() * dim));
        Ok(Self {
            flat,
            centroids,
            lists,
            assignments,
        })
    }

    pub fn manifest(&self) -> &IndexManifest {
        self.flat.manifest()
    }

    pub fn flat(&self) -> &FlatIndex {
        &self.flat
    }

    pub fn centroids(&self) -> &TokenMatrix {
        &self.centroids
    }

    pub fn n_clusters(&self) -> usize {
        self.centroids.n_rows()
    }

    pub fn assignments(&self) -> &[u32] {
        &self.assignments
    }

    pub fn list_len(&self, cluster: usize) -> usize {
        self.lists[cluster].refs.len()
    }

    /// `(document index, token index)` entries of one partition.
    pub fn list_refs(&self, cluster: usize) -> &[(u32, u32)] {
        &self.lists[cluster].refs
    }

    /// Partitions to probe for one query token, best first. Dot product on
    /// normalized indexes, negative Euclidean distance otherwise.
    fn probe_order(&self, q: &[f32], nprobe: usize) -> Vec<usize> {
        let normalized = self.manifest().normalized;
        let mut scored: Vec<(usize, f32)> = self
            .centroids
            .rows()
            .enumerate()
            .map(|(c, row)| {
                let s = if normalized { dot(q, row) } else { -squared_l2(q, row) };
                (c, s)
            })
            .collect();
        let cmp = |a: &(usize, f32), b: &(usize, f32)| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0));
        if scored.len() > nprobe {
            scored.select_nth_unstable_by(nprobe - 1, cmp);
            scored.truncate(nprobe);
        }
        scored.sort_by(cmp);
        scored.into_iter().map(|(c, _)| c).collect()
    }

    /// Documents owning one of the `token_topk` best tokens found in the
    /// probed partitions of one query token.
    fn token_candidates(&self, q: &[f32], params: &SearchParams) -> Vec<u32> {
        let dim = self.manifest().dim();
        let mut hits: Vec<(f32, u32, u32)> = Vec::new();
        for c in self.probe_order(q, params.nprobe) {
            let list = &self.lists[c];
            for (&(d, t), v) in list.refs.iter().zip(list.vectors.chunks_exact(dim)) {
                hits.push((dot(q, v), d, t));
            }
        }
        let cmp = |a: &(f32, u32, u32), b: &(f32, u32, u32)| {
            b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2))
        };
        if hits.len() > params.token_topk {
            hits.select_nth_unstable_by(params.token_topk - 1, cmp);
            hits.truncate(params.token_topk);
        }
        hits.into_iter().map(|(_, d, _)| d).collect()
    }

    /// Document indexes reaching stage two for `query`, ascending.
    pub fn candidates(&self, query: &EncodedQuery, params: &SearchParams) -> Result<Vec<usize>> {
        params.validate(Some(self.n_clusters()))?;
        let q = self.flat.prepare_query(query)?;
        Ok(self.candidates_for(&q, params))
    }

    fn candidates_for(&self, q: &TokenMatrix, params: &SearchParams) -> Vec<usize> {
        let per_token: Vec<Vec<u32>> = q
            .rows()
            .collect::<Vec<_>>()
            .par_iter()
            .map(|row| self.token_candidates(row, params))
            .collect();
        let mut marked = vec![false; self.flat.len()];
        for d in per_token.into_iter().flatten() {
            marked[d as usize] = true;
        }
        marked
            .iter()
            .enumerate()
            .filter_map(|(d, &m)| m.then_some(d))
            .collect()
    }

    pub fn search(&self, query: &EncodedQuery, params: &SearchParams) -> Result<Vec<SearchHit>> {
        params.validate(Some(self.n_clusters()))?;
        let q = self.flat.prepare_query(query)?;
        let candidates = self.candidates_for(&q, params);
        let scored = self.flat.score_docs(&q, &candidates);
        Ok(self.flat.rank(scored, params.top_n))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Dtype, TokenRecord};
    use rand::Rng;

    fn corpus(n_docs: usize, seed: u64) -> Vec<EncodedDocument> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n_docs)
            .map(|i| {
                let len = rng.gen_range(1..12);
                EncodedDocument::new(
                    format!("doc{i:03}"),
                    (0..len)
                        .map(|p| {
                            let v = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
                            TokenRecord::new(p as u32, p as u32, v)
                        })
                        .collect(),
                )
            })
            .collect()
    }

    fn query(seed: u64) -> EncodedQuery {
        let d = corpus(1, seed).pop().unwrap();
        EncodedQuery::new("q", d.tokens)
    }

    #[test]
    fn single_cluster_holds_everything() {
        let m = IndexManifest::with_dim(4, Dtype::F32);
        let idx = build_ivf(corpus(30, 1), &m, Some(1), 7).unwrap();
        assert_eq!(idx.list_len(0), idx.flat().total_tokens());
        let params = SearchParams {
            nprobe: 1,
            token_topk: idx.flat().total_tokens(),
            ..SearchParams::default()
        };
        for s in 0..5 {
            let q = query(100 + s);
            assert_eq!(idx.search(&q, &params).unwrap(), idx.flat().search(&q, &params).unwrap());
        }
    }

    #[test]
    fn lists_partition_tokens_and_respect_nearest_centroid() {
        let m = IndexManifest::with_dim(4, Dtype::F32);
        let idx = build_ivf(corpus(60, 2), &m, Some(8), 3).unwrap();
        let total: usize = (0..idx.n_clusters()).map(|c| idx.list_len(c)).sum();
        assert_eq!(total, idx.flat().total_tokens());
        assert_eq!(idx.manifest().index_kind, IndexKind::Ivf);
        assert_eq!(idx.manifest().n_clusters, 8);

        let mut flat_pos = 0;
        for d in 0..idx.flat().len() {
            for row in idx.flat().matrix(d).rows() {
                let own = idx.assignments()[flat_pos] as usize;
                let own_d = squared_l2(row, idx.centroids().row(own));
                for (c, cen) in idx.centroids().rows().enumerate() {
                    assert!(own_d <= squared_l2(row, cen), "token {flat_pos} closer to {c}");
                }
                flat_pos += 1;
            }
        }
    }

    #[test]
    fn exhaustive_probe_equals_flat() {
        let m = IndexManifest::with_dim(4, Dtype::F32);
        let idx = build_ivf(corpus(80, 4), &m, Some(9), 5).unwrap();
        let params = SearchParams {
            top_n: 1000,
            nprobe: 9,
            token_topk: idx.flat().total_tokens(),
        };
        for s in 0..10 {
            let q = query(200 + s);
            assert_eq!(idx.search(&q, &params).unwrap(), idx.flat().search(&q, &params).unwrap());
        }
    }

    #[test]
    fn rejects_bad_nprobe() {
        let m = IndexManifest::with_dim(4, Dtype::F32);
        let idx = build_ivf(corpus(20, 4), &m, Some(4), 5).unwrap();
        let params = SearchParams {
            nprobe: 5,
            ..SearchParams::default()
        };
        assert!(idx.search(&query(1), &params).is_err());
    }

    #[test]
    fn default_cluster_count() {
        assert_eq!(default_n_clusters(0), 1);
        assert_eq!(default_n_clusters(100), 10);
        assert_eq!(default_n_clusters(101), 11);
        assert_eq!(default_n_clusters(100_000), 317);
    }
}
