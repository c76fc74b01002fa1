#![allow(dead_code)]

use limv::corpus::{EncodedDocument, EncodedQuery, TokenFlags, TokenRecord};
use limv::pruning::AttentionTensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform_vec(rng: &mut ChaCha8Rng, d: usize) -> Vec<f32> {
    (0..d).map(|_| rng.gen_range(-1.0f32..1.0)).collect()
}

pub fn unit_vec(rng: &mut ChaCha8Rng, d: usize) -> Vec<f32> {
    let n = Normal::new(0.0f32, 1.0).unwrap();
    loop {
        let v: Vec<f32> = (0..d).map(|_| n.sample(rng)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f32>().sqrt();
        if norm > 1e-3 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

/// Document with random embeddings, ids drawn from a small vocabulary so
/// repeats occur, ~15% punctuation, a special token at each end, and random
/// attention importance.
pub fn random_doc(rng: &mut ChaCha8Rng, doc_id: &str, len: usize, d: usize) -> EncodedDocument {
    let tokens = (0..len)
        .map(|p| {
            let mut t = TokenRecord::new(rng.gen_range(0..200), p as u32, uniform_vec(rng, d));
            if p == 0 || p + 1 == len {
                t.flags = TokenFlags::SPECIAL;
            } else if rng.gen_bool(0.15) {
                t.flags = TokenFlags::PUNCTUATION;
            }
            t.attention_importance = rng.gen_range(0.0f32..4.0);
            t
        })
        .collect();
    EncodedDocument::new(doc_id, tokens)
}

pub fn random_query(rng: &mut ChaCha8Rng, query_id: &str, len: usize, d: usize) -> EncodedQuery {
    EncodedQuery::new(
        query_id,
        (0..len)
            .map(|p| TokenRecord::new(rng.gen_range(0..200), p as u32, uniform_vec(rng, d)))
            .collect(),
    )
}

/// Row-stochastic `(h, t, t)` tensor with random positive weights.
pub fn stochastic_tensor(rng: &mut ChaCha8Rng, h: usize, t: usize) -> AttentionTensor {
    let mut data = Vec::with_capacity(h * t * t);
    for _ in 0..h * t {
        let row: Vec<f64> = (0..t).map(|_| rng.gen_range(0.0f64..1.0).powi(3)).collect();
        let sum: f64 = row.iter().sum::<f64>().max(f64::MIN_POSITIVE);
        data.extend(row.iter().map(|v| (v / sum) as f32));
    }
    AttentionTensor::new(h, t, data).unwrap()
}

/// Corpus whose tokens are noisy copies of a fixed set of "token type"
/// directions, so documents share vocabulary the way text does.
pub struct TopicCorpus {
    pub docs: Vec<EncodedDocument>,
    types: Vec<Vec<f32>>,
    doc_types: Vec<Vec<u32>>,
    noise: f32,
    d: usize,
}

impl TopicCorpus {
    pub fn generate(n_docs: usize, mean_len: usize, d: usize, n_types: usize, seed: u64) -> Self {
        let mut r = rng(seed);
        let types: Vec<Vec<f32>> = (0..n_types).map(|_| unit_vec(&mut r, d)).collect();
        let noise = 0.15;
        let nd = Normal::new(0.0f32, noise).unwrap();
        let mut docs = Vec::with_capacity(n_docs);
        let mut doc_types = Vec::with_capacity(n_docs);
        for i in 0..n_docs {
            let len = r.gen_range(mean_len * 3 / 4..=mean_len * 5 / 4);
            // each document draws from a local window of the vocabulary
            let centre = r.gen_range(0..n_types);
            let ids: Vec<u32> = (0..len)
                .map(|_| ((centre + r.gen_range(0..n_types / 8)) % n_types) as u32)
                .collect();
            let tokens = ids
                .iter()
                .enumerate()
                .map(|(p, &id)| {
                    let e = types[id as usize].iter().map(|x| x + nd.sample(&mut r)).collect();
                    TokenRecord::new(id, p as u32, e)
                })
                .collect();
            docs.push(EncodedDocument::new(format!("doc{i:05}"), tokens));
            doc_types.push(ids);
        }
        Self {
            docs,
            types,
            doc_types,
            noise,
            d,
        }
    }

    pub fn total_tokens(&self) -> usize {
        self.docs.iter().map(|d| d.len()).sum()
    }

    /// Query built from `len` token types of a randomly chosen document.
    pub fn query(&self, r: &mut ChaCha8Rng, query_id: &str, len: usize) -> EncodedQuery {
        let nd = Normal::new(0.0f32, self.noise).unwrap();
        let target = &self.doc_types[r.gen_range(0..self.doc_types.len())];
        let tokens = (0..len)
            .map(|p| {
                let id = target[r.gen_range(0..target.len())];
                let e = self.types[id as usize]
                    .iter()
                    .map(|x| x + nd.sample(r))
                    .collect();
                TokenRecord::new(id, p as u32, e)
            })
            .collect();
        let _ = self.d;
        EncodedQuery::new(query_id, tokens)
    }
}

/// Five documents over orthogonal directions in d=8; query `qN` is made of
/// directions only document `docN` contains.
pub fn toy_fixture() -> (Vec<EncodedDocument>, Vec<EncodedQuery>, String) {
    let d = 8;
    let axis = |i: usize, w: f32| {
        let mut v = vec![0.0f32; d];
        v[i] = w;
        v
    };
    // doc0: axes 0,1 ; doc1: 2,3 ; doc2: 4,5 ; doc3: 6,7 ; doc4: weak everything
    let mut docs = Vec::new();
    for i in 0..4 {
        let toks = vec![
            TokenRecord::new(100 + 2 * i as u32, 0, axis(2 * i, 1.0)),
            TokenRecord::new(101 + 2 * i as u32, 1, axis(2 * i + 1, 1.0)),
            TokenRecord::new(7, 2, vec![0.05; d]),
        ];
        docs.push(EncodedDocument::new(format!("doc{i}"), toks));
    }
    docs.push(EncodedDocument::new(
        "doc4",
        (0..d)
            .map(|i| TokenRecord::new(200 + i as u32, i as u32, axis(i, 0.3)))
            .collect(),
    ));
    let queries = (0..3)
        .map(|i| {
            EncodedQuery::new(
                format!("q{i}"),
                vec![
                    TokenRecord::new(100 + 2 * i as u32, 0, axis(2 * i, 1.0)),
                    TokenRecord::new(101 + 2 * i as u32, 1, axis(2 * i + 1, 1.0)),
                ],
            )
        })
        .collect();
    let qrels = "q0 0 doc0 1\nq1 0 doc1 1\nq2 0 doc2 1\nq2 0 doc4 0\n".to_string();
    (docs, queries, qrels)
}
