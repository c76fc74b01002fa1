//! MaxSim late-interaction scoring.
//!
//! A document's score for a query is the sum, over query tokens, of the
//! best dot product that query token reaches against any document token.
//! Accumulation is f32 in query-token order so runs are bit-reproducible.

use crate::corpus::{EncodedQuery, TokenRecord};
use crate::error::{Error, Result};

/// Row-major `(rows x dim)` matrix of token embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenMatrix {
    dim: usize,
    data: Vec<f32>,
}

impl TokenMatrix {
    pub fn new(dim: usize, data: Vec<f32>) -> Result<Self> {
        if dim == 0 || data.len() % dim != 0 {
            return Err(Error::DimensionMismatch {
                context: "token matrix".into(),
                expected: dim,
                found: data.len(),
            });
        }
        Ok(Self { dim, data })
    }

    pub fn from_rows<R: AsRef<[f32]>>(dim: usize, rows: &[R]) -> Result<Self> {
        let mut data = Vec::with_capacity(rows.len() * dim);
        for row in rows {
            let row = row.as_ref();
            if row.len() != dim {
                return Err(Error::DimensionMismatch {
                    context: "token matrix row".into(),
                    expected: dim,
                    found: row.len(),
                });
            }
            data.extend_from_slice(row);
        }
        Self::new(dim, data)
    }

    pub fn from_records(dim: usize, records: &[TokenRecord]) -> Result<Self> {
        let rows: Vec<&[f32]> = records.iter().map(|r| r.embedding.as_slice()).collect();
        Self::from_rows(dim, &rows)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_rows(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f32]> + '_ {
        self.data.chunks_exact(self.dim)
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f32> {
        self.data
    }
}

/// Dot product with a fixed 8-lane accumulation order.
#[inline]
pub fn dot(a: &[f32], b: &[f32]) -> f32 {
    debug_assert_eq!(a.len(), b.len());
    let mut lanes = [0.0f32; 8];
    let mut ca = a.chunks_exact(8);
    let mut cb = b.chunks_exact(8);
    for (x, y) in (&mut ca).zip(&mut cb) {
        for l in 0..8 {
            lanes[l] += x[l] * y[l];
        }
    }
    let mut tail = 0.0f32;
    for (x, y) in ca.remainder().iter().zip(cb.remainder()) {
        tail += x * y;
    }
    ((lanes[0] + lanes[1]) + (lanes[2] + lanes[3]))
        + ((lanes[4] + lanes[5]) + (lanes[6] + lanes[7]))
        + tail
}

#[inline]
pub(crate) fn squared_l2(a: &[f32], b: &[f32]) -> f32 {
    debug_assert_eq!(a.len(), b.len());
    let mut lanes = [0.0f32; 8];
    let mut ca = a.chunks_exact(8);
    let mut cb = b.chunks_exact(8);
    for (x, y) in (&mut ca).zip(&mut cb) {
        for l in 0..8 {
            let t = x[l] - y[l];
            lanes[l] += t * t;
        }
    }
    let mut tail = 0.0f32;
    for (x, y) in ca.remainder().iter().zip(cb.remainder()) {
        let t = x - y;
        tail += t * t;
    }
    ((lanes[0] + lanes[1]) + (lanes[2] + lanes[3]))
        + ((lanes[4] + lanes[5]) + (lanes[6] + lanes[7]))
        + tail
}

pub(crate) fn normalize_row(row: &mut [f32]) -> bool {
    let norm = row.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>().sqrt();
    if norm == 0.0 || !norm.is_finite() {
        return false;
    }
    for v in row.iter_mut() {
        *v = (*v as f64 / norm) as f32;
    }
    true
}

/// Projects every row onto the unit sphere.
pub fn l2_normalize(tokens: &TokenMatrix) -> Result<TokenMatrix> {
    let mut out = tokens.clone();
    l2_normalize_in_place(&mut out)?;
    Ok(out)
}

pub fn l2_normalize_in_place(tokens: &mut TokenMatrix) -> Result<()> {
    let dim = tokens.dim;
    for (i, row) in tokens.data.chunks_exact_mut(dim).enumerate() {
        if !normalize_row(row) {
            return Err(Error::ZeroNorm(i));
        }
    }
    Ok(())
}

/// Sum over query rows of the maximum dot product against document rows.
pub fn maxsim(query: &TokenMatrix, doc: &TokenMatrix) -> Result<f32> {
    if query.dim != doc.dim {
        return Err(Error::DimensionMismatch {
            context: "maxsim".into(),
            expected: query.dim,
            found: doc.dim,
        });
    }
    if query.is_empty() || doc.is_empty() {
        return Err(Error::Config("maxsim needs non-empty query and document".into()));
    }
    Ok(maxsim_unchecked(query, doc))
}

pub(crate) fn maxsim_unchecked(query: &TokenMatrix, doc: &TokenMatrix) -> f32 {
    let mut score = 0.0f32;
    for q in query.rows() {
        let mut best = f32::NEG_INFINITY;
        for d in doc.rows() {
            let s = dot(q, d);
            if s > best {
                best = s;
            }
        }
        score += best;
    }
    score
}

/// Builds the query matrix used for scoring, normalizing it when the
/// documents were stored normalized.
pub fn query_matrix(query: &EncodedQuery, dim: usize, normalized: bool) -> Result<TokenMatrix> {
    let mut m = TokenMatrix::from_records(dim, &query.tokens).map_err(|e| match e {
        Error::DimensionMismatch {
            expected, found, ..
        } => Error::DimensionMismatch {
            context: query.query_id.clone(),
            expected,
            found,
        },
        other => other,
    })?;
    if m.is_empty() {
        return Err(Error::validation(&query.query_id, "query has no tokens"));
    }
    if normalized {
        l2_normalize_in_place(&mut m)?;
    }
    Ok(m)
}

/// Scores one query against many documents, preserving input order.
pub fn score_batch(
    query: &EncodedQuery,
    docs: &[(&str, &TokenMatrix)],
    normalized: bool,
) -> Result<Vec<(String, f32)>> {
    let Some(dim) = docs.first().map(|(_, m)| m.dim()) else {
        return Ok(Vec::new());
    };
    let q = query_matrix(query, dim, normalized)?;
    docs.iter()
        .map(|(id, m)| maxsim(&q, m).map(|s| (id.to_string(), s)))
        .collect()
}
