//! Index files ("LIMI"): the corpus layout holding stored (normalized,
//! dtype-rounded) embeddings, followed for IVF indexes by the f32 centroid
//! matrix and one u32 partition id per token in corpus order.

use std::io::{Read, Write};

use super::flat::FlatIndex;
use super::ivf::IvfIndex;
use super::Index;
use crate::corpus::{validate_corpus, ByteReader, ByteWriter, Dtype, EncodedDocument, IndexKind};
use crate::error::{Error, Result};
use crate::scoring::TokenMatrix;

pub const INDEX_MAGIC: [u8; 4] = *b"LIMI";

pub fn write_index<W: Write>(index: &Index, destination: W) -> Result<u64> {
    let flat = index.flat();
    let manifest = flat.manifest();
    let mut w = ByteWriter::new(destination);
    w.header(INDEX_MAGIC, manifest)?;
    w.u64(flat.len() as u64)?;
    for doc in flat.documents() {
        w.item(&doc.doc_id, &doc.tokens, manifest.dtype)?;
    }
    if let Index::Ivf(ivf) = index {
        w.embedding(ivf.centroids().as_slice(), Dtype::F32, "centroids")?;
        w.u64(ivf.assignments().len() as u64)?;
        for &a in ivf.assignments() {
            w.u32(a)?;
        }
    }
    w.flush()?;
    Ok(w.written())
}

pub fn read_index<R: Read>(source: R) -> Result<Index> {
    let mut r = ByteReader::new(source);
    let manifest = r.header(INDEX_MAGIC)?;
    let docs: Vec<EncodedDocument> = r
        .items(&manifest)?
        .into_iter()
        .map(|(doc_id, tokens)| EncodedDocument { doc_id, tokens })
        .collect();
    validate_corpus(&docs, &manifest)?;
    let flat = FlatIndex::from_stored(docs, manifest)?;
    let index = match manifest.index_kind {
        IndexKind::Flat => Index::Flat(flat),
        IndexKind::Ivf => {
            let n_clusters = manifest.n_clusters as usize;
            let centroids = r.embedding(n_clusters * manifest.dim(), Dtype::F32)?;
            let centroids = TokenMatrix::new(manifest.dim(), centroids)?;
            let count = r.u64("assignment count")?;
            if count != flat.total_tokens() as u64 {
                return Err(r.corrupt(format!(
                    "{count} assignments for {} tokens",
                    flat.total_tokens()
                )));
            }
            let mut assignments = Vec::with_capacity(flat.total_tokens());
            for _ in 0..count {
                let a = r.u32("assignment")?;
                if a as usize >= n_clusters {
                    return Err(Error::Corrupt {
                        offset: r.offset() - 4,
                        reason: format!("assignment {a} out of range"),
                    });
                }
                assignments.push(a);
            }
            Index::Ivf(IvfIndex::from_parts(flat, centroids, assignments)?)
        }
    };
    r.expect_end()?;
    Ok(index)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{IndexManifest, TokenRecord};
    use crate::index::{build_flat, build_ivf, SearchParams};
    use crate::corpus::EncodedQuery;

    fn docs() -> Vec<EncodedDocument> {
        (0..12)
            .map(|i| {
                EncodedDocument::new(
                    format!("d{i}"),
                    (0..3)
                        .map(|p| {
                            let x = (i * 3 + p) as f32;
                            TokenRecord::new(p as u32, p as u32, vec![x.sin(), x.cos(), 0.1 * x])
                        })
                        .collect(),
                )
            })
            .collect()
    }

    #[test]
    fn flat_round_trip_is_byte_stable() {
        let m = IndexManifest {
            normalized: true,
            ..IndexManifest::with_dim(3, Dtype::F16)
        };
        let idx = Index::Flat(build_flat(docs(), &m).unwrap());
        let mut a = Vec::new();
        write_index(&idx, &mut a).unwrap();
        let back = read_index(&a[..]).unwrap();
        let mut b = Vec::new();
        write_index(&back, &mut b).unwrap();
        assert_eq!(a, b);
        assert_eq!(back.flat().matrix(4), idx.flat().matrix(4));
    }

    #[test]
    fn ivf_round_trip_preserves_search() {
        let m = IndexManifest::with_dim(3, Dtype::F32);
        let idx = Index::Ivf(build_ivf(docs(), &m, Some(4), 1).unwrap());
        let mut a = Vec::new();
        write_index(&idx, &mut a).unwrap();
        let back = read_index(&a[..]).unwrap();
        assert_eq!(back.kind(), IndexKind::Ivf);
        let q = EncodedQuery::new("q", vec![TokenRecord::new(0, 0, vec![0.3, 0.9, 0.2])]);
        let p = SearchParams {
            nprobe: 2,
            token_topk: 5,
            ..SearchParams::default()
        };
        assert_eq!(idx.search(&q, &p, None).unwrap(), back.search(&q, &p, None).unwrap());

        let mut truncated = a.clone();
        truncated.truncate(a.len() - 2);
        assert!(matches!(read_index(&truncated[..]), Err(Error::Corrupt { .. })));
    }
}
