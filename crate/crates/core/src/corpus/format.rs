//! Little-endian binary layout shared by corpus ("LIMV"), query ("LIMQ") and
//! index ("LIMI") files.
//!
//! ```text
//! magic [4] | version u32 | d u32 | dtype u8 | normalized u8 | query_expansion u8
//! | pruning u8 | k u32 | index_kind u8 | n_clusters u32 | seed u64 | count u64
//! per item:  id_len u16, id bytes, token_count u32
//! per token: token_id u32, flags u8, position u32, idf f32, attention f32,
//!            surface_len u16, surface bytes, embedding d x dtype
//! ```

use std::io::{self, Read, Write};

use half::f16;

use super::{
    validate_corpus, validate_queries, Dtype, EncodedDocument, EncodedQuery, IndexKind,
    IndexManifest, PruningMethod, TokenFlags, TokenRecord,
};
use crate::error::{Error, Result};

pub const CORPUS_MAGIC: [u8; 4] = *b"LIMV";
pub const QUERY_MAGIC: [u8; 4] = *b"LIMQ";
pub const FORMAT_VERSION: u32 = 1;

/// Value an embedding component takes after being stored as f16 and loaded
/// back (round-to-nearest-even).
pub fn f16_round_trip(v: f32) -> f32 {
    f16::from_f32(v).to_f32()
}

pub(crate) struct ByteWriter<W> {
    inner: W,
    written: u64,
}

impl<W: Write> ByteWriter<W> {
    pub(crate) fn new(inner: W) -> Self {
        Self { inner, written: 0 }
    }

    pub(crate) fn written(&self) -> u64 {
        self.written
    }

    pub(crate) fn bytes(&mut self, buf: &[u8]) -> Result<()> {
        self.inner.write_all(buf)?;
        self.written += buf.len() as u64;
        Ok(())
    }

    pub(crate) fn u8(&mut self, v: u8) -> Result<()> {
        self.bytes(&[v])
    }

    pub(crate) fn u16(&mut self, v: u16) -> Result<()> {
        self.bytes(&v.to_le_bytes())
    }

    pub(crate) fn u32(&mut self, v: u32) -> Result<()> {
        self.bytes(&v.to_le_bytes())
    }

    pub(crate) fn u64(&mut self, v: u64) -> Result<()> {
        self.bytes(&v.to_le_bytes())
    }

    pub(crate) fn f32(&mut self, v: f32) -> Result<()> {
        self.bytes(&v.to_le_bytes())
    }

    pub(crate) fn flush(&mut self) -> Result<()> {
        self.inner.flush()?;
        Ok(())
    }

    fn short_str(&mut self, s: &str, owner: &str, what: &str) -> Result<()> {
        let len = u16::try_from(s.len()).map_err(|_| {
            Error::validation(owner, format!("{what} longer than {} bytes", u16::MAX))
        })?;
        self.u16(len)?;
        self.bytes(s.as_bytes())
    }

    pub(crate) fn header(&mut self, magic: [u8; 4], manifest: &IndexManifest) -> Result<()> {
        self.bytes(&magic)?;
        self.u32(FORMAT_VERSION)?;
        self.u32(manifest.d)?;
        self.u8(manifest.dtype.tag())?;
        self.u8(manifest.normalized as u8)?;
        self.u8(manifest.query_expansion as u8)?;
        self.u8(manifest.pruning.tag())?;
        self.u32(manifest.k)?;
        self.u8(manifest.index_kind.tag())?;
        self.u32(manifest.n_clusters)?;
        self.u64(manifest.seed)
    }

    pub(crate) fn item(&mut self, id: &str, tokens: &[TokenRecord], dtype: Dtype) -> Result<()> {
        self.short_str(id, id, "id")?;
        let count = u32::try_from(tokens.len())
            .map_err(|_| Error::validation(id, "too many tokens"))?;
        self.u32(count)?;
        for tok in tokens {
            self.u32(tok.token_id)?;
            self.u8(tok.flags.bits())?;
            self.u32(tok.position)?;
            self.f32(tok.idf)?;
            self.f32(tok.attention_importance)?;
            self.short_str(&tok.surface, id, "surface")?;
            self.embedding(&tok.embedding, dtype, id)?;
        }
        Ok(())
    }

    pub(crate) fn embedding(&mut self, values: &[f32], dtype: Dtype, owner: &str) -> Result<()> {
        match dtype {
            Dtype::F32 => {
                for &v in values {
                    self.f32(v)?;
                }
            }
            Dtype::F16 => {
                for &v in values {
                    let h = f16::from_f32(v);
                    if !h.is_finite() {
                        return Err(Error::validation(
                            owner,
                            format!("embedding value {v} is not representable as f16"),
                        ));
                    }
                    self.bytes(&h.to_le_bytes())?;
                }
            }
        }
        Ok(())
    }
}

pub(crate) struct ByteReader<R> {
    inner: R,
    offset: u64,
}

impl<R: Read> ByteReader<R> {
    pub(crate) fn new(inner: R) -> Self {
        Self { inner, offset: 0 }
    }

    pub(crate) fn offset(&self) -> u64 {
        self.offset
    }

    pub(crate) fn corrupt(&self, reason: impl Into<String>) -> Error {
        Error::Corrupt {
            offset: self.offset,
            reason: reason.into(),
        }
    }

    pub(crate) fn fill(&mut self, buf: &mut [u8], what: &str) -> Result<()> {
        match self.inner.read_exact(buf) {
            Ok(()) => {
                self.offset += buf.len() as u64;
                Ok(())
            }
            Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => {
                Err(self.corrupt(format!("truncated while reading {what}")))
            }
            Err(e) => Err(e.into()),
        }
    }

    fn array<const N: usize>(&mut self, what: &str) -> Result<[u8; N]> {
        let mut buf = [0u8; N];
        self.fill(&mut buf, what)?;
        Ok(buf)
    }

    pub(crate) fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.array::<1>(what)?[0])
    }

    pub(crate) fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.array(what)?))
    }

    pub(crate) fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.array(what)?))
    }

    pub(crate) fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.array(what)?))
    }

    pub(crate) fn f32(&mut self, what: &str) -> Result<f32> {
        Ok(f32::from_le_bytes(self.array(what)?))
    }

    fn bool(&mut self, what: &str) -> Result<bool> {
        match self.u8(what)? {
            0 => Ok(false),
            1 => Ok(true),
            other => Err(Error::Format(format!("{what} flag has value {other}"))),
        }
    }

    fn short_str(&mut self, what: &str) -> Result<String> {
        let len = self.u16(what)? as usize;
        let start = self.offset;
        let mut buf = vec![0u8; len];
        self.fill(&mut buf, what)?;
        String::from_utf8(buf).map_err(|_| Error::Corrupt {
            offset: start,
            reason: format!("{what} is not valid UTF-8"),
        })
    }

    pub(crate) fn header(&mut self, magic: [u8; 4]) -> Result<IndexManifest> {
        let found: [u8; 4] = self.array("magic")?;
        if found != magic {
            return Err(Error::Format(format!(
                "bad magic {:?}, expected {:?}",
                String::from_utf8_lossy(&found),
                String::from_utf8_lossy(&magic)
            )));
        }
        let version = self.u32("version")?;
        if version != FORMAT_VERSION {
            return Err(Error::Format(format!("unsupported version {version}")));
        }
        let d = self.u32("d")?;
        let dtype = self.u8("dtype")?;
        let dtype =
            Dtype::from_tag(dtype).ok_or_else(|| Error::Format(format!("unknown dtype {dtype}")))?;
        let normalized = self.bool("normalized")?;
        let query_expansion = self.bool("query_expansion")?;
        let pruning = self.u8("pruning")?;
        let pruning = PruningMethod::from_tag(pruning)
            .ok_or_else(|| Error::Format(format!("unknown pruning method {pruning}")))?;
        let k = self.u32("k")?;
        let kind = self.u8("index_kind")?;
        let index_kind = IndexKind::from_tag(kind)
            .ok_or_else(|| Error::Format(format!("unknown index kind {kind}")))?;
        let n_clusters = self.u32("n_clusters")?;
        let seed = self.u64("seed")?;
        let manifest = IndexManifest {
            d,
            dtype,
            normalized,
            query_expansion,
            pruning,
            k,
            index_kind,
            n_clusters,
            seed,
        };
        manifest.validate()?;
        Ok(manifest)
    }

    pub(crate) fn item(&mut self, manifest: &IndexManifest) -> Result<(String, Vec<TokenRecord>)> {
        let id = self.short_str("id")?;
        let count = self.u32("token_count")? as usize;
        let mut tokens = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let token_id = self.u32("token_id")?;
            let flag_bits = self.u8("flags")?;
            let flags = TokenFlags::from_bits(flag_bits)
                .ok_or_else(|| self.corrupt(format!("unknown flag bits {flag_bits:#04x}")))?;
            let position = self.u32("position")?;
            let idf = self.f32("idf")?;
            let attention_importance = self.f32("attention_importance")?;
            let surface = self.short_str("surface")?;
            let embedding = self.embedding(manifest.dim(), manifest.dtype)?;
            tokens.push(TokenRecord {
                token_id,
                surface,
                position,
                flags,
                idf,
                attention_importance,
                embedding,
            });
        }
        Ok((id, tokens))
    }

    pub(crate) fn embedding(&mut self, d: usize, dtype: Dtype) -> Result<Vec<f32>> {
        let mut raw = vec![0u8; d * dtype.bytes_per_dim()];
        self.fill(&mut raw, "embedding")?;
        Ok(match dtype {
            Dtype::F32 => raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect(),
            Dtype::F16 => raw
                .chunks_exact(2)
                .map(|c| f16::from_le_bytes([c[0], c[1]]).to_f32())
                .collect(),
        })
    }

    pub(crate) fn items(&mut self, manifest: &IndexManifest) -> Result<Vec<(String, Vec<TokenRecord>)>> {
        let count = self.u64("item count")?;
        let mut items = Vec::with_capacity((count as usize).min(1 << 16));
        for _ in 0..count {
            items.push(self.item(manifest)?);
        }
        Ok(items)
    }

    pub(crate) fn expect_end(&mut self) -> Result<()> {
        let mut probe = [0u8; 1];
        loop {
            match self.inner.read(&mut probe) {
                Ok(0) => return Ok(()),
                Ok(_) => return Err(self.corrupt("trailing bytes after last record")),
                Err(e) if e.kind() == io::ErrorKind::Interrupted => continue,
                Err(e) => return Err(e.into()),
            }
        }
    }
}

/// Serializes a corpus. Output is a pure function of the inputs.
pub fn write_corpus<W: Write>(
    docs: &[EncodedDocument],
    manifest: &IndexManifest,
    destination: W,
) -> Result<u64> {
    validate_corpus(docs, manifest)?;
    let mut w = ByteWriter::new(destination);
    w.header(CORPUS_MAGIC, manifest)?;
    w.u64(docs.len() as u64)?;
    for doc in docs {
        w.item(&doc.doc_id, &doc.tokens, manifest.dtype)?;
    }
    w.flush()?;
    Ok(w.written())
}

pub fn read_corpus<R: Read>(source: R) -> Result<(IndexManifest, Vec<EncodedDocument>)> {
    let mut r = ByteReader::new(source);
    let manifest = r.header(CORPUS_MAGIC)?;
    let docs: Vec<EncodedDocument> = r
        .items(&manifest)?
        .into_iter()
        .map(|(doc_id, tokens)| EncodedDocument { doc_id, tokens })
        .collect();
    r.expect_end()?;
    validate_corpus(&docs, &manifest)?;
    Ok((manifest, docs))
}

pub fn write_queries<W: Write>(
    queries: &[EncodedQuery],
    manifest: &IndexManifest,
    destination: W,
) -> Result<u64> {
    validate_queries(queries, manifest)?;
    let mut w = ByteWriter::new(destination);
    w.header(QUERY_MAGIC, manifest)?;
    w.u64(queries.len() as u64)?;
    for q in queries {
        w.item(&q.query_id, &q.tokens, manifest.dtype)?;
    }
    w.flush()?;
    Ok(w.written())
}

pub fn read_queries<R: Read>(source: R) -> Result<(IndexManifest, Vec<EncodedQuery>)> {
    let mut r = ByteReader::new(source);
    let manifest = r.header(QUERY_MAGIC)?;
    let queries: Vec<EncodedQuery> = r
        .items(&manifest)?
        .into_iter()
        .map(|(query_id, tokens)| EncodedQuery { query_id, tokens })
        .collect();
    r.expect_end()?;
    validate_queries(&queries, &manifest)?;
    Ok((manifest, queries))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_token_doc(d: usize) -> EncodedDocument {
        let mut tok = TokenRecord::new(7, 0, (0..d).map(|i| i as f32 * 0.25).collect());
        tok.surface = "dog".into();
        tok.flags = TokenFlags::SPECIAL;
        tok.idf = 0.5;
        tok.attention_importance = 1.5;
        EncodedDocument::new("doc-1", vec![tok])
    }

    #[test]
    fn empty_corpus_is_header_only() {
        let m = IndexManifest::with_dim(4, Dtype::F32);
        let mut buf = Vec::new();
        let n = write_corpus(&[], &m, &mut buf).unwrap();
        // magic + version + manifest block + doc_count
        assert_eq!(n, 4 + 4 + (4 + 1 + 1 + 1 + 1 + 4 + 1 + 4 + 8) + 8);
        assert_eq!(n as usize, buf.len());
        let (m2, docs) = read_corpus(&buf[..]).unwrap();
        assert_eq!(m2, m);
        assert!(docs.is_empty());
    }

    #[test]
    fn single_token_byte_length() {
        let m = IndexManifest::with_dim(4, Dtype::F32);
        let mut buf = Vec::new();
        let n = write_corpus(&[one_token_doc(4)], &m, &mut buf).unwrap();
        let header = 41;
        let doc_head = 2 + "doc-1".len() + 4;
        let token_meta = 4 + 1 + 4 + 4 + 4 + 2 + "dog".len();
        let payload = 4 * 4;
        assert_eq!(n as usize, header + doc_head + token_meta + payload);
        // the embedding is the final 16 bytes
        let tail: Vec<f32> = buf[buf.len() - 16..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        assert_eq!(tail, vec![0.0, 0.25, 0.5, 0.75]);
    }

    #[test]
    fn bad_magic_and_version_are_format_errors() {
        let m = IndexManifest::with_dim(4, Dtype::F32);
        let mut buf = Vec::new();
        write_corpus(&[one_token_doc(4)], &m, &mut buf).unwrap();

        let mut wrong = buf.clone();
        wrong[..4].copy_from_slice(b"LIMQ");
        assert!(matches!(read_corpus(&wrong[..]), Err(Error::Format(_))));

        let mut ver = buf.clone();
        ver[4] = 2;
        assert!(matches!(read_corpus(&ver[..]), Err(Error::Format(_))));

        // queries refuse corpus files
        assert!(matches!(read_queries(&buf[..]), Err(Error::Format(_))));
    }

    #[test]
    fn truncated_embedding_names_offset() {
        let m = IndexManifest::with_dim(128, Dtype::F32);
        let mut buf = Vec::new();
        write_corpus(&[one_token_doc(128)], &m, &mut buf).unwrap();
        // drop the last component: a 127-value embedding under d=128
        buf.truncate(buf.len() - 4);
        let err = read_corpus(&buf[..]).unwrap_err();
        match err {
            Error::Corrupt { offset, .. } => assert_eq!(offset as usize, buf.len() - 127 * 4),
            other => panic!("expected corruption error, got {other:?}"),
        }
    }

    #[test]
    fn trailing_bytes_are_rejected() {
        let m = IndexManifest::with_dim(4, Dtype::F32);
        let mut buf = Vec::new();
        write_corpus(&[one_token_doc(4)], &m, &mut buf).unwrap();
        buf.push(0);
        assert!(matches!(read_corpus(&buf[..]), Err(Error::Corrupt { .. })));
    }

    #[test]
    fn invariant_violation_on_load_names_doc() {
        let m = IndexManifest::with_dim(4, Dtype::F32);
        let mut buf = Vec::new();
        write_corpus(&[one_token_doc(4)], &m, &mut buf).unwrap();
        // position field of the only token: header 41, doc head 11, token_id 4, flags 1
        let pos = 41 + 11 + 5;
        buf[pos] = 3;
        match read_corpus(&buf[..]).unwrap_err() {
            Error::Validation { doc_id, .. } => assert_eq!(doc_id, "doc-1"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn write_rejects_duplicates_and_bad_dims() {
        let m = IndexManifest::with_dim(4, Dtype::F32);
        let d = one_token_doc(4);
        assert!(matches!(
            write_corpus(&[d.clone(), d], &m, Vec::new()),
            Err(Error::DuplicateDocId(_))
        ));
        match write_corpus(&[one_token_doc(3)], &m, Vec::new()) {
            Err(Error::DimensionMismatch { context, .. }) => assert_eq!(context, "doc-1"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn f16_overflow_is_rejected() {
        let m = IndexManifest::with_dim(1, Dtype::F16);
        let doc = EncodedDocument::new("big", vec![TokenRecord::new(0, 0, vec![1.0e6])]);
        assert!(write_corpus(&[doc], &m, Vec::new()).is_err());
    }
}
