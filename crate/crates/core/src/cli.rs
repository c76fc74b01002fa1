//! `limv` command-line interface: prune, index, search, evaluate, stats.
//!
//! Every command prints a JSON summary on stdout and diagnostics on stderr.
//! Output files are written to a temporary sibling and renamed into place,
//! so a failing command never leaves a partial file behind.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::Serialize;

use crate::corpus::{
    read_corpus, read_queries, write_corpus, Dtype, EncodedDocument, IndexKind, IndexManifest,
    PruningMethod, CORPUS_MAGIC,
};
use crate::error::{Error, Result};
use crate::eval::{self, read_qrels, read_run, write_run, RankedRun};
use crate::index::{build_flat, build_ivf, read_index, write_index, Index, SearchParams, INDEX_MAGIC};
use crate::pruning::{build_idf_table, prune, selection_diagnostics, PrunedDocument, SelectionReport};

/// Environment variable capping worker threads.
pub const THREADS_ENV: &str = "LIMV_THREADS";

#[derive(Debug, Parser)]
#[command(name = "limv", version, about = "Token-pruned late-interaction retrieval")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MethodArg {
    None,
    First,
    Idf,
    Unused,
    Attention,
}

impl From<MethodArg> for PruningMethod {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::None => PruningMethod::None,
            MethodArg::First => PruningMethod::First,
            MethodArg::Idf => PruningMethod::Idf,
            MethodArg::Unused => PruningMethod::Unused,
            MethodArg::Attention => PruningMethod::Attention,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum KindArg {
    Flat,
    Ivf,
}

impl From<KindArg> for IndexKind {
    fn from(k: KindArg) -> Self {
        match k {
            KindArg::Flat => IndexKind::Flat,
            KindArg::Ivf => IndexKind::Ivf,
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Keep at most k tokens per document.
    Prune {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long, value_enum)]
        method: MethodArg,
        /// Token budget per document (typically 10 or 50).
        #[arg(long, default_value_t = 50)]
        k: u32,
    },
    /// Build a flat or IVF index from a corpus file.
    Index {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long, value_enum, default_value = "flat")]
        index_kind: KindArg,
        /// Defaults to ceil(sqrt(total tokens)).
        #[arg(long)]
        n_clusters: Option<u32>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Rank documents for every query and write a TREC run file.
    Search {
        #[arg(long)]
        index: PathBuf,
        #[arg(long)]
        queries: PathBuf,
        #[arg(long)]
        output: PathBuf,
        /// Search strategy; defaults to the index's own kind.
        #[arg(long, value_enum)]
        index_kind: Option<KindArg>,
        #[arg(long, default_value_t = 1000)]
        top_n: usize,
        /// Partitions probed per query token [default: min(128, n_clusters)].
        #[arg(long)]
        nprobe: Option<usize>,
        #[arg(long, default_value_t = 8192)]
        token_topk: usize,
        #[arg(long, default_value = "limv")]
        tag: String,
    },
    /// Compute MRR and Recall of a run against qrels.
    Evaluate {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        qrels: PathBuf,
        #[arg(long, default_value_t = 10)]
        mrr_k: usize,
        #[arg(long, default_value_t = 1000)]
        recall_k: usize,
        /// Index searched to produce the run, for size accounting.
        #[arg(long)]
        index: Option<PathBuf>,
        /// Unpruned corpus, for retention (requires --index).
        #[arg(long)]
        original: Option<PathBuf>,
        /// Also write the report here.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Token counts, retention and size of a corpus or index file.
    Stats {
        #[arg(long)]
        input: PathBuf,
        /// Unpruned corpus the input was derived from.
        #[arg(long)]
        original: Option<PathBuf>,
    },
}

/// Parses `argv` (including the program name), runs the command and
/// returns the process exit status.
pub fn run_command<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    configure_threads();
    match execute(cli.command) {
        Ok(report) => {
            println!("{report}");
            0
        }
        Err(e) => {
            eprintln!("limv: {e}");
            1
        }
    }
}

fn configure_threads() {
    if let Some(n) = std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
    {
        // a pool may already exist when embedded in tests
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
}

fn to_json<T: Serialize>(value: &T) -> Result<String> {
    serde_json::to_string_pretty(value).map_err(|e| Error::Config(e.to_string()))
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

/// Writes through a temporary file in the destination directory and
/// renames it over `path` only when `body` succeeds.
fn write_atomic<T>(path: &Path, body: impl FnOnce(&mut dyn Write) -> Result<T>) -> Result<T> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let tmp = tempfile::NamedTempFile::new_in(dir)?;
    let mut w = BufWriter::new(tmp);
    let out = body(&mut w)?;
    let tmp = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(out)
}

fn sniff_magic(path: &Path) -> Result<[u8; 4]> {
    let mut magic = [0u8; 4];
    open(path)?.read_exact(&mut magic)?;
    Ok(magic)
}

pub fn execute(command: Command) -> Result<String> {
    match command {
        Command::Prune {
            input,
            output,
            method,
            k,
        } => cmd_prune(&input, &output, method.into(), k),
        Command::Index {
            input,
            output,
            index_kind,
            n_clusters,
            seed,
        } => cmd_index(&input, &output, index_kind.into(), n_clusters, seed),
        Command::Search {
            index,
            queries,
            output,
            index_kind,
            top_n,
            nprobe,
            token_topk,
            tag,
        } => cmd_search(
            &index,
            &queries,
            &output,
            index_kind.map(Into::into),
            top_n,
            nprobe,
            token_topk,
            &tag,
        ),
        Command::Evaluate {
            run,
            qrels,
            mrr_k,
            recall_k,
            index,
            original,
            output,
        } => cmd_evaluate(
            &run,
            &qrels,
            mrr_k,
            recall_k,
            index.as_deref(),
            original.as_deref(),
            output.as_deref(),
        ),
        Command::Stats { input, original } => cmd_stats(&input, original.as_deref()),
    }
}

#[derive(Serialize)]
struct PruneSummary {
    documents_in: usize,
    documents_out: usize,
    /// Documents left with no eligible token and therefore not written.
    dropped: Vec<String>,
    selection: Vec<SelectionReport>,
}

fn cmd_prune(input: &Path, output: &Path, method: PruningMethod, k: u32) -> Result<String> {
    let (manifest, docs) = read_corpus(open(input)?)?;
    if manifest.pruning != PruningMethod::None {
        return Err(Error::Config(format!(
            "{} is already pruned ({} k={})",
            input.display(),
            manifest.pruning,
            manifest.k
        )));
    }
    let out_manifest = IndexManifest {
        pruning: method,
        k: if method == PruningMethod::None { 0 } else { k },
        ..manifest
    };
    out_manifest.validate()?;
    let table = match method {
        PruningMethod::Idf => Some(build_idf_table(&docs)?),
        _ => None,
    };
    let pruned: Vec<PrunedDocument> = docs
        .par_iter()
        .map(|d| prune(d, method, k as usize, table.as_ref()))
        .collect::<Result<_>>()?;
    let selection = selection_diagnostics(&pruned);

    let mut dropped = Vec::new();
    let mut kept_docs: Vec<EncodedDocument> = Vec::with_capacity(pruned.len());
    for p in pruned {
        if p.kept.is_empty() {
            eprintln!("limv: document {:?} has no eligible tokens, dropped", p.doc_id);
            dropped.push(p.doc_id);
        } else {
            kept_docs.push(p.into_document());
        }
    }
    write_atomic(output, |w| write_corpus(&kept_docs, &out_manifest, w))?;
    to_json(&PruneSummary {
        documents_in: docs.len(),
        documents_out: kept_docs.len(),
        dropped,
        selection,
    })
}

#[derive(Serialize)]
struct IndexSummary {
    index_kind: IndexKind,
    documents: usize,
    tokens: usize,
    n_clusters: u32,
    seed: u64,
    payload_bytes: u64,
    file_bytes: u64,
}

fn cmd_index(
    input: &Path,
    output: &Path,
    kind: IndexKind,
    n_clusters: Option<u32>,
    seed: u64,
) -> Result<String> {
    let (manifest, docs) = read_corpus(open(input)?)?;
    let manifest = IndexManifest { seed, ..manifest };
    let index = match kind {
        IndexKind::Flat => Index::Flat(build_flat(docs, &manifest)?),
        IndexKind::Ivf => {
            if n_clusters == Some(0) {
                return Err(Error::Config("--n-clusters must be >= 1".into()));
            }
            Index::Ivf(build_ivf(docs, &manifest, n_clusters.map(|n| n as usize), seed)?)
        }
    };
    let file_bytes = write_atomic(output, |w| write_index(&index, w))?;
    let m = index.manifest();
    let flat = index.flat();
    to_json(&IndexSummary {
        index_kind: m.index_kind,
        documents: flat.len(),
        tokens: flat.total_tokens(),
        n_clusters: m.n_clusters,
        seed: m.seed,
        payload_bytes: eval::index_size_bytes(
            flat.total_tokens() as u64,
            m.d as u64,
            m.dtype.bytes_per_dim() as u64,
        ),
        file_bytes,
    })
}

#[derive(Serialize)]
struct SearchSummary {
    queries: usize,
    rows: usize,
    index_kind: IndexKind,
    params: SearchParams,
}

#[allow(clippy::too_many_arguments)]
fn cmd_search(
    index_path: &Path,
    queries_path: &Path,
    output: &Path,
    kind: Option<IndexKind>,
    top_n: usize,
    nprobe: Option<usize>,
    token_topk: usize,
    tag: &str,
) -> Result<String> {
    let index = read_index(open(index_path)?)?;
    let (qm, queries) = read_queries(open(queries_path)?)?;
    let im = index.manifest();
    if qm.d != im.d {
        return Err(Error::DimensionMismatch {
            context: queries_path.display().to_string(),
            expected: im.d as usize,
            found: qm.d as usize,
        });
    }
    let n_clusters = im.n_clusters as usize;
    let params = SearchParams {
        top_n,
        nprobe: nprobe.unwrap_or_else(|| SearchParams::default().nprobe.min(n_clusters.max(1))),
        token_topk,
    };
    let kind = kind.unwrap_or(im.index_kind);

    let mut run = RankedRun::new();
    let mut rows = 0;
    for q in &queries {
        let hits = index.search(q, &params, Some(kind))?;
        rows += hits.len();
        run.insert_hits(q.query_id.clone(), hits)?;
    }
    write_atomic(output, |w| write_run(&run, tag, w))?;
    to_json(&SearchSummary {
        queries: queries.len(),
        rows,
        index_kind: kind,
        params,
    })
}

fn cmd_evaluate(
    run_path: &Path,
    qrels_path: &Path,
    mrr_k: usize,
    recall_k: usize,
    index_path: Option<&Path>,
    original: Option<&Path>,
    output: Option<&Path>,
) -> Result<String> {
    let run = read_run(open(run_path)?)?;
    let qrels = read_qrels(open(qrels_path)?)?;
    let mut report = eval::evaluate(&run, &qrels, mrr_k, recall_k)?;
    if let Some(path) = index_path {
        let index = read_index(open(path)?)?;
        let m = index.manifest();
        let tokens = index.flat().total_tokens() as u64;
        report.index_bytes = Some(eval::index_size_bytes(
            tokens,
            m.d as u64,
            m.dtype.bytes_per_dim() as u64,
        ));
        if let Some(orig) = original {
            let (_, docs) = read_corpus(open(orig)?)?;
            let original_tokens = docs.iter().map(|d| d.len() as u64).sum();
            report.token_retention = Some(eval::retention(tokens, original_tokens)?);
        }
    } else if original.is_some() {
        return Err(Error::Config("--original requires --index".into()));
    }
    let json = to_json(&report)?;
    if let Some(path) = output {
        write_atomic(path, |w| Ok(w.write_all(json.as_bytes())?))?;
    }
    Ok(json)
}

#[derive(Serialize)]
struct StatsReport {
    file: String,
    kind: &'static str,
    manifest: IndexManifest,
    documents: usize,
    tokens: u64,
    /// Embedding payload at the stored dtype.
    payload_bytes: u64,
    /// Embedding payload if stored as f16 (2 bytes per dimension).
    payload_bytes_f16: u64,
    file_bytes: u64,
    retention: Option<f64>,
    selection: Option<Vec<SelectionReport>>,
}

fn cmd_stats(input: &Path, original: Option<&Path>) -> Result<String> {
    let file_bytes = std::fs::metadata(input)?.len();
    let magic = sniff_magic(input)?;
    let (kind, manifest, docs): (&'static str, IndexManifest, Vec<EncodedDocument>) =
        if magic == CORPUS_MAGIC {
            let (m, d) = read_corpus(open(input)?)?;
            ("corpus", m, d)
        } else if magic == INDEX_MAGIC {
            let index = read_index(open(input)?)?;
            let m = *index.manifest();
            ("index", m, index.flat().documents().to_vec())
        } else {
            return Err(Error::Format(format!(
                "{} is neither a corpus nor an index file",
                input.display()
            )));
        };
    let tokens: u64 = docs.iter().map(|d| d.len() as u64).sum();
    let (retention, selection) = match original {
        None => (None, None),
        Some(path) => {
            let (_, orig) = read_corpus(open(path)?)?;
            let original_tokens: u64 = orig.iter().map(|d| d.len() as u64).sum();
            let mut by_id: HashMap<&str, &EncodedDocument> =
                docs.iter().map(|d| (d.doc_id.as_str(), d)).collect();
            let mut pruned = Vec::with_capacity(orig.len());
            for o in &orig {
                let kept = by_id.remove(o.doc_id.as_str()).map(|d| d.tokens.clone());
                pruned.push(PrunedDocument {
                    doc_id: o.doc_id.clone(),
                    kept: kept.unwrap_or_default(),
                    method: manifest.pruning,
                    k: manifest.k as usize,
                    original_len: o.len(),
                });
            }
            if let Some(extra) = by_id.keys().next() {
                return Err(Error::Config(format!(
                    "document {extra:?} is missing from the original corpus"
                )));
            }
            (
                Some(eval::retention(tokens, original_tokens)?),
                Some(selection_diagnostics(&pruned)),
            )
        }
    };
    to_json(&StatsReport {
        file: input.display().to_string(),
        kind,
        manifest,
        documents: docs.len(),
        tokens,
        payload_bytes: eval::index_size_bytes(
            tokens,
            manifest.d as u64,
            manifest.dtype.bytes_per_dim() as u64,
        ),
        payload_bytes_f16: eval::index_size_bytes(
            tokens,
            manifest.d as u64,
            Dtype::F16.bytes_per_dim() as u64,
        ),
        file_bytes,
        retention,
        selection,
    })
}
