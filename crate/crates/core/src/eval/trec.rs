//! TREC-style text files.
//!
//! qrels: `query_id 0 doc_id grade`
//! run:   `query_id Q0 doc_id rank score tag`, score with 6 decimals

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use super::{Qrels, RankedRun, RunEntry};
use crate::error::{Error, Result};

fn fields(line: &str) -> Vec<&str> {
    line.split_whitespace().collect()
}

pub fn read_qrels<R: BufRead>(source: R) -> Result<Qrels> {
    let mut qrels = Qrels::new();
    for (i, line) in source.lines().enumerate() {
        let line = line?;
        let f = fields(&line);
        if f.is_empty() {
            continue;
        }
        if f.len() != 4 {
            return Err(Error::Parse {
                line: i + 1,
                reason: format!("expected 4 fields, found {}", f.len()),
            });
        }
        let grade: u32 = f[3].parse().map_err(|_| Error::Parse {
            line: i + 1,
            reason: format!("grade {:?} is not a non-negative integer", f[3]),
        })?;
        qrels.insert(f[0], f[2], grade);
    }
    Ok(qrels)
}

pub fn write_run<W: Write>(run: &RankedRun, tag: &str, mut destination: W) -> Result<()> {
    if tag.is_empty() || tag.contains(char::is_whitespace) {
        return Err(Error::Config(format!("run tag {tag:?} must be a single word")));
    }
    for (query_id, entries) in run.iter() {
        for e in entries {
            writeln!(
                destination,
                "{query_id} Q0 {} {} {:.6} {tag}",
                e.doc_id, e.rank, e.score
            )?;
        }
    }
    destination.flush()?;
    Ok(())
}

pub fn read_run<R: BufRead>(source: R) -> Result<RankedRun> {
    let mut grouped: BTreeMap<String, Vec<RunEntry>> = BTreeMap::new();
    for (i, line) in source.lines().enumerate() {
        let line = line?;
        let f = fields(&line);
        if f.is_empty() {
            continue;
        }
        if f.len() != 6 {
            return Err(Error::Parse {
                line: i + 1,
                reason: format!("expected 6 fields, found {}", f.len()),
            });
        }
        let rank: usize = f[3].parse().map_err(|_| Error::Parse {
            line: i + 1,
            reason: format!("bad rank {:?}", f[3]),
        })?;
        let score: f32 = f[4].parse().map_err(|_| Error::Parse {
            line: i + 1,
            reason: format!("bad score {:?}", f[4]),
        })?;
        grouped.entry(f[0].to_owned()).or_default().push(RunEntry {
            doc_id: f[2].to_owned(),
            rank,
            score,
        });
    }
    let mut run = RankedRun::new();
    for (q, mut entries) in grouped {
        entries.sort_by_key(|e| e.rank);
        run.insert(q, entries)?;
    }
    Ok(run)
}
