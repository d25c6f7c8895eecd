//! Streaming corpus filter. Lines are read in fixed-size chunks, decided in
//! parallel, and written back in input order, so memory stays bounded by the
//! chunk size and output ordering never depends on scheduling.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::filter::{filter_record, ClipRecord, Decision, FilterPolicy, RejectReason};
use crate::error::{Error, Result};
use crate::util::write_atomic;

const CHUNK_LINES: usize = 4096;

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterStats {
    pub total: u64,
    pub kept: u64,
    pub rejected: BTreeMap<RejectReason, u64>,
    /// Unparseable lines counted under `skip_bad`.
    pub malformed: u64,
}

impl FilterStats {
    pub fn rejected_total(&self) -> u64 {
        self.rejected.values().sum()
    }

    pub fn merge(&mut self, other: &FilterStats) {
        self.total += other.total;
        self.kept += other.kept;
        self.malformed += other.malformed;
        for (r, n) in &other.rejected {
            *self.rejected.entry(*r).or_default() += n;
        }
    }

    /// Plain-text table for terminals.
    pub fn summary(&self) -> String {
        let mut rows = vec![("kept".to_string(), self.kept)];
        rows.extend(self.rejected.iter().map(|(r, n)| (format!("reject:{r}"), *n)));
        if self.malformed > 0 {
            rows.push(("malformed".into(), self.malformed));
        }
        rows.push(("total".into(), self.total));
        let w = rows.iter().map(|(l, _)| l.len()).max().unwrap_or(0);
        rows.iter().map(|(l, n)| format!("{l:<w$} {n:>8}\n")).collect()
    }
}

#[derive(Clone, Debug, Default)]
pub struct CorpusOptions {
    pub skip_bad: bool,
    pub stats_path: Option<PathBuf>,
}

enum Outcome {
    Blank,
    Decided(Decision),
    Malformed(Error),
}

fn decide_chunk(lines: &[(usize, String)], policy: &FilterPolicy) -> Vec<Outcome> {
    lines
        .par_iter()
        .map(|(no, text)| {
            if text.trim().is_empty() {
                return Outcome::Blank;
            }
            match ClipRecord::parse_line(text, *no) {
                Ok(r) => Outcome::Decided(filter_record(r, policy)),
                Err(e) => Outcome::Malformed(e),
            }
        })
        .collect()
}

fn tmp_sibling(path: &Path) -> PathBuf {
    let mut name = std::ffi::OsString::from(".");
    name.push(path.file_name().unwrap_or_default());
    name.push(".tmp");
    path.with_file_name(name)
}

/// Filters a JSONL file of clip metadata, writing kept lines verbatim to
/// `output`. The output appears only when the whole pass succeeds.
pub fn run_filter_corpus(
    input: impl AsRef<Path>,
    policy: &FilterPolicy,
    output: impl AsRef<Path>,
    opts: &CorpusOptions,
) -> Result<FilterStats> {
    let (input, output) = (input.as_ref(), output.as_ref());
    let file = File::open(input).map_err(|e| Error::io(input, e))?;
    let tmp = tmp_sibling(output);
    let result = (|| {
        let out = File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        let mut writer = BufWriter::new(out);
        let stats = stream(BufReader::new(file), input, policy, &mut writer, &tmp, opts)?;
        writer.flush().map_err(|e| Error::io(&tmp, e))?;
        Ok(stats)
    })();
    let stats = match result {
        Ok(s) => s,
        Err(e) => {
            let _ = fs::remove_file(&tmp);
            return Err(e);
        }
    };
    fs::rename(&tmp, output).map_err(|e| Error::io(output, e))?;
    if let Some(p) = &opts.stats_path {
        write_atomic(p, &serde_json::to_vec_pretty(&stats.rejected)?)?;
    }
    Ok(stats)
}

fn stream<R: BufRead, W: Write>(
    mut reader: R,
    input: &Path,
    policy: &FilterPolicy,
    writer: &mut W,
    out_path: &Path,
    opts: &CorpusOptions,
) -> Result<FilterStats> {
    let mut stats = FilterStats::default();
    let mut offset = 0u64;
    let mut line_no = 0usize;
    let mut chunk: Vec<(usize, String)> = Vec::with_capacity(CHUNK_LINES);
    let mut eof = false;
    while !eof {
        chunk.clear();
        while chunk.len() < CHUNK_LINES {
            let mut buf = Vec::new();
            let n = reader
                .read_until(b'\n', &mut buf)
                .map_err(|e| Error::IoAt { path: input.to_path_buf(), offset, source: e })?;
            if n == 0 {
                eof = true;
                break;
            }
            offset += n as u64;
            line_no += 1;
            while buf.last().is_some_and(|b| *b == b'\n' || *b == b'\r') {
                buf.pop();
            }
            let text = match String::from_utf8(buf) {
                Ok(t) => t,
                Err(_) if opts.skip_bad => {
                    stats.total += 1;
                    stats.malformed += 1;
                    continue;
                }
                Err(_) => return Err(Error::Record { line: line_no, msg: "invalid UTF-8".into() }),
            };
            chunk.push((line_no, text));
        }
        for ((_, text), outcome) in chunk.iter().zip(decide_chunk(&chunk, policy)) {
            match outcome {
                Outcome::Blank => continue,
                Outcome::Malformed(e) if !opts.skip_bad => return Err(e),
                Outcome::Malformed(_) => stats.malformed += 1,
                Outcome::Decided(Decision::Keep) => {
                    stats.kept += 1;
                    writer
                        .write_all(text.as_bytes())
                        .and_then(|_| writer.write_all(b"\n"))
                        .map_err(|e| Error::io(out_path, e))?;
                }
                Outcome::Decided(Decision::Reject(r)) => *stats.rejected.entry(r).or_default() += 1,
            }
            stats.total += 1;
        }
    }
    Ok(stats)
}
