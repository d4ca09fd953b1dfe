//! Streaming corpus generation. Integers are processed in fixed-size
//! segments; each segment is factorized independently (pure, so segments
//! may run on any number of workers) and a single sequencer emits the
//! text in range order. Output bytes are identical for every choice of
//! segment size and worker count.

use super::sieve::{ExponentList, SegmentFactorizer};
use super::words::word_of;
use crate::error::{Error, Result};
use crate::util::sha256_hex_of;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

/// Aggregate counters for a generated range. Merging two stats objects
/// for adjacent ranges gives the stats of the union, in either order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub n_start: u64,
    pub n_end: u64,
    pub word_count: u64,
    pub prime_count: u64,
    pub squarefree_count: u64,
    /// Occurrences per distinct word, ordered for stable serialization.
    pub frequency: BTreeMap<String, u64>,
}

impl CorpusStats {
    pub fn distinct_words(&self) -> u64 {
        self.frequency.len() as u64
    }

    /// Absorb the stats of an adjacent range.
    pub fn merge(&mut self, other: &CorpusStats) -> Result<()> {
        if other.n_start == self.n_end + 1 {
            self.n_end = other.n_end;
        } else if other.n_end + 1 == self.n_start {
            self.n_start = other.n_start;
        } else {
            return Err(Error::Domain(format!(
                "cannot merge stats of [{}, {}] and [{}, {}]: ranges not adjacent",
                self.n_start, self.n_end, other.n_start, other.n_end
            )));
        }
        self.word_count += other.word_count;
        self.prime_count += other.prime_count;
        self.squarefree_count += other.squarefree_count;
        for (w, c) in &other.frequency {
            *self.frequency.entry(w.clone()).or_insert(0) += c;
        }
        Ok(())
    }
}

/// Summary of a finished corpus file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub n_start: u64,
    pub n_end: u64,
    pub bytes: u64,
    pub word_count: u64,
    pub sha256: String,
}

/// Restart metadata kept next to a corpus file while generation runs.
/// `next_n` is the first integer whose word has not been written yet.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct Progress {
    n_start: u64,
    n_end: u64,
    segment_size: u64,
    next_n: u64,
    bytes: u64,
    stats: Option<CorpusStats>,
}

/// Words of every exponent value we can meet (exponents of a u64 are at
/// most 63). Index a holds w(a); entries 0 and 1 are unused.
fn exponent_words() -> Vec<String> {
    let mut table = vec![String::new(); 65];
    for (a, slot) in table.iter_mut().enumerate().skip(2) {
        *slot = word_of(a as u128)
            .expect("small exponents always factorize")
            .as_str()
            .to_string();
    }
    table
}

/// Render one segment: text (with a leading space unless the segment
/// opens the corpus) plus its local stats.
fn render_segment(
    fac: &SegmentFactorizer,
    lo: u64,
    hi: u64,
    lead_space: bool,
    exp_words: &[String],
) -> Result<(String, CorpusStats)> {
    let exps = fac.exponents(lo, hi)?;
    let mut text = String::with_capacity(exps.len() * 10);
    let mut frequency: BTreeMap<String, u64> = BTreeMap::new();
    let mut prime_count = 0u64;
    let mut squarefree_count = 0u64;
    for (i, e) in exps.iter().enumerate() {
        if lead_space || i > 0 {
            text.push(' ');
        }
        let word_start = text.len();
        push_word(e, exp_words, &mut text);
        let word = &text[word_start..];
        if word == "10" {
            prime_count += 1;
        }
        if e.iter().all(|&a| a == 1) {
            squarefree_count += 1;
        }
        *frequency.entry(word.to_string()).or_insert(0) += 1;
    }
    Ok((
        text,
        CorpusStats {
            n_start: lo,
            n_end: hi,
            word_count: hi - lo + 1,
            prime_count,
            squarefree_count,
            frequency,
        },
    ))
}

fn push_word(exponents: &ExponentList, exp_words: &[String], out: &mut String) {
    for &a in exponents {
        out.push('1');
        if a >= 2 {
            out.push_str(&exp_words[a as usize]);
        }
        out.push('0');
    }
}

/// Drive segments from `from` to `n_end`, invoking `emit` in range order
/// with each segment's text and stats. Segments inside a wave run in
/// parallel; the emit order never depends on scheduling.
fn stream_segments<F>(
    n_start: u64,
    n_end: u64,
    segment_size: u64,
    from: u64,
    mut emit: F,
) -> Result<()>
where
    F: FnMut(&str, CorpusStats) -> Result<()>,
{
    if n_start < 2 || n_start > n_end {
        return Err(Error::Domain(format!("bad corpus range [{n_start}, {n_end}]")));
    }
    if segment_size == 0 {
        return Err(Error::Domain("segment_size must be positive".into()));
    }
    if from < n_start {
        return Err(Error::Domain("resume point precedes range start".into()));
    }
    let fac = SegmentFactorizer::new(n_end);
    let exp_words = exponent_words();
    let wave = rayon::current_num_threads().max(1) * 4;
    let mut lo = from;
    while lo <= n_end {
        let mut bounds = Vec::with_capacity(wave);
        let mut x = lo;
        while x <= n_end && bounds.len() < wave {
            let hi = x.saturating_add(segment_size - 1).min(n_end);
            bounds.push((x, hi));
            x = hi + 1;
        }
        let rendered: Result<Vec<(String, CorpusStats)>> = bounds
            .par_iter()
            .map(|&(a, b)| render_segment(&fac, a, b, a > n_start, &exp_words))
            .collect();
        for (text, stats) in rendered? {
            emit(&text, stats)?;
        }
        lo = x;
    }
    Ok(())
}

/// Generate the words of `n_start..=n_end` into `sink`, single-space
/// separated with no trailing separator, returning the range stats.
pub fn generate_corpus<W: Write>(
    n_start: u64,
    n_end: u64,
    segment_size: u64,
    sink: &mut W,
) -> Result<CorpusStats> {
    let mut total: Option<CorpusStats> = None;
    stream_segments(n_start, n_end, segment_size, n_start, |text, stats| {
        sink.write_all(text.as_bytes())?;
        match &mut total {
            Some(t) => t.merge(&stats)?,
            None => total = Some(stats),
        }
        Ok(())
    })?;
    total.ok_or_else(|| Error::Domain("empty range produced no stats".into()))
}

fn progress_path(out: &Path) -> PathBuf {
    sibling(out, ".progress.json")
}

/// Manifest path for a corpus file: `<file>.manifest.json`.
pub fn manifest_path(out: &Path) -> PathBuf {
    sibling(out, ".manifest.json")
}

fn sibling(out: &Path, suffix: &str) -> PathBuf {
    let mut name = out
        .file_name()
        .map(|s| s.to_os_string())
        .unwrap_or_default();
    name.push(suffix);
    out.with_file_name(name)
}

/// Result of [`generate_corpus_file`].
#[derive(Debug, Clone)]
pub struct GenerateOutcome {
    pub stats: CorpusStats,
    pub manifest: CorpusManifest,
    /// True when a partial run was picked up at a segment boundary.
    pub resumed: bool,
}

/// Generate a corpus file plus its `.manifest.json`. A sidecar progress
/// file is updated after every segment; when a matching sidecar already
/// exists, generation resumes from its recorded boundary instead of
/// starting over. The sidecar is removed on completion.
pub fn generate_corpus_file(
    n_start: u64,
    n_end: u64,
    segment_size: u64,
    out: &Path,
) -> Result<GenerateOutcome> {
    let prog_path = progress_path(out);
    let resume = load_resume(&prog_path, n_start, n_end, segment_size, out);
    let (from, bytes_done, mut total) = match &resume {
        Some(p) => (p.next_n, p.bytes, p.stats.clone()),
        None => (n_start, 0, None),
    };
    let resumed = resume.is_some();

    let mut file = fs::OpenOptions::new()
        .read(true)
        .write(true)
        .create(true)
        .truncate(false)
        .open(out)?;
    file.set_len(bytes_done)?;

    // The manifest hash covers the whole file, so fold any kept prefix
    // back into the hasher before continuing.
    let mut hasher = Sha256::new();
    if bytes_done > 0 {
        file.seek(SeekFrom::Start(0))?;
        let mut reader = BufReader::new(&file);
        let mut buf = [0u8; 64 * 1024];
        let mut left = bytes_done;
        while left > 0 {
            let want = buf.len().min(left as usize);
            let got = reader.read(&mut buf[..want])?;
            if got == 0 {
                return Err(Error::Format("corpus file shorter than recorded progress".into()));
            }
            hasher.update(&buf[..got]);
            left -= got as u64;
        }
    }
    file.seek(SeekFrom::End(0))?;

    let mut bytes = bytes_done;
    stream_segments(n_start, n_end, segment_size, from, |text, stats| {
        file.write_all(text.as_bytes())?;
        hasher.update(text.as_bytes());
        bytes += text.len() as u64;
        let next_n = stats.n_end + 1;
        match &mut total {
            Some(t) => t.merge(&stats)?,
            None => total = Some(stats),
        }
        let progress = Progress {
            n_start,
            n_end,
            segment_size,
            next_n,
            bytes,
            stats: total.clone(),
        };
        fs::write(&prog_path, serde_json::to_vec(&progress)?)?;
        Ok(())
    })?;
    file.flush()?;

    let stats = match total {
        Some(t) => t,
        // Fully resumed run: everything was already on disk.
        None => resume
            .and_then(|p| p.stats)
            .ok_or_else(|| Error::Domain("empty range produced no stats".into()))?,
    };
    let manifest = CorpusManifest {
        n_start,
        n_end,
        bytes,
        word_count: stats.word_count,
        sha256: sha256_hex_of(hasher),
    };
    fs::write(manifest_path(out), serde_json::to_vec_pretty(&manifest)?)?;
    let _ = fs::remove_file(&prog_path);
    Ok(GenerateOutcome {
        stats,
        manifest,
        resumed,
    })
}

/// A sidecar is honored only if it describes the same job and the
/// partial corpus file is still at least as long as it records.
fn load_resume(
    prog_path: &Path,
    n_start: u64,
    n_end: u64,
    segment_size: u64,
    out: &Path,
) -> Option<Progress> {
    let data = fs::read(prog_path).ok()?;
    let p: Progress = serde_json::from_slice(&data).ok()?;
    if p.n_start != n_start || p.n_end != n_end || p.segment_size != segment_size {
        return None;
    }
    if p.next_n < n_start || p.next_n > n_end + 1 {
        return None;
    }
    let on_disk = fs::metadata(out).ok()?.len();
    if on_disk < p.bytes {
        return None;
    }
    Some(p)
}

/// Iterator over the space-separated words of a corpus file.
pub struct WordStream<R: BufRead> {
    inner: R,
    done: bool,
}

impl<R: BufRead> WordStream<R> {
    pub fn new(inner: R) -> Self {
        Self { inner, done: false }
    }
}

impl<R: BufRead> Iterator for WordStream<R> {
    type Item = Result<String>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.done {
            return None;
        }
        let mut raw = Vec::new();
        match self.inner.read_until(b' ', &mut raw) {
            Err(e) => {
                self.done = true;
                Some(Err(e.into()))
            }
            Ok(0) => {
                self.done = true;
                None
            }
            Ok(_) => {
                if raw.last() == Some(&b' ') {
                    raw.pop();
                } else {
                    self.done = true; // no delimiter: final word
                }
                match String::from_utf8(raw) {
                    Ok(w) => Some(Ok(w)),
                    Err(_) => {
                        self.done = true;
                        Some(Err(Error::Format("corpus contains non-UTF8 bytes".into())))
                    }
                }
            }
        }
    }
}

/// Open a corpus file as a word iterator.
pub fn open_words(path: &Path) -> Result<WordStream<BufReader<fs::File>>> {
    Ok(WordStream::new(BufReader::new(fs::File::open(path)?)))
}
