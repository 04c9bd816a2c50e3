//! Cross-source near-duplicate removal by word n-gram shingle overlap.
//!
//! Documents are judged one at a time in manifest priority order against an
//! index of every shingle already kept. A document with at least
//! `short_doc_words` words is dropped when the fraction of its shingles already
//! present in the index reaches `overlap_threshold`; shorter documents are
//! dropped only on an exact match of their normalized text. A kept document's
//! shingles are committed before the next document is judged, so the result is
//! fully defined by input order.
//!
//! Shingle hashes are XXH64 of the window's words joined by a single space,
//! seeded with [`SHINGLE_SEED`], which keeps persisted indexes portable.

use std::collections::HashSet;
use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use unicode_normalization::UnicodeNormalization;
use xxhash_rust::xxh64::xxh64;

use crate::corpus::Document;

/// Published seed for every shingle and exact-text hash ("gaelforg").
pub const SHINGLE_SEED: u64 = 0x6761_656c_666f_7267;

pub const INDEX_MAGIC: &[u8; 4] = b"GFDX";
pub const INDEX_VERSION: u16 = 1;

#[derive(Debug, Error)]
pub enum DedupError {
    #[error("invalid dedup config: {0}")]
    InvalidConfig(String),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{}: {message}", path.display())]
    Format { path: PathBuf, message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DedupConfig {
    pub n: usize,
    pub overlap_threshold: f64,
    pub short_doc_words: usize,
}

impl Default for DedupConfig {
    fn default() -> Self {
        DedupConfig {
            n: 5,
            overlap_threshold: 0.7,
            short_doc_words: 5,
        }
    }
}

impl DedupConfig {
    pub fn validate(&self) -> Result<(), DedupError> {
        if self.n < 1 || self.n > u16::MAX as usize {
            return Err(DedupError::InvalidConfig(format!("n = {} must be in 1..=65535", self.n)));
        }
        if !(self.overlap_threshold > 0.0 && self.overlap_threshold <= 1.0) {
            return Err(DedupError::InvalidConfig(format!(
                "overlap_threshold = {} must be in (0, 1]",
                self.overlap_threshold
            )));
        }
        Ok(())
    }
}

/// Lowercased, NFC-normalized, whitespace-split words.
pub fn normalize_words(text: &str) -> Vec<String> {
    let normalized: String = text.nfc().collect();
    normalized
        .to_lowercase()
        .split_whitespace()
        .map(str::to_string)
        .collect()
}

fn hash_words(words: &[String]) -> u64 {
    xxh64(words.join(" ").as_bytes(), SHINGLE_SEED)
}

/// Distinct n-gram hashes of one text, sorted ascending.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ShingleSet {
    pub hashes: Vec<u64>,
    pub n: usize,
    pub word_count: usize,
}

fn shingle_words(words: &[String], n: usize) -> ShingleSet {
    assert!(n >= 1, "shingle width must be at least 1");
    let mut hashes: Vec<u64> = words.windows(n).map(hash_words).collect();
    hashes.sort_unstable();
    hashes.dedup();
    ShingleSet {
        hashes,
        n,
        word_count: words.len(),
    }
}

/// Hashes every window of `n` consecutive normalized words.
pub fn shingle(text: &str, n: usize) -> ShingleSet {
    shingle_words(&normalize_words(text), n)
}

/// Everything needed to judge one document.
#[derive(Debug, Clone)]
pub struct Candidate {
    pub shingles: ShingleSet,
    pub exact: u64,
}

impl Candidate {
    pub fn new(text: &str, n: usize) -> Self {
        let words = normalize_words(text);
        Candidate {
            exact: hash_words(&words),
            shingles: shingle_words(&words, n),
        }
    }
}

/// Shingles and exact-text hashes of all kept documents.
#[derive(Debug, Clone, Default)]
pub struct DedupIndex {
    n: usize,
    shingles: HashSet<u64>,
    exact: HashSet<u64>,
}

impl DedupIndex {
    pub fn new(n: usize) -> Self {
        DedupIndex {
            n,
            ..Default::default()
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Distinct shingle hashes held.
    pub fn len(&self) -> usize {
        self.shingles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.shingles.is_empty()
    }

    /// Fraction of the candidate's shingles already in the index; 0 when it has none.
    pub fn overlap(&self, c: &Candidate) -> f64 {
        let total = c.shingles.hashes.len();
        if total == 0 {
            return 0.0;
        }
        let hits = c
            .shingles
            .hashes
            .iter()
            .filter(|h| self.shingles.contains(h))
            .count();
        hits as f64 / total as f64
    }

    pub fn is_duplicate(&self, c: &Candidate, cfg: &DedupConfig) -> bool {
        if c.shingles.word_count < cfg.short_doc_words {
            self.exact.contains(&c.exact)
        } else {
            self.overlap(c) >= cfg.overlap_threshold
        }
    }

    pub fn commit(&mut self, c: &Candidate) {
        self.shingles.extend(c.shingles.hashes.iter().copied());
        self.exact.insert(c.exact);
    }

    /// Writes the shingle hashes: `GFDX`, u16 version, u16 n, u64 count, sorted u64s.
    pub fn write_to<W: Write>(&self, mut w: W) -> io::Result<()> {
        let mut hashes: Vec<u64> = self.shingles.iter().copied().collect();
        hashes.sort_unstable();
        w.write_all(INDEX_MAGIC)?;
        w.write_all(&INDEX_VERSION.to_le_bytes())?;
        w.write_all(&(self.n as u16).to_le_bytes())?;
        w.write_all(&(hashes.len() as u64).to_le_bytes())?;
        for h in hashes {
            w.write_all(&h.to_le_bytes())?;
        }
        w.flush()
    }

    pub fn save(&self, path: &Path) -> Result<(), DedupError> {
        let io_err = |e| DedupError::Io {
            path: path.to_path_buf(),
            source: e,
        };
        let file = File::create(path).map_err(io_err)?;
        self.write_to(BufWriter::new(file)).map_err(io_err)
    }

    /// Loads a persisted index. Exact-text hashes are not persisted, so short
    /// documents are judged only against those kept after loading.
    pub fn load(path: &Path) -> Result<Self, DedupError> {
        let io_err = |e| DedupError::Io {
            path: path.to_path_buf(),
            source: e,
        };
        let fmt_err = |m: &str| DedupError::Format {
            path: path.to_path_buf(),
            message: m.to_string(),
        };
        let mut bytes = Vec::new();
        BufReader::new(File::open(path).map_err(io_err)?)
            .read_to_end(&mut bytes)
            .map_err(io_err)?;
        if bytes.len() < 16 {
            return Err(fmt_err("truncated header"));
        }
        if &bytes[0..4] != INDEX_MAGIC {
            return Err(fmt_err("bad magic, not a dedup index"));
        }
        let version = u16::from_le_bytes([bytes[4], bytes[5]]);
        if version != INDEX_VERSION {
            return Err(fmt_err(&format!("unsupported index version {version}")));
        }
        let n = u16::from_le_bytes([bytes[6], bytes[7]]) as usize;
        let count = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let body = &bytes[16..];
        if body.len() != count.saturating_mul(8) {
            return Err(fmt_err("hash count does not match file length"));
        }
        let shingles = body
            .chunks_exact(8)
            .map(|c| u64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok(DedupIndex {
            n,
            shingles,
            exact: HashSet::new(),
        })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceDedupStats {
    pub source: String,
    pub kept: u64,
    pub dropped: u64,
    pub dropped_chars: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DedupReport {
    pub sources: Vec<SourceDedupStats>,
    pub index_size: u64,
}

impl DedupReport {
    fn entry(&mut self, source: &str) -> &mut SourceDedupStats {
        let pos = match self.sources.iter().position(|s| s.source == source) {
            Some(p) => p,
            None => {
                self.sources.push(SourceDedupStats {
                    source: source.to_string(),
                    ..Default::default()
                });
                self.sources.len() - 1
            }
        };
        &mut self.sources[pos]
    }
}

/// Streaming deduplicator holding the kept-shingle index.
#[derive(Debug)]
pub struct Deduper {
    cfg: DedupConfig,
    index: DedupIndex,
    report: DedupReport,
}

impl Deduper {
    pub fn new(cfg: DedupConfig) -> Result<Self, DedupError> {
        cfg.validate()?;
        Ok(Deduper {
            index: DedupIndex::new(cfg.n),
            cfg,
            report: DedupReport::default(),
        })
    }

    /// Continues from a previously persisted index.
    pub fn with_index(cfg: DedupConfig, index: DedupIndex) -> Result<Self, DedupError> {
        cfg.validate()?;
        if index.n() != cfg.n {
            return Err(DedupError::InvalidConfig(format!(
                "index was built with n = {}, config has n = {}",
                index.n(),
                cfg.n
            )));
        }
        Ok(Deduper {
            cfg,
            index,
            report: DedupReport::default(),
        })
    }

    /// Registers a source so it is reported even when empty.
    pub fn begin_source(&mut self, source: &str) {
        self.report.entry(source);
    }

    /// Judges and, if kept, commits one prepared document. Returns whether it was kept.
    pub fn judge(&mut self, doc: &Document, cand: &Candidate) -> bool {
        let dup = self.index.is_duplicate(cand, &self.cfg);
        let stats = self.report.entry(&doc.source);
        if dup {
            stats.dropped += 1;
            stats.dropped_chars += doc.char_count();
        } else {
            stats.kept += 1;
            self.index.commit(cand);
        }
        !dup
    }

    pub fn process(&mut self, doc: &Document) -> bool {
        let cand = Candidate::new(&doc.text, self.cfg.n);
        self.judge(doc, &cand)
    }

    /// Prepares a batch on the rayon pool, then judges it in order.
    pub fn process_batch(&mut self, docs: Vec<Document>) -> Vec<Document> {
        let n = self.cfg.n;
        let cands: Vec<Candidate> = docs.par_iter().map(|d| Candidate::new(&d.text, n)).collect();
        docs.into_iter()
            .zip(cands)
            .filter_map(|(d, c)| self.judge(&d, &c).then_some(d))
            .collect()
    }

    pub fn index(&self) -> &DedupIndex {
        &self.index
    }

    pub fn report(&self) -> DedupReport {
        DedupReport {
            index_size: self.index.len() as u64,
            ..self.report.clone()
        }
    }

    pub fn finish(self) -> (DedupIndex, DedupReport) {
        let report = self.report();
        (self.index, report)
    }
}

/// Reference path: judges documents one by one on the calling thread.
/// `sources` must be in manifest priority order.
pub fn dedup_stream<S, I, E>(sources: S, cfg: &DedupConfig) -> Result<(Vec<Document>, DedupReport), E>
where
    S: IntoIterator<Item = (String, I)>,
    I: IntoIterator<Item = Result<Document, E>>,
    E: From<DedupError>,
{
    let mut deduper = Deduper::new(cfg.clone())?;
    let mut kept = Vec::new();
    for (name, docs) in sources {
        deduper.begin_source(&name);
        for doc in docs {
            let doc = doc?;
            if deduper.process(&doc) {
                kept.push(doc);
            }
        }
    }
    Ok((kept, deduper.finish().1))
}

const PARALLEL_BATCH: usize = 1024;

/// Same result as [`dedup_stream`]; shingling runs on the rayon pool while
/// index commits stay serialized in priority order.
pub fn dedup_stream_parallel<S, I, E>(
    sources: S,
    cfg: &DedupConfig,
) -> Result<(Vec<Document>, DedupReport), E>
where
    S: IntoIterator<Item = (String, I)>,
    I: IntoIterator<Item = Result<Document, E>>,
    E: From<DedupError>,
{
    let mut deduper = Deduper::new(cfg.clone())?;
    let mut kept = Vec::new();
    for (name, docs) in sources {
        deduper.begin_source(&name);
        let mut iter = docs.into_iter();
        loop {
            let batch: Vec<Document> = iter.by_ref().take(PARALLEL_BATCH).collect::<Result<_, E>>()?;
            if batch.is_empty() {
                break;
            }
            kept.extend(deduper.process_batch(batch));
        }
    }
    Ok((kept, deduper.finish().1))
}
