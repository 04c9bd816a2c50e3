//! Corpus manifests, document streams and before/after corpus statistics.

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{self, BufRead, BufReader};
use std::marker::PhantomData;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Tolerance on the sum of mono source weights.
pub const WEIGHT_SUM_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{}:{line}: {message}", path.display())]
    ManifestParse {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("{}:{line}: duplicate source name `{name}`", path.display())]
    DuplicateSource {
        path: PathBuf,
        name: String,
        line: usize,
    },
    #[error("{}:{line}: source `{name}` has weight {weight} outside [0, 1]", path.display())]
    InvalidWeight {
        path: PathBuf,
        name: String,
        line: usize,
        weight: f64,
    },
    #[error("{}: mono source weights sum to {sum} (sources: {}), expected 1.0", path.display(), sources.join(", "))]
    WeightSum {
        path: PathBuf,
        sum: f64,
        sources: Vec<String>,
    },
    #[error("{}: {malformed} of {total} records malformed, input looks corrupt", path.display())]
    CorruptInput {
        path: PathBuf,
        malformed: u64,
        total: u64,
    },
    #[error("source `{0}` appears after processing but not before")]
    UnknownSource(String),
    #[error("source `{source_name}` has {after} chars after processing but only {before} before")]
    CharsGrew {
        source_name: String,
        before: u64,
        after: u64,
    },
}

/// One text record with provenance.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Document {
    pub id: String,
    pub source: String,
    pub lang: String,
    pub text: String,
}

impl Document {
    /// Unicode scalar values in the text.
    pub fn char_count(&self) -> u64 {
        self.text.chars().count() as u64
    }
}

/// Sentence-aligned English/Irish pair.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BitextPair {
    pub id: String,
    pub en: String,
    pub ga: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SourceKind {
    Mono,
    Bitext,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SourceEntry {
    pub name: String,
    pub path: PathBuf,
    pub kind: SourceKind,
    pub weight: f64,
}

/// Ordered list of corpus sources. Order is the deduplication priority.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CorpusManifest {
    pub sources: Vec<SourceEntry>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawManifest {
    sources: Vec<RawSource>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSource {
    name: toml::Spanned<String>,
    path: PathBuf,
    kind: SourceKind,
    weight: f64,
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

impl CorpusManifest {
    /// Parses manifest text. Relative source paths resolve against `base_dir`;
    /// `origin` only labels diagnostics.
    pub fn parse(text: &str, base_dir: &Path, origin: &Path) -> Result<Self, CorpusError> {
        let raw: RawManifest = toml::from_str(text).map_err(|e| CorpusError::ManifestParse {
            path: origin.to_path_buf(),
            line: e.span().map(|s| line_of(text, s.start)).unwrap_or(0),
            message: e.message().to_string(),
        })?;

        let mut seen = HashSet::new();
        let mut sources = Vec::with_capacity(raw.sources.len());
        for src in raw.sources {
            let line = line_of(text, src.name.span().start);
            let name = src.name.into_inner();
            if !seen.insert(name.clone()) {
                return Err(CorpusError::DuplicateSource {
                    path: origin.to_path_buf(),
                    name,
                    line,
                });
            }
            if !(0.0..=1.0).contains(&src.weight) {
                return Err(CorpusError::InvalidWeight {
                    path: origin.to_path_buf(),
                    name,
                    line,
                    weight: src.weight,
                });
            }
            let path = if src.path.is_absolute() {
                src.path
            } else {
                base_dir.join(src.path)
            };
            sources.push(SourceEntry {
                name,
                path,
                kind: src.kind,
                weight: src.weight,
            });
        }

        let manifest = CorpusManifest { sources };
        manifest.check_weights(origin)?;
        Ok(manifest)
    }

    fn check_weights(&self, origin: &Path) -> Result<(), CorpusError> {
        let mono: Vec<&SourceEntry> = self.mono_sources().collect();
        if mono.is_empty() {
            return Ok(());
        }
        let sum: f64 = mono.iter().map(|s| s.weight).sum();
        if (sum - 1.0).abs() > WEIGHT_SUM_TOLERANCE {
            return Err(CorpusError::WeightSum {
                path: origin.to_path_buf(),
                sum,
                sources: mono.iter().map(|s| s.name.clone()).collect(),
            });
        }
        Ok(())
    }

    pub fn mono_sources(&self) -> impl Iterator<Item = &SourceEntry> {
        self.sources.iter().filter(|s| s.kind == SourceKind::Mono)
    }

    pub fn bitext_sources(&self) -> impl Iterator<Item = &SourceEntry> {
        self.sources.iter().filter(|s| s.kind == SourceKind::Bitext)
    }

    pub fn source(&self, name: &str) -> Option<&SourceEntry> {
        self.sources.iter().find(|s| s.name == name)
    }

    /// Renders the manifest as TOML with paths relative to `dir` where possible.
    pub fn to_toml_string(&self, dir: &Path) -> String {
        let mut out = String::new();
        for s in &self.sources {
            let path = s.path.strip_prefix(dir).unwrap_or(&s.path);
            let kind = match s.kind {
                SourceKind::Mono => "mono",
                SourceKind::Bitext => "bitext",
            };
            out.push_str("[[sources]]\n");
            out.push_str(&format!("name = {}\n", toml_string(&s.name)));
            out.push_str(&format!(
                "path = {}\n",
                toml_string(&path.to_string_lossy().replace('\\', "/"))
            ));
            out.push_str(&format!("kind = \"{kind}\"\n"));
            out.push_str(&format!("weight = {:?}\n\n", s.weight));
        }
        out
    }

    /// Writes the manifest to `path`, making source paths relative to its directory.
    pub fn write(&self, path: &Path) -> Result<(), CorpusError> {
        let dir = path.parent().unwrap_or(Path::new("."));
        std::fs::write(path, self.to_toml_string(dir)).map_err(|e| CorpusError::Io {
            path: path.to_path_buf(),
            source: e,
        })
    }
}

fn toml_string(s: &str) -> String {
    toml::Value::String(s.to_string()).to_string()
}

/// Loads and validates a manifest file.
pub fn load_manifest(path: &Path) -> Result<CorpusManifest, CorpusError> {
    let text = std::fs::read_to_string(path).map_err(|e| CorpusError::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    let base = path.parent().unwrap_or(Path::new("."));
    CorpusManifest::parse(&text, base, path)
}

/// A record type a [`RecordReader`] can ingest.
pub trait CorpusRecord: DeserializeOwned {
    fn key(&self) -> &str;
    /// Fills in or checks provenance; `false` marks the record malformed.
    fn accept(&mut self, source: &str) -> bool;
}

#[derive(Deserialize)]
struct RawDocument {
    id: String,
    #[serde(default)]
    source: Option<String>,
    lang: String,
    text: String,
}

impl<'de> Deserialize<'de> for Document {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let raw = RawDocument::deserialize(d)?;
        Ok(Document {
            id: raw.id,
            source: raw.source.unwrap_or_default(),
            lang: raw.lang,
            text: raw.text,
        })
    }
}

impl CorpusRecord for Document {
    fn key(&self) -> &str {
        &self.id
    }

    fn accept(&mut self, source: &str) -> bool {
        if self.id.is_empty() || self.text.is_empty() {
            return false;
        }
        if self.source.is_empty() {
            self.source = source.to_string();
        }
        self.source == source
    }
}

impl CorpusRecord for BitextPair {
    fn key(&self) -> &str {
        &self.id
    }

    fn accept(&mut self, _source: &str) -> bool {
        !self.id.is_empty() && !self.en.is_empty() && !self.ga.is_empty()
    }
}

/// Ordered, lenient reader over a line-delimited corpus file.
///
/// Malformed lines (bad JSON, empty fields, provenance mismatch, repeated id)
/// are skipped and counted. When the file is exhausted and more than half of
/// its records were malformed, the reader yields one final `CorruptInput`.
pub struct RecordReader<R, T> {
    lines: io::Lines<R>,
    path: PathBuf,
    source: String,
    seen: HashSet<String>,
    good: u64,
    malformed: u64,
    finished: bool,
    _marker: PhantomData<T>,
}

impl<R: BufRead, T: CorpusRecord> RecordReader<R, T> {
    pub fn new(reader: R, path: &Path, source: &str) -> Self {
        RecordReader {
            lines: reader.lines(),
            path: path.to_path_buf(),
            source: source.to_string(),
            seen: HashSet::new(),
            good: 0,
            malformed: 0,
            finished: false,
            _marker: PhantomData,
        }
    }

    /// Malformed lines skipped so far.
    pub fn skipped(&self) -> u64 {
        self.malformed
    }
}

impl<R: BufRead, T: CorpusRecord> Iterator for RecordReader<R, T> {
    type Item = Result<T, CorpusError>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.finished {
            return None;
        }
        loop {
            let line = match self.lines.next() {
                Some(Ok(line)) => line,
                Some(Err(e)) => {
                    self.finished = true;
                    return Some(Err(CorpusError::Io {
                        path: self.path.clone(),
                        source: e,
                    }));
                }
                None => {
                    self.finished = true;
                    let total = self.good + self.malformed;
                    if self.malformed > 0 {
                        log::warn!(
                            "{}: skipped {} malformed record(s)",
                            self.path.display(),
                            self.malformed
                        );
                    }
                    if self.malformed * 2 > total {
                        return Some(Err(CorpusError::CorruptInput {
                            path: self.path.clone(),
                            malformed: self.malformed,
                            total,
                        }));
                    }
                    return None;
                }
            };
            if line.trim().is_empty() {
                continue;
            }
            match serde_json::from_str::<T>(&line) {
                Ok(mut rec) => {
                    if rec.accept(&self.source) && self.seen.insert(rec.key().to_string()) {
                        self.good += 1;
                        return Some(Ok(rec));
                    }
                    self.malformed += 1;
                }
                Err(_) => self.malformed += 1,
            }
        }
    }
}

pub type DocumentReader = RecordReader<BufReader<File>, Document>;
pub type BitextReader = RecordReader<BufReader<File>, BitextPair>;

fn open(path: &Path) -> Result<BufReader<File>, CorpusError> {
    File::open(path).map(BufReader::new).map_err(|e| CorpusError::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

/// Streams the documents of a mono source in file order.
pub fn read_documents(source: &SourceEntry) -> Result<DocumentReader, CorpusError> {
    Ok(RecordReader::new(open(&source.path)?, &source.path, &source.name))
}

/// Streams the pairs of a bitext source in file order.
pub fn read_bitext(source: &SourceEntry) -> Result<BitextReader, CorpusError> {
    Ok(RecordReader::new(open(&source.path)?, &source.path, &source.name))
}

/// Per-source character and document counts before and after processing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceStats {
    pub source: String,
    pub chars_before: u64,
    pub chars_after: u64,
    pub docs_before: u64,
    pub docs_after: u64,
    pub ratio_after: f64,
}

/// Incremental accumulator behind [`corpus_stats`].
#[derive(Debug, Default)]
pub struct StatsAccumulator {
    order: Vec<String>,
    before: HashMap<String, (u64, u64)>,
    after: HashMap<String, (u64, u64)>,
}

impl StatsAccumulator {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a source so it appears in the table even with no documents.
    pub fn register(&mut self, source: &str) {
        if !self.before.contains_key(source) {
            self.order.push(source.to_string());
            self.before.insert(source.to_string(), (0, 0));
        }
    }

    pub fn add_before(&mut self, doc: &Document) {
        self.register(&doc.source);
        let e = self.before.get_mut(&doc.source).expect("registered");
        e.0 += doc.char_count();
        e.1 += 1;
    }

    pub fn add_after(&mut self, doc: &Document) {
        let e = self.after.entry(doc.source.clone()).or_default();
        e.0 += doc.char_count();
        e.1 += 1;
    }

    pub fn finish(self) -> Result<Vec<SourceStats>, CorpusError> {
        if let Some(unknown) = self
            .after
            .keys()
            .filter(|k| !self.before.contains_key(*k))
            .min()
        {
            return Err(CorpusError::UnknownSource(unknown.clone()));
        }
        let counts = self.order.iter().map(|name| {
            let (cb, db) = self.before[name];
            let (ca, da) = self.after.get(name).copied().unwrap_or((0, 0));
            SourceCounts {
                source: name.clone(),
                chars_before: cb,
                chars_after: ca,
                docs_before: db,
                docs_after: da,
            }
        });
        stats_from_counts(counts)
    }
}

/// Raw counts for one source, before ratios are computed.
#[derive(Debug, Clone)]
pub struct SourceCounts {
    pub source: String,
    pub chars_before: u64,
    pub chars_after: u64,
    pub docs_before: u64,
    pub docs_after: u64,
}

/// Computes `ratio_after = chars_after / Σ chars_after` for each source.
pub fn stats_from_counts<I>(counts: I) -> Result<Vec<SourceStats>, CorpusError>
where
    I: IntoIterator<Item = SourceCounts>,
{
    let counts: Vec<SourceCounts> = counts.into_iter().collect();
    if let Some(c) = counts.iter().find(|c| c.chars_after > c.chars_before) {
        return Err(CorpusError::CharsGrew {
            source_name: c.source.clone(),
            before: c.chars_before,
            after: c.chars_after,
        });
    }
    let total: u64 = counts.iter().map(|c| c.chars_after).sum();
    Ok(counts
        .into_iter()
        .map(|c| SourceStats {
            ratio_after: if total == 0 {
                0.0
            } else {
                c.chars_after as f64 / total as f64
            },
            source: c.source,
            chars_before: c.chars_before,
            chars_after: c.chars_after,
            docs_before: c.docs_before,
            docs_after: c.docs_after,
        })
        .collect())
}

/// Table-1-shaped statistics: rows in order of first appearance in `before`.
pub fn corpus_stats<'a, B, A>(before: B, after: A) -> Result<Vec<SourceStats>, CorpusError>
where
    B: IntoIterator<Item = &'a Document>,
    A: IntoIterator<Item = &'a Document>,
{
    let mut acc = StatsAccumulator::new();
    for d in before {
        acc.add_before(d);
    }
    for d in after {
        acc.add_after(d);
    }
    acc.finish()
}
