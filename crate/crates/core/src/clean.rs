//! Heuristic document quality filters.
//!
//! Six filters run in a fixed order and the first one that fails is charged
//! with the rejection:
//!
//! 1. `min_chars`: fewer than `min_chars` Unicode scalar values.
//! 2. `alpha_ratio`: alphabetic share of non-whitespace characters below `alpha_ratio_min`.
//! 3. `digit_ratio`: numeric share of non-whitespace characters above `digit_ratio_max`.
//! 4. `dup_line_ratio`: `1 - unique/total` over non-blank lines (trailing
//!    whitespace stripped) above `dup_line_ratio_max`.
//! 5. `max_char_run`: a run of one repeated non-whitespace character longer than `max_char_run`.
//! 6. `alphabet_ratio`: share of alphabetic characters drawn from the target
//!    alphabet below `target_alphabet_ratio_min` (only when an alphabet is set).
//!
//! The thresholds are stand-ins chosen for this toolkit; they do not claim to
//! replicate any published filtering pipeline.

use std::collections::{BTreeMap, BTreeSet, HashSet};

use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::corpus::Document;

#[derive(Debug, Error, PartialEq)]
pub enum CleanError {
    #[error("invalid filter config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Filter {
    MinChars,
    AlphaRatio,
    DigitRatio,
    DupLineRatio,
    MaxCharRun,
    AlphabetRatio,
}

impl Filter {
    /// Evaluation order.
    pub const ORDER: [Filter; 6] = [
        Filter::MinChars,
        Filter::AlphaRatio,
        Filter::DigitRatio,
        Filter::DupLineRatio,
        Filter::MaxCharRun,
        Filter::AlphabetRatio,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Filter::MinChars => "min_chars",
            Filter::AlphaRatio => "alpha_ratio",
            Filter::DigitRatio => "digit_ratio",
            Filter::DupLineRatio => "dup_line_ratio",
            Filter::MaxCharRun => "max_char_run",
            Filter::AlphabetRatio => "alphabet_ratio",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterConfig {
    pub min_chars: usize,
    pub alpha_ratio_min: f64,
    pub digit_ratio_max: f64,
    pub dup_line_ratio_max: f64,
    pub max_char_run: usize,
    #[serde(
        serialize_with = "ser_alphabet",
        deserialize_with = "de_alphabet",
        skip_serializing_if = "Option::is_none"
    )]
    pub target_alphabet: Option<BTreeSet<char>>,
    pub target_alphabet_ratio_min: f64,
}

impl Default for FilterConfig {
    fn default() -> Self {
        FilterConfig {
            min_chars: 200,
            alpha_ratio_min: 0.6,
            digit_ratio_max: 0.2,
            dup_line_ratio_max: 0.3,
            max_char_run: 20,
            target_alphabet: None,
            target_alphabet_ratio_min: 0.5,
        }
    }
}

fn ser_alphabet<S: Serializer>(a: &Option<BTreeSet<char>>, s: S) -> Result<S::Ok, S::Error> {
    match a {
        Some(set) => s.serialize_str(&set.iter().collect::<String>()),
        None => s.serialize_none(),
    }
}

fn de_alphabet<'de, D: Deserializer<'de>>(d: D) -> Result<Option<BTreeSet<char>>, D::Error> {
    let s: Option<String> = Option::deserialize(d)?;
    Ok(s.map(|s| s.chars().filter(|c| !c.is_whitespace()).collect()))
}

impl FilterConfig {
    pub fn validate(&self) -> Result<(), CleanError> {
        if self.min_chars < 1 {
            return Err(CleanError::InvalidConfig("min_chars must be at least 1".into()));
        }
        for (name, v) in [
            ("alpha_ratio_min", self.alpha_ratio_min),
            ("digit_ratio_max", self.digit_ratio_max),
            ("dup_line_ratio_max", self.dup_line_ratio_max),
            ("target_alphabet_ratio_min", self.target_alphabet_ratio_min),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(CleanError::InvalidConfig(format!("{name} = {v} is outside [0, 1]")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Kept,
    Rejected(Filter),
}

/// Character statistics every filter reads from.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TextMetrics {
    pub chars: usize,
    pub non_whitespace: usize,
    pub alphabetic: usize,
    pub numeric: usize,
    pub longest_run: usize,
    pub lines: usize,
    pub unique_lines: usize,
}

impl TextMetrics {
    pub fn measure(text: &str) -> Self {
        let mut m = TextMetrics::default();
        let mut prev: Option<char> = None;
        let mut run = 0usize;
        for c in text.chars() {
            m.chars += 1;
            if c.is_whitespace() {
                prev = None;
                run = 0;
                continue;
            }
            m.non_whitespace += 1;
            if c.is_alphabetic() {
                m.alphabetic += 1;
            }
            if c.is_numeric() {
                m.numeric += 1;
            }
            run = if prev == Some(c) { run + 1 } else { 1 };
            prev = Some(c);
            m.longest_run = m.longest_run.max(run);
        }
        let mut seen = HashSet::new();
        for line in text.lines().map(str::trim_end).filter(|l| !l.is_empty()) {
            m.lines += 1;
            seen.insert(line);
        }
        m.unique_lines = seen.len();
        m
    }

    fn share(part: usize, whole: usize) -> f64 {
        if whole == 0 {
            0.0
        } else {
            part as f64 / whole as f64
        }
    }

    pub fn alpha_ratio(&self) -> f64 {
        Self::share(self.alphabetic, self.non_whitespace)
    }

    pub fn digit_ratio(&self) -> f64 {
        Self::share(self.numeric, self.non_whitespace)
    }

    pub fn dup_line_ratio(&self) -> f64 {
        if self.lines == 0 {
            0.0
        } else {
            1.0 - self.unique_lines as f64 / self.lines as f64
        }
    }
}

fn alphabet_ratio(text: &str, alphabet: &BTreeSet<char>) -> f64 {
    let mut letters = 0usize;
    let mut inside = 0usize;
    for c in text.chars().filter(|c| c.is_alphabetic()) {
        letters += 1;
        if alphabet.contains(&c) || c.to_lowercase().all(|l| alphabet.contains(&l)) {
            inside += 1;
        }
    }
    TextMetrics::share(inside, letters)
}

/// Judges one document. Never fails: every input yields a verdict.
pub fn apply_filters(doc: &Document, cfg: &FilterConfig) -> Verdict {
    let m = TextMetrics::measure(&doc.text);
    for filter in Filter::ORDER {
        let pass = match filter {
            Filter::MinChars => m.chars >= cfg.min_chars,
            Filter::AlphaRatio => m.alpha_ratio() >= cfg.alpha_ratio_min,
            Filter::DigitRatio => m.digit_ratio() <= cfg.digit_ratio_max,
            Filter::DupLineRatio => m.dup_line_ratio() <= cfg.dup_line_ratio_max,
            Filter::MaxCharRun => m.longest_run <= cfg.max_char_run,
            Filter::AlphabetRatio => match &cfg.target_alphabet {
                Some(a) => alphabet_ratio(&doc.text, a) >= cfg.target_alphabet_ratio_min,
                None => true,
            },
        };
        if !pass {
            return Verdict::Rejected(filter);
        }
    }
    Verdict::Kept
}

/// Rejection accounting. `total_kept + Σ rejections == total_in`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterReport {
    pub rejections: BTreeMap<String, u64>,
    pub total_in: u64,
    pub total_kept: u64,
    pub chars_in: u64,
    pub chars_kept: u64,
}

impl Default for FilterReport {
    fn default() -> Self {
        FilterReport {
            rejections: Filter::ORDER.iter().map(|f| (f.name().to_string(), 0)).collect(),
            total_in: 0,
            total_kept: 0,
            chars_in: 0,
            chars_kept: 0,
        }
    }
}

impl FilterReport {
    pub fn record(&mut self, doc: &Document, verdict: Verdict) {
        let chars = doc.char_count();
        self.total_in += 1;
        self.chars_in += chars;
        match verdict {
            Verdict::Kept => {
                self.total_kept += 1;
                self.chars_kept += chars;
            }
            Verdict::Rejected(f) => *self.rejections.entry(f.name().to_string()).or_default() += 1,
        }
    }

    pub fn merge(&mut self, other: &FilterReport) {
        for (k, v) in &other.rejections {
            *self.rejections.entry(k.clone()).or_default() += v;
        }
        self.total_in += other.total_in;
        self.total_kept += other.total_kept;
        self.chars_in += other.chars_in;
        self.chars_kept += other.chars_kept;
    }

    pub fn total_rejected(&self) -> u64 {
        self.rejections.values().sum()
    }
}

/// Filters a document stream on the calling thread. Kept documents keep input order.
pub fn clean_corpus<I, E>(docs: I, cfg: &FilterConfig) -> Result<(Vec<Document>, FilterReport), E>
where
    I: IntoIterator<Item = Result<Document, E>>,
{
    let mut kept = Vec::new();
    let mut report = FilterReport::default();
    for doc in docs {
        let doc = doc?;
        let verdict = apply_filters(&doc, cfg);
        report.record(&doc, verdict);
        if verdict == Verdict::Kept {
            kept.push(doc);
        }
    }
    Ok((kept, report))
}

const PARALLEL_CHUNK: usize = 2048;

/// Same contract as [`clean_corpus`], judging chunks of documents on the rayon pool.
pub fn clean_corpus_parallel<I, E>(
    docs: I,
    cfg: &FilterConfig,
) -> Result<(Vec<Document>, FilterReport), E>
where
    I: IntoIterator<Item = Result<Document, E>>,
{
    let mut kept = Vec::new();
    let mut report = FilterReport::default();
    let mut iter = docs.into_iter();
    loop {
        let chunk: Vec<Document> = iter
            .by_ref()
            .take(PARALLEL_CHUNK)
            .collect::<Result<_, E>>()?;
        if chunk.is_empty() {
            break;
        }
        let verdicts: Vec<Verdict> = chunk.par_iter().map(|d| apply_filters(d, cfg)).collect();
        for (doc, verdict) in chunk.into_iter().zip(verdicts) {
            report.record(&doc, verdict);
            if verdict == Verdict::Kept {
                kept.push(doc);
            }
        }
    }
    Ok((kept, report))
}
