//! Corpus-level BLEU-4.

use std::collections::HashMap;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::{EvalError, MetricValue};

/// Each punctuation character becomes its own token; the rest splits on
/// whitespace. Case is preserved.
pub fn bleu_tokenize(text: &str) -> Vec<String> {
    static RE: OnceLock<Regex> = OnceLock::new();
    let re = RE.get_or_init(|| Regex::new(r"\p{P}").expect("valid regex"));
    re.replace_all(text, " $0 ")
        .split_whitespace()
        .map(str::to_string)
        .collect()
}

/// Corpus sufficient statistics: clipped matches and hypothesis n-gram totals
/// for n = 1..4, plus hypothesis and reference lengths.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BleuStats {
    pub matches: [u64; 4],
    pub totals: [u64; 4],
    pub hyp_len: u64,
    pub ref_len: u64,
}

impl BleuStats {
    pub fn add(&mut self, other: &BleuStats) {
        for n in 0..4 {
            self.matches[n] += other.matches[n];
            self.totals[n] += other.totals[n];
        }
        self.hyp_len += other.hyp_len;
        self.ref_len += other.ref_len;
    }

    pub fn sentence(hyp: &str, reference: &str) -> Self {
        let h = bleu_tokenize(hyp);
        let r = bleu_tokenize(reference);
        let mut s = BleuStats {
            hyp_len: h.len() as u64,
            ref_len: r.len() as u64,
            ..Default::default()
        };
        for n in 1..=4 {
            let ref_counts = ngram_counts(&r, n);
            for (gram, c) in ngram_counts(&h, n) {
                s.totals[n - 1] += c;
                s.matches[n - 1] += c.min(ref_counts.get(&gram).copied().unwrap_or(0));
            }
        }
        s
    }

    /// Brevity penalty times the geometric mean of the four precisions; zero
    /// when any precision is zero.
    pub fn score(&self) -> f64 {
        if self.hyp_len == 0 || self.matches.contains(&0) {
            return 0.0;
        }
        let log_mean = (0..4)
            .map(|n| (self.matches[n] as f64 / self.totals[n] as f64).ln())
            .sum::<f64>()
            / 4.0;
        let bp = if self.hyp_len < self.ref_len {
            (1.0 - self.ref_len as f64 / self.hyp_len as f64).exp()
        } else {
            1.0
        };
        bp * log_mean.exp()
    }
}

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], u64> {
    let mut m = HashMap::new();
    for w in tokens.windows(n) {
        *m.entry(w).or_default() += 1;
    }
    m
}

pub fn bleu_stats(hypotheses: &[String], references: &[String]) -> Result<BleuStats, EvalError> {
    if hypotheses.len() != references.len() {
        return Err(EvalError::LengthMismatch {
            hypotheses: hypotheses.len(),
            references: references.len(),
        });
    }
    if hypotheses.is_empty() {
        return Err(EvalError::Empty);
    }
    let mut total = BleuStats::default();
    for (h, r) in hypotheses.iter().zip(references) {
        total.add(&BleuStats::sentence(h, r));
    }
    Ok(total)
}

pub fn bleu4(hypotheses: &[String], references: &[String]) -> Result<f64, EvalError> {
    Ok(bleu_stats(hypotheses, references)?.score())
}

impl From<&BleuStats> for MetricValue {
    fn from(s: &BleuStats) -> Self {
        MetricValue::new(s.score(), 0)
            .with("matches", s.matches)
            .with("totals", s.totals)
            .with("hyp_len", s.hyp_len)
            .with("ref_len", s.ref_len)
    }
}
