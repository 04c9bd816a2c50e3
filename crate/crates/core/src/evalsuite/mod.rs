//! Scoring of externally produced model outputs: exact-match QA,
//! loglikelihood multiple choice, corpus BLEU-4, perplexity and base-model
//! selection, plus few-shot prompt rendering.

mod bleu;
mod choice;
mod perplexity;
mod qa;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use bleu::{bleu4, bleu_stats, bleu_tokenize, BleuStats};
pub use choice::{accuracy, predict, score_choices, Candidate, ChoiceItem};
pub use perplexity::{perplexity, select_base_model, LogprobRecord, ModelProfile};
pub use qa::{
    build_fewshot_prompt, exact_match, normalize_answer, score_em, Prediction, QaItem,
    DEFAULT_FEWSHOT_TEMPLATE,
};

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("no items to score")]
    Empty,
    #[error("item {id:?}: {message}")]
    InvalidItem { id: String, message: String },
    #[error("{hypotheses} hypotheses but {references} references")]
    LengthMismatch { hypotheses: usize, references: usize },
    #[error("invalid logprob {value} at position {index}")]
    InvalidLogprob { index: usize, value: f64 },
    #[error("no model has fewer than {cap} parameters")]
    NoQualifyingModel { cap: u64 },
    #[error("few-shot k = {k} needs more than {len} items")]
    NotEnoughExemplars { k: usize, len: usize },
    #[error("target index {index} out of range for {len} items")]
    TargetOutOfRange { index: usize, len: usize },
    #[error("duplicate id {0:?}")]
    DuplicateId(String),
    #[error("unknown id {0:?}")]
    UnknownId(String),
}

/// One metric value with the number of items behind it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricValue {
    pub value: f64,
    pub items: u64,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub details: BTreeMap<String, serde_json::Value>,
}

impl MetricValue {
    pub fn new(value: f64, items: u64) -> Self {
        MetricValue {
            value,
            items,
            details: BTreeMap::new(),
        }
    }

    pub fn with(mut self, key: &str, value: impl Serialize) -> Self {
        self.details
            .insert(key.to_string(), serde_json::to_value(value).expect("detail serializes"));
        self
    }
}

/// Metrics keyed by name, e.g. `exact_match` or `bleu4`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub metrics: BTreeMap<String, MetricValue>,
}

impl ScoreReport {
    pub fn single(name: &str, value: MetricValue) -> Self {
        ScoreReport {
            metrics: BTreeMap::from([(name.to_string(), value)]),
        }
    }

    /// Adds `other`'s metrics; later reports win on name clashes.
    pub fn merge(&mut self, other: ScoreReport) {
        self.metrics.extend(other.metrics);
    }
}

/// Neumaier-compensated sum.
pub(crate) fn compensated_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}
