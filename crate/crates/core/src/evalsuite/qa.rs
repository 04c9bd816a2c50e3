//! Exact-match QA scoring and few-shot prompt rendering.

use std::collections::{HashMap, HashSet};

use regex::Regex;
use serde::{Deserialize, Serialize};
use unicode_normalization::UnicodeNormalization;

use super::{EvalError, MetricValue};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QaItem {
    pub id: String,
    #[serde(default)]
    pub context: String,
    pub question: String,
    pub answers: Vec<String>,
    #[serde(default)]
    pub lang: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub id: String,
    pub prediction: String,
}

fn punctuation() -> &'static Regex {
    static RE: std::sync::OnceLock<Regex> = std::sync::OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\p{P}").expect("valid regex"))
}

/// NFC, lowercase, punctuation removed, whitespace collapsed and trimmed;
/// whole words listed in `stop_tokens` (compared after the same
/// normalization) are dropped.
pub fn normalize_answer(text: &str, stop_tokens: &[String]) -> String {
    let lowered: String = text.nfc().collect::<String>().to_lowercase();
    let stripped = punctuation().replace_all(&lowered, "");
    let stops: HashSet<String> = stop_tokens
        .iter()
        .map(|s| normalize_answer(s, &[]))
        .filter(|s| !s.is_empty())
        .collect();
    stripped
        .split_whitespace()
        .filter(|w| !stops.contains(*w))
        .collect::<Vec<_>>()
        .join(" ")
}

pub fn exact_match(prediction: &str, golds: &[String], stop_tokens: &[String]) -> bool {
    let p = normalize_answer(prediction, stop_tokens);
    golds.iter().any(|g| normalize_answer(g, stop_tokens) == p)
}

/// Mean exact match over `items`. Items without a prediction count as wrong;
/// predictions for unknown ids are an error.
pub fn score_em(
    items: &[QaItem],
    predictions: &[Prediction],
    stop_tokens: &[String],
) -> Result<MetricValue, EvalError> {
    if items.is_empty() {
        return Err(EvalError::Empty);
    }
    let mut known = HashSet::new();
    for item in items {
        if item.answers.is_empty() {
            return Err(EvalError::InvalidItem {
                id: item.id.clone(),
                message: "no gold answers".into(),
            });
        }
        if !known.insert(item.id.as_str()) {
            return Err(EvalError::DuplicateId(item.id.clone()));
        }
    }
    let mut preds: HashMap<&str, &str> = HashMap::new();
    for p in predictions {
        if !known.contains(p.id.as_str()) {
            return Err(EvalError::UnknownId(p.id.clone()));
        }
        if preds.insert(&p.id, &p.prediction).is_some() {
            return Err(EvalError::DuplicateId(p.id.clone()));
        }
    }
    let mut correct = 0u64;
    let mut missing = 0u64;
    for item in items {
        match preds.get(item.id.as_str()) {
            Some(p) => correct += exact_match(p, &item.answers, stop_tokens) as u64,
            None => missing += 1,
        }
    }
    if missing > 0 {
        log::warn!("{missing} item(s) have no prediction and count as wrong");
    }
    let n = items.len() as u64;
    Ok(MetricValue::new(correct as f64 / n as f64, n)
        .with("correct", correct)
        .with("missing", missing))
}

pub const DEFAULT_FEWSHOT_TEMPLATE: &str = "{context}\nQuestion: {question}\nAnswer: {answer}";

fn render(template: &str, item: &QaItem, answer: &str) -> String {
    let mut out = String::with_capacity(template.len() + item.context.len() + item.question.len());
    let mut rest = template;
    while let Some(i) = rest.find('{') {
        out.push_str(&rest[..i]);
        let tail = &rest[i..];
        let (value, len) = if tail.starts_with("{context}") {
            (item.context.as_str(), 9)
        } else if tail.starts_with("{question}") {
            (item.question.as_str(), 10)
        } else if tail.starts_with("{answer}") {
            (answer, 8)
        } else {
            ("{", 1)
        };
        out.push_str(value);
        rest = &tail[len..];
    }
    out.push_str(rest);
    out
}

/// Renders the `k` lowest-index items other than the target as solved
/// exemplars (first gold answer), followed by the target with an empty answer.
/// Blocks are separated by a blank line; trailing whitespace is trimmed.
pub fn build_fewshot_prompt(
    dataset: &[QaItem],
    target_index: usize,
    k: usize,
    template: &str,
) -> Result<String, EvalError> {
    if target_index >= dataset.len() {
        return Err(EvalError::TargetOutOfRange {
            index: target_index,
            len: dataset.len(),
        });
    }
    if k >= dataset.len() {
        return Err(EvalError::NotEnoughExemplars { k, len: dataset.len() });
    }
    let mut blocks: Vec<String> = dataset
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != target_index)
        .take(k)
        .map(|(_, item)| render(template, item, item.answers.first().map_or("", String::as_str)))
        .collect();
    blocks.push(render(template, &dataset[target_index], "").trim_end().to_string());
    Ok(blocks.join("\n\n"))
}
