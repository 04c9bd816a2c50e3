//! Loglikelihood multiple-choice accuracy.

use serde::{Deserialize, Serialize};

use super::{EvalError, MetricValue};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    #[serde(rename = "text")]
    pub completion: String,
    /// Natural-log total over the completion.
    #[serde(rename = "logprob")]
    pub total_logprob: f64,
    /// UTF-8 length of `completion`; computed when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub byte_len: Option<usize>,
}

impl Candidate {
    pub fn bytes(&self) -> usize {
        self.byte_len.unwrap_or(self.completion.len())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChoiceItem {
    pub id: String,
    #[serde(default)]
    pub context: String,
    pub candidates: Vec<Candidate>,
    #[serde(rename = "gold")]
    pub gold_index: usize,
}

impl ChoiceItem {
    pub fn validate(&self) -> Result<(), EvalError> {
        let bad = |message: String| {
            Err(EvalError::InvalidItem {
                id: self.id.clone(),
                message,
            })
        };
        if self.candidates.len() < 2 {
            return bad(format!("needs at least 2 candidates, has {}", self.candidates.len()));
        }
        if self.gold_index >= self.candidates.len() {
            return bad(format!("gold index {} out of range", self.gold_index));
        }
        for (i, c) in self.candidates.iter().enumerate() {
            if c.total_logprob.is_nan() {
                return bad(format!("candidate {i} has a NaN logprob"));
            }
            if let Some(n) = c.byte_len {
                if n != c.completion.len() {
                    return bad(format!(
                        "candidate {i} byte_len {n} differs from its UTF-8 length {}",
                        c.completion.len()
                    ));
                }
            }
        }
        Ok(())
    }
}

/// Index of the best-scoring candidate, ties to the lowest index. Normalized
/// scores divide the logprob by the completion's byte length.
pub fn predict(item: &ChoiceItem, normalized: bool) -> Result<usize, EvalError> {
    item.validate()?;
    let mut best = 0;
    let mut best_score = f64::NEG_INFINITY;
    for (i, c) in item.candidates.iter().enumerate() {
        let score = if normalized {
            let n = c.bytes();
            if n == 0 {
                return Err(EvalError::InvalidItem {
                    id: item.id.clone(),
                    message: format!("candidate {i} has zero bytes under normalized scoring"),
                });
            }
            c.total_logprob / n as f64
        } else {
            c.total_logprob
        };
        if i == 0 || score > best_score {
            best = i;
            best_score = score;
        }
    }
    Ok(best)
}

pub fn accuracy(items: &[ChoiceItem], normalized: bool) -> Result<f64, EvalError> {
    Ok(score_choices(items, normalized)?.value)
}

pub fn score_choices(items: &[ChoiceItem], normalized: bool) -> Result<MetricValue, EvalError> {
    if items.is_empty() {
        return Err(EvalError::Empty);
    }
    let mut correct = 0u64;
    for item in items {
        correct += (predict(item, normalized)? == item.gold_index) as u64;
    }
    let n = items.len() as u64;
    Ok(MetricValue::new(correct as f64 / n as f64, n).with("correct", correct))
}
