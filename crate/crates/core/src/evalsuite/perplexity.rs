//! Perplexity and size-capped base-model selection.

use serde::{Deserialize, Serialize};

use super::{compensated_sum, EvalError};

/// `exp(-mean(logprobs))` over natural-log token probabilities.
pub fn perplexity(logprobs: &[f64]) -> Result<f64, EvalError> {
    if logprobs.is_empty() {
        return Err(EvalError::Empty);
    }
    if let Some((index, &value)) = logprobs
        .iter()
        .enumerate()
        .find(|(_, v)| v.is_nan() || **v > 0.0)
    {
        return Err(EvalError::InvalidLogprob { index, value });
    }
    let mean = compensated_sum(logprobs.iter().copied()) / logprobs.len() as f64;
    Ok((-mean).exp())
}

/// One line of a logprob file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogprobRecord {
    pub model_id: String,
    pub logprobs: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelProfile {
    pub model_id: String,
    pub param_count: u64,
    /// Token logprobs over the evaluation subset.
    #[serde(default)]
    pub logprobs: Vec<f64>,
}

impl ModelProfile {
    pub fn perplexity(&self) -> Result<f64, EvalError> {
        perplexity(&self.logprobs).map_err(|e| match e {
            EvalError::Empty => EvalError::InvalidItem {
                id: self.model_id.clone(),
                message: "no logprobs".into(),
            },
            other => other,
        })
    }
}

/// Among profiles with `param_count < size_cap`, the one with the lowest
/// perplexity; ties go to the lexicographically smallest id. Returns the id
/// and its perplexity.
pub fn select_base_model(profiles: &[ModelProfile], size_cap: u64) -> Result<(String, f64), EvalError> {
    let mut best: Option<(&str, f64)> = None;
    for p in profiles.iter().filter(|p| p.param_count < size_cap) {
        let ppl = p.perplexity()?;
        let better = match best {
            None => true,
            Some((id, b)) => ppl < b || (ppl == b && p.model_id.as_str() < id),
        };
        if better {
            best = Some((&p.model_id, ppl));
        }
    }
    best.map(|(id, ppl)| (id.to_string(), ppl))
        .ok_or(EvalError::NoQualifyingModel { cap: size_cap })
}
