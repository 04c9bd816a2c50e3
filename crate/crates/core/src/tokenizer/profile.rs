//! Tokenizer efficiency measurements.

use serde::{Deserialize, Serialize};

use super::{BpeModel, TokenizerError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenizerProfile {
    pub corpus_name: String,
    pub total_chars: u64,
    pub total_tokens: u64,
    pub word_start_tokens: u64,
    pub chars_per_token: f64,
    /// Tokens per word-start token.
    pub fertility: f64,
}

impl TokenizerProfile {
    pub fn from_counts(
        corpus_name: &str,
        total_chars: u64,
        total_tokens: u64,
        word_start_tokens: u64,
    ) -> Result<Self, TokenizerError> {
        if total_tokens == 0 || word_start_tokens == 0 {
            return Err(TokenizerError::NoTokens);
        }
        Ok(TokenizerProfile {
            corpus_name: corpus_name.to_string(),
            total_chars,
            total_tokens,
            word_start_tokens,
            chars_per_token: total_chars as f64 / total_tokens as f64,
            fertility: total_tokens as f64 / word_start_tokens as f64,
        })
    }
}

/// Encodes every text and tallies characters, tokens and word-start tokens.
pub fn profile<I, S>(model: &BpeModel, corpus_name: &str, texts: I) -> Result<TokenizerProfile, TokenizerError>
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    let (mut chars, mut tokens, mut starts) = (0u64, 0u64, 0u64);
    for text in texts {
        let text = text.as_ref();
        let (c, t, w) = count(model, text);
        chars += c;
        tokens += t;
        starts += w;
    }
    TokenizerProfile::from_counts(corpus_name, chars, tokens, starts)
}

/// Same tallies as [`profile`], encoding texts on the rayon pool.
pub fn profile_parallel<S>(model: &BpeModel, corpus_name: &str, texts: &[S]) -> Result<TokenizerProfile, TokenizerError>
where
    S: AsRef<str> + Sync,
{
    use rayon::prelude::*;
    let (chars, tokens, starts) = texts
        .par_iter()
        .map(|t| count(model, t.as_ref()))
        .reduce(|| (0, 0, 0), |a, b| (a.0 + b.0, a.1 + b.1, a.2 + b.2));
    TokenizerProfile::from_counts(corpus_name, chars, tokens, starts)
}

fn count(model: &BpeModel, text: &str) -> (u64, u64, u64) {
    let ids = model.encode(text);
    let starts = ids.iter().filter(|&&id| model.is_word_start(id)).count();
    (text.chars().count() as u64, ids.len() as u64, starts as u64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tokenizer::{merge_vocab, train_bpe};

    #[test]
    fn whole_word_tokens_give_unit_fertility() {
        let corpus = ["tá sé", "sé tá tá"];
        let f = train_bpe(corpus, 100).unwrap();
        let m = merge_vocab(&BpeModel::byte_level(), &f, 100).model;
        let p = profile(&m, "t", corpus).unwrap();
        assert_eq!(p.total_tokens, 5);
        assert_eq!(p.word_start_tokens, 5);
        assert_eq!(p.fertility, 1.0);
        assert_eq!(p.total_chars, 13);
    }

    #[test]
    fn byte_level_counts() {
        // "ab c" -> " ab c": 5 byte tokens, 2 start with a space.
        let p = profile(&BpeModel::byte_level(), "x", ["ab c"]).unwrap();
        assert_eq!((p.total_chars, p.total_tokens, p.word_start_tokens), (4, 5, 2));
        assert_eq!(p.chars_per_token, 0.8);
        assert_eq!(p.fertility, 2.5);
    }

    #[test]
    fn empty_corpus_is_an_error() {
        assert!(matches!(
            profile(&BpeModel::byte_level(), "x", [""]),
            Err(TokenizerError::NoTokens)
        ));
    }

    #[test]
    fn parallel_matches_sequential() {
        let texts: Vec<String> = (0..50).map(|i| format!("focal {i} eile anseo")).collect();
        let m = BpeModel::byte_level();
        assert_eq!(
            profile(&m, "p", &texts).unwrap(),
            profile_parallel(&m, "p", &texts).unwrap()
        );
    }
}
