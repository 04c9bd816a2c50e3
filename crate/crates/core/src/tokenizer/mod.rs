//! Byte-level BPE with a word-boundary marker, vocabulary expansion and
//! efficiency profiling.
//!
//! Text is pre-tokenized on whitespace: a single space before a word is kept
//! as the word's first byte (rendered `▁`), every other whitespace character
//! is its own piece, and one space is prepended to the whole text so the
//! first word is marked too. Pieces start as single-byte tokens and merges
//! apply in rule order. Decoding concatenates token bytes and drops the
//! leading space, so `decode(encode(s)) == s` for every string.

mod alphabet;
mod expand;
mod profile;
mod train;

use std::collections::{HashMap, HashSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use alphabet::{byte_char, surface, surface_bytes, BOUNDARY_MARKER};
pub use expand::{merge_vocab, MergeOutcome};
pub use profile::{profile, profile_parallel, TokenizerProfile};
pub use train::{train_bpe, BpeFragment};

pub type TokenId = u32;

pub const MODEL_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum TokenizerError {
    #[error("training corpus contains no words")]
    EmptyCorpus,
    #[error("token id {id} is out of range for a vocabulary of {vocab_size}")]
    OutOfRange { id: TokenId, vocab_size: usize },
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error("profiling corpus produced no tokens")]
    NoTokens,
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}: {message}", path.display())]
    Parse { path: PathBuf, message: String },
}

#[derive(Debug, Clone)]
struct MergeRule {
    rank: u32,
    output: TokenId,
}

/// Ordered merges over a dense surface table. Ids `0..base_size` are the
/// frozen base vocabulary; ids from `base_size` on were added by expansion.
#[derive(Debug, Clone)]
pub struct BpeModel {
    surfaces: Vec<String>,
    token_bytes: Vec<Vec<u8>>,
    ids: HashMap<String, TokenId>,
    merges: Vec<(String, String)>,
    ranks: HashMap<(TokenId, TokenId), MergeRule>,
    byte_ids: [TokenId; 256],
    base_size: usize,
}

impl PartialEq for BpeModel {
    fn eq(&self, other: &Self) -> bool {
        self.surfaces == other.surfaces
            && self.merges == other.merges
            && self.base_size == other.base_size
    }
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    version: u32,
    boundary_marker: String,
    vocab: Vec<String>,
    merges: Vec<(String, String)>,
    base_size: usize,
}

impl BpeModel {
    /// The 256 single-byte tokens, ids equal to byte values, no merges.
    pub fn byte_level() -> Self {
        let vocab = (0..=255u8).map(|b| surface(&[b])).collect();
        Self::from_parts(vocab, Vec::new(), 256).expect("byte alphabet is valid")
    }

    /// Builds and validates a model.
    ///
    /// Requirements: surfaces are unique and drawn from the byte alphabet;
    /// all 256 single-byte tokens sit in the base range; every merge joins two
    /// vocabulary surfaces into a third; merges producing base tokens use only
    /// base inputs and precede every merge producing an added token.
    pub fn from_parts(
        vocab: Vec<String>,
        merges: Vec<(String, String)>,
        base_size: usize,
    ) -> Result<Self, TokenizerError> {
        let invalid = |m: String| TokenizerError::InvalidModel(m);
        if base_size > vocab.len() {
            return Err(invalid(format!(
                "base_size {base_size} exceeds vocabulary size {}",
                vocab.len()
            )));
        }
        if vocab.len() > TokenId::MAX as usize {
            return Err(invalid("vocabulary too large".into()));
        }
        let mut ids = HashMap::with_capacity(vocab.len());
        let mut token_bytes = Vec::with_capacity(vocab.len());
        for (i, s) in vocab.iter().enumerate() {
            let bytes = surface_bytes(s)
                .filter(|b| !b.is_empty())
                .ok_or_else(|| invalid(format!("surface {s:?} is not in the byte alphabet")))?;
            if ids.insert(s.clone(), i as TokenId).is_some() {
                return Err(invalid(format!("surface {s:?} appears twice")));
            }
            token_bytes.push(bytes);
        }
        let mut byte_ids = [0; 256];
        for b in 0..=255u8 {
            match ids.get(&surface(&[b])) {
                Some(&id) if (id as usize) < base_size => byte_ids[b as usize] = id,
                _ => return Err(invalid(format!("byte token {b:#04x} missing from base vocabulary"))),
            }
        }
        let mut ranks = HashMap::with_capacity(merges.len());
        let mut seen_added = false;
        for (rank, (l, r)) in merges.iter().enumerate() {
            let lookup = |s: &str| {
                ids.get(s)
                    .copied()
                    .ok_or_else(|| invalid(format!("merge input {s:?} not in vocabulary")))
            };
            let (li, ri) = (lookup(l)?, lookup(r)?);
            let out = format!("{l}{r}");
            let oi = *ids
                .get(&out)
                .ok_or_else(|| invalid(format!("merge output {out:?} not in vocabulary")))?;
            if (oi as usize) < base_size {
                if seen_added {
                    return Err(invalid(format!("base merge ({l:?}, {r:?}) follows an added merge")));
                }
                if li as usize >= base_size || ri as usize >= base_size {
                    return Err(invalid(format!("base merge ({l:?}, {r:?}) uses an added token")));
                }
            } else {
                seen_added = true;
            }
            ranks.entry((li, ri)).or_insert(MergeRule {
                rank: rank as u32,
                output: oi,
            });
        }
        Ok(BpeModel {
            surfaces: vocab,
            token_bytes,
            ids,
            merges,
            ranks,
            byte_ids,
            base_size,
        })
    }

    /// Same vocabulary and merges with every token treated as base.
    pub fn frozen(&self) -> Self {
        BpeModel {
            base_size: self.surfaces.len(),
            ..self.clone()
        }
    }

    pub fn vocab_size(&self) -> usize {
        self.surfaces.len()
    }

    pub fn base_size(&self) -> usize {
        self.base_size
    }

    pub fn added_size(&self) -> usize {
        self.surfaces.len() - self.base_size
    }

    pub fn id(&self, surface: &str) -> Option<TokenId> {
        self.ids.get(surface).copied()
    }

    pub fn surface(&self, id: TokenId) -> Option<&str> {
        self.surfaces.get(id as usize).map(String::as_str)
    }

    pub fn surfaces(&self) -> &[String] {
        &self.surfaces
    }

    pub fn merges(&self) -> &[(String, String)] {
        &self.merges
    }

    /// `(surface, id)` pairs of the frozen base vocabulary.
    pub fn base_vocab(&self) -> impl Iterator<Item = (&str, TokenId)> {
        self.surfaces[..self.base_size]
            .iter()
            .enumerate()
            .map(|(i, s)| (s.as_str(), i as TokenId))
    }

    /// `(surface, id)` pairs added on top of the base.
    pub fn added_vocab(&self) -> impl Iterator<Item = (&str, TokenId)> {
        let base = self.base_size;
        self.surfaces[base..]
            .iter()
            .enumerate()
            .map(move |(i, s)| (s.as_str(), (base + i) as TokenId))
    }

    pub fn is_added(&self, id: TokenId) -> bool {
        id as usize >= self.base_size
    }

    /// Whether the token's surface begins with the word-boundary marker.
    pub fn is_word_start(&self, id: TokenId) -> bool {
        self.token_bytes
            .get(id as usize)
            .is_some_and(|b| b.first() == Some(&b' '))
    }

    fn encode_piece(&self, piece: &[u8], out: &mut Vec<TokenId>) {
        let mut syms: Vec<TokenId> = piece.iter().map(|b| self.byte_ids[*b as usize]).collect();
        while syms.len() > 1 {
            let best = syms
                .windows(2)
                .enumerate()
                .filter_map(|(i, w)| self.ranks.get(&(w[0], w[1])).map(|m| (m.rank, i, m.output)))
                .min();
            match best {
                Some((_, i, output)) => {
                    syms[i] = output;
                    syms.remove(i + 1);
                }
                None => break,
            }
        }
        out.extend(syms);
    }

    pub fn encode(&self, text: &str) -> Vec<TokenId> {
        if text.is_empty() {
            return Vec::new();
        }
        let normalized = format!(" {text}");
        let mut out = Vec::with_capacity(text.len() / 2 + 1);
        for piece in pre_tokenize(&normalized) {
            self.encode_piece(piece.as_bytes(), &mut out);
        }
        out
    }

    /// Concatenates token bytes and drops the leading space added by `encode`.
    /// Byte sequences that are not valid UTF-8 decode with replacement characters.
    pub fn decode(&self, ids: &[TokenId]) -> Result<String, TokenizerError> {
        let mut bytes = Vec::with_capacity(ids.len() * 4);
        for &id in ids {
            let tok = self.token_bytes.get(id as usize).ok_or(TokenizerError::OutOfRange {
                id,
                vocab_size: self.surfaces.len(),
            })?;
            bytes.extend_from_slice(tok);
        }
        let text = String::from_utf8_lossy(&bytes);
        Ok(text.strip_prefix(' ').unwrap_or(&text).to_string())
    }

    pub fn to_json(&self) -> String {
        let file = ModelFile {
            version: MODEL_VERSION,
            boundary_marker: BOUNDARY_MARKER.to_string(),
            vocab: self.surfaces.clone(),
            merges: self.merges.clone(),
            base_size: self.base_size,
        };
        let mut s = serde_json::to_string_pretty(&file).expect("model serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self, TokenizerError> {
        let file: ModelFile =
            serde_json::from_str(text).map_err(|e| TokenizerError::InvalidModel(e.to_string()))?;
        if file.version != MODEL_VERSION {
            return Err(TokenizerError::InvalidModel(format!(
                "unsupported model version {}",
                file.version
            )));
        }
        if file.boundary_marker != BOUNDARY_MARKER.to_string() {
            return Err(TokenizerError::InvalidModel(format!(
                "unsupported boundary marker {:?}",
                file.boundary_marker
            )));
        }
        Self::from_parts(file.vocab, file.merges, file.base_size)
    }

    pub fn save(&self, path: &Path) -> Result<(), TokenizerError> {
        std::fs::write(path, self.to_json()).map_err(|e| TokenizerError::Io {
            path: path.to_path_buf(),
            source: e,
        })
    }

    pub fn load(path: &Path) -> Result<Self, TokenizerError> {
        let text = std::fs::read_to_string(path).map_err(|e| TokenizerError::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        Self::from_json(&text).map_err(|e| match e {
            TokenizerError::InvalidModel(message) => TokenizerError::Parse {
                path: path.to_path_buf(),
                message,
            },
            other => other,
        })
    }

    /// Surfaces present in both vocabularies (must be empty for a valid expansion).
    pub fn overlap_with_base(&self) -> HashSet<&str> {
        let base: HashSet<&str> = self.base_vocab().map(|(s, _)| s).collect();
        self.added_vocab().map(|(s, _)| s).filter(|s| base.contains(s)).collect()
    }
}

/// Splits space-prefixed text into marker-led words and lone whitespace characters.
pub(crate) fn pre_tokenize(text: &str) -> Vec<&str> {
    let chars: Vec<(usize, char)> = text.char_indices().collect();
    let end_of = |j: usize| chars.get(j).map_or(text.len(), |(p, _)| *p);
    let mut pieces = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let (start, c) = chars[i];
        let word_follows = chars.get(i + 1).is_some_and(|(_, n)| !n.is_whitespace());
        if c.is_whitespace() && !(c == ' ' && word_follows) {
            pieces.push(&text[start..start + c.len_utf8()]);
            i += 1;
            continue;
        }
        let mut j = if c == ' ' { i + 1 } else { i };
        while j < chars.len() && !chars[j].1.is_whitespace() {
            j += 1;
        }
        pieces.push(&text[start..end_of(j)]);
        i = j;
    }
    pieces
}
