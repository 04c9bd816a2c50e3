//! BPE merge training.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap, HashSet};
use std::path::Path;
use std::rc::Rc;

use serde::{Deserialize, Serialize};

use super::{surface, TokenizerError, BOUNDARY_MARKER, MODEL_VERSION};

/// Merges learned from a corpus, in the order they were learned.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BpeFragment {
    pub merges: Vec<(String, String)>,
}

#[derive(Serialize, Deserialize)]
struct FragmentFile {
    version: u32,
    boundary_marker: String,
    merges: Vec<(String, String)>,
    surfaces: Vec<String>,
}

impl BpeFragment {
    /// Merge outputs, in merge order.
    pub fn surfaces(&self) -> Vec<String> {
        self.merges.iter().map(|(l, r)| format!("{l}{r}")).collect()
    }

    pub fn is_empty(&self) -> bool {
        self.merges.is_empty()
    }

    pub fn to_json(&self) -> String {
        let file = FragmentFile {
            version: MODEL_VERSION,
            boundary_marker: BOUNDARY_MARKER.to_string(),
            merges: self.merges.clone(),
            surfaces: self.surfaces(),
        };
        let mut s = serde_json::to_string_pretty(&file).expect("fragment serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self, TokenizerError> {
        let file: FragmentFile =
            serde_json::from_str(text).map_err(|e| TokenizerError::InvalidModel(e.to_string()))?;
        let frag = BpeFragment { merges: file.merges };
        if frag.surfaces() != file.surfaces {
            return Err(TokenizerError::InvalidModel(
                "fragment surfaces do not match its merges".into(),
            ));
        }
        Ok(frag)
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
        Self::from_json(&text).map_err(|e| TokenizerError::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }
}

type Pair = (u32, u32);

/// Heap entry: highest count first, then the lexicographically smallest
/// `(left, right)` surface pair.
#[derive(PartialEq, Eq)]
struct Candidate {
    count: i64,
    left: Rc<str>,
    right: Rc<str>,
    pair: Pair,
}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.count
            .cmp(&other.count)
            .then_with(|| (&other.left, &other.right).cmp(&(&self.left, &self.right)))
    }
}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

struct Trainer {
    symbols: Vec<Rc<str>>,
    words: Vec<Vec<u32>>,
    counts: Vec<i64>,
    pair_counts: HashMap<Pair, i64>,
    pair_words: HashMap<Pair, HashSet<usize>>,
    heap: BinaryHeap<Candidate>,
}

impl Trainer {
    fn new(word_counts: HashMap<Vec<u8>, i64>) -> Self {
        let mut entries: Vec<(Vec<u8>, i64)> = word_counts.into_iter().collect();
        entries.sort_unstable();
        let symbols = (0..=255u8).map(|b| Rc::from(surface(&[b]))).collect();
        let mut t = Trainer {
            symbols,
            words: Vec::with_capacity(entries.len()),
            counts: Vec::with_capacity(entries.len()),
            pair_counts: HashMap::new(),
            pair_words: HashMap::new(),
            heap: BinaryHeap::new(),
        };
        for (w, (bytes, count)) in entries.into_iter().enumerate() {
            let word: Vec<u32> = bytes.into_iter().map(u32::from).collect();
            for p in word.windows(2) {
                *t.pair_counts.entry((p[0], p[1])).or_default() += count;
                t.pair_words.entry((p[0], p[1])).or_default().insert(w);
            }
            t.words.push(word);
            t.counts.push(count);
        }
        let pairs: Vec<(Pair, i64)> = t.pair_counts.iter().map(|(p, c)| (*p, *c)).collect();
        for (p, c) in pairs {
            t.push(p, c);
        }
        t
    }

    fn push(&mut self, pair: Pair, count: i64) {
        if count > 0 {
            self.heap.push(Candidate {
                count,
                left: self.symbols[pair.0 as usize].clone(),
                right: self.symbols[pair.1 as usize].clone(),
                pair,
            });
        }
    }

    fn best(&mut self) -> Option<Pair> {
        while let Some(c) = self.heap.pop() {
            if self.pair_counts.get(&c.pair).copied().unwrap_or(0) == c.count {
                return Some(c.pair);
            }
        }
        None
    }

    fn apply(&mut self, pair: Pair) {
        let new_id = self.symbols.len() as u32;
        let joined: String = format!("{}{}", self.symbols[pair.0 as usize], self.symbols[pair.1 as usize]);
        self.symbols.push(Rc::from(joined));

        let mut affected: Vec<usize> = self
            .pair_words
            .remove(&pair)
            .map(|s| s.into_iter().collect())
            .unwrap_or_default();
        affected.sort_unstable();

        let mut changed: HashSet<Pair> = HashSet::new();
        for w in affected {
            let old = &self.words[w];
            if !old.windows(2).any(|p| (p[0], p[1]) == pair) {
                continue;
            }
            let count = self.counts[w];
            let mut merged = Vec::with_capacity(old.len());
            let mut i = 0;
            while i < old.len() {
                if i + 1 < old.len() && (old[i], old[i + 1]) == pair {
                    merged.push(new_id);
                    i += 2;
                } else {
                    merged.push(old[i]);
                    i += 1;
                }
            }
            for p in old.windows(2) {
                *self.pair_counts.get_mut(&(p[0], p[1])).expect("counted") -= count;
                changed.insert((p[0], p[1]));
            }
            for p in merged.windows(2) {
                *self.pair_counts.entry((p[0], p[1])).or_default() += count;
                self.pair_words.entry((p[0], p[1])).or_default().insert(w);
                changed.insert((p[0], p[1]));
            }
            self.words[w] = merged;
        }
        for p in changed {
            let c = self.pair_counts.get(&p).copied().unwrap_or(0);
            self.push(p, c);
        }
    }
}

/// Learns up to `num_merges` merges from `corpus`.
///
/// Each whitespace-separated word is prefixed with the boundary marker and
/// split into bytes; the most frequent adjacent pair is merged repeatedly,
/// ties going to the lexicographically smallest `(left, right)` surfaces.
/// Training stops early once every word is a single token.
pub fn train_bpe<I, S>(corpus: I, num_merges: usize) -> Result<BpeFragment, TokenizerError>
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    let mut word_counts: HashMap<Vec<u8>, i64> = HashMap::new();
    for text in corpus {
        for word in text.as_ref().split_whitespace() {
            let mut bytes = Vec::with_capacity(word.len() + 1);
            bytes.push(b' ');
            bytes.extend_from_slice(word.as_bytes());
            *word_counts.entry(bytes).or_default() += 1;
        }
    }
    if word_counts.is_empty() {
        return Err(TokenizerError::EmptyCorpus);
    }
    let mut trainer = Trainer::new(word_counts);
    let mut merges = Vec::with_capacity(num_merges);
    while merges.len() < num_merges {
        let Some(pair) = trainer.best() else { break };
        merges.push((
            trainer.symbols[pair.0 as usize].to_string(),
            trainer.symbols[pair.1 as usize].to_string(),
        ));
        trainer.apply(pair);
    }
    Ok(BpeFragment { merges })
}
