#![allow(dead_code)]

use std::path::{Path, PathBuf};

use gaelforge::Document;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

pub fn golden_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden")
}

pub fn load_json(name: &str) -> serde_json::Value {
    let text = std::fs::read_to_string(fixtures().join(name)).unwrap();
    serde_json::from_str(&text).unwrap()
}

pub fn word_list(name: &str) -> Vec<String> {
    std::fs::read_to_string(fixtures().join(name))
        .unwrap()
        .split_whitespace()
        .map(str::to_string)
        .collect()
}

/// Compares `actual` with a golden file, or rewrites it when UPDATE_GOLDEN is set.
pub fn check_golden(name: &str, actual: &str) -> Result<(), String> {
    let path = golden_dir().join(name);
    if std::env::var_os("UPDATE_GOLDEN").is_some() {
        std::fs::create_dir_all(golden_dir()).unwrap();
        std::fs::write(&path, actual).unwrap();
        return Ok(());
    }
    let want = std::fs::read_to_string(&path).map_err(|e| format!("{}: {e}", path.display()))?;
    if want == actual {
        Ok(())
    } else {
        Err(format!("{} differs from the golden file", path.display()))
    }
}

pub fn doc(source: &str, id: &str, text: &str) -> Document {
    Document {
        id: id.into(),
        source: source.into(),
        lang: "ga".into(),
        text: text.into(),
    }
}

/// Zipf-weighted word sampler over a fixed list.
pub struct ZipfText {
    words: Vec<String>,
    cumulative: Vec<f64>,
    pub rng: ChaCha8Rng,
}

impl ZipfText {
    pub fn new(mut words: Vec<String>, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        words.shuffle(&mut rng);
        let mut acc = 0.0;
        let cumulative = (0..words.len())
            .map(|i| {
                acc += 1.0 / (i + 1) as f64;
                acc
            })
            .collect();
        ZipfText { words, cumulative, rng }
    }

    pub fn word(&mut self) -> &str {
        let total = *self.cumulative.last().unwrap();
        let x = self.rng.gen::<f64>() * total;
        let i = self.cumulative.partition_point(|c| *c < x).min(self.words.len() - 1);
        &self.words[i]
    }

    pub fn sentence(&mut self, min: usize, max: usize) -> String {
        let n = self.rng.gen_range(min..=max);
        let mut s = String::new();
        for i in 0..n {
            if i > 0 {
                s.push(' ');
            }
            let w = self.word().to_string();
            s.push_str(&w);
        }
        s.push('.');
        s
    }

    /// Sentences joined by spaces until at least `chars` scalar values.
    pub fn text(&mut self, chars: usize) -> String {
        let mut out = String::new();
        while out.chars().count() < chars {
            if !out.is_empty() {
                out.push(' ');
            }
            let s = self.sentence(4, 14);
            out.push_str(&s);
        }
        out
    }
}

/// Pseudo-words built from Irish-looking syllables; many distinct forms.
pub fn pseudo_words(count: usize, seed: u64) -> Vec<String> {
    const ONSETS: [&str; 24] = [
        "b", "bh", "c", "ch", "d", "dh", "f", "fh", "g", "gh", "l", "m", "mh", "n", "p", "ph", "r", "s", "sh",
        "t", "th", "br", "cl", "gr",
    ];
    const NUCLEI: [&str; 16] = [
        "a", "á", "e", "é", "i", "í", "o", "ó", "u", "ú", "ai", "ea", "ao", "ui", "ía", "ua",
    ];
    const CODAS: [&str; 10] = ["", "n", "r", "s", "ch", "ll", "nn", "dh", "igh", "t"];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut seen = std::collections::HashSet::new();
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let syllables = rng.gen_range(1..=4);
        let mut w = String::new();
        for _ in 0..syllables {
            w.push_str(ONSETS[rng.gen_range(0..ONSETS.len())]);
            w.push_str(NUCLEI[rng.gen_range(0..NUCLEI.len())]);
            w.push_str(CODAS[rng.gen_range(0..CODAS.len())]);
        }
        if seen.insert(w.clone()) {
            out.push(w);
        }
    }
    out
}
