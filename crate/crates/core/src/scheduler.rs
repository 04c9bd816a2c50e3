//! Two-phase curriculum: parallel bitext first, then weighted mono data,
//! packed into fixed-length rows and written as binary shards.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{BitextPair, CorpusError, Document};
use crate::records::{write_json, RecordError};
use crate::tokenizer::{BpeModel, TokenId};

pub const SHARD_MAGIC: &[u8; 4] = b"GFSH";
pub const SHARD_VERSION: u16 = 1;
const HEADER_LEN: usize = 4 + 2 + 1 + 4 + 4;
const ENCODE_BATCH: usize = 1024;

#[derive(Debug, Error)]
pub enum ScheduleError {
    #[error("invalid schedule config: {0}")]
    InvalidConfig(String),
    #[error("mono source {0:?} has no documents")]
    EmptySource(String),
    #[error("no bitext pairs available for the parallel phase")]
    EmptyBitext,
    #[error("no mono sources to schedule")]
    NoMonoSources,
    #[error("{}: {message}", path.display())]
    Format { path: PathBuf, message: String },
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Record(#[from] RecordError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleConfig {
    pub seq_len: usize,
    /// Defaults to the model's vocabulary size.
    pub doc_separator_id: Option<TokenId>,
    /// Defaults to the model's vocabulary size plus one.
    pub pad_id: Option<TokenId>,
    pub seed: u64,
    pub parallel_template: String,
    pub parallel_budget_fraction: f64,
    /// Defaults to the manifest weights.
    pub mono_weights: Option<BTreeMap<String, f64>>,
    /// Mono-phase token budget; one pass over every source when absent.
    pub mono_token_budget: Option<u64>,
    pub rows_per_shard: usize,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        ScheduleConfig {
            seq_len: 2048,
            doc_separator_id: None,
            pad_id: None,
            seed: 0,
            parallel_template: "{en}\n{ga}".to_string(),
            parallel_budget_fraction: 0.01,
            mono_weights: None,
            mono_token_budget: None,
            rows_per_shard: 1024,
        }
    }
}

impl ScheduleConfig {
    pub fn validate(&self) -> Result<(), ScheduleError> {
        let bad = |m: String| Err(ScheduleError::InvalidConfig(m));
        if self.seq_len < 2 || self.seq_len > u32::MAX as usize {
            return bad(format!("seq_len must be at least 2, got {}", self.seq_len));
        }
        if !(self.parallel_budget_fraction > 0.0 && self.parallel_budget_fraction <= 1.0) {
            return bad(format!(
                "parallel_budget_fraction must be in (0, 1], got {}",
                self.parallel_budget_fraction
            ));
        }
        if self.rows_per_shard == 0 {
            return bad("rows_per_shard must be positive".into());
        }
        if self.mono_token_budget == Some(0) {
            return bad("mono_token_budget must be positive".into());
        }
        if let Some(w) = &self.mono_weights {
            if let Some((name, v)) = w.iter().find(|(_, v)| !(v.is_finite() && **v > 0.0)) {
                return bad(format!("weight for {name:?} must be positive, got {v}"));
            }
            let sum: f64 = w.values().sum();
            if (sum - 1.0).abs() > 1e-9 {
                return bad(format!("mono_weights sum to {sum}, expected 1.0"));
            }
        }
        Ok(())
    }

    /// Separator and pad ids for `model`, checked to be distinct and with the
    /// pad outside the model vocabulary.
    pub fn special_ids(&self, model: &BpeModel) -> Result<(TokenId, TokenId), ScheduleError> {
        let vocab = model.vocab_size() as TokenId;
        let sep = self.doc_separator_id.unwrap_or(vocab);
        let pad = self.pad_id.unwrap_or(vocab + 1);
        if sep == pad {
            return Err(ScheduleError::InvalidConfig(format!(
                "doc_separator_id and pad_id are both {sep}"
            )));
        }
        if pad < vocab {
            return Err(ScheduleError::InvalidConfig(format!(
                "pad_id {pad} collides with a vocabulary token (vocab size {vocab})"
            )));
        }
        Ok((sep, pad))
    }

    pub fn from_toml(text: &str) -> Result<Self, ScheduleError> {
        let cfg: ScheduleConfig =
            toml::from_str(text).map_err(|e| ScheduleError::InvalidConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Parallel,
    Mono,
}

impl Phase {
    fn code(self) -> u8 {
        match self {
            Phase::Parallel => 0,
            Phase::Mono => 1,
        }
    }

    fn from_code(c: u8) -> Option<Self> {
        match c {
            0 => Some(Phase::Parallel),
            1 => Some(Phase::Mono),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Phase::Parallel => "parallel",
            Phase::Mono => "mono",
        }
    }
}

/// Packed rows of one phase. `tokens` holds `rows * seq_len` ids row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrainingShard {
    pub phase: Phase,
    pub seq_len: usize,
    pub tokens: Vec<TokenId>,
    /// Non-pad tokens per source; separators count toward their document's source.
    pub source_histogram: BTreeMap<String, u64>,
}

#[derive(Serialize, Deserialize)]
struct ShardFooter {
    source_histogram: BTreeMap<String, u64>,
}

impl TrainingShard {
    pub fn new(phase: Phase, seq_len: usize) -> Self {
        TrainingShard {
            phase,
            seq_len,
            tokens: Vec::new(),
            source_histogram: BTreeMap::new(),
        }
    }

    pub fn row_count(&self) -> usize {
        self.tokens.len() / self.seq_len
    }

    pub fn rows(&self) -> impl Iterator<Item = &[TokenId]> {
        self.tokens.chunks_exact(self.seq_len)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + self.tokens.len() * 4 + 64);
        out.extend_from_slice(SHARD_MAGIC);
        out.extend_from_slice(&SHARD_VERSION.to_le_bytes());
        out.push(self.phase.code());
        out.extend_from_slice(&(self.seq_len as u32).to_le_bytes());
        out.extend_from_slice(&(self.row_count() as u32).to_le_bytes());
        for t in &self.tokens {
            out.extend_from_slice(&t.to_le_bytes());
        }
        let footer = ShardFooter {
            source_histogram: self.source_histogram.clone(),
        };
        out.extend_from_slice(&serde_json::to_vec(&footer).expect("footer serializes"));
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, String> {
        if bytes.len() < HEADER_LEN {
            return Err("truncated header".into());
        }
        if &bytes[..4] != SHARD_MAGIC {
            return Err("bad magic".into());
        }
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
        let version = u16::from_le_bytes([bytes[4], bytes[5]]);
        if version != SHARD_VERSION {
            return Err(format!("unsupported version {version}"));
        }
        let phase = Phase::from_code(bytes[6]).ok_or_else(|| format!("unknown phase {}", bytes[6]))?;
        let seq_len = u32_at(7) as usize;
        let rows = u32_at(11) as usize;
        if seq_len == 0 {
            return Err("zero seq_len".into());
        }
        let body_len = rows
            .checked_mul(seq_len)
            .and_then(|n| n.checked_mul(4))
            .ok_or("row count overflows")?;
        let body_end = HEADER_LEN + body_len;
        if bytes.len() < body_end {
            return Err("truncated token data".into());
        }
        let tokens = bytes[HEADER_LEN..body_end]
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let footer: ShardFooter = serde_json::from_slice(&bytes[body_end..])
            .map_err(|e| format!("bad footer: {e}"))?;
        Ok(TrainingShard {
            phase,
            seq_len,
            tokens,
            source_histogram: footer.source_histogram,
        })
    }
}

pub fn write_shard(shard: &TrainingShard, path: &Path) -> Result<(), ScheduleError> {
    let io = |e| ScheduleError::Io {
        path: path.to_path_buf(),
        source: e,
    };
    let mut w = BufWriter::new(File::create(path).map_err(io)?);
    w.write_all(&shard.to_bytes()).map_err(io)?;
    w.flush().map_err(io)
}

pub fn read_shard(path: &Path) -> Result<TrainingShard, ScheduleError> {
    let mut bytes = Vec::new();
    File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| ScheduleError::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
    TrainingShard::from_bytes(&bytes).map_err(|message| ScheduleError::Format {
        path: path.to_path_buf(),
        message,
    })
}

/// Totals for one phase.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PhaseSummary {
    pub rows: u64,
    pub shards: u64,
    /// Non-pad tokens, separators included.
    pub tokens: u64,
    pub pad_tokens: u64,
    pub documents: u64,
    /// Inputs that rendered to no tokens.
    pub skipped: u64,
    pub source_histogram: BTreeMap<String, u64>,
}

type ShardSink<'s> = dyn FnMut(TrainingShard) -> Result<(), ScheduleError> + 's;

/// Greedy continuous packing: documents are concatenated and cut into rows;
/// only the final row of a phase is padded.
struct Packer<'a, 'b> {
    phase: Phase,
    seq_len: usize,
    pad: TokenId,
    rows_per_shard: usize,
    row_limit: Option<u64>,
    shard: TrainingShard,
    row_fill: usize,
    summary: PhaseSummary,
    sink: &'a mut ShardSink<'b>,
}

impl<'a, 'b> Packer<'a, 'b> {
    fn new(
        phase: Phase,
        cfg: &ScheduleConfig,
        pad: TokenId,
        row_limit: Option<u64>,
        sink: &'a mut ShardSink<'b>,
    ) -> Self {
        Packer {
            phase,
            seq_len: cfg.seq_len,
            pad,
            rows_per_shard: cfg.rows_per_shard,
            row_limit,
            shard: TrainingShard::new(phase, cfg.seq_len),
            row_fill: 0,
            summary: PhaseSummary::default(),
            sink,
        }
    }

    fn full(&self) -> bool {
        self.row_limit.is_some_and(|l| self.summary.rows >= l)
    }

    fn emit(&mut self) -> Result<(), ScheduleError> {
        let shard = std::mem::replace(&mut self.shard, TrainingShard::new(self.phase, self.seq_len));
        self.summary.shards += 1;
        (self.sink)(shard)
    }

    fn close_row(&mut self) -> Result<(), ScheduleError> {
        self.row_fill = 0;
        self.summary.rows += 1;
        if self.shard.row_count() == self.rows_per_shard {
            self.emit()?;
        }
        Ok(())
    }

    /// Appends one document; returns false once the row limit is reached.
    /// Tokens past the limit are dropped.
    fn push(&mut self, source: &str, tokens: &[TokenId]) -> Result<bool, ScheduleError> {
        if self.full() {
            return Ok(false);
        }
        self.summary.documents += 1;
        let mut rest = tokens;
        while !rest.is_empty() {
            let take = rest.len().min(self.seq_len - self.row_fill);
            self.shard.tokens.extend_from_slice(&rest[..take]);
            *self.shard.source_histogram.entry(source.to_string()).or_default() += take as u64;
            *self.summary.source_histogram.entry(source.to_string()).or_default() += take as u64;
            self.summary.tokens += take as u64;
            self.row_fill += take;
            rest = &rest[take..];
            if self.row_fill == self.seq_len {
                self.close_row()?;
                if self.full() {
                    return Ok(false);
                }
            }
        }
        Ok(true)
    }

    fn finish(mut self) -> Result<PhaseSummary, ScheduleError> {
        if self.row_fill > 0 {
            let pads = self.seq_len - self.row_fill;
            self.shard.tokens.extend(std::iter::repeat(self.pad).take(pads));
            self.summary.pad_tokens += pads as u64;
            self.close_row()?;
        }
        if !self.shard.tokens.is_empty() {
            self.emit()?;
        }
        Ok(self.summary)
    }
}

fn rows_for(budget: u64, seq_len: usize) -> u64 {
    budget.div_ceil(seq_len as u64)
}

pub fn render_pair(template: &str, pair: &BitextPair) -> String {
    let mut out = String::with_capacity(template.len() + pair.en.len() + pair.ga.len());
    let mut rest = template;
    while let Some(i) = rest.find('{') {
        out.push_str(&rest[..i]);
        let tail = &rest[i..];
        if let Some(t) = tail.strip_prefix("{en}") {
            out.push_str(&pair.en);
            rest = t;
        } else if let Some(t) = tail.strip_prefix("{ga}") {
            out.push_str(&pair.ga);
            rest = t;
        } else {
            out.push('{');
            rest = &tail[1..];
        }
    }
    out.push_str(rest);
    out
}

pub type BitextStream<'a> = Box<dyn Iterator<Item = Result<BitextPair, CorpusError>> + 'a>;
pub type DocumentStream<'a> = Box<dyn Iterator<Item = Result<Document, CorpusError>> + 'a>;

/// Packs bitext pairs in stream order, stopping after the rows needed to
/// cover `token_budget` (all pairs when absent).
pub fn build_parallel_phase(
    sources: Vec<(String, BitextStream<'_>)>,
    model: &BpeModel,
    cfg: &ScheduleConfig,
    token_budget: Option<u64>,
    sink: &mut ShardSink<'_>,
) -> Result<PhaseSummary, ScheduleError> {
    cfg.validate()?;
    let (sep, pad) = cfg.special_ids(model)?;
    let limit = token_budget.map(|b| rows_for(b, cfg.seq_len));
    let mut packer = Packer::new(Phase::Parallel, cfg, pad, limit, sink);
    let mut seen_any = false;
    let mut skipped = 0;
    'sources: for (name, mut stream) in sources {
        loop {
            let mut batch = Vec::with_capacity(ENCODE_BATCH);
            for item in stream.by_ref().take(ENCODE_BATCH) {
                batch.push(item?);
            }
            if batch.is_empty() {
                break;
            }
            seen_any = true;
            let encoded: Vec<Vec<TokenId>> = batch
                .par_iter()
                .map(|p| model.encode(&render_pair(&cfg.parallel_template, p)))
                .collect();
            for mut ids in encoded {
                if ids.is_empty() {
                    skipped += 1;
                    continue;
                }
                ids.push(sep);
                if !packer.push(&name, &ids)? {
                    break 'sources;
                }
            }
        }
    }
    if !seen_any {
        return Err(ScheduleError::EmptyBitext);
    }
    if skipped > 0 {
        log::warn!("parallel phase skipped {skipped} pair(s) that rendered to no tokens");
    }
    let mut summary = packer.finish()?;
    summary.skipped = skipped;
    Ok(summary)
}

pub struct MonoInput<'a> {
    pub name: String,
    pub weight: f64,
    pub docs: DocumentStream<'a>,
}

struct MonoState<'a> {
    input: MonoInput<'a>,
    next: Option<Vec<TokenId>>,
    done: bool,
    consumed_docs: u64,
    consumed_tokens: u64,
    skipped: u64,
}

impl MonoState<'_> {
    fn refill(&mut self, model: &BpeModel, sep: TokenId) -> Result<(), ScheduleError> {
        while self.next.is_none() && !self.done {
            match self.input.docs.next() {
                None => self.done = true,
                Some(doc) => {
                    let mut ids = model.encode(&doc?.text);
                    if ids.is_empty() {
                        self.skipped += 1;
                        continue;
                    }
                    ids.push(sep);
                    self.next = Some(ids);
                }
            }
        }
        Ok(())
    }

    /// Sampling weight per document. Dividing by the running mean document
    /// length (including the queued one) makes token shares track the weights
    /// even when sources differ in document length.
    fn draw_weight(&self) -> f64 {
        let next_len = self.next.as_ref().map_or(0, Vec::len) as f64;
        let mean = (self.consumed_tokens as f64 + next_len) / (self.consumed_docs + 1) as f64;
        self.input.weight / mean
    }
}

/// Draws documents from the sources by seeded weighted sampling, each source
/// read in its own order, until the rows covering `token_budget` are full or
/// every source is exhausted.
pub fn build_mono_phase(
    sources: Vec<MonoInput<'_>>,
    model: &BpeModel,
    cfg: &ScheduleConfig,
    token_budget: Option<u64>,
    sink: &mut ShardSink<'_>,
) -> Result<PhaseSummary, ScheduleError> {
    cfg.validate()?;
    let (sep, pad) = cfg.special_ids(model)?;
    if sources.is_empty() {
        return Err(ScheduleError::NoMonoSources);
    }
    let mut states = Vec::with_capacity(sources.len());
    for input in sources {
        if !(input.weight.is_finite() && input.weight > 0.0) {
            return Err(ScheduleError::InvalidConfig(format!(
                "weight for {:?} must be positive, got {}",
                input.name, input.weight
            )));
        }
        let mut st = MonoState {
            input,
            next: None,
            done: false,
            consumed_docs: 0,
            consumed_tokens: 0,
            skipped: 0,
        };
        st.refill(model, sep)?;
        if st.next.is_none() {
            return Err(ScheduleError::EmptySource(st.input.name));
        }
        states.push(st);
    }
    let limit = token_budget.map(|b| rows_for(b, cfg.seq_len));
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut packer = Packer::new(Phase::Mono, cfg, pad, limit, sink);
    let mut warned = vec![false; states.len()];
    loop {
        for (i, st) in states.iter().enumerate() {
            if st.next.is_none() && !warned[i] {
                warned[i] = true;
                if limit.is_some() {
                    log::warn!(
                        "mono source {:?} exhausted before the budget; renormalizing over the rest",
                        st.input.name
                    );
                }
            }
        }
        let weights: Vec<f64> = states
            .iter()
            .map(|s| if s.next.is_some() { s.draw_weight() } else { 0.0 })
            .collect();
        let total: f64 = weights.iter().sum();
        if total <= 0.0 {
            break;
        }
        let mut u = rng.gen::<f64>() * total;
        let mut pick = weights.iter().rposition(|&w| w > 0.0).expect("positive total");
        for (i, w) in weights.iter().enumerate() {
            if *w > 0.0 && u < *w {
                pick = i;
                break;
            }
            u -= w;
        }
        let st = &mut states[pick];
        let ids = st.next.take().expect("picked source has a queued document");
        st.consumed_docs += 1;
        st.consumed_tokens += ids.len() as u64;
        if !packer.push(&st.input.name, &ids)? {
            break;
        }
        st.refill(model, sep)?;
    }
    let mut summary = packer.finish()?;
    summary.skipped = states.iter().map(|s| s.skipped).sum();
    Ok(summary)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShardEntry {
    pub path: String,
    pub phase: Phase,
    pub rows: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleIndex {
    pub version: u16,
    pub seq_len: usize,
    pub doc_separator_id: TokenId,
    pub pad_id: TokenId,
    pub seed: u64,
    pub parallel_token_budget: u64,
    pub parallel: PhaseSummary,
    pub mono: PhaseSummary,
    /// Shards in training order: every parallel shard, then every mono shard.
    pub shards: Vec<ShardEntry>,
}

impl ScheduleIndex {
    pub fn load(path: &Path) -> Result<Self, ScheduleError> {
        let text = std::fs::read_to_string(path).map_err(|e| ScheduleError::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        serde_json::from_str(&text).map_err(|e| ScheduleError::Format {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }
}

pub const INDEX_FILE: &str = "index.json";

fn shard_writer<'a>(
    dir: &'a Path,
    phase: Phase,
    entries: &'a mut Vec<ShardEntry>,
) -> impl FnMut(TrainingShard) -> Result<(), ScheduleError> + 'a {
    move |shard| {
        let name = format!("{}-{:05}.gfsh", phase.name(), entries.len());
        write_shard(&shard, &dir.join(&name))?;
        entries.push(ShardEntry {
            path: name,
            phase,
            rows: shard.row_count() as u64,
        });
        Ok(())
    }
}

/// Builds both phases into `out_dir` and writes the shard index.
///
/// The mono phase is packed first because the parallel budget is
/// `parallel_budget_fraction` of its non-pad token count; the index lists the
/// parallel shards first.
pub fn build_schedule(
    out_dir: &Path,
    mono: Vec<MonoInput<'_>>,
    bitext: Vec<(String, BitextStream<'_>)>,
    model: &BpeModel,
    cfg: &ScheduleConfig,
) -> Result<ScheduleIndex, ScheduleError> {
    cfg.validate()?;
    let (sep, pad) = cfg.special_ids(model)?;
    std::fs::create_dir_all(out_dir).map_err(|e| ScheduleError::Io {
        path: out_dir.to_path_buf(),
        source: e,
    })?;
    let mut mono_entries = Vec::new();
    let mono_summary = {
        let mut sink = shard_writer(out_dir, Phase::Mono, &mut mono_entries);
        build_mono_phase(mono, model, cfg, cfg.mono_token_budget, &mut sink)?
    };
    let budget = (cfg.parallel_budget_fraction * mono_summary.tokens as f64).round() as u64;
    let mut parallel_entries = Vec::new();
    let parallel_summary = {
        let mut sink = shard_writer(out_dir, Phase::Parallel, &mut parallel_entries);
        build_parallel_phase(bitext, model, cfg, Some(budget), &mut sink)?
    };
    if parallel_summary.tokens < budget {
        log::warn!(
            "bitext supplied {} tokens, short of the {budget}-token parallel budget",
            parallel_summary.tokens
        );
    }
    let mut shards = parallel_entries;
    shards.extend(mono_entries);
    let index = ScheduleIndex {
        version: SHARD_VERSION,
        seq_len: cfg.seq_len,
        doc_separator_id: sep,
        pad_id: pad,
        seed: cfg.seed,
        parallel_token_budget: budget,
        parallel: parallel_summary,
        mono: mono_summary,
        shards,
    };
    write_json(&out_dir.join(INDEX_FILE), &index)?;
    Ok(index)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(seq_len: usize) -> ScheduleConfig {
        ScheduleConfig {
            seq_len,
            ..ScheduleConfig::default()
        }
    }

    fn pair(id: &str, en: &str, ga: &str) -> BitextPair {
        BitextPair {
            id: id.into(),
            en: en.into(),
            ga: ga.into(),
        }
    }

    fn doc(source: &str, id: usize, text: &str) -> Document {
        Document {
            id: format!("{source}-{id}"),
            source: source.into(),
            lang: "ga".into(),
            text: text.into(),
        }
    }

    fn bitext(pairs: Vec<BitextPair>) -> Vec<(String, BitextStream<'static>)> {
        vec![("elrc".to_string(), Box::new(pairs.into_iter().map(Ok)))]
    }

    fn mono(name: &str, weight: f64, docs: Vec<Document>) -> MonoInput<'static> {
        MonoInput {
            name: name.into(),
            weight,
            docs: Box::new(docs.into_iter().map(Ok)),
        }
    }

    fn collect_parallel(
        pairs: Vec<BitextPair>,
        c: &ScheduleConfig,
        budget: Option<u64>,
    ) -> (Vec<TrainingShard>, PhaseSummary) {
        let m = BpeModel::byte_level();
        let mut shards = Vec::new();
        let s = build_parallel_phase(bitext(pairs), &m, c, budget, &mut |sh| {
            shards.push(sh);
            Ok(())
        })
        .unwrap();
        (shards, s)
    }

    fn collect_mono(inputs: Vec<MonoInput<'_>>, c: &ScheduleConfig, budget: Option<u64>) -> (Vec<TrainingShard>, PhaseSummary) {
        let m = BpeModel::byte_level();
        let mut shards = Vec::new();
        let s = build_mono_phase(inputs, &m, c, budget, &mut |sh| {
            shards.push(sh);
            Ok(())
        })
        .unwrap();
        (shards, s)
    }

    #[test]
    fn exact_fit_is_one_row() {
        // Template "{en}" on byte-level: " ab" is 3 tokens, plus separator = seq_len 4.
        let c = ScheduleConfig {
            parallel_template: "{en}".into(),
            ..cfg(4)
        };
        let (shards, s) = collect_parallel(vec![pair("1", "ab", "")], &c, None);
        assert_eq!(shards.len(), 1);
        assert_eq!(shards[0].tokens, vec![32, 97, 98, 256]);
        assert_eq!(s.pad_tokens, 0);
    }

    #[test]
    fn overflow_by_separator_pads_second_row() {
        let c = ScheduleConfig {
            parallel_template: "{en}".into(),
            ..cfg(3)
        };
        let (shards, s) = collect_parallel(vec![pair("1", "ab", "")], &c, None);
        assert_eq!(shards[0].tokens, vec![32, 97, 98, 256, 257, 257]);
        assert_eq!(s.rows, 2);
        assert_eq!(s.pad_tokens, 2);
        assert_eq!(shards[0].source_histogram["elrc"], 4);
    }

    #[test]
    fn template_rendering() {
        let p = pair("1", "hello", "dia duit");
        assert_eq!(render_pair("{en}\n{ga}", &p), "hello\ndia duit");
        assert_eq!(render_pair("EN: {en} {x} GA: {ga}{", &p), "EN: hello {x} GA: dia duit{");
        let tricky = pair("2", "{ga}", "z");
        assert_eq!(render_pair("{en}|{ga}", &tricky), "{ga}|z");
    }

    #[test]
    fn empty_renders_are_skipped() {
        let c = ScheduleConfig {
            parallel_template: "{ga}".into(),
            ..cfg(8)
        };
        let (_, s) = collect_parallel(vec![pair("1", "x", ""), pair("2", "x", "y")], &c, None);
        assert_eq!(s.skipped, 1);
        assert_eq!(s.documents, 1);
    }

    #[test]
    fn parallel_budget_truncates() {
        let pairs: Vec<BitextPair> = (0..100).map(|i| pair(&i.to_string(), "abc", "def")).collect();
        let (shards, s) = collect_parallel(pairs, &cfg(16), Some(40));
        assert_eq!(s.rows, 3);
        assert_eq!(s.pad_tokens, 0);
        assert_eq!(shards.iter().map(|s| s.row_count()).sum::<usize>(), 3);
    }

    #[test]
    fn single_source_keeps_order() {
        let docs: Vec<Document> = (0..20).map(|i| doc("a", i, &format!("doc{i}"))).collect();
        let (shards, _) = collect_mono(vec![mono("a", 1.0, docs)], &cfg(7), None);
        let m = BpeModel::byte_level();
        let text = m.decode(&shards.iter().flat_map(|s| s.tokens.iter().copied()).filter(|&t| t < 256).collect::<Vec<_>>()).unwrap();
        let expected: String = (0..20).map(|i| format!(" doc{i}")).collect();
        assert_eq!(format!(" {text}"), expected);
    }

    #[test]
    fn mono_budget_stops_at_row_boundary() {
        let docs: Vec<Document> = (0..100).map(|i| doc("a", i, "abcdefg")).collect();
        let (_, s) = collect_mono(vec![mono("a", 1.0, docs)], &cfg(10), Some(95));
        assert_eq!(s.rows, 10);
        assert_eq!(s.pad_tokens, 0);
        assert_eq!(s.tokens, 100);
    }

    #[test]
    fn exhaustion_renormalizes() {
        let a: Vec<Document> = (0..3).map(|i| doc("a", i, "aaaa")).collect();
        let b: Vec<Document> = (0..50).map(|i| doc("b", i, "bbbb")).collect();
        let (_, s) = collect_mono(vec![mono("a", 0.9, a), mono("b", 0.1, b)], &cfg(8), None);
        assert_eq!(s.documents, 53);
        assert_eq!(s.source_histogram["a"], 18);
        assert_eq!(s.source_histogram["b"], 300);
    }

    #[test]
    fn empty_weighted_source_is_an_error() {
        let m = BpeModel::byte_level();
        let r = build_mono_phase(
            vec![mono("a", 0.5, vec![doc("a", 0, "x")]), mono("b", 0.5, vec![])],
            &m,
            &cfg(8),
            None,
            &mut |_| Ok(()),
        );
        assert!(matches!(r, Err(ScheduleError::EmptySource(n)) if n == "b"));
    }

    #[test]
    fn weighted_fractions_track_weights() {
        // Sources with very different document lengths.
        let a: Vec<Document> = (0..20000).map(|i| doc("a", i, &"focal ".repeat(3 + i % 5))).collect();
        let b: Vec<Document> = (0..20000).map(|i| doc("b", i, &"abairt fhada ".repeat(20 + i % 7))).collect();
        let c = ScheduleConfig { seed: 7, ..cfg(512) };
        let (_, s) = collect_mono(vec![mono("a", 0.65, a), mono("b", 0.35, b)], &c, Some(1_000_000));
        let total = s.tokens as f64;
        let fa = s.source_histogram["a"] as f64 / total;
        assert!((fa - 0.65).abs() < 0.02, "fraction {fa}");
    }

    #[test]
    fn pads_only_in_final_row() {
        let docs: Vec<Document> = (0..37).map(|i| doc("a", i, "tá")).collect();
        let c = ScheduleConfig { rows_per_shard: 2, ..cfg(5) };
        let (shards, s) = collect_mono(vec![mono("a", 1.0, docs)], &c, None);
        let pad = 257;
        let all: Vec<&[u32]> = shards.iter().flat_map(|s| s.rows()).collect();
        for row in &all[..all.len() - 1] {
            assert!(!row.contains(&pad));
        }
        let last = all.last().unwrap();
        let first_pad = last.iter().position(|&t| t == pad).unwrap_or(last.len());
        assert!(last[first_pad..].iter().all(|&t| t == pad));
        assert!(shards.iter().all(|s| s.row_count() <= 2));
        let hist: u64 = shards.iter().flat_map(|s| s.source_histogram.values()).sum();
        assert_eq!(hist, s.tokens);
    }

    #[test]
    fn shard_bytes_layout() {
        let shard = TrainingShard {
            phase: Phase::Mono,
            seq_len: 2,
            tokens: vec![1, 2, 3, 0x0102_0304],
            source_histogram: BTreeMap::from([("a".to_string(), 4)]),
        };
        let bytes = shard.to_bytes();
        let mut want = b"GFSH".to_vec();
        want.extend([1, 0, 1, 2, 0, 0, 0, 2, 0, 0, 0]);
        want.extend([1, 0, 0, 0, 2, 0, 0, 0, 3, 0, 0, 0, 4, 3, 2, 1]);
        want.extend(br#"{"source_histogram":{"a":4}}"#);
        assert_eq!(bytes, want);
        assert_eq!(TrainingShard::from_bytes(&bytes).unwrap(), shard);
    }

    #[test]
    fn bad_shards_rejected() {
        let shard = TrainingShard {
            phase: Phase::Parallel,
            seq_len: 2,
            tokens: vec![1, 2],
            source_histogram: BTreeMap::new(),
        };
        let bytes = shard.to_bytes();
        let mut wrong = bytes.clone();
        wrong[0] = b'X';
        assert!(TrainingShard::from_bytes(&wrong).unwrap_err().contains("magic"));
        assert!(TrainingShard::from_bytes(&bytes[..18]).is_err());
        assert!(TrainingShard::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut version = bytes.clone();
        version[4] = 9;
        assert!(TrainingShard::from_bytes(&version).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(cfg(1).validate().is_err());
        let c = ScheduleConfig {
            parallel_budget_fraction: 0.0,
            ..cfg(8)
        };
        assert!(c.validate().is_err());
        let c = ScheduleConfig {
            mono_weights: Some(BTreeMap::from([("a".into(), 0.5), ("b".into(), 0.4)])),
            ..cfg(8)
        };
        assert!(c.validate().is_err());
        let m = BpeModel::byte_level();
        let c = ScheduleConfig {
            doc_separator_id: Some(5),
            pad_id: Some(5),
            ..cfg(8)
        };
        assert!(c.special_ids(&m).is_err());
        let c = ScheduleConfig { pad_id: Some(10), ..cfg(8) };
        assert!(c.special_ids(&m).is_err());
        assert_eq!(cfg(8).special_ids(&m).unwrap(), (256, 257));
        let parsed = ScheduleConfig::from_toml("seq_len = 16\nseed = 3\n").unwrap();
        assert_eq!(parsed.seq_len, 16);
        assert!(ScheduleConfig::from_toml("bogus = 1").is_err());
    }

    #[test]
    fn schedule_orders_parallel_first_and_is_deterministic() {
        let run = |dir: &Path| {
            let a: Vec<Document> = (0..400).map(|i| doc("a", i, &format!("cáipéis uimhir {i} anseo"))).collect();
            let b: Vec<Document> = (0..400).map(|i| doc("b", i, &format!("téacs eile {i}"))).collect();
            let pairs: Vec<BitextPair> = (0..200).map(|i| pair(&i.to_string(), "the cat", "an cat")).collect();
            let c = ScheduleConfig {
                seed: 11,
                parallel_budget_fraction: 0.05,
                rows_per_shard: 8,
                ..cfg(32)
            };
            build_schedule(dir, vec![mono("a", 0.7, a), mono("b", 0.3, b)], bitext(pairs), &BpeModel::byte_level(), &c).unwrap()
        };
        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        let i1 = run(d1.path());
        let i2 = run(d2.path());
        assert_eq!(i1, i2);
        let first_mono = i1.shards.iter().position(|s| s.phase == Phase::Mono).unwrap();
        assert!(i1.shards[..first_mono].iter().all(|s| s.phase == Phase::Parallel));
        assert!(i1.shards[first_mono..].iter().all(|s| s.phase == Phase::Mono));
        assert!(first_mono > 0);
        let budget = i1.parallel_token_budget;
        assert!(i1.parallel.tokens >= budget && i1.parallel.tokens < budget + 32);
        for e in &i1.shards {
            let b1 = std::fs::read(d1.path().join(&e.path)).unwrap();
            assert_eq!(b1, std::fs::read(d2.path().join(&e.path)).unwrap());
            assert_eq!(read_shard(&d1.path().join(&e.path)).unwrap().row_count() as u64, e.rows);
        }
        assert_eq!(ScheduleIndex::load(&d1.path().join(INDEX_FILE)).unwrap(), i1);
    }
}
