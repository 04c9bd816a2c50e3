//! Corpus engineering and evaluation toolkit for adapting a pretrained language
//! model to a low-resource language.
//!
//! The data side runs ingest, cleaning, cross-source deduplication, BPE
//! vocabulary expansion and curriculum shard scheduling. The measurement side
//! scores externally produced model outputs (exact match, loglikelihood
//! multiple choice, BLEU-4, perplexity) and orchestrates LLM-as-judge rating of
//! multi-turn benchmark transcripts.
//!
//! Every stage is deterministic for fixed inputs and seed. Single-threaded
//! reference paths exist for each parallelised operation and produce the same
//! results as the parallel ones.

pub mod clean;
pub mod cli;
pub mod corpus;
pub mod dedup;
pub mod evalsuite;
pub mod judge;
pub mod records;
pub mod scheduler;
pub mod tokenizer;

pub use clean::{apply_filters, clean_corpus, FilterConfig, FilterReport, Verdict};
pub use corpus::{
    corpus_stats, load_manifest, read_bitext, read_documents, BitextPair, CorpusManifest,
    Document, SourceEntry, SourceKind, SourceStats,
};
pub use dedup::{dedup_stream, shingle, DedupConfig, DedupIndex, DedupReport, ShingleSet};
pub use tokenizer::{merge_vocab, profile, train_bpe, BpeFragment, BpeModel, TokenizerProfile};
