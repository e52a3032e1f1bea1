//! Corpus loading, keyword counting, and attention-index construction.
//!
//! The pipeline is: load region-year documents ([`load_corpus`]), count
//! dictionary keywords with a longest-match literal scanner
//! ([`count_keywords`]), size each document with a [`Segmenter`], and scale
//! hits into an [`AttentionIndex`] ([`gea_index`] / [`index_corpus`]).

mod corpus;
mod dict;
mod index;
mod segment;

pub use corpus::{load_corpus, Corpus, Document};
pub use dict::{Dimension, KeywordDictionary, DEFAULT_DICTIONARY};
pub use index::{
    aggregate_index, count_keywords, gea_index, index_corpus, total_tokens, write_index_csv,
    write_series_csv, AttentionIndex, GroupBy, IndexVariant, KeywordCounts, KeywordMatcher,
};
pub use segment::{
    FixedWindowSegmenter, PreSegmented, Segmenter, SegmenterKind, WhitespaceSegmenter,
};
