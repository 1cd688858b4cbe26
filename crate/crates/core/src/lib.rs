//! Discourse-marker pair mining from dependency parses, plus baselines and
//! a BiLSTM-max encoder for predicting the marker that joined two
//! sentences.
//!
//! The pipeline runs bottom-up: [`corpus`] reads CoNLL-U, [`patterns`]
//! matches marker dependency shapes, [`extract`] turns matches into
//! filtered (S1, S2, marker) pairs, [`dataset`] subsets, splits and balances
//! them, and [`embed`], [`encoder`] and [`eval`] train and score
//! classifiers. [`align`] measures extraction precision against gold pairs.

pub mod align;
pub mod cli;
pub mod corpus;
pub mod dataset;
pub mod embed;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod extract;
pub mod patterns;
pub mod synth;

pub use corpus::{parse_conllu, DepSentence, Document, Token};
pub use dataset::{MarkerSet, PairDataset, PairRecord, Split};
pub use error::{Error, Result};
pub use extract::{extract_pairs, ExtractedPair, ExtractionConfig, Mode, RejectReason};
pub use patterns::{default_patterns, MarkerPattern, PatternRegistry};
