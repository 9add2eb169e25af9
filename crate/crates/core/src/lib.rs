//! Clinical concept extraction as sequence labeling.
//!
//! The pipeline reads IOB-tagged corpora ([`corpus`]), optionally shifts
//! entity starts past leading stopwords ([`relabel`]), builds word, character
//! and writing-format features ([`features`]), and trains a two-layer BiLSTM
//! with a linear-chain CRF on top ([`tagger`], [`neural`], [`crf`]).
//! Predictions from several seeds can be combined by voting ([`ensemble`]) and
//! scored at the entity level ([`eval`]).

pub mod corpus;
pub mod crf;
pub mod ensemble;
pub mod eval;
pub mod features;
pub mod neural;
pub mod relabel;
pub mod selftest;
pub mod synthetic;
pub mod tagger;
