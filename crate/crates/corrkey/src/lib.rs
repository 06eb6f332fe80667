//! Correlated keyphrase generation.
//!
//! An encoder-decoder model that generates an ordered set of keyphrases for
//! a document. Three mechanisms shape the output distribution: a copy
//! pathway over source positions (handles out-of-vocabulary words), a
//! coverage vector that feeds the running sum of source attention back into
//! scoring, and a review context that attends over the decoder states of
//! previously generated phrases. Training, multi-phrase beam decoding and
//! the evaluation metrics (stemmed F1@K / R@K and alpha-NDCG@K) are all
//! implemented on a small recorded-tape autodiff substrate in this crate.

pub mod beam;
pub mod checkpoint;
pub mod cli;
pub mod corpus;
pub mod decoder;
pub mod encoder;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod training;
