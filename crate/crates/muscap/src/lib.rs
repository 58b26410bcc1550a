//! muscap: caption generation for music playlists.
//!
//! Per-track features (an audio summary vector concatenated with the mean
//! metadata word embedding) are encoded by a two-layer GRU; a two-layer GRU
//! decoder regresses a sequence of word embeddings, trained end to end with
//! a 1−cosine objective under ADAM and decoded back to words by nearest
//! neighbor. A fully-trainable variant replaces the precomputed audio
//! features with a convolutional summarizer over spectrograms and adds a
//! GRU text summarizer plus an optional auxiliary label head.

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod data;
pub mod embeddings;
pub mod error;
pub mod features;
pub mod fully;
pub mod nn;
pub mod seq2seq;
pub mod tensor;

pub use error::{Error, Result};
