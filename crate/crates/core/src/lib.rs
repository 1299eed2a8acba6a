//! Reproducible data-augmentation experiments for transfer-learning image
//! classifiers.
//!
//! The crate covers the whole experiment: directory ingest, class balancing
//! and stratified splitting ([`dataset`]), seeded geometric augmentation
//! ([`augment`]), frozen feature extractors ([`backbone`]), softmax heads and
//! hyperparameter grids ([`classifier`]), a decoder-encoder output-noise GAN
//! for synthesizing extra samples of one class ([`degan`]), confusion-matrix
//! metrics and condition comparison tables ([`eval`]), and the orchestration
//! that ties the stages together ([`pipeline`]).

pub mod augment;
pub mod backbone;
pub mod classifier;
pub mod dataset;
pub mod degan;
pub mod error;
pub mod eval;
pub mod image;
pub mod nn;
pub mod pipeline;
pub mod plot;
pub mod seed;
pub mod synth;

pub use error::{Error, Result};
