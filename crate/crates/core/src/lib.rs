//! Visually gated two-layer recurrent caption encoding for person
//! re-identification.
//!
//! The crate covers the full laboratory loop: a small reverse-mode
//! differentiation engine ([`autodiff`]), caption tokenization ([`text`]),
//! the gated encoder ([`encoder`]), fusion and the joint
//! identification/triplet objective ([`fusion`]), synthetic or file-backed
//! visual features ([`visual`]), retrieval metrics with k-reciprocal
//! re-ranking ([`retrieval`]) and the training/evaluation harness
//! ([`harness`]).

pub mod autodiff;
pub mod encoder;
mod error;
pub mod fusion;
pub mod harness;
mod jsonl;
pub mod model;
pub mod retrieval;
pub mod text;
pub mod visual;

pub use error::{Error, Result};
