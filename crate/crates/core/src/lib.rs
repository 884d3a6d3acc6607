//! Switching-point aware positional encodings for code-mixed text.
//!
//! The crate bundles a small reverse-mode autodiff engine ([`tensor`]),
//! corpus tooling for word-level language-tagged data ([`corpus`]),
//! switching-point indices ([`switching`]), skipgram embeddings
//! ([`embeddings`]), five attention-logit schemes ([`positional`]), the
//! encoder classifier ([`model`]) and the training / evaluation driver
//! ([`train`]).

mod binio;
pub mod corpus;
pub mod embeddings;
pub mod error;
pub mod model;
pub mod positional;
pub mod switching;
pub mod train;
pub mod tensor;

pub use error::{Error, Result};
