//! Tree Transformer: an encoder whose self-attention is gated by a learned
//! constituent prior, trained with masked language modeling, and a decoder
//! that reads unsupervised constituency trees out of the learned links.

pub mod constituent;
pub mod corpus;
pub mod encoder;
pub mod error;
pub mod evaluation;
pub mod layout;
pub mod parsing;
pub mod training;

pub use error::{Error, Result};
pub use layout::BatchLayout;
