//! Laboratory for the arithmetic text of factorization trees.
//!
//! The pipeline: generate the Dyck-word corpus for a range of integers,
//! train a byte-pair tokenizer over the `{0,1,space}` alphabet, split and
//! window the token stream, fit a Markov baseline and a decoder-style
//! transformer (next-word prediction or masked language modeling), and
//! evaluate generated sequences with word- and token-level metrics.

pub mod cli;
pub mod corpus;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod lm;
pub mod markov;
pub mod tokenizer;
pub mod util;

pub use error::{Error, Result};
