//! Tokenization of protein conformational ensembles into a discrete
//! vocabulary of dynamics-aware structural tokens.

pub mod analysis;
pub mod cli;
pub mod corpus;
pub mod descriptors;
pub mod error;
pub mod geometry;
pub mod neuralcore;
pub mod quantizer;
pub mod tokenize;
pub mod training;

pub use error::{Error, Result};
