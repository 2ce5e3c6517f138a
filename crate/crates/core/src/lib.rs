pub mod attention_export;
pub mod bpe;
pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod layers;
pub mod model;
pub mod pair_level;
pub mod pipeline;
pub mod sentence_level;
pub mod tensor;
pub mod training;
pub mod word_level;

pub use error::{Error, Result};
