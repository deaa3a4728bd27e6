pub mod config;
pub mod corpus;
pub mod decoder;
pub mod dialogue;
pub mod encoder;
pub mod engine;
pub mod error;
pub mod recommender;
pub mod sentiment;
pub mod synth;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/tensors.md")]
    mod tensors {}
    #[doc = include_str!("../../../book/src/corpus.md")]
    mod corpus {}
    #[doc = include_str!("../../../book/src/encoders.md")]
    mod encoders {}
    #[doc = include_str!("../../../book/src/sentiment.md")]
    mod sentiment {}
    #[doc = include_str!("../../../book/src/recommender.md")]
    mod recommender {}
    #[doc = include_str!("../../../book/src/decoder.md")]
    mod decoder {}
    #[doc = include_str!("../../../book/src/engine.md")]
    mod engine {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
