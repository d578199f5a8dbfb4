pub mod cache;
pub mod chunkrank;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod lm;
pub mod pipeline;
pub mod prompting;
pub mod rerank;
pub mod websearch;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/retrieval.md")]
    mod retrieval {}
    #[doc = include_str!("../../../book/src/prompting.md")]
    mod prompting {}
    #[doc = include_str!("../../../book/src/reranking.md")]
    mod reranking {}
    #[doc = include_str!("../../../book/src/evaluation.md")]
    mod evaluation {}
    #[doc = include_str!("../../../book/src/running.md")]
    mod running {}
}
