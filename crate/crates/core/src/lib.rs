//! Reasoning-then-embedding dense retrieval at desk scale.
//!
//! A tiny causal language model reads a query, writes a short keyword
//! chain-of-thought between `<think>` and `</think>`, and the final hidden
//! state at the trailing `<emb>` token is the query embedding. Items are
//! embedded the same way from `<bos> title <emb>`.

pub mod config;
pub mod error;
pub mod experiment;
pub mod grpo;
pub mod net;
pub mod objectives;
pub mod optim;
pub mod pipeline;
pub mod retrieval;
pub mod reward;
pub mod textcodec;
pub mod trainer;
pub mod verify;

pub use error::{LremError, Result};
