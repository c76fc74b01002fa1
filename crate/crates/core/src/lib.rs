//! Late-interaction retrieval with index-time token pruning.
//!
//! Documents arrive as per-token embeddings ([`corpus`]), are reduced to at
//! most `k` tokens by one of the [`pruning`] strategies, indexed flat or
//! with an IVF partition ([`index`]), searched with MaxSim ([`scoring`]) and
//! evaluated with MRR/Recall and size accounting ([`eval`]).

pub mod cli;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod index;
pub mod pruning;
pub mod scoring;

pub use error::{Error, Result};
