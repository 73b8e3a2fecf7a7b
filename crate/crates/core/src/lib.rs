//! slarm-core: sentence-level auto-regressive dialogue response generation.
//!
//! A response is produced in two segments: a seq2seq-with-attention mediator
//! predicts the direct responding semantics, then a topic-graph-guided CVAE
//! samples the supplementary semantics conditioned on the post, the direct
//! part, a Gaussian latent, and a mixture of retrieved topic-word embeddings.

pub mod config;
pub mod corpus;
pub mod drsg;
pub mod error;
pub mod evaluation;
pub mod nn;
pub mod pipeline;
pub mod segmentation;
pub mod tgg_cvae;
pub mod topic_graph;

pub use config::{Ablation, RunConfig};
pub use error::{Error, Result};
