//! Cross-domain recommendation over motif-sampled bipartite graphs.
//!
//! The crate builds user-item interaction graphs for several domains,
//! samples structural motifs (random walks, butterflies, three triangle
//! families) from each, encodes them with a hypergraph convolution and a
//! mixture-of-domain-experts transformer, and trains the whole stack with
//! one similarity-learning template: contrastive and reconstruction losses
//! for pre-training, a recommendation loss for prompt tuning. Evaluation is
//! leave-one-out hit rate / NDCG with sampled or full candidate ranking.
//!
//! Entry points:
//! - [`graph`] — ingestion, node priority, overlap registry
//! - [`motif`] — motif sampling and the closed-form item-similarity solve
//! - [`hypergraph`] — incidence construction and convolution
//! - [`autodiff`] — the dense-tensor tape powering all gradients
//! - [`transformer`], [`readout`] — the motif encoder
//! - [`loss`] — the similarity-learning objectives
//! - [`trainer`], [`eval`], [`pipeline`] — end-to-end stages
//!
//! The `motifrec` binary exposes every stage as a CLI subcommand.

pub mod autodiff;
pub mod config;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod graph;
pub mod hypergraph;
pub mod loss;
pub mod mf;
pub mod motif;
pub mod pipeline;
pub mod readout;
pub mod rng;
pub mod synth;
pub mod trainer;
pub mod transformer;

pub use error::{Error, Result};
