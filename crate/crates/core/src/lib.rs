//! Two-stage cross-market recommendation.
//!
//! Pre-ranking scorers (memory-based CF, skip-gram and LightGCN embeddings)
//! run over unions of markets and become features; the features are screened
//! and fed to a bagged histogram GBDT whose rankings are scored by NDCG@10.

pub mod error;
pub mod evaluation;
pub mod feature_selection;
pub mod gbdt_ranker;
pub mod graph_embeddings;
pub mod market_data;
pub mod memory_cf;
pub mod pipeline;
pub mod prerank_features;
pub mod scoring;
pub mod seed;

pub use error::{Error, Result};
