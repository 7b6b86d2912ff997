//! Recommender pipeline over MovieLens-1M: parsing, verbalization, text
//! embeddings with a content-addressed cache, feature encoding, CTR models,
//! training and metrics.

pub mod data;
pub mod embed;
pub mod features;
pub mod metrics;
pub mod models;
pub mod synth;
pub mod train;
pub mod verbalize;
