//! Distant-supervision depression corpora, imbalance-aware text classifiers
//! and daily rate-of-depression time series.

pub mod corpus;
pub mod preprocess;
pub mod sampling;
pub mod features;
pub mod models;
pub mod eval;
pub mod dynamics;
