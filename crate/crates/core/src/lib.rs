//! Core of a self-hosted experiment tracker for machine learning.
//!
//! Datasets are ARFF relations with computed qualities; tasks bind a dataset
//! and target to a fixed split table; runs carry uploaded predictions that the
//! server evaluates itself so results stay comparable across uploaders.

pub mod arff;
pub mod eval;
pub mod learners;
pub mod numeric;
pub mod qualities;
pub mod query;
pub mod registry;
pub mod rng;
pub mod service;
pub mod task;
