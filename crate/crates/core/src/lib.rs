//! Interactive garment recommendation.
//!
//! A deep-Q agent proposes bottoms for a given top, folds a scalar feedback
//! score into its state after every proposal and learns, against a GP-BPR
//! personalized-compatibility proxy, to drive that feedback up over an
//! episode.

pub mod nn;
pub mod data;
pub mod preprocess;
pub mod proxy;
pub mod agent;
pub mod baselines;
pub mod eval;
pub mod pipeline;
