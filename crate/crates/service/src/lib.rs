//! Command line pipeline and HTTP session service for the interactive
//! bottom recommender.

pub mod api;
pub mod artifacts;
pub mod cli;
pub mod session;
pub mod stages;
