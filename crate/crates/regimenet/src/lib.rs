//! Bayesian Markov-switching zero-inflated logistic regression for binary
//! tensor time series, with PARAFAC-structured coefficient tensors, a
//! hierarchical global-local shrinkage prior and an exact Gibbs sampler.

pub mod cli;
pub mod diagnostics;
pub mod dist;
pub mod gibbs;
pub mod io;
pub mod geweke;
pub mod model;
pub mod pooled;
pub mod rng;
pub mod simulate;
pub mod tensor;
