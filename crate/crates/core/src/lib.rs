//! Gradient-boosted regression trees, their rewriting as sparse linear
//! models over leaf-membership indicators, regularized coefficient
//! refitting, and analysis of prediction robustness under covariate
//! perturbation.

pub mod boosting;
pub mod cli;
pub mod data;
pub mod decompose;
pub mod encode;
pub mod error;
pub mod refit;
pub mod rng;
pub mod robust;
pub mod tree;

pub use error::{Error, Result};
