//! Regression for clustered ordinal responses with a working multivariate
//! normal dependence model.
//!
//! The pipeline has three stages: independent-working-model maximum
//! likelihood for the marginal parameters, pairwise-likelihood estimation of
//! the latent correlation structure, and a weighted estimating-equation
//! solve whose weight matrices are frozen at the first-stage fit. Robust
//! sandwich covariances, pairwise-likelihood information criteria for
//! structure and covariate selection, and a simulation harness sit on top.

pub mod cl1;
pub mod corr;
pub mod data;
pub mod error;
pub mod gauss;
pub mod link;
pub mod margins;
pub mod optim;
pub mod selection;
pub mod simulate;
pub mod wscore;

pub use error::{Error, Result};
