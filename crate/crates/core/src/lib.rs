//! Unsupervised underwater image dehazing through haze/content disentanglement.
//!
//! A haze disentanglement network ([`hdn`]) splits an underwater image into
//! content features and haze features. The content branch is decoded into a
//! content image which the restoration generator ([`restoration`]) cleans up
//! with a residual. During training the haze features are fed back into the
//! clean-to-underwater generator so that the underwater cycle has a single
//! well-defined target.
//!
//! Everything trains from unpaired data ([`datasets`]) with a joint objective
//! ([`training`]) and is scored with full-reference metrics ([`evaluation`]).

pub mod datasets;
pub mod error;
pub mod evaluation;
pub mod gradcheck;
pub mod hdn;
pub mod nn;
pub mod restoration;
pub mod training;

pub use error::{Error, Result};
