//! Classification of judicial proceedings from their motion histories.

pub mod corpus;
pub mod error;
pub mod eval;
pub mod features;
pub mod interpret;
pub mod model;
pub mod nn;
pub mod pipeline;
pub mod rng;
pub mod text;
pub mod train;
pub mod vectorize;

pub use error::{Error, Result};
