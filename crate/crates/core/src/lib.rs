//! Weakly supervised classification of bank-transaction groups.

pub mod classifier;
pub mod embed;
mod error;
pub mod labelmodel;
pub mod runstore;
pub mod stream;
pub mod synthgen;
pub mod txprep;
pub mod weaksup;

pub use error::{Error, Result};
