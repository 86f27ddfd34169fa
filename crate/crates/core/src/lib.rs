//! Knowledge-infused, privacy-preserving synthesis of tabular data.

pub mod adult;
pub mod encoder;
pub mod dp;
pub mod error;
pub mod eval;
pub mod fixture;
pub mod gan;
pub mod gmm;
pub mod knowledge;
pub mod rng;
pub mod schema;

pub use error::{Error, Result};
