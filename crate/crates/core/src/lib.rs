//! Linear sketches for l2 heavy hitters, their classic and DP-robust estimators,
//! and adaptive attacks against them.

pub mod attacks;
pub mod dp;
pub mod error;
pub mod estimators;
pub mod harness;
pub mod hashing;
pub mod robust;
pub mod sketch;

pub use error::{Error, Result};
