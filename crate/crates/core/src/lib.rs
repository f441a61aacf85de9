//! Numerical laboratory for margin-based face-recognition losses.

pub mod backbone;
pub mod bench;
pub mod data;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod loss;
pub mod seed;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
