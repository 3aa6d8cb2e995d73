pub mod dataset;
pub mod error;
pub mod eval;
pub mod inference;
pub mod model;
pub mod refinement;
pub mod tensor;
pub mod training;
pub mod types;
pub mod vocab;

pub use error::{Error, Result};
