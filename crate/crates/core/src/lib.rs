pub mod bench;
pub mod clbn;
pub mod ctgan;
pub mod data;
pub mod error;
pub mod eval;
pub mod io;
pub mod model;
pub mod oracle;
pub mod sampler;
pub mod tensor;
pub mod transform;
pub mod tvae;

pub use error::{Error, Result};
