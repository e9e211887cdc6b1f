pub mod adaptation;
pub mod checkpoint;
pub mod data;
pub mod discovery;
pub mod error;
pub mod evaluation;
pub mod hallucination;
pub mod losses;
pub mod nets;
pub mod pipeline;
pub mod seed;

pub use error::{DhaError, Result};
