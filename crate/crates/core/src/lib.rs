pub mod embedding;
pub mod encoder;
pub mod error;
pub mod graph;
pub mod io;
pub mod llm;
pub mod path;
pub mod pipeline;
pub mod prompt;
pub mod remote;
pub mod selection;
pub mod trainset;

pub use error::{Error, Result};
