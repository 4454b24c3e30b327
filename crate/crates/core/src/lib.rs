pub mod autodiff;
pub mod data;
mod error;
pub mod eval;
pub mod graph;
pub mod label;
pub mod model;
pub mod train;

pub use error::{Error, Result};
