pub mod cli;
pub mod domain;
pub mod engine;
pub mod error;
pub mod features;
pub mod harness;
pub mod solar;
pub mod verify;

pub use error::{Error, Result};
