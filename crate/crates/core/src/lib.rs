pub mod channel;
pub mod config;
pub mod error;
pub mod eval;
pub mod fbs;
pub mod harness;
pub mod init;
pub mod jed;
pub mod linalg;
pub mod permute;
pub mod pilots;

pub use error::{Error, Result};
