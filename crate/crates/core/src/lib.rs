pub mod bench;
pub mod cli;
pub mod error;
pub mod init;
pub mod monitor;
pub mod phmm;
pub mod sampler;
pub mod seeds;
pub mod stats;

pub use error::{Error, Result};
