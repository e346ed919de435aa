//! File formats, exit-code policy and the threaded study driver behind the
//! `fcop` command-line tool. Everything numerical lives in `fcop-core`;
//! this crate only moves bytes and orchestrates.

pub mod error;
pub mod formats;
pub mod parallel;

pub use error::{CliError, CliResult};
