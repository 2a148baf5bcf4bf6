pub mod commands;
pub mod error;
pub mod input;
pub mod service;
pub mod store;
pub mod svg;

pub use error::CliError;
