pub mod autodiff;
pub mod encoder;
pub mod error;
pub mod gradcheck;
pub mod heads;
pub mod model;
pub mod nn;
pub mod synthetic;
pub mod text;
pub mod train;

pub use error::{Error, Result};
