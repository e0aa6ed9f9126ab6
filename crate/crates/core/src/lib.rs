pub mod chain;
pub mod demo;
pub mod error;
pub mod model;
pub mod numeric;
pub mod oc;
pub mod sim;
pub mod tc;

pub use error::{Error, Result};
